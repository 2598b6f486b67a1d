use super::{sigmoid, Activation, StudentConfig, StudentError, LOGIT_CLAMP};
use crate::data::{Dataset, FeatureKind, FeatureSchema};
use crate::seed;
use crate::UpliftPredictor;
use rand::Rng;
use std::fmt;
use std::str::FromStr;

/// What the network's scalar output means and which loss trains it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Outcome probability given `[X, T]`; uplift by differencing over `T`.
    Response,
    /// Outcome probability given `X` alone, for one treatment arm.
    Arm,
    /// Unbounded real output given `X` alone, trained with squared loss.
    Regression,
}

impl Head {
    pub fn as_str(&self) -> &'static str {
        match self {
            Head::Response => "response",
            Head::Arm => "arm",
            Head::Regression => "regression",
        }
    }

    pub fn uses_treatment(&self) -> bool {
        matches!(self, Head::Response)
    }

    pub fn is_probability(&self) -> bool {
        !matches!(self, Head::Regression)
    }
}

impl FromStr for Head {
    type Err = StudentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "response" => Ok(Head::Response),
            "arm" => Ok(Head::Arm),
            "regression" => Ok(Head::Regression),
            other => Err(StudentError::Format(format!("unknown head {other:?}"))),
        }
    }
}

/// Per-column mean and standard deviation for the numeric features, in
/// schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n_numeric: usize) -> Self {
        Self {
            mean: vec![0.0; n_numeric],
            std: vec![1.0; n_numeric],
        }
    }

    /// Population statistics over `ds`. Constant columns get unit scale.
    pub fn fit(ds: &Dataset) -> Self {
        let numeric = ds.schema().numeric_indices();
        let n = ds.n_rows().max(1) as f64;
        let mut mean = vec![0.0; numeric.len()];
        let mut std = vec![0.0; numeric.len()];
        for (k, &j) in numeric.iter().enumerate() {
            let m = (0..ds.n_rows()).map(|i| ds.value(i, j)).sum::<f64>() / n;
            let var = (0..ds.n_rows()).map(|i| (ds.value(i, j) - m).powi(2)).sum::<f64>() / n;
            mean[k] = m;
            std[k] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingLayout {
    pub feature: usize,
    pub cardinality: usize,
    pub offset: usize,
    /// First input slot fed by this table.
    pub input_slot: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    /// Row-major `fan_out x fan_in`.
    pub weight_offset: usize,
    pub bias_offset: usize,
}

/// Where every parameter sits in the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub embedding_dim: usize,
    pub embeddings: Vec<EmbeddingLayout>,
    pub layers: Vec<LayerLayout>,
    pub n_numeric: usize,
    pub input_width: usize,
    pub len: usize,
}

impl ParamLayout {
    fn new(schema: &FeatureSchema, config: &StudentConfig, head: Head) -> Self {
        let n_numeric = schema.numeric_indices().len();
        let dim = config.embedding_dim;
        let mut offset = 0;
        let mut slot = n_numeric;
        let embeddings = schema
            .categorical_indices()
            .into_iter()
            .map(|(feature, cardinality)| {
                let e = EmbeddingLayout {
                    feature,
                    cardinality,
                    offset,
                    input_slot: slot,
                };
                offset += cardinality * dim;
                slot += dim;
                e
            })
            .collect();
        let input_width = slot + usize::from(head.uses_treatment());
        let mut layers = Vec::new();
        let mut fan_in = input_width;
        for &fan_out in config.hidden_sizes.iter().chain(std::iter::once(&1)) {
            layers.push(LayerLayout {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
            fan_in = fan_out;
        }
        Self {
            embedding_dim: dim,
            embeddings,
            layers,
            n_numeric,
            input_width,
            len: offset,
        }
    }

    /// Human-readable name of parameter `i`, used in error messages.
    pub fn path(&self, i: usize) -> String {
        for e in &self.embeddings {
            let size = e.cardinality * self.embedding_dim;
            if (e.offset..e.offset + size).contains(&i) {
                let r = i - e.offset;
                return format!(
                    "embedding[feature {}][{}, {}]",
                    e.feature,
                    r / self.embedding_dim,
                    r % self.embedding_dim
                );
            }
        }
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let name = if l == last { "output".to_string() } else { format!("hidden{l}") };
            if (layer.weight_offset..layer.bias_offset).contains(&i) {
                let r = i - layer.weight_offset;
                return format!("{name}.weight[{}, {}]", r / layer.fan_in, r % layer.fan_in);
            }
            if (layer.bias_offset..layer.bias_offset + layer.fan_out).contains(&i) {
                return format!("{name}.bias[{}]", i - layer.bias_offset);
            }
        }
        format!("param[{i}]")
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Trace {
    pub input: Vec<f64>,
    /// Pre-activation of each hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-activation of each hidden layer.
    pub post: Vec<Vec<f64>>,
    /// Raw output before any clamping.
    pub z: f64,
    delta: Vec<Vec<f64>>,
    d_input: Vec<f64>,
}

impl Trace {
    pub fn new(layout: &ParamLayout) -> Self {
        let hidden: Vec<usize> = layout.layers[..layout.layers.len() - 1].iter().map(|l| l.fan_out).collect();
        Self {
            input: vec![0.0; layout.input_width],
            pre: hidden.iter().map(|&h| vec![0.0; h]).collect(),
            post: hidden.iter().map(|&h| vec![0.0; h]).collect(),
            z: 0.0,
            delta: layout.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
            d_input: vec![0.0; layout.input_width],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    config: StudentConfig,
    head: Head,
    schema: FeatureSchema,
    numeric: Vec<usize>,
    normalizer: Normalizer,
    layout: ParamLayout,
    params: Vec<f64>,
}

impl StudentModel {
    /// A freshly initialized model. Dense weights are uniform in
    /// `±sqrt(6 / (fan_in + fan_out))`, embeddings uniform in `±0.05`, hidden
    /// biases zero and the output bias set to `output_bias`.
    pub fn new(
        schema: FeatureSchema,
        config: StudentConfig,
        head: Head,
        normalizer: Normalizer,
        output_bias: f64,
        init_seed: u64,
    ) -> Result<Self, StudentError> {
        config.validate()?;
        let numeric = schema.numeric_indices();
        if normalizer.mean.len() != numeric.len() || normalizer.std.len() != numeric.len() {
            return Err(StudentError::Config(format!(
                "normalizer covers {} columns, schema has {} numeric",
                normalizer.mean.len(),
                numeric.len()
            )));
        }
        if !output_bias.is_finite() {
            return Err(StudentError::Config("output bias must be finite".into()));
        }
        let layout = ParamLayout::new(&schema, &config, head);
        let mut params = vec![0.0; layout.len];
        let mut rng = seed::rng(init_seed);
        for e in &layout.embeddings {
            for p in &mut params[e.offset..e.offset + e.cardinality * layout.embedding_dim] {
                *p = rng.gen_range(-0.05..0.05);
            }
        }
        for layer in &layout.layers {
            let a = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
            for p in &mut params[layer.weight_offset..layer.bias_offset] {
                *p = rng.gen_range(-a..a);
            }
        }
        let out = layout.layers.last().unwrap();
        params[out.bias_offset] = output_bias;
        Ok(Self {
            config,
            head,
            schema,
            numeric,
            normalizer,
            layout,
            params,
        })
    }

    /// Standardizes on `train` and sets the output bias from its outcomes:
    /// the logit of the positive rate for probability heads.
    pub fn for_training(train: &Dataset, config: StudentConfig, head: Head, init_seed: u64) -> Result<Self, StudentError> {
        let rate = train.positive_rate().clamp(1e-4, 1.0 - 1e-4);
        Self::new(
            train.schema().clone(),
            config,
            head,
            Normalizer::fit(train),
            (rate / (1.0 - rate)).ln(),
            init_seed,
        )
    }

    pub(crate) fn from_parts(
        schema: FeatureSchema,
        config: StudentConfig,
        head: Head,
        normalizer: Normalizer,
        params: Vec<f64>,
    ) -> Result<Self, StudentError> {
        let mut model = Self::new(schema, config, head, normalizer, 0.0, 0)?;
        if params.len() != model.params.len() {
            return Err(StudentError::Format(format!(
                "expected {} parameters, found {}",
                model.params.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(StudentError::Format(format!("parameter {} is not finite", model.layout.path(i))));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn normalizer(&self) -> &Normalizer {
        &self.normalizer
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), StudentError> {
        if schema != &self.schema {
            return Err(StudentError::SchemaMismatch {
                expected: schema.fingerprint(),
                found: self.schema.fingerprint(),
            });
        }
        Ok(())
    }

    pub fn check_row(&self, x: &[f64]) -> Result<(), StudentError> {
        if x.len() != self.schema.len() {
            return Err(StudentError::Width {
                expected: self.schema.len(),
                found: x.len(),
            });
        }
        for (feature, &value) in x.iter().enumerate() {
            let ok = match self.schema.kind(feature) {
                FeatureKind::Numeric => value.is_finite(),
                FeatureKind::Categorical { cardinality } => {
                    value >= 0.0 && value.fract() == 0.0 && (value as usize) < cardinality
                }
            };
            if !ok {
                return Err(StudentError::Input { feature, value });
            }
        }
        Ok(())
    }

    /// Model output for `(x, t)`: a probability strictly inside (0, 1) for
    /// probability heads, a real for the regression head. `t` is ignored by
    /// heads that do not take the treatment bit.
    pub fn forward(&self, x: &[f64], t: u8) -> Result<f64, StudentError> {
        self.check_row(x)?;
        Ok(self.trace_forward(x, t, &mut Trace::new(&self.layout)))
    }

    /// `f(x, 1) - f(x, 0)` for the response head; the output itself for the
    /// regression head; the arm probability for an arm model.
    pub fn predict_uplift(&self, x: &[f64]) -> Result<f64, StudentError> {
        self.check_row(x)?;
        Ok(self.uplift_with(x, &mut Trace::new(&self.layout)))
    }

    fn uplift_with(&self, x: &[f64], tr: &mut Trace) -> f64 {
        match self.head {
            Head::Response => {
                let treated = self.trace_forward(x, 1, tr);
                treated - self.trace_forward(x, 0, tr)
            }
            Head::Arm | Head::Regression => self.trace_forward(x, 0, tr),
        }
    }

    pub(crate) fn trace_forward(&self, x: &[f64], t: u8, tr: &mut Trace) -> f64 {
        let dim = self.layout.embedding_dim;
        for (k, &j) in self.numeric.iter().enumerate() {
            tr.input[k] = (x[j] - self.normalizer.mean[k]) / self.normalizer.std[k];
        }
        for e in &self.layout.embeddings {
            let code = x[e.feature] as usize;
            let start = e.offset + code * dim;
            tr.input[e.input_slot..e.input_slot + dim].copy_from_slice(&self.params[start..start + dim]);
        }
        if self.head.uses_treatment() {
            tr.input[self.layout.input_width - 1] = t as f64;
        }
        let n_hidden = self.layout.layers.len() - 1;
        for l in 0..n_hidden {
            let layer = &self.layout.layers[l];
            let (before, rest) = tr.post.split_at_mut(l);
            let input: &[f64] = if l == 0 { &tr.input } else { &before[l - 1] };
            let pre = &mut tr.pre[l];
            dense(&self.params, layer, input, pre);
            let post = &mut rest[0];
            match self.config.activation {
                Activation::Relu => {
                    for (o, &v) in post.iter_mut().zip(pre.iter()) {
                        *o = v.max(0.0);
                    }
                }
                Activation::Tanh => {
                    for (o, &v) in post.iter_mut().zip(pre.iter()) {
                        *o = v.tanh();
                    }
                }
            }
        }
        let out = &self.layout.layers[n_hidden];
        let input: &[f64] = if n_hidden == 0 { &tr.input } else { &tr.post[n_hidden - 1] };
        let mut z = [0.0];
        dense(&self.params, out, input, &mut z);
        tr.z = z[0];
        self.output_of(tr.z)
    }

    fn output_of(&self, z: f64) -> f64 {
        if self.head.is_probability() {
            sigmoid(z.clamp(-LOGIT_CLAMP, LOGIT_CLAMP))
        } else {
            z
        }
    }

    /// Derivative of the output with respect to the raw logit, zero where the
    /// logit clamp is active.
    pub(crate) fn output_slope(&self, tr: &Trace) -> f64 {
        if !self.head.is_probability() {
            return 1.0;
        }
        if tr.z.abs() > LOGIT_CLAMP {
            return 0.0;
        }
        let p = sigmoid(tr.z);
        p * (1.0 - p)
    }

    /// Adds `dz * d(raw output)/d(params)` into `grad`.
    pub(crate) fn backprop(&self, x: &[f64], tr: &mut Trace, dz: f64, grad: &mut [f64]) {
        if dz == 0.0 {
            return;
        }
        let n_layers = self.layout.layers.len();
        tr.delta[n_layers - 1][0] = dz;
        for l in (0..n_layers).rev() {
            let layer = &self.layout.layers[l];
            let input: &[f64] = if l == 0 { &tr.input } else { &tr.post[l - 1] };
            let delta = &tr.delta[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                grad[layer.bias_offset + o] += d;
                let row = layer.weight_offset + o * layer.fan_in;
                for (g, &v) in grad[row..row + layer.fan_in].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if l == 0 && self.layout.embeddings.is_empty() {
                break;
            }
            let mut d_in = std::mem::take(if l == 0 { &mut tr.d_input } else { &mut tr.delta[l - 1] });
            d_in.fill(0.0);
            for (o, &d) in tr.delta[l].iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = layer.weight_offset + o * layer.fan_in;
                for (di, &w) in d_in.iter_mut().zip(&self.params[row..row + layer.fan_in]) {
                    *di += d * w;
                }
            }
            if l > 0 {
                let pre = &tr.pre[l - 1];
                let post = &tr.post[l - 1];
                match self.config.activation {
                    Activation::Relu => {
                        for (di, &p) in d_in.iter_mut().zip(pre) {
                            if p <= 0.0 {
                                *di = 0.0;
                            }
                        }
                    }
                    Activation::Tanh => {
                        for (di, &h) in d_in.iter_mut().zip(post) {
                            *di *= 1.0 - h * h;
                        }
                    }
                }
                tr.delta[l - 1] = d_in;
            } else {
                let dim = self.layout.embedding_dim;
                for e in &self.layout.embeddings {
                    let start = e.offset + x[e.feature] as usize * dim;
                    for (g, &d) in grad[start..start + dim].iter_mut().zip(&d_in[e.input_slot..e.input_slot + dim]) {
                        *g += d;
                    }
                }
                tr.d_input = d_in;
            }
        }
    }

    pub(crate) fn new_trace(&self) -> Trace {
        Trace::new(&self.layout)
    }
}

fn dense(params: &[f64], layer: &LayerLayout, input: &[f64], out: &mut [f64]) {
    for (o, slot) in out.iter_mut().enumerate() {
        let row = layer.weight_offset + o * layer.fan_in;
        let mut acc = params[layer.bias_offset + o];
        for (&w, &v) in params[row..row + layer.fan_in].iter().zip(input) {
            acc += w * v;
        }
        *slot = acc;
    }
}

impl UpliftPredictor for StudentModel {
    /// Panics if the row does not conform to the schema.
    fn predict_uplift(&self, row: &[f64]) -> f64 {
        StudentModel::predict_uplift(self, row).expect("row conforms to the model schema")
    }

    fn predict_uplift_all(&self, ds: &Dataset) -> Vec<f64> {
        let mut tr = self.new_trace();
        ds.rows().map(|x| self.uplift_with(x, &mut tr)).collect()
    }
}

impl fmt::Display for StudentModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<String> = self.layout.layers.iter().map(|l| l.fan_out.to_string()).collect();
        write!(
            f,
            "{} model: input {} -> {} ({} parameters)",
            self.head.as_str(),
            self.layout.input_width,
            widths.join(" -> "),
            self.params.len()
        )
    }
}
