use super::OptimizerKind;

/// A gradient with the same flat layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBuffer(pub Vec<f64>);

impl GradientBuffer {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// SGD with momentum or Adam, with per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    kind: OptimizerKind,
    pub learning_rate: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    step: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, n_params: usize) -> Self {
        let second = match kind {
            OptimizerKind::Adam { .. } => vec![0.0; n_params],
            OptimizerKind::Sgd { .. } => Vec::new(),
        };
        Self {
            kind,
            learning_rate,
            first: vec![0.0; n_params],
            second,
            step: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.step
    }

    /// Panics if the buffer and the parameters differ in length.
    pub fn apply_update(&mut self, params: &mut [f64], grad: &GradientBuffer) {
        assert_eq!(params.len(), grad.len(), "gradient does not match the parameters");
        assert_eq!(params.len(), self.first.len(), "optimizer state does not match the parameters");
        self.step += 1;
        let lr = self.learning_rate;
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                for ((p, v), &g) in params.iter_mut().zip(&mut self.first).zip(&grad.0) {
                    *v = momentum * *v + g;
                    *p -= lr * *v;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, m), v), &g) in params.iter_mut().zip(&mut self.first).zip(&mut self.second).zip(&grad.0) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 0.1, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.apply_update(&mut p, &GradientBuffer::zeros(3));
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.0 }, 0.1, 1);
        let mut p = vec![2.0];
        opt.apply_update(&mut p, &GradientBuffer(vec![0.5]));
        assert_eq!(p[0], 2.0 - 0.1 * 0.5);
    }

    #[test]
    fn sgd_momentum_accumulates() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd { momentum: 0.5 }, 1.0, 1);
        let mut p = vec![0.0];
        opt.apply_update(&mut p, &GradientBuffer(vec![1.0]));
        opt.apply_update(&mut p, &GradientBuffer(vec![1.0]));
        assert_eq!(p[0], -1.0 - 1.5);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        for g in [1e-3, -0.2, 5.0, 123.0] {
            let lr = 0.01;
            let mut opt = Optimizer::new(OptimizerKind::default(), lr, 1);
            let mut p = vec![1.0];
            opt.apply_update(&mut p, &GradientBuffer(vec![g]));
            let step = (p[0] - 1.0).abs();
            assert!(step >= 0.9 * lr && step <= lr, "{g}: {step}");
            assert_eq!((p[0] - 1.0).signum(), -g.signum());
        }
    }
}
