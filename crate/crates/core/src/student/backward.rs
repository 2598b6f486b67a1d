//! Loss units and their exact gradients.
//!
//! A batch is a list of loss units; the batch loss is the mean over units.
//! Gradients are accumulated per fixed-size chunk of units and the chunk
//! buffers are summed in chunk order, so the result does not depend on how
//! many threads evaluated the chunks.

use super::model::Trace;
use super::optim::GradientBuffer;
use super::{bce, StudentError, StudentModel, PROB_EPS};
use rayon::prelude::*;

/// Units per gradient chunk.
const CHUNK: usize = 16;

/// One observed subject.
#[derive(Debug, Clone, Copy)]
pub struct Obs<'a> {
    pub x: &'a [f64],
    pub t: u8,
    pub y: u8,
}

#[derive(Debug, Clone, Copy)]
pub enum LossUnit<'a> {
    /// Cross-entropy on one or two observations.
    Hard { first: Obs<'a>, second: Option<Obs<'a>> },
    /// `bce(y_t, f(x_t, 1)) + bce(y_c, f(x_c, 0))
    ///   + lambda * (u_tea - (f(x_t, 1) - f(x_c, 0)))^2`.
    /// With `lambda == 0` this is evaluated exactly as `Hard`.
    Pair {
        treated: Obs<'a>,
        control: Obs<'a>,
        u_tea: f64,
        lambda: f64,
    },
    /// `bce(y, f(x, t)) + lambda * (u_tea - (f(x, 1) - f(x, 0)))^2`.
    /// With `lambda == 0` this is evaluated exactly as `Hard`.
    SingleKd { obs: Obs<'a>, u_tea: f64, lambda: f64 },
    /// `(f(x) - target)^2` for the regression head.
    Squared { x: &'a [f64], target: f64 },
}

/// Loss decomposition. `soft` is the unweighted teacher-matching term and
/// `total = hard + lambda * soft`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub hard: f64,
    pub soft: f64,
}

impl LossParts {
    fn add(&mut self, other: LossParts) {
        self.total += other.total;
        self.hard += other.hard;
        self.soft += other.soft;
    }
}

/// Loss of one unit without computing gradients.
pub fn unit_loss(model: &StudentModel, unit: &LossUnit<'_>) -> LossParts {
    let mut traces = [model.new_trace(), model.new_trace()];
    eval_unit(model, unit, &mut traces, None)
}

/// Mean loss and mean gradient over `units`.
pub fn batch_gradient(
    model: &StudentModel,
    units: &[LossUnit<'_>],
) -> Result<(GradientBuffer, LossParts), StudentError> {
    let len = model.n_params();
    let partials: Vec<(Vec<f64>, LossParts)> = units
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; len];
            let mut traces = [model.new_trace(), model.new_trace()];
            let mut loss = LossParts::default();
            for unit in chunk {
                loss.add(eval_unit(model, unit, &mut traces, Some(&mut grad)));
            }
            (grad, loss)
        })
        .collect();
    let mut grad = vec![0.0; len];
    let mut loss = LossParts::default();
    for (g, l) in &partials {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
        loss.add(*l);
    }
    let n = units.len().max(1) as f64;
    for g in &mut grad {
        *g /= n;
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(StudentError::NonFiniteGradient {
            path: model.layout().path(i),
        });
    }
    Ok((
        GradientBuffer(grad),
        LossParts {
            total: loss.total / n,
            hard: loss.hard / n,
            soft: loss.soft / n,
        },
    ))
}

/// d bce / d logit, zero where either clamp is active.
fn bce_dz(p: f64, y: u8) -> f64 {
    if (PROB_EPS..=1.0 - PROB_EPS).contains(&p) {
        p - y as f64
    } else {
        0.0
    }
}

fn eval_unit(
    model: &StudentModel,
    unit: &LossUnit<'_>,
    traces: &mut [Trace; 2],
    grad: Option<&mut [f64]>,
) -> LossParts {
    let [ta, tb] = traces;
    match *unit {
        LossUnit::Hard { first, second } => hard(model, first, second, ta, tb, grad).0,
        LossUnit::Pair {
            treated, control, lambda, u_tea,
        } => {
            if lambda == 0.0 {
                let treated = Obs { t: 1, ..treated };
                let control = Obs { t: 0, ..control };
                let (mut parts, pt, pc) = hard(model, treated, Some(control), ta, tb, grad);
                // Reported only; never enters the total or the gradient.
                parts.soft = (u_tea - (pt - pc.unwrap_or(0.0))).powi(2);
                return parts;
            }
            let pt = model.trace_forward(treated.x, 1, ta);
            let pc = model.trace_forward(control.x, 0, tb);
            let r = u_tea - (pt - pc);
            let hard = bce(treated.y, pt) + bce(control.y, pc);
            let soft = r * r;
            if let Some(g) = grad {
                let dzt = bce_dz(pt, treated.y) - lambda * 2.0 * r * model.output_slope(ta);
                let dzc = bce_dz(pc, control.y) + lambda * 2.0 * r * model.output_slope(tb);
                model.backprop(treated.x, ta, dzt, g);
                model.backprop(control.x, tb, dzc, g);
            }
            LossParts {
                total: hard + lambda * soft,
                hard,
                soft,
            }
        }
        LossUnit::SingleKd { obs, u_tea, lambda } => {
            if lambda == 0.0 {
                return hard(model, obs, None, ta, tb, grad).0;
            }
            let p1 = model.trace_forward(obs.x, 1, ta);
            let p0 = model.trace_forward(obs.x, 0, tb);
            let factual = if obs.t == 1 { p1 } else { p0 };
            let r = u_tea - (p1 - p0);
            let hard = bce(obs.y, factual);
            let soft = r * r;
            if let Some(g) = grad {
                let mut dz1 = -lambda * 2.0 * r * model.output_slope(ta);
                let mut dz0 = lambda * 2.0 * r * model.output_slope(tb);
                if obs.t == 1 {
                    dz1 += bce_dz(p1, obs.y);
                } else {
                    dz0 += bce_dz(p0, obs.y);
                }
                model.backprop(obs.x, ta, dz1, g);
                model.backprop(obs.x, tb, dz0, g);
            }
            LossParts {
                total: hard + lambda * soft,
                hard,
                soft,
            }
        }
        LossUnit::Squared { x, target } => {
            let out = model.trace_forward(x, 0, ta);
            let r = out - target;
            if let Some(g) = grad {
                model.backprop(x, ta, 2.0 * r, g);
            }
            LossParts {
                total: r * r,
                hard: r * r,
                soft: 0.0,
            }
        }
    }
}

fn hard(
    model: &StudentModel,
    first: Obs<'_>,
    second: Option<Obs<'_>>,
    ta: &mut Trace,
    tb: &mut Trace,
    grad: Option<&mut [f64]>,
) -> (LossParts, f64, Option<f64>) {
    let p1 = model.trace_forward(first.x, first.t, ta);
    let mut loss = bce(first.y, p1);
    let p2 = second.map(|s| model.trace_forward(s.x, s.t, tb));
    if let (Some(s), Some(p2)) = (second, p2) {
        loss += bce(s.y, p2);
    }
    if let Some(g) = grad {
        model.backprop(first.x, ta, bce_dz(p1, first.y), g);
        if let (Some(s), Some(p2)) = (second, p2) {
            model.backprop(s.x, tb, bce_dz(p2, s.y), g);
        }
    }
    let parts = LossParts {
        total: loss,
        hard: loss,
        soft: 0.0,
    };
    (parts, p1, p2)
}
