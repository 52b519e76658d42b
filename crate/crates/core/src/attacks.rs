//! Fast gradient sign method and an epsilon sweep.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::evaluation::argmax;
use crate::models::{LatentTimeModel, Target, Task};
use crate::ode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    pub epsilons: Vec<f64>,
    /// Optional `(lo, hi)` box the perturbed input is clipped to.
    pub clip: Option<(f64, f64)>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            epsilons: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            clip: None,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e >= 0.0 && e.is_finite())) {
            return Err(Error::contract("epsilons must be finite and nonnegative"));
        }
        if self.epsilons.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::contract("epsilons must be sorted ascending"));
        }
        if let Some((lo, hi)) = self.clip {
            if !(lo < hi) {
                return Err(Error::contract(format!("clip range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

/// Gradient of `-log p(y | x)` at the mean prediction over the frozen,
/// sorted end times, with respect to the input `x`.
pub fn input_gradient(model: &LatentTimeModel, x: &[f64], y: Target, times: &[f64]) -> Result<Vec<f64>> {
    let spec = model.spec();
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false);
    let xv = tape.param(Tensor::matrix(1, x.len(), x.to_vec())?);
    let h0 = bound.encode(&mut tape, xv)?;
    let dynamics = bound.dynamics();
    let states = ode::two_phase_solve(&mut tape, &dynamics, h0, times, &spec.solver)?;
    let w = 1.0 / times.len() as f64;
    let mut terms = Vec::with_capacity(states.len());
    for h in states {
        terms.push((w, bound.output(&mut tape, h)?));
    }
    let mean = tape.lincomb(&terms)?;
    let loss = match (spec.task, y) {
        (Task::Classification { classes }, Target::Class(c)) if c < classes => {
            let p = tape.pick(mean, &[c])?;
            let lp = tape.log(p)?;
            tape.scale(lp, -1.0)?
        }
        (Task::Regression, Target::Value(v)) => {
            let se = tape.squared_error(mean, &Tensor::matrix(1, 1, vec![v])?)?;
            tape.scale(se, 0.5)?
        }
        _ => return Err(Error::contract("target does not match the model task")),
    };
    let loss = tape.sum(loss)?;
    tape.backward(loss)?;
    Ok(tape
        .grad(xv)
        .map(|g| g.data().to_vec())
        .unwrap_or_else(|| vec![0.0; x.len()]))
}

/// `x + eps * sign(grad)`, with `sign(0) = 0`, optionally clipped.
pub fn apply_sign_step(x: &[f64], grad: &[f64], epsilon: f64, clip: Option<(f64, f64)>) -> Vec<f64> {
    if epsilon == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .zip(grad)
        .map(|(&xi, &g)| {
            let s = if g > 0.0 {
                1.0
            } else if g < 0.0 {
                -1.0
            } else {
                0.0
            };
            let v = xi + epsilon * s;
            match clip {
                Some((lo, hi)) => v.clamp(lo, hi),
                None => v,
            }
        })
        .collect()
}

/// One-step white-box attack at the frozen end times.
pub fn fgsm_perturb(model: &LatentTimeModel, x: &[f64], y: Target, times: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if !(epsilon >= 0.0) {
        return Err(Error::contract(format!("epsilon must be nonnegative, got {epsilon}")));
    }
    if epsilon == 0.0 {
        return Ok(x.to_vec());
    }
    let g = input_gradient(model, x, y, times)?;
    Ok(apply_sign_step(x, &g, epsilon, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub error: f64,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    /// Error on the clean inputs at the same frozen end times.
    pub clean_error: f64,
    pub rows: Vec<SweepRow>,
}

/// Attack every example at each epsilon and report the classification error.
/// Each example's `s` end times are drawn once (from its clean-input law)
/// and reused for the gradient and every evaluation.
pub fn fgsm_sweep<R: Rng + ?Sized>(
    model: &LatentTimeModel,
    x: &Tensor,
    labels: &[usize],
    cfg: &AttackConfig,
    s: usize,
    rng: &mut R,
) -> Result<SweepReport> {
    cfg.validate()?;
    let Task::Classification { .. } = model.spec().task else {
        return Err(Error::contract("the FGSM sweep needs a classifier"));
    };
    let n = labels.len();
    if n == 0 || x.shape().first() != Some(&n) {
        return Err(Error::contract("inputs and labels must be nonempty and aligned"));
    }
    if s == 0 {
        return Err(Error::contract("at least one end-time sample is needed"));
    }
    let d = x.shape()[1];
    let laws = model.end_time_laws(x)?;
    let row_times: Vec<Vec<f64>> = laws
        .iter()
        .map(|law| {
            let mut t: Vec<f64> = (0..s).map(|_| law.sample(rng)).collect();
            t.sort_by(f64::total_cmp);
            t
        })
        .collect();
    let grads = (0..n)
        .map(|i| input_gradient(model, x.row(i), Target::Class(labels[i]), &row_times[i]))
        .collect::<Result<Vec<_>>>()?;

    let error_on = |inputs: &Tensor| -> Result<f64> {
        let preds = model.predict_at(inputs, row_times.clone())?;
        let wrong = preds.iter().zip(labels).filter(|(p, &y)| argmax(&p.mean) != y).count();
        Ok(wrong as f64 / n as f64)
    };
    let clean_error = error_on(x)?;
    let mut rows = Vec::with_capacity(cfg.epsilons.len());
    for &eps in &cfg.epsilons {
        let data: Vec<f64> = (0..n)
            .flat_map(|i| apply_sign_step(x.row(i), &grads[i], eps, cfg.clip))
            .collect();
        rows.push(SweepRow {
            epsilon: eps,
            error: error_on(&Tensor::matrix(n, d, data)?)?,
            n_examples: n,
        });
    }
    Ok(SweepReport { clean_error, rows })
}
