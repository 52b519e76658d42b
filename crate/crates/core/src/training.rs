//! ELBO objectives and the SGD training loop.
//!
//! Training end times are drawn from `Uniform(a, b)`, sorted and shared by
//! the whole batch, so every iteration needs a single differentiable solve.
//! The expectation over the end-time posterior is estimated by importance
//! weighting against that uniform law:
//!
//! ```text
//! E_q[log p] ≈ (b - a)/S · Σ_s q(T_s) · log p(y | T_s, x)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::datasets::Dataset;
use crate::error::{Error, Result};
use crate::gamma::GammaParams;
use crate::models::{sample_uniform, Bound, LatentTimeModel, Targets, Variant};
use crate::ode;
use crate::optim::{sgd_update, OptimizerState, SgdConfig};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ElboConfig {
    pub prior: GammaParams,
    /// Support `(a, b)` of the uniform training-time law.
    pub grid: (f64, f64),
    pub samples: usize,
}

impl Default for ElboConfig {
    fn default() -> Self {
        ElboConfig {
            prior: GammaParams::new(2.0, 0.5).expect("valid prior"),
            grid: (0.0, 3.0),
            samples: 10,
        }
    }
}

impl ElboConfig {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.grid;
        if !(a >= 0.0 && a < b && b.is_finite()) {
            return Err(Error::contract(format!("grid needs 0 <= a < b, got ({a}, {b})")));
        }
        if self.samples == 0 {
            return Err(Error::contract("at least one end-time sample is needed"));
        }
        GammaParams::new(self.prior.alpha(), self.prior.beta()).map(|_| ())
    }

    /// `S` sorted draws from `Uniform(a, b]`.
    pub fn sample_times<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let (a, b) = self.grid;
        let mut t: Vec<f64> = (0..self.samples).map(|_| sample_uniform(a, b, rng)).collect();
        t.sort_by(f64::total_cmp);
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub elbo: ElboConfig,
    pub iterations: usize,
    /// `None` trains on the full dataset every iteration.
    pub batch_size: Option<usize>,
    /// Network weights.
    pub theta: SgdConfig,
    /// `(alpha_q, beta_q)` of `lt_node`.
    pub variational: SgdConfig,
    /// Inference network of `alt_node`.
    pub inference: SgdConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let milestones = vec![(1000, 10.0), (2000, 10.0)];
        TrainConfig {
            elbo: ElboConfig::default(),
            iterations: 3000,
            batch_size: None,
            theta: SgdConfig::new(0.001, 0.9, 1e-4).with_milestones(milestones.clone()),
            variational: SgdConfig::new(0.001, 0.9, 0.0).with_milestones(milestones.clone()),
            inference: SgdConfig::new(0.001, 0.9, 5e-4).with_milestones(milestones),
            seed: 0,
        }
    }
}

/// One row of the loss trace. For `alt_node` the Gamma columns hold the
/// batch means of the predicted parameters; for other variants without a
/// posterior they are `NaN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub negative_elbo: f64,
    pub alpha_q: f64,
    pub beta_q: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
}

/// Output of one objective evaluation on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    /// Quantity to maximize (ELBO, or summed log-likelihood without a posterior).
    pub value: Var,
    pub alpha_q: f64,
    pub beta_q: f64,
}

/// Build the training objective of `model` on `tape` for a batch and
/// frozen, sorted `times`. `data_scale` multiplies the likelihood term so a
/// minibatch estimates the full-data bound.
#[allow(clippy::too_many_arguments)]
pub fn objective_on_tape(
    tape: &mut Tape,
    bound: &Bound,
    model: &LatentTimeModel,
    x: &Tensor,
    targets: &Targets,
    times: &[f64],
    cfg: &ElboConfig,
    data_scale: f64,
) -> Result<Objective> {
    let spec = model.spec();
    let xv = tape.constant(x.clone());
    let h0 = bound.encode(tape, xv)?;
    let dynamics = bound.dynamics();
    let states = ode::two_phase_solve(tape, &dynamics, h0, times, &spec.solver)?;
    let s = times.len() as f64;
    let (a, b) = cfg.grid;
    let nan = f64::NAN;
    match spec.variant {
        Variant::Node { .. } | Variant::UniNode { .. } => {
            let mut terms = Vec::with_capacity(states.len());
            for &h in &states {
                let ll = bound.log_likelihood(tape, h, targets)?;
                terms.push((data_scale / s, tape.sum(ll)?));
            }
            Ok(Objective {
                value: tape.lincomb(&terms)?,
                alpha_q: nan,
                beta_q: nan,
            })
        }
        Variant::LtNode => {
            let (alpha, beta) = bound.variational(tape)?;
            let mut terms = Vec::with_capacity(states.len() + 1);
            for (&h, &t) in states.iter().zip(times) {
                let ll = bound.log_likelihood(tape, h, targets)?;
                let ll = tape.sum(ll)?;
                let lq = tape.gamma_log_pdf(t, alpha, beta)?;
                let q = tape.exp(lq)?;
                terms.push(((b - a) / s * data_scale, tape.mul(ll, q)?));
            }
            let kl = tape.gamma_kl(alpha, beta, cfg.prior)?;
            terms.push((-1.0, tape.sum(kl)?));
            Ok(Objective {
                value: tape.lincomb(&terms)?,
                alpha_q: tape.value(alpha).data()[0],
                beta_q: tape.value(beta).data()[0],
            })
        }
        Variant::AltNode => {
            let (alpha, beta) = bound.infer(tape, xv)?;
            let mut terms = Vec::with_capacity(states.len() + 1);
            for (&h, &t) in states.iter().zip(times) {
                let ll = bound.log_likelihood(tape, h, targets)?;
                let lq = tape.gamma_log_pdf(t, alpha, beta)?;
                let q = tape.exp(lq)?;
                let w = tape.mul(ll, q)?;
                terms.push(((b - a) / s * data_scale, tape.sum(w)?));
            }
            let kl = tape.gamma_kl(alpha, beta, cfg.prior)?;
            terms.push((-1.0, tape.sum(kl)?));
            let value = tape.lincomb(&terms)?;
            let mean = |v: Var| {
                let d = tape.value(v).data();
                d.iter().sum::<f64>() / d.len() as f64
            };
            Ok(Objective {
                value,
                alpha_q: mean(alpha),
                beta_q: mean(beta),
            })
        }
    }
}

/// Objective value at frozen `times`, without recording.
pub fn objective_value(
    model: &LatentTimeModel,
    x: &Tensor,
    targets: &Targets,
    times: &[f64],
    cfg: &ElboConfig,
) -> Result<f64> {
    let mut tape = Tape::unrecorded();
    let bound = model.bind(&mut tape, false);
    let obj = objective_on_tape(&mut tape, &bound, model, x, targets, times, cfg, 1.0)?;
    Ok(tape.value(obj.value).data()[0])
}

/// Objective value and its gradient with respect to every parameter, in
/// storage order, at frozen `times`.
pub fn objective_grad(
    model: &LatentTimeModel,
    x: &Tensor,
    targets: &Targets,
    times: &[f64],
    cfg: &ElboConfig,
) -> Result<(f64, Vec<(String, Tensor)>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let obj = objective_on_tape(&mut tape, &bound, model, x, targets, times, cfg, 1.0)?;
    tape.backward(obj.value)?;
    Ok((tape.value(obj.value).data()[0], bound.grads(&tape)))
}

fn require(model: &LatentTimeModel, want: Variant) -> Result<()> {
    if std::mem::discriminant(&model.spec().variant) != std::mem::discriminant(&want) {
        return Err(Error::contract(format!(
            "expected a {} model, got {}",
            want.name(),
            model.spec().variant.name()
        )));
    }
    Ok(())
}

/// LT-NODE evidence lower bound on a batch with freshly sampled times.
pub fn elbo_lt<R: Rng + ?Sized>(
    model: &LatentTimeModel,
    x: &Tensor,
    targets: &Targets,
    cfg: &ElboConfig,
    rng: &mut R,
) -> Result<f64> {
    require(model, Variant::LtNode)?;
    cfg.validate()?;
    objective_value(model, x, targets, &cfg.sample_times(rng), cfg)
}

/// ALT-NODE evidence lower bound on a batch with freshly sampled times.
pub fn elbo_alt<R: Rng + ?Sized>(
    model: &LatentTimeModel,
    x: &Tensor,
    targets: &Targets,
    cfg: &ElboConfig,
    rng: &mut R,
) -> Result<f64> {
    require(model, Variant::AltNode)?;
    cfg.validate()?;
    objective_value(model, x, targets, &cfg.sample_times(rng), cfg)
}

fn group_of(name: &str) -> usize {
    if name.starts_with("q.") {
        1
    } else if name.starts_with("infer.") {
        2
    } else {
        0
    }
}

/// Maximize the objective by SGD on `-objective / batch_size`.
///
/// Parameters fall into three optimizer groups: network weights, the
/// `lt_node` posterior, and the `alt_node` inference network. `observer`
/// sees each trace row as it is produced.
pub fn train(
    model: &mut LatentTimeModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut observer: Option<&mut dyn FnMut(&TraceRow)>,
) -> Result<TrainReport> {
    cfg.elbo.validate()?;
    if data.is_empty() {
        return Err(Error::contract("training set is empty"));
    }
    let n = data.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    if batch == 0 {
        return Err(Error::contract("batch size must be at least 1"));
    }
    let mut states = Vec::with_capacity(3);
    for (g, sgd) in [&cfg.theta, &cfg.variational, &cfg.inference].into_iter().enumerate() {
        let members: Vec<&Tensor> = model
            .params()
            .iter()
            .filter(|(n, _)| group_of(n) == g)
            .map(|(_, t)| t)
            .collect();
        states.push(OptimizerState::new(sgd.clone(), &members)?);
    }
    let mut rng = rng::stream(cfg.seed, Purpose::Sampling);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut report = TrainReport::default();

    for it in 0..cfg.iterations {
        let idx: Vec<usize> = if batch == n {
            order.clone()
        } else {
            if cursor + batch > n {
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                cursor = 0;
            }
            cursor += batch;
            order[cursor - batch..cursor].to_vec()
        };
        let sub;
        let (x, targets) = if batch == n {
            (data.inputs(), data.targets())
        } else {
            sub = data.select(&idx);
            (sub.inputs(), sub.targets())
        };
        let times = match model.spec().variant {
            Variant::Node { end_time } => vec![end_time],
            Variant::UniNode { a, b } => {
                let mut t: Vec<f64> = (0..cfg.elbo.samples).map(|_| sample_uniform(a, b, &mut rng)).collect();
                t.sort_by(f64::total_cmp);
                t
            }
            _ => cfg.elbo.sample_times(&mut rng),
        };
        let diverged = |e: Error| match e {
            Error::NonFinite { op } => Error::Diverged {
                iteration: it,
                detail: op,
            },
            Error::NonConvergence { .. } => Error::Diverged {
                iteration: it,
                detail: e.to_string(),
            },
            other => other,
        };

        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let scale = n as f64 / batch as f64;
        let obj = objective_on_tape(&mut tape, &bound, model, x, targets, &times, &cfg.elbo, scale)
            .map_err(diverged)?;
        let value = tape.value(obj.value).data()[0];
        if !value.is_finite() {
            return Err(Error::Diverged {
                iteration: it,
                detail: format!("objective is {value}"),
            });
        }
        let loss = tape.scale(obj.value, -1.0 / n as f64).map_err(diverged)?;
        tape.backward(loss).map_err(diverged)?;
        let grads = bound.grads(&tape);
        drop(tape);

        let row = TraceRow {
            iteration: it,
            negative_elbo: -value,
            alpha_q: obj.alpha_q,
            beta_q: obj.beta_q,
        };
        if let Some(f) = observer.as_deref_mut() {
            f(&row);
        }
        report.trace.push(row);

        for (g, state) in states.iter_mut().enumerate() {
            let gs: Vec<&Tensor> = grads.iter().filter(|(n, _)| group_of(n) == g).map(|(_, t)| t).collect();
            let mut ps: Vec<&mut Tensor> = model
                .params_mut()
                .iter_mut()
                .filter(|(n, _)| group_of(n) == g)
                .map(|(_, t)| t)
                .collect();
            sgd_update(&mut ps, &gs, state, it)?;
        }
        if model.params().iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Diverged {
                iteration: it,
                detail: "non-finite parameter after update".into(),
            });
        }
    }
    Ok(report)
}
