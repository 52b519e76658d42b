//! SGD with momentum, coupled weight decay and step-wise learning-rate decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// `(iteration, factor)`: from `iteration` on, the rate is divided by `factor`.
    #[serde(default)]
    pub milestones: Vec<(usize, f64)>,
}

impl SgdConfig {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        SgdConfig {
            learning_rate,
            momentum,
            weight_decay,
            milestones: Vec::new(),
        }
    }

    pub fn with_milestones(mut self, milestones: Vec<(usize, f64)>) -> Self {
        self.milestones = milestones;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::contract(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::contract(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::contract(format!(
                "weight decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        if self.milestones.iter().any(|(_, f)| !(*f > 0.0)) {
            return Err(Error::contract("milestone factors must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    config: SgdConfig,
    learning_rate: f64,
    velocity: Vec<Vec<f64>>,
    last_iteration: Option<usize>,
}

impl OptimizerState {
    pub fn new(config: SgdConfig, params: &[&Tensor]) -> Result<Self> {
        config.validate()?;
        Ok(OptimizerState {
            learning_rate: config.learning_rate,
            velocity: params.iter().map(|p| vec![0.0; p.numel()]).collect(),
            config,
            last_iteration: None,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn config(&self) -> &SgdConfig {
        &self.config
    }

    pub fn velocity(&self) -> &[Vec<f64>] {
        &self.velocity
    }

    fn advance_schedule(&mut self, iteration: usize) {
        for &(at, factor) in &self.config.milestones {
            let crossed = match self.last_iteration {
                Some(last) => last < at && at <= iteration,
                None => at <= iteration,
            };
            if crossed {
                self.learning_rate /= factor;
            }
        }
        self.last_iteration = Some(iteration);
    }
}

/// One step: `v ← μ·v + g + λ·p`, `p ← p − lr·v`, after applying any
/// learning-rate milestones reached by `iteration`.
pub fn sgd_update(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut OptimizerState,
    iteration: usize,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::contract(format!(
            "{} parameters, {} gradients, {} velocity buffers",
            params.len(),
            grads.len(),
            state.velocity.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.velocity[i].len() != p.numel() {
            return Err(Error::Shape {
                op: "sgd_update",
                detail: format!("parameter {i}: {:?} vs gradient {:?}", p.shape(), g.shape()),
            });
        }
    }
    if !(state.learning_rate >= 0.0) {
        return Err(Error::contract("negative learning rate"));
    }
    state.advance_schedule(iteration);
    let (mu, wd, lr) = (state.config.momentum, state.config.weight_decay, state.learning_rate);
    for ((p, g), v) in params.iter_mut().zip(grads).zip(state.velocity.iter_mut()) {
        for ((pv, gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
            *vv = mu * *vv + gv + wd * *pv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
