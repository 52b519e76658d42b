//! NODE, Uni-NODE, LT-NODE and ALT-NODE models.
//!
//! Every variant shares the same three blocks: an input block `d(x)`, time
//! dependent dynamics `f(h, t)` integrated from 0, and an output head `g(h)`.
//! They differ only in how the integration horizon is chosen: a fixed time,
//! a uniform law, a learned Gamma posterior (two extra scalars), or a Gamma
//! posterior predicted per input by a small inference network.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var, POSITIVE_FLOOR};
use crate::error::{Error, Result};
use crate::gamma::GammaParams;
use crate::ode::{self, SolverConfig, TapeDynamics};
use crate::params::ParamSet;
use crate::rng::{self, Purpose};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification { classes: usize },
}

impl Task {
    pub fn output_dim(self) -> usize {
        match self {
            Task::Regression => 1,
            Task::Classification { classes } => classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Variant {
    /// Fixed integration time.
    Node { end_time: f64 },
    /// End time drawn from `Uniform(a, b)`.
    UniNode { a: f64, b: f64 },
    /// Learned Gamma posterior over the end time.
    LtNode,
    /// Gamma posterior predicted per input.
    AltNode,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Node { .. } => "node",
            Variant::UniNode { .. } => "uni_node",
            Variant::LtNode => "lt_node",
            Variant::AltNode => "alt_node",
        }
    }
}

fn default_inference_block() -> Vec<usize> {
    vec![32, 32]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Widths of the input block; the last equals `hidden_dim`.
    pub input_block: Vec<usize>,
    /// Widths of the dynamics network; the last equals `hidden_dim`.
    pub node_block: Vec<usize>,
    /// Widths of the output head; the last equals the task's output size.
    pub head: Vec<usize>,
    /// Hidden widths of the inference network (`alt_node` only).
    #[serde(default = "default_inference_block")]
    pub inference_block: Vec<usize>,
    pub activation: Activation,
    pub task: Task,
    pub variant: Variant,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl ModelSpec {
    /// 1-D regression architecture: tanh, input block `[50, 100, 150, 50]`,
    /// dynamics `[100, 150, 100, 50]`, scalar head.
    pub fn regression(variant: Variant) -> Self {
        ModelSpec {
            input_dim: 1,
            hidden_dim: 50,
            input_block: vec![50, 100, 150, 50],
            node_block: vec![100, 150, 100, 50],
            head: vec![1],
            inference_block: default_inference_block(),
            activation: Activation::Tanh,
            task: Task::Regression,
            variant,
            solver: SolverConfig::default(),
        }
    }

    /// Small relu classifier: input block `[16, 32]`, dynamics `[32, 32]`.
    pub fn classifier(input_dim: usize, classes: usize, variant: Variant) -> Self {
        ModelSpec {
            input_dim,
            hidden_dim: 32,
            input_block: vec![16, 32],
            node_block: vec![32, 32],
            head: vec![classes],
            inference_block: default_inference_block(),
            activation: Activation::Relu,
            task: Task::Classification { classes },
            variant,
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::contract(msg));
        if self.input_dim == 0 || self.hidden_dim == 0 {
            return bad("input_dim and hidden_dim must be at least 1".into());
        }
        for (name, widths) in [
            ("input_block", &self.input_block),
            ("node_block", &self.node_block),
            ("head", &self.head),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return bad(format!("{name} widths must be nonempty and at least 1, got {widths:?}"));
            }
        }
        if self.variant == Variant::AltNode && self.inference_block.contains(&0) {
            return bad(format!("inference_block widths must be at least 1, got {:?}", self.inference_block));
        }
        if self.input_block.last() != Some(&self.hidden_dim) || self.node_block.last() != Some(&self.hidden_dim) {
            return bad(format!(
                "input_block and node_block must end at hidden_dim {}",
                self.hidden_dim
            ));
        }
        if let Task::Classification { classes } = self.task {
            if classes < 2 {
                return bad(format!("classification needs at least 2 classes, got {classes}"));
            }
        }
        if self.head.last() != Some(&self.task.output_dim()) {
            return bad(format!(
                "head must end at the output size {}, got {:?}",
                self.task.output_dim(),
                self.head
            ));
        }
        match self.variant {
            Variant::Node { end_time } if !(end_time >= 0.0 && end_time.is_finite()) => {
                bad(format!("node end_time must be finite and nonnegative, got {end_time}"))
            }
            Variant::UniNode { a, b } if !(a >= 0.0 && a < b && b.is_finite()) => {
                bad(format!("uni_node needs 0 <= a < b, got ({a}, {b})"))
            }
            _ => self.solver.validate(),
        }
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut dense = |prefix: &str, input: usize, widths: &[usize]| {
            let mut fan_in = input;
            for (i, &w) in widths.iter().enumerate() {
                out.push((format!("{prefix}.{i}.weight"), vec![fan_in, w]));
                out.push((format!("{prefix}.{i}.bias"), vec![w]));
                fan_in = w;
            }
        };
        dense("input", self.input_dim, &self.input_block);
        dense("node", self.hidden_dim + 1, &self.node_block);
        dense("head", self.hidden_dim, &self.head);
        if self.variant == Variant::AltNode {
            let mut widths = self.inference_block.clone();
            widths.push(2);
            dense("infer", self.input_dim, &widths);
        }
        if self.variant == Variant::LtNode {
            out.push(("q.alpha".into(), vec![1]));
            out.push(("q.beta".into(), vec![1]));
        }
        out
    }
}

/// Law of the integration horizon for one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndTimeLaw {
    Dirac(f64),
    Uniform(f64, f64),
    Gamma(GammaParams),
}

impl EndTimeLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            EndTimeLaw::Dirac(t) => t,
            EndTimeLaw::Uniform(a, b) => sample_uniform(a, b, rng),
            EndTimeLaw::Gamma(p) => p.sample(rng),
        }
    }
}

/// Draw from `(a, b]`, so a zero lower bound is never hit.
pub fn sample_uniform<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    b - (b - a) * rng.random::<f64>()
}

/// Unconstrained value whose positive transform is `y`.
pub fn unconstrained(y: f64) -> f64 {
    tensor::softplus_inv(y - POSITIVE_FLOOR)
}

/// Monte Carlo prediction for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Sampled end times, ascending.
    pub times: Vec<f64>,
    /// Head output at each sampled time (class probabilities or a scalar mean).
    pub samples: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population std of the scalar outputs (regression only).
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTimeModel {
    spec: ModelSpec,
    params: ParamSet,
}

impl LatentTimeModel {
    /// Seeded initialization: weights and biases uniform on `±1/sqrt(fan_in)`;
    /// Gamma posteriors start at `(1, 1)`.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, Purpose::Init);
        let mut params = ParamSet::new();
        let layout = spec.parameter_layout();
        let last_infer_bias = layout.iter().rposition(|(n, _)| n.starts_with("infer.")).map(|i| layout[i].0.clone());
        for (name, shape) in layout {
            let numel = shape.iter().product();
            let data = if name.starts_with("q.") || Some(&name) == last_infer_bias.as_ref() {
                vec![unconstrained(1.0); numel]
            } else {
                let fan_in = if name.ends_with(".weight") {
                    shape[0]
                } else {
                    // The bias shares its layer's fan-in.
                    params
                        .get(&name.replace(".bias", ".weight"))
                        .map(|w: &Tensor| w.shape()[0])
                        .expect("weight precedes bias")
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?);
        }
        Ok(LatentTimeModel { spec, params })
    }

    /// Assemble from stored parameters, checking names and shapes against
    /// the spec's layout.
    pub fn from_parts(spec: ModelSpec, params: ParamSet) -> Result<Self> {
        spec.validate()?;
        let layout = spec.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::SpecMismatch(format!(
                "spec {} expects {} tensors, found {}",
                spec.variant.name(),
                layout.len(),
                params.len()
            )));
        }
        for (name, shape) in &layout {
            match params.get(name) {
                None => return Err(Error::SpecMismatch(format!("missing parameter {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::SpecMismatch(format!(
                        "parameter {name} has shape {:?}, spec expects {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        let mut ordered = ParamSet::new();
        for (name, _) in layout {
            let t = params.get(&name).expect("checked above").clone();
            ordered.insert(name, t);
        }
        Ok(LatentTimeModel { spec, params: ordered })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_solver(&mut self, solver: SolverConfig) -> Result<()> {
        solver.validate()?;
        self.spec.solver = solver;
        Ok(())
    }

    pub fn num_scalars(&self) -> usize {
        self.params.num_scalars()
    }

    /// Current `(alpha_q, beta_q)` of an `lt_node` model.
    pub fn variational(&self) -> Result<GammaParams> {
        let (Some(a), Some(b)) = (self.params.get("q.alpha"), self.params.get("q.beta")) else {
            return Err(Error::contract("variational parameters exist only for lt_node"));
        };
        GammaParams::new(
            tensor::softplus(a.data()[0]) + POSITIVE_FLOOR,
            tensor::softplus(b.data()[0]) + POSITIVE_FLOOR,
        )
    }

    pub fn set_variational(&mut self, q: GammaParams) -> Result<()> {
        if self.spec.variant != Variant::LtNode {
            return Err(Error::contract("variational parameters exist only for lt_node"));
        }
        if q.alpha() <= POSITIVE_FLOOR || q.beta() <= POSITIVE_FLOOR {
            return Err(Error::domain("set_variational", "parameters must exceed the positivity floor"));
        }
        self.params.insert("q.alpha", Tensor::vector(vec![unconstrained(q.alpha())]));
        self.params.insert("q.beta", Tensor::vector(vec![unconstrained(q.beta())]));
        Ok(())
    }

    /// Put every parameter on `tape`; with `trainable` they require gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Bound {
        let vars: Vec<(String, Var)> = self
            .params
            .iter()
            .map(|(n, t)| (n.to_string(), tape.leaf(t.clone(), trainable)))
            .collect();
        let find = |name: &str| vars.iter().find(|(n, _)| n == name).map(|(_, v)| *v);
        let layers = |prefix: &str| {
            (0..)
                .map_while(|i| {
                    Some(Layer {
                        w: find(&format!("{prefix}.{i}.weight"))?,
                        b: find(&format!("{prefix}.{i}.bias"))?,
                    })
                })
                .collect::<Vec<_>>()
        };
        Bound {
            input: layers("input"),
            node: layers("node"),
            head: layers("head"),
            infer: layers("infer"),
            q: find("q.alpha").zip(find("q.beta")),
            activation: self.spec.activation,
            task: self.spec.task,
            vars,
        }
    }

    /// Gamma posterior of an `alt_node` model for each row of `x`.
    pub fn infer_endtime_posterior_batch(&self, x: &Tensor) -> Result<Vec<GammaParams>> {
        if self.spec.variant != Variant::AltNode {
            return Err(Error::contract(format!(
                "end-time inference needs alt_node, model is {}",
                self.spec.variant.name()
            )));
        }
        self.check_inputs(x)?;
        let mut tape = Tape::unrecorded();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let (a, b) = bound.infer(&mut tape, xv)?;
        tape.value(a)
            .data()
            .iter()
            .zip(tape.value(b).data())
            .map(|(&a, &b)| GammaParams::new(a, b))
            .collect()
    }

    pub fn infer_endtime_posterior(&self, x: &[f64]) -> Result<GammaParams> {
        let row = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.infer_endtime_posterior_batch(&row)?[0])
    }

    /// End-time law for each row of `x`.
    pub fn end_time_laws(&self, x: &Tensor) -> Result<Vec<EndTimeLaw>> {
        self.check_inputs(x)?;
        let n = x.shape()[0];
        Ok(match self.spec.variant {
            Variant::Node { end_time } => vec![EndTimeLaw::Dirac(end_time); n],
            Variant::UniNode { a, b } => vec![EndTimeLaw::Uniform(a, b); n],
            Variant::LtNode => vec![EndTimeLaw::Gamma(self.variational()?); n],
            Variant::AltNode => self
                .infer_endtime_posterior_batch(x)?
                .into_iter()
                .map(EndTimeLaw::Gamma)
                .collect(),
        })
    }

    fn check_inputs(&self, x: &Tensor) -> Result<()> {
        match x.shape() {
            [_, d] if *d == self.spec.input_dim => Ok(()),
            s => Err(Error::Shape {
                op: "model input",
                detail: format!("expected [n, {}], got {s:?}", self.spec.input_dim),
            }),
        }
    }

    /// Head outputs of row `i` of `x` at each of `row_times[i]` (sorted),
    /// from one batched integration up to the largest requested time.
    pub fn outputs_at(&self, x: &Tensor, row_times: &[Vec<f64>]) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_inputs(x)?;
        let n = x.shape()[0];
        if row_times.len() != n {
            return Err(Error::contract(format!("{n} inputs but {} time lists", row_times.len())));
        }
        let mut t_max = 0.0f64;
        for times in row_times {
            ode::dedup_times(times)?;
            t_max = t_max.max(*times.last().expect("nonempty"));
        }
        let h = self.spec.hidden_dim;
        let mut tape = Tape::unrecorded();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let h0 = bound.encode(&mut tape, xv)?;
        let dynamics = bound.dynamics();
        let traj = ode::solve_unrecorded(&mut tape, &dynamics, h0, t_max, &self.spec.solver)?;

        let total: usize = row_times.iter().map(Vec::len).sum();
        let mut states = Vec::with_capacity(total * h);
        for (i, times) in row_times.iter().enumerate() {
            let mut last: Option<(f64, Vec<f64>)> = None;
            for &t in times {
                let s = match &last {
                    Some((lt, s)) if *lt == t => s.clone(),
                    _ => traj.dense_eval_slice(t, i * h, h)?,
                };
                states.extend_from_slice(&s);
                last = Some((t, s));
            }
        }
        let hs = tape.constant(Tensor::matrix(total, h, states)?);
        let out = bound.output(&mut tape, hs)?;
        let k = self.spec.task.output_dim();
        let data = tape.value(out).data();
        let mut rows = data.chunks(k);
        Ok(row_times
            .iter()
            .map(|times| times.iter().map(|_| rows.next().expect("row count").to_vec()).collect())
            .collect())
    }

    /// Head outputs for a single input at sorted `times`.
    pub fn forward_at_times(&self, x: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
        let row = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.outputs_at(&row, &[times.to_vec()])?.remove(0))
    }

    /// Deterministic output of a fixed-time `node` model.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.spec.variant {
            Variant::Node { end_time } => Ok(self.forward_at_times(x, &[end_time])?.remove(0)),
            v => Err(Error::contract(format!("{} has no fixed end time", v.name()))),
        }
    }

    /// Draw `s` end times per row, sort them, integrate once and average the
    /// head outputs.
    pub fn predict_batch<R: Rng + ?Sized>(&self, x: &Tensor, s: usize, rng: &mut R) -> Result<Vec<Prediction>> {
        if s == 0 {
            return Err(Error::contract("at least one end-time sample is needed"));
        }
        let laws = self.end_time_laws(x)?;
        let row_times: Vec<Vec<f64>> = laws
            .iter()
            .map(|law| {
                let mut t: Vec<f64> = (0..s).map(|_| law.sample(rng)).collect();
                t.sort_by(f64::total_cmp);
                t
            })
            .collect();
        self.predict_at(x, row_times)
    }

    /// Prediction from given sorted end-time samples per row.
    pub fn predict_at(&self, x: &Tensor, row_times: Vec<Vec<f64>>) -> Result<Vec<Prediction>> {
        let outputs = self.outputs_at(x, &row_times)?;
        let regression = self.spec.task == Task::Regression;
        Ok(row_times
            .into_iter()
            .zip(outputs)
            .map(|(times, samples)| {
                let mean = mean_of(&times, &samples);
                let std = regression.then(|| {
                    let m = mean[0];
                    (samples.iter().map(|v| (v[0] - m) * (v[0] - m)).sum::<f64>() / samples.len() as f64).sqrt()
                });
                Prediction {
                    times,
                    samples,
                    mean,
                    std,
                }
            })
            .collect())
    }

    pub fn predict_probability<R: Rng + ?Sized>(&self, x: &[f64], s: usize, rng: &mut R) -> Result<Prediction> {
        let row = Tensor::matrix(1, x.len(), x.to_vec())?;
        Ok(self.predict_batch(&row, s, rng)?.remove(0))
    }
}

/// Componentwise mean of `samples`; a single distinct time returns its
/// output unchanged.
fn mean_of(times: &[f64], samples: &[Vec<f64>]) -> Vec<f64> {
    if times.windows(2).all(|w| w[0] == w[1]) {
        return samples[0].clone();
    }
    let s = samples.len() as f64;
    let mut mean = vec![0.0; samples[0].len()];
    for v in samples {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= s);
    mean
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: Var,
    b: Var,
}

fn run_layers(tape: &mut Tape, layers: &[Layer], mut x: Var, act: Activation, last_act: bool) -> Result<Var> {
    for (i, l) in layers.iter().enumerate() {
        x = tape.affine(x, l.w, l.b)?;
        if i + 1 < layers.len() || last_act {
            x = match act {
                Activation::Tanh => tape.tanh(x)?,
                Activation::Relu => tape.relu(x)?,
            };
        }
    }
    Ok(x)
}

/// A model's parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    input: Vec<Layer>,
    node: Vec<Layer>,
    head: Vec<Layer>,
    infer: Vec<Layer>,
    q: Option<(Var, Var)>,
    activation: Activation,
    task: Task,
    vars: Vec<(String, Var)>,
}

/// `f(h, t)`: the dynamics network applied to `[h, t]`.
#[derive(Debug, Clone)]
pub struct NodeDynamics {
    layers: Vec<Layer>,
    activation: Activation,
}

impl TapeDynamics for NodeDynamics {
    fn eval(&self, tape: &mut Tape, h: Var, t: f64) -> Result<Var> {
        let rows = tape.value(h).dims2().map(|d| d.0).unwrap_or(1);
        let tc = tape.constant(Tensor::matrix(rows, 1, vec![t; rows])?);
        let z = tape.concat_cols(h, tc)?;
        run_layers(tape, &self.layers, z, self.activation, false)
    }
}

impl Bound {
    /// Parameter handles in storage order.
    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// `d(x)`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        run_layers(tape, &self.input, x, self.activation, true)
    }

    pub fn dynamics(&self) -> NodeDynamics {
        NodeDynamics {
            layers: self.node.clone(),
            activation: self.activation,
        }
    }

    /// Head pre-activations: regression means or class logits.
    pub fn head(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        run_layers(tape, &self.head, h, self.activation, false)
    }

    /// Head outputs: regression means or class probabilities.
    pub fn output(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let z = self.head(tape, h)?;
        match self.task {
            Task::Regression => Ok(z),
            Task::Classification { .. } => tape.softmax(z),
        }
    }

    /// Per-row log-likelihood of `targets` given hidden states `h`.
    pub fn log_likelihood(&self, tape: &mut Tape, h: Var, targets: &Targets) -> Result<Var> {
        let z = self.head(tape, h)?;
        match (self.task, targets) {
            (Task::Regression, Targets::Values(y)) => {
                let n = y.len();
                let se = tape.squared_error(z, &Tensor::matrix(n, 1, y.clone())?)?;
                tape.scale(se, -0.5)
            }
            (Task::Classification { .. }, Targets::Classes(c)) => tape.log_softmax_pick(z, c),
            _ => Err(Error::contract("targets do not match the model task")),
        }
    }

    /// Positive `(alpha_q, beta_q)` of an `lt_node` model, each of shape `[1]`.
    pub fn variational(&self, tape: &mut Tape) -> Result<(Var, Var)> {
        let (a, b) = self
            .q
            .ok_or_else(|| Error::contract("variational parameters exist only for lt_node"))?;
        Ok((tape.positive(a)?, tape.positive(b)?))
    }

    /// `r(x)`: per-row positive `(alpha, beta)`, each of shape `[n]`.
    pub fn infer(&self, tape: &mut Tape, x: Var) -> Result<(Var, Var)> {
        if self.infer.is_empty() {
            return Err(Error::contract("inference network exists only for alt_node"));
        }
        let z = run_layers(tape, &self.infer, x, self.activation, false)?;
        let p = tape.positive(z)?;
        Ok((tape.column(p, 0)?, tape.column(p, 1)?))
    }

    /// Gradients of every parameter after `backward`, zeros where none flowed.
    pub fn grads(&self, tape: &Tape) -> Vec<(String, Tensor)> {
        self.vars
            .iter()
            .map(|(n, v)| {
                let g = tape
                    .grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape()));
                (n.clone(), g)
            })
            .collect()
    }
}

/// Regression values or class indices, one per example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Values(Vec<f64>),
    Classes(Vec<usize>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Values(v) => v.len(),
            Targets::Classes(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
        }
    }
}

/// Log-likelihood of one head output: `ln p[y]` for class probabilities or
/// `-(y - yhat)^2 / 2` for a regression mean.
pub fn likelihood_log_prob(output: &[f64], target: Target, task: Task) -> Result<f64> {
    match (task, target) {
        (Task::Regression, Target::Value(y)) => {
            let [yhat] = output else {
                return Err(Error::contract("regression output must be scalar"));
            };
            Ok(-0.5 * (y - yhat) * (y - yhat))
        }
        (Task::Classification { classes }, Target::Class(c)) => {
            if c >= classes || output.len() != classes {
                return Err(Error::contract(format!(
                    "class {c} with {} probabilities for {classes} classes",
                    output.len()
                )));
            }
            Ok(output[c].ln())
        }
        _ => Err(Error::contract("target does not match the task")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Value(f64),
    Class(usize),
}
