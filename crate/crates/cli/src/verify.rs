//! Oracle comparisons behind the hidden `verify` subcommand and the
//! acceptance runner. Each function returns raw measurements; thresholds are
//! applied by the caller.

use ltnode::evaluation::{auroc_aupr, classification_metrics_from, BinningConfig};
use ltnode::gamma::gamma_kl;
use ltnode::models::{Activation, Variant};
use ltnode::ode::{self, SolverConfig, TapeDynamics};
use ltnode::oracles::{
    auroc_pairs, average_precision_scan, brier_definition, ece_definition, finite_diff_grad, gamma_kl_quadrature,
    linear_ode_gradients, linear_ode_solution, reference_predict, QuadratureConfig,
};
use ltnode::rng::{seeded, Rng as ChaCha};
use ltnode::{checkpoint, GammaParams, LatentTimeModel, ModelSpec, Result, Tape, Tensor, Var};
use rand::Rng;
use serde::Serialize;

fn random_tensor(rng: &mut ChaCha, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).expect("shape matches")
}

fn relative(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Denominator floor for relative gradient errors.
pub const GRADIENT_REL_FLOOR: f64 = 1e-3;

struct Network {
    x: Tensor,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    readout: Tensor,
}

impl Network {
    fn random(rng: &mut ChaCha) -> Self {
        let layers = rng.random_range(1..=3);
        let batch = rng.random_range(1..=4);
        let mut widths = vec![rng.random_range(1..=8)];
        widths.extend((0..layers).map(|_| rng.random_range(1..=64)));
        let weights = widths
            .windows(2)
            .map(|w| random_tensor(rng, &[w[0], w[1]], 1.0 / (w[0] as f64).sqrt()))
            .collect();
        let biases = widths[1..].iter().map(|&w| random_tensor(rng, &[w], 0.5)).collect();
        Network {
            x: random_tensor(rng, &[batch, widths[0]], 1.0),
            weights,
            biases,
            readout: random_tensor(rng, &[batch, *widths.last().unwrap()], 1.0),
        }
    }

    fn flat(&self) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.data().iter().chain(b.data()).copied())
            .collect()
    }

    fn unflatten(&self, v: &[f64]) -> (Vec<Tensor>, Vec<Tensor>) {
        let mut k = 0;
        let mut take = |t: &Tensor| {
            let n = t.data().len();
            k += n;
            Tensor::new(t.shape().to_vec(), v[k - n..k].to_vec()).expect("shape matches")
        };
        let mut ws = Vec::new();
        let mut bs = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            ws.push(take(w));
            bs.push(take(b));
        }
        (ws, bs)
    }

    /// `sum(readout * net(x))` with tanh between layers.
    fn loss(&self, tape: &mut Tape, ws: &[Var], bs: &[Var]) -> Result<Var> {
        let mut h = tape.constant(self.x.clone());
        for (i, (w, b)) in ws.iter().zip(bs).enumerate() {
            h = tape.affine(h, *w, *b)?;
            if i + 1 < ws.len() {
                h = tape.tanh(h)?;
            }
        }
        let r = tape.constant(self.readout.clone());
        let prod = tape.mul(h, r)?;
        tape.sum(prod)
    }

    fn value(&self, v: &[f64]) -> f64 {
        let (ws, bs) = self.unflatten(v);
        let mut tape = Tape::unrecorded();
        let ws: Vec<Var> = ws.into_iter().map(|t| tape.constant(t)).collect();
        let bs: Vec<Var> = bs.into_iter().map(|t| tape.constant(t)).collect();
        let out = self.loss(&mut tape, &ws, &bs).expect("shapes agree");
        tape.value(out).data()[0]
    }

    fn gradient(&self) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let ws: Vec<Var> = self.weights.iter().map(|t| tape.param(t.clone())).collect();
        let bs: Vec<Var> = self.biases.iter().map(|t| tape.param(t.clone())).collect();
        let out = self.loss(&mut tape, &ws, &bs)?;
        tape.backward(out)?;
        let mut g = Vec::new();
        for (w, b) in ws.iter().zip(&bs) {
            g.extend(tape.grad(*w).expect("leaf gradient").data());
            g.extend(tape.grad(*b).expect("leaf gradient").data());
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientFidelity {
    pub networks: usize,
    pub parameters_checked: usize,
    pub max_relative_error: f64,
}

/// Reverse-mode gradients of random tanh networks (1 to 3 layers, up to 64
/// units) against central differences, over every parameter.
pub fn gradient_fidelity(networks: usize, seed: u64) -> Result<GradientFidelity> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..networks {
        let net = Network::random(&mut rng);
        let g = net.gradient()?;
        let fd = finite_diff_grad(|v| net.value(v), &net.flat(), 1e-6);
        for (a, b) in g.iter().zip(&fd) {
            worst = worst.max(relative(*a, *b, GRADIENT_REL_FLOOR));
        }
        checked += g.len();
    }
    Ok(GradientFidelity {
        networks,
        parameters_checked: checked,
        max_relative_error: worst,
    })
}

/// Largest absolute gap between the closed-form KL and quadrature over
/// random pairs with both parameters in `[0.1, 20]`.
pub fn gamma_kl_agreement(pairs: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let cfg = QuadratureConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let mut draw = || rng.random_range(0.1..=20.0);
        let (a, b, c, d) = (draw(), draw(), draw(), draw());
        let closed = gamma_kl(GammaParams::new(a, b)?, GammaParams::new(c, d)?);
        let quad = gamma_kl_quadrature((a, b), (c, d), &cfg)?;
        worst = worst.max((closed - quad).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverAccuracy {
    /// `|h(1) - e^-1|` for `h' = -h` at `atol = rtol = 1e-6`.
    pub adaptive_error: f64,
    /// Least-squares slope of log error against log step for 2, 4, 8, 16
    /// fixed steps.
    pub order: f64,
}

pub fn solver_accuracy() -> Result<SolverAccuracy> {
    let decay = |h: &[f64], _t: f64| -> Result<Vec<f64>> { Ok(h.iter().map(|x| -x).collect()) };
    let exact = (-1f64).exp();
    let traj = ode::solve(decay, &[1.0], 0.0, 1.0, &SolverConfig::with_tolerances(1e-6, 1e-6))?;
    let adaptive_error = (traj.final_state()[0] - exact).abs();
    let steps = [2usize, 4, 8, 16];
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in &steps {
        let t = ode::solve_fixed(decay, &[1.0], 0.0, 1.0, n)?;
        xs.push((1.0 / n as f64).ln());
        ys.push((t.final_state()[0] - exact).abs().ln());
    }
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let order = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    Ok(SolverAccuracy { adaptive_error, order })
}

struct Mlp {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl TapeDynamics for Mlp {
    fn eval(&self, tape: &mut Tape, h: Var, t: f64) -> Result<Var> {
        let rows = tape.value(h).shape()[0];
        let tc = tape.constant(Tensor::matrix(rows, 1, vec![t; rows])?);
        let z = tape.concat_cols(h, tc)?;
        let a = tape.affine(z, self.w1, self.b1)?;
        let a = tape.tanh(a)?;
        tape.affine(a, self.w2, self.b2)
    }
}

/// Gradients of `sum_k ||h(t_k)||^2` with respect to the dynamics weights
/// and `h0`.
fn dynamics_gradients(params: &[Tensor], h0: &Tensor, times: &[f64], two_phase: bool) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p: Vec<Var> = params.iter().map(|t| tape.param(t.clone())).collect();
    let hv = tape.param(h0.clone());
    let f = Mlp {
        w1: p[0],
        b1: p[1],
        w2: p[2],
        b2: p[3],
    };
    let cfg = SolverConfig::default();
    let states = if two_phase {
        ode::two_phase_solve(&mut tape, &f, hv, times, &cfg)?
    } else {
        ode::solve_recorded(&mut tape, &f, hv, times, &cfg)?
    };
    let mut terms = Vec::new();
    for s in &states {
        let sq = tape.mul(*s, *s)?;
        terms.push((1.0, tape.sum(sq)?));
    }
    let loss = tape.lincomb(&terms)?;
    tape.backward(loss)?;
    let mut g = Vec::new();
    for v in p.iter().chain(std::iter::once(&hv)) {
        g.extend(tape.grad(*v).expect("leaf gradient").data());
    }
    Ok(g)
}

#[derive(Debug, Clone, Serialize)]
pub struct TwoPhaseAgreement {
    /// Against the fully recorded adaptive solve.
    pub max_relative_vs_recorded: f64,
    /// Against the matrix-exponential gradients of linear dynamics.
    pub max_relative_vs_expm: f64,
}

pub fn two_phase_agreement(instances: usize, seed: u64) -> Result<TwoPhaseAgreement> {
    let mut rng = seeded(seed);
    let mut recorded: f64 = 0.0;
    for _ in 0..instances {
        let d = rng.random_range(1..5);
        let hidden = rng.random_range(2..17);
        let mut times: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0.0..2.0)).collect();
        times.sort_by(f64::total_cmp);
        let params = vec![
            random_tensor(&mut rng, &[d + 1, hidden], 1.0),
            random_tensor(&mut rng, &[hidden], 1.0),
            random_tensor(&mut rng, &[hidden, d], 1.0),
            random_tensor(&mut rng, &[d], 1.0),
        ];
        let h0 = random_tensor(&mut rng, &[2, d], 1.0);
        let a = dynamics_gradients(&params, &h0, &times, true)?;
        let b = dynamics_gradients(&params, &h0, &times, false)?;
        for (x, y) in a.iter().zip(&b) {
            recorded = recorded.max(relative(*x, *y, 1e-8));
        }
    }

    let mut expm: f64 = 0.0;
    let cfg = SolverConfig::with_tolerances(1e-11, 1e-11);
    for _ in 0..instances {
        let w = random_tensor(&mut rng, &[2, 2], 1.0);
        let h0 = random_tensor(&mut rng, &[1, 2], 1.0);
        let weight = random_tensor(&mut rng, &[1, 2], 1.0);
        let t = rng.random_range(0.2..2.0);
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let hv = tape.param(h0.clone());
        let f = |tp: &mut Tape, h: Var, _t: f64| tp.matmul(h, wv);
        let out = ode::two_phase_solve(&mut tape, &f, hv, &[t], &cfg)?[0];
        let sv = tape.constant(weight.clone());
        let prod = tape.mul(out, sv)?;
        let loss = tape.sum(prod)?;
        tape.backward(loss)?;
        // Row states evolve by h W, i.e. column dynamics with A = W^T.
        let a = [w.data()[0], w.data()[2], w.data()[1], w.data()[3]];
        let exact = linear_ode_solution(&a, h0.data(), t)?;
        let value = tape.value(out).data();
        expm = expm.max(relative(value[0], exact[0], 1e-3)).max(relative(value[1], exact[1], 1e-3));
        let (g_h0, g_a) = linear_ode_gradients(&a, h0.data(), weight.data(), t)?;
        let got_h0 = tape.grad(hv).expect("leaf gradient").data();
        let got_w = tape.grad(wv).expect("leaf gradient").data();
        let expected_w = [g_a[0], g_a[2], g_a[1], g_a[3]];
        for (x, y) in got_h0.iter().zip(&g_h0).chain(got_w.iter().zip(&expected_w)) {
            expm = expm.max(relative(*x, *y, 1e-3));
        }
    }
    Ok(TwoPhaseAgreement {
        max_relative_vs_recorded: recorded,
        max_relative_vs_expm: expm,
    })
}

/// Largest per-component gap between the sorted single-pass prediction and
/// independent solves, over random classifiers at `atol = rtol = 1e-4`.
pub fn algorithm1_agreement(instances: usize, samples: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let variant = if i % 2 == 0 { Variant::LtNode } else { Variant::AltNode };
        let dim = rng.random_range(1..=4);
        let classes = rng.random_range(2..=5);
        let mut spec = ModelSpec::classifier(dim, classes, variant);
        spec.activation = if rng.random::<bool>() { Activation::Tanh } else { Activation::Relu };
        spec.solver = SolverConfig::with_tolerances(1e-4, 1e-4);
        let m = LatentTimeModel::build(spec, seed.wrapping_add(i as u64))?;
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = m.predict_probability(&x, samples, &mut rng)?;
        let reference = reference_predict(&m, &x, &p.times)?;
        for (a, b) in p.samples.iter().zip(&reference) {
            for (u, v) in a.iter().zip(b) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    Ok(worst)
}

fn random_prediction_set(rng: &mut ChaCha) -> (Vec<Vec<f64>>, Vec<usize>) {
    let n = rng.random_range(1..=200);
    let c = rng.random_range(2..=10);
    let coarse = rng.random::<bool>();
    let probs = (0..n)
        .map(|_| {
            let raw: Vec<f64> = (0..c)
                .map(|_| {
                    let v: f64 = rng.random_range(0.0..1.0);
                    if coarse {
                        (v * 4.0).round()
                    } else {
                        v * v * v
                    }
                })
                .collect();
            let s: f64 = raw.iter().sum();
            if s == 0.0 {
                let mut one = vec![0.0; c];
                one[0] = 1.0;
                one
            } else {
                raw.iter().map(|v| v / s).collect()
            }
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..c)).collect();
    (probs, labels)
}

/// Largest gap between the metric implementations and the definitional
/// oracles (ECE, Brier, AUROC, AUPR-in, AUPR-out) over random sets with
/// ties and bin-edge values.
pub fn metric_oracle_agreement(sets: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    let scores = |rng: &mut ChaCha, n: usize| -> Vec<f64> {
        (0..n).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect()
    };
    for _ in 0..sets {
        let (probs, labels) = random_prediction_set(&mut rng);
        let m = classification_metrics_from(&probs, &labels, BinningConfig::default())?;
        worst = worst.max((m.ece - ece_definition(&probs, &labels, 10)).abs());
        worst = worst.max((m.brier - brier_definition(&probs, &labels)).abs());
        let (na, nb) = (rng.random_range(1..=200), rng.random_range(1..=200));
        let a = scores(&mut rng, na);
        let b = scores(&mut rng, nb);
        let ood = auroc_aupr(&a, &b)?;
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        worst = worst.max((ood.auroc - auroc_pairs(&a, &b)).abs());
        worst = worst.max((ood.aupr_out - average_precision_scan(&b, &a)).abs());
        worst = worst.max((ood.aupr_in - average_precision_scan(&neg(&a), &neg(&b))).abs());
    }
    Ok(worst)
}

#[derive(Debug, Clone, Serialize)]
pub struct ParameterCounts {
    pub node: usize,
    pub lt_node: usize,
}

/// Scalar counts of `node` and `lt_node` models of the same spec after a
/// checkpoint round trip.
pub fn parameter_counts(spec: &ModelSpec) -> Result<ParameterCounts> {
    let count = |variant: Variant| -> Result<usize> {
        let mut s = spec.clone();
        s.variant = variant;
        let m = LatentTimeModel::build(s, 0)?;
        let (back, _) = checkpoint::from_bytes(&checkpoint::to_bytes(&m, 0, "")?)?;
        Ok(back.num_scalars())
    };
    Ok(ParameterCounts {
        node: count(Variant::Node { end_time: 1.0 })?,
        lt_node: count(Variant::LtNode)?,
    })
}
