use ltnode::models::{unconstrained, Activation, Targets, Variant};
use ltnode::oracles::{finite_diff_grad, gamma_kl_quadrature, gamma_log_density, QuadratureConfig};
use ltnode::training::{elbo_alt, elbo_lt, objective_grad, objective_value, train};
use ltnode::{
    ElboConfig, GammaParams, LatentTimeModel, ModelSpec, SolverConfig, Task, Tape, Tensor, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(variant: Variant, seed: u64) -> LatentTimeModel {
    let spec = ModelSpec {
        input_dim: 1,
        hidden_dim: 2,
        input_block: vec![2],
        node_block: vec![3, 2],
        head: vec![1],
        inference_block: vec![4],
        activation: Activation::Tanh,
        task: Task::Regression,
        variant,
        solver: SolverConfig::default(),
    };
    LatentTimeModel::build(spec, seed).unwrap()
}

fn batch() -> (Tensor, Targets) {
    (
        Tensor::matrix(3, 1, vec![-0.6, 0.1, 0.8]).unwrap(),
        Targets::Values(vec![0.4, -0.2, 1.1]),
    )
}

#[test]
fn elbo_matches_term_by_term_oracle() {
    let mut m = tiny(Variant::LtNode, 1);
    m.set_variational(GammaParams::new(1.3, 0.8).unwrap()).unwrap();
    let x = Tensor::matrix(1, 1, vec![0.35]).unwrap();
    let y = 0.6;
    let cfg = ElboConfig::default();
    let times = [1.0, 2.0];
    let got = objective_value(&m, &x, &Targets::Values(vec![y]), &times, &cfg).unwrap();

    let q = m.variational().unwrap();
    let outputs = m.forward_at_times(&[0.35], &times).unwrap();
    let (a, b) = cfg.grid;
    let mut expectation = 0.0;
    for (t, out) in times.iter().zip(&outputs) {
        let ll = -0.5 * (y - out[0]) * (y - out[0]);
        expectation += (b - a) / 2.0 * gamma_log_density(*t, q.alpha(), q.beta()).exp() * ll;
    }
    let tight = QuadratureConfig {
        abs_tol: 1e-13,
        max_subdivisions: 50_000,
    };
    let kl = gamma_kl_quadrature((q.alpha(), q.beta()), (2.0, 0.5), &tight).unwrap();
    assert!((got - (expectation - kl)).abs() <= 1e-10, "{got} vs {}", expectation - kl);
}

#[test]
fn kl_vanishes_when_q_equals_the_prior() {
    let mut m = tiny(Variant::LtNode, 2);
    let cfg = ElboConfig::default();
    m.set_variational(cfg.prior).unwrap();
    let (x, y) = batch();
    let times = [0.5, 1.5];
    let with = objective_value(&m, &x, &y, &times, &cfg).unwrap();
    let q = m.variational().unwrap();
    let outputs = m.outputs_at(&x, &vec![times.to_vec(); 3]).unwrap();
    let Targets::Values(ys) = &y else { unreachable!() };
    let mut expectation = 0.0;
    for (row, yi) in outputs.iter().zip(ys) {
        for (t, out) in times.iter().zip(row) {
            expectation += 1.5 * q.pdf(*t).unwrap() * -0.5 * (yi - out[0]) * (yi - out[0]);
        }
    }
    assert!((with - expectation).abs() <= 1e-9 * (1.0 + expectation.abs()));
}

fn fd_check(model: &LatentTimeModel, prefix: &str, times: &[f64]) {
    let (x, y) = batch();
    let cfg = ElboConfig::default();
    let (_, grads) = objective_grad(model, &x, &y, times, &cfg).unwrap();
    let mut checked = 0;
    for (name, g) in grads.iter().filter(|(n, _)| n.starts_with(prefix)) {
        let base = model.params().get(name).unwrap().clone();
        let fd = finite_diff_grad(
            |w| {
                let mut probe = model.clone();
                *probe.params_mut().get_mut(name).unwrap() = Tensor::new(base.shape().to_vec(), w.to_vec()).unwrap();
                objective_value(&probe, &x, &y, times, &cfg).unwrap()
            },
            base.data(),
            1e-6,
        );
        for (u, v) in g.data().iter().zip(&fd) {
            assert!((u - v).abs() / u.abs().max(v.abs()).max(1e-3) <= 1e-4, "{name}: {u} vs {v}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn variational_gradient_matches_finite_differences() {
    let mut m = tiny(Variant::LtNode, 3);
    m.set_variational(GammaParams::new(1.7, 0.9).unwrap()).unwrap();
    fd_check(&m, "q.", &[0.4, 1.1, 2.5]);
}

#[test]
fn inference_gradient_matches_finite_differences() {
    fd_check(&tiny(Variant::AltNode, 4), "infer.", &[0.4, 1.1, 2.5]);
}

#[test]
fn network_gradient_matches_finite_differences() {
    fd_check(&tiny(Variant::LtNode, 5), "node.", &[0.3, 0.3, 2.0]);
    fd_check(&tiny(Variant::UniNode { a: 0.0, b: 3.0 }, 5), "input.", &[0.3, 1.0]);
}

#[test]
fn alt_equals_lt_when_inference_outputs_the_same_posterior() {
    let lt = tiny(Variant::LtNode, 6);
    let mut alt = tiny(Variant::AltNode, 6);
    for (name, t) in lt.params().iter().filter(|(n, _)| !n.starts_with("q.")) {
        *alt.params_mut().get_mut(name).unwrap() = t.clone();
    }
    let q = GammaParams::new(1.4, 1.2).unwrap();
    let mut lt = lt;
    lt.set_variational(q).unwrap();
    let last = alt.spec().inference_block.len();
    let w = format!("infer.{last}.weight");
    let b = format!("infer.{last}.bias");
    let shape = alt.params().get(&w).unwrap().shape().to_vec();
    *alt.params_mut().get_mut(&w).unwrap() = Tensor::zeros(&shape);
    *alt.params_mut().get_mut(&b).unwrap() =
        Tensor::vector(vec![unconstrained(q.alpha()), unconstrained(q.beta())]);

    let x = Tensor::matrix(1, 1, vec![0.2]).unwrap();
    let y = Targets::Values(vec![0.5]);
    let cfg = ElboConfig::default();
    let mut r1 = ChaCha8Rng::seed_from_u64(9);
    let mut r2 = ChaCha8Rng::seed_from_u64(9);
    let a = elbo_lt(&lt, &x, &y, &cfg, &mut r1).unwrap();
    let b = elbo_alt(&alt, &x, &y, &cfg, &mut r2).unwrap();
    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{a} vs {b}");
    assert!(elbo_lt(&alt, &x, &y, &cfg, &mut r1).is_err());
}

#[test]
fn estimator_agrees_with_quadrature_over_the_grid() {
    let mut m = tiny(Variant::LtNode, 7);
    m.set_variational(GammaParams::new(2.2, 1.1).unwrap()).unwrap();
    let (x, y) = batch();
    let cfg = ElboConfig::default();
    let q = m.variational().unwrap();
    let (a, b) = cfg.grid;

    let n = 10_000;
    let grid: Vec<f64> = (0..n).map(|i| a + (b - a) * (i as f64 + 0.5) / n as f64).collect();
    let outputs = m.outputs_at(&x, &vec![grid.clone(); 3]).unwrap();
    let Targets::Values(ys) = &y else { unreachable!() };
    let mut integral = 0.0;
    for (row, yi) in outputs.iter().zip(ys) {
        for (t, out) in grid.iter().zip(row) {
            integral += q.pdf(*t).unwrap() * -0.5 * (yi - out[0]) * (yi - out[0]) * (b - a) / n as f64;
        }
    }
    let exact = integral - ltnode::gamma::gamma_kl(q, cfg.prior);

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let draws: Vec<f64> = (0..200).map(|_| elbo_lt(&m, &x, &y, &cfg, &mut rng).unwrap()).collect();
    let mean = draws.iter().sum::<f64>() / 200.0;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / 199.0;
    let se = (var / 200.0).sqrt();
    assert!((mean - exact).abs() <= 2.0 * se + 1e-6, "{mean} vs {exact} (se {se})");
}

#[test]
fn kl_only_optimization_reaches_the_prior() {
    let prior = GammaParams::new(2.0, 0.5).unwrap();
    let mut raw = [unconstrained(0.7), unconstrained(3.0)];
    for _ in 0..5000 {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::vector(vec![raw[0]]));
        let b = tape.param(Tensor::vector(vec![raw[1]]));
        let pa = tape.positive(a).unwrap();
        let pb = tape.positive(b).unwrap();
        let kl = tape.gamma_kl(pa, pb, prior).unwrap();
        let kl = tape.sum(kl).unwrap();
        tape.backward(kl).unwrap();
        raw[0] -= 0.2 * tape.grad(a).unwrap().data()[0];
        raw[1] -= 0.2 * tape.grad(b).unwrap().data()[0];
    }
    let q = GammaParams::new(ltnode::tensor::softplus(raw[0]), ltnode::tensor::softplus(raw[1])).unwrap();
    assert!(ltnode::gamma::gamma_kl(q, prior) <= 1e-4);
}

#[test]
fn gradients_ignore_rng_state_after_sampling() {
    let m = tiny(Variant::LtNode, 8);
    let (x, y) = batch();
    let cfg = ElboConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let times = cfg.sample_times(&mut rng);
    let (_, g1) = objective_grad(&m, &x, &y, &times, &cfg).unwrap();
    let _: f64 = rng.random();
    let (_, g2) = objective_grad(&m, &x, &y, &times, &cfg).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn short_training_is_finite_and_deterministic() {
    let data = ltnode::datasets::gen_foong1d(60, 0.1, 0).unwrap();
    let cfg = TrainConfig {
        iterations: 15,
        ..TrainConfig::default()
    };
    let run = || {
        let mut m = tiny(Variant::AltNode, 0);
        let report = train(&mut m, &data, &cfg, None).unwrap();
        (m, report)
    };
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.params(), b.params());
    assert_eq!(ra, rb);
    assert!(ra.trace.iter().all(|r| r.negative_elbo.is_finite() && r.alpha_q > 0.0));
    let minibatch = TrainConfig {
        batch_size: Some(16),
        ..cfg
    };
    let mut m = tiny(Variant::LtNode, 0);
    assert_eq!(train(&mut m, &data, &minibatch, None).unwrap().trace.len(), 15);
}
