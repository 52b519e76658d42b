use ltnode::ode::{self, SolverConfig};
use ltnode::oracles::{linear_ode_gradients, linear_ode_solution};
use ltnode::{Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn decay(h: &[f64], _t: f64) -> Result<Vec<f64>> {
    Ok(h.iter().map(|x| -x).collect())
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

#[test]
fn fixed_step_convergence_order() {
    let steps = [2usize, 4, 8, 16];
    let errors: Vec<f64> = steps
        .iter()
        .map(|&n| {
            let traj = ode::solve_fixed(decay, &[1.0], 0.0, 1.0, n).unwrap();
            (traj.final_state()[0] - (-1f64).exp()).abs()
        })
        .collect();
    for w in errors.windows(2) {
        assert!(w[0] / w[1] >= 16.0 * 0.8, "{errors:?}");
    }
    // Least-squares slope of log error against log step size.
    let xs: Vec<f64> = steps.iter().map(|&n| (1.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 4.0, ys.iter().sum::<f64>() / 4.0);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    assert!(slope >= 4.5, "order {slope}");
}

#[test]
fn dense_output_is_continuous_and_accurate() {
    let cfg = SolverConfig::with_tolerances(1e-6, 1e-6);
    let traj = ode::solve(decay, &[1.0], 0.0, 1.0, &cfg).unwrap();
    for i in 0..1000 {
        let t = i as f64 / 1000.0;
        let a = traj.dense_eval(t).unwrap()[0];
        let b = traj.dense_eval(t + 1e-9).unwrap()[0];
        assert!((a - b).abs() <= 1e-6 * (1.0 + a.abs()));
    }
    assert!((traj.dense_eval(0.5).unwrap()[0] - (-0.5f64).exp()).abs() <= 1e-5);
    assert!(traj.dense_eval(1.5).is_err());
}

#[test]
fn solve_at_times_examples() {
    let cfg = SolverConfig::with_tolerances(1e-4, 1e-4);
    let out = ode::solve_at_times(decay, &[1.0], &[0.5, 1.0], &cfg).unwrap();
    assert!((out[0][0] - (-0.5f64).exp()).abs() <= 1e-3);
    assert!((out[1][0] - (-1f64).exp()).abs() <= 1e-3);
    assert_eq!(ode::solve_at_times(decay, &[0.3], &[0.0], &cfg).unwrap(), vec![vec![0.3]]);
    let same = ode::solve_at_times(decay, &[1.0], &[0.7, 0.7, 0.7], &cfg).unwrap();
    assert!(same.iter().all(|s| s == &same[0]));
    let end = ode::solve(decay, &[1.0], 0.0, 0.7, &cfg).unwrap();
    assert_eq!(&same[0], end.final_state());
    assert!(ode::solve_at_times(decay, &[1.0], &[1.0, 0.5], &cfg).is_err());
}

struct Mlp {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl ode::TapeDynamics for Mlp {
    fn eval(&self, tape: &mut Tape, h: Var, t: f64) -> Result<Var> {
        let rows = tape.value(h).shape()[0];
        let tc = tape.constant(Tensor::matrix(rows, 1, vec![t; rows])?);
        let z = tape.concat_cols(h, tc)?;
        let a = tape.affine(z, self.w1, self.b1)?;
        let a = tape.tanh(a)?;
        tape.affine(a, self.w2, self.b2)
    }
}

struct Instance {
    params: Vec<Tensor>,
    h0: Tensor,
    times: Vec<f64>,
}

fn instance(rng: &mut ChaCha8Rng) -> Instance {
    let d = rng.random_range(1..5);
    let hidden = rng.random_range(2..17);
    let mut times: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random_range(0.0..2.0)).collect();
    times.sort_by(f64::total_cmp);
    Instance {
        params: vec![
            random_tensor(rng, &[d + 1, hidden], 1.0),
            random_tensor(rng, &[hidden], 1.0),
            random_tensor(rng, &[hidden, d], 1.0),
            random_tensor(rng, &[d], 1.0),
        ],
        h0: random_tensor(rng, &[2, d], 1.0),
        times,
    }
}

/// Values and gradients of `sum_k ||state(t_k)||^2` for one solve path.
fn run_path(inst: &Instance, two_phase: bool, cfg: &SolverConfig) -> (Vec<Tensor>, Vec<Tensor>) {
    let mut tape = Tape::new();
    let p: Vec<Var> = inst.params.iter().map(|t| tape.param(t.clone())).collect();
    let h0 = tape.param(inst.h0.clone());
    let f = Mlp {
        w1: p[0],
        b1: p[1],
        w2: p[2],
        b2: p[3],
    };
    let states = if two_phase {
        ode::two_phase_solve(&mut tape, &f, h0, &inst.times, cfg).unwrap()
    } else {
        ode::solve_recorded(&mut tape, &f, h0, &inst.times, cfg).unwrap()
    };
    let values = states.iter().map(|s| tape.value(*s).clone()).collect();
    let mut terms = Vec::new();
    for s in &states {
        let sq = tape.mul(*s, *s).unwrap();
        terms.push((1.0, tape.sum(sq).unwrap()));
    }
    let loss = tape.lincomb(&terms).unwrap();
    tape.backward(loss).unwrap();
    let grads = p
        .iter()
        .chain(std::iter::once(&h0))
        .map(|v| tape.grad(*v).cloned().unwrap())
        .collect();
    (values, grads)
}

#[test]
fn two_phase_gradients_match_fully_recorded_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = SolverConfig::default();
    for i in 0..20 {
        let inst = instance(&mut rng);
        let (va, ga) = run_path(&inst, true, &cfg);
        let (vb, gb) = run_path(&inst, false, &cfg);
        for (a, b) in va.iter().zip(&vb) {
            assert!(a.max_abs_diff(b) <= 1e-12, "instance {i}: forward values differ");
        }
        for (a, b) in ga.iter().zip(&gb) {
            for (x, y) in a.data().iter().zip(b.data()) {
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
                assert!(rel <= 1e-5, "instance {i}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn two_phase_forward_equals_unrecorded_solve_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = SolverConfig::default();
    for _ in 0..5 {
        let inst = instance(&mut rng);
        let (values, _) = run_path(&inst, true, &cfg);
        let mut tape = Tape::new();
        let p: Vec<Var> = inst.params.iter().map(|t| tape.constant(t.clone())).collect();
        let f = Mlp {
            w1: p[0],
            b1: p[1],
            w2: p[2],
            b2: p[3],
        };
        let h0 = tape.constant(inst.h0.clone());
        let end = *inst.times.last().unwrap();
        let traj = ode::solve_unrecorded(&mut tape, &f, h0, end, &cfg).unwrap();
        for (t, v) in inst.times.iter().zip(&values) {
            let plain = traj.dense_eval(*t).unwrap();
            assert!(plain.iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn linear_dynamics_gradients_match_matrix_exponential() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = SolverConfig::with_tolerances(1e-11, 1e-11);
    for _ in 0..10 {
        let w = random_tensor(&mut rng, &[2, 2], 1.0);
        let h0 = random_tensor(&mut rng, &[1, 2], 1.0);
        let seed = random_tensor(&mut rng, &[1, 2], 1.0);
        let t = rng.random_range(0.2..2.0);

        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let hv = tape.param(h0.clone());
        let f = |tp: &mut Tape, h: Var, _t: f64| tp.matmul(h, wv);
        let out = ode::two_phase_solve(&mut tape, &f, hv, &[t], &cfg).unwrap()[0];
        let sv = tape.constant(seed.clone());
        let prod = tape.mul(out, sv).unwrap();
        let loss = tape.sum(prod).unwrap();
        tape.backward(loss).unwrap();

        // Row states evolve by h W, i.e. column dynamics with A = W^T.
        let a: Vec<f64> = vec![w.data()[0], w.data()[2], w.data()[1], w.data()[3]];
        let exact = linear_ode_solution(&a, h0.data(), t).unwrap();
        let value = tape.value(out).data();
        assert!((value[0] - exact[0]).abs() < 1e-8 && (value[1] - exact[1]).abs() < 1e-8);
        let (g_h0, g_a) = linear_ode_gradients(&a, h0.data(), seed.data(), t).unwrap();
        let got_h0 = tape.grad(hv).unwrap().data();
        let got_w = tape.grad(wv).unwrap().data();
        let expected_w = [g_a[0], g_a[2], g_a[1], g_a[3]];
        for (x, y) in got_h0.iter().zip(&g_h0).chain(got_w.iter().zip(&expected_w)) {
            assert!((x - y).abs() / y.abs().max(1e-3) <= 1e-5, "{x} vs {y}");
        }
    }
}

#[test]
fn zero_length_interval_gradient_is_identity() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::matrix(2, 2, vec![0.3, -1.0, 2.0, 0.1]).unwrap());
    let h0 = tape.param(Tensor::matrix(1, 2, vec![0.5, -0.25]).unwrap());
    let f = |tp: &mut Tape, h: Var, _t: f64| tp.matmul(h, w);
    let out = ode::two_phase_solve(&mut tape, &f, h0, &[0.0], &SolverConfig::default()).unwrap()[0];
    let picked = tape.pick(out, &[1]).unwrap();
    let loss = tape.sum(picked).unwrap();
    tape.backward(loss).unwrap();
    assert_eq!(tape.grad(h0).unwrap().data(), &[0.0, 1.0]);
}
