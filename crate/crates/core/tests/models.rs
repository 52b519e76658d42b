use ltnode::models::{EndTimeLaw, Variant};
use ltnode::oracles::{finite_diff_grad, reference_predict};
use ltnode::{LatentTimeModel, ModelSpec, SolverConfig, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn classifier(variant: Variant, seed: u64) -> LatentTimeModel {
    LatentTimeModel::build(ModelSpec::classifier(2, 3, variant), seed).unwrap()
}

#[test]
fn default_regression_parameter_count() {
    let layer = |i: usize, o: usize| i * o + o;
    let input = layer(1, 50) + layer(50, 100) + layer(100, 150) + layer(150, 50);
    let node = layer(51, 100) + layer(100, 150) + layer(150, 100) + layer(100, 50);
    let head = layer(50, 1);
    let m = LatentTimeModel::build(ModelSpec::regression(Variant::Node { end_time: 1.0 }), 0).unwrap();
    assert_eq!(m.num_scalars(), input + node + head);
    let lt = LatentTimeModel::build(ModelSpec::regression(Variant::LtNode), 0).unwrap();
    assert_eq!(lt.num_scalars(), m.num_scalars() + 2);
}

#[test]
fn builds_are_deterministic_and_validated() {
    let a = classifier(Variant::AltNode, 5);
    let b = classifier(Variant::AltNode, 5);
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), classifier(Variant::AltNode, 6).params());
    let mut bad = ModelSpec::classifier(2, 3, Variant::LtNode);
    bad.node_block = vec![0, 32];
    assert!(LatentTimeModel::build(bad, 0).is_err());
    assert!(LatentTimeModel::build(ModelSpec::classifier(2, 1, Variant::LtNode), 0).is_err());
}

#[test]
fn time_zero_output_skips_the_solve() {
    let m = classifier(Variant::LtNode, 1);
    let x = [0.3, -0.8];
    let out = m.forward_at_times(&x, &[0.0]).unwrap();
    let mut tape = Tape::unrecorded();
    let bound = m.bind(&mut tape, false);
    let xv = tape.constant(Tensor::matrix(1, 2, x.to_vec()).unwrap());
    let h = bound.encode(&mut tape, xv).unwrap();
    let y = bound.output(&mut tape, h).unwrap();
    assert_eq!(out[0], tape.value(y).data());
    assert_eq!(reference_predict(&m, &x, &[0.0]).unwrap()[0], out[0]);
}

#[test]
fn duplicate_times_and_fixed_node_share_paths() {
    let m = classifier(Variant::Node { end_time: 1.0 }, 2);
    let x = [1.0, 0.25];
    let out = m.forward_at_times(&x, &[0.7, 0.7]).unwrap();
    assert_eq!(out[0], out[1]);
    assert_eq!(m.forward(&x).unwrap(), m.forward_at_times(&x, &[1.0]).unwrap()[0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = m.predict_probability(&x, 10, &mut rng).unwrap();
    assert_eq!(p.mean, m.forward(&x).unwrap());
    let r = reference_predict(&m, &x, &[0.5, 0.5]).unwrap();
    assert_eq!(r[0], r[1]);
}

#[test]
fn probabilities_are_normalized_for_every_variant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for v in [
        Variant::Node { end_time: 1.0 },
        Variant::UniNode { a: 0.0, b: 3.0 },
        Variant::LtNode,
        Variant::AltNode,
    ] {
        let m = classifier(v, 4);
        let x = Tensor::matrix(4, 2, (0..8).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        for p in m.predict_batch(&x, 7, &mut rng).unwrap() {
            for s in p.samples.iter().chain(std::iter::once(&p.mean)) {
                assert!(s.iter().all(|&v| v >= 0.0));
                assert!((s.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }
}

#[test]
fn single_sample_prediction_reduces_to_forward() {
    let m = classifier(Variant::LtNode, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = m.predict_probability(&[0.1, 0.2], 1, &mut rng).unwrap();
    assert_eq!(p.mean, m.forward_at_times(&[0.1, 0.2], &p.times).unwrap()[0]);
    assert!(m.predict_probability(&[0.1, 0.2], 0, &mut rng).is_err());
}

#[test]
fn sorted_single_pass_matches_independent_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..10 {
        let variant = if i % 2 == 0 { Variant::LtNode } else { Variant::AltNode };
        let mut m = classifier(variant, i);
        m.set_solver(SolverConfig::with_tolerances(1e-4, 1e-4)).unwrap();
        let x = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let p = m.predict_probability(&x, 10, &mut rng).unwrap();
        let reference = reference_predict(&m, &x, &p.times).unwrap();
        for (a, b) in p.samples.iter().zip(&reference) {
            for (u, v) in a.iter().zip(b) {
                assert!((u - v).abs() <= 1e-3, "instance {i}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn batched_alt_prediction_matches_per_example() {
    let mut m = classifier(Variant::AltNode, 9);
    m.set_solver(SolverConfig::with_tolerances(1e-4, 1e-4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::matrix(6, 2, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let batch = m.predict_batch(&x, 10, &mut rng).unwrap();
    for (i, p) in batch.iter().enumerate() {
        let single = m.forward_at_times(x.row(i), &p.times).unwrap();
        for (a, b) in p.samples.iter().zip(&single) {
            assert!(a.iter().zip(b).all(|(u, v)| (u - v).abs() <= 1e-3));
        }
    }
}

#[test]
fn sample_order_does_not_change_the_mean() {
    let m = classifier(Variant::LtNode, 3);
    let x = Tensor::matrix(1, 2, vec![0.4, -0.1]).unwrap();
    let times = vec![0.2, 0.9, 1.4, 2.2, 3.1];
    let mut shuffled = vec![2.2, 0.2, 3.1, 1.4, 0.9];
    let a = m.predict_at(&x, vec![times]).unwrap();
    shuffled.sort_by(f64::total_cmp);
    let b = m.predict_at(&x, vec![shuffled]).unwrap();
    assert_eq!(a[0].mean, b[0].mean);
}

#[test]
fn inference_network_outputs_are_positive_and_deterministic() {
    let m = classifier(Variant::AltNode, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut rows = Vec::new();
    for i in 0..1000 {
        let scale = if i % 10 == 0 { 1e3 } else { 3.0 };
        rows.push(vec![rng.random_range(-scale..scale), rng.random_range(-scale..scale)]);
    }
    rows.push(vec![1e3, -1e3]);
    let x = Tensor::from_rows(&rows).unwrap();
    let q = m.infer_endtime_posterior_batch(&x).unwrap();
    assert!(q.iter().all(|g| g.alpha() > 0.0 && g.beta() > 0.0));
    assert_eq!(q, m.infer_endtime_posterior_batch(&x).unwrap());
    assert!(classifier(Variant::LtNode, 0).infer_endtime_posterior(&[0.0, 0.0]).is_err());
}

#[test]
fn inference_alpha_gradient_matches_finite_differences() {
    let m = classifier(Variant::AltNode, 12);
    let x = Tensor::matrix(1, 2, vec![0.7, -0.4]).unwrap();
    let mut tape = Tape::new();
    let bound = m.bind(&mut tape, true);
    let xv = tape.constant(x.clone());
    let (alpha, _) = bound.infer(&mut tape, xv).unwrap();
    let a = tape.sum(alpha).unwrap();
    tape.backward(a).unwrap();
    let grads = bound.grads(&tape);
    for (name, g) in grads.iter().filter(|(n, _)| n.starts_with("infer.")) {
        let base = m.params().get(name).unwrap().clone();
        let fd = finite_diff_grad(
            |w| {
                let mut probe = m.clone();
                *probe.params_mut().get_mut(name).unwrap() = Tensor::new(base.shape().to_vec(), w.to_vec()).unwrap();
                probe.infer_endtime_posterior_batch(&x).unwrap()[0].alpha()
            },
            base.data(),
            1e-6,
        );
        for (u, v) in g.data().iter().zip(&fd) {
            assert!((u - v).abs() / u.abs().max(v.abs()).max(1e-3) <= 1e-4, "{name}: {u} vs {v}");
        }
    }
}

#[test]
fn end_time_laws_follow_the_variant() {
    let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
    let laws = classifier(Variant::UniNode { a: 0.5, b: 2.0 }, 0).end_time_laws(&x).unwrap();
    assert_eq!(laws, vec![EndTimeLaw::Uniform(0.5, 2.0); 2]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..1000 {
        let t = laws[0].sample(&mut rng);
        assert!(t > 0.5 && t <= 2.0);
    }
    let laws = classifier(Variant::Node { end_time: 1.5 }, 0).end_time_laws(&x).unwrap();
    assert_eq!(laws[1].sample(&mut rng), 1.5);
}
