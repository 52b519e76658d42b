use ltnode::attacks::{apply_sign_step, fgsm_perturb, fgsm_sweep, input_gradient, AttackConfig};
use ltnode::datasets::{data_radius, gen_foong1d, gen_ood_inputs, gen_two_moons};
use ltnode::models::{Activation, Target, Targets, Variant};
use ltnode::oracles::{convex_hull, inside_hull};
use ltnode::{LatentTimeModel, ModelSpec, SolverConfig, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn generators_are_deterministic() {
    assert_eq!(gen_foong1d(1500, 0.02, 4).unwrap(), gen_foong1d(1500, 0.02, 4).unwrap());
    assert_eq!(gen_two_moons(301, 0.1, 4).unwrap(), gen_two_moons(301, 0.1, 4).unwrap());
    let moons = gen_two_moons(300, 0.1, 4).unwrap();
    let a = gen_ood_inputs(&moons, &[3.0, 3.0], 0.2, 50, 1).unwrap();
    assert_eq!(a, gen_ood_inputs(&moons, &[3.0, 3.0], 0.2, 50, 1).unwrap());
}

#[test]
fn noiseless_generators_are_exact() {
    let ds = gen_foong1d(200, 0.0, 1).unwrap();
    let Targets::Values(ys) = ds.targets() else { panic!() };
    for (x, y) in ds.inputs().data().iter().zip(ys) {
        assert_eq!(*y, ltnode::datasets::foong_target(*x));
    }
    let moons = gen_two_moons(101, 0.0, 1).unwrap();
    let Targets::Classes(labels) = moons.targets() else { panic!() };
    let ones = labels.iter().filter(|&&c| c == 1).count();
    assert!((labels.len() - ones).abs_diff(ones) <= 1);
    for (i, &c) in labels.iter().enumerate() {
        let p = moons.inputs().row(i);
        let (cx, cy) = if c == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
        let r = ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt();
        assert!((r - 1.0).abs() < 1e-12);
    }
}

#[test]
fn far_shifted_cloud_leaves_the_hull() {
    let moons = gen_two_moons(500, 0.1, 2).unwrap();
    let points: Vec<(f64, f64)> = (0..moons.len()).map(|i| (moons.inputs().row(i)[0], moons.inputs().row(i)[1])).collect();
    let hull = convex_hull(&points);
    let r = data_radius(&moons);
    let shift = [5.0 * r / 2f64.sqrt(), 5.0 * r / 2f64.sqrt()];
    let far = gen_ood_inputs(&moons, &shift, 0.5, 500, 3).unwrap();
    assert!((0..500).all(|i| !inside_hull(&hull, (far.row(i)[0], far.row(i)[1]))));
    // Negative control: an unshifted cloud overlaps the data.
    let near = gen_ood_inputs(&moons, &[0.0, 0.0], 0.5, 500, 3).unwrap();
    assert!((0..500).any(|i| inside_hull(&hull, (near.row(i)[0], near.row(i)[1]))));
}

/// One relu layer into a linear head; at `t = 0` no ODE step is taken.
fn shallow() -> LatentTimeModel {
    let spec = ModelSpec {
        input_dim: 3,
        hidden_dim: 4,
        input_block: vec![4],
        node_block: vec![4],
        head: vec![3],
        inference_block: vec![4],
        activation: Activation::Relu,
        task: Task::Classification { classes: 3 },
        variant: Variant::LtNode,
        solver: SolverConfig::default(),
    };
    LatentTimeModel::build(spec, 8).unwrap()
}

#[test]
fn input_gradient_sign_matches_closed_form() {
    let m = shallow();
    let p = m.params();
    let (w1, b1) = (p.get("input.0.weight").unwrap(), p.get("input.0.bias").unwrap());
    let w2 = p.get("head.0.weight").unwrap();
    let x = [0.4, -0.3, 0.9];
    let y = 1;
    let h: Vec<f64> = (0..4)
        .map(|j| (b1.data()[j] + (0..3).map(|i| x[i] * w1.data()[i * 4 + j]).sum::<f64>()).max(0.0))
        .collect();
    let probs = &m.forward_at_times(&x, &[0.0]).unwrap()[0];
    // d(-ln p_y)/dlogits = p - e_y; back through W2, the relu mask and W1.
    let dz: Vec<f64> = (0..3).map(|c| probs[c] - if c == y { 1.0 } else { 0.0 }).collect();
    let dh: Vec<f64> = (0..4)
        .map(|j| if h[j] > 0.0 { (0..3).map(|c| w2.data()[j * 3 + c] * dz[c]).sum() } else { 0.0 })
        .collect();
    let dx: Vec<f64> = (0..3).map(|i| (0..4).map(|j| w1.data()[i * 4 + j] * dh[j]).sum()).collect();

    let g = input_gradient(&m, &x, Target::Class(y), &[0.0]).unwrap();
    for (a, b) in g.iter().zip(&dx) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        assert_eq!(a.signum(), b.signum());
    }
    let adv = fgsm_perturb(&m, &x, Target::Class(y), &[0.0], 0.1).unwrap();
    let linf = adv.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!((linf - 0.1).abs() < 1e-15);
    assert_eq!(fgsm_perturb(&m, &x, Target::Class(y), &[0.0], 0.0).unwrap(), x.to_vec());
}

#[test]
fn perturbation_entries_are_in_the_sign_set() {
    let x = [0.1, 0.2, 0.3, 0.4];
    let out = apply_sign_step(&x, &[3.0, 0.0, -1e-9, 2.0], 0.05, None);
    for (o, xi) in out.iter().zip(&x) {
        let d = o - xi;
        assert!([-0.05, 0.0, 0.05].iter().any(|e| (d - e).abs() < 1e-15));
    }
    assert_eq!(apply_sign_step(&x, &[0.0; 4], 0.3, None), x.to_vec());
}

#[test]
fn sweep_has_one_row_per_epsilon_and_exact_clean_row() {
    let data = gen_two_moons(40, 0.1, 0).unwrap();
    let m = LatentTimeModel::build(ModelSpec::classifier(2, 2, Variant::LtNode), 1).unwrap();
    let Targets::Classes(labels) = data.targets() else { panic!() };
    let cfg = AttackConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let report = fgsm_sweep(&m, data.inputs(), labels, &cfg, 5, &mut rng).unwrap();
    assert_eq!(report.rows.len(), cfg.epsilons.len());
    assert_eq!(report.rows[0].error, report.clean_error);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(report, fgsm_sweep(&m, data.inputs(), labels, &cfg, 5, &mut rng).unwrap());
}
