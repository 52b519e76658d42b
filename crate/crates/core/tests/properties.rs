use ltnode::checkpoint;
use ltnode::evaluation::{classification_metrics_from, entropy_categorical, BinningConfig};
use ltnode::gamma::gamma_kl;
use ltnode::models::Variant;
use ltnode::ode::{self, SolverConfig};
use ltnode::{Error, GammaParams, LatentTimeModel, ModelSpec};
use proptest::prelude::*;

fn probs(c: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, c).prop_map(|v| {
        let s: f64 = v.iter().sum::<f64>() + 1e-9;
        v.iter().map(|x| (x + 1e-9 / v.len() as f64) / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kl_is_nonnegative(a in 0.1f64..20.0, b in 0.1f64..20.0, c in 0.1f64..20.0, d in 0.1f64..20.0) {
        let q = GammaParams::new(a, b).unwrap();
        let p = GammaParams::new(c, d).unwrap();
        prop_assert!(gamma_kl(q, p) >= 0.0);
    }

    #[test]
    fn entropy_is_bounded(p in probs(6)) {
        let e = entropy_categorical(&p).unwrap();
        prop_assert!(e >= 0.0 && e <= 6f64.ln() + 1e-12);
    }

    #[test]
    fn calibration_metrics_stay_in_range(
        rows in prop::collection::vec((probs(4), 0usize..4), 1..60),
    ) {
        let (p, y): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
        let m = classification_metrics_from(&p, &y, BinningConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.ece));
        prop_assert!((0.0..=2.0).contains(&m.brier));
        prop_assert!((0.0..=1.0).contains(&m.error));
    }

    #[test]
    fn dense_output_is_continuous(rate in 0.1f64..3.0, t in 0.0f64..0.999) {
        let f = |h: &[f64], _t: f64| Ok(vec![-rate * h[0], h[0] * 0.5]);
        let traj = ode::solve(f, &[1.0, 0.0], 0.0, 1.0, &SolverConfig::with_tolerances(1e-6, 1e-6)).unwrap();
        let a = traj.dense_eval(t).unwrap();
        let b = traj.dense_eval(t + 1e-9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn checkpoints_round_trip(seed in 0u64..1000, alt in any::<bool>()) {
        let v = if alt { Variant::AltNode } else { Variant::LtNode };
        let m = LatentTimeModel::build(ModelSpec::classifier(2, 3, v), seed).unwrap();
        let bytes = checkpoint::to_bytes(&m, seed as usize, "d").unwrap();
        let (back, _) = checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.params(), m.params());
    }
}

#[test]
fn checkpoint_files_and_spec_checks() {
    let dir = tempfile::tempdir().unwrap();
    let node = LatentTimeModel::build(ModelSpec::classifier(2, 2, Variant::Node { end_time: 1.0 }), 0).unwrap();
    let lt = LatentTimeModel::build(ModelSpec::classifier(2, 2, Variant::LtNode), 0).unwrap();
    let (pn, pl) = (dir.path().join("node.ckpt"), dir.path().join("lt.ckpt"));
    checkpoint::save(&node, 0, "", &pn).unwrap();
    checkpoint::save(&lt, 0, "", &pl).unwrap();
    let (a, _) = checkpoint::load(&pn).unwrap();
    let (b, _) = checkpoint::load(&pl).unwrap();
    assert_eq!(b.num_scalars(), a.num_scalars() + 2);

    let err = checkpoint::load_expecting(&pl, node.spec()).unwrap_err();
    assert!(matches!(err, Error::SpecMismatch(ref s) if s.contains("variant")), "{err}");

    let bytes = std::fs::read(&pl).unwrap();
    std::fs::write(&pl, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(checkpoint::load(&pl).unwrap_err(), Error::Integrity(_)));
}
