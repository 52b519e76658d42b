use ltnode::evaluation::{
    auroc_aupr, classification_metrics_from, gaussian_entropy, rejection_and_confidence_curves, BinningConfig,
    TaggedPrediction,
};
use ltnode::oracles::{auroc_pairs, average_precision_scan, brier_definition, ece_definition};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability vectors on a coarse lattice so ties and bin edges occur.
fn random_set(rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<usize>) {
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

fn random_scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| (rng.random_range(0.0..1.0f64) * 20.0).round() / 20.0).collect()
}

#[test]
fn metrics_match_definitional_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for i in 0..100 {
        let (probs, labels) = random_set(&mut rng);
        let m = classification_metrics_from(&probs, &labels, BinningConfig::default()).unwrap();
        assert!((m.ece - ece_definition(&probs, &labels, 10)).abs() <= 1e-12, "set {i}");
        assert!((m.brier - brier_definition(&probs, &labels)).abs() <= 1e-12, "set {i}");
        assert!((0.0..=1.0).contains(&m.ece) && (0.0..=2.0).contains(&m.brier));

        let (na, nb) = (rng.random_range(1..100), rng.random_range(1..100));
        let a = random_scores(&mut rng, na);
        let b = random_scores(&mut rng, nb);
        let ood = auroc_aupr(&a, &b).unwrap();
        assert!((ood.auroc - auroc_pairs(&a, &b)).abs() <= 1e-12);
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        assert!((ood.aupr_out - average_precision_scan(&b, &a)).abs() <= 1e-12);
        assert!((ood.aupr_in - average_precision_scan(&neg(&a), &neg(&b))).abs() <= 1e-12);
    }
}

#[test]
fn metrics_are_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (probs, labels) = random_set(&mut rng);
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.shuffle(&mut rng);
    let p2: Vec<Vec<f64>> = idx.iter().map(|&i| probs[i].clone()).collect();
    let l2: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let a = classification_metrics_from(&probs, &labels, BinningConfig::default()).unwrap();
    let b = classification_metrics_from(&p2, &l2, BinningConfig::default()).unwrap();
    assert!((a.ece - b.ece).abs() < 1e-12 && (a.brier - b.brier).abs() < 1e-12 && a.error == b.error);
}

#[test]
fn ood_examples() {
    let m = auroc_aupr(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
    assert_eq!((m.auroc, m.aupr_in, m.aupr_out), (1.0, 1.0, 1.0));
    assert_eq!(auroc_aupr(&[0.3; 5], &[0.3; 7]).unwrap().auroc, 0.5);
}

#[test]
fn gaussian_entropy_examples() {
    assert!((gaussian_entropy(1.0) - 1.418939).abs() < 1e-6);
    assert!(gaussian_entropy(0.0).is_finite());
}

#[test]
fn curves_behave_on_a_perfect_ranking() {
    let mut preds = Vec::new();
    for i in 0..30 {
        let mut p = vec![0.02; 5];
        p[i % 5] = 0.92;
        preds.push(TaggedPrediction {
            probs: p,
            label: Some(i % 5),
        });
    }
    for _ in 0..10 {
        preds.push(TaggedPrediction {
            probs: vec![0.2; 5],
            label: None,
        });
    }
    let fractions: Vec<f64> = (0..20).map(|k| k as f64 * 0.05).collect();
    let thresholds: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let c = rejection_and_confidence_curves(&preds, &fractions, &thresholds).unwrap();
    assert_eq!(c.rejection[0].accuracy, 30.0 / 40.0);
    for r in &c.rejection {
        if r.rejected_fraction >= 0.25 {
            assert_eq!(r.accuracy, 1.0);
        } else {
            assert!(r.accuracy < 1.0);
        }
    }
    assert_eq!(c.confidence[0].count, 40);
    assert!(c.confidence.windows(2).all(|w| w[1].count <= w[0].count));
    assert_eq!(c.entropy_histogram.len(), 20);
    let total: usize = c.entropy_histogram.iter().map(|b| b.in_count + b.out_count).sum();
    assert_eq!(total, 40);
    assert_eq!(c.entropy_histogram[19].out_count, 10);
}
