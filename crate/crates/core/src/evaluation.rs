//! Calibration, uncertainty and out-of-distribution metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Prediction, Targets};

/// Floor applied to a regression std before taking its log.
pub const STD_FLOOR: f64 = 1e-6;

/// Predictions paired with their true targets.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveSet {
    pub predictions: Vec<Prediction>,
    pub targets: Targets,
}

impl PredictiveSet {
    pub fn new(predictions: Vec<Prediction>, targets: Targets) -> Result<Self> {
        if predictions.len() != targets.len() {
            return Err(Error::contract(format!(
                "{} predictions but {} targets",
                predictions.len(),
                targets.len()
            )));
        }
        Ok(PredictiveSet { predictions, targets })
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.predictions.iter().map(|p| p.mean.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub num_bins: usize,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig { num_bins: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub error: f64,
    pub log_likelihood: f64,
    pub brier: f64,
    pub ece: f64,
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

/// Bin `k` covers `[k/B, (k+1)/B)`; the last bin also holds 1.
pub fn confidence_bin(c: f64, num_bins: usize) -> usize {
    let b = num_bins as f64;
    let mut k = ((c * b).floor().max(0.0) as usize).min(num_bins - 1);
    while k > 0 && c < k as f64 / b {
        k -= 1;
    }
    while k + 1 < num_bins && c >= (k + 1) as f64 / b {
        k += 1;
    }
    k
}

fn check_probs(probs: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if probs.is_empty() {
        return Err(Error::contract("metrics need at least one prediction"));
    }
    if probs.len() != labels.len() {
        return Err(Error::contract(format!("{} predictions but {} labels", probs.len(), labels.len())));
    }
    let c = probs[0].len();
    if c < 2 || probs.iter().any(|p| p.len() != c) || labels.iter().any(|&y| y >= c) {
        return Err(Error::contract("inconsistent class count or label out of range"));
    }
    Ok(c)
}

/// Error, mean log-likelihood, Brier score and expected calibration error of
/// class-probability predictions. Log-probabilities are floored at the
/// smallest positive normal so the mean stays finite.
pub fn classification_metrics_from(
    probs: &[Vec<f64>],
    labels: &[usize],
    bins: BinningConfig,
) -> Result<ClassificationMetrics> {
    let c = check_probs(probs, labels)?;
    if bins.num_bins == 0 {
        return Err(Error::contract("at least one bin is needed"));
    }
    let n = probs.len() as f64;
    let mut wrong = 0usize;
    let mut ll = 0.0;
    let mut brier = 0.0;
    let mut conf_sum = vec![0.0; bins.num_bins];
    let mut correct = vec![0usize; bins.num_bins];
    let mut count = vec![0usize; bins.num_bins];
    for (p, &y) in probs.iter().zip(labels) {
        let pred = argmax(p);
        let hit = pred == y;
        wrong += usize::from(!hit);
        ll += p[y].max(f64::MIN_POSITIVE).ln();
        let sq: f64 = p
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let d = v - if k == y { 1.0 } else { 0.0 };
                d * d
            })
            .sum();
        brier += sq / c as f64;
        let conf = p[pred];
        let k = confidence_bin(conf, bins.num_bins);
        conf_sum[k] += conf;
        correct[k] += usize::from(hit);
        count[k] += 1;
    }
    let ece = (0..bins.num_bins)
        .filter(|&k| count[k] > 0)
        .map(|k| {
            let m = count[k] as f64;
            (m / n) * (conf_sum[k] / m - correct[k] as f64 / m).abs()
        })
        .sum();
    Ok(ClassificationMetrics {
        error: wrong as f64 / n,
        log_likelihood: ll / n,
        brier: brier / n,
        ece,
    })
}

pub fn classification_metrics(pred: &PredictiveSet, bins: BinningConfig) -> Result<ClassificationMetrics> {
    let Targets::Classes(labels) = &pred.targets else {
        return Err(Error::contract("classification metrics need class targets"));
    };
    classification_metrics_from(&pred.means(), labels, bins)
}

/// `-Σ p ln p`, with `0 ln 0 = 0`.
pub fn entropy_categorical(p: &[f64]) -> Result<f64> {
    let total: f64 = p.iter().sum();
    if p.is_empty() || (total - 1.0).abs() > 1e-6 || p.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(Error::contract(format!("not a probability vector (sum {total})")));
    }
    Ok(-p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>())
}

/// Differential entropy of a Gaussian with the given std, floored at
/// [`STD_FLOOR`].
pub fn gaussian_entropy(std: f64) -> f64 {
    let s = std.max(STD_FLOOR);
    0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * s * s).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionUncertainty {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Average Gaussian entropy over inputs strictly inside the interval.
    pub average_entropy: f64,
    pub inputs_in_interval: usize,
    pub std_floor: f64,
}

/// Predictive mean and std per input, and the average differential entropy
/// over the inputs inside the open interval `(lo, hi)`.
pub fn regression_uncertainty(pred: &PredictiveSet, inputs: &[f64], interval: (f64, f64)) -> Result<RegressionUncertainty> {
    if inputs.len() != pred.len() {
        return Err(Error::contract(format!("{} inputs for {} predictions", inputs.len(), pred.len())));
    }
    let mut mean = Vec::with_capacity(pred.len());
    let mut std = Vec::with_capacity(pred.len());
    for p in &pred.predictions {
        let s = p
            .std
            .ok_or_else(|| Error::contract("regression uncertainty needs scalar predictions"))?;
        mean.push(p.mean[0]);
        std.push(s);
    }
    let (lo, hi) = interval;
    let inside: Vec<f64> = inputs
        .iter()
        .zip(&std)
        .filter(|(x, _)| **x > lo && **x < hi)
        .map(|(_, s)| gaussian_entropy(*s))
        .collect();
    if inside.is_empty() {
        return Err(Error::contract(format!("no inputs inside ({lo}, {hi})")));
    }
    Ok(RegressionUncertainty {
        mean,
        std,
        average_entropy: inside.iter().sum::<f64>() / inside.len() as f64,
        inputs_in_interval: inside.len(),
        std_floor: STD_FLOOR,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: f64,
    pub aupr_in: f64,
    pub aupr_out: f64,
}

/// Probability that an out score exceeds an in score, ties counting half,
/// via the midrank statistic.
pub fn auroc(in_scores: &[f64], out_scores: &[f64]) -> Result<f64> {
    check_scores(in_scores, out_scores)?;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, false))
        .chain(out_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (n_in, n_out) = (in_scores.len() as f64, out_scores.len() as f64);
    Ok((rank_sum - n_out * (n_out + 1.0) / 2.0) / (n_in * n_out))
}

/// Average precision with `positives` as the positive class: the sum over
/// distinct thresholds (descending) of recall increments times precision.
pub fn average_precision(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    check_scores(positives, negatives)?;
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&s| (s, true))
        .chain(negatives.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let p_total = positives.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        let recall = tp as f64 / p_total;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

fn check_scores(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("both score lists must be nonempty"));
    }
    if a.iter().chain(b).any(|s| !s.is_finite()) {
        return Err(Error::contract("scores must be finite"));
    }
    Ok(())
}

/// Scores are uncertainties: higher means more likely out of distribution.
pub fn auroc_aupr(in_scores: &[f64], out_scores: &[f64]) -> Result<OodMetrics> {
    let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
    Ok(OodMetrics {
        auroc: auroc(in_scores, out_scores)?,
        aupr_in: average_precision(&neg(in_scores), &neg(out_scores))?,
        aupr_out: average_precision(out_scores, in_scores)?,
    })
}

/// One mixed-set example for rejection and confidence curves.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedPrediction {
    pub probs: Vec<f64>,
    /// True class for in-distribution inputs; `None` for OOD inputs, which
    /// always count as errors.
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionPoint {
    pub rejected_fraction: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidencePoint {
    pub threshold: f64,
    /// `NaN` when no prediction reaches the threshold.
    pub accuracy: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub in_count: usize,
    pub out_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub rejection: Vec<RejectionPoint>,
    pub confidence: Vec<ConfidencePoint>,
    pub entropy_histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Accuracy after rejecting the `floor(f * N)` most uncertain predictions
/// (by entropy) for each fraction `f`, accuracy and count of predictions with
/// confidence at least each threshold, and a 20-bin entropy histogram on
/// `[0, ln C]`.
pub fn rejection_and_confidence_curves(
    preds: &[TaggedPrediction],
    rejection_fractions: &[f64],
    confidence_thresholds: &[f64],
) -> Result<Curves> {
    if preds.is_empty() {
        return Err(Error::contract("curves need at least one prediction"));
    }
    let c = preds[0].probs.len();
    if c < 2 || preds.iter().any(|p| p.probs.len() != c) {
        return Err(Error::contract("inconsistent class count"));
    }
    let n = preds.len();
    let entropies = preds
        .iter()
        .map(|p| entropy_categorical(&p.probs))
        .collect::<Result<Vec<_>>>()?;
    let hit: Vec<bool> = preds.iter().map(|p| p.label == Some(argmax(&p.probs))).collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| entropies[b].total_cmp(&entropies[a]));
    let mut rejection = Vec::with_capacity(rejection_fractions.len());
    for &f in rejection_fractions {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::contract(format!("rejected fraction {f} outside [0, 1)")));
        }
        let k = ((f * n as f64) + 1e-9).floor() as usize;
        let kept = &order[k.min(n - 1)..];
        let correct = kept.iter().filter(|&&i| hit[i]).count();
        rejection.push(RejectionPoint {
            rejected_fraction: f,
            accuracy: correct as f64 / kept.len() as f64,
        });
    }

    let confidence = confidence_thresholds
        .iter()
        .map(|&tau| {
            let sel: Vec<usize> = (0..n).filter(|&i| preds[i].probs[argmax(&preds[i].probs)] >= tau).collect();
            let correct = sel.iter().filter(|&&i| hit[i]).count();
            ConfidencePoint {
                threshold: tau,
                accuracy: if sel.is_empty() {
                    f64::NAN
                } else {
                    correct as f64 / sel.len() as f64
                },
                count: sel.len(),
            }
        })
        .collect();

    let top = (c as f64).ln();
    let width = top / HISTOGRAM_BINS as f64;
    let mut entropy_histogram: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|k| HistogramBin {
            lo: k as f64 * width,
            hi: if k + 1 == HISTOGRAM_BINS { top } else { (k + 1) as f64 * width },
            in_count: 0,
            out_count: 0,
        })
        .collect();
    for (p, e) in preds.iter().zip(&entropies) {
        let k = ((e / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
        if p.label.is_some() {
            entropy_histogram[k].in_count += 1;
        } else {
            entropy_histogram[k].out_count += 1;
        }
    }
    Ok(Curves {
        rejection,
        confidence,
        entropy_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let probs = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let m = classification_metrics_from(&probs, &[0, 1], BinningConfig::default()).unwrap();
        assert_eq!((m.error, m.log_likelihood, m.brier, m.ece), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_bin_ece() {
        let probs: Vec<Vec<f64>> = (0..5).map(|_| vec![0.8, 0.2]).collect();
        let labels = [0, 0, 0, 1, 1];
        let m = classification_metrics_from(&probs, &labels, BinningConfig { num_bins: 1 }).unwrap();
        assert!((m.ece - 0.2).abs() < 1e-12);
    }

    #[test]
    fn uniform_ten_classes() {
        let probs = vec![vec![0.1; 10]; 4];
        let m = classification_metrics_from(&probs, &[0, 3, 5, 9], BinningConfig::default()).unwrap();
        assert!((m.log_likelihood + std::f64::consts::LN_10).abs() < 1e-12);
        assert!((m.brier - (0.81 + 9.0 * 0.01) / 10.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(entropy_categorical(&[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert!((entropy_categorical(&[0.1; 10]).unwrap() - std::f64::consts::LN_10).abs() < 1e-12);
        assert!((entropy_categorical(&[0.5, 0.5, 0.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(entropy_categorical(&[0.5, 0.6]).is_err());
        assert!((gaussian_entropy(1.0) - 1.418939).abs() < 1e-6);
        assert!(gaussian_entropy(0.0).is_finite());
    }

    #[test]
    fn separation_and_ties() {
        let m = auroc_aupr(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert_eq!((m.auroc, m.aupr_in, m.aupr_out), (1.0, 1.0, 1.0));
        assert_eq!(auroc(&[0.5; 7], &[0.5; 3]).unwrap(), 0.5);
        assert!(auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn curves_with_perfect_ranking() {
        let mut preds = Vec::new();
        for _ in 0..7 {
            preds.push(TaggedPrediction {
                probs: vec![0.95, 0.05],
                label: Some(0),
            });
        }
        for _ in 0..3 {
            preds.push(TaggedPrediction {
                probs: vec![0.5, 0.5],
                label: None,
            });
        }
        let fr = [0.0, 0.1, 0.2, 0.3, 0.4];
        let curves = rejection_and_confidence_curves(&preds, &fr, &[0.0, 0.5, 0.9, 0.99]).unwrap();
        assert!((curves.rejection[0].accuracy - 0.7).abs() < 1e-12);
        assert!(curves.rejection[2].accuracy < 1.0);
        assert_eq!(curves.rejection[3].accuracy, 1.0);
        assert_eq!(curves.rejection[4].accuracy, 1.0);
        let counts: Vec<usize> = curves.confidence.iter().map(|p| p.count).collect();
        assert_eq!(counts, vec![10, 10, 7, 0]);
        let total: usize = curves.entropy_histogram.iter().map(|b| b.in_count + b.out_count).sum();
        assert_eq!(total, 10);
    }
}
