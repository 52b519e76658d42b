//! Subcommand bodies: train, eval, attack, posterior-report.

use std::fs;
use std::path::{Path, PathBuf};

use ltnode::attacks::fgsm_sweep;
use ltnode::checkpoint;
use ltnode::datasets::{data_radius, gen_ood_inputs, Split};
use ltnode::evaluation::{
    auroc_aupr, classification_metrics, entropy_categorical, regression_uncertainty, rejection_and_confidence_curves,
    BinningConfig, PredictiveSet, TaggedPrediction,
};
use ltnode::rng::{self, Purpose};
use ltnode::training::{train as fit, TraceRow};
use ltnode::{Dataset, GammaParams, LatentTimeModel, Prediction, Targets, Task, Tensor, Variant};
use rand::Rng;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::CliError;

pub const CHECKPOINT: &str = "model.ckpt";
pub const LOSS_TRACE: &str = "loss_trace.csv";
pub const TRAIN_SUMMARY: &str = "train.json";
pub const METRICS: &str = "metrics.json";
pub const PREDICTIONS: &str = "predictions.csv";
pub const REJECTION: &str = "rejection.csv";
pub const CONFIDENCE: &str = "confidence.csv";
pub const ENTROPY_HISTOGRAM: &str = "entropy_histogram.csv";
pub const FGSM: &str = "fgsm.csv";
pub const ATTACK_SUMMARY: &str = "attack.json";
pub const POSTERIOR: &str = "posterior.csv";
pub const POSTERIOR_SUMMARY: &str = "posterior.json";

/// Environment variable holding the evaluation worker count.
pub const THREADS_ENV: &str = "LTNODE_THREADS";

/// Offset separating the OOD cloud's data stream from the training data's.
const OOD_SEED_OFFSET: u64 = 1 << 32;

/// Posterior densities are tabulated at this many points on `[0, 6]`.
pub const POSTERIOR_POINTS: usize = 601;
pub const POSTERIOR_MAX_T: f64 = 6.0;

/// Rejection fractions `0, 0.05, ..., 0.95` and confidence thresholds
/// `0, 0.1, ..., 1`.
fn curve_grids() -> (Vec<f64>, Vec<f64>) {
    let fractions = (0..20).map(|k| k as f64 / 20.0).collect();
    let thresholds = (0..=10).map(|k| k as f64 / 10.0).collect();
    (fractions, thresholds)
}

/// Resolved config, output directory and worker count for one invocation.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    pub threads: usize,
}

impl RunContext {
    /// `out` and `seed` replace the config values when given.
    pub fn new(mut config: ExperimentConfig, out: Option<PathBuf>, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out.unwrap_or_else(|| config.output_dir.clone());
        config.output_dir = out.clone();
        let threads = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or(1);
        RunContext { config, out, threads }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn prepare(&self, command: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Io(format!("{}: {e}", self.out.display())))?;
        let manifest = json!({
            "command": command,
            "config": self.config,
            "config_sha256": self.config.digest(),
            "seed": self.config.seed,
            "threads": self.threads,
            "version": env!("CARGO_PKG_VERSION"),
        });
        write_json(&self.path(&format!("manifest_{}.json", command.replace('-', "_"))), &manifest)
    }

    fn load_model(&self, data: &Dataset) -> Result<LatentTimeModel, CliError> {
        let spec = self.config.model_spec(data)?;
        let (model, _) = checkpoint::load_expecting(&self.path(CHECKPOINT), &spec)?;
        Ok(model)
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let io = |e: csv::Error| CliError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for r in rows {
        w.write_record(&r).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fit the model on the training split; writes the loss trace, checkpoint
/// and a summary.
pub fn train(ctx: &RunContext) -> Result<Value, CliError> {
    ctx.prepare("train")?;
    let cfg = &ctx.config;
    let data = cfg.dataset()?;
    let spec = cfg.model_spec(&data)?;
    let train_split = data.split(Split::Train);
    let mut model = LatentTimeModel::build(spec, cfg.seed)?;
    let tc = cfg.train_config();
    let report = fit(&mut model, &train_split, &tc, None).map_err(|e| CliError::from(e).in_module("training"))?;

    let alt = matches!(cfg.variant, Variant::AltNode);
    let names = if alt {
        ["iteration", "negative_elbo", "mean_alpha_q", "mean_beta_q"]
    } else {
        ["iteration", "negative_elbo", "alpha_q", "beta_q"]
    };
    let row = |r: &TraceRow| {
        vec![
            r.iteration.to_string(),
            r.negative_elbo.to_string(),
            r.alpha_q.to_string(),
            r.beta_q.to_string(),
        ]
    };
    write_csv(&ctx.path(LOSS_TRACE), &header(&names), report.trace.iter().map(row))?;

    let digest = format!(
        "{:x}",
        Sha256::digest(format!("chacha8/seed={}/iterations={}", cfg.seed, tc.iterations))
    );
    checkpoint::save(&model, tc.iterations, &digest, &ctx.path(CHECKPOINT))?;

    let last = report.trace.last();
    let posterior = match cfg.variant {
        Variant::LtNode => gamma_summary(model.variational()?),
        _ => Value::Null,
    };
    let summary = json!({
        "variant": cfg.variant.name(),
        "iterations": tc.iterations,
        "n_train": train_split.len(),
        "num_scalars": model.num_scalars(),
        "final_negative_elbo": last.map(|r| r.negative_elbo),
        "posterior": posterior,
        "prior": gamma_summary(cfg.elbo.prior),
    });
    write_json(&ctx.path(TRAIN_SUMMARY), &summary)?;
    Ok(summary)
}

fn gamma_summary(p: GammaParams) -> Value {
    json!({"alpha": p.alpha(), "beta": p.beta(), "mean": p.mean(), "mode": p.mode()})
}

/// Draw and sort `s` end times per row serially, then integrate fixed-size
/// row chunks on `threads` workers. Chunking never depends on the worker
/// count, so results are identical for any thread setting.
pub fn predict_chunked<R: Rng + ?Sized>(
    model: &LatentTimeModel,
    x: &Tensor,
    s: usize,
    chunk_rows: usize,
    threads: usize,
    rng: &mut R,
) -> Result<Vec<Prediction>, CliError> {
    if s == 0 || chunk_rows == 0 {
        return Err(CliError::Other("sample count and chunk size must be positive".into()));
    }
    let laws = model.end_time_laws(x)?;
    let row_times: Vec<Vec<f64>> = laws
        .iter()
        .map(|law| {
            let mut t: Vec<f64> = (0..s).map(|_| law.sample(rng)).collect();
            t.sort_by(f64::total_cmp);
            t
        })
        .collect();
    let n = x.shape()[0];
    let d = x.shape()[1];
    let starts: Vec<usize> = (0..n).step_by(chunk_rows).collect();
    let run = |start: usize| -> Result<Vec<Prediction>, CliError> {
        let end = (start + chunk_rows).min(n);
        let rows = Tensor::matrix(end - start, d, x.data()[start * d..end * d].to_vec())?;
        Ok(model.predict_at(&rows, row_times[start..end].to_vec())?)
    };
    let threads = threads.max(1).min(starts.len().max(1));
    let mut results: Vec<Option<Result<Vec<Prediction>, CliError>>> = (0..starts.len()).map(|_| None).collect();
    if threads == 1 {
        for (k, &st) in starts.iter().enumerate() {
            results[k] = Some(run(st));
        }
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let starts = &starts;
                    let run = &run;
                    scope.spawn(move || {
                        (w..starts.len())
                            .step_by(threads)
                            .map(|k| (k, run(starts[k])))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (k, r) in h.join().expect("evaluation worker panicked") {
                    results[k] = Some(r);
                }
            }
        });
    }
    let mut out = Vec::with_capacity(n);
    for r in results {
        out.extend(r.expect("every chunk ran")?);
    }
    Ok(out)
}

/// Metrics JSON, curve CSVs and the per-example prediction dump.
pub fn evaluate(ctx: &RunContext) -> Result<Value, CliError> {
    ctx.prepare("eval")?;
    let data = ctx.config.dataset()?;
    let model = ctx.load_model(&data)?;
    let metrics = match model.spec().task {
        Task::Classification { .. } => eval_classification(ctx, &model, &data),
        Task::Regression => eval_regression(ctx, &model, &data),
    }
    .map_err(|e| e.in_module("evaluation"))?;
    write_json(&ctx.path(METRICS), &metrics)?;
    Ok(metrics)
}

fn held_out(data: &Dataset) -> Dataset {
    let test = data.split(Split::Test);
    if test.is_empty() {
        data.clone()
    } else {
        test
    }
}

fn eval_classification(ctx: &RunContext, model: &LatentTimeModel, data: &Dataset) -> Result<Value, CliError> {
    let cfg = &ctx.config;
    let ev = &cfg.evaluation;
    let test = held_out(data);
    let mut rng = rng::stream(cfg.seed, Purpose::Evaluation);
    let preds = predict_chunked(model, test.inputs(), cfg.samples, ev.chunk_rows, ctx.threads, &mut rng)?;
    let set = PredictiveSet::new(preds, test.targets().clone())?;
    let m = classification_metrics(&set, BinningConfig::default())?;

    let train_split = data.split(Split::Train);
    let reference = if train_split.is_empty() { data } else { &train_split };
    let r = data_radius(reference);
    let d = data.dim();
    let shift = vec![ev.ood_shift_radii * r / (d as f64).sqrt(); d];
    let ood_x = gen_ood_inputs(
        reference,
        &shift,
        ev.ood_scale * r,
        ev.ood_points,
        cfg.seed.wrapping_add(OOD_SEED_OFFSET),
    )?;
    let ood_preds = predict_chunked(model, &ood_x, cfg.samples, ev.chunk_rows, ctx.threads, &mut rng)?;

    let id_entropy = set
        .predictions
        .iter()
        .map(|p| entropy_categorical(&p.mean))
        .collect::<ltnode::Result<Vec<_>>>()?;
    let ood_entropy = ood_preds
        .iter()
        .map(|p| entropy_categorical(&p.mean))
        .collect::<ltnode::Result<Vec<_>>>()?;
    let ood = auroc_aupr(&id_entropy, &ood_entropy)?;

    let Targets::Classes(labels) = &set.targets else {
        return Err(CliError::Other("classification data without class labels".into()));
    };
    let mut tagged: Vec<TaggedPrediction> = set
        .predictions
        .iter()
        .zip(labels)
        .map(|(p, &y)| TaggedPrediction {
            probs: p.mean.clone(),
            label: Some(y),
        })
        .collect();
    tagged.extend(ood_preds.iter().map(|p| TaggedPrediction {
        probs: p.mean.clone(),
        label: None,
    }));
    let (fractions, thresholds) = curve_grids();
    let curves = rejection_and_confidence_curves(&tagged, &fractions, &thresholds)?;
    write_csv(
        &ctx.path(REJECTION),
        &header(&["rejected_fraction", "accuracy"]),
        curves
            .rejection
            .iter()
            .map(|p| vec![p.rejected_fraction.to_string(), p.accuracy.to_string()]),
    )?;
    write_csv(
        &ctx.path(CONFIDENCE),
        &header(&["threshold", "accuracy", "count"]),
        curves
            .confidence
            .iter()
            .map(|p| vec![p.threshold.to_string(), p.accuracy.to_string(), p.count.to_string()]),
    )?;
    write_csv(
        &ctx.path(ENTROPY_HISTOGRAM),
        &header(&["lo", "hi", "in_count", "out_count"]),
        curves.entropy_histogram.iter().map(|b| {
            vec![
                b.lo.to_string(),
                b.hi.to_string(),
                b.in_count.to_string(),
                b.out_count.to_string(),
            ]
        }),
    )?;

    let classes = set.predictions[0].mean.len();
    let mut names = vec!["split".to_string(), "label".to_string(), "entropy".to_string()];
    names.extend((0..d).map(|j| format!("x_{j}")));
    names.extend((0..classes).map(|c| format!("p_{c}")));
    let dump = |split: &str, label: String, x: &[f64], p: &Prediction, e: f64| {
        let mut row = vec![split.to_string(), label, e.to_string()];
        row.extend(x.iter().map(|v| v.to_string()));
        row.extend(p.mean.iter().map(|v| v.to_string()));
        row
    };
    let id_rows = (0..set.len()).map(|i| {
        dump(
            "test",
            labels[i].to_string(),
            test.inputs().row(i),
            &set.predictions[i],
            id_entropy[i],
        )
    });
    let ood_rows =
        (0..ood_preds.len()).map(|i| dump("ood", String::new(), ood_x.row(i), &ood_preds[i], ood_entropy[i]));
    write_csv(&ctx.path(PREDICTIONS), &names, id_rows.chain(ood_rows))?;

    Ok(json!({
        "task": "classification",
        "variant": cfg.variant.name(),
        "samples": cfg.samples,
        "n_test": set.len(),
        "error": m.error,
        "log_likelihood": m.log_likelihood,
        "brier": m.brier,
        "ece": m.ece,
        "ood": {
            "n_ood": ood_preds.len(),
            "auroc": ood.auroc,
            "aupr_in": ood.aupr_in,
            "aupr_out": ood.aupr_out,
            "mean_entropy_id": mean(&id_entropy),
            "mean_entropy_ood": mean(&ood_entropy),
        },
        "curves": {
            "rejection": REJECTION,
            "confidence": CONFIDENCE,
            "entropy_histogram": ENTROPY_HISTOGRAM,
            "predictions": PREDICTIONS,
        },
    }))
}

fn eval_regression(ctx: &RunContext, model: &LatentTimeModel, data: &Dataset) -> Result<Value, CliError> {
    let cfg = &ctx.config;
    let ev = &cfg.evaluation;
    if data.dim() != 1 {
        return Err(CliError::Other("regression evaluation supports 1-D inputs".into()));
    }
    let (lo, hi) = ev.grid;
    if !(lo < hi) || ev.grid_points < 2 {
        return Err(CliError::Other(format!("evaluation grid ({lo}, {hi}) is empty")));
    }
    let spacing = (hi - lo) / (ev.grid_points - 1) as f64;
    let mut xs: Vec<f64> = (0..ev.grid_points).map(|i| lo + spacing * i as f64).collect();
    let n_grid = xs.len();
    xs.extend(&ev.away);

    let mut rng = rng::stream(cfg.seed, Purpose::Evaluation);
    let x = Tensor::matrix(xs.len(), 1, xs.clone())?;
    let preds = predict_chunked(model, &x, cfg.samples, ev.chunk_rows, ctx.threads, &mut rng)?;
    let grid_set = PredictiveSet::new(preds[..n_grid].to_vec(), Targets::Values(vec![0.0; n_grid]))?;
    let unc = regression_uncertainty(&grid_set, &xs[..n_grid], ev.gap)?;

    let train_split = data.split(Split::Train);
    let mut train_x: Vec<f64> = train_split.inputs().data().to_vec();
    train_x.sort_by(f64::total_cmp);
    let near_data = |v: f64| {
        let k = train_x.partition_point(|&t| t < v);
        let mut d = f64::INFINITY;
        if k < train_x.len() {
            d = d.min(train_x[k] - v);
        }
        if k > 0 {
            d = d.min(v - train_x[k - 1]);
        }
        d <= spacing
    };
    let (gap_lo, gap_hi) = ev.gap;
    let mut region = Vec::with_capacity(xs.len());
    for (i, &v) in xs.iter().enumerate() {
        region.push(if i >= n_grid {
            "away"
        } else if v > gap_lo && v < gap_hi {
            "gap"
        } else if near_data(v) {
            "cluster"
        } else {
            "other"
        });
    }
    let std_of = |which: &str| {
        let v: Vec<f64> = preds
            .iter()
            .zip(&region)
            .filter(|(_, r)| **r == which)
            .map(|(p, _)| p.std.unwrap_or(f64::NAN))
            .collect();
        if v.is_empty() {
            f64::NAN
        } else {
            mean(&v)
        }
    };
    let (std_gap, std_cluster, std_away) = (std_of("gap"), std_of("cluster"), std_of("away"));

    let train_preds = predict_chunked(
        model,
        train_split.inputs(),
        cfg.samples,
        ev.chunk_rows,
        ctx.threads,
        &mut rng,
    )?;
    let Targets::Values(ys) = train_split.targets() else {
        return Err(CliError::Other("regression data without real targets".into()));
    };
    let mse = train_preds
        .iter()
        .zip(ys)
        .map(|(p, y)| (p.mean[0] - y) * (p.mean[0] - y))
        .sum::<f64>()
        / ys.len() as f64;

    write_csv(
        &ctx.path(PREDICTIONS),
        &header(&["x", "mean", "std", "region"]),
        xs.iter().zip(&preds).zip(&region).map(|((x, p), r)| {
            vec![
                x.to_string(),
                p.mean[0].to_string(),
                p.std.unwrap_or(f64::NAN).to_string(),
                r.to_string(),
            ]
        }),
    )?;

    Ok(json!({
        "task": "regression",
        "variant": cfg.variant.name(),
        "samples": cfg.samples,
        "average_entropy_gap": unc.average_entropy,
        "std_gap": std_gap,
        "std_cluster": std_cluster,
        "std_away": std_away,
        "gap_ratio": std_gap / std_cluster,
        "away_ratio": std_away / std_cluster,
        "train_mse": mse,
        "curves": {"predictions": PREDICTIONS},
    }))
}

/// FGSM sweep over the configured epsilons on the held-out split.
pub fn attack(ctx: &RunContext) -> Result<Value, CliError> {
    ctx.prepare("attack")?;
    let cfg = &ctx.config;
    let data = cfg.dataset()?;
    let model = ctx.load_model(&data)?;
    let test = held_out(&data);
    let Targets::Classes(labels) = test.targets() else {
        return Err(CliError::Other("the attack needs a classification dataset".into()));
    };
    let mut rng = rng::stream(cfg.seed, Purpose::Attack);
    let report = fgsm_sweep(&model, test.inputs(), labels, &cfg.attack, cfg.samples, &mut rng)
        .map_err(|e| CliError::from(e).in_module("attacks"))?;
    write_csv(
        &ctx.path(FGSM),
        &header(&["epsilon", "error", "n_examples"]),
        report
            .rows
            .iter()
            .map(|r| vec![r.epsilon.to_string(), r.error.to_string(), r.n_examples.to_string()]),
    )?;
    let summary = json!({
        "variant": cfg.variant.name(),
        "clean_error": report.clean_error,
        "rows": report.rows,
        "csv": FGSM,
    });
    write_json(&ctx.path(ATTACK_SUMMARY), &summary)?;
    Ok(summary)
}

/// Gamma density with the limits at `t = 0` filled in.
fn density(p: GammaParams, t: f64) -> Result<f64, CliError> {
    if t > 0.0 {
        return Ok(p.pdf(t)?);
    }
    Ok(if p.alpha() < 1.0 {
        f64::INFINITY
    } else if p.alpha() == 1.0 {
        p.beta()
    } else {
        0.0
    })
}

/// Prior and learned posterior densities over the end time. For `alt_node`
/// the posterior column averages the per-input densities over the training
/// inputs.
pub fn posterior_report(ctx: &RunContext) -> Result<Value, CliError> {
    ctx.prepare("posterior-report")?;
    let cfg = &ctx.config;
    let data = cfg.dataset()?;
    let model = ctx.load_model(&data)?;
    let prior = cfg.elbo.prior;
    let posteriors = match cfg.variant {
        Variant::LtNode => vec![model.variational()?],
        Variant::AltNode => model.infer_endtime_posterior_batch(data.split(Split::Train).inputs())?,
        v => {
            return Err(CliError::Other(format!(
                "{} has no end-time posterior to report",
                v.name()
            )))
        }
    };
    let ts: Vec<f64> = (0..POSTERIOR_POINTS)
        .map(|i| POSTERIOR_MAX_T * i as f64 / (POSTERIOR_POINTS - 1) as f64)
        .collect();
    let mut rows = Vec::with_capacity(ts.len());
    let mut post_pdf = Vec::with_capacity(ts.len());
    for &t in &ts {
        let mut acc = 0.0;
        for q in &posteriors {
            acc += density(*q, t)?;
        }
        let q = acc / posteriors.len() as f64;
        post_pdf.push(q);
        rows.push(vec![t.to_string(), density(prior, t)?.to_string(), q.to_string()]);
    }
    write_csv(&ctx.path(POSTERIOR), &header(&["t", "prior_pdf", "posterior_pdf"]), rows)?;

    let posterior = if posteriors.len() == 1 {
        gamma_summary(posteriors[0])
    } else {
        let k = posteriors.len() as f64;
        let peak = (0..ts.len())
            .filter(|&i| post_pdf[i].is_finite())
            .max_by(|&a, &b| post_pdf[a].total_cmp(&post_pdf[b]))
            .map(|i| ts[i]);
        json!({
            "mean_alpha": posteriors.iter().map(|q| q.alpha()).sum::<f64>() / k,
            "mean_beta": posteriors.iter().map(|q| q.beta()).sum::<f64>() / k,
            "mean": posteriors.iter().map(|q| q.mean()).sum::<f64>() / k,
            "mode": peak,
        })
    };
    let summary = json!({
        "variant": cfg.variant.name(),
        "prior": gamma_summary(prior),
        "posterior": posterior,
        "csv": POSTERIOR,
    });
    write_json(&ctx.path(POSTERIOR_SUMMARY), &summary)?;
    Ok(summary)
}
