//! Seeded synthetic datasets and CSV ingestion.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::models::Targets;
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    targets: Targets,
    splits: Vec<Split>,
    metadata: serde_json::Value,
}

impl Dataset {
    pub fn new(inputs: Tensor, targets: Targets, metadata: serde_json::Value) -> Result<Self> {
        let n = match inputs.shape() {
            [n, d] if *d > 0 => *n,
            s => {
                return Err(Error::Shape {
                    op: "dataset",
                    detail: format!("inputs must be [n, d] with d >= 1, got {s:?}"),
                })
            }
        };
        if targets.len() != n {
            return Err(Error::Shape {
                op: "dataset",
                detail: format!("{n} inputs but {} targets", targets.len()),
            });
        }
        Ok(Dataset {
            inputs,
            targets,
            splits: vec![Split::Train; n],
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn metadata(&self) -> &serde_json::Value {
        &self.metadata
    }

    /// Number of classes implied by the largest label (classification only).
    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Classes(c) => c.iter().max().map(|m| m + 1),
            Targets::Values(_) => None,
        }
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let d = self.dim();
        let data = idx.iter().flat_map(|&i| self.inputs.row(i).iter().copied()).collect();
        Dataset {
            inputs: Tensor::matrix(idx.len(), d, data).expect("row-major selection"),
            targets: self.targets.select(idx),
            splits: idx.iter().map(|&i| self.splits[i]).collect(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn split(&self, which: Split) -> Dataset {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.splits[i] == which).collect();
        self.select(&idx)
    }

    /// Tag the last `round(test_fraction * n)` rows as test.
    pub fn with_test_fraction(mut self, test_fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&test_fraction) {
            return Err(Error::contract(format!("test fraction {test_fraction} outside [0, 1]")));
        }
        let n = self.len();
        let n_test = (test_fraction * n as f64).round() as usize;
        for (i, s) in self.splits.iter_mut().enumerate() {
            *s = if i >= n - n_test { Split::Test } else { Split::Train };
        }
        Ok(self)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let d = self.dim();
        let mut header: Vec<String> = (0..d).map(|j| format!("x_{j}")).collect();
        header.push("y".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.inputs.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(match &self.targets {
                Targets::Values(v) => format!("{:?}", v[i]),
                Targets::Classes(c) => c[i].to_string(),
            });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Read a headered CSV with columns `x_0 .. x_{D-1}, y`; `y` holds class
    /// indices when `classification` is set.
    pub fn read_csv(path: impl AsRef<Path>, classification: bool) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let d = header.len().saturating_sub(1);
        let expected: Vec<String> = (0..d).map(|j| format!("x_{j}")).chain(["y".to_string()]).collect();
        if d == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(Error::Format(format!(
                "{}: header must be x_0..x_{{D-1}},y, got {:?}",
                path.display(),
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut data = Vec::new();
        let mut values = Vec::new();
        let mut classes = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                rec[j].trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("{} row {}: column {j}: {e}", path.display(), line + 1))
                })
            };
            for j in 0..d {
                data.push(parse(j)?);
            }
            if classification {
                classes.push(rec[d].trim().parse::<usize>().map_err(|e| {
                    Error::Format(format!("{} row {}: class label: {e}", path.display(), line + 1))
                })?);
            } else {
                values.push(parse(d)?);
            }
        }
        let n = data.len() / d;
        let targets = if classification {
            Targets::Classes(classes)
        } else {
            Targets::Values(values)
        };
        Dataset::new(
            Tensor::matrix(n, d, data)?,
            targets,
            json!({"generator": "csv", "path": path.display().to_string()}),
        )
    }
}

/// `x + 0.3 sin(2 pi x) + 0.3 sin(4 pi x)`.
pub fn foong_target(x: f64) -> f64 {
    x + 0.3 * (2.0 * PI * x).sin() + 0.3 * (4.0 * PI * x).sin()
}

/// Two clusters on `[-1, -0.5)` and `[0.5, 1)` (half each) around the gap
/// `(-0.5, 0.5)`, with targets from [`foong_target`] plus Gaussian noise.
pub fn gen_foong1d(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::contract("gen_foong1d needs n >= 2"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::contract("noise_std must be nonnegative"));
    }
    let mut rng = rng::stream(seed, Purpose::Data);
    let left = n / 2;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let x = if i < left { -1.0 + 0.5 * u } else { 0.5 + 0.5 * u };
        let eps: f64 = rng.sample(StandardNormal);
        xs.push(x);
        ys.push(foong_target(x) + noise_std * eps);
    }
    Dataset::new(
        Tensor::matrix(n, 1, xs)?,
        Targets::Values(ys),
        json!({
            "generator": "foong1d",
            "n": n,
            "noise_std": noise_std,
            "seed": seed,
            "support": [[-1.0, -0.5], [0.5, 1.0]],
            "target": "x + 0.3 sin(2 pi x) + 0.3 sin(4 pi x)",
        }),
    )
}

/// Interleaved half circles: class 0 on the upper unit circle, class 1 on the
/// lower one shifted by `(1, -0.5)`, evenly spaced in angle, with Gaussian
/// jitter and rows shuffled.
pub fn gen_two_moons(n: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::contract("gen_two_moons needs n >= 2"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::contract("noise_std must be nonnegative"));
    }
    let mut rng = rng::stream(seed, Purpose::Data);
    let n0 = n.div_ceil(2);
    let n1 = n - n0;
    let angle = |i: usize, m: usize| if m > 1 { PI * i as f64 / (m - 1) as f64 } else { 0.0 };
    let mut rows: Vec<([f64; 2], usize)> = Vec::with_capacity(n);
    for i in 0..n0 {
        let a = angle(i, n0);
        rows.push(([a.cos(), a.sin()], 0));
    }
    for i in 0..n1 {
        let a = angle(i, n1);
        rows.push(([1.0 - a.cos(), 0.5 - a.sin()], 1));
    }
    rows.shuffle(&mut rng);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for (p, c) in rows {
        for v in p {
            let eps: f64 = rng.sample(StandardNormal);
            data.push(v + noise_std * eps);
        }
        labels.push(c);
    }
    Dataset::new(
        Tensor::matrix(n, 2, data)?,
        Targets::Classes(labels),
        json!({"generator": "two_moons", "n": n, "noise_std": noise_std, "seed": seed}),
    )
}

/// Gaussian cloud of `n` points around the reference mean plus `shift`, with
/// covariance `scale^2 I`.
pub fn gen_ood_inputs(reference: &Dataset, shift: &[f64], scale: f64, n: usize, seed: u64) -> Result<Tensor> {
    let d = reference.dim();
    if shift.len() != d {
        return Err(Error::Shape {
            op: "gen_ood_inputs",
            detail: format!("shift has {} entries, data has {d} columns", shift.len()),
        });
    }
    if !(scale >= 0.0) {
        return Err(Error::contract("scale must be nonnegative"));
    }
    let mut center = vec![0.0; d];
    for i in 0..reference.len() {
        center.iter_mut().zip(reference.inputs.row(i)).for_each(|(c, x)| *c += x);
    }
    let m = reference.len() as f64;
    center.iter_mut().zip(shift).for_each(|(c, s)| *c = *c / m + s);
    let mut rng = rng::stream(seed, Purpose::Data);
    let data = (0..n * d)
        .map(|k| {
            let eps: f64 = rng.sample(StandardNormal);
            center[k % d] + scale * eps
        })
        .collect();
    Tensor::matrix(n, d, data)
}

/// Largest distance of any reference input from the reference mean.
pub fn data_radius(reference: &Dataset) -> f64 {
    let d = reference.dim();
    let mut center = vec![0.0; d];
    for i in 0..reference.len() {
        center.iter_mut().zip(reference.inputs.row(i)).for_each(|(c, x)| *c += x);
    }
    center.iter_mut().for_each(|c| *c /= reference.len() as f64);
    (0..reference.len())
        .map(|i| {
            reference
                .inputs
                .row(i)
                .iter()
                .zip(&center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn foong_avoids_gap_and_splits_evenly() {
        let ds = gen_foong1d(1500, 0.02, 3).unwrap();
        let xs = ds.inputs().data();
        assert!(xs.iter().all(|x| !(*x > -0.5 && *x < 0.5)));
        assert_eq!(xs.iter().filter(|x| **x < 0.0).count(), 750);
    }

    #[test]
    fn noiseless_foong_is_exact() {
        let ds = gen_foong1d(40, 0.0, 1).unwrap();
        let Targets::Values(y) = ds.targets() else { panic!() };
        for (x, y) in ds.inputs().data().iter().zip(y) {
            assert_eq!(*y, foong_target(*x));
        }
    }

    #[test]
    fn moons_on_circles_and_balanced() {
        let ds = gen_two_moons(101, 0.0, 5).unwrap();
        let Targets::Classes(c) = ds.targets() else { panic!() };
        let ones = c.iter().filter(|&&k| k == 1).count();
        assert!((c.len() - 2 * ones) <= 1);
        for (i, &k) in c.iter().enumerate() {
            let p = ds.inputs().row(i);
            let r = if k == 0 {
                p[0].hypot(p[1])
            } else {
                (p[0] - 1.0).hypot(p[1] - 0.5)
            };
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(gen_two_moons(50, 0.1, 9).unwrap(), gen_two_moons(50, 0.1, 9).unwrap());
        assert_ne!(gen_two_moons(50, 0.1, 9).unwrap(), gen_two_moons(50, 0.1, 10).unwrap());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moons.csv");
        let ds = gen_two_moons(30, 0.1, 2).unwrap();
        ds.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path, true).unwrap();
        assert_eq!(back.inputs(), ds.inputs());
        assert_eq!(back.targets(), ds.targets());
    }
}
