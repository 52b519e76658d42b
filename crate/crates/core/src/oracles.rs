//! Slow, independent reference implementations used to check the fast paths.
//!
//! Nothing here calls the solver, the closed-form Gamma functions or the
//! metric routines; the only shared code is the forward evaluation of
//! network layers through [`Bound`].

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::models::{Bound, LatentTimeModel};
use crate::ode::TapeDynamics;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            abs_tol: 1e-9,
            max_subdivisions: 20_000,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || self.max_subdivisions == 0 {
            return Err(Error::contract("quadrature needs a positive tolerance and subdivision budget"));
        }
        Ok(())
    }
}

/// Integration domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Interval {
    Finite(f64, f64),
    /// `[lo, inf)`.
    HalfLine(f64),
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_728_0,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod estimate and `|Kronrod - Gauss|` on `[a, b]`.
fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

fn adaptive<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, cfg: &QuadratureConfig) -> Result<f64> {
    cfg.validate()?;
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut parts = vec![(a, b, v, e)];
    for _ in 0..cfg.max_subdivisions {
        let total: f64 = parts.iter().map(|p| p.3).sum();
        let value: f64 = parts.iter().map(|p| p.2).sum();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: "quad_integrate".into(),
            });
        }
        if total <= cfg.abs_tol {
            return Ok(value);
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(lo < mid && mid < hi) {
            break;
        }
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        parts.push((lo, mid, v1, e1));
        parts.push((mid, hi, v2, e2));
    }
    Err(Error::Quadrature {
        subdivisions: cfg.max_subdivisions,
    })
}

/// Adaptive Gauss-Kronrod (7, 15) quadrature. The half line is mapped to
/// `[0, 1)` by `t = lo + s / (1 - s)`.
pub fn quad_integrate<F: FnMut(f64) -> f64>(mut f: F, domain: Interval, cfg: &QuadratureConfig) -> Result<f64> {
    match domain {
        Interval::Finite(lo, hi) => {
            if !(lo <= hi) {
                return Err(Error::contract(format!("empty interval [{lo}, {hi}]")));
            }
            adaptive(f, lo, hi, cfg)
        }
        Interval::HalfLine(lo) => adaptive(
            |s| {
                let w = 1.0 - s;
                let v = f(lo + s / w) / (w * w);
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            },
            0.0,
            1.0,
            cfg,
        ),
    }
}

/// `ln Gamma(x)` by Stirling's series after shifting `x` above 15.
pub fn log_gamma_stirling(x: f64) -> f64 {
    let mut shift = 0.0;
    let mut z = x;
    while z < 15.0 {
        shift += z.ln();
        z += 1.0;
    }
    let z2 = z * z;
    let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
        - 1.0 / (1680.0 * z * z2 * z2 * z2)
        + 1.0 / (1188.0 * z * z2 * z2 * z2 * z2);
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

/// Gamma log density with shape `alpha` and rate `beta`, written out from
/// the definition.
pub fn gamma_log_density(t: f64, alpha: f64, beta: f64) -> f64 {
    if t <= 0.0 {
        return f64::NEG_INFINITY;
    }
    alpha * beta.ln() + (alpha - 1.0) * t.ln() - beta * t - log_gamma_stirling(alpha)
}

/// `E_q[g(T)]` for `q = Gamma(alpha, beta)` by quadrature in `s = beta * t`.
/// The range is split at `c = max(alpha, 1)`; for `alpha < 1` the head uses
/// `s = c * v^(1/alpha)`, which removes the integrable singularity at zero.
pub fn gamma_expectation<G: FnMut(f64) -> f64>(
    mut g: G,
    alpha: f64,
    beta: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::domain("gamma_expectation", format!("alpha={alpha}, beta={beta}")));
    }
    let lg = log_gamma_stirling(alpha);
    let c = alpha.max(1.0);
    // Density in s: s^(alpha-1) e^(-s) / Gamma(alpha).
    let density_s = |s: f64| ((alpha - 1.0) * s.ln() - s - lg).exp();
    let head = if alpha < 1.0 {
        let scale = (alpha * c.ln() - lg).exp() / alpha;
        quad_integrate(
            |v: f64| {
                let s = c * v.powf(1.0 / alpha);
                let e = (-s).exp() * g(s / beta);
                scale * e
            },
            Interval::Finite(0.0, 1.0),
            cfg,
        )?
    } else {
        quad_integrate(|s| density_s(s) * g(s / beta), Interval::Finite(0.0, c), cfg)?
    };
    let tail = quad_integrate(
        |s| {
            let d = density_s(s);
            if d == 0.0 {
                0.0
            } else {
                d * g(s / beta)
            }
        },
        Interval::HalfLine(c),
        cfg,
    )?;
    Ok(head + tail)
}

/// `KL(q || p)` for Gamma laws by quadrature of `q ln(q / p)`.
pub fn gamma_kl_quadrature(q: (f64, f64), p: (f64, f64), cfg: &QuadratureConfig) -> Result<f64> {
    gamma_expectation(
        |t| gamma_log_density(t, q.0, q.1) - gamma_log_density(t, p.0, p.1),
        q.0,
        q.1,
        cfg,
    )
}

/// Regularized lower incomplete gamma `P(a, x)`: power series below
/// `x = a + 1`, Lentz continued fraction above.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let log_prefix = a * x.ln() - x - log_gamma_stirling(a);
    if x < a + 1.0 {
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut n = a;
        for _ in 0..10_000 {
            n += 1.0;
            term *= x / n;
            sum += term;
            if term.abs() < sum.abs() * 1e-17 {
                break;
            }
        }
        (sum * log_prefix.exp()).min(1.0)
    } else {
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        (1.0 - log_prefix.exp() * h).max(0.0)
    }
}

/// One-sample Kolmogorov-Smirnov statistic against `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Central differences, one coordinate at a time.
pub fn finite_diff_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Fraction of (in, out) pairs with the out score higher, ties counting half.
pub fn auroc_pairs(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &o in out_scores {
        for &i in in_scores {
            if o > i {
                wins += 1.0;
            } else if o == i {
                wins += 0.5;
            }
        }
    }
    wins / (in_scores.len() * out_scores.len()) as f64
}

/// Average precision by scanning every distinct threshold and recounting.
pub fn average_precision_scan(positives: &[f64], negatives: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for tau in thresholds {
        let tp = positives.iter().filter(|&&s| s >= tau).count() as f64;
        let fp = negatives.iter().filter(|&&s| s >= tau).count() as f64;
        let recall = tp / positives.len() as f64;
        ap += (recall - prev_recall) * tp / (tp + fp);
        prev_recall = recall;
    }
    ap
}

/// Mean over examples and classes of the squared gap to the one-hot target.
pub fn brier_definition(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (p, &y) in probs.iter().zip(labels) {
        for (c, &v) in p.iter().enumerate() {
            let target = if c == y { 1.0 } else { 0.0 };
            total += (v - target) * (v - target) / p.len() as f64;
        }
    }
    total / probs.len() as f64
}

/// Expected calibration error with bins `[k/B, (k+1)/B)`, the last bin
/// closed, confidence the top probability and the first maximum predicted.
pub fn ece_definition(probs: &[Vec<f64>], labels: &[usize], num_bins: usize) -> f64 {
    let n = probs.len() as f64;
    let b = num_bins as f64;
    let top = |p: &Vec<f64>| {
        let m = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (p.iter().position(|&v| v == m).unwrap_or(0), m)
    };
    let mut ece = 0.0;
    for k in 0..num_bins {
        let (lo, hi) = (k as f64 / b, (k + 1) as f64 / b);
        let mut members = Vec::new();
        for (p, &y) in probs.iter().zip(labels) {
            let (pred, conf) = top(p);
            let inside = conf >= lo && (conf < hi || (k + 1 == num_bins && conf <= 1.0));
            if inside {
                members.push((conf, pred == y));
            }
        }
        if members.is_empty() {
            continue;
        }
        let m = members.len() as f64;
        let conf: f64 = members.iter().map(|e| e.0).sum::<f64>() / m;
        let acc = members.iter().filter(|e| e.1).count() as f64 / m;
        ece += m / n * (conf - acc).abs();
    }
    ece
}

fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                c[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    c
}

/// Matrix exponential of a row-major `n x n` matrix by scaling, a Taylor
/// series and repeated squaring.
pub fn expm(a: &[f64], n: usize) -> Result<Vec<f64>> {
    if a.len() != n * n {
        return Err(Error::contract(format!("expm expects {} entries, got {}", n * n, a.len())));
    }
    let norm = (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let x: Vec<f64> = a.iter().map(|v| v * scale).collect();
    let mut result = vec![0.0; n * n];
    let mut term = vec![0.0; n * n];
    for i in 0..n {
        result[i * n + i] = 1.0;
        term[i * n + i] = 1.0;
    }
    for k in 1..30 {
        term = mat_mul(&term, &x, n);
        let inv = 1.0 / k as f64;
        term.iter_mut().for_each(|v| *v *= inv);
        result.iter_mut().zip(&term).for_each(|(r, t)| *r += t);
    }
    for _ in 0..squarings {
        result = mat_mul(&result, &result, n);
    }
    Ok(result)
}

fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    (0..n * n).map(|k| a[(k % n) * n + k / n]).collect()
}

/// `h(t) = exp(A t) h0` for `dh/dt = A h` with column-vector states.
pub fn linear_ode_solution(a: &[f64], h0: &[f64], t: f64) -> Result<Vec<f64>> {
    let n = h0.len();
    let at: Vec<f64> = a.iter().map(|v| v * t).collect();
    let e = expm(&at, n)?;
    Ok((0..n).map(|i| (0..n).map(|j| e[i * n + j] * h0[j]).sum()).collect())
}

/// Gradients of `seed . h(t)` for `dh/dt = A h`: with respect to `h0` it is
/// `exp(A^T t) seed`; with respect to `A` it is the top-right block of
/// `exp(t [[A^T, seed h0^T], [0, A^T]])`.
pub fn linear_ode_gradients(a: &[f64], h0: &[f64], seed: &[f64], t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = h0.len();
    if seed.len() != n || a.len() != n * n {
        return Err(Error::contract("linear_ode_gradients: inconsistent sizes"));
    }
    let at = transpose(a, n);
    let e = expm(&at.iter().map(|v| v * t).collect::<Vec<_>>(), n)?;
    let grad_h0 = (0..n).map(|i| (0..n).map(|j| e[i * n + j] * seed[j]).sum()).collect();

    let m = 2 * n;
    let mut block = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            block[i * m + j] = at[i * n + j] * t;
            block[(i + n) * m + (j + n)] = at[i * n + j] * t;
            block[i * m + (j + n)] = seed[i] * h0[j] * t;
        }
    }
    let big = expm(&block, m)?;
    let mut grad_a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            grad_a[i * n + j] = big[i * m + (j + n)];
        }
    }
    Ok((grad_h0, grad_a))
}

/// Tolerance of the reference integrator in [`reference_predict`].
pub const REFERENCE_TOL: f64 = 1e-9;

/// Classic fourth-order Runge-Kutta step on plain vectors.
fn rk4_step<F: FnMut(&[f64], f64) -> Result<Vec<f64>>>(f: &mut F, h: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    let axpy = |a: &[f64], c: f64, b: &[f64]| a.iter().zip(b).map(|(x, y)| x + c * y).collect::<Vec<f64>>();
    let k1 = f(h, t)?;
    let k2 = f(&axpy(h, 0.5 * dt, &k1), t + 0.5 * dt)?;
    let k3 = f(&axpy(h, 0.5 * dt, &k2), t + 0.5 * dt)?;
    let k4 = f(&axpy(h, dt, &k3), t + dt)?;
    Ok((0..h.len())
        .map(|i| h[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Integrate from 0 to `t_end` with RK4 and step doubling, accepting a step
/// when the full-step and two-half-step results agree to `tol` (mixed).
fn rk4_adaptive<F: FnMut(&[f64], f64) -> Result<Vec<f64>>>(mut f: F, h0: &[f64], t_end: f64, tol: f64) -> Result<Vec<f64>> {
    let mut h = h0.to_vec();
    let mut t = 0.0;
    let mut dt = (t_end * 0.01).max(1e-4);
    let mut steps = 0usize;
    while t < t_end {
        steps += 1;
        if steps > 1_000_000 {
            return Err(Error::NonConvergence {
                max_steps: 1_000_000,
                last_time: t,
            });
        }
        let last = t + dt >= t_end;
        let step = if last { t_end - t } else { dt };
        let full = rk4_step(&mut f, &h, t, step)?;
        let half = rk4_step(&mut f, &h, t, 0.5 * step)?;
        let two = rk4_step(&mut f, &half, t + 0.5 * step, 0.5 * step)?;
        let err = full
            .iter()
            .zip(&two)
            .map(|(a, b)| (a - b).abs() / (tol * (1.0 + b.abs())))
            .fold(0.0, f64::max);
        if err <= 1.0 {
            // Richardson extrapolation of the two half steps.
            h = two.iter().zip(&full).map(|(b, a)| b + (b - a) / 15.0).collect();
            t = if last { t_end } else { t + step };
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 4.0) };
        dt = step * factor;
    }
    Ok(h)
}

/// Head outputs `g(z(t))` for each requested time, each from its own solve
/// started at `t = 0` with no dense output or sample sharing.
pub fn reference_predict(model: &LatentTimeModel, x: &[f64], times: &[f64]) -> Result<Vec<Vec<f64>>> {
    if times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(Error::contract("reference times must be finite and nonnegative"));
    }
    let mut tape = Tape::unrecorded();
    let bound: Bound = model.bind(&mut tape, false);
    let xv = tape.constant(Tensor::matrix(1, x.len(), x.to_vec())?);
    let h0v = bound.encode(&mut tape, xv)?;
    let h0 = tape.value(h0v).data().to_vec();
    let width = h0.len();
    let dynamics = bound.dynamics();
    let mark = tape.len();

    let mut out = Vec::with_capacity(times.len());
    for &t_end in times {
        let f = |h: &[f64], t: f64| -> Result<Vec<f64>> {
            let hv = tape.constant(Tensor::matrix(1, width, h.to_vec())?);
            let d = dynamics.eval(&mut tape, hv, t)?;
            let v = tape.value(d).data().to_vec();
            tape.truncate(mark);
            Ok(v)
        };
        let h = rk4_adaptive(f, &h0, t_end, REFERENCE_TOL)?;
        let hv = tape.constant(Tensor::matrix(1, width, h)?);
        let y = bound.output(&mut tape, hv)?;
        out.push(tape.value(y).data().to_vec());
        tape.truncate(mark);
    }
    Ok(out)
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull of planar points in counter-clockwise order (monotone chain).
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(f64, f64)>> = if pass == 0 {
            Box::new(p.iter())
        } else {
            Box::new(p.iter().rev())
        };
        for &q in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    hull
}

/// Whether `q` lies inside or on a counter-clockwise convex hull.
pub fn inside_hull(hull: &[(f64, f64)], q: (f64, f64)) -> bool {
    if hull.len() < 3 {
        return hull.contains(&q);
    }
    (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], q) >= 0.0)
}
