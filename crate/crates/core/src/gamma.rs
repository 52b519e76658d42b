//! Gamma distribution over the solver end-time: special functions, density,
//! sampling and the closed-form KL divergence.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("log_gamma_fn", format!("x = {x} must be positive")));
    }
    Ok(ln_gamma_positive(x))
}

fn ln_gamma_positive(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        let s = (std::f64::consts::PI * x).sin();
        return (std::f64::consts::PI / s).ln() - ln_gamma_positive(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + a.ln()
}

/// Digamma ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("digamma_fn", format!("x = {x} must be positive")));
    }
    Ok(digamma_positive(x))
}

pub(crate) fn digamma_positive(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // ln x - 1/(2x) - sum B_{2k} / (2k x^{2k})
    let series = inv2
        * (1.0 / 12.0
            - inv2
                * (1.0 / 120.0
                    - inv2
                        * (1.0 / 252.0
                            - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    acc + x.ln() - 0.5 * inv - series
}

/// Trigamma ψ'(x) for `x > 0`.
pub fn trigamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain("trigamma_fn", format!("x = {x} must be positive")));
    }
    Ok(trigamma_positive(x))
}

pub(crate) fn trigamma_positive(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // 1/x + 1/(2x^2) + sum B_{2k} / x^{2k+1}
    let series = inv
        * inv2
        * (1.0 / 6.0
            - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0)))));
    acc + inv + 0.5 * inv2 + series
}

/// Shape/rate parameterization of a Gamma distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    alpha: f64,
    beta: f64,
}

impl GammaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::domain(
                "GammaParams",
                format!("alpha = {alpha}, beta = {beta} must both be positive"),
            ));
        }
        Ok(GammaParams { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / self.beta
    }

    pub fn variance(&self) -> f64 {
        self.alpha / (self.beta * self.beta)
    }

    /// Density maximizer; zero when `alpha < 1` (density unbounded at the origin).
    pub fn mode(&self) -> f64 {
        if self.alpha >= 1.0 {
            (self.alpha - 1.0) / self.beta
        } else {
            0.0
        }
    }

    pub fn log_pdf(&self, t: f64) -> Result<f64> {
        gamma_log_pdf(t, *self)
    }

    pub fn pdf(&self, t: f64) -> Result<f64> {
        Ok(gamma_log_pdf(t, *self)?.exp())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        gamma_sample(*self, rng)
    }
}

/// `α ln β − ln Γ(α) + (α−1) ln t − β t`.
pub fn gamma_log_pdf(t: f64, p: GammaParams) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain("gamma_log_pdf", format!("t = {t} must be positive")));
    }
    Ok(log_pdf_unchecked(t, p.alpha, p.beta))
}

pub(crate) fn log_pdf_unchecked(t: f64, alpha: f64, beta: f64) -> f64 {
    alpha * beta.ln() - ln_gamma_positive(alpha) + (alpha - 1.0) * t.ln() - beta * t
}

/// Marsaglia–Tsang squeeze sampler; shapes below one are boosted by
/// sampling at `alpha + 1` and scaling with `U^(1/alpha)`.
pub fn gamma_sample<R: Rng + ?Sized>(p: GammaParams, rng: &mut R) -> f64 {
    let draw = if p.alpha < 1.0 {
        let x = marsaglia_tsang(p.alpha + 1.0, rng);
        let u: f64 = 1.0 - rng.random::<f64>();
        x * u.powf(1.0 / p.alpha)
    } else {
        marsaglia_tsang(p.alpha, rng)
    };
    (draw / p.beta).max(f64::MIN_POSITIVE)
}

fn marsaglia_tsang<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> f64 {
    let d = alpha - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = rng.sample(StandardNormal);
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u: f64 = 1.0 - rng.random::<f64>();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Closed-form KL(q ‖ p) between two Gamma distributions.
pub fn gamma_kl(q: GammaParams, p: GammaParams) -> f64 {
    kl_unchecked(q.alpha, q.beta, p.alpha, p.beta).max(0.0)
}

pub(crate) fn kl_unchecked(aq: f64, bq: f64, ap: f64, bp: f64) -> f64 {
    // Γ(α_q + 1)/Γ(α_q) reduces to α_q
    aq * bq.ln() - ap * bp.ln() + ln_gamma_positive(ap) - ln_gamma_positive(aq)
        + (digamma_positive(aq) - bq.ln()) * (aq - ap)
        + aq * bp / bq
        - aq
}

/// Partial derivatives of KL(q ‖ p) with respect to `(α_q, β_q)`.
pub fn gamma_kl_grad(q: GammaParams, p: GammaParams) -> (f64, f64) {
    kl_grad_unchecked(q.alpha, q.beta, p.alpha, p.beta)
}

pub(crate) fn kl_grad_unchecked(aq: f64, bq: f64, ap: f64, bp: f64) -> (f64, f64) {
    let d_alpha = trigamma_positive(aq) * (aq - ap) + bp / bq - 1.0;
    let d_beta = ap / bq - aq * bp / (bq * bq);
    (d_alpha, d_beta)
}
