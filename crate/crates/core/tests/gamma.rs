use ltnode::gamma::{digamma_fn, gamma_kl, gamma_kl_grad, gamma_sample, log_gamma_fn};
use ltnode::oracles::{
    finite_diff_grad, gamma_expectation, gamma_kl_quadrature, ks_statistic, ks_two_sample, log_gamma_stirling,
    quad_integrate, regularized_gamma_p, Interval, QuadratureConfig,
};
use ltnode::GammaParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_pair(rng: &mut ChaCha8Rng) -> (GammaParams, GammaParams) {
    let mut g = || GammaParams::new(rng.random_range(0.1..20.0), rng.random_range(0.1..20.0)).unwrap();
    (g(), g())
}

#[test]
fn kl_matches_quadrature_and_is_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cfg = QuadratureConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (q, p) = random_pair(&mut rng);
        let closed = gamma_kl(q, p);
        assert!(closed >= 0.0);
        let quad = gamma_kl_quadrature((q.alpha(), q.beta()), (p.alpha(), p.beta()), &cfg).unwrap();
        worst = worst.max((closed - quad).abs());
        assert!(gamma_kl(q, q) <= 1e-12);
    }
    assert!(worst <= 1e-6, "worst gap {worst}");
}

#[test]
fn kl_example_against_prior() {
    let q = GammaParams::new(1.27, 0.98).unwrap();
    let p = GammaParams::new(2.0, 0.5).unwrap();
    let quad = gamma_kl_quadrature((1.27, 0.98), (2.0, 0.5), &QuadratureConfig::default()).unwrap();
    assert!((gamma_kl(q, p) - quad).abs() <= 1e-6);
}

#[test]
fn kl_alpha_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let (q, p) = random_pair(&mut rng);
        let (analytic, _) = gamma_kl_grad(q, p);
        let fd = finite_diff_grad(
            |a| gamma_kl(GammaParams::new(a[0], q.beta()).unwrap(), p),
            &[q.alpha()],
            1e-5 * q.alpha(),
        )[0];
        let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
        assert!(rel <= 1e-6, "q={q:?} p={p:?}: {analytic} vs {fd}");
    }
}

#[test]
fn log_gamma_agrees_with_stirling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200 {
        let x = rng.random_range(0.05..60.0);
        let a = log_gamma_fn(x).unwrap();
        assert!((a - log_gamma_stirling(x)).abs() <= 1e-11 * (1.0 + a.abs()), "x = {x}");
    }
}

#[test]
fn digamma_matches_log_gamma_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let x = rng.random_range(0.2..30.0);
        let fd = finite_diff_grad(|v| log_gamma_stirling(v[0]), &[x], 1e-5)[0];
        assert!((digamma_fn(x).unwrap() - fd).abs() <= 1e-6, "x = {x}");
    }
}

#[test]
fn density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfg = QuadratureConfig::default();
    for _ in 0..10 {
        let g = GammaParams::new(rng.random_range(1.0..10.0), rng.random_range(0.2..5.0)).unwrap();
        let total = quad_integrate(|t| g.pdf(t).unwrap_or(0.0), Interval::HalfLine(0.0), &cfg).unwrap();
        assert!((total - 1.0).abs() <= 1e-7, "{g:?}: {total}");
    }
    let mean = gamma_expectation(|t| t, 2.0, 0.5, &cfg).unwrap();
    assert!((mean - 4.0).abs() <= 1e-6);
}

#[test]
fn sampler_matches_cdf() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = GammaParams::new(1.27, 0.98).unwrap();
    let xs: Vec<f64> = (0..100_000).map(|_| gamma_sample(g, &mut rng)).collect();
    let d = ks_statistic(&xs, |x| regularized_gamma_p(1.27, 0.98 * x));
    assert!(d <= 0.005, "KS {d}");
    let small = GammaParams::new(0.4, 2.0).unwrap();
    let ys: Vec<f64> = (0..100_000).map(|_| gamma_sample(small, &mut rng)).collect();
    assert!(ks_statistic(&ys, |x| regularized_gamma_p(0.4, 2.0 * x)) <= 0.006);
}

#[test]
fn sampler_respects_rate_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let k = 3.0;
    let base = GammaParams::new(2.5, 0.7).unwrap();
    let scaled = GammaParams::new(2.5, 0.7 * k).unwrap();
    let a: Vec<f64> = (0..100_000).map(|_| gamma_sample(base, &mut rng) / k).collect();
    let b: Vec<f64> = (0..100_000).map(|_| gamma_sample(scaled, &mut rng)).collect();
    assert!(ks_two_sample(&a, &b) <= 0.01);
}
