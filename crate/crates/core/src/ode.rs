//! Dormand–Prince 5(4) integration with dense output.
//!
//! The stepper is generic over [`OdeSystem`], whose state is either a plain
//! vector or a handle on a [`Tape`]. Adaptive solves, forced-grid replays
//! and dense evaluation all go through the same arithmetic, which is what
//! makes [`two_phase_solve`] reproduce its unrecorded first phase bitwise.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub atol: f64,
    pub rtol: f64,
    /// First trial step; `None` means `max(1e-2 * (t1 - t0), 1e-6)`.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    pub safety: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            atol: 1e-2,
            rtol: 1e-2,
            initial_step: None,
            max_steps: 10_000,
            safety: 0.9,
            min_scale: 0.2,
            max_scale: 10.0,
        }
    }
}

impl SolverConfig {
    pub fn with_tolerances(atol: f64, rtol: f64) -> Self {
        SolverConfig {
            atol,
            rtol,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.atol > 0.0
            && self.rtol > 0.0
            && self.max_steps >= 1
            && self.safety > 0.0
            && self.safety < 1.0
            && self.min_scale > 0.0
            && self.min_scale < 1.0
            && self.max_scale > 1.0
            && self.initial_step.is_none_or(|h| h > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid solver config {self:?}")))
        }
    }

    fn first_step(&self, span: f64) -> f64 {
        self.initial_step.unwrap_or_else(|| (1e-2 * span).max(1e-6))
    }
}

/// Arithmetic the stepper needs from a state representation.
pub trait OdeSystem {
    type State: Clone;

    fn derivative(&mut self, h: &Self::State, t: f64) -> Result<Self::State>;

    /// `sum_j c_j * x_j`.
    fn lincomb(&mut self, terms: &[(f64, &Self::State)]) -> Result<Self::State>;

    fn values<'a>(&'a self, s: &'a Self::State) -> &'a [f64];
}

/// Plain-vector system backed by a closure.
pub struct FnSystem<F> {
    f: F,
}

impl<F> FnSystem<F>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    pub fn new(f: F) -> Self {
        FnSystem { f }
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    type State = Vec<f64>;

    fn derivative(&mut self, h: &Vec<f64>, t: f64) -> Result<Vec<f64>> {
        let d = (self.f)(h, t)?;
        if d.len() != h.len() {
            return Err(Error::Shape {
                op: "derivative",
                detail: format!("state has {} entries, derivative {}", h.len(), d.len()),
            });
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: format!("derivative at t = {t}"),
            });
        }
        Ok(d)
    }

    fn lincomb(&mut self, terms: &[(f64, &Vec<f64>)]) -> Result<Vec<f64>> {
        let slices: Vec<(f64, &[f64])> = terms.iter().map(|(c, x)| (*c, x.as_slice())).collect();
        Ok(tensor::lincomb(&slices))
    }

    fn values<'a>(&'a self, s: &'a Vec<f64>) -> &'a [f64] {
        s
    }
}

/// Dynamics expressed as recorded primitives on a tape.
pub trait TapeDynamics {
    fn eval(&self, tape: &mut Tape, h: Var, t: f64) -> Result<Var>;
}

impl<F> TapeDynamics for F
where
    F: Fn(&mut Tape, Var, f64) -> Result<Var>,
{
    fn eval(&self, tape: &mut Tape, h: Var, t: f64) -> Result<Var> {
        self(tape, h, t)
    }
}

/// System whose states are nodes on a tape.
pub struct TapeSystem<'a, D: ?Sized> {
    pub tape: &'a mut Tape,
    pub dynamics: &'a D,
}

impl<D: TapeDynamics + ?Sized> OdeSystem for TapeSystem<'_, D> {
    type State = Var;

    fn derivative(&mut self, h: &Var, t: f64) -> Result<Var> {
        self.dynamics.eval(self.tape, *h, t)
    }

    fn lincomb(&mut self, terms: &[(f64, &Var)]) -> Result<Var> {
        let t: Vec<(f64, Var)> = terms.iter().map(|(c, v)| (*c, **v)).collect();
        self.tape.lincomb(&t)
    }

    fn values<'a>(&'a self, s: &'a Var) -> &'a [f64] {
        self.tape.value(*s).data()
    }
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [1.0 / 5.0];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
// Fifth-order weights (also row 7 of the tableau: FSAL).
const B: [f64; 6] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
];
// Fifth minus fourth order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
// Continuous extension coefficients.
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// Accepted step times, states and stage slopes of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<S = Vec<f64>> {
    times: Vec<f64>,
    step_sizes: Vec<f64>,
    states: Vec<S>,
    slopes: Vec<Vec<S>>,
}

/// The accepted step grid; all phase 2 needs from phase 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepGrid {
    pub times: Vec<f64>,
    pub step_sizes: Vec<f64>,
}

impl<S: Clone> Trajectory<S> {
    fn start(t0: f64, h0: S) -> Self {
        Trajectory {
            times: vec![t0],
            step_sizes: Vec::new(),
            states: vec![h0],
            slopes: Vec::new(),
        }
    }

    pub fn accepted_times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    /// Seven stage derivatives for each accepted step.
    pub fn stage_slopes(&self) -> &[Vec<S>] {
        &self.slopes
    }

    pub fn num_steps(&self) -> usize {
        self.step_sizes.len()
    }

    pub fn final_state(&self) -> &S {
        self.states.last().expect("trajectory always holds the initial state")
    }

    pub fn grid(&self) -> StepGrid {
        StepGrid {
            times: self.times.clone(),
            step_sizes: self.step_sizes.clone(),
        }
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], *self.times.last().expect("nonempty"))
    }

    /// Index of the step containing `t`, or `Err` when outside the span;
    /// `Ok(Err(k))` when `t` is exactly accepted time `k`.
    fn locate(&self, t: f64) -> Result<std::result::Result<usize, usize>> {
        let (lo, hi) = self.span();
        if !(t >= lo && t <= hi) {
            return Err(Error::Range { t, lo, hi });
        }
        match self.times.binary_search_by(|x| x.partial_cmp(&t).expect("finite times")) {
            Ok(k) => Ok(Err(k)),
            Err(k) => Ok(Ok(k - 1)),
        }
    }

    /// Evaluate the fourth-order continuous extension at `t`.
    pub fn dense_eval_with<Sys>(&self, sys: &mut Sys, t: f64) -> Result<S>
    where
        Sys: OdeSystem<State = S>,
    {
        match self.locate(t)? {
            Err(k) => Ok(self.states[k].clone()),
            Ok(j) => {
                let dt = self.step_sizes[j];
                let theta = (t - self.times[j]) / dt;
                let c = dense_coefficients(theta, dt);
                let k = &self.slopes[j];
                let terms = [
                    (c[0], &self.states[j]),
                    (c[1], &self.states[j + 1]),
                    (c[2], &k[0]),
                    (c[3], &k[2]),
                    (c[4], &k[3]),
                    (c[5], &k[4]),
                    (c[6], &k[5]),
                    (c[7], &k[6]),
                ];
                sys.lincomb(&terms)
            }
        }
    }
}

impl Trajectory<Vec<f64>> {
    pub fn dense_eval(&self, t: f64) -> Result<Vec<f64>> {
        self.dense_eval_with(&mut FnSystem::new(|_: &[f64], _| Ok(Vec::new())), t)
    }

    /// Dense output restricted to entries `[offset, offset + width)`, e.g. one
    /// example's row of a batched state. Bitwise equal to slicing
    /// [`Trajectory::dense_eval`].
    pub fn dense_eval_slice(&self, t: f64, offset: usize, width: usize) -> Result<Vec<f64>> {
        let r = offset..offset + width;
        match self.locate(t)? {
            Err(k) => Ok(self.states[k][r].to_vec()),
            Ok(j) => {
                let dt = self.step_sizes[j];
                let theta = (t - self.times[j]) / dt;
                let c = dense_coefficients(theta, dt);
                let k = &self.slopes[j];
                let terms: [(f64, &[f64]); 8] = [
                    (c[0], &self.states[j][r.clone()]),
                    (c[1], &self.states[j + 1][r.clone()]),
                    (c[2], &k[0][r.clone()]),
                    (c[3], &k[2][r.clone()]),
                    (c[4], &k[3][r.clone()]),
                    (c[5], &k[4][r.clone()]),
                    (c[6], &k[5][r.clone()]),
                    (c[7], &k[6][r]),
                ];
                Ok(tensor::lincomb(&terms))
            }
        }
    }
}

/// Weights on `(y_n, y_{n+1}, k1, k3, k4, k5, k6, k7)` of the continuous
/// extension at `theta` in a step of size `dt`.
fn dense_coefficients(theta: f64, dt: f64) -> [f64; 8] {
    let s = theta;
    let u = 1.0 - s;
    let su = s * u;
    let ssu = s * su;
    let ssuu = ssu * u;
    let cy0 = 1.0 - s + su - 2.0 * ssu;
    let cy1 = s - su + 2.0 * ssu;
    [
        cy0,
        cy1,
        dt * (su - ssu + ssuu * D[0]),
        dt * ssuu * D[2],
        dt * ssuu * D[3],
        dt * ssuu * D[4],
        dt * ssuu * D[5],
        dt * (-ssu + ssuu * D[6]),
    ]
}

struct Step<S> {
    y1: S,
    k: Vec<S>,
    err: Option<S>,
}

/// One Dormand–Prince step from `(t, y)` with FSAL slope `k1`.
fn dopri_step<Sys: OdeSystem>(
    sys: &mut Sys,
    y: &Sys::State,
    k1: &Sys::State,
    t: f64,
    dt: f64,
    t_next: f64,
    with_error: bool,
) -> Result<Step<Sys::State>> {
    let stage_time = |i: usize| if C[i] == 1.0 { t_next } else { t + C[i] * dt };

    let y2 = sys.lincomb(&[(1.0, y), (dt * A2[0], k1)])?;
    let k2 = sys.derivative(&y2, stage_time(1))?;
    let y3 = sys.lincomb(&[(1.0, y), (dt * A3[0], k1), (dt * A3[1], &k2)])?;
    let k3 = sys.derivative(&y3, stage_time(2))?;
    let y4 = sys.lincomb(&[(1.0, y), (dt * A4[0], k1), (dt * A4[1], &k2), (dt * A4[2], &k3)])?;
    let k4 = sys.derivative(&y4, stage_time(3))?;
    let y5 = sys.lincomb(&[
        (1.0, y),
        (dt * A5[0], k1),
        (dt * A5[1], &k2),
        (dt * A5[2], &k3),
        (dt * A5[3], &k4),
    ])?;
    let k5 = sys.derivative(&y5, stage_time(4))?;
    let y6 = sys.lincomb(&[
        (1.0, y),
        (dt * A6[0], k1),
        (dt * A6[1], &k2),
        (dt * A6[2], &k3),
        (dt * A6[3], &k4),
        (dt * A6[4], &k5),
    ])?;
    let k6 = sys.derivative(&y6, stage_time(5))?;
    let y1 = sys.lincomb(&[
        (1.0, y),
        (dt * B[0], k1),
        (dt * B[2], &k3),
        (dt * B[3], &k4),
        (dt * B[4], &k5),
        (dt * B[5], &k6),
    ])?;
    let k7 = sys.derivative(&y1, stage_time(6))?;
    let err = if with_error {
        Some(sys.lincomb(&[
            (dt * E[0], k1),
            (dt * E[2], &k3),
            (dt * E[3], &k4),
            (dt * E[4], &k5),
            (dt * E[5], &k6),
            (dt * E[6], &k7),
        ])?)
    } else {
        None
    };
    Ok(Step {
        y1,
        k: vec![k1.clone(), k2, k3, k4, k5, k6, k7],
        err,
    })
}

/// Max over components of `|err| / (atol + rtol * max(|y0|, |y1|))`.
fn error_ratio(err: &[f64], y0: &[f64], y1: &[f64], cfg: &SolverConfig) -> f64 {
    err.iter()
        .zip(y0.iter().zip(y1))
        .map(|(e, (a, b))| e.abs() / (cfg.atol + cfg.rtol * a.abs().max(b.abs())))
        .fold(0.0, f64::max)
}

/// Adaptive integration of any [`OdeSystem`] from `t0` to `t1`.
pub fn integrate<Sys: OdeSystem>(
    sys: &mut Sys,
    h0: Sys::State,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory<Sys::State>> {
    cfg.validate()?;
    if !(t1 >= t0) || !t0.is_finite() || !t1.is_finite() {
        return Err(Error::contract(format!("integration needs t0 <= t1, got [{t0}, {t1}]")));
    }
    if sys.values(&h0).iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "initial state".into(),
        });
    }
    let mut traj = Trajectory::start(t0, h0);
    if t1 == t0 {
        return Ok(traj);
    }
    let mut t = t0;
    let mut k1 = sys.derivative(&traj.states[0], t0)?;
    let mut dt = cfg.first_step(t1 - t0);
    let mut attempts = 0;
    while t < t1 {
        if attempts >= cfg.max_steps {
            return Err(Error::NonConvergence {
                max_steps: cfg.max_steps,
                last_time: t,
            });
        }
        attempts += 1;
        let (dt_try, t_next) = if t + dt >= t1 { (t1 - t, t1) } else { (dt, t + dt) };
        let y = traj.states.last().expect("nonempty").clone();
        let step = dopri_step(sys, &y, &k1, t, dt_try, t_next, true)?;
        let err = step.err.as_ref().expect("error estimate requested");
        let ratio = error_ratio(sys.values(err), sys.values(&y), sys.values(&step.y1), cfg);
        if !ratio.is_finite() {
            return Err(Error::NonFinite {
                op: format!("error estimate at t = {t}"),
            });
        }
        let factor = if ratio == 0.0 {
            cfg.max_scale
        } else {
            (cfg.safety * ratio.powf(-0.2)).clamp(cfg.min_scale, cfg.max_scale)
        };
        if ratio <= 1.0 {
            k1 = step.k[6].clone();
            traj.times.push(t_next);
            traj.step_sizes.push(dt_try);
            traj.states.push(step.y1);
            traj.slopes.push(step.k);
            t = t_next;
            dt = dt_try * factor;
        } else {
            dt = dt_try * factor.min(1.0);
        }
    }
    Ok(traj)
}

/// Re-run a previously accepted step grid without error control.
pub fn replay<Sys: OdeSystem>(sys: &mut Sys, h0: Sys::State, grid: &StepGrid) -> Result<Trajectory<Sys::State>> {
    if grid.times.len() != grid.step_sizes.len() + 1 {
        return Err(Error::contract("step grid needs one more time than step sizes"));
    }
    let mut traj = Trajectory::start(grid.times[0], h0);
    if grid.step_sizes.is_empty() {
        return Ok(traj);
    }
    let mut k1 = sys.derivative(&traj.states[0], grid.times[0])?;
    for (j, &dt) in grid.step_sizes.iter().enumerate() {
        let (t, t_next) = (grid.times[j], grid.times[j + 1]);
        let y = traj.states.last().expect("nonempty").clone();
        let step = dopri_step(sys, &y, &k1, t, dt, t_next, false).map_err(|e| match e {
            Error::NonFinite { op } => Error::NonFinite {
                op: format!("replay step {j} ({op})"),
            },
            other => other,
        })?;
        k1 = step.k[6].clone();
        traj.times.push(t_next);
        traj.step_sizes.push(dt);
        traj.states.push(step.y1);
        traj.slopes.push(step.k);
    }
    Ok(traj)
}

/// Solve `dh/dt = f(h, t)` from `t0` to `t1` on plain vectors.
pub fn solve<F>(f: F, h0: &[f64], t0: f64, t1: f64, cfg: &SolverConfig) -> Result<Trajectory>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    integrate(&mut FnSystem::new(f), h0.to_vec(), t0, t1, cfg)
}

/// `n` equal Dormand–Prince steps (fifth-order solution, no error control).
pub fn solve_fixed<F>(f: F, h0: &[f64], t0: f64, t1: f64, n: usize) -> Result<Trajectory>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    if n == 0 {
        return Err(Error::contract("fixed-step solve needs at least one step"));
    }
    let dt = (t1 - t0) / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| if i == n { t1 } else { t0 + i as f64 * dt }).collect();
    let step_sizes = times.windows(2).map(|w| w[1] - w[0]).collect();
    replay(&mut FnSystem::new(f), h0.to_vec(), &StepGrid { times, step_sizes })
}

/// Distinct sorted times and, for each requested time, its index among them.
pub fn dedup_times(times: &[f64]) -> Result<(Vec<f64>, Vec<usize>)> {
    if times.is_empty() {
        return Err(Error::contract("at least one requested time is needed"));
    }
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
        return Err(Error::contract("requested times must be finite and nonnegative"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::contract("requested times must be sorted nondecreasing"));
    }
    let mut unique: Vec<f64> = Vec::with_capacity(times.len());
    let mut index = Vec::with_capacity(times.len());
    for &t in times {
        if unique.last() != Some(&t) {
            unique.push(t);
        }
        index.push(unique.len() - 1);
    }
    Ok((unique, index))
}

/// States at each requested time from one integration `0 → max(times)`.
pub fn solve_at_times<F>(f: F, h0: &[f64], times: &[f64], cfg: &SolverConfig) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>>,
{
    let (unique, index) = dedup_times(times)?;
    let end = *unique.last().expect("nonempty");
    let traj = solve(f, h0, 0.0, end, cfg)?;
    let states = unique.iter().map(|&t| traj.dense_eval(t)).collect::<Result<Vec<_>>>()?;
    Ok(index.into_iter().map(|i| states[i].clone()).collect())
}

/// Unrecorded adaptive solve of tape dynamics on the value of `h0`,
/// returning the plain trajectory. Parameters referenced by `dynamics`
/// must already live on `tape`; scratch nodes are truncated after each
/// derivative evaluation.
pub fn solve_unrecorded<D: TapeDynamics + ?Sized>(
    tape: &mut Tape,
    dynamics: &D,
    h0: Var,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<Trajectory> {
    let shape = tape.value(h0).shape().to_vec();
    let y0 = tape.value(h0).data().to_vec();
    let mut sys = FnSystem::new(|y: &[f64], t: f64| {
        let mark = tape.len();
        let out = tape.no_record(|tp| {
            let h = tp.constant(Tensor::new(shape.clone(), y.to_vec())?);
            let d = dynamics.eval(tp, h, t)?;
            Ok(tp.value(d).data().to_vec())
        });
        tape.truncate(mark);
        out
    });
    integrate(&mut sys, y0, 0.0, t1, cfg)
}

/// Differentiable solve at sorted `times`.
///
/// Phase 1 integrates adaptively with recording disabled and keeps only the
/// accepted step grid. Phase 2 replays that grid with recording enabled and
/// reads the requested states off the recorded dense output, so gradients of
/// any function of the outputs reach the dynamics parameters and `h0`.
pub fn two_phase_solve<D: TapeDynamics + ?Sized>(
    tape: &mut Tape,
    dynamics: &D,
    h0: Var,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    let (unique, index) = dedup_times(times)?;
    let end = *unique.last().expect("nonempty");
    let grid = solve_unrecorded(tape, dynamics, h0, end, cfg)?.grid();
    let mut sys = TapeSystem { tape, dynamics };
    let traj = replay(&mut sys, h0, &grid)?;
    let states = unique
        .iter()
        .map(|&t| traj.dense_eval_with(&mut sys, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(index.into_iter().map(|i| states[i]).collect())
}

/// Fully recorded adaptive solve: every trial step, including rejected ones,
/// lands on the tape. Reference path for checking [`two_phase_solve`].
pub fn solve_recorded<D: TapeDynamics + ?Sized>(
    tape: &mut Tape,
    dynamics: &D,
    h0: Var,
    times: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    let (unique, index) = dedup_times(times)?;
    let end = *unique.last().expect("nonempty");
    let mut sys = TapeSystem { tape, dynamics };
    let traj = integrate(&mut sys, h0, 0.0, end, cfg)?;
    let states = unique
        .iter()
        .map(|&t| traj.dense_eval_with(&mut sys, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(index.into_iter().map(|i| states[i]).collect())
}
