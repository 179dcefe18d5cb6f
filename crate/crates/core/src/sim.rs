//! First-order upwind simulation, norms, Lyapunov functionals and
//! fading-memory envelopes.
//!
//! The PDE is u_t + A(u,x) u_x + B(u,x) = d₂(t,x) with incoming boundary
//! values G(outgoing) + d(t). Outgoing values are ordered by component:
//! u_i(t,L) for i ≤ m, u_i(t,0) for i > m.

use crate::certifier::FProfile;
use crate::expr::{Env, Expr, Var};
use crate::linalg::Matrix;
use crate::model::{interpolate, sample_coefficients, ModelError, Orientation, SpatialGrid, SystemSpec};
use crate::optim::nelder_mead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_CFL: f64 = 0.9;
/// Zeroth-order compatibility tolerance.
pub const COMPAT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("CFL number {0} is outside (0, 0.9]")]
    CflViolation(f64),
    #[error("compatibility violated for component {component} at x = {x} (order {order}, residual {residual:e})")]
    CompatibilityViolation {
        component: usize,
        x: f64,
        order: usize,
        residual: f64,
    },
    #[error("quasilinear mode needs a diagonal A(u,x); entry ({i},{j}) is not identically zero")]
    NonDiagonalQuasilinear { i: usize, j: usize },
    #[error("disturbance horizon {available} does not cover the trajectory horizon {needed}")]
    HorizonMismatch { needed: f64, available: f64 },
    #[error("disturbance component {component} reaches {value} at t = {t}, above the declared bound {bound}")]
    DisturbanceBound {
        component: usize,
        t: f64,
        value: f64,
        bound: f64,
    },
    #[error("state is not finite at t = {0}")]
    NonFinite(f64),
    #[error("log-sum-exp quadrature overflowed for p = {0}")]
    OverflowUnavoidable(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A scalar function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeFunction {
    Constant(f64),
    Expr { expr: Expr },
    /// `[t, value]` pairs, linearly interpolated.
    Samples { samples: Vec<[f64; 2]> },
}

impl From<f64> for TimeFunction {
    fn from(v: f64) -> Self {
        TimeFunction::Constant(v)
    }
}

impl TimeFunction {
    pub fn expr(src: &str) -> Result<Self, crate::expr::ExprError> {
        Ok(TimeFunction::Expr {
            expr: Expr::parse(src)?,
        })
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Constant(c) => *c,
            TimeFunction::Expr { expr } => expr.eval(&Env::at_t(t)),
            TimeFunction::Samples { samples } => interpolate(samples, t),
        }
    }

    /// Last time at which the function is defined.
    pub fn horizon(&self) -> f64 {
        match self {
            TimeFunction::Samples { samples } => samples.last().map_or(f64::NEG_INFINITY, |s| s[0]),
            _ => f64::INFINITY,
        }
    }

    fn derivative(&self) -> TimeDerivative {
        match self {
            TimeFunction::Constant(_) => TimeDerivative::Zero,
            TimeFunction::Expr { expr } => TimeDerivative::Analytic(expr.derivative(Var::T)),
            TimeFunction::Samples { .. } => TimeDerivative::Centered(self.clone()),
        }
    }
}

enum TimeDerivative {
    Zero,
    Analytic(Expr),
    Centered(TimeFunction),
}

impl TimeDerivative {
    fn eval(&self, t: f64, step: f64) -> f64 {
        match self {
            TimeDerivative::Zero => 0.0,
            TimeDerivative::Analytic(e) => e.eval(&Env::at_t(t)),
            TimeDerivative::Centered(f) => {
                let lo = (t - step).max(0.0);
                let hi = t + step;
                (f.eval(hi) - f.eval(lo)) / (hi - lo)
            }
        }
    }
}

/// Boundary disturbance d(t) ∈ ℝⁿ, optional internal disturbance d₂(t,x)
/// and an optional declared bound on sup |d_i|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub boundary: Vec<TimeFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub internal: Option<Vec<Expr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl DisturbanceSpec {
    pub fn zero(n: usize) -> Self {
        DisturbanceSpec {
            boundary: vec![TimeFunction::Constant(0.0); n],
            internal: None,
            bound: None,
        }
    }

    pub fn n(&self) -> usize {
        self.boundary.len()
    }

    /// Sums of `terms` sinusoids per component with random frequencies in
    /// [0.2, 3] and phases, scaled so |d_i| ≤ `bound`.
    pub fn random_sines(seed: u64, n: usize, bound: f64, terms: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let boundary = (0..n)
            .map(|_| {
                let weights: Vec<f64> = (0..terms).map(|_| rng.gen_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                let parts: Vec<String> = weights
                    .iter()
                    .map(|w| {
                        let omega: f64 = rng.gen_range(0.2..3.0);
                        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                        format!("{:?} * sin({:?} * t + {:?})", bound * w / total, omega, phase)
                    })
                    .collect();
                TimeFunction::expr(&parts.join(" + ")).expect("generated expression parses")
            })
            .collect();
        DisturbanceSpec {
            boundary,
            internal: None,
            bound: Some(bound),
        }
    }

    pub fn horizon(&self) -> f64 {
        self.boundary
            .iter()
            .map(TimeFunction::horizon)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn eval_boundary(&self, t: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.boundary) {
            *o = f.eval(t);
        }
    }

    fn validate(&self, n: usize) -> Result<(), SimError> {
        if self.boundary.len() != n {
            return Err(SimError::DimensionMismatch(format!(
                "{} boundary disturbances for n = {n}",
                self.boundary.len()
            )));
        }
        if let Some(int) = &self.internal {
            if int.len() != n {
                return Err(SimError::DimensionMismatch(format!(
                    "{} internal disturbances for n = {n}",
                    int.len()
                )));
            }
        }
        if let Some(b) = self.bound {
            if !(b >= 0.0) {
                return Err(SimError::InvalidParameter(format!("bound = {b}")));
            }
        }
        Ok(())
    }

    fn internal_at(&self, i: usize, t: f64, x: f64) -> f64 {
        self.internal
            .as_ref()
            .map_or(0.0, |d| d[i].eval(&Env { x, t, u: &[] }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Λ(x), M(x)u and J.
    #[default]
    Linear,
    /// Λ(x) with the nonlinear source and boundary map when given.
    Semilinear,
    /// Diagonal A(u,x) with the nonlinear source and boundary map.
    QuasilinearDiagonal,
}

/// Mode-specific closures of one system.
struct Dynamics {
    n: usize,
    m: usize,
    length: f64,
    points: Vec<f64>,
    lambda: Vec<Vec<f64>>,
    source: Vec<Matrix>,
    speed: Option<Vec<Expr>>,
    b: Option<Vec<Expr>>,
    g: Option<Vec<Expr>>,
    g_jac: Option<Vec<Vec<Expr>>>,
    jacobian: Matrix,
}

impl Dynamics {
    fn new(sys: &SystemSpec, mode: SimMode, grid: &SpatialGrid) -> Result<Self, SimError> {
        let n = sys.n();
        let tables = sample_coefficients(sys, grid)?;
        let nl = sys.nonlinear();
        let mut speed = None;
        if mode == SimMode::QuasilinearDiagonal {
            if let Some(a) = nl.and_then(|nl| nl.a.as_ref()) {
                for (i, row) in a.iter().enumerate() {
                    for (j, e) in row.iter().enumerate() {
                        if i != j && e.as_constant() != Some(0.0) {
                            return Err(SimError::NonDiagonalQuasilinear { i: i + 1, j: j + 1 });
                        }
                    }
                }
                speed = Some((0..n).map(|i| a[i][i].clone()).collect());
            }
        }
        let (b, g) = if mode == SimMode::Linear {
            (None, None)
        } else {
            (nl.and_then(|nl| nl.b.clone()), nl.and_then(|nl| nl.g.clone()))
        };
        let g_jac = g.as_ref().map(|g| {
            g.iter()
                .map(|e| (0..n).map(|k| e.derivative(Var::U(k))).collect())
                .collect()
        });
        Ok(Dynamics {
            n,
            m: sys.m(),
            length: sys.length(),
            points: grid.points().to_vec(),
            lambda: tables.lambda,
            source: tables.source,
            speed,
            b,
            g,
            g_jac,
            jacobian: sys.boundary_jacobian().clone(),
        })
    }

    fn speed(&self, i: usize, j: usize, uj: &[f64]) -> f64 {
        match &self.speed {
            Some(a) => a[i].eval(&Env {
                x: self.points[j],
                t: 0.0,
                u: uj,
            }),
            None => self.lambda[i][j],
        }
    }

    fn source(&self, i: usize, j: usize, uj: &[f64]) -> f64 {
        match &self.b {
            Some(b) => b[i].eval(&Env {
                x: self.points[j],
                t: 0.0,
                u: uj,
            }),
            None => {
                let m = &self.source[j];
                (0..self.n).map(|k| m[(i, k)] * uj[k]).sum()
            }
        }
    }

    /// x where component i enters the domain.
    fn entry_x(&self, i: usize) -> f64 {
        if i < self.m {
            0.0
        } else {
            self.length
        }
    }

    fn entry_index(&self, i: usize) -> usize {
        if i < self.m {
            0
        } else {
            self.points.len() - 1
        }
    }

    fn exit_index(&self, i: usize) -> usize {
        if i < self.m {
            self.points.len() - 1
        } else {
            0
        }
    }

    fn outgoing(&self, u: &[Vec<f64>]) -> Vec<f64> {
        (0..self.n).map(|i| u[i][self.exit_index(i)]).collect()
    }

    fn boundary_map(&self, out: &[f64], d: &[f64], incoming: &mut [f64]) {
        match &self.g {
            Some(g) => {
                let env = Env {
                    x: 0.0,
                    t: 0.0,
                    u: out,
                };
                for i in 0..self.n {
                    incoming[i] = g[i].eval(&env) + d[i];
                }
            }
            None => {
                self.jacobian.mul_vec(out, incoming);
                for (v, di) in incoming.iter_mut().zip(d) {
                    *v += di;
                }
            }
        }
    }

    fn boundary_jacobian(&self, out: &[f64]) -> Matrix {
        match &self.g_jac {
            Some(jac) => {
                let env = Env {
                    x: 0.0,
                    t: 0.0,
                    u: out,
                };
                let rows: Vec<Vec<f64>> = jac
                    .iter()
                    .map(|r| r.iter().map(|e| e.eval(&env)).collect())
                    .collect();
                Matrix::from_rows(&rows).expect("square boundary Jacobian")
            }
            None => self.jacobian.clone(),
        }
    }

    fn node(u: &[Vec<f64>], j: usize, buf: &mut [f64]) {
        for (b, row) in buf.iter_mut().zip(u) {
            *b = row[j];
        }
    }

    /// −A u_x − B + d₂ at every node, with the given spatial derivative.
    fn time_derivative(&self, u: &[Vec<f64>], ux: &[Vec<f64>], dist: &DisturbanceSpec, t: f64) -> Vec<Vec<f64>> {
        let mut uj = vec![0.0; self.n];
        let mut out = vec![vec![0.0; self.points.len()]; self.n];
        for j in 0..self.points.len() {
            Self::node(u, j, &mut uj);
            for i in 0..self.n {
                out[i][j] = -self.speed(i, j, &uj) * ux[i][j] - self.source(i, j, &uj)
                    + dist.internal_at(i, t, self.points[j]);
            }
        }
        out
    }
}

/// Second-order centered differences inside, second-order one-sided at the
/// ends (two-point when only two nodes exist).
pub fn derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    if n < 2 {
        return d;
    }
    if n == 2 {
        let s = (values[1] - values[0]) / h;
        return vec![s, s];
    }
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    for j in 1..n - 1 {
        d[j] = (values[j + 1] - values[j - 1]) / (2.0 * h);
    }
    d
}

/// `(c0, c1)`: the sup norm and the sup norm plus the sup of |u′|.
pub fn c_norms(snapshot: &[Vec<f64>], grid: &SpatialGrid) -> (f64, f64) {
    let h = grid.spacing();
    let mut c0 = 0.0f64;
    let mut d1 = 0.0f64;
    for row in snapshot {
        c0 = row.iter().fold(c0, |a, v| a.max(v.abs()));
        d1 = derivative(row, h).iter().fold(d1, |a, v| a.max(v.abs()));
    }
    (c0, c0 + d1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityReport {
    /// |incoming − G(outgoing) − d(0)| per component.
    pub zeroth: Vec<f64>,
    /// Residual of the differentiated boundary relation per component.
    pub first: Vec<f64>,
    /// Per-component tolerance used for the first-order residual.
    pub first_tolerance: Vec<f64>,
}

impl CompatibilityReport {
    pub fn holds_zeroth(&self) -> bool {
        self.zeroth.iter().all(|r| *r <= COMPAT_TOL)
    }

    pub fn holds_first(&self) -> bool {
        self.first
            .iter()
            .zip(&self.first_tolerance)
            .all(|(r, tol)| r <= tol)
    }

    fn first_violation(&self, dy: &Dynamics) -> Option<SimError> {
        let pick = |res: &[f64], tol: &dyn Fn(usize) -> f64, order| {
            res.iter().enumerate().find(|(i, r)| **r > tol(*i)).map(|(i, r)| SimError::CompatibilityViolation {
                component: i + 1,
                x: dy.entry_x(i),
                order,
                residual: *r,
            })
        };
        pick(&self.zeroth, &|_| COMPAT_TOL, 0).or_else(|| pick(&self.first, &|i| self.first_tolerance[i], 1))
    }
}

fn validate_state(sys: &SystemSpec, u: &[Vec<f64>], grid: &SpatialGrid) -> Result<(), SimError> {
    if u.len() != sys.n() || u.iter().any(|r| r.len() != grid.count()) {
        return Err(SimError::DimensionMismatch(format!(
            "state must be {} arrays of {} values",
            sys.n(),
            grid.count()
        )));
    }
    if grid.count() < 3 {
        return Err(SimError::InvalidParameter("the grid needs at least 3 points".into()));
    }
    if (grid.length() - sys.length()).abs() > 1e-12 * sys.length() {
        return Err(SimError::DimensionMismatch(format!(
            "grid length {} differs from L = {}",
            grid.length(),
            sys.length()
        )));
    }
    if u.iter().flatten().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite(0.0));
    }
    Ok(())
}

/// Richardson estimate of the one-sided difference error at end node `j`:
/// the same stencil on spacing 2h against the value on spacing h.
fn end_error(row: &[f64], ux: &[f64], j: usize, h: f64) -> f64 {
    let k = row.len() - 1;
    if k < 4 {
        return 0.0;
    }
    let coarse = if j == 0 {
        (-3.0 * row[0] + 4.0 * row[2] - row[4]) / (4.0 * h)
    } else {
        (3.0 * row[k] - 4.0 * row[k - 2] + row[k - 4]) / (4.0 * h)
    };
    (coarse - ux[j]).abs()
}

fn compatibility(
    dy: &Dynamics,
    u0: &[Vec<f64>],
    dist: &DisturbanceSpec,
    h: f64,
) -> CompatibilityReport {
    let n = dy.n;
    let mut d0 = vec![0.0; n];
    dist.eval_boundary(0.0, &mut d0);
    let out = dy.outgoing(u0);
    let mut want = vec![0.0; n];
    dy.boundary_map(&out, &d0, &mut want);
    let zeroth: Vec<f64> = (0..n).map(|i| (u0[i][dy.entry_index(i)] - want[i]).abs()).collect();

    let ux: Vec<Vec<f64>> = u0.iter().map(|r| derivative(r, h)).collect();
    let ut = dy.time_derivative(u0, &ux, dist, 0.0);
    let out_t: Vec<f64> = (0..n).map(|i| ut[i][dy.exit_index(i)]).collect();
    let jac = dy.boundary_jacobian(&out);
    let dprime: Vec<f64> = dist.boundary.iter().map(|f| f.derivative().eval(0.0, h)).collect();
    let mut want_t = vec![0.0; n];
    jac.mul_vec(&out_t, &mut want_t);
    let mut first = Vec::with_capacity(n);
    let mut first_tolerance = Vec::with_capacity(n);
    let mut uj = vec![0.0; n];
    for i in 0..n {
        let e = dy.entry_index(i);
        first.push((ut[i][e] - want_t[i] - dprime[i]).abs());
        Dynamics::node(u0, e, &mut uj);
        let mut tol = COMPAT_TOL + dy.speed(i, e, &uj).abs() * end_error(&u0[i], &ux[i], e, h);
        for k in 0..n {
            let x = dy.exit_index(k);
            Dynamics::node(u0, x, &mut uj);
            tol += jac[(i, k)].abs() * dy.speed(k, x, &uj).abs() * end_error(&u0[k], &ux[k], x, h);
        }
        first_tolerance.push(tol);
    }
    CompatibilityReport {
        zeroth,
        first,
        first_tolerance,
    }
}

/// Checks the zeroth- and first-order compatibility conditions of `u0`.
pub fn check_compatibility(
    sys: &SystemSpec,
    mode: SimMode,
    u0: &[Vec<f64>],
    dist: &DisturbanceSpec,
    grid: &SpatialGrid,
) -> Result<CompatibilityReport, SimError> {
    validate_state(sys, u0, grid)?;
    dist.validate(sys.n())?;
    let dy = Dynamics::new(sys, mode, grid)?;
    Ok(compatibility(&dy, u0, dist, grid.spacing()))
}

/// Adds smooth bumps near the inflow ends so that `u0` satisfies both
/// compatibility conditions on the discrete grid.
pub fn make_compatible(
    sys: &SystemSpec,
    mode: SimMode,
    u0: &[Vec<f64>],
    dist: &DisturbanceSpec,
    grid: &SpatialGrid,
) -> Result<Vec<Vec<f64>>, SimError> {
    validate_state(sys, u0, grid)?;
    dist.validate(sys.n())?;
    let dy = Dynamics::new(sys, mode, grid)?;
    let h = grid.spacing();
    let len = grid.length();
    let width = (0.1 * len).max(4.0 * h).min(len);
    let pts = grid.points();
    let mut u = u0.to_vec();
    let n = dy.n;

    // Value bump φ = (1 − s)³ and slope bump ψ = s(1 − s)³, s = distance/width.
    let bump = |i: usize, slope: bool| -> Vec<f64> {
        pts.iter()
            .map(|&x| {
                let dist_x = if i < dy.m { x } else { len - x };
                let s = dist_x / width;
                if s >= 1.0 {
                    0.0
                } else if slope {
                    width * s * (1.0 - s).powi(3)
                } else {
                    (1.0 - s).powi(3)
                }
            })
            .collect()
    };

    let mut d0 = vec![0.0; n];
    dist.eval_boundary(0.0, &mut d0);
    let out = dy.outgoing(&u);
    let mut want = vec![0.0; n];
    dy.boundary_map(&out, &d0, &mut want);
    for i in 0..n {
        let e = dy.entry_index(i);
        let shift = want[i] - u[i][e];
        for (v, b) in u[i].iter_mut().zip(bump(i, false)) {
            *v += shift * b;
        }
    }

    // The slope bumps vanish at the boundary, so the zeroth-order values
    // and hence B at the boundary nodes are unchanged. Incoming slopes only
    // feed their own residuals, so one linear solve per component suffices.
    let ux: Vec<Vec<f64>> = u.iter().map(|r| derivative(r, h)).collect();
    let ut = dy.time_derivative(&u, &ux, dist, 0.0);
    let out = dy.outgoing(&u);
    let out_t: Vec<f64> = (0..n).map(|i| ut[i][dy.exit_index(i)]).collect();
    let mut want_t = vec![0.0; n];
    dy.boundary_jacobian(&out).mul_vec(&out_t, &mut want_t);
    let mut uj = vec![0.0; n];
    for i in 0..n {
        let e = dy.entry_index(i);
        let target = want_t[i] + dist.boundary[i].derivative().eval(0.0, h);
        Dynamics::node(&u, e, &mut uj);
        let lam = dy.speed(i, e, &uj);
        let psi = bump(i, true);
        let dpsi = derivative(&psi, h)[e];
        // ut_i(e) changes by −λ c ψ′ when c ψ is added.
        let c = (ut[i][e] - target) / (lam * dpsi);
        if c.is_finite() {
            for (v, b) in u[i].iter_mut().zip(&psi) {
                *v += c * b;
            }
        }
    }
    Ok(u)
}

/// Weights and exponents for the Lyapunov functionals along a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovConfig {
    pub f: FProfile,
    pub mu: f64,
    pub ps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSample {
    /// W_{1,p} for each configured p.
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub cfl: f64,
    /// Snapshot spacing in time; defaults to T/200.
    pub record_dt: Option<f64>,
    /// Compatibility violations become errors instead of warnings.
    pub strict: bool,
    pub lyapunov: Option<LyapunovConfig>,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            cfl: MAX_CFL,
            record_dt: None,
            strict: false,
            lyapunov: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mode: SimMode,
    pub grid: SpatialGrid,
    pub times: Vec<f64>,
    /// `snapshots[k][i][j]` = u_i(times[k], x_j).
    pub snapshots: Vec<Vec<Vec<f64>>>,
    pub c0_norms: Vec<f64>,
    pub c1_norms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov_ps: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<Vec<LyapunovSample>>,
    /// Every solver time level, including the snapshot times.
    pub step_times: Vec<f64>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("trajectory holds t = 0")
    }
}

/// f resampled on `grid` by linear interpolation.
pub fn resample_f(f: &FProfile, grid: &SpatialGrid) -> Result<Vec<Vec<f64>>, SimError> {
    if (f.grid.length() - grid.length()).abs() > 1e-12 * grid.length() {
        return Err(SimError::DimensionMismatch(format!(
            "f is defined on [0, {}], grid on [0, {}]",
            f.grid.length(),
            grid.length()
        )));
    }
    if f.blow_up.is_some() {
        return Err(SimError::InvalidParameter("f blows up inside the domain".into()));
    }
    Ok(f.values
        .iter()
        .map(|row| {
            let samples: Vec<[f64; 2]> = f.grid.points().iter().zip(row).map(|(x, v)| [*x, *v]).collect();
            grid.points().iter().map(|&x| interpolate(&samples, x)).collect()
        })
        .collect())
}

/// log(√f_i e^{−μ s_i x_j}).
fn log_weights(f_on_grid: &[Vec<f64>], grid: &SpatialGrid, mu: f64, o: &Orientation) -> Vec<Vec<f64>> {
    f_on_grid
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .zip(grid.points())
                .map(|(f, x)| 0.5 * f.ln() - mu * o.s[i] * x)
                .collect()
        })
        .collect()
}

/// (∫ Σ_i (w_i |g_i|)^{2p} dx)^{1/2p} by the trapezoid rule in log-sum-exp form.
fn weighted_lp(g: &[Vec<f64>], logw: &[Vec<f64>], h: f64, p: f64) -> Result<f64, SimError> {
    let mut terms = Vec::new();
    for (row, lw) in g.iter().zip(logw) {
        let last = row.len() - 1;
        for (j, (v, w)) in row.iter().zip(lw).enumerate() {
            if *v == 0.0 {
                continue;
            }
            let q = if j == 0 || j == last { 0.5 * h } else { h };
            terms.push(2.0 * p * (w + v.abs().ln()) + q.ln());
        }
    }
    if terms.is_empty() {
        return Ok(0.0);
    }
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - top).exp()).sum();
    let r = ((top + sum.ln()) / (2.0 * p)).exp();
    if r.is_finite() {
        Ok(r)
    } else {
        Err(SimError::OverflowUnavoidable(p))
    }
}

fn weighted_sup(g: &[Vec<f64>], logw: &[Vec<f64>]) -> f64 {
    g.iter()
        .zip(logw)
        .flat_map(|(row, lw)| row.iter().zip(lw).map(|(v, w)| v.abs() * w.exp()))
        .fold(0.0, f64::max)
}

/// A u_x with the given per-node speeds.
fn transport(snapshot: &[Vec<f64>], speeds: &[Vec<f64>], h: f64) -> Vec<Vec<f64>> {
    snapshot
        .iter()
        .zip(speeds)
        .map(|(row, s)| derivative(row, h).iter().zip(s).map(|(d, l)| d * l).collect())
        .collect()
}

/// `(W_{1,p}, W_{2,p})` with E = identity and ∂_t u replaced by −A u_x.
///
/// `speeds[i][j]` is the diagonal of A at node j for this snapshot.
pub fn lyapunov_w(
    snapshot: &[Vec<f64>],
    grid: &SpatialGrid,
    speeds: &[Vec<f64>],
    f: &FProfile,
    mu: f64,
    p: f64,
    o: &Orientation,
) -> Result<(f64, f64), SimError> {
    if !(p >= 1.0) {
        return Err(SimError::InvalidParameter(format!("p = {p} must be at least 1")));
    }
    let logw = log_weights(&resample_f(f, grid)?, grid, mu, o);
    let h = grid.spacing();
    Ok((
        weighted_lp(snapshot, &logw, h, p)?,
        weighted_lp(&transport(snapshot, speeds, h), &logw, h, p)?,
    ))
}

/// V: weighted sup of u plus weighted sup of A u_x.
pub fn lyapunov_v(
    snapshot: &[Vec<f64>],
    grid: &SpatialGrid,
    speeds: &[Vec<f64>],
    f: &FProfile,
    mu: f64,
    o: &Orientation,
) -> Result<f64, SimError> {
    let logw = log_weights(&resample_f(f, grid)?, grid, mu, o);
    let h = grid.spacing();
    Ok(weighted_sup(snapshot, &logw) + weighted_sup(&transport(snapshot, speeds, h), &logw))
}

/// Diagonal of A at every node for `snapshot` under `mode`.
pub fn node_speeds(
    sys: &SystemSpec,
    mode: SimMode,
    snapshot: &[Vec<f64>],
    grid: &SpatialGrid,
) -> Result<Vec<Vec<f64>>, SimError> {
    validate_state(sys, snapshot, grid)?;
    let dy = Dynamics::new(sys, mode, grid)?;
    Ok(dy.speeds(snapshot))
}

impl Dynamics {
    fn speeds(&self, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut uj = vec![0.0; self.n];
        let mut out = vec![vec![0.0; self.points.len()]; self.n];
        for j in 0..self.points.len() {
            Self::node(u, j, &mut uj);
            for (i, row) in out.iter_mut().enumerate() {
                row[j] = self.speed(i, j, &uj);
            }
        }
        out
    }
}

/// Advances u0 to time `horizon` with explicit first-order upwinding.
pub fn simulate(
    sys: &SystemSpec,
    u0: &[Vec<f64>],
    dist: &DisturbanceSpec,
    grid: &SpatialGrid,
    horizon: f64,
    mode: SimMode,
    opts: &SimOptions,
) -> Result<Trajectory, SimError> {
    if !(opts.cfl > 0.0 && opts.cfl <= MAX_CFL) {
        return Err(SimError::CflViolation(opts.cfl));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(SimError::InvalidParameter(format!("T = {horizon}")));
    }
    validate_state(sys, u0, grid)?;
    dist.validate(sys.n())?;
    if dist.horizon() < horizon {
        return Err(SimError::HorizonMismatch {
            needed: horizon,
            available: dist.horizon(),
        });
    }
    let record_dt = opts.record_dt.unwrap_or(horizon / 200.0);
    if !(record_dt > 0.0) {
        return Err(SimError::InvalidParameter(format!("record_dt = {record_dt}")));
    }
    let dy = Dynamics::new(sys, mode, grid)?;
    let n = dy.n;
    let h = grid.spacing();
    let count = grid.count();
    let o = sys.orientation();

    let mut warnings = Vec::new();
    let compat = compatibility(&dy, u0, dist, h);
    if let Some(err) = compat.first_violation(&dy) {
        if opts.strict {
            return Err(err);
        }
        warnings.push(err.to_string());
    }

    let lyap = match &opts.lyapunov {
        Some(cfg) => {
            if cfg.ps.iter().any(|p| !(*p >= 1.0)) {
                return Err(SimError::InvalidParameter("every p must be at least 1".into()));
            }
            Some((log_weights(&resample_f(&cfg.f, grid)?, grid, cfg.mu, &o), cfg))
        }
        None => None,
    };

    let mut traj = Trajectory {
        mode,
        grid: grid.clone(),
        times: Vec::new(),
        snapshots: Vec::new(),
        c0_norms: Vec::new(),
        c1_norms: Vec::new(),
        lyapunov_ps: lyap.as_ref().map(|(_, c)| c.ps.clone()),
        lyapunov: lyap.as_ref().map(|_| Vec::new()),
        step_times: vec![0.0],
        warnings,
    };
    let record = |traj: &mut Trajectory, t: f64, u: &[Vec<f64>]| -> Result<(), SimError> {
        let (c0, c1) = c_norms(u, grid);
        traj.times.push(t);
        traj.snapshots.push(u.to_vec());
        traj.c0_norms.push(c0);
        traj.c1_norms.push(c1);
        if let (Some((logw, cfg)), Some(samples)) = (&lyap, traj.lyapunov.as_mut()) {
            let au = transport(u, &dy.speeds(u), h);
            let mut w1 = Vec::with_capacity(cfg.ps.len());
            let mut w2 = Vec::with_capacity(cfg.ps.len());
            for &p in &cfg.ps {
                w1.push(weighted_lp(u, logw, h, p)?);
                w2.push(weighted_lp(&au, logw, h, p)?);
            }
            let v = weighted_sup(u, logw) + weighted_sup(&au, logw);
            samples.push(LyapunovSample { w1, w2, v });
        }
        Ok(())
    };

    let mut u = u0.to_vec();
    let mut next = u0.to_vec();
    let mut uj = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut incoming = vec![0.0; n];
    let mut speeds = dy.speeds(&u);
    let max_speed = |s: &[Vec<f64>]| s.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let fixed_dt = opts.cfl * h / max_speed(&speeds);

    record(&mut traj, 0.0, &u)?;
    let mut t = 0.0;
    let mut k = 1usize;
    while t < horizon {
        let target = (k as f64 * record_dt).min(horizon);
        let dt_cfl = if dy.speed.is_some() {
            opts.cfl * h / max_speed(&speeds)
        } else {
            fixed_dt
        };
        let last = target - t <= dt_cfl * (1.0 + 1e-9);
        let dt = if last { target - t } else { dt_cfl };
        for j in 0..count {
            Dynamics::node(&u, j, &mut uj);
            for i in 0..n {
                let lam = speeds[i][j];
                let ux = if (lam >= 0.0 && j > 0) || j == count - 1 {
                    (u[i][j] - u[i][j - 1]) / h
                } else {
                    (u[i][j + 1] - u[i][j]) / h
                };
                next[i][j] = u[i][j]
                    - dt * (lam * ux + dy.source(i, j, &uj) - dist.internal_at(i, t, dy.points[j]));
            }
        }
        let t_new = if last { target } else { t + dt };
        let out = dy.outgoing(&next);
        dist.eval_boundary(t_new, &mut d);
        if let Some(bound) = dist.bound {
            if let Some((i, v)) = d.iter().enumerate().find(|(_, v)| v.abs() > bound * (1.0 + 1e-12)) {
                return Err(SimError::DisturbanceBound {
                    component: i + 1,
                    t: t_new,
                    value: *v,
                    bound,
                });
            }
        }
        dy.boundary_map(&out, &d, &mut incoming);
        for i in 0..n {
            let e = dy.entry_index(i);
            next[i][e] = incoming[i];
        }
        std::mem::swap(&mut u, &mut next);
        t = t_new;
        if u.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SimError::NonFinite(t));
        }
        traj.step_times.push(t);
        if dy.speed.is_some() {
            speeds = dy.speeds(&u);
        }
        if last {
            record(&mut traj, t, &u)?;
            k += 1;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeGains {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub holds: bool,
    pub worst_time: f64,
    /// Largest LHS/RHS over snapshot times with RHS > 0.
    pub worst_ratio: f64,
    pub gains: EnvelopeGains,
    /// Some snapshot had RHS = 0 and was left out of the ratio.
    pub vacuous_window: bool,
    pub vacuous_times: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fitted: Option<EnvelopeGains>,
}

/// Per-step disturbance magnitudes: sup over components of |d|, |d′| and,
/// for d₂, the sup over x of |d₂| and |∂_t d₂|.
struct History {
    times: Vec<f64>,
    levels: Vec<[f64; 2]>,
    /// Index into `times` of each snapshot.
    snapshot_steps: Vec<usize>,
    lhs: Vec<f64>,
    initial: f64,
}

fn history(traj: &Trajectory, dist: &DisturbanceSpec, q: usize) -> Result<History, SimError> {
    if q > 1 {
        return Err(SimError::InvalidParameter(format!("q = {q}; only 0 and 1 are supported")));
    }
    if traj.times.is_empty() {
        return Err(SimError::InvalidParameter("empty trajectory".into()));
    }
    let needed = traj.horizon();
    if dist.horizon() < needed {
        return Err(SimError::HorizonMismatch {
            needed,
            available: dist.horizon(),
        });
    }
    let n = traj.snapshots[0].len();
    dist.validate(n)?;
    let times = &traj.step_times;
    if times.last().copied() != Some(needed) {
        return Err(SimError::HorizonMismatch {
            needed,
            available: times.last().copied().unwrap_or(0.0),
        });
    }
    let derivs: Vec<TimeDerivative> = dist.boundary.iter().map(TimeFunction::derivative).collect();
    let internal_t: Option<Vec<Expr>> = dist
        .internal
        .as_ref()
        .map(|v| v.iter().map(|e| e.derivative(Var::T)).collect());
    let cadence = if times.len() > 1 { times[1] - times[0] } else { 1e-3 };
    let xs = traj.grid.points();
    let mut levels = Vec::with_capacity(times.len());
    for &t in times {
        let mut level = [0.0f64; 2];
        for (f, df) in dist.boundary.iter().zip(&derivs) {
            level[0] = level[0].max(f.eval(t).abs());
            if q == 1 {
                level[1] = level[1].max(df.eval(t, cadence).abs());
            }
        }
        if let Some(int) = &dist.internal {
            let (mut s0, mut s1) = (0.0f64, 0.0f64);
            for &x in xs {
                let env = Env { x, t, u: &[] };
                for (k, e) in int.iter().enumerate() {
                    s0 = s0.max(e.eval(&env).abs());
                    if q == 1 {
                        s1 = s1.max(internal_t.as_ref().expect("set with internal")[k].eval(&env).abs());
                    }
                }
            }
            level[0] += s0;
            level[1] += s1;
        }
        levels.push(level);
    }
    let mut snapshot_steps = Vec::with_capacity(traj.times.len());
    for &t in &traj.times {
        let k = times.partition_point(|s| *s < t);
        if k >= times.len() || times[k] != t {
            return Err(SimError::HorizonMismatch {
                needed: t,
                available: times[k.min(times.len() - 1)],
            });
        }
        snapshot_steps.push(k);
    }
    let lhs = if q == 0 {
        traj.c0_norms.clone()
    } else {
        traj.c1_norms.clone()
    };
    Ok(History {
        times: times.clone(),
        levels,
        snapshot_steps,
        initial: lhs[0],
        lhs,
    })
}

impl History {
    /// Fading-memory disturbance term at each snapshot.
    fn fading(&self, gamma: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.snapshot_steps.len());
        let mut run = [0.0f64; 2];
        let mut s = 0;
        for (k, (t, level)) in self.times.iter().zip(&self.levels).enumerate() {
            if k > 0 {
                let decay = (-gamma * (t - self.times[k - 1])).exp();
                run[0] *= decay;
                run[1] *= decay;
            }
            run[0] = run[0].max(level[0]);
            run[1] = run[1].max(level[1]);
            while s < self.snapshot_steps.len() && self.snapshot_steps[s] == k {
                out.push(run[0] + run[1]);
                s += 1;
            }
        }
        out
    }

    fn snapshot_time(&self, s: usize) -> f64 {
        self.times[self.snapshot_steps[s]]
    }

    fn rhs(&self, g: &EnvelopeGains, fading: &[f64], s: usize) -> f64 {
        g.c1 * (-g.gamma * self.snapshot_time(s)).exp() * self.initial + g.c2 * fading[s]
    }

    fn evaluate(&self, g: &EnvelopeGains) -> EnvelopeReport {
        let fading = self.fading(g.gamma);
        let mut worst_ratio = 0.0f64;
        let mut worst_time = 0.0;
        let mut vacuous = 0;
        for s in 0..self.lhs.len() {
            let rhs = self.rhs(g, &fading, s);
            if rhs > 0.0 {
                let r = self.lhs[s] / rhs;
                if r > worst_ratio {
                    worst_ratio = r;
                    worst_time = self.snapshot_time(s);
                }
            } else if self.lhs[s] > 0.0 {
                vacuous += 1;
            }
        }
        EnvelopeReport {
            holds: worst_ratio <= 1.0,
            worst_time,
            worst_ratio,
            gains: *g,
            vacuous_window: vacuous > 0,
            vacuous_times: vacuous,
            fitted: None,
        }
    }
}

/// Checks ‖u(t)‖_{C^q} ≤ C₁e^{−γt}‖u₀‖_{C^q} + C₂ Σ_k sup_τ e^{−γ(t−τ)}|d^{(k)}(τ)|
/// (plus the d₂ terms) at every snapshot.
pub fn envelope_check(
    traj: &Trajectory,
    dist: &DisturbanceSpec,
    gains: &EnvelopeGains,
    q: usize,
) -> Result<EnvelopeReport, SimError> {
    Ok(history(traj, dist, q)?.evaluate(gains))
}

/// Fits (C₁, C₂, γ > 0) jointly over several trajectories, then rescales C₁
/// and C₂ by a common factor so that the envelope holds on every one.
///
/// The fit minimizes squared log residuals ln(LHS/RHS), with violations
/// weighted 10³ times more than slack.
pub fn envelope_fit(items: &[(&Trajectory, &DisturbanceSpec)], q: usize) -> Result<EnvelopeGains, SimError> {
    if items.is_empty() {
        return Err(SimError::InvalidParameter("no trajectories to fit".into()));
    }
    let hist: Vec<History> = items
        .iter()
        .map(|(t, d)| history(t, d, q))
        .collect::<Result<_, _>>()?;
    let max_lhs = hist.iter().flat_map(|h| h.lhs.iter()).cloned().fold(0.0, f64::max);
    let max_init = hist.iter().map(|h| h.initial).fold(0.0, f64::max);
    let max_d = hist
        .iter()
        .flat_map(|h| h.levels.iter().map(|l| l[0] + l[1]))
        .fold(0.0, f64::max);
    if max_lhs == 0.0 {
        return Ok(EnvelopeGains {
            c1: 1.0,
            c2: 1.0,
            gamma: 1.0,
        });
    }
    let gains_of = |x: &[f64]| EnvelopeGains {
        c1: x[0].exp(),
        c2: x[1].exp(),
        gamma: x[2].exp(),
    };
    let loss = |x: &[f64]| {
        let g = gains_of(x);
        let mut total = 0.0;
        let mut count = 0usize;
        for h in &hist {
            let fading = h.fading(g.gamma);
            for s in 0..h.lhs.len() {
                if h.lhs[s] <= 0.0 {
                    continue;
                }
                let rhs = h.rhs(&g, &fading, s);
                let r = (h.lhs[s] / rhs).ln();
                total += if r > 0.0 { 1e3 * r * r } else { (r * r).min(25.0) };
                count += 1;
            }
        }
        total / count.max(1) as f64
    };
    let c1_0 = if max_init > 0.0 { 1.0 } else { max_lhs };
    let c2_0 = if max_d > 0.0 { max_lhs / max_d } else { 1.0 };
    let mut best: Option<crate::optim::Minimum> = None;
    for g0 in [0.01f64, 0.1, 1.0] {
        let x0 = [c1_0.ln(), c2_0.ln(), g0.ln()];
        let r = nelder_mead(loss, &x0, 0.5, 1e-10, 1500);
        if best.as_ref().is_none_or(|b| r.value < b.value) {
            best = Some(r);
        }
    }
    let mut g = gains_of(&best.expect("three starts").x);
    let worst = hist
        .iter()
        .map(|h| h.evaluate(&g).worst_ratio)
        .fold(0.0, f64::max);
    if worst > 0.0 {
        let scale = worst * (1.0 + 1e-12);
        g.c1 *= scale;
        g.c2 *= scale;
    }
    Ok(g)
}

/// Fitting-mode envelope check for a single trajectory.
pub fn envelope_fit_check(traj: &Trajectory, dist: &DisturbanceSpec, q: usize) -> Result<EnvelopeReport, SimError> {
    let g = envelope_fit(&[(traj, dist)], q)?;
    let mut report = envelope_check(traj, dist, &g, q)?;
    report.fitted = Some(g);
    Ok(report)
}

/// Largest γ with values[t] ≤ c·values[s]·e^{−γ(t−s)} for all s < t;
/// +∞ when no pair constrains it.
pub fn decay_rate(times: &[f64], values: &[f64], c: f64) -> f64 {
    let mut rate = f64::INFINITY;
    for t in 1..times.len() {
        if values[t] <= 0.0 {
            continue;
        }
        for s in 0..t {
            let dt = times[t] - times[s];
            if dt <= 0.0 {
                continue;
            }
            rate = rate.min((c * values[s] / values[t]).ln() / dt);
        }
    }
    rate
}
