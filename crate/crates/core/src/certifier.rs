//! Weight functions, interior and boundary conditions, certificates and gains.
//!
//! The interior inequality is integrated with equality from x = 0. Because
//! the weight system is 1-homogeneous in f, only the ratios of the initial
//! values matter.

use crate::linalg::Matrix;
use crate::model::{sample_coefficients, ModelError, Orientation, SpatialGrid, SystemSpec};
use crate::ode::{self, Adaptive};
use crate::optim::nelder_mead;
use crate::scaling::{rho_inf, scaled_inf_norm, ScalingError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const OVERFLOW_CAP: f64 = 1e12;
pub const POSITIVITY_FLOOR: f64 = 1e-12;
const ALPHA_CAP: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertError {
    #[error("initial value {index} is not strictly positive ({value})")]
    NonPositiveInit { index: usize, value: f64 },
    #[error("weight profile blows up at x = {0}")]
    BlowUpPresent(f64),
    #[error("mu must be positive, got {0}")]
    NonPositiveMu(f64),
    #[error("expected {expected} initial values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Sampled weights f_i on a grid. `values[i]` holds f_i at every grid point
/// reached before blow-up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FProfile {
    pub grid: SpatialGrid,
    pub values: Vec<Vec<f64>>,
    pub blow_up: Option<f64>,
}

impl FProfile {
    /// f_i ≡ c_i.
    pub fn constant(grid: SpatialGrid, c: &[f64]) -> Self {
        let values = c.iter().map(|&v| vec![v; grid.count()]).collect();
        FProfile {
            grid,
            values,
            blow_up: None,
        }
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn is_complete(&self) -> bool {
        self.blow_up.is_none()
    }

    /// f_i at the endpoint `x`, which must be 0 or L.
    pub fn endpoint(&self, i: usize, x: f64) -> f64 {
        if x == 0.0 {
            self.values[i][0]
        } else {
            self.values[i][self.values[i].len() - 1]
        }
    }

    /// f_i(l_i): value where component i leaves the domain.
    pub fn exit(&self, i: usize, o: &Orientation) -> f64 {
        self.endpoint(i, o.l[i])
    }

    /// f_i(L − l_i): value where component i enters the domain.
    pub fn entry(&self, i: usize, o: &Orientation) -> f64 {
        if o.l[i] == 0.0 {
            self.endpoint(i, self.grid.length())
        } else {
            self.endpoint(i, 0.0)
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        FProfile {
            grid: self.grid.clone(),
            values: self
                .values
                .iter()
                .map(|r| r.iter().map(|v| v * c).collect())
                .collect(),
            blow_up: self.blow_up,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Location {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<f64>,
}

/// Outcome of one inequality check. `holds` ⇔ `margin > −tolerance`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub holds: bool,
    pub margin: f64,
    pub tolerance: f64,
    pub worst_location: Location,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ratio: Option<f64>,
}

impl ConditionReport {
    fn strict(margin: f64, worst_location: Location) -> Self {
        ConditionReport {
            holds: margin > 0.0,
            margin,
            tolerance: 0.0,
            worst_location,
            theta: None,
            ratio: None,
        }
    }
}

// Right side of the equality system, with constant coefficients cached.
struct FRhs<'a> {
    sys: &'a SystemSpec,
    lambda: Vec<Option<f64>>,
    source: Vec<Vec<Option<f64>>>,
}

impl<'a> FRhs<'a> {
    fn new(sys: &'a SystemSpec) -> Self {
        FRhs {
            sys,
            lambda: sys.lambda_coefficients().iter().map(|c| c.as_constant()).collect(),
            source: sys
                .source_coefficients()
                .iter()
                .map(|r| r.iter().map(|c| c.as_constant()).collect())
                .collect(),
        }
    }

    fn lambda(&self, i: usize, x: f64) -> f64 {
        self.lambda[i].unwrap_or_else(|| self.sys.lambda(i, x))
    }

    fn m(&self, i: usize, k: usize, x: f64) -> f64 {
        self.source[i][k].unwrap_or_else(|| self.sys.source_entry(i, k, x))
    }

    /// −2(−M_ii f_i + Σ_{k≠i} |M_ik| f_i^{3/2}/√f_k).
    fn bound(&self, i: usize, x: f64, f: &[f64]) -> f64 {
        let mut s = -self.m(i, i, x) * f[i];
        for k in 0..f.len() {
            if k != i {
                let mik = self.m(i, k, x);
                if mik != 0.0 {
                    s += mik.abs() * f[i] * (f[i] / f[k]).sqrt();
                }
            }
        }
        -2.0 * s
    }

    fn eval(&self, x: f64, f: &[f64], d: &mut [f64]) {
        for i in 0..f.len() {
            d[i] = self.bound(i, x, f) / self.lambda(i, x);
        }
    }
}

fn f_options() -> Adaptive {
    Adaptive {
        rtol: 1e-11,
        atol: 0.0,
        h_max: 1e-2,
        cap: OVERFLOW_CAP,
        floor: Some(POSITIVITY_FLOOR),
    }
}

/// Integrates the interior inequality taken with equality, all components
/// anchored at x = 0.
pub fn integrate_f_system(
    sys: &SystemSpec,
    init: &[f64],
    grid: &SpatialGrid,
) -> Result<FProfile, CertError> {
    integrate_with(sys, init, grid, &f_options())
}

fn integrate_with(
    sys: &SystemSpec,
    init: &[f64],
    grid: &SpatialGrid,
    opts: &Adaptive,
) -> Result<FProfile, CertError> {
    let n = sys.n();
    if init.len() != n {
        return Err(CertError::DimensionMismatch {
            expected: n,
            got: init.len(),
        });
    }
    for (index, &value) in init.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(CertError::NonPositiveInit { index, value });
        }
    }
    let rhs = FRhs::new(sys);
    let h_max = opts.h_max.min(grid.spacing());
    let opts = Adaptive { h_max, ..*opts };
    let sol = ode::integrate(|x, f, d| rhs.eval(x, f, d), init, grid.points(), &opts);
    let mut values = vec![Vec::with_capacity(sol.ys.len()); n];
    for y in &sol.ys {
        for i in 0..n {
            values[i].push(y[i]);
        }
    }
    Ok(FProfile {
        grid: grid.clone(),
        values,
        blow_up: sol.blow_up.map(|x| x.max(f64::MIN_POSITIVE)),
    })
}

/// Checks the interior inequality Λ_i f_i' ≤ −2(−M_ii f_i + Σ|M_ik| f_i^{3/2}/√f_k)
/// at every grid point.
///
/// f_i' uses second-order differences (centered inside, one-sided at the
/// ends). The tolerance at each point is 1e−9 plus |Λ_i| times the gap
/// between the h and 2h difference quotients, so equality solutions pass.
pub fn check_interior(sys: &SystemSpec, f: &FProfile) -> Result<ConditionReport, CertError> {
    if let Some(x) = f.blow_up {
        return Err(CertError::BlowUpPresent(x));
    }
    let grid = &f.grid;
    let tables = sample_coefficients(sys, grid)?;
    let rhs = FRhs::new(sys);
    let pts = grid.points();
    let n = f.n();
    let h = grid.spacing();
    let mut worst: Option<(f64, f64, f64, Location)> = None;
    let mut fj = vec![0.0; n];
    for (j, &x) in pts.iter().enumerate() {
        for (i, fv) in fj.iter_mut().enumerate() {
            *fv = f.values[i][j];
        }
        for i in 0..n {
            let v = &f.values[i];
            let (d1, d2) = derivative_pair(v, j, h);
            let lam = tables.lambda[i][j];
            let lhs = lam * d1;
            let bound = rhs.bound(i, x, &fj);
            let slack = bound - lhs;
            let tol = 1e-9 + d2.map_or(0.0, |d2| lam.abs() * (d1 - d2).abs());
            let key = slack + tol;
            if worst.as_ref().is_none_or(|w| key < w.0) {
                worst = Some((
                    key,
                    slack,
                    tol,
                    Location {
                        component: Some(i + 1),
                        x: Some(x),
                    },
                ));
            }
        }
    }
    let (key, margin, tolerance, loc) = worst.unwrap_or((1.0, 0.0, 1e-9, Location::default()));
    Ok(ConditionReport {
        holds: key > 0.0,
        margin,
        tolerance,
        worst_location: loc,
        theta: None,
        ratio: None,
    })
}

// Derivative at index j with step h, and the same stencil at step 2h when the
// grid allows it.
fn derivative_pair(v: &[f64], j: usize, h: f64) -> (f64, Option<f64>) {
    let n = v.len();
    if n < 3 {
        return ((v[1] - v[0]) / h, None);
    }
    if j == 0 {
        let d1 = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
        let d2 = (n >= 5).then(|| (-3.0 * v[0] + 4.0 * v[2] - v[4]) / (4.0 * h));
        (d1, d2)
    } else if j == n - 1 {
        let d1 = (3.0 * v[j] - 4.0 * v[j - 1] + v[j - 2]) / (2.0 * h);
        let d2 = (n >= 5).then(|| (3.0 * v[j] - 4.0 * v[j - 2] + v[j - 4]) / (4.0 * h));
        (d1, d2)
    } else {
        let d1 = (v[j + 1] - v[j - 1]) / (2.0 * h);
        let d2 = if j >= 2 && j + 2 < n {
            Some((v[j + 2] - v[j - 2]) / (4.0 * h))
        } else if n >= 5 {
            // Near an end: compare with the one-sided stencil instead.
            Some(if j < 2 {
                (-3.0 * v[j] + 4.0 * v[j + 1] - v[j + 2]) / (2.0 * h)
            } else {
                (3.0 * v[j] - 4.0 * v[j - 1] + v[j - 2]) / (2.0 * h)
            })
        } else {
            None
        };
        (d1, d2)
    }
}

/// θ = ‖ΔJΔ⁻¹‖∞ against inf_i(f_i(l_i)/Δ_i²) / sup_i(f_i(L−l_i)/Δ_i²).
pub fn check_boundary(
    f: &FProfile,
    j: &Matrix,
    delta: &[f64],
    o: &Orientation,
) -> Result<ConditionReport, CertError> {
    let theta = scaled_inf_norm(j, delta)?;
    let ratio = boundary_ratio(f, delta, o);
    let mut r = ConditionReport::strict(ratio - theta, Location::default());
    r.theta = Some(theta);
    r.ratio = Some(ratio);
    Ok(r)
}

fn boundary_ratio(f: &FProfile, delta: &[f64], o: &Orientation) -> f64 {
    let n = f.n();
    let num = (0..n)
        .map(|i| f.exit(i, o) / (delta[i] * delta[i]))
        .fold(f64::INFINITY, f64::min);
    let den = (0..n)
        .map(|i| f.entry(i, o) / (delta[i] * delta[i]))
        .fold(0.0, f64::max);
    num / den
}

/// Row-wise boundary condition max_i Σ_j |J_ij| √(f_i(L−l_i) / f_j(l_j)) < 1.
///
/// Each row compares the weight where component i enters with the weights
/// where the components feeding it leave. It is implied by
/// [`check_boundary`] whenever that ratio is at most 1, and for 2×2 systems
/// it coincides with the explicit Riccati condition. `theta` holds the
/// largest row sum and `ratio` is 1.
pub fn check_boundary_sharp(f: &FProfile, j: &Matrix, o: &Orientation) -> ConditionReport {
    let n = f.n();
    let mut theta: f64 = 0.0;
    let mut worst = 0;
    for i in 0..n {
        let fi = f.entry(i, o);
        let row: f64 = (0..n)
            .map(|k| {
                let jik = j[(i, k)].abs();
                if jik == 0.0 {
                    0.0
                } else {
                    jik * (fi / f.exit(k, o)).sqrt()
                }
            })
            .sum();
        if row > theta {
            theta = row;
            worst = i;
        }
    }
    let mut r = ConditionReport::strict(
        1.0 - theta,
        Location {
            component: Some(worst + 1),
            x: None,
        },
    );
    r.theta = Some(theta);
    r.ratio = Some(1.0);
    r
}

/// Maximizes the margin of [`check_boundary`] over positive diagonals.
pub fn search_delta(f: &FProfile, j: &Matrix, o: &Orientation) -> (Vec<f64>, ConditionReport) {
    let n = f.n();
    let margin = |delta: &[f64]| {
        let theta = scaled_inf_norm(j, delta).unwrap_or(f64::INFINITY);
        boundary_ratio(f, delta, o) - theta
    };
    let mut seeds: Vec<Vec<f64>> = vec![rho_inf(j).delta, vec![1.0; n]];
    seeds.push((0..n).map(|i| f.exit(i, o).sqrt()).collect());
    seeds.push((0..n).map(|i| f.entry(i, o).sqrt()).collect());
    let mut best = (f64::NEG_INFINITY, vec![1.0; n]);
    for s in seeds {
        if s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            continue;
        }
        let v = margin(&s);
        if v > best.0 {
            best = (v, s.clone());
        }
        if n > 1 {
            let last = s[n - 1];
            let y0: Vec<f64> = s[..n - 1].iter().map(|d| (d / last).ln()).collect();
            let m = nelder_mead(|y| -margin(&unpack(y)), &y0, 0.5, 1e-14, 1500);
            if -m.value > best.0 {
                best = (-m.value, unpack(&m.x));
            }
        }
    }
    let delta = best.1;
    let report = check_boundary(f, j, &delta, o).expect("positive delta");
    (delta, report)
}

fn unpack(y: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    d.push(1.0);
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Homogeneous,
    Inhomogeneous,
}

/// Explicit ISS constants. `gamma` uses the reported form μ·α₀/4 and is not
/// a certified rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gains {
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    /// Gain on internal disturbances; taken equal to C2.
    #[serde(rename = "C3")]
    pub c3: f64,
    pub gamma: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub alpha0: f64,
    pub gamma_certified: bool,
    pub gamma_note: String,
}

pub const GAMMA_NOTE: &str = "reported-form rate, not certified";

/// C1 = C_max/C_min, C2 = (1/C_min)(1 + 1/α) max_i √f_i(L−l_i) e^{μ(L−l_i)},
/// γ = μα₀/4, with weights w_i(x) = √f_i(x) e^{−μ s_i x}.
pub fn compute_gains(
    sys: &SystemSpec,
    f: &FProfile,
    alpha: f64,
    mu: f64,
    alpha0: f64,
) -> Result<Gains, CertError> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(CertError::NonPositiveMu(mu));
    }
    if let Some(x) = f.blow_up {
        return Err(CertError::BlowUpPresent(x));
    }
    let o = sys.orientation();
    let tables = sample_coefficients(sys, &f.grid)?;
    let (mut wmin, mut wmax) = (f64::INFINITY, 0.0f64);
    let (mut lmin, mut lmax) = (f64::INFINITY, 0.0f64);
    for i in 0..f.n() {
        for (j, &x) in f.grid.points().iter().enumerate() {
            let w = f.values[i][j].sqrt() * (-mu * o.s[i] * x).exp();
            wmin = wmin.min(w);
            wmax = wmax.max(w);
            let l = tables.lambda[i][j].abs();
            lmin = lmin.min(l);
            lmax = lmax.max(l);
        }
    }
    let c_min = wmin * lmin.min(1.0);
    let c_max = wmax * lmax.max(1.0);
    let length = sys.length();
    let entry = (0..f.n())
        .map(|i| f.entry(i, &o).sqrt() * (mu * (length - o.l[i])).exp())
        .fold(0.0, f64::max);
    let c2 = (1.0 + 1.0 / alpha) * entry / c_min;
    Ok(Gains {
        c1: c_max / c_min,
        c2,
        c3: c2,
        gamma: mu * alpha0 / 4.0,
        c_min,
        c_max,
        alpha0,
        gamma_certified: false,
        gamma_note: GAMMA_NOTE.to_string(),
    })
}

/// α = (ratio/θ − 1)/2, capped when θ = 0.
pub fn alpha_midpoint(theta: f64, ratio: f64) -> f64 {
    if theta <= 0.0 {
        ALPHA_CAP
    } else {
        (0.5 * (ratio / theta - 1.0)).min(ALPHA_CAP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryForm {
    /// f ≡ Δ² and θ = ρ∞(J).
    Homogeneous,
    /// The row-wise form of [`check_boundary_sharp`].
    RowWise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub mode: Mode,
    pub boundary_form: BoundaryForm,
    pub f: FProfile,
    pub init: Vec<f64>,
    pub delta: Vec<f64>,
    pub theta: f64,
    pub ratio: f64,
    pub alpha: f64,
    pub mu: f64,
    pub gains: Gains,
    pub interior: ConditionReport,
    pub boundary: ConditionReport,
    /// The ratio-form boundary check with the best Δ found, for reference.
    pub ratio_form: ConditionReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationFailure {
    pub mode: Mode,
    pub reason: String,
    pub rho_inf: Option<f64>,
    pub interior_margin: Option<f64>,
    pub boundary_margin: Option<f64>,
    pub blow_up: Option<f64>,
    pub best_init: Option<Vec<f64>>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertifyError {
    #[error("certification failed: {}", .0.reason)]
    Failed(Box<CertificationFailure>),
    #[error(transparent)]
    Invalid(#[from] CertError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyOptions {
    /// Defaults to 0.05/L.
    pub mu: Option<f64>,
    pub grid_points: usize,
    pub init_sweep: Vec<f64>,
    pub alpha0: f64,
    /// Nelder–Mead budget for refining the best swept initial values.
    pub refine_evals: usize,
    /// Run the weight sweep even when M ≡ 0.
    pub force_sweep: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            mu: None,
            grid_points: 257,
            init_sweep: vec![1e-2, 1e-1, 1.0, 1e1, 1e2],
            alpha0: 1.0,
            refine_evals: 400,
            force_sweep: false,
        }
    }
}

/// Runs the homogeneous shortcut when M ≡ 0, otherwise sweeps initial values
/// of the weight system and checks both conditions.
pub fn certify(sys: &SystemSpec, opts: &CertifyOptions) -> Result<Certificate, CertifyError> {
    let mu = opts.mu.unwrap_or(0.05 / sys.length());
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(CertError::NonPositiveMu(mu).into());
    }
    let grid = SpatialGrid::uniform(sys.length(), opts.grid_points).map_err(CertError::from)?;
    if sys.is_homogeneous() && !opts.force_sweep {
        certify_homogeneous(sys, grid, mu, opts)
    } else {
        certify_sweep(sys, grid, mu, opts)
    }
}

fn certify_homogeneous(
    sys: &SystemSpec,
    grid: SpatialGrid,
    mu: f64,
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let j = sys.boundary_jacobian();
    let rho = rho_inf(j);
    let delta = rho.delta.clone();
    let theta = scaled_inf_norm(j, &delta).map_err(CertError::from)?;
    if !(theta < 1.0) {
        return Err(CertifyError::Failed(Box::new(CertificationFailure {
            mode: Mode::Homogeneous,
            reason: format!("rho_inf(J) = {} is not below 1", rho.value),
            rho_inf: Some(rho.value),
            interior_margin: Some(0.0),
            boundary_margin: Some(1.0 - theta),
            blow_up: None,
            best_init: None,
        })));
    }
    let sq: Vec<f64> = delta.iter().map(|d| d * d).collect();
    let f = FProfile::constant(grid, &sq);
    let interior = check_interior(sys, &f)?;
    let o = sys.orientation();
    let boundary = check_boundary(&f, j, &delta, &o)?;
    let alpha = alpha_midpoint(theta, 1.0);
    let gains = compute_gains(sys, &f, alpha, mu, opts.alpha0)?;
    Ok(Certificate {
        mode: Mode::Homogeneous,
        boundary_form: BoundaryForm::Homogeneous,
        f,
        init: sq,
        delta,
        theta,
        ratio: 1.0,
        alpha,
        mu,
        gains,
        interior,
        ratio_form: boundary.clone(),
        boundary,
    })
}

// Score for a weight profile: row-wise boundary margin squashed into (−1, 1)
// when the profile survives and passes the discrete interior check, a thin
// band just above −1 when the interior check fails (steep layers the grid
// cannot resolve), and [−2, −1] by blow-up position otherwise.
fn profile_score(sys: &SystemSpec, f: &FProfile, j: &Matrix, o: &Orientation) -> f64 {
    match f.blow_up {
        Some(xb) => {
            let l = f.grid.length();
            -1.0 - ((l - xb) / l).clamp(0.0, 1.0)
        }
        None => {
            let m = check_boundary_sharp(f, j, o).margin;
            let squashed = if m.is_nan() { -1.0 } else { m / (1.0 + m.abs()) };
            match check_interior(sys, f) {
                Ok(r) if r.holds => squashed,
                _ => -1.0 + 1e-3 * (1.0 + squashed),
            }
        }
    }
}

const LOG_INIT_BOUND: f64 = 20.7; // ln(1e9)

// Initial values from log coordinates relative to the last component,
// recentred so their geometric mean is 1.
fn init_from_log(y: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = y.iter().map(|v| v.clamp(-LOG_INIT_BOUND, LOG_INIT_BOUND)).collect();
    z.push(0.0);
    let mean = z.iter().sum::<f64>() / z.len() as f64;
    z.iter().map(|v| (v - mean).exp()).collect()
}

fn log_from_init(init: &[f64]) -> Vec<f64> {
    let last = init[init.len() - 1];
    init[..init.len() - 1].iter().map(|v| (v / last).ln()).collect()
}

fn certify_sweep(
    sys: &SystemSpec,
    grid: SpatialGrid,
    mu: f64,
    opts: &CertifyOptions,
) -> Result<Certificate, CertifyError> {
    let n = sys.n();
    let j = sys.boundary_jacobian();
    let o = sys.orientation();
    let rho = rho_inf(j);

    let mut candidates: Vec<Vec<f64>> = sweep_points(&opts.init_sweep, n);
    candidates.push(rho.delta.iter().map(|d| d * d).collect());
    candidates.push(vec![1.0; n]);

    let score_of = |init: &[f64]| -> (f64, Option<FProfile>) {
        match integrate_f_system(sys, init, &grid) {
            Ok(f) => (profile_score(sys, &f, j, &o), Some(f)),
            Err(_) => (f64::NEG_INFINITY, None),
        }
    };
    let scored: Vec<(f64, Vec<f64>)> = candidates
        .par_iter()
        .map(|c| (score_of(c).0, c.clone()))
        .collect();
    // Deterministic merge: best score, earliest candidate on ties.
    let mut best = scored
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.0.total_cmp(&b.0).then(ib.cmp(ia)))
        .map(|(_, s)| s.clone())
        .expect("at least one candidate");

    if n > 1 && opts.refine_evals > 0 {
        let y0 = log_from_init(&best.1);
        let m = nelder_mead(
            |y| -score_of(&init_from_log(y)).0,
            &y0,
            1.0,
            1e-12,
            opts.refine_evals,
        );
        if -m.value > best.0 {
            best = (-m.value, init_from_log(&m.x));
        }
    }

    let init = best.1;
    let f = integrate_f_system(sys, &init, &grid)?;
    let fail = |reason: String, interior: Option<f64>, boundary: Option<f64>, f: &FProfile| {
        CertifyError::Failed(Box::new(CertificationFailure {
            mode: Mode::Inhomogeneous,
            reason,
            rho_inf: Some(rho.value),
            interior_margin: interior,
            boundary_margin: boundary,
            blow_up: f.blow_up,
            best_init: Some(init.clone()),
        }))
    };
    if let Some(xb) = f.blow_up {
        return Err(fail(
            format!("every swept weight profile leaves (0, 1e12) before x = L; best reaches x = {xb}"),
            None,
            None,
            &f,
        ));
    }
    let interior = check_interior(sys, &f)?;
    let boundary = check_boundary_sharp(&f, j, &o);
    let (_, ratio_form) = search_delta(&f, j, &o);
    if !interior.holds || !boundary.holds {
        let what = if !interior.holds { "interior" } else { "boundary" };
        return Err(fail(
            format!("{what} condition fails for the best weight profile found"),
            Some(interior.margin),
            Some(boundary.margin),
            &f,
        ));
    }
    let theta = boundary.theta.unwrap_or(0.0);
    let alpha = alpha_midpoint(theta, 1.0);
    let gains = compute_gains(sys, &f, alpha, mu, opts.alpha0)?;
    let delta = (0..n).map(|i| f.exit(i, &o).sqrt()).collect();
    Ok(Certificate {
        mode: Mode::Inhomogeneous,
        boundary_form: BoundaryForm::RowWise,
        f,
        init,
        delta,
        theta,
        ratio: 1.0,
        alpha,
        mu,
        gains,
        interior,
        boundary,
        ratio_form,
    })
}

fn sweep_points(values: &[f64], n: usize) -> Vec<Vec<f64>> {
    if values.is_empty() {
        return Vec::new();
    }
    let total = values.len().checked_pow(n as u32).filter(|&t| t <= 4096);
    match total {
        Some(total) => (0..total)
            .map(|mut k| {
                (0..n)
                    .map(|_| {
                        let v = values[k % values.len()];
                        k /= values.len();
                        v
                    })
                    .collect()
            })
            .collect(),
        // Too many combinations: vary one component at a time.
        None => {
            let mut out = vec![vec![1.0; n]];
            for i in 0..n {
                for &v in values {
                    let mut c = vec![1.0; n];
                    c[i] = v;
                    out.push(c);
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxLengthOptions {
    /// Largest step of the integrator.
    pub step: f64,
    /// Reported length when no blow-up occurs.
    pub cap: f64,
    /// Initial value of incoming components, relative to C.
    pub eps0: f64,
}

impl Default for MaxLengthOptions {
    fn default() -> Self {
        MaxLengthOptions {
            step: 1e-3,
            cap: 100.0,
            eps0: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaxLength {
    #[serde(rename = "C")]
    pub c: f64,
    pub length: f64,
    pub blew_up: bool,
    pub eps0: f64,
}

/// L(C): how far the equality system survives from f_i(0) = C (positive
/// speeds) and f_i(0) = ε₀ = eps0·C (negative speeds), capped at `cap`.
///
/// The system is 1-homogeneous, so it is integrated for f/C; blow-up is
/// then judged relative to C.
pub fn max_iss_length(sys: &SystemSpec, c: f64, opts: &MaxLengthOptions) -> MaxLength {
    let n = sys.n();
    let m = sys.m();
    let init: Vec<f64> = (0..n).map(|i| if i < m { 1.0 } else { opts.eps0 }).collect();
    let rhs = FRhs::new(sys);
    let a = Adaptive {
        rtol: 1e-11,
        atol: 0.0,
        h_max: opts.step,
        cap: OVERFLOW_CAP,
        floor: Some(POSITIVITY_FLOOR),
    };
    let sol = ode::integrate(|x, f, d| rhs.eval(x, f, d), &init, &[0.0, opts.cap], &a);
    MaxLength {
        c,
        length: sol.blow_up.unwrap_or(opts.cap).min(opts.cap),
        blew_up: sol.blow_up.is_some(),
        eps0: opts.eps0 * c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_system, Coefficient, SystemSpecRaw};

    fn sys2(lambda: [f64; 2], m: [[f64; 2]; 2], j: [[f64; 2]; 2], length: f64) -> SystemSpec {
        build_system(SystemSpecRaw {
            n: 2,
            m: 1,
            length,
            lambda: lambda.iter().map(|&v| v.into()).collect(),
            source_jacobian: Some(
                m.iter()
                    .map(|r| r.iter().map(|&v| Coefficient::Constant(v)).collect())
                    .collect(),
            ),
            boundary_jacobian: Matrix::from_rows(&[j[0].to_vec(), j[1].to_vec()]).unwrap(),
            nonlinear: None,
        })
        .unwrap()
    }

    fn grid(n: usize) -> SpatialGrid {
        SpatialGrid::uniform(1.0, n).unwrap()
    }

    #[test]
    fn zero_source_keeps_weights_constant() {
        let s = sys2([1.0, -1.0], [[0.0; 2]; 2], [[0.0; 2]; 2], 1.0);
        let f = integrate_f_system(&s, &[1.0, 1.0], &grid(11)).unwrap();
        assert!(f.is_complete());
        assert!(f.values.iter().flatten().all(|&v| v == 1.0));
        let r = check_interior(&s, &f).unwrap();
        assert!(r.holds);
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn decoupled_exponentials() {
        let s = sys2([1.0, -1.0], [[-1.0, 0.0], [0.0, 1.0]], [[0.0; 2]; 2], 1.0);
        let g = grid(101);
        let f = integrate_f_system(&s, &[1.0, 1.0], &g).unwrap();
        for (j, &x) in g.points().iter().enumerate() {
            let want = (-2.0 * x).exp();
            assert!((f.values[0][j] - want).abs() < 1e-10);
            assert!((f.values[1][j] - want).abs() < 1e-10);
        }
        assert!(check_interior(&s, &f).unwrap().holds);
    }

    #[test]
    fn antidiagonal_blows_up_at_quarter_pi() {
        let s = sys2([1.0, -1.0], [[0.0, 1.0], [1.0, 0.0]], [[0.0; 2]; 2], 1.0);
        let f = integrate_f_system(&s, &[1.0, 1.0], &grid(101)).unwrap();
        let xb = f.blow_up.unwrap();
        assert!((xb - std::f64::consts::FRAC_PI_4).abs() < 1e-6, "{xb}");
        assert!(matches!(check_interior(&s, &f), Err(CertError::BlowUpPresent(_))));
        assert!(matches!(
            integrate_f_system(&s, &[1.0, 0.0], &grid(3)),
            Err(CertError::NonPositiveInit { index: 1, .. })
        ));
    }

    #[test]
    fn constant_weights_violate_coupled_interior() {
        let s = sys2([1.0, -1.0], [[0.0, 1.0], [1.0, 0.0]], [[0.0; 2]; 2], 1.0);
        let f = FProfile::constant(grid(11), &[1.0, 1.0]);
        let r = check_interior(&s, &f).unwrap();
        assert!(!r.holds);
        assert!((r.margin + 2.0).abs() < 1e-12);
        assert_eq!(r.worst_location.component, Some(1));
    }

    #[test]
    fn equality_solution_passes_interior() {
        let s = sys2([1.5, -0.7], [[0.3, 0.4], [-0.5, -0.2]], [[0.0; 2]; 2], 1.0);
        let f = integrate_f_system(&s, &[1.0, 0.3], &grid(65)).unwrap();
        let r = check_interior(&s, &f).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(r.margin.abs() <= r.tolerance);
    }

    #[test]
    fn boundary_examples() {
        let o = Orientation::new(2, 1, 1.0);
        let g = grid(2);
        let f = FProfile {
            grid: g.clone(),
            values: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            blow_up: None,
        };
        let j = Matrix::from_rows(&[vec![0.0, 0.4], vec![0.4, 0.0]]).unwrap();
        let r = check_boundary(&f, &j, &[1.0, 1.0], &o).unwrap();
        assert!((r.theta.unwrap() - 0.4).abs() < 1e-15);
        assert!((r.ratio.unwrap() - 0.5).abs() < 1e-15);
        assert!((r.margin - 0.1).abs() < 1e-15);
        assert!(r.holds);

        let r = check_boundary(&f, &Matrix::zeros(2), &[1.0, 3.0], &o).unwrap();
        assert!(r.holds);

        let d = [0.7, 1.3];
        let fh = FProfile::constant(g, &[0.49, 1.69]);
        let r = check_boundary(&fh, &j, &d, &o).unwrap();
        assert!((r.ratio.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn search_delta_examples() {
        let o = Orientation::new(2, 1, 1.0);
        let f = FProfile::constant(grid(2), &[1.0, 1.0]);
        let j = Matrix::from_rows(&[vec![0.0, 0.9], vec![0.4, 0.0]]).unwrap();
        // With f ≡ 1 the ratio is (min δ / max δ)², which penalizes the
        // scaling that minimizes θ alone; the optimum is δ₁ = δ₂.
        let (d, r) = search_delta(&f, &j, &o);
        assert!((r.margin - 0.1).abs() < 1e-9, "{r:?}");
        assert!((d[0] / d[1] - 1.0).abs() < 1e-6);
        let at_rho = check_boundary(&f, &j, &rho_inf(&j).delta, &o).unwrap();
        assert!((at_rho.theta.unwrap() - 0.6).abs() < 1e-9);
        assert!(at_rho.margin < r.margin);
        let (_, r) = search_delta(&f, &Matrix::identity(2), &o);
        assert!(!r.holds);
        assert!((r.theta.unwrap() - 1.0).abs() < 1e-12);
        let (_, r) = search_delta(&f, &Matrix::zeros(2), &o);
        assert!((r.margin - 1.0).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_certificates() {
        let s = sys2([1.0, -1.0], [[0.0; 2]; 2], [[0.0, 0.5], [0.5, 0.0]], 1.0);
        let c = certify(&s, &CertifyOptions::default()).unwrap();
        assert_eq!(c.mode, Mode::Homogeneous);
        assert!((c.theta - 0.5).abs() < 1e-12);
        assert!((c.alpha - 0.5).abs() < 1e-12);
        assert_eq!(c.ratio, 1.0);
        assert!(c.gains.c1 >= 1.0 && c.gains.c2 > 0.0);

        let s = sys2([1.0, -1.0], [[0.0; 2]; 2], [[0.0, 2.0], [0.6, 0.0]], 1.0);
        match certify(&s, &CertifyOptions::default()) {
            Err(CertifyError::Failed(f)) => assert!((f.rho_inf.unwrap() - 1.2f64.sqrt()).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_coupled_domain_fails() {
        let s = sys2([1.0, -1.0], [[0.0, 1.0], [1.0, 0.0]], [[0.0; 2]; 2], 2.0);
        assert!(matches!(
            certify(&s, &CertifyOptions::default()),
            Err(CertifyError::Failed(_))
        ));
        let s = sys2([1.0, -1.0], [[0.0, 1.0], [1.0, 0.0]], [[0.0; 2]; 2], 1.0);
        let c = certify(&s, &CertifyOptions::default()).unwrap();
        assert_eq!(c.mode, Mode::Inhomogeneous);
    }

    #[test]
    fn gains_hand_values() {
        let s = sys2([1.0, -1.0], [[0.0; 2]; 2], [[0.0, 0.5], [0.5, 0.0]], 1.0);
        let f = FProfile::constant(grid(101), &[1.0, 1.0]);
        let g = compute_gains(&s, &f, 0.5, 0.1, 1.0).unwrap();
        let cmin = (-0.1f64).exp();
        assert!((g.c_min - cmin).abs() < 1e-14);
        assert!((g.c2 - 3.0 * 0.1f64.exp() / cmin).abs() < 1e-12);
        assert!((g.gamma - 0.025).abs() < 1e-15);
        assert!(!g.gamma_certified);
        assert!(matches!(compute_gains(&s, &f, 0.5, 0.0, 1.0), Err(CertError::NonPositiveMu(_))));
    }

    #[test]
    fn max_length_zero_source_is_capped() {
        let s = sys2([1.0, -1.0], [[0.0; 2]; 2], [[0.0; 2]; 2], 1.0);
        let r = max_iss_length(&s, 10.0, &MaxLengthOptions::default());
        assert!(!r.blew_up);
        assert_eq!(r.length, 100.0);
    }

    #[test]
    fn max_length_antidiagonal() {
        // ζ = √(f₂/f₁) obeys ζ' = 1 + ζ², ζ(0) = √ε₀, so L = π/2 − atan(1e−4).
        let s = sys2([1.0, -1.0], [[0.0, 1.0], [1.0, 0.0]], [[0.0; 2]; 2], 1.0);
        let r = max_iss_length(&s, 1e3, &MaxLengthOptions::default());
        let want = std::f64::consts::FRAC_PI_2 - 1e-4f64.atan();
        assert!((r.length - want).abs() < 1e-6, "{}", r.length);
        let s = sys2([2.0, -2.0], [[0.0, 1.0], [1.0, 0.0]], [[0.0; 2]; 2], 1.0);
        let r = max_iss_length(&s, 1e3, &MaxLengthOptions::default());
        assert!((r.length - 2.0 * want).abs() < 1e-6, "{}", r.length);
    }
}
