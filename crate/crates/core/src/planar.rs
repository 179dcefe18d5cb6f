//! 2×2 systems with constant speeds and antidiagonal coupling:
//! u_t + diag(Λ₁, Λ₂) u_x + [[0, a], [b, 0]] u = 0 on [0, 1] with
//! u₁(t,0) = k₁u₂(t,0) and u₂(t,1) = k₂u₁(t,1).
//!
//! Everything here goes through the Riccati profile
//! η′ = |a/Λ₁| + |b/|Λ₂|| η², η(0) = |k₁|, which must exist on [0, 1] with
//! η(1)|k₂| < 1. The small-gain condition of Karafyllis and Krstić is
//! implemented alongside for comparison.

use crate::certifier::{ConditionReport, Location};
use crate::linalg::Matrix;
use crate::model::{build_system, Coefficient, ModelError, SystemSpec, SystemSpecRaw};
use crate::ode::{self, Adaptive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Points used to maximize |a e^{2Kz}| and |b e^{-2Kz}| over [0, 1].
pub const KK_POINTS: usize = 256;
/// Relative tolerance used to classify K² = A₁B₁ as the rational case.
const EQUALITY_RTOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanarError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("x = {x} is at or beyond the blow-up point {x_blow}")]
    BeyondBlowUp { x: f64, x_blow: f64 },
    #[error("K must be positive, got {0}")]
    NonPositiveK(f64),
    #[error("no witness found: {0}")]
    NoWitnessFound(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarParams {
    pub a: Coefficient,
    pub b: Coefficient,
    pub lambda1: f64,
    pub lambda2: f64,
    pub k1: f64,
    pub k2: f64,
}

impl PlanarParams {
    pub fn new(
        a: Coefficient,
        b: Coefficient,
        lambda1: f64,
        lambda2: f64,
        k1: f64,
        k2: f64,
    ) -> Result<Self, PlanarError> {
        let p = PlanarParams {
            a,
            b,
            lambda1,
            lambda2,
            k1,
            k2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn constant(a: f64, b: f64, lambda1: f64, lambda2: f64, k1: f64, k2: f64) -> Result<Self, PlanarError> {
        Self::new(a.into(), b.into(), lambda1, lambda2, k1, k2)
    }

    pub fn validate(&self) -> Result<(), PlanarError> {
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return Err(PlanarError::InvalidParams(format!("lambda1 = {} must be positive", self.lambda1)));
        }
        if !(self.lambda2 < 0.0 && self.lambda2.is_finite()) {
            return Err(PlanarError::InvalidParams(format!("lambda2 = {} must be negative", self.lambda2)));
        }
        if !self.k1.is_finite() || !self.k2.is_finite() {
            return Err(PlanarError::InvalidParams("k1 and k2 must be finite".into()));
        }
        for j in 0..KK_POINTS {
            let x = j as f64 / (KK_POINTS - 1) as f64;
            for (name, c) in [("a", &self.a), ("b", &self.b)] {
                if !c.eval(x).is_finite() {
                    return Err(PlanarError::InvalidParams(format!("{name} is not finite at x = {x}")));
                }
            }
        }
        Ok(())
    }

    /// `(c₁, c₂)` when both a and b are constant.
    pub fn constant_rates(&self) -> Option<(f64, f64)> {
        let a = self.a.as_constant()?;
        let b = self.b.as_constant()?;
        Some((a.abs() / self.lambda1, b.abs() / self.lambda2.abs()))
    }

    fn rates_at(&self, x: f64) -> (f64, f64) {
        (
            self.a.eval(x).abs() / self.lambda1,
            self.b.eval(x).abs() / self.lambda2.abs(),
        )
    }

    pub fn with_k2(&self, k2: f64) -> Self {
        PlanarParams { k2, ..self.clone() }
    }

    /// The same system as a general [`SystemSpec`] on [0, 1].
    pub fn to_system(&self) -> Result<SystemSpec, ModelError> {
        let zero = Coefficient::Constant(0.0);
        build_system(SystemSpecRaw {
            n: 2,
            m: 1,
            length: 1.0,
            lambda: vec![self.lambda1.into(), self.lambda2.into()],
            source_jacobian: Some(vec![
                vec![zero.clone(), self.a.clone()],
                vec![self.b.clone(), zero],
            ]),
            boundary_jacobian: Matrix::from_rows(&[vec![0.0, self.k1], vec![self.k2, 0.0]])
                .expect("2x2 rows"),
            nonlinear: None,
        })
    }
}

/// Blow-up point of the constant-coefficient Riccati profile, possibly ∞.
pub fn blowup_x1(c1: f64, c2: f64, k1: f64) -> f64 {
    let k = k1.abs();
    if c2 == 0.0 {
        return f64::INFINITY;
    }
    if c1 == 0.0 {
        return if k == 0.0 { f64::INFINITY } else { 1.0 / (c2 * k) };
    }
    // π/2 − atan(s) written as atan2(1, s).
    (1.0f64).atan2((c2 / c1).sqrt() * k) / (c1 * c2).sqrt()
}

/// Constant-coefficient Riccati profile η(x).
pub fn eta_closed_form(c1: f64, c2: f64, k1: f64, x: f64) -> Result<f64, PlanarError> {
    let k = k1.abs();
    let x1 = blowup_x1(c1, c2, k1);
    if x >= x1 {
        return Err(PlanarError::BeyondBlowUp { x, x_blow: x1 });
    }
    if c2 == 0.0 {
        return Ok(k + c1 * x);
    }
    if c1 == 0.0 {
        return Ok(k / (1.0 - c2 * k * x));
    }
    // tan(α + w x) with tan α = s, expanded so the c₂ → 0 limit stays accurate.
    let s = (c2 / c1).sqrt() * k;
    let t = ((c1 * c2).sqrt() * x).tan();
    let den = 1.0 - s * t;
    if !(den > 0.0) {
        return Err(PlanarError::BeyondBlowUp { x, x_blow: x1 });
    }
    Ok((k + (c1 / c2).sqrt() * t) / den)
}

/// Level crossing η(x) = 1/|k₂| of the constant-coefficient profile; ∞ when
/// the level is never reached.
pub fn crossing_x2(c1: f64, c2: f64, k1: f64, k2: f64) -> f64 {
    let k = k1.abs();
    let target = 1.0 / k2.abs();
    if k >= target {
        return 0.0;
    }
    if target.is_infinite() {
        return blowup_x1(c1, c2, k1);
    }
    if c2 == 0.0 {
        return if c1 == 0.0 { f64::INFINITY } else { (target - k) / c1 };
    }
    if c1 == 0.0 {
        // k/(1 − c₂kx) = target.
        return if k == 0.0 { f64::INFINITY } else { (1.0 / k - 1.0 / target) / c2 };
    }
    let r = (c2 / c1).sqrt();
    ((r * target).atan() - (r * k).atan()) / (c1 * c2).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiProfile {
    /// Grid points reached, starting at 0.
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Blow-up point, or the requested end when the profile survived.
    pub x_end: f64,
    pub blew_up: bool,
}

impl RiccatiProfile {
    pub fn last(&self) -> f64 {
        *self.values.last().expect("profile starts at x = 0")
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EtaOptions {
    /// Output points on [0, x_max].
    pub points: usize,
    pub h_max: f64,
    pub rtol: f64,
    pub cap: f64,
}

impl Default for EtaOptions {
    fn default() -> Self {
        EtaOptions {
            points: 1001,
            h_max: 1e-4,
            rtol: 1e-12,
            cap: 1e12,
        }
    }
}

pub fn eta_numeric(params: &PlanarParams, x_max: f64) -> RiccatiProfile {
    eta_numeric_with(params, x_max, &EtaOptions::default())
}

pub fn eta_numeric_with(params: &PlanarParams, x_max: f64, opts: &EtaOptions) -> RiccatiProfile {
    let n = opts.points.max(2);
    let grid: Vec<f64> = (0..n).map(|j| x_max * j as f64 / (n - 1) as f64).collect();
    let constant = params.constant_rates();
    let rhs = |x: f64, y: &[f64], d: &mut [f64]| {
        let (c1, c2) = constant.unwrap_or_else(|| params.rates_at(x));
        d[0] = c1 + c2 * y[0] * y[0];
    };
    let adaptive = Adaptive {
        rtol: opts.rtol,
        atol: 1e-14,
        h_max: opts.h_max,
        cap: opts.cap,
        floor: None,
    };
    let sol = ode::integrate(rhs, &[params.k1.abs()], &grid, &adaptive);
    let reached = sol.ys.len();
    RiccatiProfile {
        grid: grid[..reached].to_vec(),
        values: sol.ys.into_iter().map(|y| y[0]).collect(),
        x_end: sol.blow_up.unwrap_or(x_max),
        blew_up: sol.blow_up.is_some(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanarMethod {
    ClosedForm,
    Numeric,
}

/// Verdict of the Riccati test together with its ingredients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlanarReport {
    #[serde(flatten)]
    pub report: ConditionReport,
    pub method: PlanarMethod,
    /// Some inequality of the chain holds with equality.
    pub boundary_of_condition: bool,
    /// η(1) when the profile exists on [0, 1].
    pub eta_at_1: Option<f64>,
    /// Blow-up point of η (∞ when there is none).
    pub x1: f64,
    /// π/2 − √(c₁c₂), constant coefficients only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interior: Option<f64>,
    /// Upper bound on |k₁|, constant coefficients only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k1_bound: Option<f64>,
    /// Upper bound on |k₂| = 1/η(1).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k2_bound: Option<f64>,
}

impl PlanarReport {
    pub fn holds(&self) -> bool {
        self.report.holds
    }

    pub fn margin(&self) -> f64 {
        self.report.margin
    }
}

/// Upper bound on |k₁| for the profile to survive to x = 1.
fn k1_bound(c1: f64, c2: f64) -> f64 {
    if c2 == 0.0 {
        f64::INFINITY
    } else if c1 == 0.0 {
        1.0 / c2
    } else {
        (c1 / c2).sqrt() * (FRAC_PI_2 - (c1 * c2).sqrt()).tan()
    }
}

fn finish(
    method: PlanarMethod,
    eta1: Option<f64>,
    x1: f64,
    k2: f64,
    extra: (Option<f64>, Option<f64>),
) -> PlanarReport {
    let k2 = k2.abs();
    let (margin, x) = match eta1 {
        Some(e) => (if k2 == 0.0 { 1.0 } else { 1.0 - e * k2 }, 1.0),
        None => (-1.0, x1),
    };
    let k2_bound = eta1.map(|e| if e == 0.0 { f64::INFINITY } else { 1.0 / e });
    PlanarReport {
        report: ConditionReport {
            holds: margin > 0.0,
            margin,
            tolerance: 0.0,
            worst_location: Location {
                component: None,
                x: Some(x),
            },
            theta: None,
            ratio: None,
        },
        method,
        boundary_of_condition: margin == 0.0 || x1 == 1.0 || extra.0 == Some(0.0),
        eta_at_1: eta1,
        x1,
        interior: extra.0,
        k1_bound: extra.1,
        k2_bound,
    }
}

/// Riccati test: η exists on [0, 1] and η(1)|k₂| < 1.
///
/// Constant coefficients use the closed form; otherwise η is integrated.
pub fn check_planar(params: &PlanarParams) -> PlanarReport {
    if let Some((c1, c2)) = params.constant_rates() {
        let x1 = blowup_x1(c1, c2, params.k1);
        let eta1 = if x1 > 1.0 {
            eta_closed_form(c1, c2, params.k1, 1.0).ok()
        } else {
            None
        };
        let interior = FRAC_PI_2 - (c1 * c2).sqrt();
        return finish(
            PlanarMethod::ClosedForm,
            eta1,
            x1,
            params.k2,
            (Some(interior), Some(k1_bound(c1, c2))),
        );
    }
    let profile = eta_numeric(params, 1.0);
    let eta1 = (!profile.blew_up).then(|| profile.last());
    let x1 = if profile.blew_up {
        profile.x_end
    } else {
        f64::INFINITY
    };
    finish(PlanarMethod::Numeric, eta1, x1, params.k2, (None, None))
}

/// The two quantities of the small-gain condition; it holds when both are < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KkTerms {
    pub gain_sum: f64,
    pub product: f64,
}

impl KkTerms {
    pub fn holds(&self) -> bool {
        self.gain_sum < 1.0 && self.product < 1.0
    }
}

pub fn kk_terms(params: &PlanarParams, k: f64) -> Result<KkTerms, PlanarError> {
    kk_terms_with(params, k, KK_POINTS)
}

pub fn kk_terms_with(params: &PlanarParams, k: f64, points: usize) -> Result<KkTerms, PlanarError> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(PlanarError::NonPositiveK(k));
    }
    let points = points.max(2);
    let (mut big_a, mut big_b) = (0.0f64, 0.0f64);
    for j in 0..points {
        let z = j as f64 / (points - 1) as f64;
        big_a = big_a.max((params.a.eval(z) * (2.0 * k * z).exp()).abs());
        big_b = big_b.max((params.b.eval(z) * (-2.0 * k * z).exp()).abs());
    }
    let (k1, k2) = (params.k1.abs(), params.k2.abs());
    let left = ((2.0 * k).exp() - k.exp()) / (params.lambda2.abs() * k) * big_b;
    let right = -(-k).exp_m1() / (params.lambda1 * k) * big_a;
    Ok(KkTerms {
        gain_sum: (k1 + k2) * (-k).exp(),
        product: (left.sqrt() + k2.sqrt()) * (right.sqrt() + k1.sqrt()),
    })
}

pub fn kk_holds(params: &PlanarParams, k: f64) -> Result<bool, PlanarError> {
    kk_terms(params, k).map(|t| t.holds())
}

/// 64 log-spaced points in [1e-3, 1e2].
pub fn default_k_grid() -> Vec<f64> {
    log_grid(1e-3, 1e2, 64)
}

pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|j| (a + (b - a) * j as f64 / (count - 1) as f64).exp())
        .collect()
}

/// First K of the grid at which the small-gain condition holds. `None`
/// only means none on this grid.
pub fn kk_exists(params: &PlanarParams, k_grid: &[f64]) -> Option<f64> {
    k_grid
        .iter()
        .copied()
        .find(|&k| kk_holds(params, k).unwrap_or(false))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImplicationSummary {
    pub seed: u64,
    pub trials: u64,
    /// Trials on which the small-gain condition held somewhere on the K grid.
    pub kk_holds: u64,
    pub violations: u64,
    /// Trial indices of violations, in increasing order.
    pub violating_trials: Vec<u64>,
}

/// Constant-coefficient parameters for trial `trial` of stream `seed`.
pub fn sample_params(seed: u64, trial: u64) -> PlanarParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    let mut signed = |lo: f64, hi: f64| {
        let v: f64 = rng.gen_range(lo..=hi);
        if rng.gen::<bool>() {
            -v
        } else {
            v
        }
    };
    let a = signed(0.0, 2.0);
    let b = signed(0.0, 2.0);
    let k1 = signed(0.0, 1.5);
    let k2 = signed(0.0, 1.5);
    let lambda1 = rng.gen_range(0.2..=2.0);
    let lambda2 = -rng.gen_range(0.2..=2.0);
    PlanarParams::constant(a, b, lambda1, lambda2, k1, k2).expect("sampled ranges are valid")
}

/// Counts trials where the small-gain condition holds on the default K grid
/// but the Riccati test fails.
pub fn implication_experiment(seed: u64, trials: u64) -> ImplicationSummary {
    let grid = default_k_grid();
    let outcomes: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let p = sample_params(seed, t);
            match kk_exists(&p, &grid) {
                Some(_) => (true, !check_planar(&p).holds()),
                None => (false, false),
            }
        })
        .collect();
    let violating_trials: Vec<u64> = outcomes
        .iter()
        .enumerate()
        .filter(|(_, o)| o.1)
        .map(|(t, _)| t as u64)
        .collect();
    ImplicationSummary {
        seed,
        trials,
        kk_holds: outcomes.iter().filter(|o| o.0).count() as u64,
        violations: violating_trials.len() as u64,
        violating_trials,
    }
}

/// Parameters accepted by the Riccati test but rejected by the small-gain
/// condition on every K of `k_grid`, built as k₂ = 1/η(1) − ε.
///
/// `eps_grid` is tried from the largest ε down.
pub fn strictness_witness(
    a: f64,
    b: f64,
    lambda1: f64,
    lambda2: f64,
    k1: f64,
    eps_grid: &[f64],
    k_grid: &[f64],
) -> Result<PlanarParams, PlanarError> {
    let base = PlanarParams::constant(a, b, lambda1, lambda2, k1, 0.0)?;
    if a == 0.0 && b == 0.0 {
        return Err(PlanarError::NoWitnessFound(
            "a = b = 0: both conditions reduce to |k1 k2| < 1".into(),
        ));
    }
    let (c1, c2) = base.constant_rates().expect("constant coefficients");
    let x1 = blowup_x1(c1, c2, k1);
    if !(x1 > 1.0) {
        return Err(PlanarError::NoWitnessFound(format!(
            "the Riccati profile blows up at x = {x1} before 1"
        )));
    }
    let eta1 = eta_closed_form(c1, c2, k1, 1.0)?;
    if eta1 == 0.0 {
        return Err(PlanarError::NoWitnessFound("eta(1) = 0, so 1/eta(1) is unbounded".into()));
    }
    let mut eps: Vec<f64> = eps_grid.iter().copied().filter(|e| *e > 0.0).collect();
    eps.sort_by(|x, y| y.total_cmp(x));
    for e in eps {
        let k2 = 1.0 / eta1 - e;
        if k2 < 0.0 {
            continue;
        }
        let p = base.with_k2(k2);
        if check_planar(&p).holds() && kk_exists(&p, k_grid).is_none() {
            return Ok(p);
        }
    }
    Err(PlanarError::NoWitnessFound(
        "no epsilon in the grid separates the two conditions".into(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HBranch {
    /// A₁B₁ > K².
    Tan,
    /// K² > A₁B₁ > 0.
    Sinh,
    /// K² = A₁B₁.
    Rational,
    /// B₁ = 0.
    Linear,
    /// A₁ = 0, so h ≡ 0.
    Zero,
}

fn check_h_args(a1: f64, b1: f64, k: f64) -> Result<(), PlanarError> {
    if !(a1 >= 0.0 && b1 >= 0.0 && a1.is_finite() && b1.is_finite()) {
        return Err(PlanarError::InvalidParams(format!(
            "A1 = {a1} and B1 = {b1} must be finite and non-negative"
        )));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(PlanarError::NonPositiveK(k));
    }
    Ok(())
}

pub fn h_branch(a1: f64, b1: f64, k: f64) -> Result<HBranch, PlanarError> {
    check_h_args(a1, b1, k)?;
    let p = a1 * b1;
    let k2 = k * k;
    Ok(if b1 == 0.0 {
        HBranch::Linear
    } else if a1 == 0.0 {
        HBranch::Zero
    } else if (p - k2).abs() <= EQUALITY_RTOL * k2 {
        HBranch::Rational
    } else if p > k2 {
        HBranch::Tan
    } else {
        HBranch::Sinh
    })
}

/// Blow-up point of h′ = A₁ + B₁h² + 2Kh, h(0) = 0.
pub fn x5(a1: f64, b1: f64, k: f64) -> Result<f64, PlanarError> {
    Ok(match h_branch(a1, b1, k)? {
        HBranch::Linear | HBranch::Zero => f64::INFINITY,
        HBranch::Rational => 1.0 / k,
        HBranch::Tan => {
            let w = (a1 * b1 - k * k).sqrt();
            w.atan2(k) / w
        }
        HBranch::Sinh => {
            let r = (k * k - a1 * b1).sqrt();
            (r / k).atanh() / r
        }
    })
}

/// Solution of h′ = A₁ + B₁h² + 2Kh, h(0) = 0, for x < x5.
pub fn h_closed_form(a1: f64, b1: f64, k: f64, x: f64) -> Result<f64, PlanarError> {
    let branch = h_branch(a1, b1, k)?;
    let x_blow = x5(a1, b1, k)?;
    if x >= x_blow {
        return Err(PlanarError::BeyondBlowUp { x, x_blow });
    }
    // Tan and sinh cases after expanding tan(α + ωx) with tan α = K/ω.
    Ok(match branch {
        HBranch::Zero => 0.0,
        HBranch::Linear => a1 / (2.0 * k) * (2.0 * k * x).exp_m1(),
        HBranch::Rational => a1 * x / (1.0 - k * x),
        HBranch::Tan => {
            let w = (a1 * b1 - k * k).sqrt();
            let t = (w * x).tan();
            a1 * t / (w - k * t)
        }
        HBranch::Sinh => {
            let r = (k * k - a1 * b1).sqrt();
            let t = (r * x).tanh();
            a1 * t / (r - k * t)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn rk4_fixed(p: &PlanarParams, h: f64) -> f64 {
        let steps = (1.0 / h).round() as usize;
        let mut y = [p.k1.abs()];
        let mut out = [0.0];
        let mut rhs = |x: f64, y: &[f64], d: &mut [f64]| {
            let (c1, c2) = p.rates_at(x);
            d[0] = c1 + c2 * y[0] * y[0];
        };
        for s in 0..steps {
            ode::rk4_step(&mut rhs, s as f64 * h, &y, h, &mut out);
            y = out;
        }
        y[0]
    }

    #[test]
    fn closed_form_examples() {
        assert!((eta_closed_form(1.0, 1.0, 0.0, 0.7).unwrap() - 0.7f64.tan()).abs() < 1e-14);
        assert!((blowup_x1(1.0, 1.0, 0.0) - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(blowup_x1(0.0, 0.0, 0.3), f64::INFINITY);
        assert_eq!(eta_closed_form(0.0, 0.0, -0.3, 5.0).unwrap(), 0.3);
        assert!((blowup_x1(1.0, 1.0, 1.0) - FRAC_PI_4).abs() < 1e-15);
        assert!(matches!(
            eta_closed_form(1.0, 1.0, 1.0, 0.8),
            Err(PlanarError::BeyondBlowUp { .. })
        ));
        assert_eq!(eta_closed_form(2.0, 0.0, 1.0, 0.5).unwrap(), 2.0);
        assert_eq!(blowup_x1(0.0, 2.0, 0.5), 1.0);
        assert_eq!(eta_closed_form(0.0, 2.0, 0.5, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn numeric_matches_closed_form() {
        let p = PlanarParams::constant(1.0, 1.0, 1.0, -1.0, 0.3, 0.0).unwrap();
        let x1 = blowup_x1(1.0, 1.0, 0.3);
        let prof = eta_numeric(&p, 0.95 * x1);
        assert!(!prof.blew_up);
        for (x, v) in prof.grid.iter().zip(&prof.values) {
            let exact = eta_closed_form(1.0, 1.0, 0.3, *x).unwrap();
            assert!((v - exact).abs() < 1e-8, "x = {x}: {v} vs {exact}");
        }
        let prof = eta_numeric(&p, 2.0);
        assert!(prof.blew_up);
        assert!((prof.x_end - x1).abs() < 1e-6, "{} {}", prof.x_end, x1);
    }

    #[test]
    fn numeric_zero_coefficients_is_constant() {
        let p = PlanarParams::constant(0.0, 0.0, 1.0, -1.0, -0.4, 0.0).unwrap();
        let prof = eta_numeric(&p, 1.0);
        assert!(prof.values.iter().all(|&v| v == 0.4));
    }

    #[test]
    fn numeric_variable_coefficient_richardson() {
        let p = PlanarParams::new(
            Coefficient::expr("x").unwrap(),
            1.0.into(),
            1.0,
            -1.0,
            0.0,
            0.0,
        )
        .unwrap();
        let coarse = rk4_fixed(&p, 1e-2);
        let fine = rk4_fixed(&p, 5e-3);
        let eta1 = eta_numeric(&p, 1.0).last();
        assert!((eta1 - fine).abs() <= 16.0 * (coarse - fine).abs(), "{eta1} {fine} {coarse}");
        assert!(check_planar(&p).report.holds);
        assert_eq!(check_planar(&p).method, PlanarMethod::Numeric);
    }

    #[test]
    fn check_planar_examples() {
        let p = PlanarParams::constant(0.0, 0.0, 1.0, -1.0, 0.9, 0.9).unwrap();
        assert!(check_planar(&p).holds());
        let p = PlanarParams::constant(1.0, 1.0, 1.0, -1.0, 0.0, 0.0).unwrap();
        let r = check_planar(&p);
        assert!(r.holds());
        assert!((r.eta_at_1.unwrap() - 1.0f64.tan()).abs() < 1e-14);
        assert_eq!(r.k2_bound.unwrap(), 1.0 / r.eta_at_1.unwrap());
        let r = check_planar(&p.with_k2(0.7));
        assert!(!r.holds());
        assert!((r.margin() - (1.0 - 0.7 * 1.0f64.tan())).abs() < 1e-14);
        // Blow-up before x = 1.
        let p = PlanarParams::constant(2.0, 2.0, 1.0, -1.0, 0.0, 0.0).unwrap();
        let r = check_planar(&p);
        assert!(!r.holds());
        assert_eq!(r.margin(), -1.0);
        assert!(r.interior.unwrap() < 0.0 && r.k1_bound.unwrap() < 0.0);
        // Interior inequality holds but |k1| exceeds its bound.
        let p = PlanarParams::constant(1.5, 1.5, 1.0, -1.0, 0.1, 0.0).unwrap();
        let r = check_planar(&p);
        assert!(!r.holds() && r.x1 < 1.0);
        assert!(r.interior.unwrap() > 0.0 && r.k1_bound.unwrap() < 0.1);
    }

    #[test]
    fn check_planar_closed_and_numeric_agree() {
        let p = PlanarParams::constant(0.8, -0.6, 1.3, -0.7, 0.4, 0.5).unwrap();
        let closed = check_planar(&p);
        let q = PlanarParams::new(
            Coefficient::expr("0.8 * (sin(x)^2 + cos(x)^2)").unwrap(),
            Coefficient::expr("-0.6 * (sin(x)^2 + cos(x)^2)").unwrap(),
            1.3,
            -0.7,
            0.4,
            0.5,
        )
        .unwrap();
        assert!(q.constant_rates().is_none());
        let numeric = check_planar(&q);
        assert_eq!(numeric.method, PlanarMethod::Numeric);
        assert!((closed.margin() - numeric.margin()).abs() < 1e-9);
    }

    #[test]
    fn kk_examples() {
        let p = PlanarParams::constant(0.0, 0.0, 1.0, -1.0, 0.9, 0.9).unwrap();
        let t = kk_terms(&p, 10.0).unwrap();
        assert!((t.product - 0.9).abs() < 1e-15);
        assert!(t.holds());
        let p = PlanarParams::constant(0.0, 0.0, 1.0, -1.0, 1.0, 1.2).unwrap();
        assert_eq!(kk_exists(&p, &default_k_grid()), None);
        let p = PlanarParams::constant(1.2, 1.2, 1.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(kk_exists(&p, &default_k_grid()), None);
        assert_eq!(kk_holds(&p, 0.0), Err(PlanarError::NonPositiveK(0.0)));
    }

    #[test]
    fn k_grid_shape() {
        let g = default_k_grid();
        assert_eq!(g.len(), 64);
        assert!((g[0] - 1e-3).abs() < 1e-15 && (g[63] - 1e2).abs() < 1e-10);
    }

    #[test]
    fn implication_is_deterministic() {
        assert_eq!(implication_experiment(7, 0).violations, 0);
        let a = implication_experiment(7, 200);
        let b = implication_experiment(7, 200);
        assert_eq!(a, b);
        assert_eq!(a.violations, 0);
        assert!(a.kk_holds > 0);
        assert_eq!(sample_params(7, 3), sample_params(7, 3));
        assert_ne!(sample_params(7, 3), sample_params(7, 4));
    }

    #[test]
    fn strictness_examples() {
        let w = strictness_witness(1.0, 1.0, 1.0, -1.0, 0.0, &[1e-3], &default_k_grid()).unwrap();
        assert!((w.k2 - (1.0 / 1.0f64.tan() - 1e-3)).abs() < 1e-14);
        assert!(matches!(
            strictness_witness(0.0, 0.0, 1.0, -1.0, 0.5, &[1e-3], &default_k_grid()),
            Err(PlanarError::NoWitnessFound(_))
        ));
        assert!(matches!(
            strictness_witness(1.0, 1.0, 1.0, -1.0, 0.0, &[], &default_k_grid()),
            Err(PlanarError::NoWitnessFound(_))
        ));
    }

    #[test]
    fn h_examples() {
        // K → 0⁺ in the tan branch.
        let x = x5(1.0, 1.0, 1e-6).unwrap();
        assert!((x - FRAC_PI_2).abs() < 1e-5);
        assert_eq!(h_branch(0.5, 0.5, 0.5).unwrap(), HBranch::Rational);
        assert_eq!(x5(0.5, 0.5, 0.5).unwrap(), 2.0);
        assert_eq!(x5(1.0, 0.0, 0.3).unwrap(), f64::INFINITY);
        let h = h_closed_form(1.0, 0.0, 0.3, 2.0).unwrap();
        assert!((h - 1.2f64.exp_m1() / 0.6).abs() < 1e-14);
        assert!(matches!(h_closed_form(0.5, 0.5, 0.5, 2.0), Err(PlanarError::BeyondBlowUp { .. })));
    }

    #[test]
    fn h_closed_form_solves_the_ode() {
        for &(a1, b1, k) in &[(2.0, 1.5, 0.4), (0.3, 0.2, 0.9), (0.5, 0.5, 0.5), (1.0, 0.0, 0.7)] {
            let xb = x5(a1, b1, k).unwrap();
            let x_end = if xb.is_finite() { 0.9 * xb } else { 2.0 };
            let grid: Vec<f64> = (0..=20).map(|j| x_end * j as f64 / 20.0).collect();
            let sol = ode::integrate(
                |_, y, d| d[0] = a1 + b1 * y[0] * y[0] + 2.0 * k * y[0],
                &[0.0],
                &grid,
                &Adaptive::default(),
            );
            for (x, y) in grid.iter().zip(&sol.ys) {
                let h = h_closed_form(a1, b1, k, *x).unwrap();
                assert!((h - y[0]).abs() < 1e-8 * (1.0 + h), "{a1} {b1} {k} x={x}: {h} vs {}", y[0]);
            }
        }
    }

    #[test]
    fn crossing_matches_eta() {
        let (c1, c2, k1, k2) = (0.3, 0.5, 0.2, 0.7);
        let x2 = crossing_x2(c1, c2, k1, k2);
        assert!((eta_closed_form(c1, c2, k1, x2).unwrap() - 1.0 / k2).abs() < 1e-12);
    }

    #[test]
    fn to_system_roundtrip() {
        let p = PlanarParams::constant(0.5, -0.25, 2.0, -1.0, 0.1, 0.2).unwrap();
        let s = p.to_system().unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.boundary_jacobian()[(1, 0)], 0.2);
        assert_eq!(s.source_entry(0, 1, 0.3), 0.5);
    }
}
