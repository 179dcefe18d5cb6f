//! System descriptions, validation, orientation and spatial grids.

use crate::expr::{Env, Expr};
use crate::linalg::Matrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CHECK_POINTS: usize = 256;
const NONLINEAR_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("speed {component} has the wrong sign at x = {x} (value {value})")]
    SpeedSignViolation { component: usize, x: f64, value: f64 },
    #[error("speeds {i} and {j} coincide at x = {x}")]
    SpeedCollision { i: usize, j: usize, x: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{what} is not finite at x = {x}")]
    EvaluationFailure { what: String, x: f64 },
    #[error("nonlinear closure inconsistent with linearization: {what} at x = {x}")]
    NonlinearMismatch { what: String, x: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// A scalar coefficient of `x`: a constant, an expression, or a sampled table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Expr { expr: Expr },
    Samples { samples: Vec<[f64; 2]> },
}

impl Coefficient {
    pub fn expr(src: &str) -> Result<Self, crate::expr::ExprError> {
        Ok(Coefficient::Expr {
            expr: Expr::parse(src)?,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Coefficient::Constant(c) => *c,
            Coefficient::Expr { expr } => expr.eval(&Env::at_x(x)),
            Coefficient::Samples { samples } => interpolate(samples, x),
        }
    }

    /// `Some(c)` when the coefficient does not depend on `x`.
    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(c) => Some(*c),
            Coefficient::Expr { expr } => expr.as_constant(),
            Coefficient::Samples { samples } => {
                let first = samples.first()?[1];
                samples.iter().all(|s| s[1] == first).then_some(first)
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(0.0)
    }
}

impl From<f64> for Coefficient {
    fn from(c: f64) -> Self {
        Coefficient::Constant(c)
    }
}

// Piecewise-linear, constant extension outside the table.
pub(crate) fn interpolate(samples: &[[f64; 2]], x: f64) -> f64 {
    match samples.len() {
        0 => f64::NAN,
        1 => samples[0][1],
        _ => {
            if x <= samples[0][0] {
                return samples[0][1];
            }
            let last = samples[samples.len() - 1];
            if x >= last[0] {
                return last[1];
            }
            let k = samples.partition_point(|s| s[0] <= x);
            let [x0, y0] = samples[k - 1];
            let [x1, y1] = samples[k];
            if x1 == x0 {
                return y1;
            }
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        }
    }
}

/// Optional nonlinear closures used by the simulator.
///
/// Expressions may reference `x` and the state `u1..un`. `g` receives the
/// outgoing boundary values ordered by component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Nonlinear {
    /// Full characteristic matrix A(u, x), row by row.
    pub a: Option<Vec<Vec<Expr>>>,
    /// Source term B(u, x).
    pub b: Option<Vec<Expr>>,
    /// Boundary map G.
    pub g: Option<Vec<Expr>>,
}

/// Serialized form of a system; see [`build_system`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpecRaw {
    pub n: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub length: f64,
    pub lambda: Vec<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_jacobian: Option<Vec<Vec<Coefficient>>>,
    pub boundary_jacobian: Matrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nonlinear: Option<Nonlinear>,
}

/// A validated hyperbolic system.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSpec {
    #[serde(flatten)]
    raw: SystemSpecRaw,
    #[serde(skip)]
    source: Vec<Vec<Coefficient>>,
}

impl<'de> Deserialize<'de> for SystemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = SystemSpecRaw::deserialize(d)?;
        build_system(raw).map_err(serde::de::Error::custom)
    }
}

/// Validates `raw` on the default check grid.
pub fn build_system(raw: SystemSpecRaw) -> Result<SystemSpec, ModelError> {
    build_system_checked(raw, DEFAULT_CHECK_POINTS)
}

/// Validates `raw`, sampling sign and collision checks at `points` points.
pub fn build_system_checked(raw: SystemSpecRaw, points: usize) -> Result<SystemSpec, ModelError> {
    let n = raw.n;
    if n == 0 {
        return Err(ModelError::InvalidParameter("n must be positive".into()));
    }
    if raw.m > n {
        return Err(ModelError::InvalidParameter(format!("m = {} exceeds n = {n}", raw.m)));
    }
    if !(raw.length > 0.0 && raw.length.is_finite()) {
        return Err(ModelError::InvalidParameter(format!("L = {} must be positive", raw.length)));
    }
    if raw.lambda.len() != n {
        return Err(ModelError::DimensionMismatch(format!(
            "lambda has {} entries, expected {n}",
            raw.lambda.len()
        )));
    }
    if raw.boundary_jacobian.dim() != n {
        return Err(ModelError::DimensionMismatch(format!(
            "boundary_jacobian is {0}x{0}, expected {n}x{n}",
            raw.boundary_jacobian.dim()
        )));
    }
    if !raw.boundary_jacobian.is_finite() {
        return Err(ModelError::EvaluationFailure {
            what: "boundary_jacobian".into(),
            x: 0.0,
        });
    }
    let source = match &raw.source_jacobian {
        Some(rows) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(ModelError::DimensionMismatch(format!(
                    "source_jacobian must be {n}x{n}"
                )));
            }
            rows.clone()
        }
        None => vec![vec![Coefficient::Constant(0.0); n]; n],
    };
    if let Some(nl) = &raw.nonlinear {
        check_nonlinear_shape(nl, n)?;
    }
    let sys = SystemSpec { raw, source };
    let grid = SpatialGrid::uniform(sys.length(), points.max(2))?;
    sys.validate_on(&grid)?;
    Ok(sys)
}

fn check_nonlinear_shape(nl: &Nonlinear, n: usize) -> Result<(), ModelError> {
    let too_wide = |e: &Expr| e.state_arity() > n;
    if let Some(a) = &nl.a {
        if a.len() != n || a.iter().any(|r| r.len() != n) {
            return Err(ModelError::DimensionMismatch(format!("nonlinear.a must be {n}x{n}")));
        }
        if a.iter().flatten().any(too_wide) {
            return Err(ModelError::DimensionMismatch("nonlinear.a references u_k with k > n".into()));
        }
    }
    for (name, v) in [("b", &nl.b), ("g", &nl.g)] {
        if let Some(v) = v {
            if v.len() != n {
                return Err(ModelError::DimensionMismatch(format!(
                    "nonlinear.{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
            if v.iter().any(too_wide) {
                return Err(ModelError::DimensionMismatch(format!(
                    "nonlinear.{name} references u_k with k > n"
                )));
            }
        }
    }
    Ok(())
}

impl SystemSpec {
    pub fn raw(&self) -> &SystemSpecRaw {
        &self.raw
    }

    pub fn into_raw(self) -> SystemSpecRaw {
        self.raw
    }

    pub fn n(&self) -> usize {
        self.raw.n
    }

    pub fn m(&self) -> usize {
        self.raw.m
    }

    pub fn length(&self) -> f64 {
        self.raw.length
    }

    pub fn lambda(&self, i: usize, x: f64) -> f64 {
        self.raw.lambda[i].eval(x)
    }

    pub fn lambda_coefficients(&self) -> &[Coefficient] {
        &self.raw.lambda
    }

    pub fn source_coefficients(&self) -> &[Vec<Coefficient>] {
        &self.source
    }

    pub fn source_entry(&self, i: usize, k: usize, x: f64) -> f64 {
        self.source[i][k].eval(x)
    }

    /// M(x).
    pub fn source_jacobian(&self, x: f64) -> Matrix {
        let n = self.n();
        let mut m = Matrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                m[(i, k)] = self.source[i][k].eval(x);
            }
        }
        m
    }

    /// J = G'(0).
    pub fn boundary_jacobian(&self) -> &Matrix {
        &self.raw.boundary_jacobian
    }

    pub fn nonlinear(&self) -> Option<&Nonlinear> {
        self.raw.nonlinear.as_ref()
    }

    /// True when M vanishes identically.
    pub fn is_homogeneous(&self) -> bool {
        self.source.iter().flatten().all(Coefficient::is_zero)
    }

    pub fn orientation(&self) -> Orientation {
        Orientation::new(self.n(), self.m(), self.length())
    }

    /// The same system on a different domain length, revalidated.
    pub fn with_length(&self, length: f64) -> Result<SystemSpec, ModelError> {
        let mut raw = self.raw.clone();
        raw.length = length;
        build_system(raw)
    }

    fn validate_on(&self, grid: &SpatialGrid) -> Result<(), ModelError> {
        let n = self.n();
        let m = self.m();
        let tables = sample_coefficients(self, grid)?;
        for (j, &x) in grid.points().iter().enumerate() {
            for i in 0..n {
                let v = tables.lambda[i][j];
                let ok = if i < m { v > 0.0 } else { v < 0.0 };
                if !ok {
                    return Err(ModelError::SpeedSignViolation {
                        component: i + 1,
                        x,
                        value: v,
                    });
                }
                for k in 0..i {
                    if tables.lambda[k][j] == v {
                        return Err(ModelError::SpeedCollision { i: k + 1, j: i + 1, x });
                    }
                }
            }
        }
        if let Some(nl) = &self.raw.nonlinear {
            self.validate_nonlinear(nl, grid, &tables)?;
        }
        Ok(())
    }

    fn validate_nonlinear(
        &self,
        nl: &Nonlinear,
        grid: &SpatialGrid,
        tables: &CoefficientTables,
    ) -> Result<(), ModelError> {
        let n = self.n();
        let zero = vec![0.0; n];
        let close = |a: f64, b: f64| (a - b).abs() <= NONLINEAR_TOL * (1.0 + b.abs());
        for (j, &x) in grid.points().iter().enumerate() {
            let env = Env { x, t: 0.0, u: &zero };
            if let Some(a) = &nl.a {
                for i in 0..n {
                    for k in 0..n {
                        let want = if i == k { tables.lambda[i][j] } else { 0.0 };
                        if !close(a[i][k].eval(&env), want) {
                            return Err(ModelError::NonlinearMismatch {
                                what: format!("A(0,x)[{},{}] differs from the speed table", i + 1, k + 1),
                                x,
                            });
                        }
                    }
                }
            }
            if let Some(b) = &nl.b {
                for (i, bi) in b.iter().enumerate() {
                    if !close(bi.eval(&env), 0.0) {
                        return Err(ModelError::NonlinearMismatch {
                            what: format!("B(0,x)[{}] is nonzero", i + 1),
                            x,
                        });
                    }
                }
            }
        }
        if let Some(g) = &nl.g {
            let env = Env { x: 0.0, t: 0.0, u: &zero };
            for (i, gi) in g.iter().enumerate() {
                if !close(gi.eval(&env), 0.0) {
                    return Err(ModelError::NonlinearMismatch {
                        what: format!("G(0)[{}] is nonzero", i + 1),
                        x: 0.0,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Direction of propagation per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Orientation {
    /// +1 for positive speeds, −1 otherwise.
    pub s: Vec<f64>,
    /// Exit endpoint: L for positive speeds, 0 otherwise.
    pub l: Vec<f64>,
}

impl Orientation {
    pub fn new(n: usize, m: usize, length: f64) -> Self {
        Orientation {
            s: (0..n).map(|i| if i < m { 1.0 } else { -1.0 }).collect(),
            l: (0..n).map(|i| if i < m { length } else { 0.0 }).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn is_positive(&self, i: usize) -> bool {
        self.s[i] > 0.0
    }
}

/// Uniform grid on [0, L] including both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    points: Vec<f64>,
}

impl SpatialGrid {
    pub fn uniform(length: f64, count: usize) -> Result<Self, ModelError> {
        if count < 2 {
            return Err(ModelError::InvalidGrid(format!("need at least 2 points, got {count}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(ModelError::InvalidGrid(format!("length {length} must be positive")));
        }
        let d = (count - 1) as f64;
        Ok(SpatialGrid {
            points: (0..count).map(|j| length * j as f64 / d).collect(),
        })
    }

    /// Accepts explicit points; they must start at 0 and be uniform.
    pub fn from_points(points: Vec<f64>) -> Result<Self, ModelError> {
        if points.len() < 2 {
            return Err(ModelError::InvalidGrid("need at least 2 points".into()));
        }
        if points[0] != 0.0 {
            return Err(ModelError::InvalidGrid("grid must start at 0".into()));
        }
        let length = points[points.len() - 1];
        let h = length / (points.len() - 1) as f64;
        for (j, w) in points.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(ModelError::InvalidGrid(format!("not increasing at index {j}")));
            }
            if ((w[1] - w[0]) - h).abs() > 1e-12 * length.max(h) {
                return Err(ModelError::InvalidGrid(format!("non-uniform spacing at index {j}")));
            }
        }
        Ok(SpatialGrid { points })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn length(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn spacing(&self) -> f64 {
        self.length() / (self.count() - 1) as f64
    }

    /// Halves the spacing; every old point remains a grid point.
    pub fn refine(&self) -> Self {
        SpatialGrid::uniform(self.length(), 2 * self.count() - 1).expect("refining a valid grid")
    }
}

/// Dense coefficient tables on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTables {
    /// `lambda[i][j]` = Λ_i(x_j).
    pub lambda: Vec<Vec<f64>>,
    /// M(x_j) per grid point.
    pub source: Vec<Matrix>,
}

pub fn sample_coefficients(
    sys: &SystemSpec,
    grid: &SpatialGrid,
) -> Result<CoefficientTables, ModelError> {
    let n = sys.n();
    let mut lambda = vec![Vec::with_capacity(grid.count()); n];
    let mut source = Vec::with_capacity(grid.count());
    for &x in grid.points() {
        for (i, row) in lambda.iter_mut().enumerate() {
            let v = sys.lambda(i, x);
            if !v.is_finite() {
                return Err(ModelError::EvaluationFailure {
                    what: format!("lambda[{}]", i + 1),
                    x,
                });
            }
            row.push(v);
        }
        let m = sys.source_jacobian(x);
        if !m.is_finite() {
            return Err(ModelError::EvaluationFailure {
                what: "source_jacobian".into(),
                x,
            });
        }
        source.push(m);
    }
    Ok(CoefficientTables { lambda, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw2(lambda: [f64; 2], j: [[f64; 2]; 2]) -> SystemSpecRaw {
        SystemSpecRaw {
            n: 2,
            m: 1,
            length: 1.0,
            lambda: lambda.iter().map(|&v| v.into()).collect(),
            source_jacobian: None,
            boundary_jacobian: Matrix::from_rows(&[j[0].to_vec(), j[1].to_vec()]).unwrap(),
            nonlinear: None,
        }
    }

    #[test]
    fn valid_and_invalid_speeds() {
        let sys = build_system(raw2([1.0, -1.0], [[0.0, 0.5], [0.5, 0.0]])).unwrap();
        assert!(sys.is_homogeneous());
        assert_eq!(sys.orientation().l, vec![1.0, 0.0]);
        assert!(matches!(
            build_system(raw2([1.0, 1.0], [[0.0; 2]; 2])),
            Err(ModelError::SpeedSignViolation { component: 2, .. })
        ));
        let mut raw = raw2([1.0, -1.0], [[0.0; 2]; 2]);
        raw.n = 3;
        raw.lambda.push((-1.0).into());
        raw.boundary_jacobian = Matrix::zeros(3);
        assert!(matches!(
            build_system(raw),
            Err(ModelError::SpeedCollision { i: 2, j: 3, .. })
        ));
    }

    #[test]
    fn zero_crossing_is_a_sign_violation() {
        let mut raw = raw2([1.0, -1.0], [[0.0; 2]; 2]);
        raw.lambda[0] = Coefficient::expr("x - 0.5").unwrap();
        assert!(matches!(
            build_system(raw),
            Err(ModelError::SpeedSignViolation { component: 1, .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let mut raw = raw2([1.0, -1.0], [[0.0; 2]; 2]);
        raw.boundary_jacobian = Matrix::zeros(3);
        assert!(matches!(build_system(raw), Err(ModelError::DimensionMismatch(_))));
    }

    #[test]
    fn sampling_tables() {
        let sys = build_system(raw2([1.0, -1.0], [[0.0; 2]; 2])).unwrap();
        let g = SpatialGrid::uniform(1.0, 3).unwrap();
        let t = sample_coefficients(&sys, &g).unwrap();
        assert_eq!(t.lambda, vec![vec![1.0; 3], vec![-1.0; 3]]);

        let mut raw = raw2([1.0, -1.0], [[0.0; 2]; 2]);
        raw.source_jacobian = Some(vec![
            vec![0.0.into(), Coefficient::expr("x").unwrap()],
            vec![1.0.into(), 0.0.into()],
        ]);
        let sys = build_system(raw).unwrap();
        assert!(!sys.is_homogeneous());
        let t = sample_coefficients(&sys, &g).unwrap();
        let col: Vec<f64> = t.source.iter().map(|m| m[(0, 1)]).collect();
        assert_eq!(col, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn nan_coefficient_fails() {
        let mut raw = raw2([1.0, -1.0], [[0.0; 2]; 2]);
        raw.source_jacobian = Some(vec![
            vec![Coefficient::expr("sqrt(x - 1)").unwrap(), 0.0.into()],
            vec![0.0.into(), 0.0.into()],
        ]);
        assert!(matches!(
            build_system(raw),
            Err(ModelError::EvaluationFailure { x, .. }) if x == 0.0
        ));
    }

    #[test]
    fn samples_interpolate() {
        let c = Coefficient::Samples {
            samples: vec![[0.0, 1.0], [1.0, 3.0]],
        };
        assert_eq!(c.eval(0.25), 1.5);
        assert_eq!(c.eval(2.0), 3.0);
    }

    #[test]
    fn json_round_trip_and_idempotence() {
        let src = r#"{"n":2,"m":1,"L":1,"lambda":[{"expr":"1+x"},-1],
            "source_jacobian":[[0,{"samples":[[0,0],[1,2]]}],[1,0]],
            "boundary_jacobian":[[0,0.5],[0.5,0]]}"#;
        let sys: SystemSpec = serde_json::from_str(src).unwrap();
        let back = serde_json::to_string(&sys).unwrap();
        let again: SystemSpec = serde_json::from_str(&back).unwrap();
        assert_eq!(sys, again);
        assert_eq!(build_system(sys.raw().clone()).unwrap(), sys);
    }

    #[test]
    fn refinement_shares_points_exactly() {
        let g = SpatialGrid::uniform(1.3, 17).unwrap();
        let r = g.refine();
        for (j, &x) in g.points().iter().enumerate() {
            assert_eq!(r.points()[2 * j], x);
        }
        assert!(SpatialGrid::from_points(vec![0.0, 0.5, 1.1]).is_err());
        assert!(SpatialGrid::from_points(r.points().to_vec()).is_ok());
    }

    #[test]
    fn nonlinear_consistency() {
        let mut raw = raw2([1.0, -1.0], [[0.0; 2]; 2]);
        raw.nonlinear = Some(Nonlinear {
            a: Some(vec![
                vec![Expr::parse("1 + u1^2").unwrap(), Expr::parse("0").unwrap()],
                vec![Expr::parse("0").unwrap(), Expr::parse("-1").unwrap()],
            ]),
            b: Some(vec![Expr::parse("sin(u2)").unwrap(), Expr::parse("0").unwrap()]),
            g: Some(vec![Expr::parse("0.5*u2").unwrap(), Expr::parse("0.5*tanh(u1)").unwrap()]),
        });
        assert!(build_system(raw.clone()).is_ok());
        raw.nonlinear.as_mut().unwrap().b = Some(vec![Expr::parse("1 + u1").unwrap(), Expr::parse("0").unwrap()]);
        assert!(matches!(build_system(raw), Err(ModelError::NonlinearMismatch { .. })));
    }
}
