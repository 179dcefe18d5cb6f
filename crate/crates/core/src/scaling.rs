//! Diagonal-scaling infima of the ∞-norm and the spectral norm.
//!
//! For the ∞-norm the infimum over positive diagonals of ‖ΔKΔ⁻¹‖∞ is the
//! Perron root of |K|. Irreducible |K| attains it at Δ = diag(1/v) with v the
//! right Perron vector. Reducible |K| is split into strongly connected blocks;
//! the blocks are then scaled apart so cross-block entries fade.

use crate::linalg::Matrix;
use crate::optim::nelder_mead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScalingError {
    #[error("delta must be strictly positive (entry {index} is {value})")]
    NonPositiveDelta { index: usize, value: f64 },
    #[error("delta has {got} entries, matrix is {n}x{n}")]
    DimensionMismatch { got: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingResult {
    pub value: f64,
    pub delta: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn check_delta(k: &Matrix, delta: &[f64]) -> Result<(), ScalingError> {
    if delta.len() != k.dim() {
        return Err(ScalingError::DimensionMismatch {
            got: delta.len(),
            n: k.dim(),
        });
    }
    for (index, &value) in delta.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ScalingError::NonPositiveDelta { index, value });
        }
    }
    Ok(())
}

/// ‖ΔKΔ⁻¹‖∞ = max_i Σ_j |K_ij| δ_i/δ_j.
pub fn scaled_inf_norm(k: &Matrix, delta: &[f64]) -> Result<f64, ScalingError> {
    check_delta(k, delta)?;
    Ok(scaled_inf_unchecked(k, delta))
}

fn scaled_inf_unchecked(k: &Matrix, delta: &[f64]) -> f64 {
    let n = k.dim();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| k[(i, j)].abs() * delta[i] / delta[j])
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// ‖ΔKΔ⁻¹‖₂.
pub fn scaled_two_norm(k: &Matrix, delta: &[f64]) -> Result<f64, ScalingError> {
    check_delta(k, delta)?;
    Ok(k.similarity(delta).norm_2())
}

/// Perron root and positive right eigenvector of an irreducible nonnegative
/// matrix, by power iteration on `A + I` with Collatz–Wielandt bounds.
///
/// Falls back to repeated squaring when the subdominant ratio is close to 1.
pub fn perron_irreducible(a: &Matrix) -> (f64, Vec<f64>, usize) {
    let n = a.dim();
    if n == 1 {
        return (a[(0, 0)].abs(), vec![1.0], 0);
    }
    let mut c = a.abs();
    for i in 0..n {
        c[(i, i)] += 1.0;
    }
    let mut v = vec![1.0; n];
    let mut w = vec![0.0; n];
    let mut iters = 0;
    let bounds = |c: &Matrix, v: &[f64], w: &mut [f64]| {
        c.mul_vec(v, w);
        let mut lo = f64::INFINITY;
        let mut hi: f64 = 0.0;
        for i in 0..v.len() {
            let r = w[i] / v[i];
            lo = lo.min(r);
            hi = hi.max(r);
        }
        (lo, hi)
    };
    let done = |lo: f64, hi: f64| hi - lo <= 1e-14 * hi;

    for _ in 0..2000 {
        iters += 1;
        let (lo, hi) = bounds(&c, &v, &mut w);
        let top = w.iter().copied().fold(0.0, f64::max);
        if done(lo, hi) {
            return (hi - 1.0, v, iters);
        }
        for i in 0..n {
            v[i] = w[i] / top;
        }
    }
    // Squaring: P = C^(2^s) normalized, v = P·v.
    let mut p = c.clone();
    for _ in 0..80 {
        iters += 1;
        let mut q = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = (0..n).map(|k| p[(i, k)] * p[(k, j)]).sum();
            }
        }
        let top = (0..n).flat_map(|i| q.row(i).iter()).copied().fold(0.0, f64::max);
        p = q.scale(1.0 / top);
        p.mul_vec(&v.clone(), &mut v);
        let s = v.iter().copied().fold(0.0, f64::max);
        for x in v.iter_mut() {
            *x /= s;
        }
        let (lo, hi) = bounds(&c, &v, &mut w);
        if hi - lo <= 1e-13 * hi {
            return (hi - 1.0, v, iters);
        }
    }
    let (_, hi) = bounds(&c, &v, &mut w);
    (hi - 1.0, v, iters)
}

/// Strongly connected components of the sparsity graph of `a`, ordered so
/// that every edge between components points from an earlier to a later one.
pub fn strong_components(a: &Matrix) -> Vec<Vec<usize>> {
    let n = a.dim();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if a[(i, j)] != 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let mut assigned = vec![false; n];
    let mut comps: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let comp: Vec<usize> = (0..n).filter(|&j| reach[i][j] && reach[j][i]).collect();
        for &j in &comp {
            assigned[j] = true;
        }
        comps.push(comp);
    }
    let reach_count = |c: &Vec<usize>| reach[c[0]].iter().filter(|&&r| r).count();
    comps.sort_by(|a, b| reach_count(b).cmp(&reach_count(a)).then(a[0].cmp(&b[0])));
    comps
}

fn sub_matrix(a: &Matrix, idx: &[usize]) -> Matrix {
    let mut s = Matrix::zeros(idx.len());
    for (p, &i) in idx.iter().enumerate() {
        for (q, &j) in idx.iter().enumerate() {
            s[(p, q)] = a[(i, j)];
        }
    }
    s
}

/// Perron root of |K| (the spectral radius of a nonnegative matrix).
pub fn perron_root(k: &Matrix) -> f64 {
    let a = k.abs();
    strong_components(&a)
        .iter()
        .map(|c| perron_irreducible(&sub_matrix(&a, c)).0)
        .fold(0.0, f64::max)
}

/// Spectral radius by dense eigenvalue decomposition.
pub fn spectral_radius(k: &Matrix) -> f64 {
    if k.dim() == 0 {
        return 0.0;
    }
    k.to_nalgebra()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

struct BlockData {
    comps: Vec<Vec<usize>>,
    right: Vec<Vec<f64>>,
    left: Vec<Vec<f64>>,
    roots: Vec<f64>,
    iterations: usize,
}

fn blocks(k: &Matrix) -> BlockData {
    let a = k.abs();
    let comps = strong_components(&a);
    let mut right = Vec::new();
    let mut left = Vec::new();
    let mut roots = Vec::new();
    let mut iterations = 0;
    for c in &comps {
        let s = sub_matrix(&a, c);
        let (r, v, it) = perron_irreducible(&s);
        let (_, w, it2) = perron_irreducible(&s.transpose());
        iterations += it + it2;
        roots.push(r);
        right.push(v);
        left.push(w);
    }
    BlockData {
        comps,
        right,
        left,
        roots,
        iterations,
    }
}

// Within each block `inner` gives the per-entry scale; block p is further
// multiplied by tau^p so cross-block ratios δ_i/δ_j fall like 1/tau.
fn block_delta(data: &BlockData, tau: f64, inner: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let n: usize = data.comps.iter().map(Vec::len).sum();
    let mut delta = vec![1.0; n];
    for (p, c) in data.comps.iter().enumerate() {
        let level = tau.powi(p as i32);
        for (q, &i) in c.iter().enumerate() {
            delta[i] = level * inner(p, q);
        }
    }
    normalize_delta(&mut delta);
    delta
}

fn normalize_delta(delta: &mut [f64]) {
    let top = delta.iter().copied().fold(0.0, f64::max);
    if top > 0.0 && top.is_finite() {
        for d in delta.iter_mut() {
            *d /= top;
        }
    }
}

const TAUS: [f64; 7] = [1.0, 1e2, 1e4, 1e6, 1e8, 1e10, 1e12];

/// ρ∞(K) = inf over positive diagonals Δ of ‖ΔKΔ⁻¹‖∞.
///
/// `value` is the Perron root of |K|. `converged` reports whether the returned
/// `delta` achieves it within 1e−9; for reducible |K| with cross-block
/// coupling the infimum is generally not attained.
pub fn rho_inf(k: &Matrix) -> ScalingResult {
    let n = k.dim();
    if k.is_zero() || n == 0 {
        return ScalingResult {
            value: 0.0,
            delta: vec![1.0; n],
            iterations: 0,
            converged: true,
        };
    }
    let data = blocks(k);
    let root = data.roots.iter().copied().fold(0.0, f64::max);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let taus: &[f64] = if data.comps.len() == 1 { &TAUS[..1] } else { &TAUS };
    for &tau in taus {
        let delta = block_delta(&data, tau, |p, q| 1.0 / data.right[p][q]);
        if delta.iter().any(|d| !(*d > 0.0)) {
            continue;
        }
        let achieved = scaled_inf_unchecked(k, &delta);
        if best.as_ref().is_none_or(|(b, _)| achieved < *b) {
            best = Some((achieved, delta));
        }
    }
    let (achieved, delta) = best.unwrap_or((f64::INFINITY, vec![1.0; n]));
    let converged = achieved - root <= 1e-9 * (1.0 + root);
    ScalingResult {
        value: root,
        delta,
        iterations: data.iterations,
        converged,
    }
}

/// Cross-check for [`rho_inf`]: direct descent on log δ.
pub fn rho_inf_descent(k: &Matrix, max_evals: usize) -> ScalingResult {
    let n = k.dim();
    let start = rho_inf(k);
    if n <= 1 {
        return start;
    }
    let obj = |y: &[f64]| {
        let delta = unpack(y);
        scaled_inf_unchecked(k, &delta)
    };
    // Start from the identity scaling so this route does not reuse the
    // Perron vector.
    let m = nelder_mead(obj, &vec![0.0; n - 1], 0.5, 1e-15, max_evals);
    let delta = unpack(&m.x);
    ScalingResult {
        value: m.value,
        delta,
        iterations: m.evaluations,
        converged: m.converged,
    }
}

fn unpack(y: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = y.iter().map(|v| v.exp()).collect();
    d.push(1.0);
    d
}

fn pack(delta: &[f64]) -> Vec<f64> {
    let last = delta[delta.len() - 1];
    delta[..delta.len() - 1]
        .iter()
        .map(|d| (d / last).ln())
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct RhoTwoOptions {
    pub starts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for RhoTwoOptions {
    fn default() -> Self {
        RhoTwoOptions {
            starts: 16,
            max_evals: 10_000,
            seed: 42,
        }
    }
}

/// ρ₂(K) upper estimate with default options.
pub fn rho_two(k: &Matrix) -> ScalingResult {
    rho_two_with(k, &RhoTwoOptions::default())
}

/// Multi-start Nelder–Mead on log δ for inf ‖ΔKΔ⁻¹‖₂.
///
/// The first start is Δ = diag(√(w/v)) built from left and right Perron
/// vectors of |K|; there ‖Δ|K|Δ⁻¹‖₂ equals the Perron root, so the result
/// never exceeds ρ∞(K) beyond rounding.
pub fn rho_two_with(k: &Matrix, opts: &RhoTwoOptions) -> ScalingResult {
    let n = k.dim();
    if k.is_zero() || n == 0 {
        return ScalingResult {
            value: 0.0,
            delta: vec![1.0; n],
            iterations: 0,
            converged: true,
        };
    }
    if n == 1 {
        return ScalingResult {
            value: k[(0, 0)].abs(),
            delta: vec![1.0],
            iterations: 0,
            converged: true,
        };
    }
    let data = blocks(k);
    let obj = |y: &[f64]| k.similarity(&unpack(y)).norm_2();

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    let mut seed_best = (f64::INFINITY, vec![0.0; n - 1]);
    let taus: &[f64] = if data.comps.len() == 1 { &TAUS[..1] } else { &TAUS };
    for &tau in taus {
        let delta = block_delta(&data, tau, |p, q| (data.left[p][q] / data.right[p][q]).sqrt());
        if delta.iter().any(|d| !(*d > 0.0)) {
            continue;
        }
        let y = pack(&delta);
        let v = obj(&y);
        if v < seed_best.0 {
            seed_best = (v, y);
        }
    }
    seeds.push(seed_best.1.clone());
    seeds.push(vec![0.0; n - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while seeds.len() < opts.starts.max(1) {
        let base = &seeds[0];
        let y: Vec<f64> = base.iter().map(|b| b + rng.gen_range(-2.0..2.0)).collect();
        seeds.push(y);
    }
    seeds.truncate(opts.starts.max(1));

    let per_start = (opts.max_evals / seeds.len()).max(4 * n);
    let mut best = (seed_best.0, seed_best.1.clone(), false);
    let mut evals = taus.len();
    for s in &seeds {
        let m = nelder_mead(obj, s, 0.3, 1e-13, per_start);
        evals += m.evaluations;
        if m.value < best.0 {
            best = (m.value, m.x, m.converged);
        } else if m.value == best.0 {
            best.2 |= m.converged;
        }
    }
    let mut delta = unpack(&best.1);
    normalize_delta(&mut delta);
    ScalingResult {
        value: best.0,
        delta,
        iterations: evals,
        converged: best.2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn scaled_norm_examples() {
        let k = m(&[&[0.0, 2.0], &[0.125, 0.0]]);
        assert_eq!(scaled_inf_norm(&k, &[1.0, 1.0]).unwrap(), 2.0);
        assert_eq!(scaled_inf_norm(&k, &[1.0, 4.0]).unwrap(), 0.5);
        assert_eq!(scaled_inf_norm(&Matrix::zeros(3), &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(
            scaled_inf_norm(&k, &[1.0, 0.0]),
            Err(ScalingError::NonPositiveDelta { index: 1, .. })
        ));
    }

    #[test]
    fn rho_inf_examples() {
        let k = m(&[&[0.0, 2.0], &[0.125, 0.0]]);
        let r = rho_inf(&k);
        assert!((r.value - 0.5).abs() < 1e-12);
        assert!(r.converged);
        assert!((scaled_inf_norm(&k, &r.delta).unwrap() - r.value).abs() < 1e-9);
        assert_eq!(rho_inf(&Matrix::zeros(2)).value, 0.0);
        let d = rho_inf(&Matrix::diag(&[0.3, -0.7]));
        assert!((d.value - 0.7).abs() < 1e-15);
        assert!(d.converged);
    }

    #[test]
    fn reducible_not_attained() {
        let k = m(&[&[0.5, 1.0], &[0.0, 0.5]]);
        let r = rho_inf(&k);
        assert!((r.value - 0.5).abs() < 1e-12);
        let achieved = scaled_inf_norm(&k, &r.delta).unwrap();
        assert!((0.5..0.5 + 1e-9).contains(&achieved));
    }

    #[test]
    fn nilpotent_chain() {
        let k = m(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0]]);
        let r = rho_inf(&k);
        assert_eq!(r.value, 0.0);
        assert!(scaled_inf_norm(&k, &r.delta).unwrap() < 1e-9);
        assert!(rho_two(&k).value < 1e-6);
    }

    #[test]
    fn rho_two_antidiagonal() {
        let k = m(&[&[0.0, 2.0], &[0.125, 0.0]]);
        let r = rho_two(&k);
        assert!((r.value - 0.5).abs() < 1e-9, "{}", r.value);
        assert_eq!(rho_two(&Matrix::zeros(3)).value, 0.0);
    }

    #[test]
    fn descent_agrees() {
        let k = m(&[&[0.1, -0.4, 0.3], &[0.2, 0.0, -0.5], &[0.6, 0.1, 0.2]]);
        let p = rho_inf(&k);
        let d = rho_inf_descent(&k, 20_000);
        assert!(d.value >= p.value - 1e-9);
        assert!(d.value - p.value < 1e-4, "{} vs {}", d.value, p.value);
        assert!((p.value - spectral_radius(&k.abs())).abs() < 1e-9);
    }
}
