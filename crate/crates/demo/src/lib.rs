//! Browser demo: the 2×2 (k1, k2) region map, η curves against the
//! small-gain check, and a boundary-driven transport simulation.

use hypiss::model::{SpatialGrid, SystemSpec};
use hypiss::planar::{
    blowup_x1, check_planar, default_k_grid, eta_closed_form, eta_numeric, kk_exists, PlanarParams,
};
use hypiss::sim::{simulate, DisturbanceSpec, SimMode, SimOptions, TimeFunction};
use wasm_bindgen::prelude::*;

/// Region codes in [`region_map`].
pub const NEITHER: u8 = 0;
pub const RICCATI_ONLY: u8 = 1;
pub const BOTH: u8 = 2;
/// Small-gain holds but the Riccati test does not. Never expected.
pub const SMALL_GAIN_ONLY: u8 = 3;

fn params(a: f64, b: f64, lambda1: f64, lambda2: f64, k1: f64, k2: f64) -> Result<PlanarParams, String> {
    PlanarParams::constant(a, b, lambda1, lambda2, k1, k2).map_err(|e| e.to_string())
}

/// Row-major `size × size` map over k1, k2 ∈ [0, k_max], k1 along rows.
#[wasm_bindgen]
pub fn region_map(a: f64, b: f64, lambda1: f64, lambda2: f64, k_max: f64, size: usize) -> Result<Vec<u8>, String> {
    if !(k_max > 0.0) || !(2..=400).contains(&size) {
        return Err(format!("need k_max > 0 and 2 ≤ size ≤ 400, got {k_max}, {size}"));
    }
    let base = params(a, b, lambda1, lambda2, 0.0, 0.0)?;
    let grid = default_k_grid();
    let step = k_max / (size - 1) as f64;
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        for c in 0..size {
            let p = PlanarParams {
                k1: r as f64 * step,
                ..base.with_k2(c as f64 * step)
            };
            let ours = check_planar(&p).holds();
            let kk = kk_exists(&p, &grid).is_some();
            out.push(match (ours, kk) {
                (false, false) => NEITHER,
                (true, false) => RICCATI_ONLY,
                (true, true) => BOTH,
                (false, true) => SMALL_GAIN_ONLY,
            });
        }
    }
    Ok(out)
}

/// η sampled at `points` nodes of [0, 1]; NaN past blow-up.
#[wasm_bindgen]
pub fn eta_curve(a: f64, b: f64, lambda1: f64, lambda2: f64, k1: f64, points: usize) -> Result<Vec<f64>, String> {
    if points < 2 {
        return Err("need at least two points".into());
    }
    let p = params(a, b, lambda1, lambda2, k1, 0.0)?;
    let (c1, c2) = p.constant_rates().ok_or("constant coefficients expected")?;
    Ok((0..points)
        .map(|j| {
            let x = j as f64 / (points - 1) as f64;
            eta_closed_form(c1, c2, k1, x).unwrap_or(f64::NAN)
        })
        .collect())
}

/// JSON summary of both 2×2 conditions at one parameter point.
#[wasm_bindgen]
pub fn compare(a: f64, b: f64, lambda1: f64, lambda2: f64, k1: f64, k2: f64) -> Result<String, String> {
    let p = params(a, b, lambda1, lambda2, k1, k2)?;
    let (c1, c2) = p.constant_rates().ok_or("constant coefficients expected")?;
    let report = check_planar(&p);
    let kk = kk_exists(&p, &default_k_grid());
    let numeric = eta_numeric(&p, 1.0);
    let value = serde_json::json!({
        "riccati": report,
        "small_gain": { "holds": kk.is_some(), "K": kk },
        "x1": blowup_x1(c1, c2, k1),
        "eta1_numeric": if numeric.blew_up { None } else { Some(numeric.last()) },
    });
    Ok(hypiss::cli::to_json(&value))
}

/// Result of [`transport`]: sup-norm history and the final profiles.
#[wasm_bindgen]
pub struct TransportRun {
    times: Vec<f64>,
    c0: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
}

#[wasm_bindgen]
impl TransportRun {
    pub fn times(&self) -> Vec<f64> {
        self.times.clone()
    }

    pub fn c0(&self) -> Vec<f64> {
        self.c0.clone()
    }

    pub fn u1(&self) -> Vec<f64> {
        self.u1.clone()
    }

    pub fn u2(&self) -> Vec<f64> {
        self.u2.clone()
    }
}

/// u_t + diag(1, −1) u_x = 0 on [0, 1] with u1(0) = k1 u2(0) + amp·sin(ωt),
/// u2(1) = k2 u1(1), started from rest.
#[wasm_bindgen]
pub fn transport(k1: f64, k2: f64, amp: f64, omega: f64, horizon: f64, points: usize) -> Result<TransportRun, String> {
    if !(horizon > 0.0 && horizon <= 200.0) || !(3..=4097).contains(&points) {
        return Err("need 0 < T ≤ 200 and 3 ≤ points ≤ 4097".into());
    }
    let sys: SystemSpec = serde_json::from_value(serde_json::json!({
        "n": 2, "m": 1, "L": 1.0, "lambda": [1.0, -1.0],
        "boundary_jacobian": [[0.0, k1], [k2, 0.0]]
    }))
    .map_err(|e| e.to_string())?;
    let dist = DisturbanceSpec {
        boundary: vec![
            TimeFunction::expr(&format!("{amp:?} * sin({omega:?} * t)")).map_err(|e| e.to_string())?,
            TimeFunction::Constant(0.0),
        ],
        internal: None,
        bound: None,
    };
    let grid = SpatialGrid::uniform(1.0, points).map_err(|e| e.to_string())?;
    let u0 = vec![vec![0.0; points]; 2];
    let traj = simulate(&sys, &u0, &dist, &grid, horizon, SimMode::Linear, &SimOptions::default())
        .map_err(|e| e.to_string())?;
    let last = traj.snapshots.last().expect("at least the initial snapshot");
    Ok(TransportRun {
        u1: last[0].clone(),
        u2: last[1].clone(),
        times: traj.times,
        c0: traj.c0_norms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_map_never_has_small_gain_only() {
        let m = region_map(1.0, 0.5, 1.0, -1.0, 1.2, 25).unwrap();
        assert_eq!(m.len(), 625);
        assert!(!m.contains(&SMALL_GAIN_ONLY));
        assert!(m.contains(&RICCATI_ONLY));
        assert_ne!(m[0], NEITHER);
    }

    #[test]
    fn region_map_zero_coupling_is_product_condition() {
        // a = b = 0: both tests reduce to |k1 k2| < 1 (small gain up to its K grid).
        let size = 21;
        let m = region_map(0.0, 0.0, 1.0, -1.0, 2.0, size).unwrap();
        for r in 0..size {
            for c in 0..size {
                let (k1, k2) = (r as f64 * 0.1, c as f64 * 0.1);
                let ours = m[r * size + c] != NEITHER;
                if (k1 * k2 - 1.0).abs() > 1e-9 {
                    assert_eq!(ours, k1 * k2 < 1.0, "k1 = {k1}, k2 = {k2}");
                }
            }
        }
    }

    #[test]
    fn eta_curve_is_tan_for_unit_rates() {
        let v = eta_curve(1.0, 1.0, 1.0, -1.0, 0.0, 11).unwrap();
        for (j, e) in v.iter().enumerate() {
            assert!((e - (j as f64 / 10.0).tan()).abs() < 1e-12);
        }
        let past = eta_curve(3.0, 3.0, 1.0, -1.0, 0.0, 11).unwrap();
        assert!(past[10].is_nan());
    }

    #[test]
    fn compare_is_json() {
        let s = compare(1.0, 1.0, 1.0, -1.0, 0.0, 0.6).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["riccati"]["holds"], true);
        assert_eq!(v["small_gain"]["holds"], false);
        assert!((v["eta1_numeric"].as_f64().unwrap() - 1f64.tan()).abs() < 1e-8);
    }

    #[test]
    fn transport_tracks_the_input() {
        let run = transport(0.0, 0.0, 0.01, 1.0, 5.0, 513).unwrap();
        let t = *run.times().last().unwrap();
        let u1 = run.u1();
        for (j, v) in u1.iter().enumerate() {
            let x = j as f64 / 512.0;
            assert!((v - 0.01 * (t - x).sin()).abs() < 2e-4);
        }
        assert!(run.u2().iter().all(|v| *v == 0.0));
        assert!(transport(0.0, 0.0, 0.01, 1.0, -1.0, 513).is_err());
    }
}
