//! Acceptance criteria 1–11. Runs as a plain binary (`harness = false`) and
//! prints one PASS/FAIL line per criterion; exits non-zero if any fail.

use hypiss::certifier::{certify, max_iss_length, CertifyError, CertifyOptions, MaxLengthOptions};
use hypiss::linalg::Matrix;
use hypiss::model::{SpatialGrid, SystemSpec};
use hypiss::ode::{self, Adaptive};
use hypiss::planar::{
    blowup_x1, check_planar, default_k_grid, eta_closed_form, eta_numeric, h_branch, implication_experiment,
    kk_exists, strictness_witness, x5, HBranch, PlanarError, PlanarParams,
};
use hypiss::scaling::{rho_inf, rho_two};
use hypiss::sim::{
    envelope_check, envelope_fit, lyapunov_v, lyapunov_w, make_compatible, node_speeds, simulate, DisturbanceSpec,
    LyapunovConfig, SimMode, SimOptions, TimeFunction,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn system(v: serde_json::Value) -> SystemSpec {
    serde_json::from_value(v).expect("valid system")
}

fn random_matrices() -> Vec<Matrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..1000)
        .map(|_| {
            let n = rng.gen_range(2..=5);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            Matrix::from_rows(&rows).unwrap()
        })
        .collect()
}

/// Spectral radius of |K| from a dense eigen-decomposition.
fn perron_oracle(k: &Matrix) -> f64 {
    let n = k.dim();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| k.row(i)[j].abs());
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn c1_rho_inf_oracle() -> Outcome {
    let ms = random_matrices();
    let worst = ms
        .par_iter()
        .map(|k| (rho_inf(k).value - perron_oracle(k)).abs())
        .reduce(|| 0.0, f64::max);
    outcome(worst <= 1e-6, format!("max |rho_inf - perron(|K|)| = {worst:.3e}"))
}

fn c2_norm_ordering() -> Outcome {
    let ms = random_matrices();
    let worst = ms
        .par_iter()
        .map(|k| rho_two(k).value - rho_inf(k).value)
        .reduce(|| f64::NEG_INFINITY, f64::max);
    outcome(worst <= 1e-6, format!("max (rho_two - rho_inf) = {worst:.3e}"))
}

fn c3_closed_form() -> Outcome {
    let worst = (0..200u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let p = PlanarParams::constant(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.3..3.0),
                -rng.gen_range(0.3..3.0),
                rng.gen_range(-1.5..1.5),
                0.5,
            )
            .unwrap();
            let (c1, c2) = p.constant_rates().unwrap();
            let x1 = blowup_x1(c1, c2, p.k1);
            let x_max = if x1.is_finite() { 0.9 * x1 } else { 2.0 };
            let prof = eta_numeric(&p, x_max);
            prof.grid
                .iter()
                .zip(&prof.values)
                .map(|(&x, &v)| (v - eta_closed_form(c1, c2, p.k1, x).unwrap()).abs())
                .fold(if prof.blew_up { f64::INFINITY } else { 0.0 }, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    let x1 = blowup_x1(1.0, 1.0, 0.0);
    let eta1 = eta_closed_form(1.0, 1.0, 0.0, 1.0).unwrap();
    let pass = worst <= 1e-6 && (x1 - FRAC_PI_2).abs() <= 1e-9 && (eta1 - 1f64.tan()).abs() <= 1e-8;
    outcome(
        pass,
        format!("max |numeric - closed| = {worst:.3e}; x1 - pi/2 = {:.1e}; eta(1) - tan 1 = {:.1e}", x1 - FRAC_PI_2, eta1 - 1f64.tan()),
    )
}

fn c4_implication() -> Outcome {
    let s = implication_experiment(42, 1000);
    outcome(
        s.violations == 0,
        format!("{} trials, {} with small-gain holding, {} violations", s.trials, s.kk_holds, s.violations),
    )
}

fn c5_strictness() -> Outcome {
    let grid = default_k_grid();
    let target = 1.0 / 1f64.tan() - 1e-3;
    let witness = strictness_witness(1.0, 1.0, 1.0, -1.0, 0.0, &[1e-3], &grid);
    let first = match &witness {
        Ok(w) => (w.k2 - target).abs() < 1e-12 && check_planar(w).holds() && kk_exists(w, &grid).is_none(),
        Err(_) => false,
    };
    let none = matches!(
        strictness_witness(0.0, 0.0, 1.0, -1.0, 0.0, &[1e-3], &grid),
        Err(PlanarError::NoWitnessFound(_))
    );
    outcome(
        first && none,
        format!(
            "witness at k2 = cot(1) - 1e-3: {}; a = b = 0 gives NoWitnessFound: {none}",
            if first { "ok" } else { "missing" }
        ),
    )
}

/// First x where the classical RK4 solution of h' = A1 + B1 h² + 2K h leaves [0, 1e12].
fn h_blowup_rk4(a1: f64, b1: f64, k: f64, x_max: f64) -> f64 {
    let opts = Adaptive {
        h_max: x_max / 2000.0,
        ..Adaptive::default()
    };
    let sol = ode::integrate(
        |_, h, d| d[0] = a1 + b1 * h[0] * h[0] + 2.0 * k * h[0],
        &[0.0],
        &[0.0, x_max],
        &opts,
    );
    sol.blow_up.unwrap_or(f64::INFINITY)
}

fn c6_h_ode() -> Outcome {
    let axis: Vec<f64> = (0..50).map(|j| 0.01 + 1.99 * j as f64 / 49.0).collect();
    let mut cells = Vec::new();
    for &a1 in &axis {
        for &b1 in &axis {
            for &k in &axis {
                let g = (k.exp() - 1.0) / k;
                if a1 * b1 * g * g < 1.0 {
                    cells.push((a1, b1, k));
                }
            }
        }
    }
    let results: Vec<(HBranch, f64, f64)> = cells
        .par_iter()
        .map(|&(a1, b1, k)| {
            let x = x5(a1, b1, k).unwrap();
            let err = if x.is_finite() {
                (h_blowup_rk4(a1, b1, k, 1.5 * x) - x).abs()
            } else {
                0.0
            };
            (h_branch(a1, b1, k).unwrap(), x, err)
        })
        .collect();
    let violations = results.iter().filter(|r| !(r.1 > 1.0)).count();
    let worst = results.iter().map(|r| r.2).fold(0.0, f64::max);
    let count = |b: HBranch| results.iter().filter(|r| r.0 == b).count();
    let (tan, sinh, rat) = (count(HBranch::Tan), count(HBranch::Sinh), count(HBranch::Rational));
    outcome(
        violations == 0 && worst <= 1e-3 && tan > 0 && sinh > 0 && rat > 0,
        format!(
            "{} cells (tan {tan}, sinh {sinh}, rational {rat}); x5 <= 1 in {violations}; max |x5 - rk4| = {worst:.2e}",
            results.len()
        ),
    )
}

fn c7_max_length() -> Outcome {
    let sys = system(serde_json::json!({
        "n": 2, "m": 1, "L": 1.0, "lambda": [1.0, -1.0],
        "source_jacobian": [[0.0, 1.0], [1.0, 0.0]],
        "boundary_jacobian": [[0.0, 0.0], [0.0, 0.0]]
    }));
    let opts = MaxLengthOptions {
        step: 1e-5,
        ..MaxLengthOptions::default()
    };
    let ls: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
        .par_iter()
        .map(|&c| max_iss_length(&sys, c, &opts).length)
        .collect();
    let monotone = ls.windows(2).all(|w| w[1] >= w[0]);
    let l = ls[3];
    let oracle = weight_blowup_rk4(1e3, 1e-5);
    outcome(
        (l - FRAC_PI_4).abs() <= 0.02 && (oracle - FRAC_PI_4).abs() <= 0.02 && monotone,
        format!("L(1e3) = {l:.6}, fixed-step RK4 oracle {oracle:.6}, target pi/4 = {FRAC_PI_4:.6}; nondecreasing: {monotone}"),
    )
}

/// Blow-up length of f1' = −2 f1^{3/2}/√f2, f2' = 2 f2^{3/2}/√f1 (Λ = (1, −1), unit
/// antidiagonal coupling) from f = (C, 1e−8·C) by classical RK4 with a fixed step.
fn weight_blowup_rk4(c: f64, h: f64) -> f64 {
    let rhs = |f: [f64; 2]| [-2.0 * f[0] * (f[0] / f[1]).sqrt(), 2.0 * f[1] * (f[1] / f[0]).sqrt()];
    let axpy = |f: [f64; 2], k: [f64; 2], s: f64| [f[0] + s * k[0], f[1] + s * k[1]];
    let mut f = [c, 1e-8 * c];
    let mut x = 0.0;
    while x < 100.0 {
        let k1 = rhs(f);
        let k2 = rhs(axpy(f, k1, h / 2.0));
        let k3 = rhs(axpy(f, k2, h / 2.0));
        let k4 = rhs(axpy(f, k3, h));
        f = [
            f[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            f[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        x += h;
        let ratio = f[1] / f[0];
        if !(ratio.is_finite() && ratio > 0.0 && ratio < 1e24) {
            return x;
        }
    }
    f64::INFINITY
}

fn transport_errors(points: usize) -> (f64, f64) {
    let sys = system(serde_json::json!({
        "n": 2, "m": 1, "L": 1.0, "lambda": [1.0, -1.0],
        "boundary_jacobian": [[0.0, 0.0], [0.0, 0.0]]
    }));
    let dist = DisturbanceSpec {
        boundary: vec![TimeFunction::expr("0.01 * sin(t)").unwrap(), TimeFunction::Constant(0.0)],
        internal: None,
        bound: None,
    };
    let grid = SpatialGrid::uniform(1.0, points).unwrap();
    let u0 = vec![vec![0.0; points]; 2];
    let traj = simulate(&sys, &u0, &dist, &grid, 10.0, SimMode::Linear, &SimOptions::default()).unwrap();
    let exact = |t: f64, x: f64| if t > x { 0.01 * (t - x).sin() } else { 0.0 };
    let mut sup = 0.0f64;
    for (t, snap) in traj.times.iter().zip(&traj.snapshots) {
        for (j, &x) in grid.points().iter().enumerate() {
            sup = sup.max((snap[0][j] - exact(*t, x)).abs());
        }
    }
    let t_end = traj.horizon();
    let last = traj.snapshots.last().unwrap();
    let end = grid
        .points()
        .iter()
        .enumerate()
        .map(|(j, &x)| (last[0][j] - exact(t_end, x)).abs())
        .fold(0.0, f64::max);
    (sup / 0.01, end / 0.01)
}

fn c8_transport() -> Outcome {
    let (s512, e512) = transport_errors(512);
    let (s1024, e1024) = transport_errors(1024);
    let order = (e512 / e1024).log2();
    outcome(
        s512 <= 0.02 && s1024 <= 0.01 && order >= 0.8,
        format!(
            "sup error {:.3}% at 512, {:.3}% at 1024; observed order {order:.2}",
            100.0 * s512,
            100.0 * s1024
        ),
    )
}

fn reflecting_system() -> SystemSpec {
    system(serde_json::json!({
        "n": 2, "m": 1, "L": 1.0, "lambda": [1.0, -1.0],
        "boundary_jacobian": [[0.0, 0.5], [0.5, 0.0]]
    }))
}

fn smooth_state(seed: u64, grid: &SpatialGrid, amp: f64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|_| {
            let (w, ph): (f64, f64) = (rng.gen_range(1.0..4.0), rng.gen_range(0.0..std::f64::consts::TAU));
            grid.points().iter().map(|&x| amp * (w * x + ph).sin()).collect()
        })
        .collect()
}

fn c9_envelope() -> Outcome {
    let sys = reflecting_system();
    let theta = match certify(&sys, &CertifyOptions::default()) {
        Ok(c) => c.theta,
        Err(e) => return outcome(false, format!("certify failed: {e}")),
    };
    let grid = SpatialGrid::uniform(1.0, 257).unwrap();
    let run = |seed: u64| {
        let dist = DisturbanceSpec::random_sines(seed, 2, 0.05, 6);
        let u0 = make_compatible(&sys, SimMode::Linear, &smooth_state(seed, &grid, 0.1), &dist, &grid).unwrap();
        let traj = simulate(&sys, &u0, &dist, &grid, 15.0, SimMode::Linear, &SimOptions::default()).unwrap();
        (traj, dist)
    };
    let train: Vec<_> = (0..10u64).into_par_iter().map(run).collect();
    let held: Vec<_> = (100..110u64).into_par_iter().map(run).collect();
    let items: Vec<_> = train.iter().map(|(t, d)| (t, d)).collect();
    let g = match envelope_fit(&items, 1) {
        Ok(g) => g,
        Err(e) => return outcome(false, format!("fit failed: {e}")),
    };
    let train_ok = train.iter().all(|(t, d)| envelope_check(t, d, &g, 1).unwrap().holds);
    let held_worst = held
        .iter()
        .map(|(t, d)| envelope_check(t, d, &g, 1).unwrap().worst_ratio)
        .fold(0.0, f64::max);
    outcome(
        (theta - 0.5).abs() < 1e-9 && g.gamma > 0.0 && train_ok && held_worst <= 1.2,
        format!(
            "theta = {theta:.6}; C1 = {:.4}, C2 = {:.4}, gamma = {:.4}; training holds: {train_ok}; held-out worst ratio {held_worst:.4}",
            g.c1, g.c2, g.gamma
        ),
    )
}

fn c10_lyapunov() -> Outcome {
    let sys = reflecting_system();
    let cert = match certify(&sys, &CertifyOptions::default()) {
        Ok(c) => c,
        Err(CertifyError::Failed(f)) => return outcome(false, format!("certify failed: {}", f.reason)),
        Err(e) => return outcome(false, e.to_string()),
    };
    let o = sys.orientation();
    let grid = SpatialGrid::uniform(1.0, 1025).unwrap();
    // Profiles with broad maxima in both u and u_x.
    let plateau = |c: f64, s: f64| -> Vec<f64> {
        grid.points()
            .iter()
            .map(|&x| c + s * (x - (2.0 * x - 1.0).powi(5) / 10.0))
            .collect()
    };
    let snaps = [
        vec![plateau(9.0, 1.0), plateau(8.0, -1.0)],
        vec![plateau(5.0, 0.5), plateau(-6.0, 0.5)],
        vec![plateau(12.0, -2.0), plateau(3.0, 0.2)],
    ];
    let mut worst = 0.0f64;
    for s in &snaps {
        let speeds = node_speeds(&sys, SimMode::Linear, s, &grid).unwrap();
        let v = lyapunov_v(s, &grid, &speeds, &cert.f, cert.mu, &o).unwrap();
        let (w1, w2) = lyapunov_w(s, &grid, &speeds, &cert.f, cert.mu, 64.0, &o).unwrap();
        worst = worst.max(((w1 + w2) - v).abs() / v);
    }

    let dist = DisturbanceSpec::zero(2);
    let u0 = make_compatible(&sys, SimMode::Linear, &smooth_state(7, &grid, 1.0), &dist, &grid).unwrap();
    let opts = SimOptions {
        lyapunov: Some(LyapunovConfig {
            f: cert.f.clone(),
            mu: cert.mu,
            ps: vec![2.0, 8.0],
        }),
        ..SimOptions::default()
    };
    let traj = simulate(&sys, &u0, &dist, &grid, 8.0, SimMode::Linear, &opts).unwrap();
    let ly = traj.lyapunov.as_ref().unwrap();
    let mut rates = Vec::new();
    let mut monotone = true;
    for q in 0..2 {
        let w: Vec<f64> = ly.iter().map(|s| s.w1[q] + s.w2[q]).collect();
        monotone &= w.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-9));
        let logs: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        rates.push(-slope(&traj.times, &logs));
    }
    let rate = rates.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        worst <= 0.02 && monotone && rate > 0.0,
        format!(
            "max |W64 - V|/V = {:.3}%; W nonincreasing: {monotone}; fitted rates {:.4} (p=2), {:.4} (p=8)",
            100.0 * worst,
            rates[0],
            rates[1]
        ),
    )
}

fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn c11_certifier_consistency() -> Outcome {
    let results: Vec<(bool, bool, f64, f64)> = (0..100u64)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + s);
            let sign = |r: &mut ChaCha8Rng| if r.gen_bool(0.5) { 1.0 } else { -1.0 };
            let a = sign(&mut rng) * rng.gen_range(0.1..1.5);
            let b = sign(&mut rng) * rng.gen_range(0.1..1.5);
            let p = PlanarParams::constant(
                a,
                b,
                rng.gen_range(0.5..2.0),
                -rng.gen_range(0.5..2.0),
                rng.gen_range(-0.8..0.8),
                rng.gen_range(-0.8..0.8),
            )
            .unwrap();
            let planar = check_planar(&p);
            let (verdict, margin) = match certify(&p.to_system().unwrap(), &CertifyOptions::default()) {
                Ok(c) => (true, c.boundary.margin),
                Err(CertifyError::Failed(f)) => (false, f.boundary_margin.unwrap_or(-1.0)),
                Err(e) => panic!("{e}"),
            };
            (verdict, planar.holds(), margin, planar.margin())
        })
        .collect();
    let borderline = |r: &(bool, bool, f64, f64)| r.2.abs() <= 1e-3 || r.3.abs() <= 1e-3;
    let compared: Vec<_> = results.iter().filter(|r| !borderline(r)).collect();
    let disagreements = compared.iter().filter(|r| r.0 != r.1).count();
    let holding = compared.iter().filter(|r| r.1).count();
    outcome(
        disagreements == 0,
        format!(
            "{} compared ({holding} hold, {} fail), {} borderline, {disagreements} disagreements",
            compared.len(),
            compared.len() - holding,
            results.len() - compared.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 11] = [
        ("rho_inf matches the Perron root of |K|", c1_rho_inf_oracle, 5),
        ("rho_two <= rho_inf", c2_norm_ordering, 60),
        ("2x2 Riccati closed form vs numeric", c3_closed_form, 10),
        ("small-gain implies the Riccati test", c4_implication, 30),
        ("strictness witness", c5_strictness, 10),
        ("h-ODE x5 > 1 on the small-gain region", c6_h_ode, 60),
        ("maximal ISS length", c7_max_length, 20),
        ("transport exactness", c8_transport, 30),
        ("ISS envelope fit and hold-out", c9_envelope, 120),
        ("Lyapunov p-limit and decay", c10_lyapunov, 30),
        ("certifier agrees with the 2x2 test", c11_certifier_consistency, 120),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_time = took <= Duration::from_secs(*limit);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {name}; {} [{:.2} s, limit {limit} s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
