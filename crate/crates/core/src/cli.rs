//! Command-line front end. `run` parses arguments, dispatches and returns the
//! process exit code: 0 on success, 2 when a checked condition fails, 1 on
//! usage or input errors.

use crate::certifier::{certify, max_iss_length, CertifyError, CertifyOptions, FProfile, MaxLengthOptions};
use crate::expr::{Env, Expr};
use crate::linalg::Matrix;
use crate::model::{Coefficient, SpatialGrid, SystemSpec};
use crate::planar::{
    check_planar, default_k_grid, implication_experiment, kk_exists, log_grid, strictness_witness, PlanarParams,
};
use crate::scaling::{perron_root, rho_inf, rho_two_with, spectral_radius, RhoTwoOptions};
use crate::sim::{
    envelope_check, envelope_fit_check, make_compatible, simulate, DisturbanceSpec, EnvelopeGains, LyapunovConfig,
    SimMode, SimOptions,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_CONDITION: i32 = 2;

const SCHEMAS: &str = r#"JSON input schemas

system (--system):
  { "n": int, "m": int, "L": number,
    "lambda": [coef; n],
    "source_jacobian": [[coef; n]; n]        (optional, default 0),
    "boundary_jacobian": [[number; n]; n],
    "nonlinear": { "a": [[expr; n]; n], "b": [expr; n], "g": [expr; n] }  (optional) }
  coef = number | {"expr": "<expression in x>"} | {"samples": [[x, value], ...]}
  expr = "<expression in x, u1..un>"; g receives the outgoing values ordered by component.

disturbance (--disturbance):
  { "boundary": [tfun; n], "internal": ["<expression in t, x>"; n] (optional),
    "bound": number (optional) }
  tfun = number | {"expr": "<expression in t>"} | {"samples": [[t, value], ...]}

initial state (--u0):
  [component; n], component = [number; grid points] | "<expression in x>"

envelope gains (--envelope FILE):
  { "C1": number, "C2": number, "gamma": number }

matrix (--matrix): [[number; n]; n]

Outputs are JSON with numbers written to 17 significant digits (non-finite
values as null), or CSV with a header row, '.' decimals and ',' separators.
Exit codes: 0 success, 2 condition fails, 1 usage or input error.
HYPISS_THREADS caps the worker count."#;

#[derive(Debug, Parser)]
#[command(name = "hypiss", version, about = "ISS certificates and simulation for 1-D hyperbolic systems", after_long_help = SCHEMAS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Search for weights f and a scaling that certify ISS.
    Certify(CertifyArgs),
    /// ρ∞ and ρ₂ of a matrix with their oracles.
    Rho(RhoArgs),
    /// Simulate a system and check a fading-memory envelope.
    Simulate(SimulateArgs),
    /// Riccati test versus the small-gain condition for a 2×2 system.
    #[command(name = "compare-2x2")]
    Compare2x2(CompareArgs),
    /// Maximal ISS length L(C) for a system with zero boundary map.
    MaxLength(MaxLengthArgs),
    /// CSV region map of both 2×2 conditions over a (k1, k2) grid.
    Sweep(SweepArgs),
    /// Seeded check that the small-gain condition implies the Riccati test.
    Implication(ImplicationArgs),
    /// Parameters accepted by the Riccati test but not by the small-gain condition.
    Strictness(StrictnessArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(after_long_help = SCHEMAS)]
pub struct CertifyArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Exponential weight μ; defaults to 0.05/L.
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 257)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub alpha0: f64,
    /// Run the weight search even when M ≡ 0.
    #[arg(long)]
    pub force_sweep: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RhoArgs {
    /// Matrix as a JSON array of rows.
    #[arg(long)]
    pub matrix: String,
    /// Seed of the ρ₂ multi-start.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Linear,
    Semilinear,
    QuasilinearDiagonal,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Linear => SimMode::Linear,
            ModeArg::Semilinear => SimMode::Semilinear,
            ModeArg::QuasilinearDiagonal => SimMode::QuasilinearDiagonal,
        }
    }
}

#[derive(Debug, Args)]
#[command(after_long_help = SCHEMAS)]
pub struct SimulateArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Initial state file; zero when absent.
    #[arg(long)]
    pub u0: Option<PathBuf>,
    /// Disturbance file; zero when absent.
    #[arg(long)]
    pub disturbance: Option<PathBuf>,
    #[arg(long = "T")]
    pub horizon: f64,
    #[arg(long, default_value_t = 513)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 0.9)]
    pub cfl: f64,
    /// Time between recorded snapshots; defaults to T/200.
    #[arg(long)]
    pub record_every: Option<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    pub mode: ModeArg,
    /// Comma-separated exponents p for W_{1,p} and W_{2,p}.
    #[arg(long, value_delimiter = ',')]
    pub lyapunov: Option<Vec<f64>>,
    /// Certificate JSON providing f and μ for the Lyapunov columns.
    #[arg(long)]
    pub certificate: Option<PathBuf>,
    /// "fit" or a gains file.
    #[arg(long, default_value = "fit")]
    pub envelope: String,
    /// Norm order of the envelope (0 or 1).
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Treat compatibility violations as errors.
    #[arg(long)]
    pub strict: bool,
    /// Adjust u0 near the inflow ends to satisfy the compatibility conditions.
    #[arg(long)]
    pub make_compatible: bool,
    /// Trajectory CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Envelope report JSON; stderr when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanarArgs {
    /// Constant or expression in x.
    #[arg(long, allow_hyphen_values = true)]
    pub a: String,
    #[arg(long, allow_hyphen_values = true)]
    pub b: String,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda1: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda2: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub planar: PlanarArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub k1: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub k2: f64,
    #[arg(long, default_value_t = 64)]
    pub k_grid_points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
#[command(after_long_help = SCHEMAS)]
pub struct MaxLengthArgs {
    #[arg(long)]
    pub system: PathBuf,
    /// Comma-separated values of C.
    #[arg(long = "C", value_delimiter = ',', default_value = "1,10,100,1000")]
    pub c: Vec<f64>,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 100.0)]
    pub cap: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub eps0: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub planar: PlanarArgs,
    /// lo:hi:count
    #[arg(long, default_value = "0:1.5:31", allow_hyphen_values = true)]
    pub k1_range: String,
    #[arg(long, default_value = "0:1.5:31", allow_hyphen_values = true)]
    pub k2_range: String,
    #[arg(long, default_value_t = 64)]
    pub k_grid_points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ImplicationArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct StrictnessArgs {
    #[arg(long, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub b: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda1: f64,
    #[arg(long, allow_hyphen_values = true)]
    pub lambda2: f64,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pub k1: f64,
    /// Comma-separated ε values, tried from the largest down.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.01,0.001,0.0001")]
    pub eps: Vec<f64>,
    #[arg(long, default_value_t = 64)]
    pub k_grid_points: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

/// Error carrying the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

fn input_error(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INPUT,
        message: e.to_string(),
    }
}

/// JSON formatter writing every float with 17 significant digits.
struct Fixed17;

impl serde_json::ser::Formatter for Fixed17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }
}

/// Compact JSON with 17 significant digits per float.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Fixed17);
    value.serialize(&mut ser).expect("in-memory serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Number formatting used in CSV output.
pub fn csv_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> io::Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name"))?;
    let mut tmp_name = OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })
}

fn emit(out: &Option<PathBuf>, contents: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_atomic(p, contents).map_err(|e| input_error(format!("{}: {e}", p.display()))),
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn parse_coefficient(s: &str) -> Result<Coefficient, Failure> {
    match s.trim().parse::<f64>() {
        Ok(v) => Ok(Coefficient::Constant(v)),
        Err(_) => Coefficient::expr(s).map_err(input_error),
    }
}

fn parse_range(s: &str) -> Result<Vec<f64>, Failure> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || input_error(format!("range {s:?} must be lo:hi:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].parse().map_err(|_| bad())?;
    let count: usize = parts[2].parse().map_err(|_| bad())?;
    if count == 0 {
        return Err(bad());
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    Ok((0..count).map(|j| lo + (hi - lo) * j as f64 / (count - 1) as f64).collect())
}

fn k_grid(points: usize) -> Vec<f64> {
    if points == 64 {
        default_k_grid()
    } else {
        log_grid(1e-3, 1e2, points.max(1))
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum InitComponent {
    Values(Vec<f64>),
    Expr(String),
}

fn load_u0(path: &Option<PathBuf>, sys: &SystemSpec, grid: &SpatialGrid) -> Result<Vec<Vec<f64>>, Failure> {
    let Some(path) = path else {
        return Ok(vec![vec![0.0; grid.count()]; sys.n()]);
    };
    let comps: Vec<InitComponent> = read_json(path)?;
    comps
        .into_iter()
        .map(|c| match c {
            InitComponent::Values(v) => Ok(v),
            InitComponent::Expr(s) => {
                let e = Expr::parse(&s).map_err(input_error)?;
                Ok(grid.points().iter().map(|&x| e.eval(&Env::at_x(x))).collect())
            }
        })
        .collect()
}

#[derive(Serialize)]
struct RhoOutput {
    rho_inf: crate::scaling::ScalingResult,
    rho_two: crate::scaling::ScalingResult,
    perron_root: f64,
    spectral_radius: f64,
    /// ρ∞ agrees with the Perron root of |K| within 1e-6.
    oracle_agreement: bool,
    /// ρ₂ ≤ ρ∞ + 1e-6.
    norm_ordering: bool,
}

#[derive(Serialize)]
struct KkOutput {
    holds: bool,
    #[serde(rename = "K")]
    k: Option<f64>,
    grid_points: usize,
    note: &'static str,
}

#[derive(Serialize)]
struct CompareOutput {
    params: PlanarParams,
    riccati: crate::planar::PlanarReport,
    small_gain: KkOutput,
}

#[derive(Serialize)]
struct SimulateReport {
    envelope: crate::sim::EnvelopeReport,
    q: usize,
    warnings: Vec<String>,
}

fn cmd_certify(a: &CertifyArgs) -> Result<i32, Failure> {
    let sys: SystemSpec = read_json(&a.system)?;
    let opts = CertifyOptions {
        mu: a.mu,
        grid_points: a.grid_points,
        alpha0: a.alpha0,
        force_sweep: a.force_sweep,
        ..CertifyOptions::default()
    };
    match certify(&sys, &opts) {
        Ok(c) => emit(&a.output.out, &to_json(&c)).map(|_| EXIT_OK),
        Err(CertifyError::Failed(f)) => emit(&a.output.out, &to_json(&f)).map(|_| EXIT_CONDITION),
        Err(CertifyError::Invalid(e)) => Err(input_error(e)),
    }
}

fn cmd_rho(a: &RhoArgs) -> Result<i32, Failure> {
    let k: Matrix = serde_json::from_str(&a.matrix).map_err(|e| input_error(format!("--matrix: {e}")))?;
    if !k.is_finite() {
        return Err(input_error("--matrix has non-finite entries"));
    }
    let ri = rho_inf(&k);
    let r2 = rho_two_with(
        &k,
        &RhoTwoOptions {
            seed: a.seed,
            ..RhoTwoOptions::default()
        },
    );
    let pr = perron_root(&k);
    let out = RhoOutput {
        oracle_agreement: (ri.value - pr).abs() <= 1e-6,
        norm_ordering: r2.value <= ri.value + 1e-6,
        spectral_radius: spectral_radius(&k.abs()),
        perron_root: pr,
        rho_inf: ri,
        rho_two: r2,
    };
    emit(&a.output.out, &to_json(&out)).map(|_| EXIT_OK)
}

fn planar_params(p: &PlanarArgs, k1: f64, k2: f64) -> Result<PlanarParams, Failure> {
    PlanarParams::new(parse_coefficient(&p.a)?, parse_coefficient(&p.b)?, p.lambda1, p.lambda2, k1, k2)
        .map_err(input_error)
}

fn kk_output(p: &PlanarParams, grid: &[f64]) -> KkOutput {
    let k = kk_exists(p, grid);
    KkOutput {
        holds: k.is_some(),
        k,
        grid_points: grid.len(),
        note: if k.is_some() { "first K on grid" } else { "none on grid" },
    }
}

fn cmd_compare(a: &CompareArgs) -> Result<i32, Failure> {
    let p = planar_params(&a.planar, a.k1, a.k2)?;
    let out = CompareOutput {
        riccati: check_planar(&p),
        small_gain: kk_output(&p, &k_grid(a.k_grid_points)),
        params: p,
    };
    emit(&a.output.out, &to_json(&out)).map(|_| EXIT_OK)
}

fn cmd_sweep(a: &SweepArgs) -> Result<i32, Failure> {
    let k1s = parse_range(&a.k1_range)?;
    let k2s = parse_range(&a.k2_range)?;
    let base = planar_params(&a.planar, 0.0, 0.0)?;
    let grid = k_grid(a.k_grid_points);
    let cells: Vec<(f64, f64)> = k1s.iter().flat_map(|&k1| k2s.iter().map(move |&k2| (k1, k2))).collect();
    let rows: Vec<String> = cells
        .par_iter()
        .map(|&(k1, k2)| {
            let p = PlanarParams { k1, ..base.with_k2(k2) };
            let r = check_planar(&p);
            let kk = kk_exists(&p, &grid);
            format!(
                "{},{},{},{},{},{}\n",
                csv_num(k1),
                csv_num(k2),
                r.holds() as u8,
                csv_num(r.margin()),
                kk.is_some() as u8,
                kk.map_or(String::new(), csv_num)
            )
        })
        .collect();
    let mut csv = String::from("k1,k2,riccati_holds,riccati_margin,kk_holds,kk_K\n");
    rows.iter().for_each(|r| csv.push_str(r));
    emit(&a.output.out, &csv).map(|_| EXIT_OK)
}

fn cmd_max_length(a: &MaxLengthArgs) -> Result<i32, Failure> {
    let sys: SystemSpec = read_json(&a.system)?;
    if a.c.iter().any(|c| !(*c > 0.0)) {
        return Err(input_error("every C must be positive"));
    }
    let opts = MaxLengthOptions {
        step: a.step,
        cap: a.cap,
        eps0: a.eps0,
    };
    let out: Vec<_> = a.c.par_iter().map(|&c| max_iss_length(&sys, c, &opts)).collect();
    emit(&a.output.out, &to_json(&out)).map(|_| EXIT_OK)
}

fn cmd_implication(a: &ImplicationArgs) -> Result<i32, Failure> {
    let s = implication_experiment(a.seed, a.trials);
    let code = if s.violations == 0 { EXIT_OK } else { EXIT_CONDITION };
    emit(&a.output.out, &to_json(&s)).map(|_| code)
}

fn cmd_strictness(a: &StrictnessArgs) -> Result<i32, Failure> {
    let grid = k_grid(a.k_grid_points);
    match strictness_witness(a.a, a.b, a.lambda1, a.lambda2, a.k1, &a.eps, &grid) {
        Ok(w) => {
            #[derive(Serialize)]
            struct Out {
                witness: PlanarParams,
                riccati: crate::planar::PlanarReport,
                small_gain: KkOutput,
            }
            let out = Out {
                riccati: check_planar(&w),
                small_gain: kk_output(&w, &grid),
                witness: w,
            };
            emit(&a.output.out, &to_json(&out)).map(|_| EXIT_OK)
        }
        Err(crate::planar::PlanarError::NoWitnessFound(reason)) => {
            #[derive(Serialize)]
            struct Out {
                no_witness_found: String,
            }
            emit(&a.output.out, &to_json(&Out { no_witness_found: reason })).map(|_| EXIT_CONDITION)
        }
        Err(e) => Err(input_error(e)),
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<i32, Failure> {
    let sys: SystemSpec = read_json(&a.system)?;
    let grid = SpatialGrid::uniform(sys.length(), a.grid_points).map_err(input_error)?;
    let dist: DisturbanceSpec = match &a.disturbance {
        Some(p) => read_json(p)?,
        None => DisturbanceSpec::zero(sys.n()),
    };
    let mode: SimMode = a.mode.into();
    let mut u0 = load_u0(&a.u0, &sys, &grid)?;
    if a.make_compatible {
        u0 = make_compatible(&sys, mode, &u0, &dist, &grid).map_err(input_error)?;
    }
    let mut warnings = Vec::new();
    let lyapunov = match &a.lyapunov {
        Some(ps) => {
            let (f, mu) = match &a.certificate {
                Some(path) => {
                    #[derive(Deserialize)]
                    struct Cert {
                        f: FProfile,
                        mu: f64,
                    }
                    let c: Cert = read_json(path)?;
                    (c.f, c.mu)
                }
                None => match certify(&sys, &CertifyOptions::default()) {
                    Ok(c) => (c.f, c.mu),
                    Err(_) => {
                        warnings.push("no certificate found; Lyapunov columns use f = 1 and mu = 0.05/L".into());
                        let g = SpatialGrid::uniform(sys.length(), 2).map_err(input_error)?;
                        (FProfile::constant(g, &vec![1.0; sys.n()]), 0.05 / sys.length())
                    }
                },
            };
            Some(LyapunovConfig { f, mu, ps: ps.clone() })
        }
        None => None,
    };
    let opts = SimOptions {
        cfl: a.cfl,
        record_dt: a.record_every,
        strict: a.strict,
        lyapunov,
    };
    let traj = simulate(&sys, &u0, &dist, &grid, a.horizon, mode, &opts).map_err(input_error)?;
    warnings.extend(traj.warnings.iter().cloned());

    let envelope = if a.envelope == "fit" {
        envelope_fit_check(&traj, &dist, a.q)
    } else {
        let g: EnvelopeGains = read_json(Path::new(&a.envelope))?;
        envelope_check(&traj, &dist, &g, a.q)
    }
    .map_err(input_error)?;

    let mut csv = String::from("t,c0,c1");
    if let Some(ps) = &traj.lyapunov_ps {
        for p in ps {
            csv.push_str(&format!(",W1_p{p},W2_p{p}"));
        }
        csv.push_str(",V");
    }
    csv.push('\n');
    for k in 0..traj.times.len() {
        csv.push_str(&format!(
            "{},{},{}",
            csv_num(traj.times[k]),
            csv_num(traj.c0_norms[k]),
            csv_num(traj.c1_norms[k])
        ));
        if let Some(ly) = &traj.lyapunov {
            let s = &ly[k];
            for (w1, w2) in s.w1.iter().zip(&s.w2) {
                csv.push_str(&format!(",{},{}", csv_num(*w1), csv_num(*w2)));
            }
            csv.push_str(&format!(",{}", csv_num(s.v)));
        }
        csv.push('\n');
    }
    emit(&a.out, &csv)?;
    let code = if envelope.holds { EXIT_OK } else { EXIT_CONDITION };
    let report = to_json(&SimulateReport {
        envelope,
        q: a.q,
        warnings,
    });
    match &a.report {
        Some(p) => write_atomic(p, &report).map_err(|e| input_error(format!("{}: {e}", p.display())))?,
        None => eprint!("{report}"),
    }
    Ok(code)
}

fn configure_threads() {
    if let Some(n) = std::env::var("HYPISS_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<i32, Failure> {
    match &cli.command {
        Command::Certify(a) => cmd_certify(a),
        Command::Rho(a) => cmd_rho(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare2x2(a) => cmd_compare(a),
        Command::MaxLength(a) => cmd_max_length(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Implication(a) => cmd_implication(a),
        Command::Strictness(a) => cmd_strictness(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    let _ = e.print();
                    eprintln!("\n{SCHEMAS}");
                    EXIT_INPUT
                }
            };
        }
    };
    configure_threads();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
