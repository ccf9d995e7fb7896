//! Command-line front end for the sensing-assisted beam management
//! simulator.
//!
//! Five subcommands cover the workflows the library supports:
//!
//! * `run` — full trajectory experiments over a scheme × seed grid, writing
//!   one trace CSV and one summary JSON per run plus an aggregate summary.
//! * `crb-check` — cross-checks the closed-form estimation bounds against
//!   the finite-difference information-matrix oracle and fails loudly on
//!   disagreement.
//! * `mee` — reads a planar point cloud and prints its minimum enclosing
//!   ellipse, axis-aligned enclosing ellipse, and enclosing circle as JSON.
//! * `rmse-sweep` — empirical azimuth RMSE of the signal-level estimator
//!   across an echo-SNR grid, next to the closed-form bound.
//! * `table3` — median achievable-rate and invocation-count comparison of
//!   the pointing schemes across array sizes.
//!
//! Every subcommand exits 0 on success.  On failure a single JSON object
//! `{"error":{"kind":…,"message":…}}` goes to stderr and the exit code is
//! nonzero, so scripted callers never have to parse prose.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand};
use isac_core::array::{beam_weights, ArrayConfig};
use isac_core::crb::{crb_closed_form, crb_from_fim, fim_numeric, EchoParams, SensingDims};
use isac_core::ellipse::{axis_aligned_mee, mec, mee, Ellipse, PointSet2D};
use isac_core::harness::{
    azimuth_rmse_sweep, load_config, median, run_experiment, run_single, RunSummary, SystemConfig,
};
use isac_core::schemes::SchemeKind;
use isac_core::{Error, Result};
use num_complex::Complex64;

// ── Argument grammar ─────────────────────────────────────────────────────────

/// Desk-scale simulator for sensing-assisted beam management of an extended
/// vehicular target.
#[derive(Parser)]
#[command(name = "isacsim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run trajectory experiments over a scheme × seed grid and write one
    /// trace CSV plus one summary JSON per run, and an aggregate
    /// `summaries.json`, into the output directory.
    Run(RunArgs),
    /// Cross-check the closed-form estimation bounds against the
    /// finite-difference information-matrix oracle at several geometries and
    /// echo SNRs; print one CSV row per bound and fail if any relative
    /// deviation exceeds the tolerance.
    CrbCheck(CrbCheckArgs),
    /// Read a planar point cloud from CSV and print its minimum enclosing
    /// ellipse, minimum axis-aligned enclosing ellipse, and minimum enclosing
    /// circle as JSON (geometric and central forms).
    Mee(MeeArgs),
    /// Sweep the echo SNR and print the signal-level azimuth RMSE next to
    /// the closed-form bound as CSV.
    RmseSweep(RmseSweepArgs),
    /// Compare the pointing schemes across array sizes: per (array, scheme)
    /// cell, run every seed and print the medians as CSV.
    Table3(Table3Args),
}

#[derive(Args)]
struct RunArgs {
    /// Configuration file (JSON); defaults to the built-in configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated schemes: any of aba, rb, db, point, sweep, omni.
    #[arg(long, default_value = "aba,rb,db,point,sweep")]
    schemes: String,
    /// Seeds as an inclusive range `0..19` or a comma list `3,5,7`;
    /// defaults to the single seed in the configuration.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CrbCheckArgs {
    /// Maximum tolerated relative deviation between closed form and oracle.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct MeeArgs {
    /// CSV file of planar points, one `x,y` pair per line; a non-numeric
    /// first line is treated as a header and skipped.
    #[arg(long)]
    points: PathBuf,
}

#[derive(Args)]
struct RmseSweepArgs {
    /// SNR grid, dB: an inclusive range `-10..30` (stepped by --step) or a
    /// comma list `-10,0,15`.
    #[arg(long, default_value = "-10..30")]
    snr: String,
    /// Step between range endpoints, dB.
    #[arg(long, default_value_t = 10.0)]
    step: f64,
    /// Echo realizations per SNR point.
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Root seed of the sweep.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Table3Args {
    /// Comma-separated square array sizes, e.g. `8,16,32` for 8×8 … 32×32.
    #[arg(long, default_value = "8,16,32")]
    arrays: String,
    /// Comma-separated schemes to compare.
    #[arg(long, default_value = "aba,rb,db,point,sweep")]
    schemes: String,
    /// Seeds as an inclusive range `0..4` or a comma list.
    #[arg(long, default_value = "0..4")]
    seeds: String,
    /// Configuration file (JSON); defaults to the built-in configuration.
    #[arg(long)]
    config: Option<PathBuf>,
}

// ── Entry point ──────────────────────────────────────────────────────────────

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            print_error_json("usage", &e.to_string());
            return ExitCode::FAILURE;
        }
    };
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::CrbCheck(args) => cmd_crb_check(args),
        Command::Mee(args) => cmd_mee(args),
        Command::RmseSweep(args) => cmd_rmse_sweep(args),
        Command::Table3(args) => cmd_table3(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            print_error_json(error_kind(&e), &e.to_string());
            ExitCode::FAILURE
        }
    }
}

/// Machine-readable failure report: one JSON object on stderr.
fn print_error_json(kind: &str, message: &str) {
    let payload = serde_json::json!({ "error": { "kind": kind, "message": message } });
    eprintln!("{payload}");
}

/// Stable failure-category string for each library error.
fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::BeneathArray => "beneath_array",
        Error::SingularAngle { .. } => "singular_angle",
        Error::NotPositiveDefinite(_) => "not_positive_definite",
        Error::SingularMatrix(_) => "singular_matrix",
        Error::InvalidInput { .. } => "invalid_input",
        Error::DegeneratePoints(_) => "degenerate_points",
        Error::NotEnoughPeaks { .. } => "not_enough_peaks",
        Error::SolverFailure(_) => "solver_failure",
        Error::NeverDetected { .. } => "never_detected",
        Error::Config { .. } => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

// ── List and range parsing ───────────────────────────────────────────────────

/// Integer spec: a single value `7`, a comma list `3,5,7`, or an inclusive
/// range `0..19` (twenty values).
fn parse_u64_spec(spec: &str, flag: &'static str) -> Result<Vec<u64>> {
    let bad = |reason: String| Error::InvalidInput { name: flag, reason };
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo
            .trim()
            .parse()
            .map_err(|_| bad(format!("range start `{lo}` is not an integer")))?;
        let hi: u64 = hi
            .trim()
            .parse()
            .map_err(|_| bad(format!("range end `{hi}` is not an integer")))?;
        if hi < lo {
            return Err(bad(format!("range `{spec}` is empty (end below start)")));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| bad(format!("`{tok}` is not an integer")))
        })
        .collect()
}

/// SNR spec, dB: a single value, a comma list, or an inclusive range
/// `-10..30` walked in `step` increments from the start (the end is included
/// when the walk lands on it).
fn parse_f64_spec(spec: &str, step: f64, flag: &'static str) -> Result<Vec<f64>> {
    let bad = |reason: String| Error::InvalidInput { name: flag, reason };
    // A leading minus sign is a value, not a range separator, so split on
    // the first `..` only.
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: f64 = lo
            .trim()
            .parse()
            .map_err(|_| bad(format!("range start `{lo}` is not a number")))?;
        let hi: f64 = hi
            .trim()
            .parse()
            .map_err(|_| bad(format!("range end `{hi}` is not a number")))?;
        if !(step > 0.0) || !step.is_finite() {
            return Err(bad(format!("step must be positive and finite, got {step}")));
        }
        if hi < lo {
            return Err(bad(format!("range `{spec}` is empty (end below start)")));
        }
        let n = ((hi - lo) / step).round() as usize;
        let mut grid: Vec<f64> = (0..=n).map(|i| lo + i as f64 * step).collect();
        grid.retain(|&v| v <= hi + 1e-9 * step);
        return Ok(grid);
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| bad(format!("`{tok}` is not a number")))
        })
        .collect()
}

/// Comma-separated scheme names (see [`SchemeKind`] for the vocabulary).
fn parse_schemes(spec: &str) -> Result<Vec<SchemeKind>> {
    let schemes: Vec<SchemeKind> = spec
        .split(',')
        .map(|tok| tok.trim().parse())
        .collect::<Result<_>>()?;
    if schemes.is_empty() {
        return Err(Error::InvalidInput {
            name: "--schemes",
            reason: "need at least one scheme".into(),
        });
    }
    Ok(schemes)
}

/// Comma-separated array sizes.
fn parse_usize_list(spec: &str, flag: &'static str) -> Result<Vec<usize>> {
    spec.split(',')
        .map(|tok| {
            tok.trim().parse().map_err(|_| Error::InvalidInput {
                name: flag,
                reason: format!("`{tok}` is not a positive integer"),
            })
        })
        .collect()
}

/// Loads the configuration file when given, otherwise the built-in default.
fn config_or_default(path: &Option<PathBuf>) -> Result<SystemConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(SystemConfig::default_config()),
    }
}

// ── run ──────────────────────────────────────────────────────────────────────

/// Header of the per-run summary lines `run` prints to stdout.
const SUMMARY_CSV_HEADER: &str = "scheme,nz_max,ny_max,seed,n_slots,avg_rate_bps_hz,\
                                  velocity_mae_mps,angle_rmse_rad,mee_calls,ekf_calls,\
                                  diverged,wall_time_s";

fn summary_csv_row(s: &RunSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        s.scheme,
        s.nz_max,
        s.ny_max,
        s.seed,
        s.n_slots,
        s.avg_rate_bps_hz,
        s.velocity_mae_mps,
        s.angle_rmse_rad,
        s.mee_calls,
        s.ekf_calls,
        s.diverged,
        s.wall_time_s
    )
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = config_or_default(&args.config)?;
    let schemes = parse_schemes(&args.schemes)?;
    let seeds = match &args.seeds {
        Some(spec) => parse_u64_spec(spec, "--seeds")?,
        None => vec![cfg.run.seed],
    };
    eprintln!(
        "running {} scheme(s) × {} seed(s) × {} slots on a {}×{} array …",
        schemes.len(),
        seeds.len(),
        cfg.run.n_slots,
        cfg.array.nz_max,
        cfg.array.ny_max
    );
    let summaries = run_experiment(&cfg, &schemes, &seeds, &args.out)?;
    println!("{SUMMARY_CSV_HEADER}");
    for s in &summaries {
        println!("{}", summary_csv_row(s));
    }
    eprintln!("wrote {} trace(s) and summaries.json to {}", summaries.len(), args.out.display());
    Ok(())
}

// ── crb-check ────────────────────────────────────────────────────────────────

/// Geometry × SNR cases for the bound cross-check: angles spread over the
/// lower hemisphere including a strongly skewed one, echo SNRs a decade
/// apart.
const CRB_CHECK_CASES: [(f64, f64, f64); 6] = [
    (-0.4, 0.3, 10.0),
    (-0.4, 0.3, 100.0),
    (-0.2, -0.6, 10.0),
    (-0.2, -0.6, 100.0),
    (-0.55, 1.1, 10.0),
    (-0.55, 1.1, 100.0),
];

fn cmd_crb_check(args: CrbCheckArgs) -> Result<()> {
    if !(args.tol > 0.0) || !args.tol.is_finite() {
        return Err(Error::InvalidInput {
            name: "--tol",
            reason: format!("tolerance must be positive and finite, got {}", args.tol),
        });
    }
    // Small enough for the dense oracle, large enough that every parameter
    // is identifiable.
    let dims = SensingDims {
        nz: 4,
        ny: 4,
        n_sub: 8,
        n_sym: 4,
        delta_f_hz: 120.0e3,
        t_sym_s: 1.0 / 120.0e3,
    };
    let array = ArrayConfig { nz_max: dims.nz, ny_max: dims.ny, p_tx: 1.0 };
    let sigma_r2 = 1.0;

    println!("theta_rad,phi_rad,r_snr,param,closed_form,numeric_oracle,rel_dev");
    let mut max_dev = 0.0f64;
    for (theta, phi, r_snr) in CRB_CHECK_CASES {
        // Matched beam, amplitude chosen so the echo SNR equals `r_snr`:
        // the calibration under which both routes talk about the same echo.
        let w = beam_weights(theta, phi, dims.nz, dims.ny, &array)?;
        let beta_abs = (r_snr * sigma_r2 / w.gain(theta, phi)).sqrt();
        let params = EchoParams {
            theta,
            phi,
            tau_s: 1.3 / (dims.n_sub as f64 * dims.delta_f_hz),
            mu_hz: 37.0,
            beta: Complex64::from_polar(beta_abs, 0.3),
        };
        let closed = crb_closed_form(r_snr, theta, phi, &dims)?;
        let numeric = crb_from_fim(&fim_numeric(&params, &w, &dims, sigma_r2)?)?;
        let rows = [
            ("crb_theta", closed.crb_theta, numeric.crb_theta),
            ("crb_phi", closed.crb_phi, numeric.crb_phi),
            ("crb_tau", closed.crb_tau, numeric.crb_tau),
            ("crb_mu", closed.crb_mu, numeric.crb_mu),
            ("crb_theta_phi", closed.crb_theta_phi, numeric.crb_theta_phi),
        ];
        for (param, c, n) in rows {
            let scale = c.abs().max(n.abs());
            let rel = if scale > 0.0 { (c - n).abs() / scale } else { 0.0 };
            max_dev = max_dev.max(rel);
            println!("{theta},{phi},{r_snr},{param},{c},{n},{rel:e}");
        }
    }
    if max_dev > args.tol {
        return Err(Error::SolverFailure(format!(
            "closed-form bounds and numeric oracle disagree: max relative deviation \
             {max_dev:.3e} exceeds tolerance {:.1e}",
            args.tol
        )));
    }
    eprintln!("all bounds agree with the oracle within {:.1e} (max deviation {max_dev:.3e})", args.tol);
    Ok(())
}

// ── mee ──────────────────────────────────────────────────────────────────────

/// Reads `x,y` pairs, one per line; `#` comments and blank lines are
/// skipped, and a non-numeric first data line is treated as a header.
fn read_points_csv(path: &PathBuf) -> Result<PointSet2D> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidInput {
        name: "--points",
        reason: format!("cannot read {}: {e}", path.display()),
    })?;
    let mut points = Vec::new();
    let mut first_data_line = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut cols = line.split(',').map(str::trim);
        let parsed = match (cols.next(), cols.next()) {
            (Some(x), Some(y)) => x.parse::<f64>().ok().zip(y.parse::<f64>().ok()),
            _ => None,
        };
        match parsed {
            Some(pt) => points.push(pt),
            None if first_data_line => {} // header row
            None => {
                return Err(Error::InvalidInput {
                    name: "--points",
                    reason: format!("line {}: expected `x,y`, got `{line}`", idx + 1),
                });
            }
        }
        first_data_line = false;
    }
    Ok(PointSet2D::new(points))
}

/// Both descriptions of one ellipse: geometric (center, semi-axes,
/// orientation) and central form (`A·x'² + B·x'y' + C·y'² ≤ F` about the
/// center, normalized to `F = 1`).
fn ellipse_json(e: &Ellipse) -> serde_json::Value {
    serde_json::json!({
        "geometric": {
            "center": [e.center.0, e.center.1],
            "semi_major": e.semi_major,
            "semi_minor": e.semi_minor,
            "orientation_rad": e.orientation,
        },
        "central": {
            "a": e.coeff_a,
            "b": e.coeff_b,
            "c": e.coeff_c,
            "f": 1.0,
            "x0": e.center.0,
            "y0": e.center.1,
        },
        "area": e.area(),
    })
}

fn cmd_mee(args: MeeArgs) -> Result<()> {
    let pts = read_points_csv(&args.points)?;
    let general = mee(&pts, None)?;
    let axis_aligned = axis_aligned_mee(&pts)?;
    let (circle_center, circle_radius) = mec(&pts)?;
    let out = serde_json::json!({
        "n_points": pts.len(),
        "mee": ellipse_json(&general),
        "axis_aligned_mee": ellipse_json(&axis_aligned),
        "mec": {
            "center": [circle_center.0, circle_center.1],
            "radius": circle_radius,
            "area": std::f64::consts::PI * circle_radius * circle_radius,
        },
    });
    println!("{}", serde_json::to_string_pretty(&out).map_err(Error::Json)?);
    Ok(())
}

// ── rmse-sweep ───────────────────────────────────────────────────────────────

fn cmd_rmse_sweep(args: RmseSweepArgs) -> Result<()> {
    let snrs = parse_f64_spec(&args.snr, args.step, "--snr")?;
    if snrs.is_empty() {
        return Err(Error::InvalidInput {
            name: "--snr",
            reason: "need at least one SNR point".into(),
        });
    }
    let points = azimuth_rmse_sweep(&snrs, args.trials, args.seed)?;
    println!("snr_db,rmse_phi,sqrt_crb_phi");
    for p in &points {
        println!("{},{},{}", p.snr_db, p.rmse_phi_rad, p.sqrt_crb_phi_rad);
    }
    Ok(())
}

// ── table3 ───────────────────────────────────────────────────────────────────

fn cmd_table3(args: Table3Args) -> Result<()> {
    let arrays = parse_usize_list(&args.arrays, "--arrays")?;
    let schemes = parse_schemes(&args.schemes)?;
    let seeds = parse_u64_spec(&args.seeds, "--seeds")?;
    if arrays.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidInput {
            name: "--arrays/--seeds",
            reason: "need at least one array size and one seed".into(),
        });
    }
    let base = config_or_default(&args.config)?;

    println!("array,scheme,n_seeds,median_rate_bps_hz,median_mee_calls,median_ekf_calls");
    for &a in &arrays {
        let mut cfg = base.clone();
        cfg.array.nz_max = a;
        cfg.array.ny_max = a;
        cfg.validate()?;
        for &scheme in &schemes {
            eprintln!("table3: {a}×{a} {scheme} over {} seed(s) …", seeds.len());
            let mut rates = Vec::with_capacity(seeds.len());
            let mut mee_calls = Vec::with_capacity(seeds.len());
            let mut ekf_calls = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let out = run_single(&cfg, scheme, seed)?;
                rates.push(out.summary.avg_rate_bps_hz);
                mee_calls.push(out.summary.mee_calls as f64);
                ekf_calls.push(out.summary.ekf_calls as f64);
            }
            // Non-empty by construction, so the medians always exist.
            println!(
                "{a},{},{},{},{},{}",
                scheme.as_str(),
                seeds.len(),
                median(&rates).expect("non-empty"),
                median(&mee_calls).expect("non-empty"),
                median(&ekf_calls).expect("non-empty"),
            );
        }
    }
    Ok(())
}

// ── Tests ────────────────────────────────────────────────────────────────────

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integer_specs_cover_single_values_lists_and_inclusive_ranges() {
        assert_eq!(parse_u64_spec("7", "--seeds").unwrap(), vec![7]);
        assert_eq!(parse_u64_spec("3,5,7", "--seeds").unwrap(), vec![3, 5, 7]);
        assert_eq!(parse_u64_spec("0..3", "--seeds").unwrap(), vec![0, 1, 2, 3]);
        // `0..19` is the documented twenty-seed grid.
        assert_eq!(parse_u64_spec("0..19", "--seeds").unwrap().len(), 20);
        assert_eq!(parse_u64_spec(" 2 .. 2 ", "--seeds").unwrap(), vec![2]);
    }

    #[test]
    fn malformed_integer_specs_name_the_flag_and_the_token() {
        for bad in ["", "a", "1,,3", "5..1", "9..", "1..2..3"] {
            let err = parse_u64_spec(bad, "--seeds").unwrap_err().to_string();
            assert!(err.contains("--seeds"), "`{bad}` gave: {err}");
        }
    }

    #[test]
    fn snr_specs_walk_ranges_inclusively_with_negative_endpoints() {
        assert_eq!(
            parse_f64_spec("-10..30", 10.0, "--snr").unwrap(),
            vec![-10.0, 0.0, 10.0, 20.0, 30.0]
        );
        assert_eq!(
            parse_f64_spec("-10..-5", 2.5, "--snr").unwrap(),
            vec![-10.0, -7.5, -5.0]
        );
        assert_eq!(parse_f64_spec("-3,4.5", 10.0, "--snr").unwrap(), vec![-3.0, 4.5]);
        // An endpoint the step does not land on is simply not emitted.
        assert_eq!(parse_f64_spec("0..5", 3.0, "--snr").unwrap(), vec![0.0, 3.0]);
    }

    #[test]
    fn snr_range_rejects_bad_steps_and_reversed_endpoints() {
        assert!(parse_f64_spec("0..10", 0.0, "--snr").is_err());
        assert!(parse_f64_spec("0..10", -1.0, "--snr").is_err());
        assert!(parse_f64_spec("10..0", 1.0, "--snr").is_err());
    }

    #[test]
    fn scheme_lists_parse_and_reject_unknown_names() {
        assert_eq!(
            parse_schemes("aba, rb,sweep").unwrap(),
            vec![SchemeKind::Aba, SchemeKind::Rb, SchemeKind::Sweep]
        );
        assert!(parse_schemes("warp").is_err());
    }

    #[test]
    fn every_library_error_maps_to_a_stable_kind_string() {
        assert_eq!(error_kind(&Error::BeneathArray), "beneath_array");
        assert_eq!(
            error_kind(&Error::Config { key: "k".into(), reason: "r".into() }),
            "config"
        );
        assert_eq!(error_kind(&Error::SolverFailure("x".into())), "solver_failure");
    }
}
