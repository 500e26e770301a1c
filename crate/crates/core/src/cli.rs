//! Command-line front end: `tsfc bounds|synthesize|verify|simulate`.
//!
//! Exit codes: 0 ok, 1 usage or I/O error, 2 degenerate bounds, 3 infeasible,
//! 4 verification failure, 5 config or certificate parse error, 6 simulation
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{error::ErrorKind, Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};
use crate::fuzzy::{compute_bounds, FuzzyError, StateRanges, PREMISE_NAMES};
use crate::plant::RobotState;
use crate::sim::{lyapunov_check, settling_time, simulate, SimError, Trajectory};
use crate::synth::{
    load_certificate, synthesize, to_json_full_precision, verify_certificate, CertificateDocument, Margin, NamedInterval, SolveError, SynthesisError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DEGENERATE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_VERIFY: i32 = 4;
pub const EXIT_PARSE: i32 = 5;
pub const EXIT_SIMULATION: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "tsfc", version, about = "T-S fuzzy PDC synthesis and verification for a flexible-joint arm")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the scheduling-variable bounds over the state box.
    Bounds {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the bounds as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the PDC LMIs and write a verified certificate.
    Synthesize {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "certificate.json")]
        out: PathBuf,
        /// Overrides `[solver] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `[solver] shrink_attempts`.
        #[arg(long)]
        shrink_attempts: Option<usize>,
    },
    /// Re-derive every margin of a certificate file.
    Verify {
        #[arg(long)]
        cert: PathBuf,
        /// Overrides applied on top of the configuration stored in the certificate.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Simulate the closed loop under a certificate's gains.
    Simulate {
        #[arg(long)]
        cert: PathBuf,
        /// Overrides applied on top of the configuration stored in the certificate.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "trajectory.csv")]
        out: PathBuf,
        /// Hold the control over each step instead of re-evaluating it per stage.
        #[arg(long)]
        zoh: bool,
    },
}

/// A command failure with its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_PARSE, e.to_string())
    }
}

impl From<FuzzyError> for Failure {
    fn from(e: FuzzyError) -> Self {
        let code = match e {
            FuzzyError::DegenerateBounds { .. } => EXIT_DEGENERATE,
            _ => EXIT_PARSE,
        };
        Failure::new(code, e.to_string())
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

// Console write failures are not actionable; the exit code carries the result.
macro_rules! say {
    ($w:expr, $($arg:tt)*) => {{
        let _ = writeln!($w, $($arg)*);
    }};
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    let mut io = Io { out, err };
    let result = match cli.command {
        Command::Bounds { config, out } => cmd_bounds(&mut io, config.as_deref(), out.as_deref()),
        Command::Synthesize {
            config,
            out,
            seed,
            shrink_attempts,
        } => cmd_synthesize(&mut io, config.as_deref(), &out, seed, shrink_attempts),
        Command::Verify { cert, config } => cmd_verify(&mut io, &cert, config.as_deref()),
        Command::Simulate { cert, config, out, zoh } => cmd_simulate(&mut io, &cert, config.as_deref(), &out, zoh),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            say!(io.err, "error: {}", f.message);
            f.code
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))
}

/// `base` with the overrides in `path` applied and validated.
fn load_config(mut base: RunConfig, path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => {
            let text = read(p)?;
            base.apply_ini(&text)
                .map_err(|e| Failure::new(EXIT_PARSE, format!("{}: {e}", p.display())))?;
        }
        None => base.validate()?,
    }
    Ok(base)
}

fn load_document(path: &Path) -> Result<CertificateDocument, Failure> {
    let text = read(path)?;
    CertificateDocument::from_json(&text)
        .map_err(|e| Failure::new(EXIT_PARSE, format!("malformed certificate {}: {e}", path.display())))
}

fn certificate_failure(path: &Path, e: SynthesisError) -> Failure {
    Failure::new(EXIT_PARSE, format!("certificate {}: {e}", path.display()))
}

fn fmt_state(x: &RobotState) -> String {
    let parts: Vec<String> = x.0.iter().map(|v| format!("{v:.6}")).collect();
    format!("({})", parts.join(", "))
}

fn describe_ranges(r: &StateRanges) -> String {
    format!(
        "position [{:.6}, {:.6}] rad, velocity [{:.6}, {:.6}] rad/s",
        r.position[0], r.position[1], r.velocity[0], r.velocity[1]
    )
}

#[derive(Serialize)]
struct ExtremalStates {
    name: &'static str,
    argmin: RobotState,
    argmax: RobotState,
}

#[derive(Serialize)]
struct BoundsDocument<'a> {
    state_ranges: StateRanges,
    scheduling_bounds: Vec<NamedInterval>,
    extremal_states: Vec<ExtremalStates>,
    grid_points: usize,
    config: &'a RunConfig,
}

fn cmd_bounds(io: &mut Io, config: Option<&Path>, out: Option<&Path>) -> Result<i32, Failure> {
    let cfg = load_config(RunConfig::default(), config)?;
    let analysis = compute_bounds(&cfg.ranges, &cfg.plant())?;
    say!(io.out, "state box: {}", describe_ranges(&cfg.ranges));
    for (i, b) in analysis.bounds.z.iter().enumerate() {
        let [lo, hi] = &analysis.extremal_states[i];
        say!(io.out, "{}: [{:.9e}, {:.9e}]", PREMISE_NAMES[i], b.min, b.max);
        say!(io.out, "    min at x = {}", fmt_state(lo));
        say!(io.out, "    max at x = {}", fmt_state(hi));
    }
    say!(io.out, "grid points checked: {}", analysis.grid_points);
    if let Some(path) = out {
        let doc = BoundsDocument {
            state_ranges: cfg.ranges,
            scheduling_bounds: analysis
                .bounds
                .z
                .iter()
                .zip(PREMISE_NAMES)
                .map(|(b, name)| NamedInterval {
                    name: name.to_string(),
                    min: b.min,
                    max: b.max,
                })
                .collect(),
            extremal_states: analysis
                .extremal_states
                .iter()
                .zip(PREMISE_NAMES)
                .map(|([lo, hi], name)| ExtremalStates {
                    name,
                    argmin: *lo,
                    argmax: *hi,
                })
                .collect(),
            grid_points: analysis.grid_points,
            config: &cfg,
        };
        write(path, &to_json_full_precision(&doc))?;
        say!(io.out, "wrote {}", path.display());
    }
    Ok(EXIT_OK)
}

fn print_margins(w: &mut dyn Write, margins: &[Margin], threshold: f64) {
    for m in margins {
        let verdict = if m.passes(threshold) { "ok" } else { "FAIL" };
        say!(w, "  {:<12} {:>24.16e}  {verdict}", m.label, m.value);
    }
}

fn cmd_synthesize(
    io: &mut Io,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    shrink_attempts: Option<usize>,
) -> Result<i32, Failure> {
    let mut cfg = load_config(RunConfig::default(), config)?;
    if let Some(seed) = seed {
        cfg.solver.seed = seed;
    }
    if let Some(n) = shrink_attempts {
        cfg.shrink.attempts = n;
    }
    cfg.validate()?;
    let err = &mut *io.err;
    let result = synthesize(&cfg, &mut |msg| say!(err, "synthesize: {msg}"));
    match result {
        Ok(outcome) => {
            let v = &outcome.verification;
            write(out, &outcome.document.to_json())?;
            if outcome.shrink_steps > 0 {
                say!(
                    io.out,
                    "certified after {} range contraction(s): {}",
                    outcome.shrink_steps,
                    describe_ranges(&outcome.ranges)
                );
            } else {
                say!(io.out, "certified on {}", describe_ranges(&outcome.ranges));
            }
            say!(io.out, "solver iterations: {}", outcome.solve.iterations);
            say!(io.out, "threshold eta*s: {:.6e}", v.threshold);
            say!(io.out, "worst block margin: {:.6e}", v.worst_block());
            say!(io.out, "lambda_min(Q): {:.6e}", v.q_margin());
            say!(io.out, "wrote {}", out.display());
            Ok(EXIT_OK)
        }
        Err(SynthesisError::Infeasible { attempts, report }) => {
            say!(io.out, "infeasible after {attempts} attempt(s): {}", report.reason);
            say!(io.out, "best margins found:");
            print_margins(io.out, &report.best_margins, report.threshold);
            Ok(EXIT_INFEASIBLE)
        }
        Err(SynthesisError::Bounds(e)) => Err(e.into()),
        Err(SynthesisError::Solver(SolveError::InvalidConfig(m))) => {
            Err(Failure::new(EXIT_PARSE, format!("invalid solver configuration: {m}")))
        }
        Err(SynthesisError::Verification(report)) => {
            say!(io.out, "extracted gains failed re-verification; no certificate written");
            print_margins(io.out, &report.margins, report.threshold);
            Ok(EXIT_VERIFY)
        }
        Err(e @ (SynthesisError::Solver(_) | SynthesisError::Certificate(_))) => {
            Err(Failure::new(EXIT_INFEASIBLE, format!("no certificate produced: {e}")))
        }
    }
}

fn cmd_verify(io: &mut Io, cert_path: &Path, config: Option<&Path>) -> Result<i32, Failure> {
    let doc = load_document(cert_path)?;
    let cfg = load_config(doc.config.clone(), config)?;
    let (cert, model) = load_certificate(&doc, &cfg).map_err(|e| certificate_failure(cert_path, e))?;
    let threshold = doc.solver.threshold();
    let report = verify_certificate(&cert, &model, threshold);
    say!(io.out, "threshold eta*s = {:.6e} (eta {:e}, s {:e})", threshold, doc.solver.eta, doc.solver.scale);
    print_margins(io.out, &report.margins, threshold);
    let failed = report.failures().count();
    if report.passed {
        say!(io.out, "PASS: all {} margins clear the threshold", report.margins.len());
        Ok(EXIT_OK)
    } else {
        say!(io.out, "FAIL: {failed} of {} margins violate the threshold", report.margins.len());
        Ok(EXIT_VERIFY)
    }
}

/// Factor by which the certified box is smaller than the configured one.
fn contraction(configured: &StateRanges, certified: &StateRanges) -> f64 {
    let width = |r: [f64; 2]| r[1] - r[0];
    let p = width(certified.position) / width(configured.position);
    let v = width(certified.velocity) / width(configured.velocity);
    p.min(v).min(1.0)
}

fn csv_trailer(cfg: &RunConfig, note: Option<&str>) -> Vec<String> {
    let mut lines = vec!["effective configuration:".to_string()];
    lines.extend(cfg.to_ini().lines().map(str::to_string));
    lines.extend(note.map(str::to_string));
    lines
}

fn write_trajectory(path: &Path, traj: &Trajectory, comments: &[String]) -> Result<(), Failure> {
    let file = fs::File::create(path)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))?;
    traj.write_csv(io::BufWriter::new(file), comments)
        .map_err(|e| Failure::new(EXIT_USAGE, format!("cannot write {}: {e}", path.display())))
}

fn cmd_simulate(io: &mut Io, cert_path: &Path, config: Option<&Path>, out: &Path, zoh: bool) -> Result<i32, Failure> {
    let doc = load_document(cert_path)?;
    let mut cfg = load_config(doc.config.clone(), config)?;
    if zoh {
        cfg.sim.zoh = true;
    }
    let (cert, model) = load_certificate(&doc, &cfg).map_err(|e| certificate_failure(cert_path, e))?;
    let plant = cfg.plant();
    let mut sim = cfg.sim.clone();
    let mut note = None;
    let factor = contraction(&cfg.ranges, &doc.state_ranges);
    if factor < 1.0 {
        for v in &mut sim.x0.0 {
            *v *= factor;
        }
        let msg = format!("certificate covers a contracted box; x0 scaled by {factor:.6} to {}", fmt_state(&sim.x0));
        say!(io.err, "simulate: {msg}");
        note = Some(msg);
    }
    let comments = csv_trailer(&cfg, note.as_deref());
    let traj = match simulate(&plant, &cert, &model, &sim) {
        Ok(t) => t,
        Err(SimError::InvalidConfig(m)) => return Err(Failure::new(EXIT_PARSE, format!("invalid simulation settings: {m}"))),
        Err(SimError::Blowup { time, partial }) => {
            write_trajectory(out, &partial, &comments)?;
            say!(io.out, "blow-up: state became non-finite at t = {time:.6} s");
            say!(io.out, "partial trajectory written to {}", out.display());
            return Ok(EXIT_SIMULATION);
        }
    };
    write_trajectory(out, &traj, &comments)?;
    let settle = settling_time(&traj, sim.settle_tolerance);
    let lyap = lyapunov_check(&traj, &model, &plant);
    let peaks = traj.peak_states();
    match settle {
        Some(t) => say!(io.out, "settling time (|x|inf <= {:e}): {t:.4} s", sim.settle_tolerance),
        None => say!(io.out, "settling time (|x|inf <= {:e}): not settled by {} s", sim.settle_tolerance, sim.t_end),
    }
    say!(io.out, "peak |u|: {:.6e} N*m", traj.peak_input());
    say!(
        io.out,
        "peak speeds: motor {:.6e}, gear {:.6e}, arm {:.6e} rad/s",
        peaks[3],
        peaks[4],
        peaks[5]
    );
    say!(
        io.out,
        "lyapunov: {} (max increase {:.3e}, tolerance {:.3e}, {} steps checked, {} outside the certified box)",
        if lyap.passed { "PASS" } else { "FAIL" },
        lyap.max_increase,
        lyap.tolerance,
        lyap.checked_steps,
        lyap.out_of_box_steps
    );
    say!(io.out, "wrote {}", out.display());
    Ok(if settle.is_some() && lyap.passed {
        EXIT_OK
    } else {
        EXIT_SIMULATION
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn help_and_version_exit_zero() {
        assert_eq!(run_capture(&["tsfc", "--help"]).0, EXIT_OK);
        assert_eq!(run_capture(&["tsfc", "--version"]).0, EXIT_OK);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["tsfc"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["tsfc", "frobnicate"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["tsfc", "verify"]).0, EXIT_USAGE);
    }

    #[test]
    fn bounds_default_prints_four_intervals() {
        let (code, out, _) = run_capture(&["tsfc", "bounds"]);
        assert_eq!(code, EXIT_OK);
        for name in PREMISE_NAMES {
            assert!(out.contains(&format!("{name}: [")), "{out}");
        }
    }

    #[test]
    fn missing_files_are_io_errors() {
        assert_eq!(run_capture(&["tsfc", "bounds", "--config", "/nonexistent/x.ini"]).0, EXIT_USAGE);
        assert_eq!(run_capture(&["tsfc", "verify", "--cert", "/nonexistent/c.json"]).0, EXIT_USAGE);
    }

    #[test]
    fn contraction_of_equal_boxes_is_one() {
        let r = StateRanges::default();
        assert_eq!(contraction(&r, &r), 1.0);
        assert!((contraction(&r, &r.shrunk(0.8)) - 0.8).abs() < 1e-15);
    }
}
