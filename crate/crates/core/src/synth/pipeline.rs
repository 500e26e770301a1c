//! End-to-end synthesis from a run configuration, and the inverse direction:
//! rebuilding the model and gains a certificate file refers to.

use thiserror::Error;

use super::certificate::{
    extract_gains, verify_certificate, Certificate, CertificateDocument, CertificateError, SolverInfo,
    VerificationReport,
};
use super::lmi::build_all_lmis;
use super::solver::{solve_feasibility, InfeasibleReport, Preconditioner, SolveError, SolveReport};
use crate::config::{Hooks, RunConfig};
use crate::fuzzy::{build_vertex_models, compute_bounds, FuzzyError, StateRanges, TsModel};
use crate::numerics::Matrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthesisError {
    #[error(transparent)]
    Bounds(#[from] FuzzyError),
    #[error("LMI conditions infeasible after {attempts} attempt(s): {}", .report.reason)]
    Infeasible { attempts: usize, report: InfeasibleReport },
    #[error("solver failed: {0}")]
    Solver(SolveError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error("extracted certificate failed re-verification (worst block margin {:.6e})", .0.worst_block())]
    Verification(Box<VerificationReport>),
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub document: CertificateDocument,
    pub certificate: Certificate,
    pub model: TsModel,
    pub ranges: StateRanges,
    /// Number of range contractions applied before success.
    pub shrink_steps: usize,
    pub solve: SolveReport,
    pub verification: VerificationReport,
}

/// Builds the fuzzy model for `ranges`, honouring the input-column hook.
pub fn build_model(cfg: &RunConfig, ranges: &StateRanges) -> Result<TsModel, FuzzyError> {
    let plant = cfg.plant();
    let bounds = compute_bounds(ranges, &plant)?.bounds;
    let mut model = build_vertex_models(&bounds, &plant)?;
    apply_model_hooks(&mut model, &cfg.hooks);
    Ok(model)
}

fn apply_model_hooks(model: &mut TsModel, hooks: &Hooks) {
    if hooks.zero_input_column {
        model.input_column = Matrix::zeros(model.input_column.rows(), model.input_column.cols());
    }
}

/// Bounds, vertex models, LMIs, solve, gain extraction and re-verification.
///
/// When the solver reports infeasibility the state box is contracted by
/// `cfg.shrink.factor` up to `cfg.shrink.attempts` times; every attempt is
/// reported through `log`.
pub fn synthesize(cfg: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<SynthesisOutcome, SynthesisError> {
    let mut ranges = cfg.ranges;
    let mut attempt = 0;
    loop {
        let model = build_model(cfg, &ranges)?;
        let constraints = build_all_lmis(&model);
        let mut solver = cfg.solver.clone();
        if solver.preconditioner.is_none() {
            let s = model.vertex_matrices.iter().map(|a| a.norm_inf()).fold(0.0, f64::max);
            solver.preconditioner = Some(Preconditioner::second_order(model.input_column.rows(), s));
        }
        match solve_feasibility(&constraints, &solver) {
            Ok(solve) => {
                let certificate = extract_gains(&solve.candidate, &model)?;
                let info = SolverInfo {
                    seed: cfg.solver.seed,
                    iterations: solve.iterations,
                    eta: solve.eta,
                    scale: solve.scale,
                };
                let verification = verify_certificate(&certificate, &model, info.threshold());
                if !verification.passed {
                    return Err(SynthesisError::Verification(Box::new(verification)));
                }
                let document = CertificateDocument::new(&certificate, ranges, &model.bounds, info, cfg.clone());
                return Ok(SynthesisOutcome {
                    document,
                    certificate,
                    model,
                    ranges,
                    shrink_steps: attempt,
                    solve,
                    verification,
                });
            }
            Err(SolveError::Infeasible(report)) => {
                log(&format!(
                    "attempt {}: ranges position [{:.6}, {:.6}] rad, velocity [{:.6}, {:.6}] rad/s: {}",
                    attempt + 1,
                    ranges.position[0],
                    ranges.position[1],
                    ranges.velocity[0],
                    ranges.velocity[1],
                    report.reason
                ));
                if attempt >= cfg.shrink.attempts {
                    return Err(SynthesisError::Infeasible {
                        attempts: attempt + 1,
                        report,
                    });
                }
                attempt += 1;
                ranges = ranges.shrunk(cfg.shrink.factor);
                log(&format!("shrinking state ranges by {} (contraction {attempt})", cfg.shrink.factor));
            }
            Err(e) => return Err(SynthesisError::Solver(e)),
        }
    }
}

/// Model and (hooked) gains described by a certificate file under `cfg`.
pub fn load_certificate(doc: &CertificateDocument, cfg: &RunConfig) -> Result<(Certificate, TsModel), SynthesisError> {
    let mut cert = doc.certificate()?;
    let bounds = doc.bounds()?;
    let mut model = build_vertex_models(&bounds, &cfg.plant())?;
    apply_model_hooks(&mut model, &cfg.hooks);
    apply_gain_hooks(&mut cert, &cfg.hooks);
    Ok((cert, model))
}

/// Applies the gain-corruption hooks in place.
pub fn apply_gain_hooks(cert: &mut Certificate, hooks: &Hooks) {
    if hooks.negate_gains {
        for k in &mut cert.k {
            *k = k.scale(-1.0);
        }
    }
    if let Some(j) = hooks.flip_gain_rule {
        if let Some(k) = cert.k.get_mut(j - 1) {
            flip_largest(k);
        }
    }
}

/// Negates the largest-magnitude entry of a gain row.
pub fn flip_largest(k: &mut Matrix) {
    let mut idx = 0;
    for i in 1..k.cols() {
        if k[(0, i)].abs() > k[(0, idx)].abs() {
            idx = i;
        }
    }
    k[(0, idx)] = -k[(0, idx)];
}
