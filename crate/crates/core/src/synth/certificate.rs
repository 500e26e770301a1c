//! Gain extraction, certificate verification and the certificate file.

use std::io;

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use thiserror::Error;

use super::lmi::{build_all_lmis, compute_margins, CertificateCandidate, Margin, Q_POSITIVE_LABEL};
use crate::config::RunConfig;
use crate::fuzzy::{Interval, SchedulingBounds, StateRanges, TsModel, PREMISE_NAMES};
use crate::numerics::{inverse_spd, Matrix, NumericsError, SymMatrix};

pub const CERTIFICATE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("Lyapunov matrix Q = P⁻¹ is not positive definite ({0})")]
    NotPositiveDefinite(NumericsError),
    #[error("certificate is inconsistent: {0}")]
    Inconsistent(String),
    #[error("numerical failure: {0}")]
    Numerics(#[from] NumericsError),
}

/// Lyapunov matrices, PDC gains and the margins they achieve.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub q: SymMatrix,
    pub p: SymMatrix,
    /// `K_j`, one `1 × n` row per rule.
    pub k: Vec<Matrix>,
    pub margins: Vec<Margin>,
}

impl Certificate {
    /// `V_j = K_j·Q`, the slack variables implied by the gains.
    pub fn candidate(&self) -> CertificateCandidate {
        CertificateCandidate {
            q: self.q.clone(),
            v: self.k.iter().map(|k| k.matmul(self.q.as_matrix())).collect(),
        }
    }

    /// `V(x) = xᵀ·P·x`.
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        self.p.quad_form(x)
    }
}

/// `K_j = V_j·Q⁻¹` and `P = Q⁻¹`, with margins recomputed on `model`.
pub fn extract_gains(candidate: &CertificateCandidate, model: &TsModel) -> Result<Certificate, CertificateError> {
    let p = inverse_spd(&candidate.q).map_err(CertificateError::NotPositiveDefinite)?;
    let k = candidate.v.iter().map(|v| v.matmul(p.as_matrix())).collect();
    let mut cert = Certificate {
        q: candidate.q.clone(),
        p,
        k,
        margins: Vec::new(),
    };
    cert.margins = compute_margins(&build_all_lmis(model), &cert.candidate())?;
    Ok(cert)
}

/// Outcome of re-deriving every margin from `Q`, `K` and the model.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub threshold: f64,
    pub margins: Vec<Margin>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn failures(&self) -> impl Iterator<Item = &Margin> {
        self.margins.iter().filter(move |m| !m.passes(self.threshold))
    }

    pub fn worst_block(&self) -> f64 {
        self.margins
            .iter()
            .filter(|m| m.label != Q_POSITIVE_LABEL)
            .map(|m| m.value)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn q_margin(&self) -> f64 {
        self.margins
            .iter()
            .find(|m| m.label == Q_POSITIVE_LABEL)
            .map_or(f64::NAN, |m| m.value)
    }
}

/// Recomputes all block margins from `cert.q`, `cert.k` and `model` only.
///
/// Passes iff every block has λ_max ≤ −threshold and λ_min(Q) ≥ threshold.
/// Margins whose eigenproblem fails to converge are reported as NaN and fail.
pub fn verify_certificate(cert: &Certificate, model: &TsModel, threshold: f64) -> VerificationReport {
    let constraints = build_all_lmis(model);
    let consistent = cert.k.len() == model.rule_count()
        && cert.k.iter().all(|k| k.cols() == cert.q.order())
        && cert.q.order() == model.input_column.rows();
    let margins = if consistent {
        compute_margins(&constraints, &cert.candidate()).unwrap_or_else(|_| nan_margins(&constraints))
    } else {
        nan_margins(&constraints)
    };
    let passed = margins.iter().all(|m| m.passes(threshold));
    VerificationReport {
        threshold,
        margins,
        passed,
    }
}

fn nan_margins(constraints: &[super::lmi::LmiConstraint]) -> Vec<Margin> {
    constraints
        .iter()
        .map(|c| c.label.clone())
        .chain(std::iter::once(Q_POSITIVE_LABEL.to_string()))
        .map(|label| Margin { label, value: f64::NAN })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverInfo {
    pub seed: u64,
    pub iterations: usize,
    pub eta: f64,
    /// Normalization s; margins are required to reach η·s.
    pub scale: f64,
}

impl SolverInfo {
    pub fn threshold(&self) -> f64 {
        self.eta * self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedInterval {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// On-disk certificate: everything needed to re-verify and re-simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateDocument {
    pub version: u32,
    pub state_ranges: StateRanges,
    pub scheduling_bounds: Vec<NamedInterval>,
    #[serde(rename = "Q")]
    pub q: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub margins: Vec<Margin>,
    pub solver: SolverInfo,
    /// Effective configuration the certificate was produced with.
    pub config: RunConfig,
}

impl CertificateDocument {
    pub fn new(
        cert: &Certificate,
        ranges: StateRanges,
        bounds: &SchedulingBounds,
        solver: SolverInfo,
        config: RunConfig,
    ) -> Self {
        Self {
            version: CERTIFICATE_VERSION,
            state_ranges: ranges,
            scheduling_bounds: bounds
                .z
                .iter()
                .zip(PREMISE_NAMES)
                .map(|(b, name)| NamedInterval {
                    name: name.to_string(),
                    min: b.min,
                    max: b.max,
                })
                .collect(),
            q: cert.q.as_matrix().data().to_vec(),
            p: cert.p.as_matrix().data().to_vec(),
            k: cert.k.iter().map(|k| k.data().to_vec()).collect(),
            margins: cert.margins.clone(),
            solver,
            config,
        }
    }

    pub fn bounds(&self) -> Result<SchedulingBounds, CertificateError> {
        if self.scheduling_bounds.len() != PREMISE_NAMES.len() {
            return Err(CertificateError::Inconsistent(format!(
                "expected {} scheduling bounds, found {}",
                PREMISE_NAMES.len(),
                self.scheduling_bounds.len()
            )));
        }
        let mut z = [Interval { min: 0.0, max: 0.0 }; 4];
        for (slot, b) in z.iter_mut().zip(&self.scheduling_bounds) {
            *slot = Interval { min: b.min, max: b.max };
        }
        Ok(SchedulingBounds { z })
    }

    pub fn certificate(&self) -> Result<Certificate, CertificateError> {
        if self.version != CERTIFICATE_VERSION {
            return Err(CertificateError::Inconsistent(format!(
                "unsupported certificate version {}",
                self.version
            )));
        }
        let n = (self.q.len() as f64).sqrt() as usize;
        if n * n != self.q.len() || self.p.len() != self.q.len() {
            return Err(CertificateError::Inconsistent("Q and P must be square and of equal order".into()));
        }
        if self.k.iter().any(|k| k.len() != n) {
            return Err(CertificateError::Inconsistent(format!("every gain row must have {n} entries")));
        }
        let sym = |data: &[f64], name: &str| {
            SymMatrix::new(n, data.to_vec())
                .map_err(|e| CertificateError::Inconsistent(format!("{name}: {e}")))
        };
        Ok(Certificate {
            q: sym(&self.q, "Q")?,
            p: sym(&self.p, "P")?,
            k: self.k.iter().map(|k| Matrix::row_vector(k)).collect(),
            margins: self.margins.clone(),
        })
    }

    /// Pretty JSON with every float written to 17 significant digits.
    pub fn to_json(&self) -> String {
        to_json_full_precision(self)
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Pretty JSON with every float written as `{:.16e}`, newline terminated.
pub fn to_json_full_precision<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision::default());
    value.serialize(&mut ser).expect("serializing to memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}

/// Pretty-printing formatter that writes floats as `{:.16e}`.
#[derive(Default)]
struct FullPrecision(PrettyFormatter<'static>);

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fuzzy::{build_vertex_models, compute_bounds};
    use crate::plant::Plant;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> (TsModel, SchedulingBounds) {
        let plant = Plant::default();
        let b = compute_bounds(&StateRanges::default(), &plant).unwrap().bounds;
        (build_vertex_models(&b, &plant).unwrap(), b)
    }

    fn random_pd(rng: &mut ChaCha8Rng) -> SymMatrix {
        let a = Matrix::new(6, 6, (0..36).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        SymMatrix::from_matrix(&a.matmul(&a.transpose()).add(&Matrix::identity(6))).unwrap()
    }

    #[test]
    fn zero_slack_gives_zero_gains() {
        let (m, _) = model();
        let c = CertificateCandidate::new(SymMatrix::identity(6), vec![Matrix::zeros(1, 6); 16]);
        let cert = extract_gains(&c, &m).unwrap();
        assert!(cert.k.iter().all(|k| k.data().iter().all(|v| *v == 0.0)));
        assert_eq!(cert.margins.len(), 137);
    }

    #[test]
    fn diagonal_scaling_example() {
        let (m, _) = model();
        let mut v = vec![Matrix::zeros(1, 6); 16];
        v[0] = Matrix::row_vector(&[2.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let c = CertificateCandidate::new(SymMatrix::identity(6).scale(2.0), v);
        let cert = extract_gains(&c, &m).unwrap();
        let expected = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(cert.k[0].data().iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn gains_multiply_back() {
        let (m, _) = model();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = random_pd(&mut rng);
        let v: Vec<Matrix> = (0..16)
            .map(|_| Matrix::row_vector(&(0..6).map(|_| rng.gen_range(-5.0..5.0)).collect::<Vec<_>>()))
            .collect();
        let cert = extract_gains(&CertificateCandidate::new(q.clone(), v.clone()), &m).unwrap();
        for (k, vj) in cert.k.iter().zip(&v) {
            let back = k.matmul(q.as_matrix());
            for (a, b) in back.data().iter().zip(vj.data()) {
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
        let qp = q.as_matrix().matmul(cert.p.as_matrix());
        assert!(qp.sub(&Matrix::identity(6)).max_abs() < 1e-8);
    }

    #[test]
    fn indefinite_q_rejected() {
        let (m, _) = model();
        let c = CertificateCandidate::new(
            SymMatrix::from_matrix(&Matrix::diag(&[1.0, 1.0, -1.0, 1.0, 1.0, 1.0])).unwrap(),
            vec![Matrix::zeros(1, 6); 16],
        );
        assert!(matches!(extract_gains(&c, &m), Err(CertificateError::NotPositiveDefinite(_))));
    }

    #[test]
    fn negative_q_fails_positivity_label() {
        let (m, _) = model();
        let cert = Certificate {
            q: SymMatrix::from_matrix(&Matrix::diag(&[1.0, 1.0, -1.0, 1.0, 1.0, 1.0])).unwrap(),
            p: SymMatrix::identity(6),
            k: vec![Matrix::zeros(1, 6); 16],
            margins: vec![],
        };
        let rep = verify_certificate(&cert, &m, 1e-6);
        assert!(!rep.passed);
        assert!(rep.failures().any(|f| f.label == Q_POSITIVE_LABEL));
    }

    #[test]
    fn document_round_trips_exactly() {
        let (m, b) = model();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random_pd(&mut rng).scale(1.0 / 3.0);
        let v: Vec<Matrix> = (0..16)
            .map(|_| Matrix::row_vector(&(0..6).map(|_| rng.gen_range(-1.0..1.0) * 1e5).collect::<Vec<_>>()))
            .collect();
        let cert = extract_gains(&CertificateCandidate::new(q, v), &m).unwrap();
        let info = SolverInfo {
            seed: 7,
            iterations: 12,
            eta: 1e-6,
            scale: 0.1,
        };
        let doc = CertificateDocument::new(&cert, StateRanges::default(), &b, info, RunConfig::default());
        let text = doc.to_json();
        let back = CertificateDocument::from_json(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.certificate().unwrap(), cert);
        assert_eq!(back.bounds().unwrap(), b);
        assert_eq!(back.to_json(), text);
        let r1 = verify_certificate(&cert, &m, 1e-6);
        let r2 = verify_certificate(&back.certificate().unwrap(), &m, 1e-6);
        assert_eq!(r1, r2);
    }

    #[test]
    fn truncated_document_is_a_parse_error() {
        assert!(CertificateDocument::from_json("{\"version\": 1, \"Q\": [1.0,").is_err());
    }
}
