//! Affine LMI blocks of the PDC stability conditions.

use serde::{Deserialize, Serialize};

use crate::fuzzy::TsModel;
use crate::numerics::{sym_eigen, Matrix, NumericsError, SymMatrix, DEFAULT_EIGEN_TOL};

/// Label of the `Q ≻ 0` margin, reported as λ_min(Q).
pub const Q_POSITIVE_LABEL: &str = "q_positive";

/// Eigenvalue margin of one constraint: λ_max of the block, or λ_min(Q) for
/// the positivity constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub label: String,
    pub value: f64,
}

impl Margin {
    /// Whether the margin clears `threshold` on the correct side.
    pub fn passes(&self, threshold: f64) -> bool {
        if self.label == Q_POSITIVE_LABEL {
            self.value >= threshold
        } else {
            self.value <= -threshold
        }
    }
}

/// λ_max of every block followed by λ_min(Q).
pub fn compute_margins(
    constraints: &[LmiConstraint],
    candidate: &CertificateCandidate,
) -> Result<Vec<Margin>, NumericsError> {
    let mut out = Vec::with_capacity(constraints.len() + 1);
    for c in constraints {
        out.push(Margin {
            label: c.label.clone(),
            value: sym_eigen(&c.value(candidate), DEFAULT_EIGEN_TOL)?.max(),
        });
    }
    out.push(Margin {
        label: Q_POSITIVE_LABEL.to_string(),
        value: sym_eigen(&candidate.q, DEFAULT_EIGEN_TOL)?.min(),
    });
    Ok(out)
}

/// Decision variables: `Q` and one gain-slack row `V_r` per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateCandidate {
    pub q: SymMatrix,
    /// `V_r` as `inputs × states` matrices, one per rule.
    pub v: Vec<Matrix>,
}

impl CertificateCandidate {
    pub fn new(q: SymMatrix, v: Vec<Matrix>) -> Self {
        Self { q, v }
    }

    pub fn zero(order: usize, rules: usize, inputs: usize) -> Self {
        Self {
            q: SymMatrix::new(order, vec![0.0; order * order]).expect("zero matrix is symmetric"),
            v: vec![Matrix::zeros(inputs, order); rules],
        }
    }

    /// Convex combination `α·self + (1−α)·other`.
    pub fn lerp(&self, other: &Self, alpha: f64) -> Self {
        let mix = |a: &Matrix, b: &Matrix| a.scale(alpha).add(&b.scale(1.0 - alpha));
        Self {
            q: SymMatrix::from_matrix(&mix(self.q.as_matrix(), other.q.as_matrix())).expect("square"),
            v: self.v.iter().zip(&other.v).map(|(a, b)| mix(a, b)).collect(),
        }
    }

    /// Multiplies every variable by `alpha`; the extracted gains are unchanged.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            q: self.q.scale(alpha),
            v: self.v.iter().map(|v| v.scale(alpha)).collect(),
        }
    }
}

/// One block `Σ_a (Q·Aᵀ + A·Q) + Σ_v (V_rᵀ·Bᵀ + B·V_r) ≺ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub label: String,
    /// `(rule, A)` pairs entering as `Q·Aᵀ + A·Q`.
    pub a_terms: Vec<(usize, Matrix)>,
    /// `(rule r, B)` pairs entering as `V_rᵀ·Bᵀ + B·V_r`.
    pub v_terms: Vec<(usize, Matrix)>,
}

impl LmiConstraint {
    pub fn order(&self) -> usize {
        self.a_terms
            .first()
            .map(|(_, a)| a.rows())
            .or_else(|| self.v_terms.first().map(|(_, b)| b.rows()))
            .unwrap_or(0)
    }

    pub fn value(&self, c: &CertificateCandidate) -> SymMatrix {
        let q = c.q.as_matrix();
        let mut acc = Matrix::zeros(self.order(), self.order());
        for (_, a) in &self.a_terms {
            acc = acc.add(&a.matmul(q));
        }
        for (r, b) in &self.v_terms {
            acc = acc.add(&b.matmul(&c.v[*r]));
        }
        // X + Xᵀ is symmetric entry for entry.
        let sum = acc.add(&acc.transpose());
        SymMatrix::new(sum.rows(), sum.into_data()).expect("sum with transpose is symmetric")
    }
}

/// `Q·A_jᵀ + A_j·Q + V_jᵀ·Bᵀ + B·V_j`, labelled `single:j` (1-based).
pub fn build_single_rule_lmis(model: &TsModel) -> Vec<LmiConstraint> {
    let b = &model.input_column;
    model
        .vertex_matrices
        .iter()
        .enumerate()
        .map(|(j, a)| LmiConstraint {
            label: format!("single:{}", j + 1),
            a_terms: vec![(j, a.clone())],
            v_terms: vec![(j, b.clone())],
        })
        .collect()
}

/// One block per unordered rule pair `j < k`, with the cross terms
/// `V_kᵀ·B_jᵀ + B_j·V_k + V_jᵀ·B_kᵀ + B_k·V_j`, labelled `pair:j,k`.
pub fn build_pairwise_lmis(model: &TsModel) -> Vec<LmiConstraint> {
    let b = &model.input_column;
    let a = &model.vertex_matrices;
    let n = a.len();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for j in 0..n {
        for k in j + 1..n {
            out.push(LmiConstraint {
                label: format!("pair:{},{}", j + 1, k + 1),
                a_terms: vec![(j, a[j].clone()), (k, a[k].clone())],
                v_terms: vec![(k, b.clone()), (j, b.clone())],
            });
        }
    }
    out
}

/// All single-rule blocks followed by all pairwise blocks.
pub fn build_all_lmis(model: &TsModel) -> Vec<LmiConstraint> {
    let mut all = build_single_rule_lmis(model);
    all.extend(build_pairwise_lmis(model));
    all
}
