//! Log-barrier path-following solver for the PDC feasibility problem.
//!
//! The problem is posed as "minimize t such that every block ≼ t·I". Three
//! transformations make it tractable in double precision:
//!
//! * Matched elimination. With `M_r = (BᵀB)⁻¹BᵀA_r` and `V_r = Ṽ_r − M_r·Q`,
//!   every block becomes `Q·Sᵀ + S·Q + Σ (Ṽ_rᵀBᵀ + B·Ṽ_r)` where `S` collects
//!   the `A_r − B·M_r` terms. The map is an exact, invertible change of
//!   variables, and it removes the huge entries of the input row from `S`.
//! * Diagonal equilibration `x' = T·x` and a time scale `τ`, so that the
//!   scaled blocks `T·F·T/τ` have entries of order one.
//! * Bounds `c·I ≼ Q' ≼ I` and `‖W_r‖ ≤ R` keep the feasible set compact,
//!   which the barrier needs, and cap the condition number of `Q`.
//!
//! A first pass locates a feasible `Q`; a second pass re-equilibrates with
//! `T = diag(Q)^{-1/2}` and a larger floor `c`, which selects a better
//! conditioned certificate and noticeably tamer closed-loop gains.
//! The result is mapped back and scaled homogeneously so that every margin
//! meets the requested strictness. Gains `K = V·Q⁻¹` are invariant to that
//! scaling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lmi::{compute_margins, CertificateCandidate, LmiConstraint, Margin, Q_POSITIVE_LABEL};
use crate::numerics::{cholesky, cholesky_solve, Matrix, NumericsError, SymMatrix};

/// Newton decrement below which a centering step counts as converged.
const CENTERING_DECREMENT: f64 = 1e-10;
/// Upper limit on the barrier weight; beyond it round-off dominates.
const KAPPA_LIMIT: f64 = 1e15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierParams {
    /// Radius bound on each scaled slack row `W_r`.
    pub gain_radius: f64,
    /// Floor `c` in `c·I ≼ Q' ≼ I` for the first pass.
    pub q_floor: f64,
    /// Floors tried in order by the re-equilibrated pass.
    pub refine_floors: Vec<f64>,
    pub kappa_growth: f64,
    /// Relative duality-gap estimate at which the path is stopped.
    pub gap_tolerance: f64,
    pub centering_steps: usize,
    /// Seeded restarts from perturbed starting points after a numerical stall.
    pub restarts: usize,
    /// Factor by which the final margins exceed the requested strictness.
    pub margin_safety: f64,
}

impl Default for BarrierParams {
    fn default() -> Self {
        Self {
            gain_radius: 10.0,
            q_floor: 1e-6,
            refine_floors: vec![1e-2, 1e-3, 1e-4],
            kappa_growth: 4.0,
            gap_tolerance: 1e-2,
            centering_steps: 100,
            restarts: 3,
            margin_safety: 2.0,
        }
    }
}

/// Initial diagonal state scaling and time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preconditioner {
    pub state_scale: Vec<f64>,
    pub time_scale: f64,
}

impl Preconditioner {
    /// For a second-order mechanical state (positions, then velocities):
    /// velocities are divided by a characteristic frequency `√s` and time is
    /// measured in units of `1/√s`.
    pub fn second_order(order: usize, scale: f64) -> Self {
        let w = scale.sqrt().max(1.0);
        let half = order / 2;
        Self {
            state_scale: (0..order).map(|i| if i < half { 1.0 } else { 1.0 / w }).collect(),
            time_scale: w,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Strictness η: margins must reach η·s.
    pub margin_target: f64,
    /// The normalization s; `None` takes the largest ‖A_j‖∞ of the problem.
    pub scale_normalization: Option<f64>,
    /// Budget of Newton steps over all passes.
    pub max_iterations: usize,
    pub seed: u64,
    pub barrier: BarrierParams,
    /// `None` uses identity scaling with the time scale of the largest block.
    pub preconditioner: Option<Preconditioner>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            margin_target: 1e-6,
            scale_normalization: None,
            max_iterations: 50_000,
            seed: 0,
            barrier: BarrierParams::default(),
            preconditioner: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: &str| Err(SolveError::InvalidConfig(msg.to_string()));
        let b = &self.barrier;
        if !(self.margin_target > 0.0 && self.margin_target.is_finite()) {
            return bad("margin_target must be positive");
        }
        if let Some(s) = self.scale_normalization {
            if !(s > 0.0 && s.is_finite()) {
                return bad("scale_normalization must be positive");
            }
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be positive");
        }
        if !(b.gain_radius > 0.0) {
            return bad("gain_radius must be positive");
        }
        if !(b.q_floor > 0.0 && b.q_floor < 1.0) || b.refine_floors.iter().any(|c| !(*c > 0.0 && *c < 1.0)) {
            return bad("Q floors must lie in (0, 1)");
        }
        if !(b.kappa_growth > 1.0) {
            return bad("kappa_growth must exceed 1");
        }
        if !(b.gap_tolerance > 0.0) || b.centering_steps == 0 {
            return bad("gap_tolerance and centering_steps must be positive");
        }
        if !(b.margin_safety >= 1.0) {
            return bad("margin_safety must be at least 1");
        }
        if let Some(p) = &self.preconditioner {
            if !(p.time_scale > 0.0) || p.state_scale.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return bad("preconditioner scales must be positive");
            }
        }
        Ok(())
    }
}

/// A feasible candidate with its margins at the requested strictness.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub candidate: CertificateCandidate,
    pub iterations: usize,
    pub eta: f64,
    pub scale: f64,
    /// Largest λ_max over the constraint blocks (negative).
    pub max_block_margin: f64,
    /// λ_min(Q) (positive).
    pub q_margin: f64,
    /// Floor `c` of the pass that produced the candidate.
    pub q_floor: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibleReport {
    pub reason: String,
    pub iterations: usize,
    /// Margins of the best candidate found, labelled like a certificate.
    pub best_margins: Vec<Margin>,
    /// Required margin η·s the candidate was measured against.
    pub threshold: f64,
}

impl InfeasibleReport {
    pub fn worst_block(&self) -> Option<&Margin> {
        self.best_margins
            .iter()
            .filter(|m| m.label != Q_POSITIVE_LABEL)
            .max_by(|a, b| a.value.total_cmp(&b.value))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed constraint set: {0}")]
    Malformed(String),
    #[error("no certificate found: {}", .0.reason)]
    Infeasible(InfeasibleReport),
    #[error("numerical failure while evaluating margins: {0}")]
    Numerics(#[from] NumericsError),
}

/// Searches for `Q ≻ 0` and `V_r` with every block `≼ −η·s·I`.
///
/// Deterministic given the configuration. On failure returns the margins of
/// the best candidate reached.
pub fn solve_feasibility(constraints: &[LmiConstraint], config: &SolverConfig) -> Result<SolveReport, SolveError> {
    config.validate()?;
    let problem = Eliminated::new(constraints)?;
    let scale = config.scale_normalization.unwrap_or(problem.natural_scale);
    let threshold = config.margin_target * scale;
    let bp = &config.barrier;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut budget = config.max_iterations;
    let mut iterations = 0usize;

    let pre = config.preconditioner.clone().unwrap_or_else(|| problem.default_preconditioner());
    if pre.state_scale.len() != problem.n {
        return Err(SolveError::InvalidConfig(format!(
            "preconditioner has {} scales for {} states",
            pre.state_scale.len(),
            problem.n
        )));
    }

    // First pass: find any certificate.
    let mut first: Option<(CertificateCandidate, Vec<Margin>)> = None;
    let mut last_candidate = None;
    let mut reason = String::new();
    for attempt in 0..=bp.restarts {
        let scaled = problem.scaled(&pre.state_scale, pre.time_scale);
        let start = scaled.start(bp.q_floor, bp.gain_radius, if attempt == 0 { None } else { Some(&mut rng) });
        let run = scaled.path_follow(start, bp.q_floor, bp, &mut budget);
        iterations += run.iterations;
        let candidate = scaled.unscale(&run.y, &problem);
        let margins = compute_margins(constraints, &candidate)?;
        let ok = certifies(&margins);
        last_candidate = Some(margins.clone());
        if ok {
            first = Some((candidate, margins));
            break;
        }
        reason = match run.status {
            PathStatus::Converged => format!(
                "barrier converged with max block eigenvalue {:.3e} in scaled coordinates; the conditions appear infeasible",
                run.t
            ),
            PathStatus::Stalled => format!("barrier stalled at t = {:.3e}", run.t),
            PathStatus::Budget => format!("iteration budget of {} Newton steps exhausted", config.max_iterations),
        };
        if run.status != PathStatus::Stalled || budget == 0 {
            break;
        }
    }
    let Some((mut best, mut best_margins)) = first else {
        return Err(SolveError::Infeasible(InfeasibleReport {
            reason,
            iterations,
            best_margins: last_candidate.unwrap_or_default(),
            threshold,
        }));
    };
    let mut floor = bp.q_floor;

    // Second pass: equilibrate on the diagonal of Q and ask for a larger floor.
    let diag_scale: Vec<f64> = (0..problem.n).map(|i| 1.0 / best.q[(i, i)].sqrt()).collect();
    for &c in &bp.refine_floors {
        if budget == 0 {
            break;
        }
        let scaled = problem.scaled(&diag_scale, pre.time_scale);
        let start = scaled.start(c, bp.gain_radius, None);
        let run = scaled.path_follow(start, c, bp, &mut budget);
        iterations += run.iterations;
        if run.t >= 0.0 {
            continue;
        }
        let candidate = scaled.unscale(&run.y, &problem);
        let margins = compute_margins(constraints, &candidate)?;
        if certifies(&margins) {
            best = candidate;
            best_margins = margins;
            floor = c;
            break;
        }
    }

    // Homogeneous scaling to the requested strictness.
    let (block, q) = extremes(&best_margins);
    let alpha = bp.margin_safety * threshold / (-block).min(q);
    let candidate = best.scaled(alpha);
    let margins = compute_margins(constraints, &candidate)?;
    let (block, q) = extremes(&margins);
    if !(block <= -threshold && q >= threshold) {
        return Err(SolveError::Infeasible(InfeasibleReport {
            reason: format!(
                "rescaled candidate misses the margin η·s = {threshold:.3e}: max block {block:.3e}, λ_min(Q) {q:.3e}"
            ),
            iterations,
            best_margins: margins,
            threshold,
        }));
    }
    Ok(SolveReport {
        candidate,
        iterations,
        eta: config.margin_target,
        scale,
        max_block_margin: block,
        q_margin: q,
        q_floor: floor,
    })
}

/// Largest block eigenvalue and λ_min(Q).
fn extremes(margins: &[Margin]) -> (f64, f64) {
    let mut block = f64::NEG_INFINITY;
    let mut q = f64::INFINITY;
    for m in margins {
        if m.label == Q_POSITIVE_LABEL {
            q = q.min(m.value);
        } else {
            block = block.max(m.value);
        }
    }
    (block, q)
}

fn certifies(margins: &[Margin]) -> bool {
    let (block, q) = extremes(margins);
    block < 0.0 && q > 0.0 && block.is_finite() && q.is_finite()
}

/// Constraint set after matched elimination, in original coordinates.
struct Eliminated {
    n: usize,
    m: usize,
    rules: usize,
    /// `M_r`, `m × n`, per rule.
    elimination: Vec<Matrix>,
    /// Per block: `S` and the merged `(rule, B)` terms.
    blocks: Vec<(Matrix, Vec<(usize, Matrix)>)>,
    natural_scale: f64,
}

impl Eliminated {
    fn new(constraints: &[LmiConstraint]) -> Result<Self, SolveError> {
        let first = constraints
            .first()
            .ok_or_else(|| SolveError::Malformed("no constraints".into()))?;
        let n = first.order();
        let m = constraints
            .iter()
            .flat_map(|c| c.v_terms.iter().map(|(_, b)| b.cols()))
            .next()
            .unwrap_or(1);
        let rules = constraints
            .iter()
            .flat_map(|c| c.a_terms.iter().map(|(r, _)| *r).chain(c.v_terms.iter().map(|(r, _)| *r)))
            .max()
            .map_or(0, |r| r + 1);
        for c in constraints {
            let shapes_ok = c.a_terms.iter().all(|(_, a)| a.rows() == n && a.cols() == n)
                && c.v_terms.iter().all(|(_, b)| b.rows() == n && b.cols() == m);
            if !shapes_ok {
                return Err(SolveError::Malformed(format!("block {} has inconsistent shapes", c.label)));
            }
        }

        let mut natural_scale: f64 = 0.0;
        let mut rule_a: Vec<Option<&Matrix>> = vec![None; rules];
        let mut rule_b: Vec<Option<&Matrix>> = vec![None; rules];
        for c in constraints {
            for (r, a) in &c.a_terms {
                natural_scale = natural_scale.max(a.norm_inf());
                rule_a[*r].get_or_insert(a);
            }
            for (r, b) in &c.v_terms {
                rule_b[*r].get_or_insert(b);
            }
        }
        if natural_scale == 0.0 {
            natural_scale = 1.0;
        }

        let elimination = (0..rules)
            .map(|r| match (rule_a[r], rule_b[r]) {
                (Some(a), Some(b)) => {
                    let btb = SymMatrix::from_matrix(&b.transpose().matmul(b)).expect("square");
                    match cholesky(&btb) {
                        Ok(l) => cholesky_solve(&l, &b.transpose().matmul(a)),
                        Err(_) => Matrix::zeros(m, n),
                    }
                }
                _ => Matrix::zeros(m, n),
            })
            .collect::<Vec<_>>();

        let blocks = constraints
            .iter()
            .map(|c| {
                let mut s = Matrix::zeros(n, n);
                for (_, a) in &c.a_terms {
                    s = s.add(a);
                }
                let mut merged: Vec<(usize, Matrix)> = Vec::new();
                for (r, b) in &c.v_terms {
                    s = s.sub(&b.matmul(&elimination[*r]));
                    match merged.iter_mut().find(|(mr, _)| mr == r) {
                        Some((_, acc)) => *acc = acc.add(b),
                        None => merged.push((*r, b.clone())),
                    }
                }
                (s, merged)
            })
            .collect();

        Ok(Self {
            n,
            m,
            rules,
            elimination,
            blocks,
            natural_scale,
        })
    }

    fn default_preconditioner(&self) -> Preconditioner {
        let tau = self
            .blocks
            .iter()
            .map(|(s, _)| s.norm_inf())
            .fold(0.0, f64::max);
        Preconditioner {
            state_scale: vec![1.0; self.n],
            time_scale: if tau > 0.0 { tau } else { 1.0 },
        }
    }

    fn scaled(&self, d: &[f64], tau: f64) -> Scaled {
        let n = self.n;
        let mut beta: f64 = 0.0;
        for (_, terms) in &self.blocks {
            for (_, b) in terms {
                for i in 0..n {
                    for p in 0..self.m {
                        beta = beta.max((d[i] * b[(i, p)] / tau).abs());
                    }
                }
            }
        }
        if beta == 0.0 {
            beta = 1.0;
        }
        let blocks = self
            .blocks
            .iter()
            .map(|(s, terms)| {
                let mut sp = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        sp[i * n + j] = d[i] * s[(i, j)] / (d[j] * tau);
                    }
                }
                let inputs = terms
                    .iter()
                    .map(|(r, b)| {
                        let mut bp = vec![0.0; n * self.m];
                        for i in 0..n {
                            for p in 0..self.m {
                                bp[i * self.m + p] = d[i] * b[(i, p)] / (tau * beta);
                            }
                        }
                        (*r, bp)
                    })
                    .collect();
                ScaledBlock { s: sp, inputs }
            })
            .collect();
        Scaled::new(n, self.m, self.rules, blocks, d.to_vec(), beta)
    }
}

struct ScaledBlock {
    /// `T·S·T⁻¹/τ`, row-major `n × n`.
    s: Vec<f64>,
    /// `(rule, T·B/(τβ))`, row-major `n × m`.
    inputs: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PathStatus {
    Converged,
    Stalled,
    Budget,
}

struct PathResult {
    y: Vec<f64>,
    t: f64,
    iterations: usize,
    status: PathStatus,
}

/// The scaled problem in the packed variable vector
/// `y = (upper triangle of Q', rows of every W_r, t)`.
struct Scaled {
    n: usize,
    m: usize,
    rules: usize,
    blocks: Vec<ScaledBlock>,
    d: Vec<f64>,
    beta: f64,
    q_index: Vec<(usize, usize)>,
}

impl Scaled {
    fn new(n: usize, m: usize, rules: usize, blocks: Vec<ScaledBlock>, d: Vec<f64>, beta: f64) -> Self {
        let mut q_index = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                q_index.push((i, j));
            }
        }
        Self {
            n,
            m,
            rules,
            blocks,
            d,
            beta,
            q_index,
        }
    }

    fn nq(&self) -> usize {
        self.q_index.len()
    }

    fn w_offset(&self, rule: usize) -> usize {
        self.nq() + rule * self.m * self.n
    }

    fn t_index(&self) -> usize {
        self.nq() + self.rules * self.m * self.n
    }

    fn dim(&self) -> usize {
        self.t_index() + 1
    }

    fn q_of(&self, y: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut q = vec![0.0; n * n];
        for (k, &(i, j)) in self.q_index.iter().enumerate() {
            q[i * n + j] = y[k];
            q[j * n + i] = y[k];
        }
        q
    }

    /// Barrier dimension: six per matrix block row plus the ball terms.
    fn barrier_degree(&self) -> f64 {
        ((self.blocks.len() + 2) * self.n + self.rules) as f64
    }

    /// Centre of the box `c·I ≼ Q' ≼ I`, zero slacks, and `t` above every block.
    fn start(&self, c: f64, radius: f64, rng: Option<&mut ChaCha8Rng>) -> Vec<f64> {
        let n = self.n;
        let mut y = vec![0.0; self.dim()];
        let mid = 0.5 * (1.0 + c);
        for (k, &(i, j)) in self.q_index.iter().enumerate() {
            if i == j {
                y[k] = mid;
            }
        }
        if let Some(rng) = rng {
            let spread = 0.25 * (1.0 - c) / n as f64;
            for (k, &(i, j)) in self.q_index.iter().enumerate() {
                let e = rng.gen_range(-spread..spread);
                y[k] += if i == j { e } else { 0.5 * e };
            }
            let per = radius / (4.0 * ((self.m * n) as f64).sqrt());
            for k in self.nq()..self.t_index() {
                y[k] = rng.gen_range(-per..per);
            }
        }
        let mut top: f64 = 0.0;
        for b in &self.blocks {
            let f = self.block_value(b, &y);
            // Gershgorin bound on λ_max(F).
            for i in 0..n {
                let row: f64 = (0..n).map(|j| if i == j { f[i * n + j] } else { f[i * n + j].abs() }).sum();
                top = top.max(row);
            }
        }
        y[self.t_index()] = top + 1.0;
        y
    }

    /// `F' = X + Xᵀ` with `X = S'·Q' + Σ B'·W_r`.
    fn block_value(&self, b: &ScaledBlock, y: &[f64]) -> Vec<f64> {
        let (n, m) = (self.n, self.m);
        let q = self.q_of(y);
        let mut x = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += b.s[i * n + k] * q[k * n + j];
                }
                x[i * n + j] = acc;
            }
        }
        for (r, bp) in &b.inputs {
            let w = &y[self.w_offset(*r)..self.w_offset(*r) + m * n];
            for i in 0..n {
                for p in 0..m {
                    let bip = bp[i * m + p];
                    if bip != 0.0 {
                        for j in 0..n {
                            x[i * n + j] += bip * w[p * n + j];
                        }
                    }
                }
            }
        }
        let mut f = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                f[i * n + j] = x[i * n + j] + x[j * n + i];
            }
        }
        f
    }

    /// Matrices of the barrier terms as `(G, kind)`.
    fn slack_matrices(&self, y: &[f64], c: f64) -> Vec<Vec<f64>> {
        let n = self.n;
        let t = y[self.t_index()];
        let mut out = Vec::with_capacity(self.blocks.len() + 2);
        for b in &self.blocks {
            let mut g = self.block_value(b, y);
            for v in g.iter_mut() {
                *v = -*v;
            }
            for i in 0..n {
                g[i * n + i] += t;
            }
            out.push(g);
        }
        let q = self.q_of(y);
        let mut lower = q.clone();
        let mut upper: Vec<f64> = q.iter().map(|v| -v).collect();
        for i in 0..n {
            lower[i * n + i] -= c;
            upper[i * n + i] += 1.0;
        }
        out.push(lower);
        out.push(upper);
        out
    }

    fn ball_slacks(&self, y: &[f64], radius: f64) -> Vec<f64> {
        let len = self.m * self.n;
        (0..self.rules)
            .map(|r| {
                let w = &y[self.w_offset(r)..self.w_offset(r) + len];
                radius * radius - w.iter().map(|v| v * v).sum::<f64>()
            })
            .collect()
    }

    fn interior(&self, y: &[f64], c: f64, radius: f64) -> bool {
        y.iter().all(|v| v.is_finite())
            && self.ball_slacks(y, radius).iter().all(|f| *f > 0.0)
            && self.slack_matrices(y, c).iter().all(|g| dense_cholesky(self.n, g).is_some())
    }

    /// Gradient and Hessian of `κ·t − Σ log det G − Σ log f`.
    fn newton_system(&self, y: &[f64], kappa: f64, c: f64, radius: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let (n, m) = (self.n, self.m);
        let dim = self.dim();
        let nn = n * n;
        let ti = self.t_index();
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        grad[ti] = kappa;

        let slacks = self.slack_matrices(y, c);
        let mut vars: Vec<usize> = Vec::with_capacity(dim);
        let mut ws: Vec<f64> = Vec::with_capacity(dim * nn);
        for (bi, g) in slacks.iter().enumerate() {
            let l = dense_cholesky(n, g)?;
            let li = lower_inverse(n, &l);
            let col = |k: usize| -> Vec<f64> { (0..n).map(|i| li[i * n + k]).collect() };
            let ell: Vec<Vec<f64>> = (0..n).map(col).collect();
            vars.clear();
            ws.clear();

            if bi < self.blocks.len() {
                // dG/dq = −(E·S'ᵀ + S'·E), dG/dW = −(B'·E + (B'·E)ᵀ), dG/dt = I.
                let b = &self.blocks[bi];
                let ls = dense_mul(n, &li, &b.s);
                let sigma: Vec<Vec<f64>> = (0..n).map(|k| (0..n).map(|i| ls[i * n + k]).collect()).collect();
                for (k, &(i, j)) in self.q_index.iter().enumerate() {
                    vars.push(k);
                    let start = ws.len();
                    ws.resize(start + nn, 0.0);
                    let w = &mut ws[start..];
                    add_sym_outer(n, w, &ell[i], &sigma[j], -1.0);
                    if i != j {
                        add_sym_outer(n, w, &ell[j], &sigma[i], -1.0);
                    }
                }
                for (r, bp) in &b.inputs {
                    for p in 0..m {
                        let bcol: Vec<f64> = (0..n).map(|i| bp[i * m + p]).collect();
                        let lb = dense_mul_vec(n, &li, &bcol);
                        for cc in 0..n {
                            vars.push(self.w_offset(*r) + p * n + cc);
                            let start = ws.len();
                            ws.resize(start + nn, 0.0);
                            add_sym_outer(n, &mut ws[start..], &ell[cc], &lb, -1.0);
                        }
                    }
                }
                vars.push(ti);
                let start = ws.len();
                ws.resize(start + nn, 0.0);
                let w = &mut ws[start..];
                for i in 0..n {
                    for j in 0..n {
                        let mut acc = 0.0;
                        for k in 0..=i.min(j) {
                            acc += li[i * n + k] * li[j * n + k];
                        }
                        w[i * n + j] = acc;
                    }
                }
            } else {
                // Q' − c·I (sign +1) and I − Q' (sign −1).
                let sign = if bi == self.blocks.len() { 1.0 } else { -1.0 };
                for (k, &(i, j)) in self.q_index.iter().enumerate() {
                    vars.push(k);
                    let start = ws.len();
                    ws.resize(start + nn, 0.0);
                    let w = &mut ws[start..];
                    let f = if i == j { 0.5 * sign } else { sign };
                    add_sym_outer(n, w, &ell[i], &ell[j], f);
                }
            }

            let nv = vars.len();
            for a in 0..nv {
                let wa = &ws[a * nn..(a + 1) * nn];
                grad[vars[a]] -= (0..n).map(|i| wa[i * n + i]).sum::<f64>();
                for bidx in a..nv {
                    let wb = &ws[bidx * nn..(bidx + 1) * nn];
                    let dot: f64 = wa.iter().zip(wb).map(|(x, z)| x * z).sum();
                    let (ia, ib) = (vars[a], vars[bidx]);
                    hess[ia * dim + ib] += dot;
                    if ia != ib {
                        hess[ib * dim + ia] += dot;
                    }
                }
            }
        }

        let len = m * n;
        for (r, f) in self.ball_slacks(y, radius).into_iter().enumerate() {
            if f <= 0.0 {
                return None;
            }
            let off = self.w_offset(r);
            let w = &y[off..off + len];
            for a in 0..len {
                grad[off + a] += 2.0 * w[a] / f;
                for b in 0..len {
                    let mut h = 4.0 * w[a] * w[b] / (f * f);
                    if a == b {
                        h += 2.0 / f;
                    }
                    hess[(off + a) * dim + off + b] += h;
                }
            }
        }
        Some((grad, hess))
    }

    /// Newton direction from a Jacobi-preconditioned Cholesky solve with one
    /// step of iterative refinement.
    fn newton_direction(&self, grad: &[f64], hess: &[f64]) -> Option<Vec<f64>> {
        let dim = grad.len();
        let mut sc = vec![0.0; dim];
        for a in 0..dim {
            let h = hess[a * dim + a];
            if !(h > 0.0 && h.is_finite()) {
                return None;
            }
            sc[a] = 1.0 / h.sqrt();
        }
        let mut hs = vec![0.0; dim * dim];
        for a in 0..dim {
            for b in 0..dim {
                hs[a * dim + b] = hess[a * dim + b] * sc[a] * sc[b];
            }
        }
        let l = dense_cholesky(dim, &hs)?;
        let solve = |rhs: &[f64]| -> Vec<f64> {
            let scaled: Vec<f64> = rhs.iter().zip(&sc).map(|(r, s)| r * s).collect();
            let z = dense_cholesky_solve(dim, &l, &scaled);
            z.iter().zip(&sc).map(|(v, s)| v * s).collect()
        };
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        let mut dy = solve(&neg);
        let residual: Vec<f64> = (0..dim)
            .map(|a| neg[a] - (0..dim).map(|b| hess[a * dim + b] * dy[b]).sum::<f64>())
            .collect();
        for (d, c) in dy.iter_mut().zip(solve(&residual)) {
            *d += c;
        }
        dy.iter().all(|v| v.is_finite()).then_some(dy)
    }

    fn path_follow(&self, mut y: Vec<f64>, c: f64, params: &BarrierParams, budget: &mut usize) -> PathResult {
        let ti = self.t_index();
        let degree = self.barrier_degree();
        let radius = params.gain_radius;
        let mut kappa = 1.0;
        let mut iterations = 0;
        let finish = |y: Vec<f64>, iterations, status| PathResult {
            t: y[ti],
            y,
            iterations,
            status,
        };
        loop {
            for _ in 0..params.centering_steps {
                if *budget == 0 {
                    return finish(y, iterations, PathStatus::Budget);
                }
                *budget -= 1;
                iterations += 1;
                let Some((grad, hess)) = self.newton_system(&y, kappa, c, radius) else {
                    return finish(y, iterations, PathStatus::Stalled);
                };
                let Some(dy) = self.newton_direction(&grad, &hess) else {
                    return finish(y, iterations, PathStatus::Stalled);
                };
                let dec: f64 = -grad.iter().zip(&dy).map(|(g, d)| g * d).sum::<f64>();
                if !(dec >= 0.0) {
                    return finish(y, iterations, PathStatus::Stalled);
                }
                if dec < CENTERING_DECREMENT {
                    break;
                }
                let mut step = if dec > 0.25 { 1.0 / (1.0 + dec.sqrt()) } else { 1.0 };
                let mut next: Vec<f64>;
                loop {
                    next = y.iter().zip(&dy).map(|(a, d)| a + step * d).collect();
                    if self.interior(&next, c, radius) {
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-12 {
                        return finish(y, iterations, PathStatus::Stalled);
                    }
                }
                y = next;
            }
            if degree / kappa < params.gap_tolerance * y[ti].abs().max(1e-3) || kappa > KAPPA_LIMIT {
                return finish(y, iterations, PathStatus::Converged);
            }
            kappa *= params.kappa_growth;
        }
    }

    /// Maps scaled variables back to `(Q, V)` in original coordinates.
    fn unscale(&self, y: &[f64], problem: &Eliminated) -> CertificateCandidate {
        let (n, m) = (self.n, self.m);
        let qs = self.q_of(y);
        let mut q = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                q[(i, j)] = qs[i * n + j] / (self.d[i] * self.d[j]);
            }
        }
        let q = SymMatrix::from_matrix(&q).expect("square");
        let v = (0..self.rules)
            .map(|r| {
                let off = self.w_offset(r);
                let mut vt = Matrix::zeros(m, n);
                for p in 0..m {
                    for j in 0..n {
                        vt[(p, j)] = y[off + p * n + j] / (self.d[j] * self.beta);
                    }
                }
                vt.sub(&problem.elimination[r].matmul(q.as_matrix()))
            })
            .collect();
        CertificateCandidate { q, v }
    }
}

/// `w += f·(a·bᵀ + b·aᵀ)`.
fn add_sym_outer(n: usize, w: &mut [f64], a: &[f64], b: &[f64], f: f64) {
    for i in 0..n {
        for j in 0..n {
            w[i * n + j] += f * (a[i] * b[j] + b[i] * a[j]);
        }
    }
}

fn dense_cholesky(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0 && d.is_finite()) {
            return None;
        }
        let ljj = d.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut acc = a[i * n + j];
            for k in 0..j {
                acc -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = acc / ljj;
        }
    }
    Some(l)
}

fn dense_cholesky_solve(n: usize, l: &[f64], rhs: &[f64]) -> Vec<f64> {
    let mut x = rhs.to_vec();
    for i in 0..n {
        let mut acc = x[i];
        for k in 0..i {
            acc -= l[i * n + k] * x[k];
        }
        x[i] = acc / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in i + 1..n {
            acc -= l[k * n + i] * x[k];
        }
        x[i] = acc / l[i * n + i];
    }
    x
}

fn lower_inverse(n: usize, l: &[f64]) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    for c in 0..n {
        inv[c * n + c] = 1.0 / l[c * n + c];
        for i in c + 1..n {
            let mut acc = 0.0;
            for k in c..i {
                acc -= l[i * n + k] * inv[k * n + c];
            }
            inv[i * n + c] = acc / l[i * n + i];
        }
    }
    inv
}

fn dense_mul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik != 0.0 {
                for j in 0..n {
                    out[i * n + j] += aik * b[k * n + j];
                }
            }
        }
    }
    out
}

fn dense_mul_vec(n: usize, a: &[f64], v: &[f64]) -> Vec<f64> {
    (0..n).map(|i| (0..n).map(|k| a[i * n + k] * v[k]).sum()).collect()
}
