//! Exact sector-nonlinearity Takagi–Sugeno model of the arm.
//!
//! Four scheduling variables carry every nonlinearity of `A(x)`:
//!
//! ```text
//! z1 = −K_gb(x1−x2)/J_motor        z2 = K_gb(x1−x2)/J_motor
//! z3 = −(d_gb + K_f(x4))/J_motor    z4 = −(K_gb(x1−x2) + K_arm)/J_gear
//! ```
//!
//! Each is bounded over the declared state box and written as a convex
//! combination of its bounds; the product of the four Big/Small memberships
//! gives sixteen rule weights and sixteen vertex matrices `A_j` whose blend
//! reproduces `A(x)` exactly inside the box.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;
use crate::plant::{friction_coefficient, gear_stiffness_coeff, Plant, RobotState, STATE_DIM};

pub const PREMISE_COUNT: usize = 4;
pub const RULE_COUNT: usize = 16;

/// Grid resolution per position axis used to cross-check the analytic bounds.
const POSITION_GRID: usize = 201;
/// Grid resolution on the motor-speed axis.
const VELOCITY_GRID: usize = 20_001;
const BOUNDS_AGREEMENT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FuzzyError {
    #[error("state range {name} is empty or inverted: [{lo}, {hi}]")]
    InvalidRange { name: &'static str, lo: f64, hi: f64 },
    #[error("scheduling variable {variable} is constant over the state box (min = max = {value}); the nonlinearity is degenerate")]
    DegenerateBounds { variable: &'static str, value: f64 },
    #[error("grid scan and analytic extrema of {variable} disagree: analytic [{analytic_min}, {analytic_max}], grid [{grid_min}, {grid_max}]")]
    BoundsMismatch {
        variable: &'static str,
        analytic_min: f64,
        analytic_max: f64,
        grid_min: f64,
        grid_max: f64,
    },
}

pub const PREMISE_NAMES: [&str; PREMISE_COUNT] = ["z1", "z2", "z3", "z4"];

/// Box of admissible states: one interval shared by the three angles and one
/// shared by the three speeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateRanges {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
}

impl Default for StateRanges {
    fn default() -> Self {
        Self {
            position: [0.0, 2.0 * std::f64::consts::PI],
            velocity: [0.0, 10.0],
        }
    }
}

impl StateRanges {
    pub fn validate(&self) -> Result<(), FuzzyError> {
        for (name, [lo, hi]) in [("position", self.position), ("velocity", self.velocity)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(FuzzyError::InvalidRange { name, lo, hi });
            }
        }
        Ok(())
    }

    /// Contracts both intervals toward the origin by `factor` in (0, 1).
    pub fn shrunk(&self, factor: f64) -> Self {
        let s = |[lo, hi]: [f64; 2]| [lo * factor, hi * factor];
        Self {
            position: s(self.position),
            velocity: s(self.velocity),
        }
    }

    /// Largest gear twist reachable inside the box.
    pub fn max_twist(&self) -> f64 {
        self.position[1] - self.position[0]
    }

    /// Smallest and largest motor speed magnitude inside the box.
    fn speed_magnitudes(&self) -> (f64, f64) {
        let [lo, hi] = self.velocity;
        let min = if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) };
        (min, lo.abs().max(hi.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn contains(&self, z: f64, slack: f64) -> bool {
        let pad = slack * (self.max - self.min).abs().max(self.max.abs()).max(self.min.abs());
        z >= self.min - pad && z <= self.max + pad
    }
}

/// Minimum and maximum of each scheduling variable over the state box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulingBounds {
    pub z: [Interval; PREMISE_COUNT],
}

impl SchedulingBounds {
    pub fn validate(&self) -> Result<(), FuzzyError> {
        for (i, b) in self.z.iter().enumerate() {
            if !(b.min < b.max) {
                return Err(FuzzyError::DegenerateBounds {
                    variable: PREMISE_NAMES[i],
                    value: b.min,
                });
            }
        }
        Ok(())
    }

    /// True when every scheduling value lies inside its certified interval.
    pub fn contains(&self, z: &[f64; PREMISE_COUNT], slack: f64) -> bool {
        self.z.iter().zip(z).all(|(b, v)| b.contains(*v, slack))
    }
}

/// Output of [`compute_bounds`]: the bounds plus the states attaining them.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsAnalysis {
    pub bounds: SchedulingBounds,
    /// `[argmin, argmax]` for each scheduling variable.
    pub extremal_states: [[RobotState; 2]; PREMISE_COUNT],
    pub grid_points: usize,
}

pub fn scheduling_values(x: &RobotState, plant: &Plant) -> [f64; PREMISE_COUNT] {
    let p = &plant.params;
    let k_gb = plant.gear_stiffness(x);
    let k_f = plant.friction_coeff(x);
    [
        -k_gb / p.j_motor,
        k_gb / p.j_motor,
        -(p.d_gb + k_f) / p.j_motor,
        -(k_gb + p.k_arm) / p.j_gear,
    ]
}

/// Scheduling values as functions of gear twist and motor speed only.
fn premise_from(twist: f64, omega: f64, plant: &Plant) -> [f64; PREMISE_COUNT] {
    let mut x = [0.0; STATE_DIM];
    x[0] = twist;
    x[3] = omega;
    scheduling_values(&RobotState(x), plant)
}

/// Bounds of z1..z4 over the box.
///
/// K_gb is even in the twist with its minimum at zero twist and maximum at
/// the largest twist; K_f is even in the speed and decreasing in |ω|. The
/// analytic extrema are cross-checked against a dense grid scan that
/// includes every extremal point.
pub fn compute_bounds(ranges: &StateRanges, plant: &Plant) -> Result<BoundsAnalysis, FuzzyError> {
    ranges.validate()?;
    let [plo, phi] = ranges.position;
    let [vlo, vhi] = ranges.velocity;
    let max_twist = ranges.max_twist();
    let (w_small, w_large) = ranges.speed_magnitudes();
    let w_small_signed = if vlo <= 0.0 && vhi >= 0.0 {
        0.0
    } else if vlo.abs() < vhi.abs() {
        vlo
    } else {
        vhi
    };
    let w_large_signed = if vlo.abs() > vhi.abs() { vlo } else { vhi };

    let p = &plant.params;
    let kgb_min = gear_stiffness_coeff(0.0, &plant.gear);
    let kgb_max = gear_stiffness_coeff(max_twist, &plant.gear);
    let kf_max = friction_coefficient(w_small, &plant.friction);
    let kf_min = friction_coefficient(w_large, &plant.friction);
    let analytic = [
        Interval { min: -kgb_max / p.j_motor, max: -kgb_min / p.j_motor },
        Interval { min: kgb_min / p.j_motor, max: kgb_max / p.j_motor },
        Interval { min: -(p.d_gb + kf_max) / p.j_motor, max: -(p.d_gb + kf_min) / p.j_motor },
        Interval { min: -(kgb_max + p.k_arm) / p.j_gear, max: -(kgb_min + p.k_arm) / p.j_gear },
    ];

    // Witness states: twist realized as (x1, x2) = (hi, lo) or (lo, lo).
    let state = |x1: f64, x2: f64, x4: f64| {
        let mut s = [0.0; STATE_DIM];
        s[0] = x1;
        s[1] = x2;
        s[2] = plo;
        s[3] = x4;
        s[4] = vlo;
        s[5] = vlo;
        RobotState(s)
    };
    let zero_twist = state(plo, plo, w_small_signed);
    let full_twist = state(phi, plo, w_small_signed);
    let extremal_states = [
        [full_twist, zero_twist],
        [zero_twist, full_twist],
        [state(plo, plo, w_small_signed), state(plo, plo, w_large_signed)],
        [full_twist, zero_twist],
    ];

    // grid scan
    let mut grid = [Interval { min: f64::INFINITY, max: f64::NEG_INFINITY }; PREMISE_COUNT];
    let mut points = 0usize;
    let axis = |lo: f64, hi: f64, n: usize| (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64);
    let mut absorb = |z: [f64; PREMISE_COUNT], which: &[usize]| {
        for &i in which {
            grid[i].min = grid[i].min.min(z[i]);
            grid[i].max = grid[i].max.max(z[i]);
        }
    };
    for x1 in axis(plo, phi, POSITION_GRID) {
        for x2 in axis(plo, phi, POSITION_GRID) {
            absorb(premise_from(x1 - x2, vlo, plant), &[0, 1, 3]);
            points += 1;
        }
    }
    let mut speeds: Vec<f64> = axis(vlo, vhi, VELOCITY_GRID).collect();
    if vlo < 0.0 && vhi > 0.0 {
        speeds.push(0.0);
    }
    for w in speeds {
        absorb(premise_from(0.0, w, plant), &[2]);
        points += 1;
    }

    for i in 0..PREMISE_COUNT {
        let (a, g) = (analytic[i], grid[i]);
        let scale = a.min.abs().max(a.max.abs()).max(f64::MIN_POSITIVE);
        if (a.min - g.min).abs() > BOUNDS_AGREEMENT * scale || (a.max - g.max).abs() > BOUNDS_AGREEMENT * scale {
            return Err(FuzzyError::BoundsMismatch {
                variable: PREMISE_NAMES[i],
                analytic_min: a.min,
                analytic_max: a.max,
                grid_min: g.min,
                grid_max: g.max,
            });
        }
    }

    let bounds = SchedulingBounds { z: analytic };
    bounds.validate()?;
    Ok(BoundsAnalysis {
        bounds,
        extremal_states,
        grid_points: points,
    })
}

/// Big/Small membership pair of one scheduling variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub big: f64,
    pub small: f64,
}

/// Sector memberships `big = (z−min)/(max−min)`, `small = 1 − big`, clamped to
/// [0, 1] so values slightly outside the box still give a convex blend.
pub fn memberships(z: f64, min: f64, max: f64) -> Membership {
    debug_assert!(min < max);
    let big = ((z - min) / (max - min)).clamp(0.0, 1.0);
    Membership { big, small: 1.0 - big }
}

/// Whether rule `j` (1-based) takes the Big membership of premise `v` (0-based).
///
/// Bits of `j − 1` written b3 b2 b1 b0 select z1, z2, z3, z4, so z4 toggles
/// fastest: rule 1 is all Small, rule 2 flips z4, rule 9 flips z1, rule 16
/// is all Big.
pub fn rule_uses_big(j: usize, v: usize) -> bool {
    debug_assert!((1..=RULE_COUNT).contains(&j) && v < PREMISE_COUNT);
    ((j - 1) >> (PREMISE_COUNT - 1 - v)) & 1 == 1
}

/// Product of the memberships selected by rule `j` (1-based).
pub fn rule_weight(j: usize, m: &[Membership; PREMISE_COUNT]) -> f64 {
    (0..PREMISE_COUNT)
        .map(|v| if rule_uses_big(j, v) { m[v].big } else { m[v].small })
        .product()
}

/// Normalized firing strengths of the sixteen rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuleWeights(pub [f64; RULE_COUNT]);

impl RuleWeights {
    pub fn from_memberships(m: &[Membership; PREMISE_COUNT]) -> Self {
        let mut w = [0.0; RULE_COUNT];
        for (j, slot) in w.iter_mut().enumerate() {
            *slot = rule_weight(j + 1, m);
        }
        Self(w)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for j in 1..RULE_COUNT {
            if self.0[j] > self.0[best] {
                best = j;
            }
        }
        best
    }
}

/// Sixteen vertex models sharing one input column.
#[derive(Debug, Clone, PartialEq)]
pub struct TsModel {
    pub bounds: SchedulingBounds,
    pub vertex_matrices: Vec<Matrix>,
    pub input_column: Matrix,
}

impl TsModel {
    pub fn rule_count(&self) -> usize {
        self.vertex_matrices.len()
    }

    pub fn memberships(&self, x: &RobotState, plant: &Plant) -> [Membership; PREMISE_COUNT] {
        let z = scheduling_values(x, plant);
        let mut m = [Membership { big: 0.0, small: 1.0 }; PREMISE_COUNT];
        for v in 0..PREMISE_COUNT {
            m[v] = memberships(z[v], self.bounds.z[v].min, self.bounds.z[v].max);
        }
        m
    }

    pub fn weights(&self, x: &RobotState, plant: &Plant) -> RuleWeights {
        RuleWeights::from_memberships(&self.memberships(x, plant))
    }

    /// Defuzzified state matrix Σ_j ω_j(z(x))·A_j.
    pub fn blend(&self, x: &RobotState, plant: &Plant) -> Matrix {
        let w = self.weights(x, plant);
        let mut out = Matrix::zeros(STATE_DIM, STATE_DIM);
        for (wj, a) in w.0.iter().zip(&self.vertex_matrices) {
            if *wj != 0.0 {
                out = out.add(&a.scale(*wj));
            }
        }
        // Entries without a scheduling variable are equal in every vertex;
        // copy them so the convex combination does not round them.
        let a0 = &self.vertex_matrices[0];
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                if !is_scheduled_entry(i, j) {
                    out[(i, j)] = a0[(i, j)];
                }
            }
        }
        out
    }
}

/// Entries of A that depend on a scheduling variable.
pub fn is_scheduled_entry(i: usize, j: usize) -> bool {
    matches!((i, j), (3, 0) | (3, 1) | (3, 3) | (4, 0) | (4, 1))
}

/// Vertex matrices: each z_v replaced by its min (Small) or max (Big).
///
/// The (5,1) entry is K_gb/J_gear, written as the affine function
/// `−z4 − K_arm/J_gear` of the rule's z4 vertex.
pub fn build_vertex_models(bounds: &SchedulingBounds, plant: &Plant) -> Result<TsModel, FuzzyError> {
    bounds.validate()?;
    let p = &plant.params;
    let (jm, jg, ja) = (p.j_motor, p.j_gear, p.j_arm);
    let vertex_matrices = (1..=RULE_COUNT)
        .map(|j| {
            let zv = |v: usize| {
                if rule_uses_big(j, v) {
                    bounds.z[v].max
                } else {
                    bounds.z[v].min
                }
            };
            let (z1, z2, z3, z4) = (zv(0), zv(1), zv(2), zv(3));
            let mut a = Matrix::zeros(STATE_DIM, STATE_DIM);
            a[(0, 3)] = 1.0;
            a[(1, 4)] = 1.0;
            a[(2, 5)] = 1.0;
            a[(3, 0)] = z1;
            a[(3, 1)] = z2;
            a[(3, 3)] = z3;
            a[(3, 4)] = p.d_gb / jm;
            a[(4, 0)] = -z4 - p.k_arm / jg;
            a[(4, 1)] = z4;
            a[(4, 2)] = p.k_arm / jg;
            a[(4, 3)] = p.d_gb / jg;
            a[(4, 4)] = (-p.d_gb - p.d_arm) / jg;
            a[(4, 5)] = p.d_arm / jg;
            a[(5, 1)] = p.k_arm / ja;
            a[(5, 2)] = -p.k_arm / ja;
            a[(5, 4)] = p.d_arm / ja;
            a[(5, 5)] = -p.d_arm / ja;
            a
        })
        .collect();
    Ok(TsModel {
        bounds: *bounds,
        vertex_matrices,
        input_column: plant.input_column(),
    })
}
