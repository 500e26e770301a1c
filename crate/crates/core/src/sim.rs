//! Closed-loop simulation of the arm under the blended PDC law.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{scheduling_values, TsModel};
use crate::numerics::rk4_step;
use crate::plant::{Plant, RobotState, STATE_DIM};
use crate::synth::Certificate;

/// Relative slack when deciding whether a scheduling value is inside its
/// certified interval.
const BOX_SLACK: f64 = 1e-12;
/// Lyapunov increases up to this fraction of max V count as round-off.
const LYAPUNOV_RELATIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation settings: {0}")]
    InvalidConfig(String),
    #[error("state became non-finite at t = {time} s")]
    Blowup { time: f64, partial: Box<Trajectory> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub x0: RobotState,
    pub t_end: f64,
    pub h: f64,
    pub settle_tolerance: f64,
    /// Symmetric saturation |u| ≤ limit applied after blending.
    pub torque_limit: Option<f64>,
    /// Hold the control over each step instead of re-evaluating it per stage.
    pub zoh: bool,
}

impl SimConfig {
    /// 2° on the arm angle, everything else at rest.
    pub fn default_initial_state() -> RobotState {
        RobotState([0.0, 0.0, 2f64.to_radians(), 0.0, 0.0, 0.0])
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("step h must be positive, got {}", self.h));
        }
        if !(self.t_end > self.h && self.t_end.is_finite()) {
            return bad(format!("t_end must exceed h, got {}", self.t_end));
        }
        if !(self.settle_tolerance > 0.0) {
            return bad(format!("settle_tolerance must be positive, got {}", self.settle_tolerance));
        }
        if let Some(l) = self.torque_limit {
            if !(l > 0.0) {
                return bad(format!("torque_limit must be positive, got {l}"));
            }
        }
        if !self.x0.0.iter().all(|v| v.is_finite()) {
            return bad("initial state must be finite".into());
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.h).round() as usize
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            x0: Self::default_initial_state(),
            t_end: 3.0,
            h: 1e-4,
            settle_tolerance: 1e-3,
            torque_limit: None,
            zoh: false,
        }
    }
}

/// Samples at every step boundary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<RobotState>,
    pub inputs: Vec<f64>,
    pub lyapunov: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    fn push(&mut self, t: f64, x: RobotState, u: f64, v: f64) {
        self.times.push(t);
        self.states.push(x);
        self.inputs.push(u);
        self.lyapunov.push(v);
    }

    pub fn final_state(&self) -> Option<&RobotState> {
        self.states.last()
    }

    pub fn peak_input(&self) -> f64 {
        self.inputs.iter().fold(0.0, |m, u| m.max(u.abs()))
    }

    /// Largest |x_i| over the run for each state component.
    pub fn peak_states(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        for x in &self.states {
            for (o, v) in out.iter_mut().zip(x.0) {
                *o = f64::max(*o, v.abs());
            }
        }
        out
    }

    /// CSV with header `t,x1,..,x6,u,V`, one row per sample, then any
    /// `comments` as `#`-prefixed trailer lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comments: &[String]) -> io::Result<()> {
        writeln!(w, "t,x1,x2,x3,x4,x5,x6,u,V")?;
        for k in 0..self.len() {
            write!(w, "{:.15e}", self.times[k])?;
            for v in self.states[k].0 {
                write!(w, ",{v:.15e}")?;
            }
            writeln!(w, ",{:.15e},{:.15e}", self.inputs[k], self.lyapunov[k])?;
        }
        for c in comments {
            writeln!(w, "# {c}")?;
        }
        w.flush()
    }
}

/// Blended state feedback `u = Σ_j ω_j(z(x))·K_j·x`, then optional saturation.
pub fn pdc_control(x: &RobotState, cert: &Certificate, model: &TsModel, plant: &Plant, limit: Option<f64>) -> f64 {
    let w = model.weights(x, plant);
    let mut u = 0.0;
    for (wj, k) in w.0.iter().zip(&cert.k) {
        if *wj != 0.0 {
            let kx: f64 = k.data().iter().zip(x.0).map(|(a, b)| a * b).sum();
            u += wj * kx;
        }
    }
    match limit {
        Some(l) => u.clamp(-l, l),
        None => u,
    }
}

/// Integrates the closed loop with RK4, recording state, input and
/// `V = xᵀPx` at every step boundary.
pub fn simulate(plant: &Plant, cert: &Certificate, model: &TsModel, cfg: &SimConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let steps = cfg.steps();
    let control = |x: &RobotState| pdc_control(x, cert, model, plant, cfg.torque_limit);
    let mut traj = Trajectory::default();
    let mut x = cfg.x0;
    let mut u = control(&x);
    traj.push(0.0, x, u, cert.lyapunov(&x.0));
    for k in 1..=steps {
        let held = u;
        let field = |y: &[f64]| {
            let s = RobotState::from_slice(y);
            let tau = if cfg.zoh { held } else { control(&s) };
            plant.dynamics(&s, tau).to_vec()
        };
        let t = k as f64 * cfg.h;
        match rk4_step(field, &x.0, cfg.h) {
            Ok(next) => x = RobotState::from_slice(&next),
            Err(_) => {
                return Err(SimError::Blowup {
                    time: t,
                    partial: Box::new(traj),
                })
            }
        }
        u = control(&x);
        let v = cert.lyapunov(&x.0);
        if !(u.is_finite() && v.is_finite()) {
            return Err(SimError::Blowup {
                time: t,
                partial: Box::new(traj),
            });
        }
        traj.push(t, x, u, v);
    }
    Ok(traj)
}

/// Earliest sample time after which every sample has ‖x‖∞ ≤ tol; `None`
/// when the final sample is still outside.
pub fn settling_time(traj: &Trajectory, tol: f64) -> Option<f64> {
    match traj.states.iter().rposition(|x| x.norm_inf() > tol) {
        None => traj.times.first().copied(),
        Some(last) if last + 1 < traj.len() => Some(traj.times[last + 1]),
        Some(_) => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovReport {
    /// Largest `V(x_{k+1}) − V(x_k)` over in-box step pairs.
    pub max_increase: f64,
    /// Index `k` of the step pair attaining it.
    pub worst_step: Option<usize>,
    pub tolerance: f64,
    pub checked_steps: usize,
    /// Step pairs skipped because a sample left the certified bounds.
    pub out_of_box_steps: usize,
    pub passed: bool,
}

/// Checks `V(x_{k+1}) ≤ V(x_k) + 1e-9·max V` for every step whose two samples
/// have all scheduling values inside the certified bounds of `model`.
pub fn lyapunov_check(traj: &Trajectory, model: &TsModel, plant: &Plant) -> LyapunovReport {
    let vmax = traj.lyapunov.iter().fold(0.0f64, |m, v| m.max(*v));
    let tolerance = LYAPUNOV_RELATIVE_SLACK * vmax;
    let in_box: Vec<bool> = traj
        .states
        .iter()
        .map(|x| model.bounds.contains(&scheduling_values(x, plant), BOX_SLACK))
        .collect();
    let mut max_increase = 0.0f64;
    let mut worst_step = None;
    let mut checked = 0;
    let mut skipped = 0;
    for k in 0..traj.len().saturating_sub(1) {
        if !(in_box[k] && in_box[k + 1]) {
            skipped += 1;
            continue;
        }
        checked += 1;
        let d = traj.lyapunov[k + 1] - traj.lyapunov[k];
        if d > max_increase || worst_step.is_none() {
            if d > max_increase {
                max_increase = d;
            }
            worst_step = Some(k);
        }
    }
    LyapunovReport {
        max_increase,
        worst_step,
        tolerance,
        checked_steps: checked,
        out_of_box_steps: skipped,
        passed: max_increase <= tolerance,
    }
}
