//! Run configuration: INI sections with documented defaults.
//!
//! ```ini
//! [plant]     j_motor j_gear j_arm k_arm d_gb d_arm n_gear
//! [friction]  coulomb_level static_level stribeck_velocity viscous_coeff epsilon_reg
//! [gear]      k1 k2
//! [ranges]    position_lo position_hi velocity_lo velocity_hi
//! [solver]    margin_target scale_normalization max_iterations seed gain_radius
//!             q_floor refine_floors kappa_growth gap_tolerance centering_steps
//!             restarts margin_safety shrink_attempts shrink_factor
//! [sim]       x1..x6 t_end h settle_tolerance torque_limit zoh
//! [hooks]     zero_input_column negate_gains flip_gain_rule
//! ```
//!
//! Range bounds and initial angles also accept a `_deg` suffix, converted to
//! radians on load. Unknown sections and keys are rejected by name.

use ini::Ini;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::StateRanges;
use crate::plant::{FrictionParams, GearStiffnessParams, Plant, PlantParams};
use crate::sim::SimConfig;
use crate::synth::SolverConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("config syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("unknown config section [{0}]")]
    UnknownSection(String),
    #[error("key `{key}` must be inside a section")]
    NoSection { key: String },
    #[error("unknown config key `{key}` in section [{section}]")]
    UnknownKey { section: String, key: String },
    #[error("invalid value `{value}` for [{section}] {key}: {reason}")]
    InvalidValue {
        section: String,
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Geometric contraction of the state box when synthesis fails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkSettings {
    pub attempts: usize,
    /// Factor in (0, 1) applied to both ranges per attempt.
    pub factor: f64,
}

impl Default for ShrinkSettings {
    fn default() -> Self {
        Self {
            attempts: 3,
            factor: 0.8,
        }
    }
}

/// Test hooks that deliberately break the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Hooks {
    /// Replace the input column by zero, making the plant uncontrollable.
    pub zero_input_column: bool,
    /// Negate every gain before verification and simulation.
    pub negate_gains: bool,
    /// Flip the sign of the largest-magnitude entry of gain `K_j` (1-based).
    pub flip_gain_rule: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub plant: PlantParams,
    pub friction: FrictionParams,
    pub gear: GearStiffnessParams,
    pub ranges: StateRanges,
    pub solver: SolverConfig,
    pub shrink: ShrinkSettings,
    pub sim: SimConfig,
    pub hooks: Hooks,
}

impl RunConfig {
    pub fn from_ini(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_ini(text)?;
        Ok(cfg)
    }

    pub fn plant(&self) -> Plant {
        Plant {
            params: self.plant,
            friction: self.friction,
            gear: self.gear,
        }
    }

    /// Overrides the fields named in `text`, then validates the result.
    pub fn apply_ini(&mut self, text: &str) -> Result<(), ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Syntax {
            line: e.line,
            col: e.col,
            msg: e.msg.to_string(),
        })?;
        for (section, props) in &ini {
            let Some(section) = section else {
                if let Some((key, _)) = props.iter().next() {
                    return Err(ConfigError::NoSection { key: key.to_string() });
                }
                continue;
            };
            if !SECTIONS.contains(&section) {
                return Err(ConfigError::UnknownSection(section.to_string()));
            }
            for (key, value) in props.iter() {
                self.set(section, key, value.trim())?;
            }
        }
        self.validate()
    }

    fn set(&mut self, section: &str, key: &str, raw: &str) -> Result<(), ConfigError> {
        let invalid = |reason: &str| ConfigError::InvalidValue {
            section: section.to_string(),
            key: key.to_string(),
            value: raw.to_string(),
            reason: reason.to_string(),
        };
        let (base, degrees) = match key.strip_suffix("_deg") {
            Some(b) if accepts_degrees(section, b) => (b, true),
            _ => (key, false),
        };
        let real = || -> Result<f64, ConfigError> {
            let v: f64 = raw.parse().map_err(|_| invalid("expected a real number"))?;
            if !v.is_finite() {
                return Err(invalid("must be finite"));
            }
            Ok(if degrees { v.to_radians() } else { v })
        };
        let count = || -> Result<usize, ConfigError> { raw.parse().map_err(|_| invalid("expected a non-negative integer")) };
        let flag = || -> Result<bool, ConfigError> {
            match raw.to_ascii_lowercase().as_str() {
                "true" | "yes" | "on" | "1" => Ok(true),
                "false" | "no" | "off" | "0" => Ok(false),
                _ => Err(invalid("expected true or false")),
            }
        };
        let optional_real = || -> Result<Option<f64>, ConfigError> {
            if raw.eq_ignore_ascii_case("none") {
                Ok(None)
            } else {
                real().map(Some)
            }
        };
        let unknown = || ConfigError::UnknownKey {
            section: section.to_string(),
            key: key.to_string(),
        };

        match section {
            "plant" => {
                let p = &mut self.plant;
                *match base {
                    "j_motor" => &mut p.j_motor,
                    "j_gear" => &mut p.j_gear,
                    "j_arm" => &mut p.j_arm,
                    "k_arm" => &mut p.k_arm,
                    "d_gb" => &mut p.d_gb,
                    "d_arm" => &mut p.d_arm,
                    "n_gear" => &mut p.n_gear,
                    _ => return Err(unknown()),
                } = real()?;
            }
            "friction" => {
                let f = &mut self.friction;
                *match base {
                    "coulomb_level" => &mut f.coulomb_level,
                    "static_level" => &mut f.static_level,
                    "stribeck_velocity" => &mut f.stribeck_velocity,
                    "viscous_coeff" => &mut f.viscous_coeff,
                    "epsilon_reg" => &mut f.epsilon_reg,
                    _ => return Err(unknown()),
                } = real()?;
            }
            "gear" => {
                *match base {
                    "k1" => &mut self.gear.k1,
                    "k2" => &mut self.gear.k2,
                    _ => return Err(unknown()),
                } = real()?;
            }
            "ranges" => {
                let r = &mut self.ranges;
                *match base {
                    "position_lo" => &mut r.position[0],
                    "position_hi" => &mut r.position[1],
                    "velocity_lo" => &mut r.velocity[0],
                    "velocity_hi" => &mut r.velocity[1],
                    _ => return Err(unknown()),
                } = real()?;
            }
            "solver" => {
                let s = &mut self.solver;
                match base {
                    "margin_target" => s.margin_target = real()?,
                    "scale_normalization" => s.scale_normalization = optional_real()?,
                    "max_iterations" => s.max_iterations = count()?,
                    "seed" => s.seed = raw.parse().map_err(|_| invalid("expected a 64-bit unsigned integer"))?,
                    "gain_radius" => s.barrier.gain_radius = real()?,
                    "q_floor" => s.barrier.q_floor = real()?,
                    "refine_floors" => {
                        s.barrier.refine_floors = if raw.is_empty() {
                            Vec::new()
                        } else {
                            raw.split(',')
                                .map(|v| v.trim().parse::<f64>().map_err(|_| invalid("expected a comma-separated list of reals")))
                                .collect::<Result<_, _>>()?
                        }
                    }
                    "kappa_growth" => s.barrier.kappa_growth = real()?,
                    "gap_tolerance" => s.barrier.gap_tolerance = real()?,
                    "centering_steps" => s.barrier.centering_steps = count()?,
                    "restarts" => s.barrier.restarts = count()?,
                    "margin_safety" => s.barrier.margin_safety = real()?,
                    "shrink_attempts" => self.shrink.attempts = count()?,
                    "shrink_factor" => self.shrink.factor = real()?,
                    _ => return Err(unknown()),
                }
            }
            "sim" => {
                let s = &mut self.sim;
                match base {
                    "x1" | "x2" | "x3" | "x4" | "x5" | "x6" => {
                        let i = base[1..].parse::<usize>().expect("matched digit") - 1;
                        s.x0.0[i] = real()?;
                    }
                    "t_end" => s.t_end = real()?,
                    "h" => s.h = real()?,
                    "settle_tolerance" => s.settle_tolerance = real()?,
                    "torque_limit" => s.torque_limit = optional_real()?,
                    "zoh" => s.zoh = flag()?,
                    _ => return Err(unknown()),
                }
            }
            "hooks" => match base {
                "zero_input_column" => self.hooks.zero_input_column = flag()?,
                "negate_gains" => self.hooks.negate_gains = flag()?,
                "flip_gain_rule" => {
                    let j = count()?;
                    self.hooks.flip_gain_rule = (j != 0).then_some(j);
                }
                _ => return Err(unknown()),
            },
            _ => unreachable!("sections are checked before keys"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: String| ConfigError::Invalid(e);
        self.plant().validate().map_err(|e| wrap(e.to_string()))?;
        self.ranges.validate().map_err(|e| wrap(e.to_string()))?;
        self.solver.validate().map_err(|e| wrap(e.to_string()))?;
        self.sim.validate().map_err(|e| wrap(e.to_string()))?;
        if !(self.shrink.factor > 0.0 && self.shrink.factor < 1.0) {
            return Err(wrap(format!("shrink_factor must lie in (0, 1), got {}", self.shrink.factor)));
        }
        if let Some(j) = self.hooks.flip_gain_rule {
            if !(1..=crate::fuzzy::RULE_COUNT).contains(&j) {
                return Err(wrap(format!("flip_gain_rule must be 0 (off) or a rule in 1..=16, got {j}")));
            }
        }
        Ok(())
    }

    /// The effective configuration as INI text that [`RunConfig::from_ini`]
    /// reads back to an identical value.
    pub fn to_ini(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("none".to_string(), |x| format!("{x:?}"));
        let p = &self.plant;
        let f = &self.friction;
        let s = &self.solver;
        let b = &s.barrier;
        let sim = &self.sim;
        let floors: Vec<String> = b.refine_floors.iter().map(|v| format!("{v:?}")).collect();
        let mut out = String::new();
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        };
        section(
            "plant",
            vec![
                ("j_motor", format!("{:?}", p.j_motor)),
                ("j_gear", format!("{:?}", p.j_gear)),
                ("j_arm", format!("{:?}", p.j_arm)),
                ("k_arm", format!("{:?}", p.k_arm)),
                ("d_gb", format!("{:?}", p.d_gb)),
                ("d_arm", format!("{:?}", p.d_arm)),
                ("n_gear", format!("{:?}", p.n_gear)),
            ],
        );
        section(
            "friction",
            vec![
                ("coulomb_level", format!("{:?}", f.coulomb_level)),
                ("static_level", format!("{:?}", f.static_level)),
                ("stribeck_velocity", format!("{:?}", f.stribeck_velocity)),
                ("viscous_coeff", format!("{:?}", f.viscous_coeff)),
                ("epsilon_reg", format!("{:?}", f.epsilon_reg)),
            ],
        );
        section(
            "gear",
            vec![("k1", format!("{:?}", self.gear.k1)), ("k2", format!("{:?}", self.gear.k2))],
        );
        section(
            "ranges",
            vec![
                ("position_lo", format!("{:?}", self.ranges.position[0])),
                ("position_hi", format!("{:?}", self.ranges.position[1])),
                ("velocity_lo", format!("{:?}", self.ranges.velocity[0])),
                ("velocity_hi", format!("{:?}", self.ranges.velocity[1])),
            ],
        );
        section(
            "solver",
            vec![
                ("margin_target", format!("{:?}", s.margin_target)),
                ("scale_normalization", opt(s.scale_normalization)),
                ("max_iterations", s.max_iterations.to_string()),
                ("seed", s.seed.to_string()),
                ("gain_radius", format!("{:?}", b.gain_radius)),
                ("q_floor", format!("{:?}", b.q_floor)),
                ("refine_floors", floors.join(", ")),
                ("kappa_growth", format!("{:?}", b.kappa_growth)),
                ("gap_tolerance", format!("{:?}", b.gap_tolerance)),
                ("centering_steps", b.centering_steps.to_string()),
                ("restarts", b.restarts.to_string()),
                ("margin_safety", format!("{:?}", b.margin_safety)),
                ("shrink_attempts", self.shrink.attempts.to_string()),
                ("shrink_factor", format!("{:?}", self.shrink.factor)),
            ],
        );
        let mut sim_entries: Vec<(&str, String)> = ["x1", "x2", "x3", "x4", "x5", "x6"]
            .into_iter()
            .zip(sim.x0.0)
            .map(|(k, v)| (k, format!("{v:?}")))
            .collect();
        sim_entries.extend([
            ("t_end", format!("{:?}", sim.t_end)),
            ("h", format!("{:?}", sim.h)),
            ("settle_tolerance", format!("{:?}", sim.settle_tolerance)),
            ("torque_limit", opt(sim.torque_limit)),
            ("zoh", sim.zoh.to_string()),
        ]);
        section("sim", sim_entries);
        section(
            "hooks",
            vec![
                ("zero_input_column", self.hooks.zero_input_column.to_string()),
                ("negate_gains", self.hooks.negate_gains.to_string()),
                ("flip_gain_rule", self.hooks.flip_gain_rule.unwrap_or(0).to_string()),
            ],
        );
        out
    }
}

const SECTIONS: [&str; 7] = ["plant", "friction", "gear", "ranges", "solver", "sim", "hooks"];

fn accepts_degrees(section: &str, base: &str) -> bool {
    match section {
        "ranges" => true,
        "sim" => matches!(base, "x1" | "x2" | "x3" | "x4" | "x5" | "x6"),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        assert_eq!(RunConfig::from_ini("").unwrap(), RunConfig::default());
        let d = RunConfig::default();
        assert_eq!(d.plant.j_motor, 6.3e-3);
        assert_eq!(d.gear.k2, 100.0);
        assert_eq!(d.ranges.velocity, [0.0, 10.0]);
        assert_eq!(d.solver.margin_target, 1e-6);
        assert_eq!(d.solver.max_iterations, 50_000);
        assert_eq!(d.sim.h, 1e-4);
    }

    #[test]
    fn overrides_and_degrees() {
        let cfg = RunConfig::from_ini(
            "# comment\n[gear]\nk2 = 0.5\n[ranges]\nposition_hi_deg = 180\n[sim]\nx3_deg = 2\nx1_deg = 2\ntorque_limit = 50\nzoh = yes\n[solver]\nseed = 42\nrefine_floors = 0.1, 0.01\n",
        )
        .unwrap();
        assert_eq!(cfg.gear.k2, 0.5);
        assert!((cfg.ranges.position[1] - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(cfg.sim.x0.0[2], 2f64.to_radians());
        assert_eq!(cfg.sim.x0.0[0], 2f64.to_radians());
        assert_eq!(cfg.sim.torque_limit, Some(50.0));
        assert!(cfg.sim.zoh);
        assert_eq!(cfg.solver.seed, 42);
        assert_eq!(cfg.solver.barrier.refine_floors, vec![0.1, 0.01]);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_ini("[plant]\nj_motr = 1\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::UnknownKey {
                section: "plant".into(),
                key: "j_motr".into()
            }
        );
        assert!(err.to_string().contains("j_motr"));
        // degrees are only accepted where angles live
        assert!(matches!(
            RunConfig::from_ini("[gear]\nk1_deg = 1\n"),
            Err(ConfigError::UnknownKey { .. })
        ));
    }

    #[test]
    fn unknown_section_and_bare_keys_rejected() {
        assert_eq!(
            RunConfig::from_ini("[plants]\nj_motor = 1\n").unwrap_err(),
            ConfigError::UnknownSection("plants".into())
        );
        assert!(matches!(
            RunConfig::from_ini("seed = 1\n"),
            Err(ConfigError::NoSection { .. })
        ));
    }

    #[test]
    fn invalid_values_rejected_before_use() {
        assert!(matches!(
            RunConfig::from_ini("[plant]\nj_motor = abc\n"),
            Err(ConfigError::InvalidValue { .. })
        ));
        assert!(matches!(
            RunConfig::from_ini("[plant]\nj_motor = -1\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_ini("[plant]\nn_gear = 2\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_ini("[ranges]\nvelocity_lo = 10\n"),
            Err(ConfigError::Invalid(_))
        ));
        assert!(matches!(
            RunConfig::from_ini("[hooks]\nflip_gain_rule = 17\n"),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn ini_echo_round_trips() {
        let mut cfg = RunConfig::from_ini("[sim]\nx3_deg = 3\ntorque_limit = 12.5\n[hooks]\nflip_gain_rule = 4\n").unwrap();
        cfg.solver.scale_normalization = Some(1.0 / 3.0);
        let text = cfg.to_ini();
        assert_eq!(RunConfig::from_ini(&text).unwrap(), cfg);
    }
}
