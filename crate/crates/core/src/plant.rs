//! Nonlinear flexible-joint arm: motor, gearbox and link inertias coupled by
//! a cubic-stiffening gear spring and a linear arm spring, with Tustin
//! (Coulomb + Stribeck + viscous) friction acting on the motor.
//!
//! State ordering is `(θ_motor, θ_gear, θ_arm, θ̇_motor, θ̇_gear, θ̇_arm)`.
//! The measured output is the motor speed `x4`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Matrix;

pub const STATE_DIM: usize = 6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("{name} must be {requirement}, got {value}")]
    OutOfRange {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

fn require(ok: bool, name: &'static str, requirement: &'static str, value: f64) -> Result<(), ParamError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(ParamError::OutOfRange {
            name,
            requirement,
            value,
        })
    }
}

/// Inertia, stiffness and damping of the arm.
///
/// Stiffness and damping are rotational (N·m/rad and N·m·s/rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub j_motor: f64,
    pub j_gear: f64,
    pub j_arm: f64,
    pub k_arm: f64,
    pub d_gb: f64,
    pub d_arm: f64,
    pub n_gear: f64,
}

impl Default for PlantParams {
    /// The published arm parameters.
    fn default() -> Self {
        Self {
            j_motor: 6.3e-3,
            j_gear: 40e-3,
            j_arm: 13e-3,
            k_arm: 6.0,
            d_gb: 35e-3,
            d_arm: 95e-3,
            n_gear: 1.0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.j_motor > 0.0, "j_motor", "> 0", self.j_motor)?;
        require(self.j_gear > 0.0, "j_gear", "> 0", self.j_gear)?;
        require(self.j_arm > 0.0, "j_arm", "> 0", self.j_arm)?;
        require(self.k_arm > 0.0, "k_arm", "> 0", self.k_arm)?;
        require(self.d_gb >= 0.0, "d_gb", ">= 0", self.d_gb)?;
        require(self.d_arm >= 0.0, "d_arm", ">= 0", self.d_arm)?;
        require(self.n_gear == 1.0, "n_gear", "exactly 1", self.n_gear)
    }
}

/// Tustin friction on the motor shaft.
///
/// None of these values are published for the arm; the defaults are
/// plausible placeholders and every one is overridable from the config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrictionParams {
    /// Coulomb level μN, N·m.
    pub coulomb_level: f64,
    /// Static (breakaway) level, N·m.
    pub static_level: f64,
    /// Stribeck velocity, rad/s.
    pub stribeck_velocity: f64,
    /// Viscous coefficient, N·m·s/rad.
    pub viscous_coeff: f64,
    /// Width of the saturation that replaces sign(ω), rad/s.
    pub epsilon_reg: f64,
}

impl Default for FrictionParams {
    fn default() -> Self {
        Self {
            coulomb_level: 0.3,
            static_level: 0.5,
            stribeck_velocity: 10.0,
            viscous_coeff: 0.05,
            epsilon_reg: 0.1,
        }
    }
}

impl FrictionParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.coulomb_level >= 0.0, "coulomb_level", ">= 0", self.coulomb_level)?;
        require(
            self.static_level >= self.coulomb_level,
            "static_level",
            ">= coulomb_level",
            self.static_level,
        )?;
        require(self.stribeck_velocity > 0.0, "stribeck_velocity", "> 0", self.stribeck_velocity)?;
        require(self.viscous_coeff >= 0.0, "viscous_coeff", ">= 0", self.viscous_coeff)?;
        require(self.epsilon_reg > 0.0, "epsilon_reg", "> 0", self.epsilon_reg)
    }

    /// Upper bound of the friction coefficient, reached at ω = 0.
    pub fn coefficient_bound(&self) -> f64 {
        self.static_level / self.epsilon_reg + self.viscous_coeff
    }

    /// Coulomb + Stribeck level at speed ω (without direction or viscous part).
    fn level(&self, omega: f64) -> f64 {
        self.coulomb_level
            + (self.static_level - self.coulomb_level) * (-omega.abs() / self.stribeck_velocity).exp()
    }
}

/// Gear torsion spring `τ = k1·Δ + k2·Δ³` on the motor/gear angle difference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GearStiffnessParams {
    pub k1: f64,
    pub k2: f64,
}

impl Default for GearStiffnessParams {
    fn default() -> Self {
        Self { k1: 10.0, k2: 100.0 }
    }
}

impl GearStiffnessParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        require(self.k1 > 0.0, "k1", "> 0", self.k1)?;
        require(self.k2 >= 0.0, "k2", ">= 0", self.k2)
    }
}

/// `(C + (S−C)·e^{−|ω|/v_s})·sat(ω/ε) + K_v·ω`
pub fn friction_torque(omega: f64, fp: &FrictionParams) -> f64 {
    let sat = (omega / fp.epsilon_reg).clamp(-1.0, 1.0);
    fp.level(omega) * sat + fp.viscous_coeff * omega
}

/// Friction torque divided by speed; finite everywhere, even in ω.
pub fn friction_coefficient(omega: f64, fp: &FrictionParams) -> f64 {
    let a = omega.abs();
    // sat(ω/ε)/ω is 1/ε inside the saturation band and 1/|ω| outside it
    let inv = if a <= fp.epsilon_reg { 1.0 / fp.epsilon_reg } else { 1.0 / a };
    fp.level(omega) * inv + fp.viscous_coeff
}

/// Secant stiffness `k1 + k2·Δ²` of the gear spring.
pub fn gear_stiffness_coeff(delta: f64, gp: &GearStiffnessParams) -> f64 {
    gp.k1 + gp.k2 * delta * delta
}

/// Arm state vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState(pub [f64; STATE_DIM]);

impl RobotState {
    pub const ZERO: RobotState = RobotState([0.0; STATE_DIM]);

    pub fn new(x: [f64; STATE_DIM]) -> Result<Self, ParamError> {
        for v in x {
            require(true, "state entry", "finite", v)?;
        }
        Ok(Self(x))
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let mut s = [0.0; STATE_DIM];
        s.copy_from_slice(x);
        Self(s)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn theta_motor(&self) -> f64 {
        self.0[0]
    }

    pub fn theta_gear(&self) -> f64 {
        self.0[1]
    }

    pub fn theta_arm(&self) -> f64 {
        self.0[2]
    }

    pub fn omega_motor(&self) -> f64 {
        self.0[3]
    }

    pub fn omega_gear(&self) -> f64 {
        self.0[4]
    }

    pub fn omega_arm(&self) -> f64 {
        self.0[5]
    }

    /// Output y = x4.
    pub fn output(&self) -> f64 {
        self.0[3]
    }

    /// Gear twist x1 − x2.
    pub fn gear_twist(&self) -> f64 {
        self.0[0] - self.0[1]
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// The complete physical model.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Plant {
    pub params: PlantParams,
    pub friction: FrictionParams,
    pub gear: GearStiffnessParams,
}

impl Plant {
    pub fn validate(&self) -> Result<(), ParamError> {
        self.params.validate()?;
        self.friction.validate()?;
        self.gear.validate()
    }

    pub fn gear_stiffness(&self, x: &RobotState) -> f64 {
        gear_stiffness_coeff(x.gear_twist(), &self.gear)
    }

    pub fn friction_coeff(&self, x: &RobotState) -> f64 {
        friction_coefficient(x.omega_motor(), &self.friction)
    }

    /// State derivative of the arm under motor torque `tau_in`.
    pub fn dynamics(&self, x: &RobotState, tau_in: f64) -> [f64; STATE_DIM] {
        let p = &self.params;
        let [x1, x2, x3, x4, x5, x6] = x.0;
        let k_gb = self.gear_stiffness(x);
        let k_f = self.friction_coeff(x);
        let gear_torque = k_gb * (x1 - x2) + p.d_gb * (x4 - x5);
        let arm_torque = p.k_arm * (x2 - x3) + p.d_arm * (x5 - x6);
        [
            x4,
            x5,
            x6,
            (-gear_torque - k_f * x4 + tau_in) / p.j_motor,
            (gear_torque - arm_torque) / p.j_gear,
            arm_torque / p.j_arm,
        ]
    }

    /// State-dependent coefficient matrix with `A(x)·x + B·τ = dynamics(x, τ)`.
    pub fn a_matrix(&self, x: &RobotState) -> Matrix {
        let p = &self.params;
        let k_gb = self.gear_stiffness(x);
        let k_f = self.friction_coeff(x);
        let (jm, jg, ja) = (p.j_motor, p.j_gear, p.j_arm);
        let mut a = Matrix::zeros(STATE_DIM, STATE_DIM);
        a[(0, 3)] = 1.0;
        a[(1, 4)] = 1.0;
        a[(2, 5)] = 1.0;

        a[(3, 0)] = -k_gb / jm;
        a[(3, 1)] = k_gb / jm;
        a[(3, 3)] = (-p.d_gb - k_f) / jm;
        a[(3, 4)] = p.d_gb / jm;

        a[(4, 0)] = k_gb / jg;
        a[(4, 1)] = (-k_gb - p.k_arm) / jg;
        a[(4, 2)] = p.k_arm / jg;
        a[(4, 3)] = p.d_gb / jg;
        a[(4, 4)] = (-p.d_gb - p.d_arm) / jg;
        a[(4, 5)] = p.d_arm / jg;

        a[(5, 1)] = p.k_arm / ja;
        a[(5, 2)] = -p.k_arm / ja;
        a[(5, 4)] = p.d_arm / ja;
        a[(5, 5)] = -p.d_arm / ja;
        a
    }

    /// Input column B = (0, 0, 0, 1/J_motor, 0, 0)ᵀ.
    pub fn input_column(&self) -> Matrix {
        let mut b = Matrix::zeros(STATE_DIM, 1);
        b[(3, 0)] = 1.0 / self.params.j_motor;
        b
    }

    /// Kinetic plus potential energy (used with friction, damping and k2 disabled).
    pub fn mechanical_energy(&self, x: &RobotState) -> f64 {
        let p = &self.params;
        let [x1, x2, x3, x4, x5, x6] = x.0;
        let twist = x1 - x2;
        // potential of k1·Δ + k2·Δ³
        let gear_pe = 0.5 * self.gear.k1 * twist * twist + 0.25 * self.gear.k2 * twist.powi(4);
        0.5 * (p.j_motor * x4 * x4 + p.j_gear * x5 * x5 + p.j_arm * x6 * x6)
            + gear_pe
            + 0.5 * p.k_arm * (x2 - x3) * (x2 - x3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> FrictionParams {
        FrictionParams::default()
    }

    #[test]
    fn friction_examples() {
        assert_eq!(friction_torque(0.0, &fp()), 0.0);
        let t = friction_torque(5.0, &fp());
        // 0.3 + 0.2·e^{−0.5} + 0.05·5
        assert!((t - 0.671_306_131_942_526_8).abs() < 1e-12, "{t}");
        assert_eq!(friction_torque(-5.0, &fp()), -t);

        let k = friction_coefficient(5.0, &fp());
        assert!((k - 0.134_261_226_388_505_4).abs() < 1e-12, "{k}");
        assert_eq!(friction_coefficient(0.0, &fp()), 0.5 / 0.1 + 0.05);
    }

    #[test]
    fn friction_coefficient_is_continuous_at_band_edge() {
        let f = fp();
        let inside = friction_coefficient(f.epsilon_reg, &f);
        let outside = friction_coefficient(f.epsilon_reg * (1.0 + 1e-12), &f);
        assert!((inside - outside).abs() < 1e-9);
    }

    #[test]
    fn gear_examples() {
        let gp = GearStiffnessParams { k1: 10.0, k2: 100.0 };
        assert_eq!(gear_stiffness_coeff(0.0, &gp), 10.0);
        let c = gear_stiffness_coeff(0.1, &gp);
        assert!((c - 11.0).abs() < 1e-12);
        assert!((c * 0.1 - 1.1).abs() < 1e-12);
        assert_eq!(gear_stiffness_coeff(-0.37, &gp), gear_stiffness_coeff(0.37, &gp));
    }

    #[test]
    fn origin_is_equilibrium() {
        let plant = Plant::default();
        assert_eq!(plant.dynamics(&RobotState::ZERO, 0.0), [0.0; 6]);
    }

    #[test]
    fn unit_torque_accelerates_motor_only() {
        let plant = Plant::default();
        let d = plant.dynamics(&RobotState::ZERO, 1.0);
        assert!((d[3] - 158.730_158_730_158_73).abs() < 1e-9);
        for i in [0, 1, 2, 4, 5] {
            assert_eq!(d[i], 0.0);
        }
    }

    #[test]
    fn a_matrix_structure() {
        let plant = Plant::default();
        let a = plant.a_matrix(&RobotState([0.3, 0.1, -0.2, 1.0, 2.0, -3.0]));
        for i in 0..3 {
            for j in 0..6 {
                assert_eq!(a[(i, j)], if j == i + 3 { 1.0 } else { 0.0 });
            }
        }
        assert!((a[(5, 1)] - 461.538_461_538_461_5).abs() < 1e-9);
        let b = plant.input_column();
        assert_eq!(b.data(), &[0.0, 0.0, 0.0, 1.0 / 6.3e-3, 0.0, 0.0]);
    }

    #[test]
    fn parameter_validation() {
        assert!(Plant::default().validate().is_ok());
        let mut p = Plant::default();
        p.params.n_gear = 2.0;
        assert!(p.validate().is_err());
        let mut p = Plant::default();
        p.friction.static_level = 0.1;
        assert!(matches!(
            p.validate(),
            Err(ParamError::OutOfRange { name: "static_level", .. })
        ));
        let mut p = Plant::default();
        p.gear.k1 = 0.0;
        assert!(p.validate().is_err());
    }
}
