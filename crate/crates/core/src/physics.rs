//! Physical parameters of the rotating interferometer and the kinematic
//! delay formulas every model is built on.
//!
//! Angular velocities are stored in rad/s. Rotation rates at the file and
//! command-line boundary are in Hz (revolutions per second) and are
//! converted with [`RotationState::from_hz`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::InvalidParameter;

/// Speed of light in vacuum (m/s), exact by definition of the metre.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default single-photon spectral width (rad/s).
pub const DEFAULT_DELTA_OMEGA: f64 = 1.19e13;

/// Default birefringent index mismatch between the two circulation directions.
pub const DEFAULT_INDEX_MISMATCH: f64 = 5.641e-4;

pub(crate) fn require(cond: bool, field: &str, reason: &str) -> Result<(), InvalidParameter> {
    if cond {
        Ok(())
    } else {
        Err(InvalidParameter::new(field, reason))
    }
}

/// Pump and biphoton spectral parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalConfig {
    /// Pump wavelength (m).
    pub lambda_p: f64,
    /// Single-photon angular-frequency spread (rad/s), the width in
    /// `exp(-Δω² δt²)`.
    pub delta_omega: f64,
    /// Biphoton (pump-energy) angular-frequency spread (rad/s).
    pub sigma_p: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            lambda_p: 355e-9,
            delta_omega: DEFAULT_DELTA_OMEGA,
            sigma_p: 2.0 * PI * 2e10,
        }
    }
}

impl OpticalConfig {
    pub fn new(lambda_p: f64, delta_omega: f64, sigma_p: f64) -> Result<Self, InvalidParameter> {
        let cfg = Self {
            lambda_p,
            delta_omega,
            sigma_p,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(
            self.lambda_p.is_finite() && self.lambda_p > 0.0,
            "lambda_p",
            "must be finite and > 0",
        )?;
        require(
            self.delta_omega.is_finite() && self.delta_omega > 0.0,
            "delta_omega",
            "must be finite and > 0",
        )?;
        require(
            self.sigma_p.is_finite() && self.sigma_p >= 0.0,
            "sigma_p",
            "must be finite and >= 0",
        )
    }

    /// Pump angular frequency ω_p = 2πc/λ_p.
    pub fn omega_p(&self) -> f64 {
        2.0 * PI * SPEED_OF_LIGHT / self.lambda_p
    }

    /// Mean photon angular frequency, exactly half the pump frequency.
    pub fn mu(&self) -> f64 {
        self.omega_p() / 2.0
    }

    pub fn with_sigma_p(self, sigma_p: f64) -> Self {
        Self { sigma_p, ..self }
    }
}

/// One nested fibre Sagnac loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SagnacArm {
    /// Total fibre length in the loop (m).
    pub fiber_length: f64,
    /// Radius of the fibre coil on the platform (m).
    pub loop_radius: f64,
    /// Length of the axis-flipped birefringent segment (m).
    pub birefringent_length: f64,
    pub n_cw: f64,
    pub n_ac: f64,
}

impl Default for SagnacArm {
    fn default() -> Self {
        Self {
            fiber_length: 41.0,
            loop_radius: 0.454,
            birefringent_length: 1.0,
            n_cw: 1.45 + DEFAULT_INDEX_MISMATCH,
            n_ac: 1.45,
        }
    }
}

impl SagnacArm {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(
            self.fiber_length.is_finite() && self.fiber_length > 0.0,
            "fiber_length",
            "must be finite and > 0",
        )?;
        require(
            self.loop_radius.is_finite() && self.loop_radius > 0.0,
            "loop_radius",
            "must be finite and > 0",
        )?;
        require(
            self.birefringent_length.is_finite()
                && self.birefringent_length >= 0.0
                && self.birefringent_length <= self.fiber_length,
            "birefringent_length",
            "must satisfy 0 <= birefringent_length <= fiber_length",
        )?;
        require(self.n_cw.is_finite() && self.n_cw >= 1.0, "n_cw", "must be >= 1")?;
        require(self.n_ac.is_finite() && self.n_ac >= 1.0, "n_ac", "must be >= 1")
    }

    /// Birefringent delay between the two circulation directions at rest.
    pub fn birefringent_delay(&self) -> f64 {
        self.birefringent_length * self.n_cw / SPEED_OF_LIGHT - self.birefringent_length * self.n_ac / SPEED_OF_LIGHT
    }

    /// Sagnac contribution to `t_cw - t_ac` per rad/s of rotation.
    pub fn sagnac_delay_per_rad_s(&self) -> f64 {
        2.0 * self.fiber_length * self.loop_radius / (SPEED_OF_LIGHT * SPEED_OF_LIGHT)
    }

    /// Returns a copy whose `n_cw` is shifted by the smallest amount that puts
    /// the rest-frame oscillation phase `μ·Δt` at `target` (mod 2π).
    pub fn tuned_to_phase(&self, optics: &OpticalConfig, target: f64) -> Self {
        let mu = optics.mu();
        let current = mu * self.birefringent_delay();
        let diff = (target - current).rem_euclid(2.0 * PI);
        let shift = if diff > PI { diff - 2.0 * PI } else { diff };
        let dn = shift * SPEED_OF_LIGHT / (mu * self.birefringent_length);
        Self {
            n_cw: self.n_cw + dn,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Cw,
    Acw,
}

impl Direction {
    /// Sign applied to a rotation speed: clockwise is positive.
    pub fn sign(self) -> f64 {
        match self {
            Direction::Cw => 1.0,
            Direction::Acw => -1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Cw => "cw",
            Direction::Acw => "acw",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Direction::Cw => Direction::Acw,
            Direction::Acw => Direction::Cw,
        }
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cw" => Ok(Direction::Cw),
            "acw" => Ok(Direction::Acw),
            other => Err(format!("unknown direction {other:?} (expected cw or acw)")),
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Signed platform angular velocity, positive = clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RotationState {
    /// rad/s
    pub omega: f64,
    /// Frequency the motor was set to before calibration (Hz), if known.
    pub set_frequency: Option<f64>,
}

impl RotationState {
    pub fn at_rest() -> Self {
        Self::default()
    }

    pub fn from_rad_per_s(omega: f64) -> Self {
        Self {
            omega,
            set_frequency: None,
        }
    }

    /// Signed rotation frequency in Hz.
    pub fn from_hz(hz: f64) -> Self {
        Self::from_rad_per_s(2.0 * PI * hz)
    }

    pub fn hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }

    pub fn direction(&self) -> Direction {
        if self.omega < 0.0 {
            Direction::Acw
        } else {
            Direction::Cw
        }
    }
}

/// Propagation times through the loop in both circulation directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmDelays {
    pub t_cw: f64,
    pub t_ac: f64,
    /// `t_cw - t_ac`
    pub delta_t: f64,
}

impl ArmDelays {
    pub fn new(t_cw: f64, t_ac: f64) -> Self {
        Self {
            t_cw,
            t_ac,
            delta_t: t_cw - t_ac,
        }
    }

    /// Delays with only a net difference; convenient for the models, which
    /// depend on `delta_t` alone.
    pub fn from_difference(delta_t: f64) -> Self {
        Self::new(delta_t, 0.0)
    }

    /// Add `extra` to the clockwise propagation time.
    pub fn with_extra_delay(&self, extra: f64) -> Self {
        Self::new(self.t_cw + extra, self.t_ac)
    }
}

/// Linear map between delay-stage position and HOM delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageMapping {
    /// Stage travel per second of HOM delay (m/s).
    pub meters_per_second_of_delay: f64,
    /// Stage position of zero delay (m).
    pub origin: f64,
}

impl Default for StageMapping {
    fn default() -> Self {
        Self {
            meters_per_second_of_delay: SPEED_OF_LIGHT,
            origin: 0.0125,
        }
    }
}

impl StageMapping {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(
            self.meters_per_second_of_delay.is_finite() && self.meters_per_second_of_delay > 0.0,
            "meters_per_second_of_delay",
            "must be finite and > 0",
        )?;
        require(self.origin.is_finite(), "origin", "must be finite")
    }
}

/// Sagnac time difference `4AΩ/c²` for an enclosed area (m²) and angular
/// velocity (rad/s).
pub fn sagnac_delay(area: f64, omega: f64) -> f64 {
    4.0 * area * omega / (SPEED_OF_LIGHT * SPEED_OF_LIGHT)
}

pub fn propagation_times(arm: &SagnacArm, rot: &RotationState) -> ArmDelays {
    let c = SPEED_OF_LIGHT;
    let rotation = arm.fiber_length * arm.loop_radius * rot.omega / (c * c);
    ArmDelays::new(
        arm.birefringent_length * arm.n_cw / c + rotation,
        arm.birefringent_length * arm.n_ac / c - rotation,
    )
}

/// Change of rotation frequency (Hz) that turns an oscillating dip into a
/// peak: `cλ_p / (4π L_f r)`.
pub fn flip_half_period(arm: &SagnacArm, optics: &OpticalConfig) -> f64 {
    SPEED_OF_LIGHT * optics.lambda_p / (4.0 * PI * arm.fiber_length * arm.loop_radius)
}

pub fn stage_to_delay(x: f64, map: &StageMapping) -> f64 {
    (x - map.origin) / map.meters_per_second_of_delay
}

pub fn delay_to_stage(delay: f64, map: &StageMapping) -> f64 {
    map.origin + delay * map.meters_per_second_of_delay
}
