//! Synthetic delay scans and stepped rotation sequences.
//!
//! Every scan point draws from its own ChaCha stream keyed by
//! `(seed, sequence, step, point)`, so a trace is reproducible regardless of
//! how runs are scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{InvalidParameter, SimError};
use crate::models::{nc_symmetric, SymmetricModelInput};
use crate::physics::{
    delay_to_stage, propagation_times, require, stage_to_delay, Direction, OpticalConfig, RotationState, SagnacArm,
    StageMapping,
};

/// Counting statistics, drift and systematic imperfections of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Coincidences per second per unit of closed-form model output.
    pub rate_scale: f64,
    /// Constant accidental coincidence rate (counts/s).
    pub accidental_rate: f64,
    /// Acquisition time per stage position (s).
    pub acquisition_time: f64,
    /// Random-walk step of the loop delay difference per scan point (s).
    pub drift_sigma: f64,
    pub rng_seed: u64,
    /// Mean singles rate on each detector (counts/s).
    pub singles_rate: f64,
    /// Fractional rotation-dependent delay added with the same sign in both
    /// directions. Zero disables it; a positive value shortens the
    /// clockwise half-period and lengthens the anticlockwise one.
    pub direction_offset: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            rate_scale: 4.5e14,
            accidental_rate: 100.0,
            acquisition_time: 1.5,
            drift_sigma: 1e-18,
            rng_seed: 0,
            singles_rate: 5.0e4,
            direction_offset: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(
            self.rate_scale.is_finite() && self.rate_scale >= 0.0,
            "rate_scale",
            "must be finite and >= 0",
        )?;
        require(
            self.accidental_rate.is_finite() && self.accidental_rate >= 0.0,
            "accidental_rate",
            "must be finite and >= 0",
        )?;
        require(
            self.acquisition_time.is_finite() && self.acquisition_time > 0.0,
            "acquisition_time",
            "must be finite and > 0",
        )?;
        require(
            self.drift_sigma.is_finite() && self.drift_sigma >= 0.0,
            "drift_sigma",
            "must be finite and >= 0",
        )?;
        require(
            self.singles_rate.is_finite() && self.singles_rate >= 0.0,
            "singles_rate",
            "must be finite and >= 0",
        )?;
        require(
            self.direction_offset.is_finite() && self.direction_offset.abs() < 1.0,
            "direction_offset",
            "must lie in (-1, 1)",
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    /// Stage positions (m), strictly monotone.
    pub stage_positions: Vec<f64>,
    pub mapping: StageMapping,
}

impl ScanSpec {
    /// `count` positions starting at `start` with spacing `step` (m).
    pub fn uniform(start: f64, step: f64, count: usize, mapping: StageMapping) -> Self {
        Self {
            stage_positions: (0..count).map(|i| start + i as f64 * step).collect(),
            mapping,
        }
    }

    /// Positions spaced by `step` covering `±half_width` (m) of stage travel
    /// around the stage position of `center_delay`.
    pub fn around_delay(center_delay: f64, step: f64, half_width: f64, mapping: StageMapping) -> Self {
        let center = delay_to_stage(center_delay, &mapping);
        let half = (half_width / step + 1e-9).floor() as i64;
        Self {
            stage_positions: (-half..=half).map(|i| center + i as f64 * step).collect(),
            mapping,
        }
    }

    /// The paper's protocol: 10 µm steps across the oscillating feature at
    /// `δt = −Δt/2` of the rest-frame landscape.
    pub fn second_feature(arm: &SagnacArm, mapping: StageMapping) -> Self {
        let rest = propagation_times(arm, &RotationState::at_rest());
        Self::around_delay(-rest.delta_t / 2.0, 10e-6, 140e-6, mapping)
    }

    pub fn delays(&self) -> Vec<f64> {
        self.stage_positions
            .iter()
            .map(|&x| stage_to_delay(x, &self.mapping))
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.stage_positions.is_empty() {
            return Err(SimError::EmptyScan);
        }
        self.mapping.validate().map_err(|e| e.within("mapping"))?;
        require(
            self.stage_positions.iter().all(|x| x.is_finite()),
            "stage_positions",
            "must be finite",
        )?;
        let increasing = self.stage_positions.windows(2).all(|w| w[1] > w[0]);
        let decreasing = self.stage_positions.windows(2).all(|w| w[1] < w[0]);
        require(increasing || decreasing, "stage_positions", "must be strictly monotone")?;
        Ok(())
    }
}

/// Motor calibration `actual_hz = a·set_hzᵇ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotorCalibration {
    pub a: f64,
    pub b: f64,
}

impl Default for MotorCalibration {
    fn default() -> Self {
        Self { a: 1.0, b: 1.0 }
    }
}

impl MotorCalibration {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(self.a.is_finite() && self.a > 0.0, "a", "must be finite and > 0")?;
        require(self.b.is_finite() && self.b > 0.0, "b", "must be finite and > 0")
    }
}

pub fn apply_motor_calibration(set_hz: f64, cal: &MotorCalibration) -> f64 {
    if set_hz == 0.0 {
        return 0.0;
    }
    cal.a * set_hz.powf(cal.b)
}

/// Highest motor set frequency used in the experiment (Hz).
pub const MAX_SET_FREQUENCY: f64 = 0.735;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepPattern {
    Up,
    Down,
    UpDown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSpec {
    /// Motor set frequencies (Hz), in acquisition order.
    pub rotation_steps: Vec<f64>,
    pub direction: Direction,
    pub calibration: MotorCalibration,
}

impl SequenceSpec {
    /// `steps` equally spaced set frequencies from 0 to `max_hz`, arranged
    /// by `pattern`. The up-down pattern does not repeat the top step.
    pub fn stepped(max_hz: f64, steps: usize, pattern: StepPattern, direction: Direction) -> Self {
        let up: Vec<f64> = match steps {
            0 => Vec::new(),
            1 => vec![0.0],
            n => (0..n).map(|i| max_hz * i as f64 / (n - 1) as f64).collect(),
        };
        let rotation_steps = match pattern {
            StepPattern::Up => up,
            StepPattern::Down => up.into_iter().rev().collect(),
            StepPattern::UpDown => {
                let mut all = up.clone();
                all.extend(up.iter().rev().skip(1));
                all
            }
        };
        Self {
            rotation_steps,
            direction,
            calibration: MotorCalibration::default(),
        }
    }

    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(!self.rotation_steps.is_empty(), "rotation_steps", "must not be empty")?;
        for (i, &s) in self.rotation_steps.iter().enumerate() {
            require(
                (0.0..=MAX_SET_FREQUENCY).contains(&s),
                &format!("rotation_steps[{i}]"),
                &format!("must lie in [0, {MAX_SET_FREQUENCY}] Hz (got {s})"),
            )?;
        }
        self.calibration.validate().map_err(|e| e.within("calibration"))
    }

    /// Signed calibrated rotation of step `i`.
    pub fn rotation(&self, i: usize) -> RotationState {
        let set = self.rotation_steps[i];
        let actual = apply_motor_calibration(set, &self.calibration);
        RotationState {
            set_frequency: Some(set),
            ..RotationState::from_hz(self.direction.sign() * actual)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub stage_m: f64,
    pub delay_s: f64,
    pub coincidences: u64,
    pub singles_a: u64,
    pub singles_b: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceHeader {
    pub sequence_id: u32,
    pub step_index: u32,
    pub direction: Direction,
    /// Motor set frequency (Hz), unsigned.
    pub set_hz: f64,
    /// Calibrated rotation (Hz), signed.
    pub rotation_hz: f64,
    pub seed: u64,
}

/// One delay scan at a fixed rotation speed.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceTrace {
    pub header: TraceHeader,
    pub points: Vec<TracePoint>,
}

impl CoincidenceTrace {
    pub fn delays(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.delay_s).collect()
    }

    pub fn counts(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.coincidences as f64).collect()
    }
}

/// Accumulated random-walk offset of the loop delay difference (s), carried
/// from point to point, step to step and sequence to sequence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftState {
    pub offset: f64,
}

/// Everything a scan needs besides its rotation and position in a run.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub optics: &'a OpticalConfig,
    pub arm: &'a SagnacArm,
    pub scan: &'a ScanSpec,
    pub noise: &'a NoiseModel,
}

impl Setup<'_> {
    pub fn validate(&self) -> Result<(), SimError> {
        self.optics.validate().map_err(|e| e.within("optics"))?;
        self.arm.validate().map_err(|e| e.within("arm"))?;
        self.noise.validate().map_err(|e| e.within("noise"))?;
        self.scan.validate()
    }
}

fn point_rng(seed: u64, sequence: u32, step: u32, point: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&u64::from(sequence).to_le_bytes());
    key[16..24].copy_from_slice(&u64::from(step).to_le_bytes());
    key[24..].copy_from_slice(&(point as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    // Poisson::new only fails for non-positive or non-finite means.
    Poisson::new(mean).map(|d| d.sample(rng) as u64).unwrap_or(0)
}

/// Systematic delay difference added by the direction-offset knob.
fn direction_offset_delay(arm: &SagnacArm, rotation: &RotationState, noise: &NoiseModel) -> f64 {
    noise.direction_offset * arm.sagnac_delay_per_rad_s() * rotation.omega.abs()
}

/// Simulates one trace as step `step_index` of sequence `sequence_id`,
/// advancing `drift` by one random-walk step per point.
pub fn simulate_trace(
    setup: &Setup<'_>,
    rotation: &RotationState,
    direction: Direction,
    sequence_id: u32,
    step_index: u32,
    drift: &mut DriftState,
) -> Result<CoincidenceTrace, SimError> {
    setup.validate()?;
    let noise = setup.noise;
    let base = propagation_times(setup.arm, rotation);
    let systematic = direction_offset_delay(setup.arm, rotation, noise);
    let step = if noise.drift_sigma > 0.0 {
        Some(Normal::new(0.0, noise.drift_sigma).map_err(|_| InvalidParameter::new("noise.drift_sigma", "invalid"))?)
    } else {
        None
    };
    let acq = noise.acquisition_time;

    let points = setup
        .scan
        .stage_positions
        .iter()
        .enumerate()
        .map(|(k, &stage_m)| {
            let mut rng = point_rng(noise.rng_seed, sequence_id, step_index, k);
            if let Some(step) = &step {
                drift.offset += step.sample(&mut rng);
            }
            let delay_s = stage_to_delay(stage_m, &setup.scan.mapping);
            let model = nc_symmetric(&SymmetricModelInput {
                delta_t_hom: delay_s,
                arm_delays: base.with_extra_delay(systematic + drift.offset),
                optics: *setup.optics,
            });
            let mean = (noise.rate_scale * model.n_c.max(0.0) + noise.accidental_rate) * acq;
            TracePoint {
                stage_m,
                delay_s,
                coincidences: poisson(mean, &mut rng),
                singles_a: poisson(noise.singles_rate * acq, &mut rng),
                singles_b: poisson(noise.singles_rate * acq, &mut rng),
            }
        })
        .collect();

    Ok(CoincidenceTrace {
        header: TraceHeader {
            sequence_id,
            step_index,
            direction,
            set_hz: rotation.set_frequency.unwrap_or(rotation.hz().abs()),
            rotation_hz: rotation.hz(),
            seed: noise.rng_seed,
        },
        points,
    })
}

/// A single scan at a fixed rotation, starting from zero drift.
pub fn simulate_scan(
    optics: &OpticalConfig,
    arm: &SagnacArm,
    rotation: &RotationState,
    scan: &ScanSpec,
    noise: &NoiseModel,
) -> Result<CoincidenceTrace, SimError> {
    let setup = Setup {
        optics,
        arm,
        scan,
        noise,
    };
    simulate_trace(&setup, rotation, rotation.direction(), 0, 0, &mut DriftState::default())
}

/// One trace per rotation step; the drift state continues across steps and
/// is left where the last step finished.
pub fn simulate_sequence(
    setup: &Setup<'_>,
    seq: &SequenceSpec,
    sequence_id: u32,
    drift: &mut DriftState,
) -> Result<Vec<CoincidenceTrace>, SimError> {
    seq.validate().map_err(|e| e.within("sequence"))?;
    (0..seq.rotation_steps.len())
        .map(|i| simulate_trace(setup, &seq.rotation(i), seq.direction, sequence_id, i as u32, drift))
        .collect()
}

/// `count` sequences alternating direction, starting with `template`'s.
/// Drift accumulates over the whole campaign.
pub fn simulate_campaign(
    setup: &Setup<'_>,
    template: &SequenceSpec,
    count: usize,
) -> Result<Vec<Vec<CoincidenceTrace>>, SimError> {
    let mut drift = DriftState::default();
    let mut direction = template.direction;
    let mut out = Vec::with_capacity(count);
    for id in 0..count {
        let seq = SequenceSpec {
            direction,
            ..template.clone()
        };
        out.push(simulate_sequence(setup, &seq, id as u32, &mut drift)?);
        direction = direction.opposite();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::SPEED_OF_LIGHT;

    fn quiet() -> NoiseModel {
        NoiseModel {
            drift_sigma: 0.0,
            ..NoiseModel::default()
        }
    }

    #[test]
    fn calibration_examples() {
        let ideal = MotorCalibration::default();
        assert_eq!(apply_motor_calibration(0.735, &ideal), 0.735);
        assert_eq!(apply_motor_calibration(0.0, &ideal), 0.0);
        let cal = MotorCalibration { a: 0.95, b: 1.05 };
        assert!((apply_motor_calibration(0.5, &cal) - 0.95 * 0.5f64.powf(1.05)).abs() < 1e-15);
        assert!((apply_motor_calibration(0.5, &cal) - 0.45882).abs() < 1e-5);
    }

    #[test]
    fn stepped_patterns() {
        let up = SequenceSpec::stepped(0.735, 8, StepPattern::Up, Direction::Cw);
        assert_eq!(up.rotation_steps.len(), 8);
        assert_eq!(up.rotation_steps[0], 0.0);
        assert!((up.rotation_steps[7] - 0.735).abs() < 1e-15);
        let down = SequenceSpec::stepped(0.735, 8, StepPattern::Down, Direction::Cw);
        assert_eq!(down.rotation_steps[0], up.rotation_steps[7]);
        let both = SequenceSpec::stepped(0.735, 8, StepPattern::UpDown, Direction::Acw);
        assert_eq!(both.rotation_steps.len(), 15);
        assert_eq!(both.rotation_steps[14], 0.0);
        assert!(both.rotation(3).omega < 0.0);
        assert!(up.validate().is_ok());
        let too_fast = SequenceSpec {
            rotation_steps: vec![0.0, 0.8],
            ..up
        };
        assert_eq!(too_fast.validate().unwrap_err().field, "rotation_steps[1]");
    }

    #[test]
    fn default_scan_covers_second_feature() {
        let arm = SagnacArm::default();
        let scan = ScanSpec::second_feature(&arm, StageMapping::default());
        assert_eq!(scan.stage_positions.len(), 29);
        let delays = scan.delays();
        let dt = arm.birefringent_delay();
        assert!((delays[14] + dt / 2.0).abs() < 1e-18);
        assert!(((delays[1] - delays[0]) * SPEED_OF_LIGHT - 10e-6).abs() < 1e-12);
        assert!(delays.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn empty_and_unordered_scans_are_rejected() {
        let optics = OpticalConfig::default();
        let arm = SagnacArm::default();
        let empty = ScanSpec {
            stage_positions: vec![],
            mapping: StageMapping::default(),
        };
        assert!(matches!(
            simulate_scan(&optics, &arm, &RotationState::at_rest(), &empty, &quiet()),
            Err(SimError::EmptyScan)
        ));
        let zigzag = ScanSpec {
            stage_positions: vec![0.0, 2e-5, 1e-5],
            mapping: StageMapping::default(),
        };
        assert!(simulate_scan(&optics, &arm, &RotationState::at_rest(), &zigzag, &quiet()).is_err());
    }

    #[test]
    fn pure_background_is_poisson() {
        let noise = NoiseModel {
            rate_scale: 0.0,
            ..quiet()
        };
        let scan = ScanSpec::uniform(0.0, 1e-6, 10_000, StageMapping::default());
        let trace = simulate_scan(
            &OpticalConfig::default(),
            &SagnacArm::default(),
            &RotationState::at_rest(),
            &scan,
            &noise,
        )
        .unwrap();
        let counts = trace.counts();
        let n = counts.len() as f64;
        let mean = counts.iter().sum::<f64>() / n;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((mean - 150.0).abs() < 5.0, "{mean}");
        assert!((0.9..=1.1).contains(&(var / mean)), "{}", var / mean);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let arm = SagnacArm::default();
        let scan = ScanSpec::second_feature(&arm, StageMapping::default());
        let noise = NoiseModel {
            rng_seed: 17,
            ..NoiseModel::default()
        };
        let rot = RotationState::from_hz(0.3);
        let a = simulate_scan(&OpticalConfig::default(), &arm, &rot, &scan, &noise).unwrap();
        let b = simulate_scan(&OpticalConfig::default(), &arm, &rot, &scan, &noise).unwrap();
        assert_eq!(a, b);
        let other = NoiseModel { rng_seed: 18, ..noise };
        let c = simulate_scan(&OpticalConfig::default(), &arm, &rot, &scan, &other).unwrap();
        assert_ne!(a.counts(), c.counts());
    }

    #[test]
    fn drift_carries_across_steps() {
        let optics = OpticalConfig::default();
        let arm = SagnacArm::default();
        let scan = ScanSpec::second_feature(&arm, StageMapping::default());
        let noise = NoiseModel::default();
        let setup = Setup {
            optics: &optics,
            arm: &arm,
            scan: &scan,
            noise: &noise,
        };
        let seq = SequenceSpec::stepped(0.735, 3, StepPattern::Up, Direction::Cw);
        let mut drift = DriftState::default();
        let traces = simulate_sequence(&setup, &seq, 0, &mut drift).unwrap();
        assert_eq!(traces.len(), 3);
        assert!(drift.offset != 0.0);
        // ~ sqrt(87) steps of 1e-18 s
        assert!(drift.offset.abs() < 1e-16);
    }

    #[test]
    fn single_step_sequence_matches_scan() {
        let optics = OpticalConfig::default();
        let arm = SagnacArm::default();
        let scan = ScanSpec::second_feature(&arm, StageMapping::default());
        let noise = NoiseModel::default();
        let setup = Setup {
            optics: &optics,
            arm: &arm,
            scan: &scan,
            noise: &noise,
        };
        let seq = SequenceSpec {
            rotation_steps: vec![0.4],
            direction: Direction::Acw,
            calibration: MotorCalibration::default(),
        };
        let from_seq = simulate_sequence(&setup, &seq, 0, &mut DriftState::default()).unwrap();
        let single = simulate_scan(&optics, &arm, &RotationState::from_hz(-0.4), &scan, &noise).unwrap();
        assert_eq!(from_seq[0].points, single.points);
        assert_eq!(from_seq[0].header.rotation_hz, single.header.rotation_hz);
        assert_eq!(from_seq[0].header.direction, Direction::Acw);
    }

    #[test]
    fn campaign_alternates_direction() {
        let optics = OpticalConfig::default();
        let arm = SagnacArm::default();
        let scan = ScanSpec::second_feature(&arm, StageMapping::default());
        let noise = quiet();
        let setup = Setup {
            optics: &optics,
            arm: &arm,
            scan: &scan,
            noise: &noise,
        };
        let template = SequenceSpec::stepped(0.735, 2, StepPattern::Up, Direction::Acw);
        let runs = simulate_campaign(&setup, &template, 3).unwrap();
        let dirs: Vec<_> = runs.iter().map(|r| r[0].header.direction).collect();
        assert_eq!(dirs, [Direction::Acw, Direction::Cw, Direction::Acw]);
        assert!(runs[1][1].header.rotation_hz > 0.0);
    }
}
