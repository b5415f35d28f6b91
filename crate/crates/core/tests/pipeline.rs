//! Synthetic scans through feature extraction, sinusoid fits and statistics.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rotohom_core::analysis::*;
use rotohom_core::sim::*;
use rotohom_core::*;

fn bright(seed: u64) -> NoiseModel {
    NoiseModel {
        rate_scale: 1e25,
        accidental_rate: 0.0,
        acquisition_time: 1.0,
        drift_sigma: 0.0,
        rng_seed: seed,
        ..NoiseModel::default()
    }
}

fn sequence_fit(setup: &Setup<'_>, direction: Direction, id: u32) -> (Vec<FeatureAmplitude>, SequenceFit) {
    let seq = SequenceSpec::stepped(MAX_SET_FREQUENCY, 8, StepPattern::Up, direction);
    let traces = simulate_sequence(setup, &seq, id, &mut DriftState::default()).unwrap();
    let points: Vec<_> = traces.iter().map(|t| extract_feature_amplitude(t).unwrap()).collect();
    let fit = fit_sinusoid(&points).unwrap();
    (points, fit)
}

fn campaign_half_periods(setup: &Setup<'_>, count: usize) -> (Vec<f64>, Vec<f64>, usize) {
    let template = SequenceSpec::stepped(MAX_SET_FREQUENCY, 8, StepPattern::Up, Direction::Cw);
    let runs = simulate_campaign(setup, &template, count).unwrap();
    let fits: Vec<(Direction, SequenceFit)> = runs
        .iter()
        .map(|run| {
            let pts: Vec<_> = run.iter().map(|t| extract_feature_amplitude(t).unwrap()).collect();
            (run[0].header.direction, fit_sinusoid(&pts).unwrap())
        })
        .collect();
    let mut cw = Vec::new();
    let mut acw = Vec::new();
    let mut rejected = 0;
    for (dir, fit) in fits {
        match (fit.converged, dir) {
            (false, _) => rejected += 1,
            (true, Direction::Cw) => cw.push(fit.half_period()),
            (true, Direction::Acw) => acw.push(fit.half_period()),
        }
    }
    (cw, acw, rejected)
}

#[test]
fn bright_rest_scan_shows_the_model_extrema() {
    let optics = OpticalConfig::default();
    let arm = SagnacArm::default();
    let delays = propagation_times(&arm, &RotationState::at_rest());

    let fine: Vec<f64> = (-3000..=3000).map(|k| k as f64 * 1e-15).collect();
    let outputs: Vec<ModelOutput> = fine
        .iter()
        .map(|&d| {
            nc_symmetric(&SymmetricModelInput {
                delta_t_hom: d,
                arm_delays: delays,
                optics,
            })
        })
        .collect();
    let model: Vec<f64> = outputs.iter().map(|o| o.n_c).collect();
    let bg = outputs[0].background;
    let extrema = |x: &[f64], y: &[f64], level: f64, min_dev: f64| -> Vec<f64> {
        (1..y.len() - 1)
            .filter(|&i| (y[i] - level).abs() > min_dev * level)
            .filter(|&i| (y[i] - y[i - 1]) * (y[i + 1] - y[i]) < 0.0)
            .map(|i| x[i])
            .collect()
    };
    let expected = extrema(&fine, &model, bg, 1e-6);
    assert_eq!(expected.len(), 5);

    let scan = ScanSpec::around_delay(0.0, 3e-6, 900e-6, StageMapping::default());
    let step = 3e-6 / SPEED_OF_LIGHT;
    let trace = simulate_scan(&optics, &arm, &RotationState::at_rest(), &scan, &bright(5)).unwrap();
    let counts = trace.counts();
    let level = counts[0];
    let found = extrema(&trace.delays(), &counts, level, 1e-2);
    assert_eq!(found.len(), 5, "{found:?} vs {expected:?}");
    for (f, e) in found.iter().zip(&expected) {
        assert!((f - e).abs() <= step * 1.0001, "{f} vs {e}");
    }
}

#[test]
fn synthetic_full_dip_and_peak() {
    let optics = OpticalConfig::default();
    for (phase, expected) in [(PI, -2.0 / 3.0), (0.0, 2.0 / 3.0)] {
        let arm = SagnacArm::default().tuned_to_phase(&optics, phase);
        let scan = ScanSpec::second_feature(&arm, StageMapping::default());
        let trace = simulate_scan(&optics, &arm, &RotationState::at_rest(), &scan, &bright(1)).unwrap();
        let f = extract_feature_amplitude(&trace).unwrap();
        assert!((f.amplitude - expected).abs() < 1e-3, "phase {phase}: {}", f.amplitude);
    }
}

#[test]
fn flat_trace_has_no_feature() {
    let optics = OpticalConfig::default();
    let arm = SagnacArm::default();
    let scan = ScanSpec::second_feature(&arm, StageMapping::default());
    for seed in 0..20 {
        let noise = NoiseModel {
            rate_scale: 0.0,
            rng_seed: seed,
            ..NoiseModel::default()
        };
        let trace = simulate_scan(&optics, &arm, &RotationState::from_hz(0.2), &scan, &noise).unwrap();
        let f = extract_feature_amplitude(&trace).unwrap();
        assert!(f.uncertainty > 0.0);
        assert!(
            f.amplitude.abs() < 4.0 * f.uncertainty,
            "seed {seed}: {} ± {}",
            f.amplitude,
            f.uncertainty
        );
    }
}

#[test]
fn opposite_directions_mirror_the_rotation() {
    let optics = OpticalConfig::default();
    let arm = SagnacArm::default();
    let scan = ScanSpec::second_feature(&arm, StageMapping::default());
    let noise = bright(3);
    let setup = Setup {
        optics: &optics,
        arm: &arm,
        scan: &scan,
        noise: &noise,
    };
    let (cw_pts, _) = sequence_fit(&setup, Direction::Cw, 0);
    let (acw_pts, _) = sequence_fit(&setup, Direction::Acw, 0);
    for p in cw_pts.iter().chain(&acw_pts) {
        let delays = propagation_times(&arm, &RotationState::from_hz(p.rotation_hz));
        let c = (optics.mu() * delays.delta_t).cos();
        let want = 4.0 * c / (2.0 + 4.0 * c * c);
        assert!(
            (p.amplitude - want).abs() < 5e-3,
            "{} Hz: {} vs {want}",
            p.rotation_hz,
            p.amplitude
        );
    }
    assert!(cw_pts.iter().all(|p| p.rotation_hz >= 0.0));
    assert!(acw_pts.iter().all(|p| p.rotation_hz <= 0.0));

    // away from an extremum of the rest phase the two directions pull the
    // feature opposite ways
    let tilted = arm.tuned_to_phase(&optics, PI / 2.0);
    let scan = ScanSpec::second_feature(&tilted, StageMapping::default());
    let setup = Setup {
        arm: &tilted,
        scan: &scan,
        ..setup
    };
    let (_, cw_fit) = sequence_fit(&setup, Direction::Cw, 0);
    let (_, acw_fit) = sequence_fit(&setup, Direction::Acw, 0);
    assert!(cw_fit.converged && acw_fit.converged);
    assert!(cw_fit.slope_at(0.0) * acw_fit.slope_at(0.0) < 0.0);
}

#[test]
fn high_snr_sequence_recovers_the_half_period() {
    let optics = OpticalConfig::default();
    let arm = SagnacArm::default();
    let scan = ScanSpec::second_feature(&arm, StageMapping::default());
    let noise = NoiseModel {
        acquisition_time: 1e4,
        drift_sigma: 0.0,
        rng_seed: 11,
        ..NoiseModel::default()
    };
    let setup = Setup {
        optics: &optics,
        arm: &arm,
        scan: &scan,
        noise: &noise,
    };
    let truth = flip_half_period(&arm, &optics);
    for dir in [Direction::Cw, Direction::Acw] {
        let (_, fit) = sequence_fit(&setup, dir, 0);
        assert!(fit.converged);
        assert!((fit.half_period() - truth).abs() < 0.02, "{dir}: {}", fit.half_period());
    }
}

#[test]
fn experimental_snr_histogram_is_consistent() {
    let optics = OpticalConfig::default();
    let arm = SagnacArm::default();
    let scan = ScanSpec::second_feature(&arm, StageMapping::default());
    let noise = NoiseModel {
        rng_seed: 2024,
        ..NoiseModel::default()
    };
    let setup = Setup {
        optics: &optics,
        arm: &arm,
        scan: &scan,
        noise: &noise,
    };
    let (cw, acw, rejected) = campaign_half_periods(&setup, 151);
    let stats = half_period_histogram(&cw, &acw, rejected, 0.05);
    let total = stats.total.unwrap();
    assert_eq!(total.n + rejected, 151);
    assert!(total.n >= 140, "{} converged", total.n);
    assert!((0.37..=0.57).contains(&total.mean), "{total:?}");
}

#[test]
fn direction_offset_splits_the_groups() {
    let optics = OpticalConfig::default();
    let arm = SagnacArm::default();
    let scan = ScanSpec::second_feature(&arm, StageMapping::default());
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut split = Vec::new();
    for offset in [0.0, 0.15, -0.15] {
        let noise = NoiseModel {
            acquisition_time: 30.0,
            direction_offset: offset,
            rng_seed: 99,
            ..NoiseModel::default()
        };
        let setup = Setup {
            optics: &optics,
            arm: &arm,
            scan: &scan,
            noise: &noise,
        };
        let (cw, acw, _) = campaign_half_periods(&setup, 20);
        split.push(mean(&cw) - mean(&acw));
    }
    assert!(split[0].abs() < 0.03, "{split:?}");
    assert!(split[1] < -0.05, "{split:?}");
    assert!(split[2] > 0.05, "{split:?}");
}

#[test]
fn period_recovery_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let noise = Normal::new(0.0, 1e-3).unwrap();
    let x: Vec<f64> = (0..8).map(|i| MAX_SET_FREQUENCY * i as f64 / 7.0).collect();
    let truth = 0.91;
    let mut sum = 0.0;
    for trial in 0..200 {
        let phi = -PI + 2.0 * PI * trial as f64 / 200.0;
        let y: Vec<f64> = x
            .iter()
            .map(|f| 0.5 * (2.0 * PI * f / truth + phi).cos() + 0.1 + noise.sample(&mut rng))
            .collect();
        let fit = fit_sinusoid_xy(&x, &y, None).unwrap();
        assert!(fit.converged, "trial {trial}");
        sum += fit.period;
    }
    let mean = sum / 200.0;
    assert!((mean - truth).abs() < 1e-3 * truth, "{mean}");
}

#[test]
fn noisy_power_law_recovers_exponent() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let set: Vec<f64> = (1..=8).map(|i| MAX_SET_FREQUENCY * i as f64 / 8.0).collect();
    for _ in 0..100 {
        let actual: Vec<f64> = set
            .iter()
            .map(|s| 0.9 * s.powf(1.1) * (1.0 + noise.sample(&mut rng)))
            .collect();
        let cal = fit_power_law(&set, &actual).unwrap();
        assert!((cal.b - 1.1).abs() < 0.05, "{cal:?}");
    }
}

// Half-periods (Hz) constructed to reproduce the published group statistics.
#[allow(clippy::approx_constant)]
const TABLE_CW: [f64; 78] = [
    0.250, 0.254, 0.258, 0.261, 0.265, 0.269, 0.273, 0.277, 0.280, 0.284, 0.288, 0.292, 0.296, 0.299, 0.303, 0.307,
    0.311, 0.315, 0.318, 0.322, 0.326, 0.330, 0.334, 0.337, 0.341, 0.345, 0.349, 0.353, 0.356, 0.360, 0.364, 0.368,
    0.372, 0.375, 0.379, 0.383, 0.387, 0.391, 0.396, 0.396, 0.397, 0.399, 0.400, 0.402, 0.403, 0.405, 0.406, 0.408,
    0.409, 0.411, 0.412, 0.414, 0.415, 0.417, 0.418, 0.420, 0.421, 0.423, 0.424, 0.426, 0.427, 0.565, 0.571, 0.577,
    0.583, 0.589, 0.595, 0.601, 0.607, 0.613, 0.619, 0.625, 0.631, 0.637, 0.643, 0.649, 0.655, 0.677,
];
const TABLE_ACW: [f64; 73] = [
    0.300, 0.308, 0.317, 0.326, 0.334, 0.342, 0.351, 0.359, 0.368, 0.377, 0.385, 0.393, 0.402, 0.410, 0.419, 0.430,
    0.434, 0.439, 0.444, 0.448, 0.453, 0.457, 0.462, 0.466, 0.470, 0.475, 0.479, 0.484, 0.488, 0.493, 0.497, 0.502,
    0.506, 0.511, 0.515, 0.520, 0.530, 0.559, 0.563, 0.567, 0.571, 0.575, 0.579, 0.583, 0.587, 0.591, 0.595, 0.599,
    0.603, 0.607, 0.611, 0.615, 0.619, 0.623, 0.627, 0.631, 0.635, 0.639, 0.643, 0.647, 0.651, 0.655, 0.659, 0.663,
    0.667, 0.671, 0.675, 0.679, 0.683, 0.687, 0.691, 0.695, 0.705,
];

#[test]
fn table_fixture_statistics() {
    let stats = half_period_histogram(&TABLE_CW, &TABLE_ACW, 0, 0.05);
    let round3 = |v: f64| (v * 1000.0).round() / 1000.0;
    let cw = stats.cw.unwrap();
    let acw = stats.acw.unwrap();
    let total = stats.total.unwrap();
    assert_eq!((cw.n, acw.n, total.n), (78, 73, 151));
    assert_eq!(round3(cw.mean), 0.411);
    assert_eq!(round3(acw.mean), 0.528);
    assert_eq!(round3(total.mean), 0.468);
    assert_eq!(round3(cw.median), 0.396);
    assert_eq!(round3(acw.median), 0.530);
    assert_eq!(round3(total.median), 0.427);
    assert!(stats.warnings.is_empty());
}

#[test]
fn fixture_through_tagged_fits() {
    let fit = |half: f64| SequenceFit {
        amplitude: 0.3,
        period: 2.0 * half,
        phase: 0.0,
        offset: 0.0,
        covariance: [[0.0; 4]; 4],
        converged: true,
        chi2: 0.0,
        n_points: 8,
    };
    let tagged: Vec<_> = TABLE_CW
        .iter()
        .map(|&h| (Direction::Cw, fit(h)))
        .chain(TABLE_ACW.iter().map(|&h| (Direction::Acw, fit(h))))
        .collect();
    let direct = half_period_histogram(&TABLE_CW, &TABLE_ACW, 0, 0.05);
    let via_fits = aggregate_histogram(&tagged, 0.05);
    assert_eq!(direct.total.unwrap().n, via_fits.total.unwrap().n);
    assert!((direct.total.unwrap().mean - via_fits.total.unwrap().mean).abs() < 1e-12);
    assert!((direct.total.unwrap().median - via_fits.total.unwrap().median).abs() < 1e-12);
}
