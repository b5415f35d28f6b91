//! Closed forms against the quadrature oracle, and model invariants, for
//! one configuration.

use std::fmt;

use rotohom_core::io::RunConfig;
use rotohom_core::models::{final_spectrum_normalization, finite_sigma_scale};
use rotohom_core::oracle::{
    final_state_norm_quadrature, nc_quadrature, pc_overlap_quadrature, spectrum_normalization,
    state_probability_quadrature, QuadratureSpec,
};
use rotohom_core::{
    finite_sigma_coincidence_probability, finite_sigma_counts, finite_sigma_state_probability, nc_asymmetric,
    nc_symmetric, propagation_times, ArmDelays, AsymmetricModelInput, OpticalConfig, RotationState, SagnacArm,
    SymmetricModelInput,
};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: Option<String>,
}

impl Check {
    fn measured(name: &'static str, errors: impl IntoIterator<Item = f64>, tolerance: f64) -> Self {
        let max_error = errors
            .into_iter()
            .fold(0.0, |m: f64, e| if e.is_nan() { f64::NAN } else { m.max(e) });
        Self {
            name,
            max_error,
            tolerance,
            passed: max_error <= tolerance,
            detail: None,
        }
    }

    fn failed(name: &'static str, tolerance: f64, detail: String) -> Self {
        Self {
            name,
            max_error: f64::NAN,
            tolerance,
            passed: false,
            detail: Some(detail),
        }
    }

    /// Folds a fallible computation of error values into a check.
    fn from_result<E: fmt::Display>(name: &'static str, tolerance: f64, r: Result<Vec<f64>, E>) -> Self {
        match r {
            Ok(errs) => Self::measured(name, errs, tolerance),
            Err(e) => Self::failed(name, tolerance, e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Largest error among the closed-form against quadrature comparisons.
    pub fn max_closed_form_error(&self) -> f64 {
        self.checks
            .iter()
            .filter(|c| c.name.starts_with("closed form"))
            .map(|c| c.max_error)
            .fold(0.0, f64::max)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<46} {:>12} {:>10}  result", "check", "max error", "tolerance")?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<46} {:>12.3e} {:>10.0e}  {}",
                c.name,
                c.max_error,
                c.tolerance,
                if c.passed { "PASS" } else { "FAIL" }
            )?;
            if let Some(d) = &c.detail {
                writeln!(f, "    {d}")?;
            }
        }
        for n in &self.notes {
            writeln!(f, "note: {n}")?;
        }
        writeln!(f, "max closed-form error: {:.3e}", self.max_closed_form_error())?;
        writeln!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

/// Deterministic, evenly spread points in `[0, 1)` (additive recurrence on
/// the golden ratio).
fn spread(i: usize, k: usize) -> f64 {
    const ALPHA: [f64; 3] = [0.618_033_988_749_895, 0.754_877_666_246_693, 0.569_840_290_998_053];
    (0.5 + ALPHA[k % 3] * (i + 1) as f64).fract()
}

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn relative(closed: f64, background: f64, other: f64) -> f64 {
    (closed - other).abs() / background.abs().max(closed.abs())
}

pub fn run_validation(cfg: &RunConfig) -> Report {
    let optics = cfg.optics;
    let arm = cfg.arm;
    let rest = propagation_times(&arm, &RotationState::at_rest());
    let span = rest.delta_t.abs().max(4.0 / optics.delta_omega);
    let delays = grid(-1.5 * span, 1.5 * span, 25);
    let rotations = grid(cfg.landscape.rotation_min_hz, cfg.landscape.rotation_max_hz, 5);
    let line = QuadratureSpec::default();
    let joint = QuadratureSpec::joint_default();
    let mut report = Report::default();

    report.checks.push(Check::from_result(
        "closed form vs quadrature (symmetric)",
        1e-6,
        symmetric_errors(&optics, &arm, &delays, &rotations, &line),
    ));
    let signal_arm = SagnacArm {
        loop_radius: arm.loop_radius * 1.05,
        n_cw: arm.n_cw + 2e-5,
        ..arm
    };
    report.checks.push(Check::from_result(
        "closed form vs quadrature (asymmetric)",
        1e-6,
        asymmetric_errors(&optics, &arm, &signal_arm, &delays, &rotations, &line),
    ));
    report.checks.push(Check::from_result(
        "joint spectrum normalization",
        1e-6,
        spectrum_normalization(&optics, &joint).map(|n| vec![(n - 1.0).abs()]),
    ));
    let splits = [rest.delta_t, 0.25 * rest.delta_t];
    report.checks.push(Check::from_result(
        "state probability vs quadrature",
        1e-6,
        splits
            .iter()
            .map(|&dt| {
                let d = ArmDelays::from_difference(dt);
                let closed = finite_sigma_state_probability(&d, &optics).map_err(|e| e.to_string())?;
                let numeric = state_probability_quadrature(&d, &optics, &joint).map_err(|e| e.to_string())?;
                Ok((closed - numeric).abs())
            })
            .collect::<Result<Vec<_>, String>>(),
    ));
    report.checks.push(Check::from_result(
        "final state normalization",
        1e-6,
        splits
            .iter()
            .map(|&dt| {
                let d = ArmDelays::from_difference(dt);
                final_spectrum_normalization(&d, &optics).map_err(|e| e.to_string())?;
                let n = final_state_norm_quadrature(&d, &optics, &joint).map_err(|e| e.to_string())?;
                Ok((n - 1.0).abs())
            })
            .collect::<Result<Vec<_>, String>>(),
    ));
    report.checks.push(Check::from_result(
        "coincidence probability vs overlap quadrature",
        1e-5,
        grid(-1.5 * rest.delta_t, 1.5 * rest.delta_t, 7)
            .iter()
            .map(|&d| {
                let closed = finite_sigma_coincidence_probability(d, &rest, &optics).map_err(|e| e.to_string())?;
                let numeric = pc_overlap_quadrature(d, &rest, &optics, &joint).map_err(|e| e.to_string())?;
                Ok((closed - numeric).abs())
            })
            .collect::<Result<Vec<_>, String>>(),
    ));
    report.checks.push(Check::from_result(
        "probabilities within [0, 1]",
        1e-9,
        bound_violations(&optics),
    ));
    report.checks.push(Check::measured(
        "parity in delay",
        delays.iter().map(|&d| {
            let a = sym(d, rest, optics);
            let b = sym(-d, rest, optics);
            (a.n_c - b.n_c).abs() / a.background
        }),
        1e-12,
    ));

    let dark: Vec<ArmDelays> = rotations
        .iter()
        .map(|&hz| propagation_times(&arm, &RotationState::from_hz(hz)))
        .filter(|d| optics.delta_omega * d.delta_t.abs() > 20.0)
        .collect();
    if dark.is_empty() {
        report
            .notes
            .push("Δω·Δt <= 20 at every tested rotation; central-dip darkness not checked".into());
    } else {
        report.checks.push(Check::measured(
            "central dip darkness (nc(0)/background)",
            dark.iter().map(|&d| {
                let out = sym(0.0, d, optics);
                out.n_c.abs() / out.background
            }),
            1e-8,
        ));
        let count = feature_count(&optics, rest);
        report.checks.push(Check {
            detail: (count != 5).then(|| format!("found {count} extrema")),
            ..Check::measured("five features at rest", [(count as f64 - 5.0).abs()], 0.0)
        });
    }

    match visibility_loss(&optics, rest) {
        Ok(loss) => {
            let ratio = optics.sigma_p / optics.delta_omega;
            if loss > 0.05 {
                report.notes.push(format!(
                    "σ_p = {ratio:.3}·Δω: the finite biphoton bandwidth reduces visibility; the finite-σ_p \
                     landscape departs from the σ_p → 0 closed form by up to {loss:.3} of the background"
                ));
            } else {
                report.notes.push(format!(
                    "σ_p = {ratio:.2e}·Δω: finite-σ_p landscape within {loss:.2e} of the σ_p → 0 closed form"
                ));
            }
        }
        Err(e) => report.notes.push(format!("finite-σ_p landscape not evaluated: {e}")),
    }
    report
}

fn sym(d: f64, arm_delays: ArmDelays, optics: OpticalConfig) -> rotohom_core::ModelOutput {
    nc_symmetric(&SymmetricModelInput {
        delta_t_hom: d,
        arm_delays,
        optics,
    })
}

fn symmetric_errors(
    optics: &OpticalConfig,
    arm: &SagnacArm,
    delays: &[f64],
    rotations: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<f64>, rotohom_core::QuadratureError> {
    let mut errs = Vec::new();
    for &hz in rotations {
        let arm_delays = propagation_times(arm, &RotationState::from_hz(hz));
        for &d in delays {
            let input = SymmetricModelInput {
                delta_t_hom: d,
                arm_delays,
                optics: *optics,
            };
            let closed = nc_symmetric(&input);
            let q = nc_quadrature(&AsymmetricModelInput::from_symmetric(&input), quad)?;
            errs.push(relative(closed.n_c, closed.background, q));
        }
    }
    Ok(errs)
}

fn asymmetric_errors(
    optics: &OpticalConfig,
    idler_arm: &SagnacArm,
    signal_arm: &SagnacArm,
    delays: &[f64],
    rotations: &[f64],
    quad: &QuadratureSpec,
) -> Result<Vec<f64>, rotohom_core::QuadratureError> {
    let mut errs = Vec::new();
    for &hz in rotations {
        let rot = RotationState::from_hz(hz);
        let idler = propagation_times(idler_arm, &rot);
        let signal = propagation_times(signal_arm, &rot);
        for &d in delays {
            let input = AsymmetricModelInput::from_arms(d, idler, signal, *optics);
            let closed = nc_asymmetric(&input);
            let q = nc_quadrature(&input, quad)?;
            errs.push(relative(closed.n_c, closed.background, q));
        }
    }
    Ok(errs)
}

/// Largest excursion of P_f and P_c outside `[0, 1]` over 1000 parameter
/// draws around `optics`.
fn bound_violations(optics: &OpticalConfig) -> Result<Vec<f64>, rotohom_core::ModelError> {
    let outside = |p: f64| (-p).max(p - 1.0).max(0.0);
    (0..1000)
        .map(|i| {
            let o = OpticalConfig {
                sigma_p: optics.delta_omega * 10f64.powf(-3.0 + 3.3 * spread(i, 0)),
                ..*optics
            };
            let dt = 1e-14 + 5e-12 * spread(i, 1);
            let d = ArmDelays::from_difference(dt);
            let pf = finite_sigma_state_probability(&d, &o)?;
            let pc = finite_sigma_coincidence_probability((4.0 * spread(i, 2) - 2.0) * dt, &d, &o)?;
            Ok(outside(pf).max(outside(pc)))
        })
        .collect()
}

fn feature_count(optics: &OpticalConfig, rest: ArmDelays) -> usize {
    let reach = 1.5 * rest.delta_t.abs() + 6.0 / optics.delta_omega;
    let step = 0.05 / optics.delta_omega;
    let n = (reach / step).ceil() as i64;
    let out: Vec<_> = (-n..=n).map(|k| sym(k as f64 * step, rest, *optics)).collect();
    let bg = out[0].background;
    (1..out.len() - 1)
        .filter(|&i| (out[i].n_c - bg).abs() > 1e-6 * bg)
        .filter(|&i| (out[i].n_c - out[i - 1].n_c) * (out[i + 1].n_c - out[i].n_c) < 0.0)
        .count()
}

/// Largest departure of the finite-σ_p landscape from the closed form,
/// relative to the background, over the features at rest.
fn visibility_loss(optics: &OpticalConfig, rest: ArmDelays) -> Result<f64, rotohom_core::ModelError> {
    let scale = finite_sigma_scale(optics);
    let mut worst: f64 = 0.0;
    for d in [0.0, 0.5 * rest.delta_t, rest.delta_t] {
        let closed = sym(d, rest, *optics);
        let finite = finite_sigma_counts(d, &rest, optics)? * scale;
        worst = worst.max((finite - closed.n_c).abs() / closed.background);
    }
    Ok(worst)
}
