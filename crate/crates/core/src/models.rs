//! Closed-form coincidence models.
//!
//! Three routes are provided: the symmetric-arm landscape, the general
//! expression with independent signal and idler loop delays, and the
//! finite biphoton-spread model built from the state probability `P_f` and
//! the coincidence probability `P_c`.
//!
//! Outputs of [`nc_symmetric`] and [`nc_asymmetric`] are in closed-form
//! units: the `√π/(8Δω)` prefactor is kept, and any conversion to a count
//! rate is left to the caller.

use std::f64::consts::PI;

use crate::error::ModelError;
use crate::physics::{ArmDelays, OpticalConfig};

/// `ln(1e-300)`; exponents below this are flushed to zero.
const EXP_FLOOR: f64 = -690.775_527_898_213_7;

pub(crate) fn guarded_exp(x: f64) -> f64 {
    if x < EXP_FLOOR {
        0.0
    } else {
        x.exp()
    }
}

/// `exp(-(Δω t)²)`
fn gauss(delta_omega: f64, t: f64) -> f64 {
    let x = delta_omega * t;
    guarded_exp(-x * x)
}

/// The `√π/(8Δω)` prefactor of the closed forms.
pub fn closed_form_prefactor(optics: &OpticalConfig) -> f64 {
    PI.sqrt() / (8.0 * optics.delta_omega)
}

/// Factor `4√π/Δω` that takes `P_f·P_c` (unit incoming pair rate) to
/// closed-form units.
pub fn finite_sigma_scale(optics: &OpticalConfig) -> f64 {
    4.0 * PI.sqrt() / optics.delta_omega
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricModelInput {
    /// HOM delay δt (s).
    pub delta_t_hom: f64,
    /// Loop delays shared by signal and idler.
    pub arm_delays: ArmDelays,
    pub optics: OpticalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymmetricModelInput {
    pub delta_t_hom: f64,
    pub t_icw: f64,
    pub t_iac: f64,
    pub t_scw: f64,
    pub t_sac: f64,
    pub optics: OpticalConfig,
}

impl AsymmetricModelInput {
    /// Both arms share the same loop delays.
    pub fn from_symmetric(input: &SymmetricModelInput) -> Self {
        Self {
            delta_t_hom: input.delta_t_hom,
            t_icw: input.arm_delays.t_cw,
            t_iac: input.arm_delays.t_ac,
            t_scw: input.arm_delays.t_cw,
            t_sac: input.arm_delays.t_ac,
            optics: input.optics,
        }
    }

    pub fn from_arms(delta_t_hom: f64, idler: ArmDelays, signal: ArmDelays, optics: OpticalConfig) -> Self {
        Self {
            delta_t_hom,
            t_icw: idler.t_cw,
            t_iac: idler.t_ac,
            t_scw: signal.t_cw,
            t_sac: signal.t_ac,
            optics,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOutput {
    /// Coincidence level (closed-form units).
    pub n_c: f64,
    /// Delay-independent background `C_b` in the same units; the large-δt
    /// limit of `n_c`.
    pub background: f64,
}

impl ModelOutput {
    /// Feature level relative to the background, `n_c/background - 1`.
    pub fn relative_to_background(&self) -> f64 {
        self.n_c / self.background - 1.0
    }
}

/// Background bracket `C_b(Δt)` (dimensionless, without the prefactor).
pub fn background_cb(arm_delays: &ArmDelays, optics: &OpticalConfig) -> f64 {
    let dt = arm_delays.delta_t;
    let x = optics.delta_omega * dt;
    4.0 - 8.0 * guarded_exp(-x * x / 4.0) * (optics.mu() * dt).cos()
        + 2.0 * (optics.omega_p() * dt).cos()
        + 2.0 * guarded_exp(-x * x)
}

pub fn nc_symmetric(input: &SymmetricModelInput) -> ModelOutput {
    let optics = &input.optics;
    let dw = optics.delta_omega;
    let dt = input.arm_delays.delta_t;
    let d = input.delta_t_hom;
    let cb = background_cb(&input.arm_delays, optics);
    let osc = (optics.mu() * dt).cos();
    let central = gauss(dw, d);

    let bracket = cb - gauss(dw, d + dt) - gauss(dw, d - dt)
        + 4.0 * osc * (gauss(dw, d + dt / 2.0) + gauss(dw, d - dt / 2.0))
        - 4.0 * central
        - 2.0 * (optics.omega_p() * dt).cos() * central;

    let pre = closed_form_prefactor(optics);
    ModelOutput {
        n_c: pre * bracket,
        background: pre * cb,
    }
}

/// General expression allowing signal and idler loops with different
/// propagation times.
pub fn nc_asymmetric(input: &AsymmetricModelInput) -> ModelOutput {
    let optics = &input.optics;
    let dw = optics.delta_omega;
    let mu = optics.mu();
    let d = input.delta_t_hom;
    let (icw, iac, scw, sac) = (input.t_icw, input.t_iac, input.t_scw, input.t_sac);
    // exp(-Δω²x²/4)
    let quarter = |x: f64| gauss(dw, x / 2.0);

    let idler = iac - icw;
    let signal = sac - scw;
    let background = 4.0 - 4.0 * quarter(idler) * (mu * idler).cos() - 4.0 * quarter(signal) * (mu * signal).cos()
        + 2.0 * quarter(idler - signal) * (mu * (idler + signal)).cos()
        + 2.0 * quarter(idler + signal) * (mu * (idler - signal)).cos();

    let cos_s = (mu * (scw - sac)).cos();
    let cos_i = (mu * (icw - iac)).cos();
    // pairwise idler-signal offsets, so δt is never added to an absolute time
    let a = icw - scw;
    let b = icw - sac;
    let c = iac - scw;
    let e = iac - sac;
    let features = -gauss(dw, d + a) - gauss(dw, d + b) - gauss(dw, d + c) - gauss(dw, d + e)
        + 2.0 * cos_s * (quarter(2.0 * d + a + b) + quarter(2.0 * d + c + e))
        + 2.0 * cos_i * (quarter(2.0 * d + a + c) + quarter(2.0 * d + b + e))
        - 4.0 * cos_s * cos_i * quarter(2.0 * d + a + e);

    let pre = closed_form_prefactor(optics);
    ModelOutput {
        n_c: pre * (background + features),
        background: pre * background,
    }
}

/// Exponents shared by `P_f`, `N_f`, `S` and the `I` terms.
struct SpreadExponents {
    /// `2Δω² + σ_p²`
    denom: f64,
    /// `Δω²(3Δω²+σ_p²)Δt² / (2(2Δω²+σ_p²))`
    a: f64,
    /// `2Δω⁴Δt² / (2Δω²+σ_p²)`
    b: f64,
    /// `Δω²Δt²`
    e: f64,
}

impl SpreadExponents {
    fn new(delta_t: f64, optics: &OpticalConfig) -> Result<Self, ModelError> {
        let s = optics.sigma_p;
        if !(s > 0.0) {
            return Err(ModelError::ZeroBiphotonSpread(s));
        }
        let dw2 = optics.delta_omega * optics.delta_omega;
        let dt2 = delta_t * delta_t;
        let denom = 2.0 * dw2 + s * s;
        Ok(Self {
            denom,
            a: dw2 * (3.0 * dw2 + s * s) * dt2 / (2.0 * denom),
            b: 2.0 * dw2 * dw2 * dt2 / denom,
            e: dw2 * dt2,
        })
    }
}

/// Normalization `N_i` of the initial biphoton spectrum.
pub fn initial_spectrum_normalization(optics: &OpticalConfig) -> f64 {
    let dw = optics.delta_omega;
    let s = optics.sigma_p;
    (2.0 * PI * dw / (1.0 / (dw * dw) + 2.0 / (s * s)).sqrt()).sqrt()
}

/// Normalization `N_f` of the final (post-Sagnac) biphoton spectrum.
pub fn final_spectrum_normalization(arm_delays: &ArmDelays, optics: &OpticalConfig) -> Result<f64, ModelError> {
    let dt = arm_delays.delta_t;
    let ex = SpreadExponents::new(dt, optics)?;
    let mu = optics.mu();
    let dw = optics.delta_omega;
    let bracket = guarded_exp(-ex.e) - 4.0 * (mu * dt).cos() * guarded_exp(ex.a - ex.e)
        + (2.0 * mu * dt).cos() * guarded_exp(ex.b - ex.e)
        + 2.0;
    Ok(PI * dw * dw * optics.sigma_p / ex.denom.sqrt() * bracket)
}

/// Probability `P_f` that the pair leaves both loops through the ports
/// facing the HOM beamsplitter.
pub fn finite_sigma_state_probability(arm_delays: &ArmDelays, optics: &OpticalConfig) -> Result<f64, ModelError> {
    let dt = arm_delays.delta_t;
    let ex = SpreadExponents::new(dt, optics)?;
    let mu = optics.mu();
    let bracket = 2.0 - 4.0 * (mu * dt).cos() * guarded_exp(ex.a - ex.e)
        + (2.0 * mu * dt).cos() * guarded_exp(ex.b - ex.e)
        + guarded_exp(-ex.e);
    Ok(bracket / 8.0)
}

/// Coincidence probability `P_c = ½(1 − (I₁+I₂+I₃+I₄)/S)`.
///
/// Every term of the ratio is evaluated with an extra `exp(−Δω²Δt²)`
/// folded into its exponent so that large delays do not overflow.
pub fn finite_sigma_coincidence_probability(
    delta_t_hom: f64,
    arm_delays: &ArmDelays,
    optics: &OpticalConfig,
) -> Result<f64, ModelError> {
    let dt = arm_delays.delta_t;
    let d = delta_t_hom;
    let ex = SpreadExponents::new(dt, optics)?;
    let mu = optics.mu();
    let dw2 = optics.delta_omega * optics.delta_omega;
    let s2 = optics.sigma_p * optics.sigma_p;
    let e = ex.e;
    let cos1 = (mu * dt).cos();
    let cos2 = (2.0 * mu * dt).cos();

    let i1 = 4.0 * guarded_exp(-dw2 * (d + dt) * (d - dt) - e)
        + guarded_exp(-d * dw2 * (d + 2.0 * dt) - e)
        + guarded_exp(-d * dw2 * (d - 2.0 * dt) - e);
    let i2 = -4.0
        * cos1
        * guarded_exp(
            (dw2 * s2 * (-2.0 * d * d - 2.0 * d * dt + dt * dt) + dw2 * dw2 * (-2.0 * d - 3.0 * dt) * (2.0 * d - dt))
                / (2.0 * ex.denom)
                - e,
        );
    let i3 = -4.0
        * cos1
        * guarded_exp(
            (dw2 * s2 * (-2.0 * d * d + dt * (dt + 2.0 * d)) + dw2 * dw2 * (-2.0 * d - dt) * (2.0 * d - 3.0 * dt))
                / (2.0 * ex.denom)
                - e,
        );
    let i4 = 2.0 * cos2 * guarded_exp(ex.b - d * d * dw2 - e);

    let s_terms = [
        2.0 * guarded_exp(-e),
        -8.0 * cos1 * guarded_exp(ex.a - e),
        2.0 * cos2 * guarded_exp(ex.b - e),
        4.0,
    ];
    let s: f64 = s_terms.iter().sum();
    let scale: f64 = s_terms.iter().map(|t| t.abs()).sum();
    if !(s > 64.0 * f64::EPSILON * scale) {
        return Err(ModelError::DegenerateNormalization { delta_t: dt });
    }
    Ok(0.5 * (1.0 - (i1 + i2 + i3 + i4) / s))
}

/// Coincidences per unit incoming pair rate, `P_f · P_c`.
pub fn finite_sigma_counts(
    delta_t_hom: f64,
    arm_delays: &ArmDelays,
    optics: &OpticalConfig,
) -> Result<f64, ModelError> {
    let pf = finite_sigma_state_probability(arm_delays, optics)?;
    if pf == 0.0 {
        return Ok(0.0);
    }
    Ok(pf * finite_sigma_coincidence_probability(delta_t_hom, arm_delays, optics)?)
}

/// Height of the oscillating feature at `δt = ±Δt/2` above the background,
/// divided by the background, for the symmetric model.
pub fn oscillating_feature_contrast(arm_delays: &ArmDelays, optics: &OpticalConfig) -> f64 {
    nc_symmetric(&SymmetricModelInput {
        delta_t_hom: arm_delays.delta_t / 2.0,
        arm_delays: *arm_delays,
        optics: *optics,
    })
    .relative_to_background()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{propagation_times, RotationState, SagnacArm};
    use proptest::prelude::*;

    fn paper_delays() -> ArmDelays {
        propagation_times(&SagnacArm::default(), &RotationState::at_rest())
    }

    fn sym(d: f64, delays: ArmDelays, optics: OpticalConfig) -> ModelOutput {
        nc_symmetric(&SymmetricModelInput {
            delta_t_hom: d,
            arm_delays: delays,
            optics,
        })
    }

    /// Smallest change to Δt that puts cos(μΔt) at `target` (±1).
    fn delays_with_cos(target: f64) -> ArmDelays {
        let optics = OpticalConfig::default();
        let phase = if target > 0.0 { 0.0 } else { PI };
        let arm = SagnacArm::default().tuned_to_phase(&optics, phase);
        propagation_times(&arm, &RotationState::at_rest())
    }

    #[test]
    fn background_examples() {
        let optics = OpticalConfig::default();
        assert_eq!(background_cb(&ArmDelays::from_difference(0.0), &optics), 0.0);

        let delays = delays_with_cos(1.0);
        assert!((background_cb(&delays, &optics) - 6.0).abs() < 1e-9);

        let a = background_cb(&ArmDelays::from_difference(1.0e-12), &optics);
        let b = background_cb(&ArmDelays::from_difference(-1.0e-12), &optics);
        assert!((a - b).abs() <= 1e-15 * a.abs());
    }

    #[test]
    fn dark_sagnac_gives_zero_everywhere() {
        let optics = OpticalConfig::default();
        for d in [-3e-12, -1e-13, 0.0, 2e-14, 1e-12] {
            let out = sym(d, ArmDelays::from_difference(0.0), optics);
            assert!(
                out.n_c.abs() < 1e-14 * closed_form_prefactor(&optics),
                "δt={d}: {}",
                out.n_c
            );
            assert_eq!(out.background, 0.0);
        }
    }

    #[test]
    fn central_dip_has_full_visibility() {
        let out = sym(0.0, paper_delays(), OpticalConfig::default());
        assert!(out.n_c / out.background < 1e-10);
    }

    #[test]
    fn oscillating_feature_limits() {
        let optics = OpticalConfig::default();
        let peak = delays_with_cos(1.0);
        let out = sym(peak.delta_t / 2.0, peak, optics);
        assert!((out.n_c / out.background - 10.0 / 6.0).abs() < 1e-9);

        let dip = delays_with_cos(-1.0);
        let out = sym(dip.delta_t / 2.0, dip, optics);
        assert!((out.n_c / out.background - 2.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn oscillating_feature_amplitude() {
        let optics = OpticalConfig::default();
        let delays = paper_delays();
        let pre = closed_form_prefactor(&optics);
        let out = sym(delays.delta_t / 2.0, delays, optics);
        let expected = pre * 4.0 * (optics.mu() * delays.delta_t).cos();
        let x = optics.delta_omega * delays.delta_t / 2.0;
        assert!((out.n_c - out.background - expected).abs() <= (-x * x).exp() * pre * 10.0 + 1e-15 * pre);
    }

    #[test]
    fn asymptote_matches_background() {
        let optics = OpticalConfig::default();
        let delays = paper_delays();
        let edge = delays.delta_t + 12.0 / optics.delta_omega;
        for d in [edge, -edge, 2.0 * edge, -5.0 * edge] {
            let out = sym(d, delays, optics);
            assert!((out.n_c - out.background).abs() < 1e-10 * out.background);
        }
    }

    #[test]
    fn asymmetric_with_equal_times_is_dark() {
        let optics = OpticalConfig::default();
        let t = 4.8e-9;
        for d in [0.0, 1e-13, -2e-12] {
            let out = nc_asymmetric(&AsymmetricModelInput {
                delta_t_hom: d,
                t_icw: t,
                t_iac: t,
                t_scw: t,
                t_sac: t,
                optics,
            });
            assert!(out.n_c.abs() < 1e-14 * closed_form_prefactor(&optics));
        }
    }

    #[test]
    fn state_probability_examples() {
        let optics = OpticalConfig::default();
        assert_eq!(
            finite_sigma_state_probability(&ArmDelays::from_difference(0.0), &optics).unwrap(),
            0.0
        );

        let wide = optics.with_sigma_p(1e20);
        let pf = finite_sigma_state_probability(&paper_delays(), &wide).unwrap();
        assert!((pf - 0.25).abs() < 1e-12, "{pf}");

        let err = finite_sigma_state_probability(&paper_delays(), &optics.with_sigma_p(0.0)).unwrap_err();
        assert_eq!(err, ModelError::ZeroBiphotonSpread(0.0));
    }

    #[test]
    fn coincidence_probability_examples() {
        let optics = OpticalConfig::default();
        let delays = paper_delays();
        let pc = finite_sigma_coincidence_probability(1e-9, &delays, &optics).unwrap();
        assert!((pc - 0.5).abs() < 1e-15);
        let err = finite_sigma_coincidence_probability(0.0, &ArmDelays::from_difference(0.0), &optics).unwrap_err();
        assert!(matches!(err, ModelError::DegenerateNormalization { .. }));
        assert_eq!(
            finite_sigma_counts(1e-13, &ArmDelays::from_difference(0.0), &optics).unwrap(),
            0.0
        );
    }

    #[test]
    fn final_normalization_is_four_initial_squared_times_pf() {
        let optics = OpticalConfig::default();
        for sigma in [1e9, 2.0 * PI * 2e10, 0.5 * optics.delta_omega] {
            let o = optics.with_sigma_p(sigma);
            let delays = paper_delays();
            let nf = final_spectrum_normalization(&delays, &o).unwrap();
            let ni = initial_spectrum_normalization(&o);
            let pf = finite_sigma_state_probability(&delays, &o).unwrap();
            assert!((nf / (4.0 * ni * ni * pf) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sigma_to_zero_recovers_closed_form() {
        let optics = OpticalConfig::default().with_sigma_p(1e3);
        let delays = paper_delays();
        let scale = finite_sigma_scale(&optics);
        for k in 0..=60 {
            let d = -1.5 * delays.delta_t + 3.0 * delays.delta_t * k as f64 / 60.0;
            let a = finite_sigma_counts(d, &delays, &optics).unwrap() * scale;
            let b = sym(d, delays, optics);
            assert!((a - b.n_c).abs() <= 1e-6 * b.background, "δt={d}");
        }
    }

    #[test]
    fn visibility_falls_with_biphoton_spread() {
        let base = OpticalConfig::default();
        let delays = paper_delays();
        let mut last = f64::INFINITY;
        for frac in [0.01, 0.1, 0.5, 1.0] {
            let optics = base.with_sigma_p(frac * base.delta_omega);
            let at = finite_sigma_counts(delays.delta_t / 2.0, &delays, &optics).unwrap();
            let far = finite_sigma_counts(10.0 * delays.delta_t, &delays, &optics).unwrap();
            let vis = ((at - far) / far).abs();
            assert!(vis < last, "σ_p = {frac}Δω: {vis} !< {last}");
            last = vis;
        }
    }

    #[test]
    fn guarded_exp_clamps() {
        assert_eq!(guarded_exp(-700.0), 0.0);
        assert!(guarded_exp(-690.0) > 0.0);
        assert_eq!(guarded_exp(0.0), 1.0);
    }

    fn optics_strategy() -> impl Strategy<Value = OpticalConfig> {
        (300e-9f64..900e-9, 1e12f64..5e13, 0.001f64..2.0).prop_map(|(l, dw, frac)| OpticalConfig {
            lambda_p: l,
            delta_omega: dw,
            sigma_p: frac * dw,
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn probabilities_are_bounded(
            optics in optics_strategy(),
            dt in 1e-14f64..5e-12,
            d_frac in -2.0f64..2.0,
        ) {
            let delays = ArmDelays::from_difference(dt);
            let pf = finite_sigma_state_probability(&delays, &optics).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&pf), "P_f = {pf}");
            let pc = finite_sigma_coincidence_probability(d_frac * dt, &delays, &optics).unwrap();
            prop_assert!((-1e-9..=1.0 + 1e-9).contains(&pc), "P_c = {pc}");
        }
    }

    proptest! {
        #[test]
        fn symmetric_parity(d in -4e-12f64..4e-12, dt in 1e-13f64..4e-12) {
            let optics = OpticalConfig::default();
            let base = sym(d, ArmDelays::from_difference(dt), optics);
            let flip_d = sym(-d, ArmDelays::from_difference(dt), optics);
            let flip_dt = sym(d, ArmDelays::from_difference(-dt), optics);
            let scale = base.background.abs().max(base.n_c.abs());
            prop_assert!((base.n_c - flip_d.n_c).abs() <= 1e-12 * scale);
            prop_assert!((base.n_c - flip_dt.n_c).abs() <= 1e-12 * scale);
        }

        #[test]
        fn asymmetric_reduces_to_symmetric(
            d in -4e-12f64..4e-12,
            dn in 1e-5f64..1.2e-3,
            hz in -1.0f64..1.0,
        ) {
            let optics = OpticalConfig::default();
            let arm = SagnacArm { n_cw: 1.45 + dn, ..SagnacArm::default() };
            let delays = propagation_times(&arm, &RotationState::from_hz(hz));
            let input = SymmetricModelInput { delta_t_hom: d, arm_delays: delays, optics };
            let a = nc_symmetric(&input);
            let b = nc_asymmetric(&AsymmetricModelInput::from_symmetric(&input));
            // phases of ~10⁴ rad carry ~1e-12 absolute rounding
            prop_assert!((a.n_c - b.n_c).abs() <= 1e-9 * a.background);
            prop_assert!((a.background - b.background).abs() <= 1e-9 * a.background);
        }

        #[test]
        fn symmetric_is_nonnegative(d in -4e-12f64..4e-12, dt in -4e-12f64..4e-12) {
            let optics = OpticalConfig::default();
            let out = sym(d, ArmDelays::from_difference(dt), optics);
            prop_assert!(out.n_c >= -1e-12 * out.background.abs().max(closed_form_prefactor(&optics)));
        }
    }
}
