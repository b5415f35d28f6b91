//! Brute-force spectral quadrature.
//!
//! These routines integrate the frequency-domain expressions directly and
//! share no algebra with [`crate::models`]; agreement between the two is
//! the main correctness check on the closed forms.
//!
//! All integrands are written in frequencies measured from the mean photon
//! frequency μ, so optical carriers (~10¹⁵ rad/s) never enter a sum.
//! Sums use Neumaier compensation over fixed-size blocks, so the result does
//! not depend on how the blocks are scheduled across threads.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, QuadratureError};
use crate::models::{final_spectrum_normalization, initial_spectrum_normalization, AsymmetricModelInput};
use crate::physics::{ArmDelays, OpticalConfig};

/// Largest change (relative to the integrand scale) tolerated when the node
/// count is doubled.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;
/// Largest imaginary part (relative to the integrand scale) tolerated for
/// integrals that are real by construction.
pub const IMAGINARY_TOLERANCE: f64 = 1e-10;

const BLOCK: usize = 256;
const MAX_GAUSS_HERMITE_POINTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureScheme {
    Trapezoid,
    GaussHermite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSpec {
    /// Node count (per axis for two-dimensional integrals).
    pub num_points: usize,
    /// Integration half-width in units of the integrand's Gaussian width.
    pub half_width_sigmas: f64,
    pub scheme: QuadratureScheme,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            num_points: 4096,
            half_width_sigmas: 12.0,
            scheme: QuadratureScheme::Trapezoid,
        }
    }
}

impl QuadratureSpec {
    /// Default for the two-dimensional joint-spectrum integrals; each
    /// evaluation costs `num_points²` integrand calls.
    pub fn joint_default() -> Self {
        Self {
            num_points: 1024,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), QuadratureError> {
        if self.num_points < 64 {
            return Err(QuadratureError::InvalidSpec(format!(
                "num_points must be >= 64 (got {})",
                self.num_points
            )));
        }
        match self.scheme {
            QuadratureScheme::Trapezoid if !(self.half_width_sigmas >= 8.0) => {
                Err(QuadratureError::InvalidSpec(format!(
                    "half_width_sigmas must be >= 8 for the trapezoid rule (got {})",
                    self.half_width_sigmas
                )))
            }
            QuadratureScheme::GaussHermite if self.num_points > MAX_GAUSS_HERMITE_POINTS => {
                Err(QuadratureError::InvalidSpec(format!(
                    "Gauss-Hermite supports at most {MAX_GAUSS_HERMITE_POINTS} nodes (got {})",
                    self.num_points
                )))
            }
            _ => Ok(()),
        }
    }

    fn doubled(&self) -> Self {
        Self {
            num_points: 2 * self.num_points,
            ..*self
        }
    }
}

/// A converged quadrature value with its diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureEstimate {
    pub value: Complex64,
    /// Integral of the integrand's modulus; the yardstick for relative
    /// tolerances.
    pub scale: f64,
    /// Change between the base and doubled node counts, relative to `scale`.
    pub relative_change: f64,
}

impl QuadratureEstimate {
    fn real_part(&self) -> Result<f64, QuadratureError> {
        if self.scale == 0.0 {
            return Ok(0.0);
        }
        let relative = self.value.im.abs() / self.scale;
        if relative > IMAGINARY_TOLERANCE {
            return Err(QuadratureError::ImaginaryResidual { relative });
        }
        Ok(self.value.re)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated accumulator for a complex value and the running modulus.
#[derive(Debug, Clone, Copy, Default)]
struct Accumulator {
    re: Neumaier,
    im: Neumaier,
    abs: Neumaier,
}

impl Accumulator {
    fn add(&mut self, w: f64, z: Complex64, modulus: f64) {
        self.re.add(w * z.re);
        self.im.add(w * z.im);
        self.abs.add(w * modulus);
    }

    fn merge(&mut self, other: &Accumulator) {
        self.re.add(other.re.total());
        self.im.add(other.im.total());
        self.abs.add(other.abs.total());
    }

    fn value(&self) -> (Complex64, f64) {
        (Complex64::new(self.re.total(), self.im.total()), self.abs.total())
    }
}

/// Nodes and weights for `∫ f(y) e^{-y²} dy` (Golub-Welsch).
fn gauss_hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// One-dimensional integral of `g(x)` over the real line, where `g`
/// returns `(value, modulus)` and carries a Gaussian factor of width
/// `width` (`∝ exp(-x²/width²)`).
///
/// For Gauss-Hermite the caller supplies `g` with that factor removed
/// through `strip`.
fn integrate_line<G>(quad: &QuadratureSpec, width: f64, g: G) -> Accumulator
where
    G: Fn(f64, bool) -> (Complex64, f64) + Sync,
{
    match quad.scheme {
        QuadratureScheme::Trapezoid => {
            let n = quad.num_points;
            let half = quad.half_width_sigmas * width;
            let h = 2.0 * half / (n - 1) as f64;
            let blocks: Vec<Accumulator> = (0..n.div_ceil(BLOCK))
                .into_par_iter()
                .map(|b| {
                    let mut acc = Accumulator::default();
                    for k in b * BLOCK..((b + 1) * BLOCK).min(n) {
                        let x = -half + k as f64 * h;
                        let w = if k == 0 || k == n - 1 { 0.5 * h } else { h };
                        let (z, m) = g(x, false);
                        acc.add(w, z, m);
                    }
                    acc
                })
                .collect();
            let mut total = Accumulator::default();
            for b in &blocks {
                total.merge(b);
            }
            total
        }
        QuadratureScheme::GaussHermite => {
            let (nodes, weights) = gauss_hermite_rule(quad.num_points);
            let mut acc = Accumulator::default();
            for (y, w) in nodes.iter().zip(&weights) {
                let (z, m) = g(y * width, true);
                acc.add(w * width, z, m);
            }
            acc
        }
    }
}

fn converge<F>(quad: &QuadratureSpec, run: F) -> Result<QuadratureEstimate, QuadratureError>
where
    F: Fn(&QuadratureSpec) -> Accumulator,
{
    quad.validate()?;
    let (coarse, _) = run(quad).value();
    let (fine, scale) = run(&quad.doubled()).value();
    let relative_change = if scale > 0.0 {
        (fine - coarse).norm() / scale
    } else {
        0.0
    };
    if !(relative_change <= CONVERGENCE_TOLERANCE) {
        return Err(QuadratureError::NonConvergence { relative_change });
    }
    Ok(QuadratureEstimate {
        value: fine,
        scale,
        relative_change,
    })
}

/// Coincidence level of the general (asymmetric) interferometer by direct
/// integration over the idler detuning, in closed-form units.
pub fn nc_quadrature(input: &AsymmetricModelInput, quad: &QuadratureSpec) -> Result<f64, QuadratureError> {
    nc_quadrature_estimate(input, quad)?.real_part()
}

pub fn nc_quadrature_estimate(
    input: &AsymmetricModelInput,
    quad: &QuadratureSpec,
) -> Result<QuadratureEstimate, QuadratureError> {
    let optics = &input.optics;
    let dw = optics.delta_omega;
    let mu = optics.mu();
    // A delay common to all four paths is unobservable; removing it keeps
    // the phases small.
    let reference = 0.25 * (input.t_icw + input.t_iac + input.t_scw + input.t_sac);
    let icw = input.t_icw - reference;
    let iac = input.t_iac - reference;
    let scw = input.t_scw - reference;
    let sac = input.t_sac - reference;
    let d = input.delta_t_hom;
    let idler_split = icw - iac;
    let signal_split = scw - sac;
    let cos_i = (mu * idler_split).cos();
    let cos_s = (mu * signal_split).cos();
    let norm = 1.0 / (2.0 * PI * dw * dw);

    let integrand = move |x: f64, stripped: bool| {
        let weight = if stripped {
            norm
        } else {
            norm * (-(x / dw) * (x / dw)).exp()
        };
        let background = 4.0
            * (1.0 - (mu * idler_split + x * idler_split).cos())
            * (1.0 - (mu * signal_split - x * signal_split).cos());
        let phase = |t: f64| Complex64::from_polar(1.0, t);
        let idler = phase(-2.0 * x * icw) + phase(-2.0 * x * iac) - 2.0 * cos_i * phase(-x * (icw + iac));
        let signal = phase(2.0 * x * scw) + phase(2.0 * x * sac) - 2.0 * cos_s * phase(x * (scw + sac));
        let exchange = phase(-2.0 * x * d) * idler * signal;
        let value = Complex64::new(background, 0.0) - exchange;
        (value * weight, weight * (background.abs() + exchange.norm()))
    };

    let width = dw;
    let est = converge(quad, |q| integrate_line(q, width, integrand))?;
    let factor = 4.0 * PI / 16.0;
    Ok(QuadratureEstimate {
        value: est.value * factor,
        scale: est.scale * factor,
        relative_change: est.relative_change,
    })
}

/// Two-dimensional integral over the joint spectrum. `f` receives the two
/// photon detunings from μ and returns the complex integrand.
///
/// The grid is laid out in sum and difference coordinates
/// (`s = x₁+x₂`, `d = x₁−x₂`), matched to the anticorrelated ridge of the
/// biphoton spectrum; the sum axis spans `±H·min(√2Δω, σ_p)` and the
/// difference axis `±H·√2Δω`. Only the trapezoid scheme is supported.
pub fn integrate_joint_spectrum<F>(
    optics: &OpticalConfig,
    quad: &QuadratureSpec,
    f: F,
) -> Result<QuadratureEstimate, QuadratureError>
where
    F: Fn(f64, f64) -> Complex64 + Sync,
{
    if quad.scheme != QuadratureScheme::Trapezoid {
        return Err(QuadratureError::InvalidSpec(
            "two-dimensional integrals support the trapezoid scheme only".into(),
        ));
    }
    if !(optics.sigma_p > 0.0) {
        return Err(ModelError::ZeroBiphotonSpread(optics.sigma_p).into());
    }
    let diff_width = SQRT_2 * optics.delta_omega;
    let sum_width = diff_width.min(optics.sigma_p);

    converge(quad, |q| {
        let n = q.num_points;
        let s_half = q.half_width_sigmas * sum_width;
        let d_half = q.half_width_sigmas * diff_width;
        let hs = 2.0 * s_half / (n - 1) as f64;
        let hd = 2.0 * d_half / (n - 1) as f64;
        let end_weight = |k: usize, h: f64| if k == 0 || k == n - 1 { 0.5 * h } else { h };
        let rows: Vec<Accumulator> = (0..n)
            .into_par_iter()
            .map(|i| {
                let s = -s_half + i as f64 * hs;
                let ws = end_weight(i, hs);
                let mut acc = Accumulator::default();
                for j in 0..n {
                    let d = -d_half + j as f64 * hd;
                    // dω₁ dω₂ = ½ ds dd
                    let w = 0.5 * ws * end_weight(j, hd);
                    let z = f(0.5 * (s + d), 0.5 * (s - d));
                    acc.add(w, z, z.norm());
                }
                acc
            })
            .collect();
        let mut total = Accumulator::default();
        for r in &rows {
            total.merge(r);
        }
        total
    })
}

/// Unnormalized initial biphoton amplitude at detunings `x1`, `x2` from μ.
fn initial_amplitude(optics: &OpticalConfig, x1: f64, x2: f64) -> f64 {
    let dw2 = optics.delta_omega * optics.delta_omega;
    let s2 = optics.sigma_p * optics.sigma_p;
    let sum = x1 + x2;
    let exponent = -(x1 * x1) / (4.0 * dw2) - (x2 * x2) / (4.0 * dw2) - sum * sum / (4.0 * s2);
    exponent.exp()
}

/// Normalized initial biphoton amplitude `ψ_i`.
pub fn initial_spectrum(optics: &OpticalConfig, x1: f64, x2: f64) -> f64 {
    initial_amplitude(optics, x1, x2) / initial_spectrum_normalization(optics)
}

/// `∫∫ |ψ_i|²`, which should be one.
pub fn spectrum_normalization(optics: &OpticalConfig, quad: &QuadratureSpec) -> Result<f64, QuadratureError> {
    let ni = initial_spectrum_normalization(optics);
    integrate_joint_spectrum(optics, quad, |x1, x2| {
        let a = initial_amplitude(optics, x1, x2) / ni;
        Complex64::new(a * a, 0.0)
    })?
    .real_part()
}

/// Amplitude transmitted towards the HOM beamsplitter by one loop, up to a
/// phase: `sin(ωΔt/2)`.
fn loop_transmission(mu: f64, x: f64, delta_t: f64) -> f64 {
    ((mu + x) * delta_t / 2.0).sin()
}

/// Probability that both photons exit their loops towards the HOM
/// beamsplitter: `∫∫ |ψ_i|² sin²(ω₁Δt/2) sin²(ω₂Δt/2)`.
pub fn state_probability_quadrature(
    arm_delays: &ArmDelays,
    optics: &OpticalConfig,
    quad: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    let ni = initial_spectrum_normalization(optics);
    let mu = optics.mu();
    let dt = arm_delays.delta_t;
    integrate_joint_spectrum(optics, quad, |x1, x2| {
        let a = initial_amplitude(optics, x1, x2) / ni * loop_transmission(mu, x1, dt) * loop_transmission(mu, x2, dt);
        Complex64::new(a * a, 0.0)
    })?
    .real_part()
}

/// Final-state amplitude `ψ_f(ω₁, ω₂)` including the HOM delay phase on the
/// idler photon; global phases are dropped.
fn final_amplitude(
    optics: &OpticalConfig,
    mu: f64,
    delta_t: f64,
    delta_t_hom: f64,
    inv_sqrt_nf: f64,
    x1: f64,
    x2: f64,
) -> Complex64 {
    let magnitude = initial_amplitude(optics, x1, x2)
        * 2.0
        * loop_transmission(mu, x1, delta_t)
        * loop_transmission(mu, x2, delta_t)
        * inv_sqrt_nf;
    Complex64::from_polar(1.0, -x1 * delta_t_hom) * magnitude
}

/// `∫∫ |ψ_f|²` using the closed-form `N_f`; should be one.
pub fn final_state_norm_quadrature(
    arm_delays: &ArmDelays,
    optics: &OpticalConfig,
    quad: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    let nf = final_spectrum_normalization(arm_delays, optics)?;
    let inv = 1.0 / nf.sqrt();
    let mu = optics.mu();
    let dt = arm_delays.delta_t;
    integrate_joint_spectrum(optics, quad, |x1, x2| {
        let a = final_amplitude(optics, mu, dt, 0.0, inv, x1, x2);
        Complex64::new(a.norm_sqr(), 0.0)
    })?
    .real_part()
}

/// Coincidence probability from the exchange overlap,
/// `P_c = ½ − ½ ∫∫ ψ_f*(ω₁,ω₂) ψ_f(ω₂,ω₁)`.
pub fn pc_overlap_quadrature(
    delta_t_hom: f64,
    arm_delays: &ArmDelays,
    optics: &OpticalConfig,
    quad: &QuadratureSpec,
) -> Result<f64, QuadratureError> {
    let nf = final_spectrum_normalization(arm_delays, optics)?;
    let inv = 1.0 / nf.sqrt();
    let mu = optics.mu();
    let dt = arm_delays.delta_t;
    let overlap = integrate_joint_spectrum(optics, quad, |x1, x2| {
        let direct = final_amplitude(optics, mu, dt, delta_t_hom, inv, x1, x2);
        let swapped = final_amplitude(optics, mu, dt, delta_t_hom, inv, x2, x1);
        direct.conj() * swapped
    })?
    .real_part()?;
    Ok(0.5 - 0.5 * overlap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{propagation_times, RotationState, SagnacArm};

    fn paper_delays() -> ArmDelays {
        propagation_times(&SagnacArm::default(), &RotationState::at_rest())
    }

    #[test]
    fn gauss_hermite_integrates_polynomials() {
        let (x, w) = gauss_hermite_rule(64);
        let total: f64 = w.iter().sum();
        assert!((total - PI.sqrt()).abs() < 1e-13);
        let second: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((second - PI.sqrt() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::default().validate().is_ok());
        let few = QuadratureSpec {
            num_points: 32,
            ..QuadratureSpec::default()
        };
        assert!(few.validate().is_err());
        let narrow = QuadratureSpec {
            half_width_sigmas: 4.0,
            ..QuadratureSpec::default()
        };
        assert!(narrow.validate().is_err());
        let big_gh = QuadratureSpec {
            scheme: QuadratureScheme::GaussHermite,
            num_points: 1024,
            ..QuadratureSpec::default()
        };
        assert!(big_gh.validate().is_err());
    }

    #[test]
    fn dark_loops_integrate_to_zero() {
        let optics = OpticalConfig::default();
        let t = 4.8e-9;
        let input = AsymmetricModelInput {
            delta_t_hom: 1e-13,
            t_icw: t,
            t_iac: t,
            t_scw: t,
            t_sac: t,
            optics,
        };
        assert!(nc_quadrature(&input, &QuadratureSpec::default()).unwrap().abs() < 1e-12);
    }

    #[test]
    fn too_coarse_grid_reports_non_convergence() {
        let optics = OpticalConfig::default();
        let delays = paper_delays();
        let input = AsymmetricModelInput {
            delta_t_hom: 3.0 * delays.delta_t,
            t_icw: delays.t_cw,
            t_iac: delays.t_ac,
            t_scw: delays.t_cw,
            t_sac: delays.t_ac,
            optics,
        };
        let coarse = QuadratureSpec {
            num_points: 64,
            ..QuadratureSpec::default()
        };
        assert!(matches!(
            nc_quadrature(&input, &coarse),
            Err(QuadratureError::NonConvergence { .. })
        ));
    }

    #[test]
    fn joint_integrals_reject_gauss_hermite() {
        let quad = QuadratureSpec {
            scheme: QuadratureScheme::GaussHermite,
            num_points: 64,
            ..QuadratureSpec::default()
        };
        assert!(spectrum_normalization(&OpticalConfig::default(), &quad).is_err());
    }

    #[test]
    fn overlap_vanishes_far_from_balance() {
        let optics = OpticalConfig::default().with_sigma_p(0.1 * OpticalConfig::default().delta_omega);
        let delays = paper_delays();
        let pc =
            pc_overlap_quadrature(5.0 * delays.delta_t, &delays, &optics, &QuadratureSpec::joint_default()).unwrap();
        assert!((pc - 0.5).abs() < 1e-6);
    }
}
