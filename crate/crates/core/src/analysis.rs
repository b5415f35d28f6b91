//! Data reduction: feature amplitude per scan, sinusoid fit per sequence,
//! half-period statistics and the motor power-law calibration.

use std::f64::consts::PI;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::physics::{Direction, DEFAULT_DELTA_OMEGA};
use crate::sim::{CoincidenceTrace, MotorCalibration};

/// Shortest trace that still leaves an interior between its two shoulders.
pub const MIN_TRACE_POINTS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureOptions {
    /// Fraction of the points at each end used for the background.
    pub shoulder_fraction: f64,
    /// Fraction of shoulder points discarded at each extreme before averaging.
    pub trim_fraction: f64,
    /// Delay width `w` of the feature shape `exp(-(δt/w)²)` (s); also the
    /// smoothing kernel width.
    pub feature_width: f64,
}

impl Default for FeatureOptions {
    fn default() -> Self {
        Self {
            shoulder_fraction: 0.2,
            trim_fraction: 0.1,
            feature_width: 1.0 / DEFAULT_DELTA_OMEGA,
        }
    }
}

/// Height of one oscillating feature above its background.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureAmplitude {
    /// Signed rotation (Hz).
    pub rotation_hz: f64,
    /// `(center − background)/background`; positive for a peak.
    pub amplitude: f64,
    /// 1σ from counting statistics.
    pub uncertainty: f64,
    pub center_delay_s: f64,
    /// Background level in the units of the input samples.
    pub background: f64,
}

fn trimmed_mean(values: &mut [f64], trim: f64) -> (f64, usize) {
    values.sort_by(f64::total_cmp);
    let cut = ((values.len() as f64) * trim).floor() as usize;
    let kept = &values[cut..values.len() - cut];
    (kept.iter().sum::<f64>() / kept.len() as f64, kept.len())
}

/// Least-squares height of a fixed-shape Gaussian centred at `x0`, and the
/// sum of squared shape values.
fn matched_height(delays: &[f64], excess: &[f64], x0: f64, width: f64) -> (f64, f64) {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &e) in delays.iter().zip(excess) {
        let u = (x - x0) / width;
        let g = (-u * u).exp();
        num += g * e;
        den += g * g;
    }
    if den == 0.0 {
        (0.0, 0.0)
    } else {
        (num / den, den)
    }
}

/// Amplitude of the feature in samples `levels` taken at `delays`.
///
/// The background is the trimmed mean of the outer shoulders. The centre is
/// the extremum of a kernel-smoothed trace, refined between its neighbours
/// by maximising the matched-filter response; the centre level is the
/// Gaussian-weighted least-squares height of the feature shape there.
pub fn measure_feature(
    delays: &[f64],
    levels: &[f64],
    rotation_hz: f64,
    opts: &FeatureOptions,
) -> Result<FeatureAmplitude, AnalysisError> {
    let n = delays.len();
    if levels.len() != n {
        return Err(AnalysisError::LengthMismatch(n, levels.len()));
    }
    if n < MIN_TRACE_POINTS {
        return Err(AnalysisError::TooFewPoints(n));
    }
    let shoulder = ((n as f64 * opts.shoulder_fraction).ceil() as usize).clamp(1, (n - 1) / 2);
    let mut edges: Vec<f64> = levels[..shoulder]
        .iter()
        .chain(&levels[n - shoulder..])
        .copied()
        .collect();
    let (background, kept) = trimmed_mean(&mut edges, opts.trim_fraction);
    if !(background > 0.0) {
        return Err(AnalysisError::NonPositiveBackground(background));
    }

    let width = opts.feature_width;
    let excess: Vec<f64> = levels.iter().map(|y| y - background).collect();
    let smoothed = |j: usize| {
        let mut num = 0.0;
        let mut den = 0.0;
        for (x, e) in delays.iter().zip(&excess) {
            let u = (x - delays[j]) / width;
            let k = (-u * u).exp();
            num += k * e;
            den += k;
        }
        num / den
    };
    let peak = (shoulder..n - shoulder)
        .max_by(|&a, &b| smoothed(a).abs().total_cmp(&smoothed(b).abs()))
        .unwrap_or(n / 2);

    let response = |x0: f64| {
        let (h, den) = matched_height(delays, &excess, x0, width);
        h * h * den
    };
    let (mut lo, mut hi) = (delays[peak - 1], delays[peak + 1]);
    if lo > hi {
        std::mem::swap(&mut lo, &mut hi);
    }
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (response(a), response(b));
    for _ in 0..80 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = response(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = response(a);
        }
    }
    let mut center = 0.5 * (lo + hi);
    if response(delays[peak]) > response(center) {
        center = delays[peak];
    }

    let (height, den) = matched_height(delays, &excess, center, width);
    let var_height = delays
        .iter()
        .zip(levels)
        .map(|(&x, &y)| {
            let u = (x - center) / width;
            (-2.0 * u * u).exp() * y.max(1.0)
        })
        .sum::<f64>()
        / (den * den);
    let var_background = background / kept as f64;
    let amplitude = height / background;
    let uncertainty = (var_height / (background * background)
        + amplitude * amplitude * var_background / (background * background))
        .sqrt();

    Ok(FeatureAmplitude {
        rotation_hz,
        amplitude,
        uncertainty,
        center_delay_s: center,
        background,
    })
}

pub fn extract_feature_amplitude(trace: &CoincidenceTrace) -> Result<FeatureAmplitude, AnalysisError> {
    extract_feature_amplitude_with(trace, &FeatureOptions::default())
}

pub fn extract_feature_amplitude_with(
    trace: &CoincidenceTrace,
    opts: &FeatureOptions,
) -> Result<FeatureAmplitude, AnalysisError> {
    measure_feature(&trace.delays(), &trace.counts(), trace.header.rotation_hz, opts)
}

/// Fit of `A·cos(2πf/T + φ) + C` to feature amplitude against rotation speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceFit {
    pub amplitude: f64,
    /// Hz of rotation frequency.
    pub period: f64,
    pub phase: f64,
    pub offset: f64,
    /// Parameter order: amplitude, period, phase, offset.
    pub covariance: [[f64; 4]; 4],
    pub converged: bool,
    pub chi2: f64,
    pub n_points: usize,
}

impl SequenceFit {
    pub fn half_period(&self) -> f64 {
        self.period / 2.0
    }

    pub fn half_period_uncertainty(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt() / 2.0
    }

    pub fn evaluate(&self, f: f64) -> f64 {
        self.amplitude * (2.0 * PI * f / self.period + self.phase).cos() + self.offset
    }

    /// Derivative with respect to rotation frequency.
    pub fn slope_at(&self, f: f64) -> f64 {
        -self.amplitude * 2.0 * PI / self.period * (2.0 * PI * f / self.period + self.phase).sin()
    }
}

const FIT_STARTS: usize = 16;
const FIT_MAX_ITERATIONS: usize = 200;
const FIT_TOLERANCE: f64 = 1e-8;
/// Admissible period range as multiples of the rotation span.
const PERIOD_BOUNDS: (f64, f64) = (0.2, 10.0);

struct Problem<'a> {
    x: &'a [f64],
    y: &'a [f64],
    w: &'a [f64],
}

impl Problem<'_> {
    fn chi2(&self, p: &Vector4<f64>) -> f64 {
        self.x
            .iter()
            .zip(self.y)
            .zip(self.w)
            .map(|((&x, &y), &w)| {
                let r = p[0] * (2.0 * PI * x / p[1] + p[2]).cos() + p[3] - y;
                w * r * r
            })
            .sum()
    }

    /// Normal matrix `JᵀWJ` and gradient `JᵀWr`.
    fn normal_equations(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for ((&x, &y), &w) in self.x.iter().zip(self.y).zip(self.w) {
            let theta = 2.0 * PI * x / p[1] + p[2];
            let (s, c) = theta.sin_cos();
            let r = p[0] * c + p[3] - y;
            let j = Vector4::new(c, p[0] * s * 2.0 * PI * x / (p[1] * p[1]), -p[0] * s, 1.0);
            jtj += w * j * j.transpose();
            jtr += w * r * j;
        }
        (jtj, jtr)
    }

    /// Amplitude, phase and offset by linear least squares at fixed period.
    fn linear_start(&self, period: f64) -> Option<Vector4<f64>> {
        let mut m = nalgebra::Matrix3::zeros();
        let mut v = nalgebra::Vector3::zeros();
        for ((&x, &y), &w) in self.x.iter().zip(self.y).zip(self.w) {
            let (s, c) = (2.0 * PI * x / period).sin_cos();
            let b = nalgebra::Vector3::new(c, s, 1.0);
            m += w * b * b.transpose();
            v += w * y * b;
        }
        let sol = m.lu().solve(&v)?;
        let amp = sol[0].hypot(sol[1]);
        Some(Vector4::new(amp, period, (-sol[1]).atan2(sol[0]), sol[2]))
    }
}

struct Outcome {
    params: Vector4<f64>,
    chi2: f64,
    converged: bool,
}

fn levenberg_marquardt(problem: &Problem<'_>, start: Vector4<f64>, scale: f64, bounds: (f64, f64)) -> Outcome {
    let mut p = start;
    let mut chi2 = problem.chi2(&p);
    let mut lambda = 1e-3;
    let reference = |p: &Vector4<f64>| Vector4::new(p[0].abs() + scale, p[1].abs(), PI, p[3].abs() + scale);

    for _ in 0..FIT_MAX_ITERATIONS {
        let (jtj, jtr) = problem.normal_equations(&p);
        let mut damped = jtj;
        for i in 0..4 {
            damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&(-jtr)) else {
            lambda *= 10.0;
            continue;
        };
        let refs = reference(&p);
        let relative = (0..4).map(|i| step[i].abs() / refs[i]).fold(0.0, f64::max);
        let candidate = p + step;
        let candidate_chi2 = problem.chi2(&candidate);
        if candidate_chi2.is_finite() && candidate_chi2 <= chi2 && candidate[1] > 0.0 {
            p = candidate;
            chi2 = candidate_chi2;
            lambda = (lambda / 10.0).max(1e-12);
        } else {
            lambda *= 10.0;
        }
        if relative < FIT_TOLERANCE {
            let (p, chi2) = polish(problem, p, chi2);
            let in_bounds = p[1] > bounds.0 && p[1] < bounds.1;
            return Outcome {
                params: p,
                chi2,
                converged: chi2.is_finite() && in_bounds,
            };
        }
        if p[1] <= bounds.0 || p[1] >= bounds.1 || lambda > 1e20 {
            break;
        }
    }
    Outcome {
        params: p,
        chi2,
        converged: false,
    }
}

/// Undamped Gauss-Newton steps from a converged point, so the result does
/// not depend on where the damped iteration happened to stop.
fn polish(problem: &Problem<'_>, mut p: Vector4<f64>, mut chi2: f64) -> (Vector4<f64>, f64) {
    for _ in 0..20 {
        let (jtj, jtr) = problem.normal_equations(&p);
        let Some(step) = jtj.lu().solve(&(-jtr)) else {
            break;
        };
        let candidate = p + step;
        let candidate_chi2 = problem.chi2(&candidate);
        if !(candidate_chi2 <= chi2 * (1.0 + 1e-12)) || candidate == p {
            break;
        }
        p = candidate;
        chi2 = candidate_chi2;
    }
    (p, chi2)
}

fn normalized(mut p: Vector4<f64>) -> Vector4<f64> {
    if p[0] < 0.0 {
        p[0] = -p[0];
        p[2] += PI;
    }
    let mut phi = p[2].rem_euclid(2.0 * PI);
    if phi > PI {
        phi -= 2.0 * PI;
    }
    p[2] = phi;
    p
}

/// Weighted nonlinear least squares of `A·cos(2πf/T + φ) + C` against
/// `f = |rotation_hz|`.
///
/// Points are weighted by `1/uncertainty²` when every uncertainty is
/// positive, and equally otherwise.
pub fn fit_sinusoid(points: &[FeatureAmplitude]) -> Result<SequenceFit, AnalysisError> {
    let x: Vec<f64> = points.iter().map(|p| p.rotation_hz.abs()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.amplitude).collect();
    let sigma: Vec<f64> = points.iter().map(|p| p.uncertainty).collect();
    let sigma = sigma
        .iter()
        .all(|s| *s > 0.0 && s.is_finite())
        .then_some(sigma.as_slice());
    fit_sinusoid_xy(&x, &y, sigma)
}

pub fn fit_sinusoid_xy(x: &[f64], y: &[f64], sigma: Option<&[f64]>) -> Result<SequenceFit, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if let Some(s) = sigma {
        if s.len() != x.len() {
            return Err(AnalysisError::LengthMismatch(x.len(), s.len()));
        }
    }
    let n = x.len();
    if n < 5 {
        return Err(AnalysisError::TooFewFitPoints(n));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(AnalysisError::ZeroSpan);
    }
    let w: Vec<f64> = match sigma {
        Some(s) => s.iter().map(|s| 1.0 / (s * s)).collect(),
        None => vec![1.0; n],
    };
    let problem = Problem { x, y, w: &w };
    let scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let bounds = (PERIOD_BOUNDS.0 * span, PERIOD_BOUNDS.1 * span);

    let mut best: Option<Outcome> = None;
    for k in 0..FIT_STARTS {
        let t0 = span * 0.4 * 10f64.powf(k as f64 / (FIT_STARTS - 1) as f64);
        let Some(start) = problem.linear_start(t0) else {
            continue;
        };
        let outcome = levenberg_marquardt(&problem, start, scale, bounds);
        let better = match &best {
            None => true,
            Some(b) => {
                (outcome.converged && !b.converged) || (outcome.converged == b.converged && outcome.chi2 < b.chi2)
            }
        };
        if better {
            best = Some(outcome);
        }
    }
    let best = best.ok_or(AnalysisError::TooFewFitPoints(n))?;
    let p = normalized(best.params);

    let (jtj, _) = problem.normal_equations(&p);
    let dof = (n - 4) as f64;
    let reduced = best.chi2 / dof;
    let cov = jtj
        .try_inverse()
        .map(|m| m * reduced)
        .unwrap_or_else(|| Matrix4::from_element(f64::NAN));
    let mut covariance = [[0.0; 4]; 4];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cov[(i, j)];
        }
    }

    Ok(SequenceFit {
        amplitude: p[0],
        period: p[1],
        phase: p[2],
        offset: p[3],
        covariance,
        converged: best.converged,
        chi2: best.chi2,
        n_points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample standard deviation (zero for a single value).
    pub std_dev: f64,
    pub p16: f64,
    pub p84: f64,
}

impl GroupStats {
    /// Statistics of `values`; `None` when empty.
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let std_dev = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            mean,
            median: percentile(&v, 0.5),
            std_dev,
            p16: percentile(&v, 0.16),
            p84: percentile(&v, 0.84),
        })
    }
}

/// Linearly interpolated percentile of sorted data, `q ∈ [0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub cw: usize,
    pub acw: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramStats {
    pub cw: Option<GroupStats>,
    pub acw: Option<GroupStats>,
    pub total: Option<GroupStats>,
    /// Fits left out because they did not converge.
    pub rejected: usize,
    pub bins: Vec<HistogramBin>,
    pub warnings: Vec<String>,
}

/// Half-period statistics per direction and overall, over converged fits.
pub fn aggregate_histogram(fits: &[(Direction, SequenceFit)], bin_width: f64) -> HistogramStats {
    let mut cw = Vec::new();
    let mut acw = Vec::new();
    let mut rejected = 0;
    for (dir, fit) in fits {
        if !fit.converged {
            rejected += 1;
            continue;
        }
        match dir {
            Direction::Cw => cw.push(fit.half_period()),
            Direction::Acw => acw.push(fit.half_period()),
        }
    }
    half_period_histogram(&cw, &acw, rejected, bin_width)
}

/// Statistics from half-period values already split by direction.
pub fn half_period_histogram(cw: &[f64], acw: &[f64], rejected: usize, bin_width: f64) -> HistogramStats {
    let mut warnings = Vec::new();
    for (name, group) in [("cw", cw), ("acw", acw)] {
        if group.is_empty() {
            warnings.push(format!("no converged {name} fits; group omitted"));
        }
    }
    let all: Vec<f64> = cw.iter().chain(acw).copied().collect();
    HistogramStats {
        cw: GroupStats::from_values(cw),
        acw: GroupStats::from_values(acw),
        total: GroupStats::from_values(&all),
        rejected,
        bins: histogram_bins(cw, acw, bin_width),
        warnings,
    }
}

fn histogram_bins(cw: &[f64], acw: &[f64], width: f64) -> Vec<HistogramBin> {
    let all = cw.iter().chain(acw);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !(width > 0.0) || !lo.is_finite() {
        return Vec::new();
    }
    let start = (lo / width).floor();
    let count = ((hi / width).floor() - start) as usize + 1;
    let mut bins: Vec<HistogramBin> = (0..count)
        .map(|i| HistogramBin {
            lower: (start + i as f64) * width,
            upper: (start + i as f64 + 1.0) * width,
            cw: 0,
            acw: 0,
        })
        .collect();
    let index = |v: f64| (((v / width).floor() - start) as usize).min(count - 1);
    for &v in cw {
        bins[index(v)].cw += 1;
    }
    for &v in acw {
        bins[index(v)].acw += 1;
    }
    bins
}

/// Least squares of `ln(actual) = ln(a) + b·ln(set)`.
pub fn fit_power_law(set_hz: &[f64], actual_hz: &[f64]) -> Result<MotorCalibration, AnalysisError> {
    if set_hz.len() != actual_hz.len() {
        return Err(AnalysisError::LengthMismatch(set_hz.len(), actual_hz.len()));
    }
    let n = set_hz.len();
    if n < 3 {
        return Err(AnalysisError::TooFewCalibrationPoints(n));
    }
    for (i, (&s, &a)) in set_hz.iter().zip(actual_hz).enumerate() {
        if !(s > 0.0) {
            return Err(AnalysisError::NonPositiveCalibration(s, i));
        }
        if !(a > 0.0) {
            return Err(AnalysisError::NonPositiveCalibration(a, i));
        }
    }
    let lx: Vec<f64> = set_hz.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = actual_hz.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n as f64;
    let my = ly.iter().sum::<f64>() / n as f64;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::ZeroSpan);
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    Ok(MotorCalibration {
        a: (my - b * mx).exp(),
        b,
    })
}
