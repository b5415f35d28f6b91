//! Run configuration, CSV formats and atomic file output.
//!
//! Floating-point CSV fields are written with 15 significant digits in
//! scientific notation, so reading a file and writing it again reproduces
//! it byte for byte.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{FeatureAmplitude, FeatureOptions, HistogramStats, SequenceFit};
use crate::error::{InvalidParameter, IoError};
use crate::physics::{propagation_times, require, Direction, OpticalConfig, RotationState, SagnacArm, StageMapping};
use crate::sim::{MotorCalibration, NoiseModel, ScanSpec, SequenceSpec, StepPattern, MAX_SET_FREQUENCY};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Stage step (m).
    pub step_m: f64,
    /// Half-width of the scanned stage travel (m).
    pub half_width_m: f64,
    /// Delay at the scan centre (s); defaults to `−Δt/2` at rest.
    pub center_delay_s: Option<f64>,
    /// Explicit stage positions (m); overrides the three fields above.
    pub stage_positions_m: Option<Vec<f64>>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            step_m: 10e-6,
            half_width_m: 140e-6,
            center_delay_s: None,
            stage_positions_m: None,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        if let Some(p) = &self.stage_positions_m {
            require(!p.is_empty(), "stage_positions_m", "must not be empty")?;
            require(p.iter().all(|x| x.is_finite()), "stage_positions_m", "must be finite")?;
            let up = p.windows(2).all(|w| w[1] > w[0]);
            let down = p.windows(2).all(|w| w[1] < w[0]);
            return require(up || down, "stage_positions_m", "must be strictly monotone");
        }
        require(
            self.step_m.is_finite() && self.step_m > 0.0,
            "step_m",
            "must be finite and > 0",
        )?;
        require(
            self.half_width_m.is_finite() && self.half_width_m >= self.step_m,
            "half_width_m",
            "must be finite and >= step_m",
        )?;
        if let Some(c) = self.center_delay_s {
            require(c.is_finite(), "center_delay_s", "must be finite")?;
        }
        Ok(())
    }

    pub fn to_spec(&self, arm: &SagnacArm, mapping: StageMapping) -> ScanSpec {
        if let Some(p) = &self.stage_positions_m {
            return ScanSpec {
                stage_positions: p.clone(),
                mapping,
            };
        }
        let center = self
            .center_delay_s
            .unwrap_or_else(|| -propagation_times(arm, &RotationState::at_rest()).delta_t / 2.0);
        ScanSpec::around_delay(center, self.step_m, self.half_width_m, mapping)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SequenceConfig {
    pub max_set_hz: f64,
    pub steps: usize,
    pub pattern: StepPattern,
    /// Number of sequences in a campaign; directions alternate.
    pub count: usize,
    pub start_direction: Direction,
    /// Explicit set frequencies (Hz); overrides `max_set_hz`, `steps` and
    /// `pattern`.
    pub rotation_steps_hz: Option<Vec<f64>>,
    pub calibration: MotorCalibration,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self {
            max_set_hz: MAX_SET_FREQUENCY,
            steps: 8,
            pattern: StepPattern::Up,
            count: 2,
            start_direction: Direction::Cw,
            rotation_steps_hz: None,
            calibration: MotorCalibration::default(),
        }
    }
}

impl SequenceConfig {
    pub fn template(&self) -> SequenceSpec {
        let mut spec = match &self.rotation_steps_hz {
            Some(steps) => SequenceSpec {
                rotation_steps: steps.clone(),
                direction: self.start_direction,
                calibration: self.calibration,
            },
            None => SequenceSpec::stepped(self.max_set_hz, self.steps, self.pattern, self.start_direction),
        };
        spec.calibration = self.calibration;
        spec
    }

    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(
            (0.0..=MAX_SET_FREQUENCY).contains(&self.max_set_hz),
            "max_set_hz",
            &format!("must lie in [0, {MAX_SET_FREQUENCY}]"),
        )?;
        require(self.steps >= 1, "steps", "must be >= 1")?;
        require(self.count >= 1, "count", "must be >= 1")?;
        self.template().validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LandscapeConfig {
    pub rotation_min_hz: f64,
    pub rotation_max_hz: f64,
    pub rotation_points: usize,
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub delay_points: usize,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            rotation_min_hz: -1.0,
            rotation_max_hz: 1.0,
            rotation_points: 81,
            delay_min_s: -3e-12,
            delay_max_s: 3e-12,
            delay_points: 601,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl LandscapeConfig {
    pub fn rotation_grid(&self) -> Vec<f64> {
        linspace(self.rotation_min_hz, self.rotation_max_hz, self.rotation_points)
    }

    pub fn delay_grid(&self) -> Vec<f64> {
        linspace(self.delay_min_s, self.delay_max_s, self.delay_points)
    }

    pub fn validate(&self) -> Result<(), InvalidParameter> {
        require(self.rotation_points >= 1, "rotation_points", "must be >= 1")?;
        require(self.delay_points >= 2, "delay_points", "must be >= 2")?;
        require(
            self.rotation_min_hz.is_finite() && self.rotation_max_hz.is_finite(),
            "rotation_max_hz",
            "must be finite",
        )?;
        require(
            self.rotation_max_hz >= self.rotation_min_hz,
            "rotation_max_hz",
            "must be >= rotation_min_hz",
        )?;
        require(
            self.delay_min_s.is_finite() && self.delay_max_s.is_finite() && self.delay_max_s > self.delay_min_s,
            "delay_max_s",
            "must be finite and > delay_min_s",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub feature: FeatureOptions,
    /// Histogram bin width (Hz).
    pub bin_width_hz: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            feature: FeatureOptions::default(),
            bin_width_hz: 0.05,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        let f = &self.feature;
        require(
            f.shoulder_fraction > 0.0 && f.shoulder_fraction < 0.5,
            "feature.shoulder_fraction",
            "must lie in (0, 0.5)",
        )?;
        require(
            (0.0..0.5).contains(&f.trim_fraction),
            "feature.trim_fraction",
            "must lie in [0, 0.5)",
        )?;
        require(
            f.feature_width.is_finite() && f.feature_width > 0.0,
            "feature.feature_width",
            "must be finite and > 0",
        )?;
        require(
            self.bin_width_hz.is_finite() && self.bin_width_hz > 0.0,
            "bin_width_hz",
            "must be finite and > 0",
        )
    }
}

/// Complete description of a run. SI units; rotations in Hz.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub optics: OpticalConfig,
    pub arm: SagnacArm,
    pub mapping: StageMapping,
    pub noise: NoiseModel,
    pub scan: ScanConfig,
    pub sequence: SequenceConfig,
    pub landscape: LandscapeConfig,
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), InvalidParameter> {
        self.optics.validate().map_err(|e| e.within("optics"))?;
        self.arm.validate().map_err(|e| e.within("arm"))?;
        self.mapping.validate().map_err(|e| e.within("mapping"))?;
        self.noise.validate().map_err(|e| e.within("noise"))?;
        self.scan.validate().map_err(|e| e.within("scan"))?;
        self.sequence.validate().map_err(|e| e.within("sequence"))?;
        self.landscape.validate().map_err(|e| e.within("landscape"))?;
        self.analysis.validate().map_err(|e| e.within("analysis"))
    }

    /// Parses and validates a JSON document; `origin` names it in errors.
    pub fn from_json(text: &str, origin: &str) -> Result<Self, IoError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let at = e.path().to_string();
            let inner = e.into_inner();
            IoError::Parse {
                path: origin.to_string(),
                message: if at == "." || at == "?" {
                    inner.to_string()
                } else {
                    format!("at {at}: {inner}")
                },
            }
        })?;
        de.end().map_err(|e| IoError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IoError> {
        let text = read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn scan_spec(&self) -> ScanSpec {
        self.scan.to_spec(&self.arm, self.mapping)
    }

    pub fn to_json(&self) -> String {
        // Serialising plain data cannot fail.
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::File {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let file_err = |source| IoError::File {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(file_err)?;
    let mut builder = tempfile::Builder::new();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        builder.permissions(fs::Permissions::from_mode(0o644));
    }
    let mut tmp = builder.tempfile_in(dir).map_err(file_err)?;
    tmp.write_all(bytes).map_err(file_err)?;
    tmp.as_file().sync_all().map_err(file_err)?;
    tmp.persist(path).map_err(|e| file_err(e.error))?;
    Ok(())
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.14e}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(Vec::new());
    // Writing to a Vec cannot fail.
    let _ = w.write_record(header);
    for row in rows {
        let _ = w.write_record(&row);
    }
    w.into_inner().unwrap_or_default()
}

pub const TRACE_COLUMNS: [&str; 11] = [
    "sequence_id",
    "step_index",
    "direction",
    "set_hz",
    "rotation_hz",
    "seed",
    "stage_m",
    "delay_s",
    "coincidences",
    "singles_a",
    "singles_b",
];

pub fn trace_to_csv(trace: &crate::sim::CoincidenceTrace) -> Vec<u8> {
    let h = &trace.header;
    csv_bytes(
        &TRACE_COLUMNS,
        trace.points.iter().map(|p| {
            vec![
                h.sequence_id.to_string(),
                h.step_index.to_string(),
                h.direction.to_string(),
                fmt_f64(h.set_hz),
                fmt_f64(h.rotation_hz),
                h.seed.to_string(),
                fmt_f64(p.stage_m),
                fmt_f64(p.delay_s),
                p.coincidences.to_string(),
                p.singles_a.to_string(),
                p.singles_b.to_string(),
            ]
        }),
    )
}

/// Parses a trace written by [`trace_to_csv`]; `origin` names the source
/// in errors.
pub fn trace_from_csv(text: &str, origin: &str) -> Result<crate::sim::CoincidenceTrace, IoError> {
    use crate::sim::{CoincidenceTrace, TraceHeader, TracePoint};
    let parse_err = |message: String| IoError::Parse {
        path: origin.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(e.to_string()))?.clone();
    if headers.iter().ne(TRACE_COLUMNS.iter().copied()) {
        return Err(parse_err(format!(
            "unexpected header {:?}; expected {}",
            headers.iter().collect::<Vec<_>>(),
            TRACE_COLUMNS.join(",")
        )));
    }
    let mut header: Option<TraceHeader> = None;
    let mut points = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let line = i + 2;
        let field = |k: usize| rec.get(k).unwrap_or("");
        fn num<T: std::str::FromStr>(s: &str, name: &str, line: usize) -> Result<T, String> {
            s.parse().map_err(|_| format!("line {line}: invalid {name} {s:?}"))
        }
        let row_header = TraceHeader {
            sequence_id: num(field(0), "sequence_id", line).map_err(parse_err)?,
            step_index: num(field(1), "step_index", line).map_err(parse_err)?,
            direction: field(2).parse().map_err(|e| parse_err(format!("line {line}: {e}")))?,
            set_hz: num(field(3), "set_hz", line).map_err(parse_err)?,
            rotation_hz: num(field(4), "rotation_hz", line).map_err(parse_err)?,
            seed: num(field(5), "seed", line).map_err(parse_err)?,
        };
        match &header {
            None => header = Some(row_header),
            Some(h) if *h != row_header => {
                return Err(parse_err(format!(
                    "line {line}: trace metadata changes within the file"
                )));
            }
            Some(_) => {}
        }
        let point = TracePoint {
            stage_m: num(field(6), "stage_m", line).map_err(parse_err)?,
            delay_s: num(field(7), "delay_s", line).map_err(parse_err)?,
            coincidences: num(field(8), "coincidences", line).map_err(parse_err)?,
            singles_a: num(field(9), "singles_a", line).map_err(parse_err)?,
            singles_b: num(field(10), "singles_b", line).map_err(parse_err)?,
        };
        if !(point.stage_m.is_finite() && point.delay_s.is_finite()) {
            return Err(parse_err(format!("line {line}: non-finite position")));
        }
        points.push(point);
    }
    let header = header.ok_or_else(|| parse_err("no data rows".into()))?;
    Ok(CoincidenceTrace { header, points })
}

pub fn read_trace(path: &Path) -> Result<crate::sim::CoincidenceTrace, IoError> {
    trace_from_csv(&read_to_string(path)?, &path.display().to_string())
}

pub const LANDSCAPE_COLUMNS: [&str; 4] = ["rotation_hz", "delay_s", "nc", "background"];

/// One landscape sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandscapeRow {
    pub rotation_hz: f64,
    pub delay_s: f64,
    pub nc: f64,
    pub background: f64,
}

pub fn landscape_to_csv(rows: &[LandscapeRow]) -> Vec<u8> {
    csv_bytes(
        &LANDSCAPE_COLUMNS,
        rows.iter().map(|r| {
            vec![
                fmt_f64(r.rotation_hz),
                fmt_f64(r.delay_s),
                fmt_f64(r.nc),
                fmt_f64(r.background),
            ]
        }),
    )
}

/// Feature amplitude of one trace, with its place in the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeRow {
    pub sequence_id: u32,
    pub step_index: u32,
    pub direction: Direction,
    pub feature: FeatureAmplitude,
}

pub fn amplitudes_to_csv(rows: &[AmplitudeRow]) -> Vec<u8> {
    csv_bytes(
        &[
            "sequence_id",
            "step_index",
            "direction",
            "rotation_hz",
            "amplitude",
            "uncertainty",
            "center_delay_s",
            "background",
        ],
        rows.iter().map(|r| {
            vec![
                r.sequence_id.to_string(),
                r.step_index.to_string(),
                r.direction.to_string(),
                fmt_f64(r.feature.rotation_hz),
                fmt_f64(r.feature.amplitude),
                fmt_f64(r.feature.uncertainty),
                fmt_f64(r.feature.center_delay_s),
                fmt_f64(r.feature.background),
            ]
        }),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitRow {
    pub sequence_id: u32,
    pub direction: Direction,
    pub fit: SequenceFit,
}

pub fn fits_to_csv(rows: &[FitRow]) -> Vec<u8> {
    csv_bytes(
        &[
            "sequence_id",
            "direction",
            "n_points",
            "converged",
            "amplitude",
            "period_hz",
            "half_period_hz",
            "half_period_err_hz",
            "phase",
            "offset",
            "chi2",
        ],
        rows.iter().map(|r| {
            let f = &r.fit;
            vec![
                r.sequence_id.to_string(),
                r.direction.to_string(),
                f.n_points.to_string(),
                f.converged.to_string(),
                fmt_f64(f.amplitude),
                fmt_f64(f.period),
                fmt_f64(f.half_period()),
                fmt_f64(f.half_period_uncertainty()),
                fmt_f64(f.phase),
                fmt_f64(f.offset),
                fmt_f64(f.chi2),
            ]
        }),
    )
}

pub fn histogram_to_csv(stats: &HistogramStats) -> Vec<u8> {
    csv_bytes(
        &["lower_hz", "upper_hz", "cw", "acw"],
        stats
            .bins
            .iter()
            .map(|b| vec![fmt_f64(b.lower), fmt_f64(b.upper), b.cw.to_string(), b.acw.to_string()]),
    )
}

pub fn summary_to_csv(stats: &HistogramStats) -> Vec<u8> {
    let groups = [("cw", stats.cw), ("acw", stats.acw), ("total", stats.total)];
    csv_bytes(
        &["group", "n", "mean_hz", "median_hz", "std_hz", "p16_hz", "p84_hz"],
        groups.iter().filter_map(|(name, g)| {
            g.map(|g| {
                vec![
                    name.to_string(),
                    g.n.to_string(),
                    fmt_f64(g.mean),
                    fmt_f64(g.median),
                    fmt_f64(g.std_dev),
                    fmt_f64(g.p16),
                    fmt_f64(g.p84),
                ]
            })
        }),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestStep {
    pub file: String,
    pub step_index: u32,
    pub set_hz: f64,
    pub rotation_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestSequence {
    pub sequence_id: u32,
    pub direction: Direction,
    pub steps: Vec<ManifestStep>,
}

/// Index of a simulated campaign. `created_unix` is the only field that is
/// not a function of the configuration and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub version: String,
    pub seed: u64,
    pub created_unix: u64,
    pub config: RunConfig,
    pub sequences: Vec<ManifestSequence>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap_or_default()
    }
}
