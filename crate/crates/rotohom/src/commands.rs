use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use rotohom_core::analysis::{
    aggregate_histogram, extract_feature_amplitude_with, fit_power_law, fit_sinusoid, SequenceFit,
};
use rotohom_core::io::{
    amplitudes_to_csv, fits_to_csv, fmt_f64, histogram_to_csv, landscape_to_csv, read_trace, summary_to_csv,
    trace_to_csv, write_atomic, AmplitudeRow, FitRow, LandscapeRow, Manifest, ManifestSequence, ManifestStep,
    RunConfig,
};
use rotohom_core::sim::{simulate_campaign, simulate_scan, CoincidenceTrace, Setup};
use rotohom_core::{nc_symmetric, plot, propagation_times, Direction, RotationState, SymmetricModelInput};

use crate::cli::Format;
use crate::error::CliError;

fn sim_error(e: rotohom_core::SimError) -> CliError {
    CliError::Config(format!("config error: {e}"))
}

fn write(out: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = out.join(name);
    write_atomic(&path, bytes)?;
    Ok(path)
}

pub fn landscape(cfg: &RunConfig, out: &Path, format: Format) -> Result<(), CliError> {
    let rotations = cfg.landscape.rotation_grid();
    let delays = cfg.landscape.delay_grid();
    let blocks: Vec<Vec<LandscapeRow>> = rotations
        .par_iter()
        .map(|&hz| {
            let arm_delays = propagation_times(&cfg.arm, &RotationState::from_hz(hz));
            delays
                .iter()
                .map(|&d| {
                    let m = nc_symmetric(&SymmetricModelInput {
                        delta_t_hom: d,
                        arm_delays,
                        optics: cfg.optics,
                    });
                    LandscapeRow {
                        rotation_hz: hz,
                        delay_s: d,
                        nc: m.n_c,
                        background: m.background,
                    }
                })
                .collect()
        })
        .collect();
    if format.csv() {
        let rows: Vec<LandscapeRow> = blocks.iter().flatten().copied().collect();
        write(out, "landscape.csv", &landscape_to_csv(&rows))?;
    }
    if format.svg() {
        let values: Vec<Vec<f64>> = (0..delays.len())
            .map(|j| blocks.iter().map(|b| b[j].nc / b[j].background).collect())
            .collect();
        let delays_ps: Vec<f64> = delays.iter().map(|d| d * 1e12).collect();
        let svg = plot::heatmap_svg(
            "coincidences / background",
            &rotations,
            &delays_ps,
            &values,
            "rotation (Hz)",
            "delay (ps)",
        );
        write(out, "landscape.svg", svg.as_bytes())?;
    }
    println!(
        "landscape: {} rotations x {} delays written to {}",
        rotations.len(),
        delays.len(),
        out.display()
    );
    Ok(())
}

pub fn scan(cfg: &RunConfig, rotation_hz: f64, out: &Path, format: Format) -> Result<(), CliError> {
    if !rotation_hz.is_finite() {
        return Err(CliError::Config(format!(
            "--rotation-hz must be finite (got {rotation_hz})"
        )));
    }
    let trace = simulate_scan(
        &cfg.optics,
        &cfg.arm,
        &RotationState::from_hz(rotation_hz),
        &cfg.scan_spec(),
        &cfg.noise,
    )
    .map_err(sim_error)?;
    if format.csv() {
        write(out, "scan.csv", &trace_to_csv(&trace))?;
    }
    if format.svg() {
        let svg = plot::trace_svg(&format!("delay scan at {rotation_hz} Hz"), &trace);
        write(out, "scan.svg", svg.as_bytes())?;
    }
    println!(
        "scan: {} points at {rotation_hz} Hz written to {}",
        trace.points.len(),
        out.display()
    );
    Ok(())
}

fn trace_name(t: &CoincidenceTrace, ext: &str) -> String {
    format!(
        "traces/seq{:03}_step{:02}.{ext}",
        t.header.sequence_id, t.header.step_index
    )
}

/// Seconds since the epoch, or `SOURCE_DATE_EPOCH` when set.
fn created_unix() -> u64 {
    if let Some(v) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
    {
        return v;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn sequence(cfg: &RunConfig, count: Option<usize>, out: &Path, format: Format) -> Result<(), CliError> {
    let count = count.unwrap_or(cfg.sequence.count);
    if count == 0 {
        return Err(CliError::Config("--count must be >= 1".into()));
    }
    let scan = cfg.scan_spec();
    let setup = Setup {
        optics: &cfg.optics,
        arm: &cfg.arm,
        scan: &scan,
        noise: &cfg.noise,
    };
    let runs = simulate_campaign(&setup, &cfg.sequence.template(), count).map_err(sim_error)?;

    let mut sequences = Vec::with_capacity(runs.len());
    let mut files = 0;
    for run in &runs {
        let mut steps = Vec::with_capacity(run.len());
        for t in run {
            if format.csv() {
                write(out, &trace_name(t, "csv"), &trace_to_csv(t))?;
                files += 1;
            }
            if format.svg() {
                let title = format!(
                    "sequence {} step {} ({}, {:.3} Hz)",
                    t.header.sequence_id, t.header.step_index, t.header.direction, t.header.rotation_hz
                );
                write(out, &trace_name(t, "svg"), plot::trace_svg(&title, t).as_bytes())?;
                files += 1;
            }
            steps.push(ManifestStep {
                file: trace_name(t, "csv"),
                step_index: t.header.step_index,
                set_hz: t.header.set_hz,
                rotation_hz: t.header.rotation_hz,
            });
        }
        sequences.push(ManifestSequence {
            sequence_id: run[0].header.sequence_id,
            direction: run[0].header.direction,
            steps,
        });
    }
    let manifest = Manifest {
        generator: "rotohom".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.noise.rng_seed,
        created_unix: created_unix(),
        config: cfg.clone(),
        sequences,
    };
    write(out, "manifest.json", manifest.to_json().as_bytes())?;
    println!(
        "sequence: {count} sequences, {files} files written to {}",
        out.display()
    );
    Ok(())
}

/// Trace files named on the command line, expanding directories to the
/// `.csv` files directly inside them, in sorted order.
fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let entries = fs::read_dir(input).map_err(|e| CliError::Io(format!("{}: {e}", input.display())))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")))
                .collect();
            found.sort();
            files.extend(found);
        } else if input.exists() {
            files.push(input.clone());
        } else {
            return Err(CliError::Io(format!("{}: no such file or directory", input.display())));
        }
    }
    Ok(files)
}

type SequenceKey = (u64, u32, Direction);

pub fn analyze(cfg: &RunConfig, inputs: &[PathBuf], out: &Path, format: Format) -> Result<(), CliError> {
    let files = collect_inputs(inputs)?;
    if files.is_empty() {
        return Err(CliError::NoInput("no trace files found".into()));
    }
    let mut warnings = Vec::new();
    let parsed: Vec<_> = files.par_iter().map(|f| (f, read_trace(f))).collect();
    let mut groups: BTreeMap<SequenceKey, Vec<CoincidenceTrace>> = BTreeMap::new();
    let mut usable = 0;
    for (_, result) in parsed {
        match result {
            Ok(t) => {
                usable += 1;
                let h = t.header;
                groups.entry((h.seed, h.sequence_id, h.direction)).or_default().push(t);
            }
            Err(e) => warnings.push(format!("skipped {e}")),
        }
    }
    if usable == 0 {
        for w in &warnings {
            eprintln!("warning: {w}");
        }
        return Err(CliError::NoInput(format!(
            "none of the {} input files could be read",
            files.len()
        )));
    }

    let mut amplitudes = Vec::new();
    let mut fits: Vec<FitRow> = Vec::new();
    for ((_, seq_id, dir), traces) in groups.iter_mut() {
        traces.sort_by_key(|t| t.header.step_index);
        let mut points = Vec::with_capacity(traces.len());
        for t in traces.iter() {
            match extract_feature_amplitude_with(t, &cfg.analysis.feature) {
                Ok(f) => {
                    amplitudes.push(AmplitudeRow {
                        sequence_id: *seq_id,
                        step_index: t.header.step_index,
                        direction: *dir,
                        feature: f,
                    });
                    points.push(f);
                }
                Err(e) => warnings.push(format!("sequence {seq_id} step {}: {e}", t.header.step_index)),
            }
        }
        match fit_sinusoid(&points) {
            Ok(fit) => fits.push(FitRow {
                sequence_id: *seq_id,
                direction: *dir,
                fit,
            }),
            Err(e) => warnings.push(format!("sequence {seq_id} ({dir}): {e}")),
        }
    }
    let tagged: Vec<(Direction, SequenceFit)> = fits.iter().map(|r| (r.direction, r.fit)).collect();
    let stats = aggregate_histogram(&tagged, cfg.analysis.bin_width_hz);
    warnings.extend(stats.warnings.iter().cloned());

    if format.csv() {
        write(out, "amplitudes.csv", &amplitudes_to_csv(&amplitudes))?;
        write(out, "fits.csv", &fits_to_csv(&fits))?;
        write(out, "histogram.csv", &histogram_to_csv(&stats))?;
        write(out, "summary.csv", &summary_to_csv(&stats))?;
    }
    if format.svg() {
        write(
            out,
            "histogram.svg",
            plot::histogram_svg("half-period of sequence fits", &stats).as_bytes(),
        )?;
    }

    let mut report = format!(
        "files: {} read, {} skipped\nsequences: {} fitted, {} rejected (not converged)\n",
        usable,
        files.len() - usable,
        fits.len(),
        stats.rejected
    );
    for (name, g) in [("cw", stats.cw), ("acw", stats.acw), ("total", stats.total)] {
        if let Some(g) = g {
            report.push_str(&format!(
                "{name}: n = {}, mean = {:.4} Hz, median = {:.4} Hz, 16-84% = [{:.4}, {:.4}] Hz\n",
                g.n, g.mean, g.median, g.p16, g.p84
            ));
        }
    }
    report.push_str(&format!("warnings: {}\n", warnings.len()));
    for w in &warnings {
        report.push_str(&format!("  {w}\n"));
        eprintln!("warning: {w}");
    }
    write(out, "report.txt", report.as_bytes())?;
    print!("{report}");
    Ok(())
}

pub fn calibrate(input: &Path, out: &Path, format: Format) -> Result<(), CliError> {
    let origin = input.display().to_string();
    let text = rotohom_core::io::read_to_string(input)?;
    let bad = |m: String| CliError::NoInput(format!("{origin}: {m}"));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column {name:?}")))
    };
    let (si, ai) = (column("set_hz")?, column("actual_hz")?);
    let mut set = Vec::new();
    let mut actual = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let num = |k: usize| -> Result<f64, CliError> {
            let s = rec.get(k).unwrap_or("");
            s.parse()
                .map_err(|_| bad(format!("line {}: invalid number {s:?}", i + 2)))
        };
        set.push(num(si)?);
        actual.push(num(ai)?);
    }
    let cal = fit_power_law(&set, &actual).map_err(|e| bad(e.to_string()))?;
    if format.csv() {
        let body = format!("a,b\r\n{},{}\r\n", fmt_f64(cal.a), fmt_f64(cal.b));
        write(out, "calibration.csv", body.as_bytes())?;
    }
    println!(
        "calibration: actual = {:.6} * set^{:.6} ({} points)",
        cal.a,
        cal.b,
        set.len()
    );
    println!(
        "config snippet: {}",
        serde_json::json!({ "sequence": { "calibration": { "a": cal.a, "b": cal.b } } })
    );
    Ok(())
}
