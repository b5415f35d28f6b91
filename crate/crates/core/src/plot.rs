//! Self-contained SVG figures (inline styles, no external resources).

use std::fmt::Write;

use crate::analysis::HistogramStats;
use crate::sim::CoincidenceTrace;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const CW_COLOR: &str = "#1f77b4";
const ACW_COLOR: &str = "#ff7f0e";

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    right: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64, right: f64) -> Self {
        let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        Self { x0, x1, y0, y1, right }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - self.right)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" style="font-family:sans-serif;font-size:12px">"#
    );
    let _ = write!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" style="fill:#ffffff"/>"#);
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="24" style="font-size:15px;text-anchor:middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    (0..=4).map(|i| lo + (hi - lo) * i as f64 / 4.0).collect()
}

fn label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

fn axes(out: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (l, r, t, b) = (f.px(f.x0), f.px(f.x1), f.py(f.y1), f.py(f.y0));
    let _ = write!(
        out,
        r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" style="fill:none;stroke:#000000"/>"#,
        r - l,
        b - t
    );
    for x in ticks(f.x0, f.x1) {
        let px = f.px(x);
        let _ = write!(
            out,
            r#"<line x1="{px:.1}" y1="{b:.1}" x2="{px:.1}" y2="{:.1}" style="stroke:#000000"/><text x="{px:.1}" y="{:.1}" style="text-anchor:middle">{}</text>"#,
            b + 5.0,
            b + 18.0,
            label(x)
        );
    }
    for y in ticks(f.y0, f.y1) {
        let py = f.py(y);
        let _ = write!(
            out,
            r#"<line x1="{:.1}" y1="{py:.1}" x2="{l:.1}" y2="{py:.1}" style="stroke:#000000"/><text x="{:.1}" y="{:.1}" style="text-anchor:end">{}</text>"#,
            l - 5.0,
            l - 8.0,
            py + 4.0,
            label(y)
        );
    }
    let _ = write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" style="text-anchor:middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 18.0,
        escape(xlabel)
    );
    let _ = write!(
        out,
        r#"<text x="18" y="{:.1}" transform="rotate(-90 18 {:.1})" style="text-anchor:middle">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

/// Linear interpolation through a few perceptually ordered anchors.
fn colormap(t: f64) -> String {
    const ANCHORS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let pos = t * (ANCHORS.len() - 1) as f64;
    let i = (pos.floor() as usize).min(ANCHORS.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (ANCHORS[i], ANCHORS[i + 1]);
    let mix = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Heatmap of `values[row][col]` with rows along `y` and columns along `x`.
/// Large grids are decimated to at most 240 × 120 cells.
pub fn heatmap_svg(title: &str, x: &[f64], y: &[f64], values: &[Vec<f64>], xlabel: &str, ylabel: &str) -> String {
    let mut out = String::new();
    header(&mut out, title);
    if x.is_empty() || y.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let f = Frame::new(x[0], x[x.len() - 1], y[0], y[y.len() - 1], RIGHT);
    let (lo, hi) = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let xs = x.len().div_ceil(240).max(1);
    let ys = y.len().div_ceil(120).max(1);
    let cell = |axis: &[f64], i: usize, stride: usize| {
        let a = axis[i];
        let b = axis[(i + stride).min(axis.len() - 1)];
        if b != a {
            (a, b)
        } else if i > 0 {
            (a, a + (a - axis[i - 1]))
        } else {
            (a, a)
        }
    };
    for r in (0..y.len()).step_by(ys) {
        let (ya, yb) = cell(y, r, ys);
        for c in (0..x.len()).step_by(xs) {
            let (xa, xb) = cell(x, c, xs);
            let (px0, px1) = (f.px(xa), f.px(xb));
            let (py0, py1) = (f.py(ya), f.py(yb));
            let _ = write!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" style="fill:{};stroke:none"/>"#,
                px0.min(px1),
                py0.min(py1),
                (px1 - px0).abs().max(0.5),
                (py1 - py0).abs().max(0.5),
                colormap((values[r][c] - lo) / span)
            );
        }
    }
    axes(&mut out, &f, xlabel, ylabel);
    let bar_x = WIDTH - RIGHT + 25.0;
    let (top, bottom) = (TOP, HEIGHT - BOTTOM);
    for k in 0..50 {
        let t0 = k as f64 / 50.0;
        let y0 = bottom - (bottom - top) * (t0 + 0.02);
        let _ = write!(
            out,
            r#"<rect x="{bar_x:.1}" y="{y0:.2}" width="16" height="{:.2}" style="fill:{};stroke:none"/>"#,
            (bottom - top) / 50.0 + 0.5,
            colormap(t0 + 0.01)
        );
    }
    for (v, yy) in [(hi, top), (lo, bottom)] {
        let _ = write!(
            out,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            bar_x + 20.0,
            yy + 4.0,
            label(v)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Stacked half-period histogram by direction, with total mean (solid) and
/// median (dashed) markers.
pub fn histogram_svg(title: &str, stats: &HistogramStats) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let Some(first) = stats.bins.first() else {
        out.push_str("</svg>\n");
        return out;
    };
    let last = stats.bins[stats.bins.len() - 1];
    let max = stats.bins.iter().map(|b| b.cw + b.acw).max().unwrap_or(1).max(1);
    let f = Frame::new(first.lower, last.upper, 0.0, max as f64 * 1.1, RIGHT);
    for b in &stats.bins {
        let x0 = f.px(b.lower);
        let w = f.px(b.upper) - x0;
        let mut base = 0.0;
        for (count, color) in [(b.cw, CW_COLOR), (b.acw, ACW_COLOR)] {
            if count == 0 {
                continue;
            }
            let top = base + count as f64;
            let _ = write!(
                out,
                r#"<rect x="{x0:.2}" y="{:.2}" width="{w:.2}" height="{:.2}" style="fill:{color};stroke:#ffffff"/>"#,
                f.py(top),
                f.py(base) - f.py(top)
            );
            base = top;
        }
    }
    axes(&mut out, &f, "dip-to-peak rotation change (Hz)", "sequences");
    if let Some(total) = stats.total {
        for (v, dash, name) in [(total.mean, "none", "mean"), (total.median, "6,4", "median")] {
            let x = f.px(v);
            let _ = write!(
                out,
                r#"<line x1="{x:.2}" y1="{:.1}" x2="{x:.2}" y2="{:.1}" style="stroke:#000000;stroke-width:2;stroke-dasharray:{dash}"/>"#,
                f.py(f.y0),
                f.py(f.y1)
            );
            let _ = write!(
                out,
                r#"<text x="{:.1}" y="{:.1}">{name} {:.3}</text>"#,
                WIDTH - RIGHT + 8.0,
                if name == "mean" { TOP + 60.0 } else { TOP + 78.0 },
                v
            );
        }
    }
    for (i, (name, color)) in [("cw", CW_COLOR), ("acw", ACW_COLOR)].iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = write!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="12" height="12" style="fill:{color}"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            WIDTH - RIGHT + 8.0,
            y,
            WIDTH - RIGHT + 26.0,
            y + 10.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Coincidences against stage position (µm).
pub fn trace_svg(title: &str, trace: &CoincidenceTrace) -> String {
    let mut out = String::new();
    header(&mut out, title);
    let xs: Vec<f64> = trace.points.iter().map(|p| p.stage_m * 1e6).collect();
    let ys: Vec<f64> = trace.points.iter().map(|p| p.coincidences as f64).collect();
    if xs.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (x0, x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let y1 = ys.iter().fold(0.0f64, |m, &v| m.max(v)) * 1.1;
    let f = Frame::new(x0, x1, 0.0, y1, 30.0);
    let path: Vec<String> = xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", f.px(x), f.py(y)))
        .collect();
    let _ = write!(
        out,
        r#"<polyline points="{}" style="fill:none;stroke:{CW_COLOR};stroke-width:1.5"/>"#,
        path.join(" ")
    );
    for (&x, &y) in xs.iter().zip(&ys) {
        let _ = write!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" style="fill:{CW_COLOR}"/>"#,
            f.px(x),
            f.py(y)
        );
    }
    axes(&mut out, &f, "stage position (µm)", "coincidences");
    out.push_str("</svg>\n");
    out
}
