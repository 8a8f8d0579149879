//! Loss-versus-iteration SVG line plots from trace CSVs.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

/// Parses a trace CSV. `# key = value` comment lines are allowed before
/// the header; `trace_algorithm`, `trace_k` and `trace_seed` name the
/// series. The y column is `neg_log10_loss` if present, else `loss_l2_mu`.
pub fn parse_trace(text: &str, fallback_label: &str) -> Result<Series> {
    let mut meta: Vec<(String, String)> = Vec::new();
    let mut header: Option<(usize, usize)> = None;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        if let Some(c) = line.strip_prefix('#') {
            if let Some((k, v)) = c.split_once('=') {
                meta.push((k.trim().to_string(), v.trim().trim_matches('"').to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        match header {
            None => {
                let find = |name: &str| fields.iter().position(|f| *f == name);
                let t = find("t").with_context(|| format!("row {row}: header has no 't' column"))?;
                let y = find("neg_log10_loss")
                    .or_else(|| find("loss_l2_mu"))
                    .with_context(|| format!("row {row}: header has no loss column"))?;
                header = Some((t, y));
            }
            Some((t, y)) => {
                let get = |j: usize| -> Result<f64> {
                    let f = fields.get(j).with_context(|| format!("row {row}: expected at least {} fields", j + 1))?;
                    f.parse::<f64>().with_context(|| format!("row {row}: '{f}' is not a number"))
                };
                let (x, v) = (get(t)?, get(y)?);
                if x.is_finite() && v.is_finite() {
                    points.push((x, v));
                }
            }
        }
    }
    if header.is_none() {
        bail!("no header row");
    }
    let lookup = |k: &str| meta.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    let label = match (lookup("trace_algorithm"), lookup("trace_k")) {
        (Some(a), Some(k)) => match lookup("trace_seed") {
            Some(s) => format!("{a} K={k} seed={s}"),
            None => format!("{a} K={k}"),
        },
        _ => fallback_label.to_string(),
    };
    Ok(Series { label, points })
}

pub fn load_trace(path: &Path) -> Result<Series> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_trace(&text, &stem).with_context(|| format!("in {}", path.display()))
}

fn bounds(series: &[Series]) -> ((f64, f64), (f64, f64)) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let fix = |lo: f64, hi: f64| {
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo <= 0.0 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    (fix(x0, x1), fix(y0, y1))
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Renders the plot. Identical input gives byte-identical output.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str) -> String {
    let ((x0, x1), (y0, y1)) = bounds(series);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#888"/>"##, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, fmt_tick(xv));
        let _ = writeln!(s, r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#888"/>"##, LEFT - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, fmt_tick(yv));
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !ser.points.is_empty() {
            let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
