//! Native SVG rendering of traced boundary files.
//!
//! The output is fully deterministic: fixed canvas, fixed palette, fixed
//! float formatting, no timestamps.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_L: f64 = 80.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 60.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// One parsed boundary file.
pub struct PlotSeries {
    pub label: String,
    pub base_point: (f64, f64),
    /// (interval, side, p_kw, q_kvar) in traversal order.
    pub points: Vec<(usize, String, f64, f64)>,
}

pub fn load_series(path: &Path) -> Result<PlotSeries, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| format!("malformed boundary file {}: {e}", path.display()))?;
    let base = doc
        .get("base_point_kw_kvar")
        .and_then(Value::as_array)
        .filter(|a| a.len() == 2)
        .ok_or_else(|| format!("malformed boundary file {}: missing base point", path.display()))?;
    let base_point = (
        base[0].as_f64().unwrap_or(f64::NAN),
        base[1].as_f64().unwrap_or(f64::NAN),
    );
    let mut points = Vec::new();
    for p in doc
        .get("points")
        .and_then(Value::as_array)
        .ok_or_else(|| format!("malformed boundary file {}: missing points", path.display()))?
    {
        let interval = p.get("interval").and_then(Value::as_u64);
        let side = p.get("side").and_then(Value::as_str);
        let p_kw = p.get("p_kw").and_then(Value::as_f64);
        let q_kvar = p.get("q_kvar").and_then(Value::as_f64);
        match (interval, side, p_kw, q_kvar) {
            (Some(i), Some(s), Some(p), Some(q)) => {
                points.push((i as usize, s.to_string(), p, q))
            }
            _ => {
                return Err(format!(
                    "malformed boundary file {}: bad point record",
                    path.display()
                ))
            }
        }
    }
    let label = path
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "boundary".to_string());
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let label = if stem == "boundary" {
        // Inside a run layout the stem is always `boundary`; the parent
        // directories (vuf / phase / study) are the informative part.
        let mut parts = Vec::new();
        let mut cursor = path.parent();
        for _ in 0..3 {
            match cursor.and_then(Path::file_name) {
                Some(name) => parts.push(name.to_string_lossy().into_owned()),
                None => break,
            }
            cursor = cursor.and_then(Path::parent);
        }
        parts.reverse();
        if parts.is_empty() {
            label
        } else {
            parts.join("/")
        }
    } else {
        stem
    };
    Ok(PlotSeries {
        label,
        base_point,
        points,
    })
}

/// An edge is a recorded gap when it skips at least one sweep interval.
fn is_gap(a: &(usize, String, f64, f64), b: &(usize, String, f64, f64)) -> bool {
    let di = a.0.abs_diff(b.0);
    if a.1 == b.1 {
        di > 1
    } else {
        di > 0
    }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 6.0)
        .unwrap_or(mag * 10.0);
    let mut ticks = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + 1e-9 * span {
        ticks.push(t);
        t += step;
    }
    ticks
}

pub fn render(series: &[PlotSeries]) -> String {
    // Data bounds over every polygon and base point, padded 5%.
    let mut lo = (f64::INFINITY, f64::INFINITY);
    let mut hi = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut grow = |p: f64, q: f64| {
        lo.0 = lo.0.min(p);
        lo.1 = lo.1.min(q);
        hi.0 = hi.0.max(p);
        hi.1 = hi.1.max(q);
    };
    for s in series {
        grow(s.base_point.0, s.base_point.1);
        for &(_, _, p, q) in &s.points {
            grow(p, q);
        }
    }
    if !lo.0.is_finite() {
        lo = (0.0, 0.0);
        hi = (1.0, 1.0);
    }
    let pad = |l: f64, h: f64| {
        let span = (h - l).max(1e-9);
        (l - 0.05 * span, h + 0.05 * span)
    };
    let (px_lo, px_hi) = pad(lo.0, hi.0);
    let (py_lo, py_hi) = pad(lo.1, hi.1);
    let sx = (WIDTH - MARGIN_L - MARGIN_R) / (px_hi - px_lo);
    let sy = (HEIGHT - MARGIN_T - MARGIN_B) / (py_hi - py_lo);
    let mx = |p: f64| MARGIN_L + (p - px_lo) * sx;
    let my = |q: f64| HEIGHT - MARGIN_B - (q - py_lo) * sy;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(svg, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        svg,
        "<rect x=\"{MARGIN_L}\" y=\"{MARGIN_T}\" width=\"{:.2}\" height=\"{:.2}\" \
         fill=\"none\" stroke=\"black\"/>",
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B
    );

    // Axis ticks and labels.
    for t in nice_ticks(px_lo, px_hi) {
        let x = mx(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>",
            HEIGHT - MARGIN_B,
            HEIGHT - MARGIN_B + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{x:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">{t:.1}</text>",
            HEIGHT - MARGIN_B + 20.0
        );
    }
    for t in nice_ticks(py_lo, py_hi) {
        let y = my(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{MARGIN_L}\" y2=\"{y:.2}\" stroke=\"black\"/>",
            MARGIN_L - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"end\">{t:.1}</text>",
            MARGIN_L - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\">P (kW)</text>",
        MARGIN_L + (WIDTH - MARGIN_L - MARGIN_R) / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"20\" y=\"{:.2}\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 20 {:.2})\">Q (kVAr)</text>",
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0,
        MARGIN_T + (HEIGHT - MARGIN_T - MARGIN_B) / 2.0
    );

    // Polygons: one closed traversal per series, gap edges dashed.
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let n = s.points.len();
        for j in 0..n {
            let a = &s.points[j];
            let b = &s.points[(j + 1) % n];
            if n < 2 {
                break;
            }
            let dash = if is_gap(a, b) {
                " stroke-dasharray=\"6 4\""
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
                 stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
                mx(a.2),
                my(a.3),
                mx(b.2),
                my(b.3)
            );
        }
        for &(_, _, p, q) in &s.points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"{color}\"/>",
                mx(p),
                my(q)
            );
        }
    }

    // Base-point cross markers (deduplicated by rendered position).
    let mut seen: Vec<(String, String)> = Vec::new();
    for s in series {
        let x = format!("{:.2}", mx(s.base_point.0));
        let y = format!("{:.2}", my(s.base_point.1));
        if seen.contains(&(x.clone(), y.clone())) {
            continue;
        }
        let _ = writeln!(
            svg,
            "<line x1=\"{x0:.2}\" y1=\"{y}\" x2=\"{x1:.2}\" y2=\"{y}\" stroke=\"black\" \
             stroke-width=\"1.5\"/>",
            x0 = mx(s.base_point.0) - 6.0,
            x1 = mx(s.base_point.0) + 6.0,
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{x}\" y1=\"{y0:.2}\" x2=\"{x}\" y2=\"{y1:.2}\" stroke=\"black\" \
             stroke-width=\"1.5\"/>",
            y0 = my(s.base_point.1) - 6.0,
            y1 = my(s.base_point.1) + 6.0,
        );
        seen.push((x, y));
    }

    // Legend, top-right inside the frame.
    let legend_x = WIDTH - MARGIN_R - 220.0;
    let legend_y = MARGIN_T + 15.0;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let y = legend_y + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            "<line x1=\"{legend_x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"{color}\" stroke-width=\"2\"/>",
            legend_x + 24.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\">{}</text>",
            legend_x + 30.0,
            y + 4.0,
            xml_escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Load every boundary file and write the combined SVG to `out`.
pub fn plot(paths: &[std::path::PathBuf], out: &Path) -> Result<(), String> {
    if paths.is_empty() {
        return Err("no boundary files given".into());
    }
    let mut series = Vec::new();
    for path in paths {
        series.push(load_series(path)?);
    }
    let svg = render(&series);
    std::fs::write(out, svg).map_err(|e| format!("cannot write {}: {e}", out.display()))
}
