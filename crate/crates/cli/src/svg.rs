//! Minimal in-process SVG charts on a fixed 800×600 canvas.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#7f7f7f"];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points }
    }
}

/// Plot area inside the canvas and the data box it displays.
struct Frame {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        self.left + (x - self.x.0) / (self.x.1 - self.x.0) * self.width
    }

    fn py(&self, y: f64) -> f64 {
        self.top + self.height - (y - self.y.0) / (self.y.1 - self.y.0) * self.height
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * (1.0 + lo.abs()) {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.04 * (hi - lo);
    (lo - pad, hi + pad)
}

fn header(out: &mut String, title: &str, stamp: Option<u64>) {
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    if let Some(t) = stamp {
        writeln!(out, "<!-- created {t} -->").unwrap();
    }
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(out, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, WIDTH / 2.0, escape(title)).unwrap();
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str) {
    writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        f.left, f.top, f.width, f.height
    )
    .unwrap();
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = f.x.0 + t * (f.x.1 - f.x.0);
        let yv = f.y.0 + t * (f.y.1 - f.y.0);
        let (px, py) = (f.px(xv), f.py(yv));
        writeln!(
            out,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            f.top + f.height + 14.0,
            tick(xv)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"#,
            f.left - 4.0,
            py + 3.0,
            tick(yv)
        )
        .unwrap();
    }
    if !x_label.is_empty() {
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            f.left + f.width / 2.0,
            f.top + f.height + 30.0,
            escape(x_label)
        )
        .unwrap();
    }
    if !y_label.is_empty() {
        let (x, y) = (f.left - 44.0, f.top + f.height / 2.0);
        writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" transform="rotate(-90 {x:.2} {y:.2})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            escape(y_label)
        )
        .unwrap();
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) { format!("{v:.1e}") } else { format!("{v:.2}") }
}

fn polylines(out: &mut String, f: &Frame, series: &[Series], legend: bool) {
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> =
            s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
        writeln!(out, r#"<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{}"/>"#, pts.join(" ")).unwrap();
        if legend {
            let y = f.top + 14.0 + 14.0 * i as f64;
            let x = f.left + f.width - 150.0;
            writeln!(out, r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#, y - 4.0, x + 18.0, y - 4.0).unwrap();
            writeln!(out, r#"<text x="{:.2}" y="{y:.2}" font-family="sans-serif" font-size="11">{}</text>"#, x + 22.0, escape(&s.label)).unwrap();
        }
    }
}

/// Line chart of one or more series; `log_y` plots `log10(y)` of positive values.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool, stamp: Option<u64>) -> String {
    let series: Vec<Series> = if log_y {
        series
            .iter()
            .map(|s| Series::new(s.label.clone(), s.points.iter().filter(|p| p.1 > 0.0).map(|&(x, y)| (x, y.log10())).collect()))
            .collect()
    } else {
        series.iter().map(|s| Series::new(s.label.clone(), s.points.clone())).collect()
    };
    let frame = Frame {
        left: 80.0,
        top: 40.0,
        width: WIDTH - 110.0,
        height: HEIGHT - 100.0,
        x: bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
        y: bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
    };
    let mut out = String::new();
    header(&mut out, title, stamp);
    axes(&mut out, &frame, x_label, if log_y { "log10" } else { y_label });
    polylines(&mut out, &frame, &series, true);
    out.push_str("</svg>\n");
    out
}

/// Eigenvalues in the complex plane with the unit circle; `highlight`
/// marks the top-coefficient modes.
pub fn spectrum(title: &str, eigenvalues: &[(f64, f64)], highlight: &[bool], stamp: Option<u64>) -> String {
    let extent = eigenvalues.iter().map(|(re, im)| re.abs().max(im.abs())).filter(|v| v.is_finite()).fold(1.1_f64, f64::max) * 1.05;
    let side = HEIGHT - 100.0;
    let frame = Frame { left: (WIDTH - side) / 2.0, top: 50.0, width: side, height: side, x: (-extent, extent), y: (-extent, extent) };
    let mut out = String::new();
    header(&mut out, title, stamp);
    axes(&mut out, &frame, "Re λ", "Im λ");
    let r = frame.width / (2.0 * extent);
    writeln!(out, r##"<circle cx="{:.2}" cy="{:.2}" r="{r:.2}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##, frame.px(0.0), frame.py(0.0)).unwrap();
    for (i, &(re, im)) in eigenvalues.iter().enumerate() {
        if !(re.is_finite() && im.is_finite()) {
            continue;
        }
        let top = highlight.get(i).copied().unwrap_or(false);
        let (color, size) = if top { (PALETTE[1], 4.0) } else { (PALETTE[0], 2.5) };
        writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="{size}" fill="{color}"/>"#, frame.px(re), frame.py(im)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Grid of small line charts, filled row by row.
pub fn panel(title: &str, cells: &[(String, Vec<Series>)], columns: usize, stamp: Option<u64>) -> String {
    let columns = columns.max(1);
    let rows = cells.len().div_ceil(columns).max(1);
    let cell_w = (WIDTH - 20.0) / columns as f64;
    let cell_h = (HEIGHT - 40.0) / rows as f64;
    let mut out = String::new();
    header(&mut out, title, stamp);
    for (k, (name, series)) in cells.iter().enumerate() {
        let (row, col) = (k / columns, k % columns);
        let frame = Frame {
            left: 10.0 + col as f64 * cell_w + 44.0,
            top: 40.0 + row as f64 * cell_h + 18.0,
            width: cell_w - 56.0,
            height: cell_h - 40.0,
            x: bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0))),
            y: bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1))),
        };
        writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            frame.left + frame.width / 2.0,
            frame.top - 5.0,
            escape(name)
        )
        .unwrap();
        axes(&mut out, &frame, "", "");
        polylines(&mut out, &frame, series, false);
    }
    out.push_str("</svg>\n");
    out
}
