//! Minimal deterministic SVG line and scatter plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::report::Table;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    Scatter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub kind: PlotKind,
    pub series: Vec<Series>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * span {
        out.push(if t.abs() < 1e-12 * span { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

impl Plot {
    /// Renders the plot; `None` when there is nothing to draw.
    pub fn render(&self) -> Option<String> {
        let tf = |y: f64| if self.log_y { y.log10() } else { y };
        let pts: Vec<(f64, f64)> = self
            .series
            .iter()
            .flat_map(|s| s.points.iter())
            .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_y || p.1 > 0.0))
            .map(|&(x, y)| (x, tf(y)))
            .collect();
        if pts.is_empty() {
            return None;
        }
        let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
            |a, p| (a.0.min(p.0), a.1.max(p.0), a.2.min(p.1), a.3.max(p.1)),
        );
        if x1 - x0 <= 0.0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 - y0 <= 0.0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        let pad = 0.04 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
        let pw = WIDTH - MARGIN_L - MARGIN_R;
        let ph = HEIGHT - MARGIN_T - MARGIN_B;
        let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_T + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_L + pw / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in ticks(x0, x1) {
            let x = sx(t);
            let _ = writeln!(
                s,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                MARGIN_T,
                MARGIN_T + ph,
                MARGIN_T + ph + 16.0,
                fmt_tick(t)
            );
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let label = if self.log_y { fmt_tick(10f64.powf(t)) } else { fmt_tick(t) };
            let _ = writeln!(
                s,
                r##"<line x1="{MARGIN_L}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"##,
                MARGIN_L + pw,
                MARGIN_L - 6.0,
                y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_L + pw / 2.0,
            HEIGHT - 10.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}{}</text>"#,
            MARGIN_T + ph / 2.0,
            MARGIN_T + ph / 2.0,
            esc(&self.y_label),
            if self.log_y { " (log)" } else { "" }
        );
        for (k, ser) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let visible: Vec<(f64, f64)> = ser
                .points
                .iter()
                .filter(|p| p.0.is_finite() && p.1.is_finite() && (!self.log_y || p.1 > 0.0))
                .map(|&(x, y)| (sx(x), sy(tf(y))))
                .collect();
            match self.kind {
                PlotKind::Line if !visible.is_empty() => {
                    let path: Vec<String> = visible.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        path.join(" ")
                    );
                }
                PlotKind::Scatter => {
                    for (x, y) in &visible {
                        let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.6" fill="{color}" fill-opacity="0.6"/>"#);
                    }
                }
                _ => {}
            }
            let ly = MARGIN_T + 10.0 + 18.0 * k as f64;
            let lx = MARGIN_L + pw + 10.0;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="4" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
                ly - 2.0,
                lx + 16.0,
                ly + 4.0,
                esc(&ser.label)
            );
        }
        s.push_str("</svg>\n");
        Some(s)
    }

    /// Writes the SVG; returns `false` (and writes nothing) for an empty plot.
    pub fn write(&self, path: &Path) -> Result<bool> {
        match self.render() {
            Some(svg) => {
                std::fs::write(path, svg)?;
                Ok(true)
            }
            None => Ok(false),
        }
    }
}

const RELATION_COLUMNS: [(&str, &str); 3] = [("H²", "grad_norm_h2"), ("MSE", "grad_norm_kl"), ("χ²", "grad_norm_chi2")];

/// Gradient norm against step: one series per labelled metrics CSV, or three
/// (`H²`, `MSE`, `χ²`) per gradient-log CSV.
pub fn gradient_plot(inputs: &[(String, &Path)]) -> Result<Plot> {
    let mut series = Vec::with_capacity(inputs.len());
    for (label, path) in inputs {
        let table = Table::read(path)?;
        if table.column_index("grad_norm_kl").is_ok() {
            for (name, column) in RELATION_COLUMNS {
                series.push(Series {
                    label: if label.is_empty() { name.to_string() } else { format!("{label} {name}") },
                    points: table.numeric_pairs("step", column)?,
                });
            }
        } else {
            series.push(Series {
                label: label.clone(),
                points: table.numeric_pairs("step", "grad_norm")?,
            });
        }
    }
    Ok(Plot {
        title: "Gradient norm per step".into(),
        x_label: "step".into(),
        y_label: "gradient norm".into(),
        log_y: true,
        kind: PlotKind::Line,
        series,
    })
}

/// Distance to equilibrium against time, one series per trajectory CSV.
pub fn decay_plot(inputs: &[(String, &Path)]) -> Result<Plot> {
    let mut series = Vec::with_capacity(inputs.len());
    for (label, path) in inputs {
        let t = Table::read(path)?;
        let phi = t.numeric_pairs("t", "phi_distance")?;
        let omega = t.numeric_pairs("t", "omega_distance")?;
        if phi.len() != omega.len() {
            return Err(Error::Format(format!("{}: ragged trajectory columns", path.display())));
        }
        series.push(Series {
            label: label.clone(),
            points: phi.iter().zip(&omega).map(|(a, b)| (a.0, a.1.hypot(b.1))).collect(),
        });
    }
    Ok(Plot {
        title: "Distance to equilibrium".into(),
        x_label: "t".into(),
        y_label: "distance".into(),
        log_y: true,
        kind: PlotKind::Line,
        series,
    })
}

/// Scatter of a samples CSV (`x, y, label`), one series per label in order
/// of first appearance.
pub fn samples_plot(title: &str, path: &Path) -> Result<Plot> {
    let t = Table::read(path)?;
    let (ix, iy, il) = (t.column_index("x")?, t.column_index("y")?, t.column_index("label")?);
    let mut series: Vec<Series> = Vec::new();
    for (n, r) in t.rows.iter().enumerate() {
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("row {}: `{s}` is not a number", n + 1)))
        };
        let p = (parse(&r[ix])?, parse(&r[iy])?);
        match series.iter_mut().find(|s| s.label == r[il]) {
            Some(s) => s.points.push(p),
            None => series.push(Series {
                label: r[il].clone(),
                points: vec![p],
            }),
        }
    }
    Ok(Plot {
        title: title.into(),
        x_label: "x".into(),
        y_label: "y".into(),
        log_y: false,
        kind: PlotKind::Scatter,
        series,
    })
}
