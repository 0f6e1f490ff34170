//! Static SVG chart of a sweep: minimal risk per asset against concentration.
//!
//! Replica prediction as a solid orange line, annealed baseline as a dashed
//! green line, sample means as sky-blue asterisks with ±1 standard-error bars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::AggregateRow;
use crate::replica::{equality_constrained, or_baseline};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 64.0;
const CURVE_POINTS: usize = 200;

const REPLICA_COLOR: &str = "#e69f00";
const OR_COLOR: &str = "#009e73";
const SAMPLE_COLOR: &str = "#56b4e9";

pub const X_LABEL: &str = "investment concentration tau";
pub const Y_LABEL: &str = "minimal investment risk per asset";

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    /// Pads by 5% of the span, or of the magnitude when the span is zero.
    fn padded(lo: f64, hi: f64) -> Self {
        let span = hi - lo;
        let pad = if span > 0.0 { 0.05 * span } else { 0.05 * lo.abs().max(1.0) };
        Range { lo: lo - pad, hi: hi + pad }
    }

    fn map(&self, v: f64, out_lo: f64, out_hi: f64) -> f64 {
        out_lo + (v - self.lo) / (self.hi - self.lo) * (out_hi - out_lo)
    }
}

fn px(tau: f64, xr: &Range) -> f64 {
    xr.map(tau, LEFT, WIDTH - RIGHT)
}

fn py(eps: f64, yr: &Range) -> f64 {
    yr.map(eps, HEIGHT - BOTTOM, TOP)
}

/// Roughly five round tick values inside the range, with the decimals needed to print them.
fn ticks(r: &Range) -> (Vec<f64>, usize) {
    let raw = (r.hi - r.lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (r.lo / step).ceil() as i64;
    let out = (first..)
        .map(|k| k as f64 * step)
        .take_while(|v| *v <= r.hi + 1e-9 * step)
        .collect();
    (out, decimals)
}

fn polyline(points: &[(f64, f64)], color: &str, dash: Option<&str>) -> String {
    let coords: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
    format!(
        "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"{dash} points=\"{}\"/>\n",
        coords.join(" ")
    )
}

/// Builds the SVG document. Rows without any usable sample are skipped.
pub fn figure_svg(rows: &[AggregateRow], alpha: f64) -> Result<String> {
    let rows: Vec<&AggregateRow> = rows.iter().filter(|r| r.samples_used > 0).collect();
    if rows.is_empty() {
        return Err(Error::EmptyFigure);
    }
    let tau_lo = rows.iter().map(|r| r.tau).fold(f64::INFINITY, f64::min);
    let tau_hi = rows.iter().map(|r| r.tau).fold(f64::NEG_INFINITY, f64::max);
    let xr = Range::padded(tau_lo, tau_hi);
    let curve_lo = xr.lo.max(1.0);

    let replica: Vec<(f64, f64)> = (0..CURVE_POINTS)
        .map(|i| curve_lo + (xr.hi - curve_lo) * i as f64 / (CURVE_POINTS - 1) as f64)
        .map(|t| equality_constrained(alpha, t).map(|p| (t, p.eps)))
        .collect::<Result<_>>()?;
    let annealed = [
        (curve_lo, or_baseline(alpha, curve_lo)?.eps),
        (xr.hi, or_baseline(alpha, xr.hi)?.eps),
    ];

    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    let values = rows
        .iter()
        .flat_map(|r| [r.eps_mean - r.eps_stderr, r.eps_mean + r.eps_stderr])
        .chain(replica.iter().map(|p| p.1))
        .chain(annealed.iter().map(|p| p.1));
    for v in values {
        y_lo = y_lo.min(v);
        y_hi = y_hi.max(v);
    }
    let yr = Range::padded(y_lo.min(0.0), y_hi);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(svg, "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>");

    // Axes and ticks.
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        svg,
        "<path d=\"M{x0},{y1} L{x0},{y0} L{x1},{y0}\" fill=\"none\" stroke=\"black\"/>"
    );
    let (xt, xd) = ticks(&xr);
    for t in xt {
        let x = px(t, &xr);
        let _ = writeln!(svg, "<line x1=\"{x:.2}\" y1=\"{y0}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"black\"/>", y0 + 5.0);
        let _ = writeln!(svg, "<text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">{t:.xd$}</text>", y0 + 20.0);
    }
    let (yt, yd) = ticks(&yr);
    for t in yt {
        let y = py(t, &yr);
        let _ = writeln!(svg, "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{x0}\" y2=\"{y:.2}\" stroke=\"black\"/>", x0 - 5.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{t:.yd$}</text>", x0 - 8.0, y + 4.0);
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">{X_LABEL}</text>",
        0.5 * (x0 + x1),
        HEIGHT - 18.0
    );
    let _ = writeln!(
        svg,
        "<text transform=\"translate(22,{:.2}) rotate(-90)\" text-anchor=\"middle\">{Y_LABEL}</text>",
        0.5 * (y0 + y1)
    );

    let to_px = |pts: &[(f64, f64)]| -> Vec<(f64, f64)> {
        pts.iter().map(|&(t, e)| (px(t, &xr), py(e, &yr))).collect()
    };
    svg.push_str(&polyline(&to_px(&replica), REPLICA_COLOR, None));
    svg.push_str(&polyline(&to_px(&annealed), OR_COLOR, Some("8 5")));

    for r in &rows {
        let x = px(r.tau, &xr);
        let y = py(r.eps_mean, &yr);
        let (ylo, yhi) = (py(r.eps_mean - r.eps_stderr, &yr), py(r.eps_mean + r.eps_stderr, &yr));
        let _ = writeln!(
            svg,
            "<g class=\"sample\" stroke=\"{SAMPLE_COLOR}\" stroke-width=\"1.5\">\
             <line x1=\"{x:.2}\" y1=\"{ylo:.2}\" x2=\"{x:.2}\" y2=\"{yhi:.2}\"/>\
             <line x1=\"{:.2}\" y1=\"{ylo:.2}\" x2=\"{:.2}\" y2=\"{ylo:.2}\"/>\
             <line x1=\"{:.2}\" y1=\"{yhi:.2}\" x2=\"{:.2}\" y2=\"{yhi:.2}\"/>\
             <line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\"/>\
             <line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\"/>\
             <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/>\
             <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\"/></g>",
            x - 4.0, x + 4.0,
            x - 4.0, x + 4.0,
            x - 6.0, x + 6.0,
            y - 6.0, y + 6.0,
            x - 4.2, y - 4.2, x + 4.2, y + 4.2,
            x - 4.2, y + 4.2, x + 4.2, y - 4.2,
        );
    }

    // Legend.
    let lx = x0 + 16.0;
    let ly = y1 + 14.0;
    let entries = [
        ("replica analysis", REPLICA_COLOR, None),
        ("operations research (annealed)", OR_COLOR, Some("8 5")),
        ("numerical simulation (mean ± stderr)", SAMPLE_COLOR, None),
    ];
    for (i, (label, color, dash)) in entries.iter().enumerate() {
        let y = ly + 18.0 * i as f64;
        let dash = dash.map(|d| format!(" stroke-dasharray=\"{d}\"")).unwrap_or_default();
        let _ = writeln!(
            svg,
            "<line x1=\"{lx}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"2\"{dash}/>",
            lx + 28.0
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{label}</text>", lx + 36.0, y + 4.0);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes the chart; on error nothing is written.
pub fn render_figure(rows: &[AggregateRow], alpha: f64, path: &Path) -> Result<()> {
    let svg = figure_svg(rows, alpha)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
