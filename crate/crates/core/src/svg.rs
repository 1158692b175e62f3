//! Standalone SVG figures: point-cloud scatter plots and line charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::energy::ParticleConfiguration;
use crate::error::{Error, Result};
use crate::output::write_file;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axes {
    Linear,
    LogLog,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Affine map from data coordinates (after the axis transform) to pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    axes: Axes,
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
}

impl Frame {
    fn fit(axes: Axes, pts: impl Iterator<Item = (f64, f64)>, equal_aspect: bool) -> Result<Self> {
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for (x, y) in pts {
            let (x, y) = transform(axes, x, y)?;
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
            any = true;
        }
        if !any {
            return Err(Error::EmptyData);
        }
        let span = SIZE - 2.0 * MARGIN;
        let wx = (xmax - xmin).max(1e-12);
        let wy = (ymax - ymin).max(1e-12);
        let (sx, sy) = if equal_aspect {
            let s = span / wx.max(wy);
            (s, s)
        } else {
            (span / wx, span / wy)
        };
        // Center the data inside the plot area.
        let x0 = xmin - (span / sx - wx) / 2.0;
        let y0 = ymin - (span / sy - wy) / 2.0;
        Ok(Self { axes, x0, y0, sx, sy })
    }

    /// Pixel coordinates of a data point (y grows downwards).
    pub fn map(&self, x: f64, y: f64) -> Result<(f64, f64)> {
        let (x, y) = transform(self.axes, x, y)?;
        Ok((MARGIN + (x - self.x0) * self.sx, SIZE - MARGIN - (y - self.y0) * self.sy))
    }
}

fn transform(axes: Axes, x: f64, y: f64) -> Result<(f64, f64)> {
    if !(x.is_finite() && y.is_finite()) {
        return Err(Error::invalid("series", "non-finite value"));
    }
    match axes {
        Axes::Linear => Ok((x, y)),
        Axes::LogLog if x > 0.0 && y > 0.0 => Ok((x.log10(), y.log10())),
        Axes::LogLog => Err(Error::invalid("series", format!("log-log axes need positive values, got ({x}, {y})"))),
    }
}

fn header(out: &mut String) {
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    )
    .unwrap();
    writeln!(out, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#).unwrap();
    let span = SIZE - 2.0 * MARGIN;
    writeln!(
        out,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{span}" height="{span}" fill="none" stroke="#999"/>"##
    )
    .unwrap();
}

/// Scatter plot of the first two coordinates with equal-aspect axes.
pub fn render_pointcloud(points: &ParticleConfiguration) -> Result<String> {
    if points.dim() < 2 {
        return Err(Error::invalid("points", "a scatter plot needs at least two coordinates"));
    }
    let frame = Frame::fit(Axes::Linear, points.points().map(|p| (p[0], p[1])), true)?;
    let mut out = String::new();
    header(&mut out);
    for p in points.points() {
        let (cx, cy) = frame.map(p[0], p[1])?;
        writeln!(out, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="1.5" fill="{}"/>"#, PALETTE[0]).unwrap();
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn emit_pointcloud_svg(points: &ParticleConfiguration, path: &Path) -> Result<()> {
    let text = render_pointcloud(points)?;
    write_file(path, text.as_bytes())
}

/// Line chart with one polyline per series; returns the SVG and the frame
/// used to place the points.
pub fn render_series(series: &[Series], axes: Axes) -> Result<(String, Frame)> {
    if series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::EmptyData);
    }
    let frame = Frame::fit(axes, series.iter().flat_map(|s| s.points.iter().copied()), false)?;
    let mut out = String::new();
    header(&mut out);
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut coords = Vec::with_capacity(s.points.len());
        for &(x, y) in &s.points {
            let (px, py) = frame.map(x, y)?;
            coords.push(format!("{px:.3},{py:.3}"));
        }
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        )
        .unwrap();
        let ly = MARGIN + 14.0 * (i as f64 + 1.0);
        writeln!(
            out,
            r#"<text x="{:.1}" y="{ly:.1}" font-size="11" fill="{color}">{}</text>"#,
            MARGIN + 6.0,
            escape(&s.label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    Ok((out, frame))
}

pub fn emit_series_svg(series: &[Series], axes: Axes, path: &Path) -> Result<()> {
    let (text, _) = render_series(series, axes)?;
    write_file(path, text.as_bytes())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
