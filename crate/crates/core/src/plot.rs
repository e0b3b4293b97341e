//! Static SVG figures. Output contains no timestamps or machine identifiers,
//! so the same inputs always produce the same bytes.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};

const WIDTH: u32 = 800;
const HEIGHT: u32 = 560;
const COLORS: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(214, 39, 40),
    RGBColor(44, 160, 44),
    RGBColor(148, 103, 189),
    RGBColor(255, 127, 14),
    RGBColor(23, 23, 23),
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub line: bool,
    pub markers: bool,
}

impl Series {
    pub fn scatter(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            points,
            line: false,
            markers: true,
        }
    }

    pub fn line(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            points,
            line: true,
            markers: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Figure {
    pub fn new(title: &str, x_label: &str, y_label: &str, series: Vec<Series>) -> Self {
        Figure {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series,
        }
    }
}

fn bounds(fig: &Figure) -> Result<((f64, f64), (f64, f64))> {
    let all: Vec<(f64, f64)> = fig.series.iter().flat_map(|s| s.points.clone()).collect();
    if all.is_empty() {
        return Err(Error::input("nothing to plot"));
    }
    if all.iter().any(|&(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::input("non-finite plot coordinates"));
    }
    let fold = |f: fn(f64, f64) -> f64, pick: fn(&(f64, f64)) -> f64, init: f64| {
        all.iter().map(pick).fold(init, f)
    };
    Ok((
        (
            fold(f64::min, |p| p.0, f64::INFINITY),
            fold(f64::max, |p| p.0, f64::NEG_INFINITY),
        ),
        (
            fold(f64::min, |p| p.1, f64::INFINITY),
            fold(f64::max, |p| p.1, f64::NEG_INFINITY),
        ),
    ))
}

fn draw_series<'a, DB, X, Y>(
    chart: &mut ChartContext<'a, DB, Cartesian2d<X, Y>>,
    series: &[Series],
) -> Result<()>
where
    DB: DrawingBackend + 'a,
    X: plotters::coord::ranged1d::Ranged<ValueType = f64>,
    Y: plotters::coord::ranged1d::Ranged<ValueType = f64>,
{
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        if s.line {
            chart
                .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
                .map_err(|e| Error::input(format!("plot: {e}")))?
                .label(s.label.clone())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
        if s.markers {
            let has_line = s.line;
            chart
                .draw_series(
                    s.points
                        .iter()
                        .map(|&p| Circle::new(p, 4, color.filled())),
                )
                .map_err(|e| Error::input(format!("plot: {e}")))?;
            if !has_line {
                // attach the legend entry to an empty series so the marker
                // style shows up in the legend box
                chart
                    .draw_series(std::iter::empty::<Circle<(f64, f64), i32>>())
                    .map_err(|e| Error::input(format!("plot: {e}")))?
                    .label(s.label.clone())
                    .legend(move |(x, y)| Circle::new((x + 9, y), 4, color.filled()));
            }
        }
    }
    chart
        .configure_series_labels()
        .border_style(RGBColor(120, 120, 120))
        .background_style(RGBColor(255, 255, 255).mix(0.9))
        .draw()
        .map_err(|e| Error::input(format!("plot: {e}")))?;
    Ok(())
}

fn render(fig: &Figure, log_axes: bool) -> Result<String> {
    let ((x_min, x_max), (y_min, y_max)) = bounds(fig)?;
    if log_axes {
        let positive = [x_min, y_min].iter().all(|&v| v > 0.0);
        if !positive {
            return Err(Error::input("log axes require positive coordinates"));
        }
    }
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (WIDTH, HEIGHT)).into_drawing_area();
        root.fill(&WHITE)
            .map_err(|e| Error::input(format!("plot: {e}")))?;
        let mut builder = ChartBuilder::on(&root);
        builder
            .caption(&fig.title, ("sans-serif", 24))
            .margin(12)
            .x_label_area_size(46)
            .y_label_area_size(64);
        if log_axes {
            let pad = |lo: f64, hi: f64| {
                let f = if lo == hi { 2.0 } else { 1.25 };
                (lo / f, hi * f)
            };
            let (xl, xh) = pad(x_min, x_max);
            let (yl, yh) = pad(y_min, y_max);
            let mut chart = builder
                .build_cartesian_2d((xl..xh).log_scale(), (yl..yh).log_scale())
                .map_err(|e| Error::input(format!("plot: {e}")))?;
            chart
                .configure_mesh()
                .x_desc(&fig.x_label)
                .y_desc(&fig.y_label)
                .x_label_formatter(&|v| format!("{v:.3e}"))
                .y_label_formatter(&|v| format!("{v:.3}"))
                .draw()
                .map_err(|e| Error::input(format!("plot: {e}")))?;
            draw_series(&mut chart, &fig.series)?;
        } else {
            let pad = |lo: f64, hi: f64| {
                let span = if hi > lo { hi - lo } else { 1.0 };
                (lo - 0.06 * span, hi + 0.06 * span)
            };
            let (xl, xh) = pad(x_min, x_max);
            let (yl, yh) = pad(y_min, y_max);
            let mut chart = builder
                .build_cartesian_2d(xl..xh, yl..yh)
                .map_err(|e| Error::input(format!("plot: {e}")))?;
            chart
                .configure_mesh()
                .x_desc(&fig.x_label)
                .y_desc(&fig.y_label)
                .draw()
                .map_err(|e| Error::input(format!("plot: {e}")))?;
            draw_series(&mut chart, &fig.series)?;
        }
        root.present().map_err(|e| Error::input(format!("plot: {e}")))?;
    }
    Ok(svg)
}

/// Write a figure with logarithmic x and y axes.
pub fn save_loglog_svg(fig: &Figure, path: &Path) -> Result<()> {
    std::fs::write(path, render(fig, true)?)?;
    Ok(())
}

/// Write a figure with linear axes.
pub fn save_linear_svg(fig: &Figure, path: &Path) -> Result<()> {
    std::fs::write(path, render(fig, false)?)?;
    Ok(())
}
