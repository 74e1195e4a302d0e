//! SVG figures with CSV sidecars.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::stats::pearson;

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

fn sidecar(svg: &Path) -> PathBuf {
    svg.with_extension("csv")
}

fn quote(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn padded(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let span = (hi - lo).abs().max(1e-3);
    (lo - 0.1 * span)..(hi + 0.1 * span)
}

/// Labelled scatter, annotated with the Pearson correlation when at least
/// three non-degenerate points exist. Returns that correlation.
pub fn scatter_figure(
    points: &[(String, f64, f64)],
    title: &str,
    x_label: &str,
    y_label: &str,
    svg: &Path,
) -> Result<Option<f64>> {
    let xs: Vec<f64> = points.iter().map(|p| p.1).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.2).collect();
    let r = pearson(&xs, &ys).ok();
    let mut csv = format!("label,{},{}\n", quote(x_label), quote(y_label));
    for (l, x, y) in points {
        csv.push_str(&format!("{},{x},{y}\n", quote(l)));
    }
    if let Some(r) = r {
        csv.push_str(&format!("# pearson_r,{r}\n"));
    }
    let csv_path = sidecar(svg);
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let (x0, x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (xr, yr) = if points.is_empty() {
        (0.0..1.0, 0.0..1.0)
    } else {
        (padded(x0, x1), padded(y0, y1))
    };
    let root = SVGBackend::new(svg, (720, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let caption = match r {
        Some(r) => format!("{title} (r = {r:.2})"),
        None => title.to_string(),
    };
    let mut chart = ChartBuilder::on(&root)
        .caption(caption, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(55)
        .build_cartesian_2d(xr, yr)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(points.iter().map(|(_, x, y)| Circle::new((*x, *y), 4, BLUE.filled())))
        .map_err(plot_err)?;
    chart
        .draw_series(
            points
                .iter()
                .map(|(l, x, y)| Text::new(l.clone(), (*x, *y), ("sans-serif", 11).into_font())),
        )
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(r)
}

/// Vertical bars, one per labelled value.
pub fn bar_figure(bars: &[(String, f64)], title: &str, y_label: &str, svg: &Path) -> Result<()> {
    let mut csv = format!("label,{}\n", quote(y_label));
    for (l, v) in bars {
        csv.push_str(&format!("{},{v}\n", quote(l)));
    }
    let csv_path = sidecar(svg);
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let lo = bars.iter().map(|b| b.1).fold(0.0f64, f64::min);
    let hi = bars.iter().map(|b| b.1).fold(0.0f64, f64::max);
    let n = bars.len().max(1);
    let root = SVGBackend::new(svg, (160 + 60 * n as u32, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(90)
        .y_label_area_size(55)
        .build_cartesian_2d(0.0..n as f64, padded(lo, hi))
        .map_err(plot_err)?;
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let i = x.floor() as usize;
            labels.get(i).cloned().unwrap_or_default()
        })
        .y_desc(y_label)
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(bars.iter().enumerate().map(|(i, (_, v))| {
            let x = i as f64;
            Rectangle::new([(x + 0.15, 0.0), (x + 0.85, *v)], BLUE.mix(0.7).filled())
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
