//! Output files. Every file starts with the provenance block: `#` lines in text
//! and CSV files, an XML comment ahead of the root element in SVG files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use plotters::prelude::*;

use super::config::parse_color;
use crate::error::{Error, Result};

/// Label, color, and points of one plotted curve.
pub type Series = (String, String, Vec<(f64, f64)>);
pub type Segment = ((f64, f64), (f64, f64));

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Opens `path` and writes the provenance block.
pub fn create(path: &Path, provenance: &str) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut f = BufWriter::new(File::create(path)?);
    f.write_all(provenance.as_bytes())?;
    Ok(f)
}

/// CSV writer positioned after the provenance block.
pub fn csv_writer(path: &Path, provenance: &str) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path, provenance)?))
}

fn rgb(hex: &str) -> RGBColor {
    let (r, g, b) = parse_color(hex).unwrap_or((0, 0, 0));
    RGBColor(r, g, b)
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Io(std::io::Error::other(format!("plotting failed: {e}")))
}

fn write_svg(path: &Path, provenance: &str, svg: &str) -> Result<()> {
    let mut f = create(path, &format!("<!--\n{}-->\n", provenance.replace("--", "- -")))?;
    f.write_all(svg.as_bytes())?;
    f.flush()?;
    Ok(())
}

/// One stacked bar per group; segment `i` of a group uses `colors[i]` and `legend[i]`.
pub fn stacked_bars(
    path: &Path,
    provenance: &str,
    title: &str,
    groups: &[(String, Vec<f64>)],
    legend: &[&str],
    colors: &[String],
) -> Result<()> {
    let mut svg = String::new();
    {
        let width = (260 + 80 * groups.len()).max(480) as u32;
        let root = SVGBackend::with_string(&mut svg, (width, 360)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let (plot, side) = root.split_horizontally(width - 130);
        // A segmented range `0..k` has k + 1 slots; a degenerate `0..0` has none.
        let slots = (groups.len() as i32 - 1).max(1);
        let mut chart = ChartBuilder::on(&plot)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(40)
            .y_label_area_size(50)
            .build_cartesian_2d((0..slots).into_segmented(), 0.0..100.0)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_labels(groups.len().max(1))
            .x_label_formatter(&|v| match v {
                SegmentValue::CenterOf(i) => groups.get(*i as usize).map(|g| g.0.clone()).unwrap_or_default(),
                _ => String::new(),
            })
            .y_desc("percent")
            .draw()
            .map_err(plot_err)?;
        for seg in 0..legend.len() {
            let color = rgb(colors.get(seg).map_or("#000000", String::as_str));
            let bars = groups.iter().enumerate().map(|(gi, (_, fr))| {
                let below: f64 = fr[..seg.min(fr.len())].iter().sum::<f64>() * 100.0;
                let top = below + fr.get(seg).copied().unwrap_or(0.0) * 100.0;
                let gi = gi as i32;
                let mut bar = Rectangle::new(
                    [(SegmentValue::Exact(gi), below), (SegmentValue::Exact(gi + 1), top)],
                    color.filled(),
                );
                bar.set_margin(0, 0, 10, 10);
                bar
            });
            chart.draw_series(bars).map_err(plot_err)?;
        }
        for (seg, name) in legend.iter().enumerate() {
            let color = rgb(colors.get(seg).map_or("#000000", String::as_str));
            let y = 50 + 22 * seg as i32;
            side.draw(&Rectangle::new([(10, y), (24, y + 14)], color.filled()))
                .map_err(plot_err)?;
            side.draw(&Text::new(name.to_string(), (30, y), ("sans-serif", 14)))
                .map_err(plot_err)?;
        }
        root.present().map_err(plot_err)?;
    }
    write_svg(path, provenance, &svg)
}

/// Scatter of labelled 2-D points; `series` pairs a legend name and color with its points.
pub fn scatter(path: &Path, provenance: &str, title: &str, axes: (&str, &str), series: &[Series]) -> Result<()> {
    let (lo, hi) = bounds(series.iter().flat_map(|s| s.2.iter().copied()));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (520, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(35)
            .y_label_area_size(45)
            .build_cartesian_2d(lo.0..hi.0, lo.1..hi.1)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc(axes.0)
            .y_desc(axes.1)
            .draw()
            .map_err(plot_err)?;
        for (name, color, pts) in series {
            let c = rgb(color);
            chart
                .draw_series(pts.iter().map(|&p| Circle::new(p, 3, c.filled())))
                .map_err(plot_err)?
                .label(name.as_str())
                .legend(move |(x, y)| Circle::new((x + 5, y), 3, c.filled()));
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_svg(path, provenance, &svg)
}

/// Polylines overlaid on one chart.
pub fn paths(path: &Path, provenance: &str, title: &str, curves: &[Series]) -> Result<()> {
    let (lo, hi) = bounds(curves.iter().flat_map(|c| c.2.iter().copied()));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (520, 480)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(35)
            .y_label_area_size(45)
            .build_cartesian_2d(lo.0..hi.0, lo.1..hi.1)
            .map_err(plot_err)?;
        chart.configure_mesh().draw().map_err(plot_err)?;
        for (name, color, pts) in curves {
            let c = rgb(color);
            let s = chart
                .draw_series(LineSeries::new(pts.iter().copied(), c.stroke_width(2)))
                .map_err(plot_err)?;
            if !name.is_empty() {
                s.label(name.as_str())
                    .legend(move |(x, y)| PathElement::new([(x, y), (x + 12, y)], c));
            }
        }
        chart
            .configure_series_labels()
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_svg(path, provenance, &svg)
}

/// Arrow field with straight boundary lines and marked points.
pub struct Quiver<'a> {
    pub title: &'a str,
    pub extent: ((f64, f64), (f64, f64)),
    /// `(x, y, dx, dy)`, already scaled for display.
    pub arrows: &'a [(f64, f64, f64, f64)],
    pub lines: &'a [Segment],
    pub points: &'a [(f64, f64)],
}

pub fn quiver(path: &Path, provenance: &str, q: &Quiver) -> Result<()> {
    let ((x0, y0), (x1, y1)) = q.extent;
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (560, 560)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(q.title, ("sans-serif", 18))
            .margin(12)
            .x_label_area_size(30)
            .y_label_area_size(40)
            .build_cartesian_2d(x0..x1, y0..y1)
            .map_err(plot_err)?;
        chart.configure_mesh().disable_mesh().draw().map_err(plot_err)?;
        let arrow = RGBColor(70, 70, 160);
        chart
            .draw_series(
                q.arrows
                    .iter()
                    .map(|&(x, y, dx, dy)| PathElement::new([(x, y), (x + dx, y + dy)], arrow.stroke_width(1))),
            )
            .map_err(plot_err)?;
        chart
            .draw_series(
                q.arrows
                    .iter()
                    .map(|&(x, y, dx, dy)| Circle::new((x + dx, y + dy), 1, arrow.filled())),
            )
            .map_err(plot_err)?;
        chart
            .draw_series(
                q.lines
                    .iter()
                    .map(|&(a, b)| PathElement::new([a, b], BLACK.stroke_width(1))),
            )
            .map_err(plot_err)?;
        chart
            .draw_series(q.points.iter().map(|&p| Circle::new(p, 5, RED.filled())))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    write_svg(path, provenance, &svg)
}

fn bounds(pts: impl Iterator<Item = (f64, f64)>) -> ((f64, f64), (f64, f64)) {
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for (x, y) in pts.filter(|p| p.0.is_finite() && p.1.is_finite()) {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    if !lo.0.is_finite() {
        return ((-1.0, -1.0), (1.0, 1.0));
    }
    let pad = |a: f64, b: f64| 0.05 * (b - a).max(1e-9);
    let (px, py) = (pad(lo.0, hi.0), pad(lo.1, hi.1));
    ((lo.0 - px, lo.1 - py), (hi.0 + px, hi.1 + py))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_starts_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bars.svg");
        let groups = vec![("a".to_string(), vec![0.25, 0.75]), ("b".to_string(), vec![1.0, 0.0])];
        let colors = vec!["#ff0000".to_string(), "#00ff00".to_string()];
        stacked_bars(&p, "# x -- y\n", "t", &groups, &["one", "two"], &colors).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("<!--\n# x - - y\n-->\n<svg"));
        assert!(text.len() < 1 << 20);
    }
}
