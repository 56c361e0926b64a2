//! Threshold-accuracy curves as a PNG.

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use a3gn::evaluation::read_curve_csv;
use log::warn;
use plotters::prelude::*;
use plotters::style::{register_font, FontStyle};

use crate::CliError;

const FONT_PATHS: [&str; 3] = [
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
];

/// Registers the first system font found; false when none is available.
fn ensure_font() -> bool {
    static FOUND: OnceLock<bool> = OnceLock::new();
    *FOUND.get_or_init(|| {
        let paths = std::env::var("A3GN_FONT").ok().into_iter().chain(FONT_PATHS.iter().map(|s| s.to_string()));
        for p in paths {
            if let Ok(bytes) = std::fs::read(&p) {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                if register_font("sans-serif", FontStyle::Normal, bytes).is_ok() {
                    return true;
                }
            }
        }
        false
    })
}

fn default_label(p: &Path) -> String {
    let stem = p.file_stem().unwrap_or_default().to_string_lossy();
    stem.strip_suffix("_curve").unwrap_or(&stem).to_string()
}

/// One line per curve file, accuracy against threshold on `[0, 1]²`.
pub fn plot_curves(inputs: &[PathBuf], labels: Option<&[String]>, out: &Path) -> Result<(), CliError> {
    if let Some(l) = labels {
        if l.len() != inputs.len() {
            return Err(CliError::Usage(format!("{} labels for {} curves", l.len(), inputs.len())));
        }
    }
    let mut curves = Vec::with_capacity(inputs.len());
    for (i, p) in inputs.iter().enumerate() {
        let c = read_curve_csv(p)?;
        let label = labels.map(|l| l[i].clone()).unwrap_or_else(|| default_label(p));
        curves.push((label, c));
    }
    let text = ensure_font();
    if !text {
        warn!("no usable font found (set A3GN_FONT); plotting without text");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| a3gn::Error::io(format!("creating {}", parent.display()), e))?;
    }
    draw(&curves, out, text).map_err(|e| CliError::Plot(format!("{}: {e}", out.display())))
}

fn draw(curves: &[(String, Vec<(f64, f64)>)], out: &Path, text: bool) -> Result<(), Box<dyn std::error::Error>> {
    let root = BitMapBackend::new(out, (800, 600)).into_drawing_area();
    root.fill(&WHITE)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(20).x_label_area_size(if text { 45 } else { 10 }).y_label_area_size(if text { 55 } else { 10 });
    if text {
        builder.caption("accuracy by threshold", ("sans-serif", 24));
    }
    let mut chart = builder.build_cartesian_2d(0f64..1f64, 0f64..1.02f64)?;
    if text {
        chart.configure_mesh().x_desc("threshold").y_desc("accuracy").draw()?;
    } else {
        chart.configure_mesh().disable_x_mesh().disable_y_mesh().x_labels(0).y_labels(0).draw()?;
    }
    for (i, (label, c)) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let series = chart.draw_series(LineSeries::new(c.iter().copied(), color.stroke_width(2)))?;
        if text {
            series.label(label.as_str()).legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
    }
    if text {
        chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
    }
    root.present()?;
    Ok(())
}
