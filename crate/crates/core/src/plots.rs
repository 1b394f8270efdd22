//! Training-curve plot data (CSV, authoritative) and SVG renderings.
//!
//! Curves are grouped per environment (trading cost, portfolio flag) and
//! overlaid across split variants.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::RunRecord;

const HEADER: &str = "variant,timestep,test_sharpe,smoothed_test_sharpe,gen_ratio";

/// One point of a plotted curve.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotRow {
    pub variant: String,
    pub timestep: u64,
    pub test_sharpe: f64,
    pub smoothed_test_sharpe: f64,
    /// Missing when the train Sharpe was zero.
    pub gen_ratio: Option<f64>,
}

pub fn plot_rows(record: &RunRecord) -> Vec<PlotRow> {
    let smoothed = record.series.smoothed_test();
    record
        .series
        .records
        .iter()
        .zip(smoothed)
        .map(|(r, s)| PlotRow {
            variant: record.variant.name().to_string(),
            timestep: r.timestep,
            test_sharpe: r.test_sharpe,
            smoothed_test_sharpe: s,
            gen_ratio: r.gen_ratio,
        })
        .collect()
}

pub fn write_plot_csv(rows: &[PlotRow], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{HEADER}")?;
    for r in rows {
        let ratio = r.gen_ratio.map(|g| g.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{ratio}",
            r.variant, r.timestep, r.test_sharpe, r.smoothed_test_sharpe
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_plot_csv(path: &Path) -> Result<Vec<PlotRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64> {
            field(k).parse().map_err(|_| Error::Parse {
                row: i + 2,
                message: format!("bad number '{}'", field(k)),
            })
        };
        rows.push(PlotRow {
            variant: field(0).to_string(),
            timestep: field(1).parse().map_err(|_| Error::Parse {
                row: i + 2,
                message: "bad timestep".into(),
            })?,
            test_sharpe: num(2)?,
            smoothed_test_sharpe: num(3)?,
            gen_ratio: if field(4).is_empty() {
                None
            } else {
                Some(num(4)?)
            },
        });
    }
    Ok(rows)
}

fn env_key(record: &RunRecord) -> String {
    format!("tc{}_p{}", record.tc, u8::from(record.include_portfolio))
}

type Curve = (String, Vec<(f64, f64)>);

fn render(path: &Path, title: &str, y_label: &str, curves: &[Curve]) -> Result<()> {
    let points = curves.iter().flat_map(|(_, c)| c.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        (y0, y1) = (y0 - 0.5, y1 + 0.5);
    }
    let draw = || -> std::result::Result<(), Box<dyn std::error::Error>> {
        let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(10)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(x0..x1, y0..y1)?;
        chart
            .configure_mesh()
            .x_desc("timestep")
            .y_desc(y_label)
            .draw()?;
        for (i, (label, pts)) in curves.iter().enumerate() {
            let color = Palette99::pick(i).to_rgba();
            chart
                .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))?
                .label(label.clone())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()?;
        root.present()?;
        Ok(())
    };
    draw().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Writes per-environment CSV and SVG overlays of smoothed test Sharpe and
/// generalization ratio; returns the files written.
pub fn emit_plots(records: &[RunRecord], dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut groups: BTreeMap<String, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(env_key(r)).or_default().push(r);
    }
    let mut written = Vec::new();
    for (key, group) in groups {
        let rows: Vec<PlotRow> = group.iter().flat_map(|r| plot_rows(r)).collect();
        let csv_path = dir.join(format!("curves_{key}.csv"));
        write_plot_csv(&rows, &csv_path)?;
        written.push(csv_path);

        let sharpe: Vec<Curve> = group
            .iter()
            .map(|r| {
                let pts = plot_rows(r)
                    .iter()
                    .map(|p| (p.timestep as f64, p.smoothed_test_sharpe))
                    .collect();
                (r.variant.name().to_string(), pts)
            })
            .collect();
        let ratio: Vec<Curve> = group
            .iter()
            .map(|r| {
                let pts = plot_rows(r)
                    .iter()
                    .filter_map(|p| p.gen_ratio.map(|g| (p.timestep as f64, g)))
                    .collect();
                (r.variant.name().to_string(), pts)
            })
            .collect();
        let s_path = dir.join(format!("test_sharpe_{key}.svg"));
        render(
            &s_path,
            &format!("Test Sharpe ({key})"),
            "smoothed test Sharpe",
            &sharpe,
        )?;
        let g_path = dir.join(format!("gen_ratio_{key}.svg"));
        render(
            &g_path,
            &format!("Generalization ratio ({key})"),
            "test / train Sharpe",
            &ratio,
        )?;
        written.extend([s_path, g_path]);
    }
    Ok(written)
}
