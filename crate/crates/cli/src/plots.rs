use std::path::Path;

use afsd::eval::PrCurve;
use afsd::pipeline::StepRecord;
use anyhow::{anyhow, Result};
use plotters::prelude::*;

const SIZE: (u32, u32) = (900, 540);

type Term = (&'static str, fn(&StepRecord) -> f64);

fn line_chart(
    path: &Path,
    title: &str,
    x_desc: &str,
    y_desc: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let points = series.iter().flat_map(|(_, s)| s.iter());
    let (x_max, y_max) = points.fold((1e-9f64, 1e-9f64), |(x, y), p| (x.max(p.0), y.max(p.1)));
    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("{e}"))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..x_max, 0.0..y_max * 1.05)
        .map_err(|e| anyhow!("{e}"))?;
    chart
        .configure_mesh()
        .x_desc(x_desc)
        .y_desc(y_desc)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| anyhow!("{e}"))?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| anyhow!("{e}"))?;
    root.present().map_err(|e| anyhow!("{e}"))?;
    Ok(())
}

/// Per-term training losses, averaged over windows of steps.
pub fn loss_curves(path: &Path, records: &[StepRecord]) -> Result<()> {
    let window = (records.len() / 200).max(1);
    let terms: [Term; 6] = [
        ("total", |r| r.loss.total),
        ("cls coarse", |r| r.loss.cls_coarse),
        ("loc coarse", |r| r.loss.loc_coarse),
        ("cls refined", |r| r.loss.cls_refined),
        ("loc refined", |r| r.loss.loc_refined),
        ("quality", |r| r.loss.quality),
    ];
    let series: Vec<(String, Vec<(f64, f64)>)> = terms
        .iter()
        .map(|(name, get)| {
            let pts = records
                .chunks(window)
                .map(|c| {
                    let step = c.last().map_or(0, |r| r.step) as f64;
                    (step, c.iter().map(get).sum::<f64>() / c.len() as f64)
                })
                .collect();
            (name.to_string(), pts)
        })
        .collect();
    line_chart(path, "training losses", "step", "loss", &series)
}

pub fn pr_curves(path: &Path, threshold: f64, curves: &[(String, PrCurve)]) -> Result<()> {
    let series: Vec<(String, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|(name, c)| {
            let pts = c.recall.iter().copied().zip(c.precision.iter().copied()).collect();
            (name.clone(), pts)
        })
        .collect();
    line_chart(
        path,
        &format!("precision-recall at tIoU {threshold:.2}"),
        "recall",
        "precision",
        &series,
    )
}
