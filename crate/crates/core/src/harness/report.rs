//! Curves, summary table, label-efficiency factor and SVG plots.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use super::Scenario;
use crate::error::{Error, Result};
use crate::metrics::{fmt_opt, summarize, LearningCurve, SummaryRow};

/// Ratio of the smallest Scenario A case reaching `tau` to the smallest
/// Scenario B case reaching it. `factor` is `None` when either never does.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Efficiency {
    pub tau: f64,
    pub smallest_a: Option<usize>,
    pub smallest_b: Option<usize>,
    pub factor: Option<f64>,
}

impl Efficiency {
    pub fn describe(&self) -> String {
        match self.factor {
            Some(f) => format!("{f}"),
            None => "unavailable".to_string(),
        }
    }
}

fn smallest_reaching(curves: &[LearningCurve], tau: f64) -> Option<usize> {
    summarize(curves)
        .iter()
        .filter(|r| r.best_auc.is_some_and(|a| a >= tau))
        .map(|r| r.case_labels)
        .min()
}

pub fn efficiency_factor(a: &[LearningCurve], b: &[LearningCurve], tau: f64) -> Efficiency {
    let smallest_a = smallest_reaching(a, tau);
    let smallest_b = smallest_reaching(b, tau);
    Efficiency {
        tau,
        smallest_a,
        smallest_b,
        factor: smallest_a.zip(smallest_b).map(|(x, y)| x as f64 / y as f64),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary_a: Vec<SummaryRow>,
    pub summary_b: Vec<SummaryRow>,
    pub efficiency: Efficiency,
}

impl Report {
    pub fn best_auc(&self, scenario: Scenario, case_labels: usize) -> Option<f64> {
        let rows = match scenario {
            Scenario::A => &self.summary_a,
            Scenario::B => &self.summary_b,
        };
        rows.iter().find(|r| r.case_labels == case_labels).and_then(|r| r.best_auc)
    }
}

/// Writes per-case curve.csv files, summary.csv, efficiency.json and
/// plots/*.svg under `out_dir`.
pub fn report(curves_a: &[LearningCurve], curves_b: &[LearningCurve], out_dir: &Path, tau: f64) -> Result<Report> {
    if curves_a.is_empty() && curves_b.is_empty() {
        return Err(Error::Config("no learning curves to report".into()));
    }
    for (scenario, curves) in [(Scenario::A, curves_a), (Scenario::B, curves_b)] {
        for c in curves {
            let dir = out_dir.join(scenario.dir_name()).join(format!("case_{}", c.case_labels));
            std::fs::create_dir_all(&dir)?;
            c.write_csv(BufWriter::new(File::create(dir.join("curve.csv"))?))?;
        }
    }
    let summary_a = summarize(curves_a);
    let summary_b = summarize(curves_b);
    let mut w = BufWriter::new(File::create(out_dir.join("summary.csv"))?);
    writeln!(w, "scenario,case_labels,best_auc,best_f1,iterations_to_best")?;
    for (s, rows) in [("A", &summary_a), ("B", &summary_b)] {
        for r in rows {
            writeln!(
                w,
                "{s},{},{},{},{}",
                r.case_labels,
                fmt_opt(r.best_auc),
                fmt_opt(r.best_f1),
                r.iterations_to_best.map(|i| i.to_string()).unwrap_or_default()
            )?;
        }
    }
    w.flush()?;
    let efficiency = efficiency_factor(curves_a, curves_b, tau);
    let eff_json = serde_json::json!({
        "tau": tau,
        "smallest_a": efficiency.smallest_a,
        "smallest_b": efficiency.smallest_b,
        "factor": efficiency.factor.map_or(serde_json::json!("unavailable"), |f| serde_json::json!(f)),
    });
    std::fs::write(out_dir.join("efficiency.json"), serde_json::to_string_pretty(&eff_json)? + "\n")?;

    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    for (scenario, curves) in [(Scenario::A, curves_a), (Scenario::B, curves_b)] {
        if curves.is_empty() {
            continue;
        }
        let tag = scenario.dir_name();
        plot_curves(&plots.join(format!("auc_{tag}.svg")), &format!("AUC by iteration, scenario {}", scenario.as_str()), "AUC", curves, |r| r.auc)?;
        plot_curves(&plots.join(format!("f1_{tag}.svg")), &format!("F1 by iteration, scenario {}", scenario.as_str()), "F1", curves, |r| r.f1)?;
    }
    plot_best(&plots.join("best_auc_by_case.svg"), "Best AUC by labeled notes", "best AUC", &summary_a, &summary_b, |r| r.best_auc)?;
    plot_best(&plots.join("best_f1_by_case.svg"), "Best F1 by labeled notes", "best F1", &summary_a, &summary_b, |r| r.best_f1)?;
    Ok(Report { summary_a, summary_b, efficiency })
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn plot_curves(
    path: &Path,
    title: &str,
    metric: &str,
    curves: &[LearningCurve],
    value: impl Fn(&crate::metrics::EvalRecord) -> Option<f64>,
) -> Result<()> {
    let x_max = curves.iter().map(|c| c.last().iteration).max().unwrap_or(1).max(2) as f64;
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((1f64..x_max).log_scale(), 0f64..1f64)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("iteration").y_desc(metric).draw().map_err(plot_err)?;
    for (i, c) in curves.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        // undefined values break the line rather than plotting as zero
        let pts: Vec<(f64, f64)> = c.points().iter().filter_map(|r| value(r).map(|v| (r.iteration as f64, v))).collect();
        chart
            .draw_series(LineSeries::new(pts, color.stroke_width(2)))
            .map_err(plot_err)?
            .label(format!("{} notes", c.case_labels))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

fn plot_best(
    path: &Path,
    title: &str,
    metric: &str,
    a: &[SummaryRow],
    b: &[SummaryRow],
    value: impl Fn(&SummaryRow) -> Option<f64>,
) -> Result<()> {
    let x_max = a.iter().chain(b).map(|r| r.case_labels).max().unwrap_or(2).max(2) as f64;
    let x_min = a.iter().chain(b).map(|r| r.case_labels).min().unwrap_or(1).max(1) as f64;
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d((x_min * 0.8..x_max * 1.25).log_scale(), 0f64..1f64)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc("labeled notes").y_desc(metric).draw().map_err(plot_err)?;
    for (name, rows, color) in [("scenario A", a, RED), ("scenario B", b, BLUE)] {
        if rows.is_empty() {
            continue;
        }
        let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| value(r).map(|v| (r.case_labels as f64, v))).collect();
        chart
            .draw_series(LineSeries::new(pts.clone(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(name)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
        chart
            .draw_series(pts.into_iter().map(|p| Circle::new(p, 4, color.filled())))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::LowerRight)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EvalRecord;

    fn curve(n: usize, aucs: &[f64]) -> LearningCurve {
        let pts = aucs
            .iter()
            .enumerate()
            .map(|(i, &a)| EvalRecord {
                iteration: 20 * (i + 1),
                auc: Some(a),
                f1: if i == 0 { None } else { Some(a - 0.1) },
                precision: None,
                recall: None,
                n_on_vocab: 0,
            })
            .collect();
        LearningCurve::new(n, pts).unwrap()
    }

    #[test]
    fn efficiency_factor_and_degenerate_cases() {
        let a = vec![curve(600, &[0.5, 0.8]), curve(6_000, &[0.6, 0.95])];
        let b = vec![curve(600, &[0.7, 0.949]), curve(6_000, &[0.9, 0.97])];
        assert_eq!(efficiency_factor(&a, &b, 0.949).factor, Some(10.0));
        assert_eq!(efficiency_factor(&a, &a, 0.9).factor, Some(1.0));
        let e = efficiency_factor(&a, &[curve(600, &[0.6])], 0.9);
        assert_eq!((e.factor, e.describe()), (None, "unavailable".to_string()));
    }

    #[test]
    fn report_writes_the_output_tree() {
        let dir = tempfile::tempdir().unwrap();
        let a = vec![curve(20, &[0.5, 0.6]), curve(60, &[0.55, 0.7])];
        let b = vec![curve(20, &[0.6, 0.9]), curve(60, &[0.8, 0.95])];
        let r = report(&a, &b, dir.path(), 0.95).unwrap();
        assert_eq!(r.efficiency.factor, None);
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = summary.lines().collect();
        assert_eq!(lines[0], "scenario,case_labels,best_auc,best_f1,iterations_to_best");
        assert_eq!(lines[1], "A,20,0.6,0.5,40");
        assert_eq!(lines.len(), 5);
        let eff = std::fs::read_to_string(dir.path().join("efficiency.json")).unwrap();
        assert!(eff.contains("\"unavailable\""));
        for f in ["auc_scenario_a.svg", "f1_scenario_b.svg", "best_auc_by_case.svg"] {
            let svg = std::fs::read_to_string(dir.path().join("plots").join(f)).unwrap();
            assert!(svg.starts_with("<svg") && svg.contains("polyline"), "{f}");
        }
        assert!(dir.path().join("scenario_b/case_60/curve.csv").exists());
    }
}
