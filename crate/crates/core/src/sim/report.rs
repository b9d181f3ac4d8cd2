//! Per-scenario-type score tables.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::scenario::ScenarioType;

use super::metrics::MetricReport;

pub const METRIC_COLUMNS: [&str; 7] = ["collisions", "drivable", "ttc", "progress", "speed", "comfort", "composite"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scenario: ScenarioType,
    pub runs: usize,
    /// Means of [`METRIC_COLUMNS`]; `None` when the type has no runs.
    pub mean: Option<MetricReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    /// One row per scenario type, in expert-index order.
    pub rows: Vec<ScoreRow>,
    /// Mean over all runs.
    pub overall: Option<MetricReport>,
}

fn mean(reports: &[&MetricReport]) -> Option<MetricReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let m = |f: fn(&MetricReport) -> f64| reports.iter().map(|r| f(r)).sum::<f64>() / n;
    Some(MetricReport {
        collisions: m(|r| r.collisions),
        drivable: m(|r| r.drivable),
        ttc: m(|r| r.ttc),
        progress: m(|r| r.progress),
        speed: m(|r| r.speed),
        comfort: m(|r| r.comfort),
        composite: m(|r| r.composite),
    })
}

/// Groups per-run metrics by scenario type. Runs are summed in the given
/// order, so callers pass them sorted by scene id.
pub fn score_table(runs: &[(ScenarioType, MetricReport)]) -> ScoreTable {
    let rows = ScenarioType::ALL
        .iter()
        .map(|&t| {
            let sel: Vec<&MetricReport> = runs.iter().filter(|r| r.0 == t).map(|r| &r.1).collect();
            ScoreRow {
                scenario: t,
                runs: sel.len(),
                mean: mean(&sel),
            }
        })
        .collect();
    let all: Vec<&MetricReport> = runs.iter().map(|r| &r.1).collect();
    ScoreTable {
        rows,
        overall: mean(&all),
    }
}

impl ScoreTable {
    /// `scenario,runs,collisions,...,composite`, one row per type plus
    /// `all`. Empty types leave the metric cells blank.
    pub fn to_csv(&self) -> String {
        let mut out = format!("scenario,runs,{}\n", METRIC_COLUMNS.join(","));
        let line = |out: &mut String, name: &str, runs: usize, m: &Option<MetricReport>| {
            let cells: Vec<String> = match m {
                Some(m) => m.values().iter().map(|v| format!("{v:.6}")).collect(),
                None => vec![String::new(); METRIC_COLUMNS.len()],
            };
            let _ = writeln!(out, "{name},{runs},{}", cells.join(","));
        };
        for r in &self.rows {
            line(&mut out, r.scenario.name(), r.runs, &r.mean);
        }
        let total = self.rows.iter().map(|r| r.runs).sum();
        line(&mut out, "all", total, &self.overall);
        out
    }

    /// Grouped bar chart: one group per scenario type, one bar per metric.
    pub fn to_svg(&self) -> String {
        const W: f64 = 980.0;
        const H: f64 = 360.0;
        const LEFT: f64 = 50.0;
        const BOTTOM: f64 = 60.0;
        const TOP: f64 = 40.0;
        const COLORS: [&str; 7] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#222222"];
        let plot_h = H - TOP - BOTTOM;
        let group_w = (W - LEFT - 20.0) / self.rows.len() as f64;
        let bar_w = group_w / (METRIC_COLUMNS.len() as f64 + 1.5);
        let mut s = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"11\">\n"
        );
        let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let y = TOP + plot_h * (1.0 - v);
            let _ = writeln!(
                s,
                "<line x1=\"{LEFT}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#ddd\"/><text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{v:.2}</text>",
                W - 20.0,
                LEFT - 4.0,
                y + 4.0
            );
        }
        for (g, row) in self.rows.iter().enumerate() {
            let x0 = LEFT + g as f64 * group_w + bar_w * 0.75;
            if let Some(m) = &row.mean {
                for (i, v) in m.values().iter().enumerate() {
                    let h = plot_h * v.clamp(0.0, 1.0);
                    let _ = writeln!(
                        s,
                        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"{}\"/>",
                        x0 + i as f64 * bar_w,
                        TOP + plot_h - h,
                        bar_w * 0.9,
                        COLORS[i]
                    );
                }
            }
            let _ = writeln!(
                s,
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{} (n={})</text>",
                LEFT + (g as f64 + 0.5) * group_w,
                H - BOTTOM + 16.0,
                row.scenario.name(),
                row.runs
            );
        }
        for (i, name) in METRIC_COLUMNS.iter().enumerate() {
            let x = LEFT + i as f64 * 120.0;
            let _ = writeln!(
                s,
                "<rect x=\"{x:.1}\" y=\"12\" width=\"10\" height=\"10\" fill=\"{}\"/><text x=\"{:.1}\" y=\"21\">{name}</text>",
                COLORS[i],
                x + 14.0
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
