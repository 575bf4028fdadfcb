//! Metric reports as tab-separated text and as a single JSON document.

use serde::Serialize;
use stvl_core::eval::{HorizonMode, Metrics, MetricsReport};

#[derive(Serialize)]
struct Block {
    horizon: usize,
    mae: f64,
    rmse: f64,
    nrmse: f64,
    n_points: usize,
    per_step: Vec<Option<Step>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_cell: Option<Vec<CellBlock>>,
}

#[derive(Serialize)]
struct Step {
    mae: f64,
    rmse: f64,
    nrmse: f64,
    n_points: usize,
}

#[derive(Serialize)]
struct CellBlock {
    row: usize,
    col: usize,
    mae: f64,
    rmse: f64,
    nrmse: f64,
    n_points: usize,
}

#[derive(Serialize)]
struct Document {
    mode: &'static str,
    reports: Vec<Block>,
}

pub fn mode_name(mode: HorizonMode) -> &'static str {
    match mode {
        HorizonMode::Cumulative => "cumulative",
        HorizonMode::AtStep => "at-step",
    }
}

fn step(m: &Metrics) -> Step {
    Step {
        mae: m.mae,
        rmse: m.rmse,
        nrmse: m.nrmse,
        n_points: m.n_points,
    }
}

pub fn to_json(reports: &[MetricsReport]) -> String {
    let doc = Document {
        mode: reports.first().map_or("cumulative", |r| mode_name(r.mode)),
        reports: reports
            .iter()
            .map(|r| Block {
                horizon: r.horizon,
                mae: r.overall.mae,
                rmse: r.overall.rmse,
                nrmse: r.overall.nrmse,
                n_points: r.overall.n_points,
                per_step: r.per_step.iter().map(|m| m.as_ref().map(step)).collect(),
                per_cell: r.per_cell.as_ref().map(|cells| {
                    cells
                        .iter()
                        .map(|(c, m)| CellBlock {
                            row: c.row,
                            col: c.col,
                            mae: m.mae,
                            rmse: m.rmse,
                            nrmse: m.nrmse,
                            n_points: m.n_points,
                        })
                        .collect()
                }),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("finite report serializes");
    s.push('\n');
    s
}

/// One line per horizon under a `horizon mae rmse nrmse n_points` header.
pub fn to_tsv(reports: &[MetricsReport]) -> String {
    let mut s = String::from("horizon\tmae\trmse\tnrmse\tn_points\n");
    for r in reports {
        let m = r.overall;
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.horizon, m.mae, m.rmse, m.nrmse, m.n_points));
    }
    s
}

/// Parses the TSV form back into `(horizon, metrics)` rows.
pub fn parse_tsv(text: &str) -> Option<Vec<(usize, Metrics)>> {
    let mut lines = text.lines();
    if lines.next()? != "horizon\tmae\trmse\tnrmse\tn_points" {
        return None;
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 5 {
                return None;
            }
            Some((
                f[0].parse().ok()?,
                Metrics {
                    mae: f[1].parse().ok()?,
                    rmse: f[2].parse().ok()?,
                    nrmse: f[3].parse().ok()?,
                    n_points: f[4].parse().ok()?,
                },
            ))
        })
        .collect()
}
