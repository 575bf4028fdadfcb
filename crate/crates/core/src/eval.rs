//! Forecast metrics over originally observed points, per-cell to grid
//! reconstruction, and run-level evaluation by horizon.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::grid::{Cell, Region, TrafficTensor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction and ground truth lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no observed points to evaluate")]
    NoObservedPoints,
    #[error("ground-truth mean over evaluated points is zero")]
    ZeroMeanGroundTruth,
    #[error("no prediction for cell ({row}, {col})")]
    MissingCell { row: usize, col: usize },
    #[error("alignment error: {0}")]
    AlignmentError(&'static str),
}

/// MAE, RMSE and NRMSE (RMSE over the ground-truth mean) over `n_points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub nrmse: f64,
    pub n_points: usize,
}

/// Metrics over the points where `include` is true.
pub fn metrics(pred: &[f64], gt: &[f64], include: &[bool]) -> Result<Metrics, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::LengthMismatch(pred.len(), gt.len()));
    }
    if include.len() != gt.len() {
        return Err(EvalError::LengthMismatch(include.len(), gt.len()));
    }
    let mut abs = 0.0;
    let mut sq = 0.0;
    let mut sum_gt = 0.0;
    let mut n = 0usize;
    for ((&p, &g), _) in pred.iter().zip(gt).zip(include).filter(|(_, &inc)| inc) {
        let e = p - g;
        abs += libm::fabs(e);
        sq += e * e;
        sum_gt += g;
        n += 1;
    }
    if n == 0 {
        return Err(EvalError::NoObservedPoints);
    }
    let nf = n as f64;
    let mean_gt = sum_gt / nf;
    if mean_gt == 0.0 {
        return Err(EvalError::ZeroMeanGroundTruth);
    }
    let rmse = libm::sqrt(sq / nf);
    Ok(Metrics {
        mae: abs / nf,
        rmse,
        nrmse: rmse / mean_gt,
        n_points: n,
    })
}

/// Assembles `K` frames over `region` (row-major) from per-cell series.
pub fn reconstruct_grid(
    cell_preds: &BTreeMap<Cell, Vec<f64>>,
    region: &Region,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let first = region.cells().next().ok_or(EvalError::AlignmentError("empty region"))?;
    let horizon = cell_preds
        .get(&first)
        .ok_or(EvalError::MissingCell {
            row: first.row,
            col: first.col,
        })?
        .len();
    let mut frames = alloc::vec![Vec::with_capacity(region.len()); horizon];
    for cell in region.cells() {
        let series = cell_preds.get(&cell).ok_or(EvalError::MissingCell {
            row: cell.row,
            col: cell.col,
        })?;
        if series.len() != horizon {
            return Err(EvalError::AlignmentError("cell series differ in length"));
        }
        for (frame, &v) in frames.iter_mut().zip(series) {
            frame.push(v);
        }
    }
    Ok(frames)
}

/// Whether a horizon-`h` score pools steps `1..=h` or uses step `h` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HorizonMode {
    #[default]
    Cumulative,
    AtStep,
}

/// A K-step forecast for one cell issued at `anchor_ms` (the last history
/// frame); step `k` targets `anchor_ms + k * step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub anchor_ms: i64,
    pub cell: Cell,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub horizon: usize,
    pub mode: HorizonMode,
    pub overall: Metrics,
    /// Step-only metrics for steps `1..=horizon`; `None` where a step has no
    /// observed points.
    pub per_step: Vec<Option<Metrics>>,
    pub per_cell: Option<BTreeMap<Cell, Metrics>>,
}

struct Point {
    step: usize,
    cell: Cell,
    pred: f64,
    gt: f64,
    observed: bool,
}

/// Scores predictions against `test`, counting only observed points.
pub fn evaluate_run(
    predictions: &[Prediction],
    test: &TrafficTensor,
    horizons: &[usize],
    mode: HorizonMode,
    per_cell: bool,
) -> Result<Vec<MetricsReport>, EvalError> {
    let max_h = *horizons
        .iter()
        .max()
        .ok_or(EvalError::AlignmentError("no horizons requested"))?;
    if horizons.contains(&0) {
        return Err(EvalError::AlignmentError("horizons start at 1"));
    }
    if predictions.is_empty() {
        return Err(EvalError::NoObservedPoints);
    }
    let mut points = Vec::with_capacity(predictions.len() * max_h);
    for p in predictions {
        if p.values.len() < max_h {
            return Err(EvalError::AlignmentError("prediction shorter than requested horizon"));
        }
        if p.cell.row == 0 || p.cell.col == 0 || p.cell.row > test.height() || p.cell.col > test.width() {
            return Err(EvalError::AlignmentError("prediction cell outside the grid"));
        }
        for step in 1..=max_h {
            let t = test
                .frame_at(p.anchor_ms + step as i64 * test.step_ms())
                .ok_or(EvalError::AlignmentError("target time outside the test tensor"))?;
            points.push(Point {
                step,
                cell: p.cell,
                pred: p.values[step - 1],
                gt: test.value(t, p.cell),
                observed: test.is_observed(t, p.cell),
            });
        }
    }
    let score = |keep: &dyn Fn(&Point) -> bool| -> Result<Metrics, EvalError> {
        let (mut pred, mut gt, mut inc) = (Vec::new(), Vec::new(), Vec::new());
        for pt in points.iter().filter(|pt| keep(pt)) {
            pred.push(pt.pred);
            gt.push(pt.gt);
            inc.push(pt.observed);
        }
        metrics(&pred, &gt, &inc)
    };
    horizons
        .iter()
        .map(|&h| {
            let in_horizon = move |pt: &Point| match mode {
                HorizonMode::Cumulative => pt.step <= h,
                HorizonMode::AtStep => pt.step == h,
            };
            let overall = score(&in_horizon)?;
            let per_step = (1..=h).map(|k| score(&|pt: &Point| pt.step == k).ok()).collect();
            let per_cell = if per_cell {
                let mut cells: Vec<Cell> = predictions.iter().map(|p| p.cell).collect();
                cells.sort();
                cells.dedup();
                let mut map = BTreeMap::new();
                for c in cells {
                    if let Ok(m) = score(&|pt: &Point| pt.cell == c && in_horizon(pt)) {
                        map.insert(c, m);
                    }
                }
                Some(map)
            } else {
                None
            };
            Ok(MetricsReport {
                horizon: h,
                mode,
                overall,
                per_step,
                per_cell,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn metric_examples() {
        let m = metrics(&[3.0, 4.0], &[3.0, 4.0], &[true, true]).unwrap();
        assert_eq!((m.mae, m.rmse, m.nrmse), (0.0, 0.0, 0.0));
        let m = metrics(&[110.0, 190.0], &[100.0, 200.0], &[true, true]).unwrap();
        assert_eq!((m.mae, m.rmse), (10.0, 10.0));
        assert!((m.nrmse - 10.0 / 150.0).abs() < 1e-15);
        let m = metrics(&[110.0, 190.0], &[100.0, 200.0], &[true, false]).unwrap();
        assert_eq!((m.mae, m.rmse, m.nrmse, m.n_points), (10.0, 10.0, 0.1, 1));
    }

    #[test]
    fn metric_errors() {
        assert_eq!(metrics(&[1.0], &[1.0], &[false]), Err(EvalError::NoObservedPoints));
        assert_eq!(metrics(&[1.0], &[0.0], &[true]), Err(EvalError::ZeroMeanGroundTruth));
        assert_eq!(metrics(&[1.0], &[1.0, 2.0], &[true]), Err(EvalError::LengthMismatch(1, 2)));
    }

    #[test]
    fn reconstruct_shapes() {
        let one = Region::single(Cell::new(3, 4));
        let map = BTreeMap::from([(Cell::new(3, 4), vec![1.0, 2.0])]);
        assert_eq!(reconstruct_grid(&map, &one).unwrap(), [vec![1.0], vec![2.0]]);

        let region = Region::central_milan();
        let map: BTreeMap<_, _> = region
            .cells()
            .map(|c| (c, (0..36).map(|k| (c.row * 1000 + c.col * 10 + k) as f64).collect()))
            .collect();
        let frames = reconstruct_grid(&map, &region).unwrap();
        assert_eq!(frames.len(), 36);
        assert!(frames.iter().all(|f| f.len() == 121));
        // Row-major: index 12 is (46, 46).
        assert_eq!(frames[5][12], (46_000 + 460 + 5) as f64);

        let mut holed = map.clone();
        holed.remove(&Cell::new(50, 51));
        assert_eq!(
            reconstruct_grid(&holed, &region),
            Err(EvalError::MissingCell { row: 50, col: 51 })
        );
    }

    fn tensor(values: Vec<f64>, observed: Vec<bool>) -> TrafficTensor {
        TrafficTensor::new(1, 1, 0, 10, values, observed).unwrap()
    }

    #[test]
    fn run_by_horizon() {
        let test = tensor(vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![true, true, true, false, true]);
        let preds = [
            Prediction {
                anchor_ms: 0,
                cell: Cell::new(1, 1),
                values: vec![2.0, 4.0, 4.0],
            },
            Prediction {
                anchor_ms: 10,
                cell: Cell::new(1, 1),
                values: vec![3.0, 0.0, 5.0],
            },
        ];
        let reports = evaluate_run(&preds, &test, &[1, 3], HorizonMode::Cumulative, true).unwrap();
        assert_eq!(reports.len(), 2);
        // Step 1 targets frames 1 and 2, both exact.
        assert_eq!(reports[0].overall.mae, 0.0);
        // Steps 1..=3: errors 0, 1, 0 (frame 3 excluded) and 0, [excluded], 0.
        assert_eq!(reports[1].overall.n_points, 4);
        assert_eq!(reports[1].overall.mae, 0.25);
        assert_eq!(reports[1].per_step.len(), 3);
        assert_eq!(reports[1].per_step[1].unwrap().n_points, 1);
        assert_eq!(reports[1].per_cell.as_ref().unwrap().len(), 1);

        let at = evaluate_run(&preds, &test, &[3], HorizonMode::AtStep, false).unwrap();
        assert_eq!(at[0].overall.n_points, 1);
    }

    #[test]
    fn run_errors() {
        let test = tensor(vec![1.0, 2.0, 3.0], vec![true, false, false]);
        let p = |anchor_ms, values: Vec<f64>| Prediction {
            anchor_ms,
            cell: Cell::new(1, 1),
            values,
        };
        assert_eq!(
            evaluate_run(&[p(0, vec![0.0, 0.0])], &test, &[2], HorizonMode::Cumulative, false),
            Err(EvalError::NoObservedPoints)
        );
        assert!(matches!(
            evaluate_run(&[p(10, vec![0.0, 0.0])], &test, &[2], HorizonMode::Cumulative, false),
            Err(EvalError::AlignmentError(_))
        ));
        assert!(matches!(
            evaluate_run(&[p(0, vec![0.0])], &test, &[2], HorizonMode::Cumulative, false),
            Err(EvalError::AlignmentError(_))
        ));
    }
}
