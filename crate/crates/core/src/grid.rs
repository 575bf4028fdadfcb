//! Grid traffic tensors: construction from raw records, linear imputation,
//! time splits and per-cell sample windows.
//!
//! Grid coordinates are 1-based `(row, col)` pairs as used by the dataset;
//! frame indices are 0-based.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Range, RangeInclusive};

use crate::civil;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("record {record}: cell ({row}, {col}) lies outside the {height}x{width} grid")]
    GridOverflow {
        record: usize,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("record {record}: square id {id} outside 1..={max}")]
    SquareIdOutOfRange { record: usize, id: u64, max: u64 },
    #[error("record {record}: timestamp {timestamp_ms} is not on the {step_ms} ms frame grid")]
    MisalignedTimestamp {
        record: usize,
        timestamp_ms: i64,
        step_ms: i64,
    },
    #[error("record {record}: observed value {value} is negative or not finite")]
    InvalidValue { record: usize, value: f64 },
    #[error("cell ({row}, {col}) has no observed value to impute from")]
    AllMissingCell { row: usize, col: usize },
    #[error("split range {start}..{end} lies outside the tensor span {span_start}..{span_end}")]
    RangeOutOfBounds {
        start: i64,
        end: i64,
        span_start: i64,
        span_end: i64,
    },
    #[error("split ranges must be ordered train <= val <= test and non-inverted")]
    UnorderedSplit,
    #[error("history {history} + horizon {horizon} exceeds {frames} frames")]
    WindowTooLong {
        history: usize,
        horizon: usize,
        frames: usize,
    },
    #[error("window history, horizon and stride must all be at least 1")]
    EmptyWindow,
    #[error("region rows {rows:?} cols {cols:?} is empty or outside the {height}x{width} grid")]
    RegionOutOfGrid {
        rows: RangeInclusive<usize>,
        cols: RangeInclusive<usize>,
        height: usize,
        width: usize,
    },
    #[error("tensor shape mismatch: {0}")]
    Shape(&'static str),
    #[error("step must be positive")]
    NonPositiveStep,
}

/// A 1-based grid coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }
}

/// Inclusive 1-based rectangle of cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    rows: RangeInclusive<usize>,
    cols: RangeInclusive<usize>,
}

impl Region {
    pub fn new(rows: RangeInclusive<usize>, cols: RangeInclusive<usize>) -> Self {
        Region { rows, cols }
    }

    pub fn single(cell: Cell) -> Self {
        Region::new(cell.row..=cell.row, cell.col..=cell.col)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Region::new(1..=height, 1..=width)
    }

    /// The `[45, 55] x [45, 55]` evaluation window used on the 100x100 grid.
    pub fn central_milan() -> Self {
        Region::new(45..=55, 45..=55)
    }

    pub fn rows(&self) -> RangeInclusive<usize> {
        self.rows.clone()
    }

    pub fn cols(&self) -> RangeInclusive<usize> {
        self.cols.clone()
    }

    pub fn height(&self) -> usize {
        (self.rows.end() + 1).saturating_sub(*self.rows.start())
    }

    pub fn width(&self) -> usize {
        (self.cols.end() + 1).saturating_sub(*self.cols.start())
    }

    pub fn len(&self) -> usize {
        self.height() * self.width()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, cell: Cell) -> bool {
        self.rows.contains(&cell.row) && self.cols.contains(&cell.col)
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.rows
            .clone()
            .flat_map(move |r| self.cols.clone().map(move |c| Cell::new(r, c)))
    }

    pub fn check_within(&self, height: usize, width: usize) -> Result<(), GridError> {
        let ok = !self.is_empty()
            && *self.rows.start() >= 1
            && *self.cols.start() >= 1
            && *self.rows.end() <= height
            && *self.cols.end() <= width;
        if ok {
            Ok(())
        } else {
            Err(GridError::RegionOutOfGrid {
                rows: self.rows(),
                cols: self.cols(),
                height,
                width,
            })
        }
    }
}

/// `T x H x W` traffic values on a fixed time step.
///
/// `observed[i]` is true exactly where the value was measured. Unobserved
/// points are `NaN` until imputed. Equality is bitwise on values, so
/// missing points compare equal.
#[derive(Debug, Clone)]
pub struct TrafficTensor {
    frames: usize,
    height: usize,
    width: usize,
    start_ms: i64,
    step_ms: i64,
    values: Vec<f64>,
    observed: Vec<bool>,
}

impl PartialEq for TrafficTensor {
    fn eq(&self, other: &Self) -> bool {
        (self.frames, self.height, self.width, self.start_ms, self.step_ms)
            == (other.frames, other.height, other.width, other.start_ms, other.step_ms)
            && self.observed == other.observed
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl TrafficTensor {
    pub fn new(
        height: usize,
        width: usize,
        start_ms: i64,
        step_ms: i64,
        values: Vec<f64>,
        observed: Vec<bool>,
    ) -> Result<Self, GridError> {
        if step_ms <= 0 {
            return Err(GridError::NonPositiveStep);
        }
        let plane = height * width;
        if plane == 0 || values.len() % plane != 0 {
            return Err(GridError::Shape("values length is not a multiple of H*W"));
        }
        if observed.len() != values.len() {
            return Err(GridError::Shape("mask and values differ in length"));
        }
        for (i, (&v, &o)) in values.iter().zip(&observed).enumerate() {
            if o && !(v.is_finite() && v >= 0.0) {
                return Err(GridError::InvalidValue { record: i, value: v });
            }
        }
        Ok(TrafficTensor {
            frames: values.len() / plane,
            height,
            width,
            start_ms,
            step_ms,
            values,
            observed,
        })
    }

    /// All-missing tensor.
    pub fn missing(frames: usize, height: usize, width: usize, start_ms: i64, step_ms: i64) -> Self {
        let n = frames * height * width;
        TrafficTensor {
            frames,
            height,
            width,
            start_ms,
            step_ms,
            values: vec![f64::NAN; n],
            observed: vec![false; n],
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn start_ms(&self) -> i64 {
        self.start_ms
    }

    pub fn step_ms(&self) -> i64 {
        self.step_ms
    }

    /// Exclusive end of the covered time span.
    pub fn end_ms(&self) -> i64 {
        self.start_ms + self.frames as i64 * self.step_ms
    }

    pub fn timestamp(&self, t: usize) -> i64 {
        self.start_ms + t as i64 * self.step_ms
    }

    pub fn timestamps(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.frames).map(|t| self.timestamp(t))
    }

    /// Frame index of an exact timestamp, if it lies on the grid.
    pub fn frame_at(&self, ms: i64) -> Option<usize> {
        let off = ms - self.start_ms;
        if off < 0 || off % self.step_ms != 0 {
            return None;
        }
        let t = (off / self.step_ms) as usize;
        (t < self.frames).then_some(t)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed_mask(&self) -> &[bool] {
        &self.observed
    }

    pub fn index(&self, t: usize, cell: Cell) -> usize {
        debug_assert!(cell.row >= 1 && cell.col >= 1);
        (t * self.height + cell.row - 1) * self.width + cell.col - 1
    }

    pub fn value(&self, t: usize, cell: Cell) -> f64 {
        self.values[self.index(t, cell)]
    }

    pub fn is_observed(&self, t: usize, cell: Cell) -> bool {
        self.observed[self.index(t, cell)]
    }

    /// Row-major `H x W` plane of frame `t`.
    pub fn frame(&self, t: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[t * plane..(t + 1) * plane]
    }

    pub fn cell_series(&self, cell: Cell) -> Vec<f64> {
        (0..self.frames).map(|t| self.value(t, cell)).collect()
    }

    /// True when no value is missing.
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn observed_fraction(&self) -> f64 {
        if self.observed.is_empty() {
            return 0.0;
        }
        self.observed.iter().filter(|&&o| o).count() as f64 / self.observed.len() as f64
    }

    /// Copy of frames `range`, re-based in time.
    pub fn slice_frames(&self, range: Range<usize>) -> TrafficTensor {
        let plane = self.height * self.width;
        let span = range.start * plane..range.end * plane;
        TrafficTensor {
            frames: range.len(),
            height: self.height,
            width: self.width,
            start_ms: self.timestamp(range.start),
            step_ms: self.step_ms,
            values: self.values[span.clone()].to_vec(),
            observed: self.observed[span].to_vec(),
        }
    }

    /// Concatenates tensors that are adjacent in time on the same grid.
    pub fn concat(parts: &[&TrafficTensor]) -> Result<TrafficTensor, GridError> {
        let first = parts.first().ok_or(GridError::Shape("nothing to concatenate"))?;
        let mut out = TrafficTensor::missing(0, first.height, first.width, first.start_ms, first.step_ms);
        for p in parts {
            if (p.height, p.width, p.step_ms) != (out.height, out.width, out.step_ms) {
                return Err(GridError::Shape("grids or steps differ"));
            }
            if p.start_ms != out.end_ms() {
                return Err(GridError::Shape("parts are not adjacent in time"));
            }
            out.values.extend_from_slice(&p.values);
            out.observed.extend_from_slice(&p.observed);
            out.frames += p.frames;
        }
        Ok(out)
    }
}

/// One raw measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub timestamp_ms: i64,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// Declared geometry for [`build_tensor`]. Missing `start_ms`/`frames` are
/// inferred from the records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub step_ms: i64,
    pub start_ms: Option<i64>,
    pub frames: Option<usize>,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, step_ms: i64) -> Self {
        GridSpec {
            height,
            width,
            step_ms,
            start_ms: None,
            frames: None,
        }
    }
}

/// Dense tensor from unordered records. Records for the same
/// `(t, row, col)` are summed; a point is observed iff at least one record
/// hit it.
pub fn build_tensor(spec: GridSpec, records: &[Record]) -> Result<TrafficTensor, GridError> {
    if spec.step_ms <= 0 {
        return Err(GridError::NonPositiveStep);
    }
    if spec.height == 0 || spec.width == 0 {
        return Err(GridError::Shape("grid must be at least 1x1"));
    }
    let start = spec
        .start_ms
        .or_else(|| records.iter().map(|r| r.timestamp_ms).min())
        .unwrap_or(0);
    let mut frame_of = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let off = r.timestamp_ms - start;
        if off < 0 || off % spec.step_ms != 0 {
            return Err(GridError::MisalignedTimestamp {
                record: i,
                timestamp_ms: r.timestamp_ms,
                step_ms: spec.step_ms,
            });
        }
        if r.row == 0 || r.col == 0 || r.row > spec.height || r.col > spec.width {
            return Err(GridError::GridOverflow {
                record: i,
                row: r.row,
                col: r.col,
                height: spec.height,
                width: spec.width,
            });
        }
        if !(r.value.is_finite() && r.value >= 0.0) {
            return Err(GridError::InvalidValue { record: i, value: r.value });
        }
        frame_of.push((off / spec.step_ms) as usize);
    }
    let inferred = frame_of.iter().max().map_or(0, |&t| t + 1);
    let frames = spec.frames.unwrap_or(inferred);
    if let Some((i, _)) = frame_of.iter().enumerate().find(|(_, &t)| t >= frames) {
        return Err(GridError::MisalignedTimestamp {
            record: i,
            timestamp_ms: records[i].timestamp_ms,
            step_ms: spec.step_ms,
        });
    }
    let mut tensor = TrafficTensor::missing(frames, spec.height, spec.width, start, spec.step_ms);
    for (r, &t) in records.iter().zip(&frame_of) {
        let i = tensor.index(t, Cell::new(r.row, r.col));
        if tensor.observed[i] {
            tensor.values[i] += r.value;
        } else {
            tensor.values[i] = r.value;
            tensor.observed[i] = true;
        }
    }
    Ok(tensor)
}

/// Row-major square id (1-based) to cell: `row = ceil(id / W)`,
/// `col = (id - 1) mod W + 1`.
pub fn square_to_cell(id: u64, height: usize, width: usize) -> Option<Cell> {
    let max = (height * width) as u64;
    if id == 0 || id > max {
        return None;
    }
    let w = width as u64;
    Some(Cell::new(id.div_ceil(w) as usize, ((id - 1) % w + 1) as usize))
}

/// Fills every missing point by linear interpolation between the nearest
/// observed neighbours in time; leading and trailing gaps take the nearest
/// observed value. Observed points and the mask are untouched.
pub fn impute_linear(tensor: &TrafficTensor) -> Result<TrafficTensor, GridError> {
    let mut out = tensor.clone();
    if tensor.frames == 0 {
        return Ok(out);
    }
    let mut anchors = Vec::with_capacity(tensor.frames);
    for row in 1..=tensor.height {
        for col in 1..=tensor.width {
            let cell = Cell::new(row, col);
            anchors.clear();
            anchors.extend((0..tensor.frames).filter(|&t| tensor.is_observed(t, cell)));
            let (&first, &last) = match (anchors.first(), anchors.last()) {
                (Some(f), Some(l)) => (f, l),
                _ => return Err(GridError::AllMissingCell { row, col }),
            };
            let v_first = tensor.value(first, cell);
            for t in 0..first {
                out.values[tensor.index(t, cell)] = v_first;
            }
            let v_last = tensor.value(last, cell);
            for t in last + 1..tensor.frames {
                out.values[tensor.index(t, cell)] = v_last;
            }
            for pair in anchors.windows(2) {
                let (t0, t1) = (pair[0], pair[1]);
                if t1 == t0 + 1 {
                    continue;
                }
                let (v0, v1) = (tensor.value(t0, cell), tensor.value(t1, cell));
                let span = (t1 - t0) as f64;
                for t in t0 + 1..t1 {
                    out.values[tensor.index(t, cell)] = v0 + (t - t0) as f64 / span * (v1 - v0);
                }
            }
        }
    }
    Ok(out)
}

/// Half-open epoch-millisecond ranges for the three splits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Range<i64>,
    pub val: Range<i64>,
    pub test: Range<i64>,
}

/// UTC offset of the Milan dataset's local time over Nov 2013 – Jan 2014 (CET).
pub const MILAN_UTC_OFFSET_MINUTES: i64 = 60;
pub const TEN_MINUTES_MS: i64 = 10 * civil::MS_PER_MINUTE;

impl SplitSpec {
    /// Train 2013-11-01..12-19, val ..12-26, test ..2014-01-02, local midnight.
    pub fn milan() -> Self {
        let day = |y, m, d| civil::local_midnight_ms(y, m, d, MILAN_UTC_OFFSET_MINUTES);
        SplitSpec {
            train: day(2013, 11, 1)..day(2013, 12, 19),
            val: day(2013, 12, 19)..day(2013, 12, 26),
            test: day(2013, 12, 26)..day(2014, 1, 2),
        }
    }

    /// Consecutive splits of whole days starting at `start_ms`.
    pub fn by_days(start_ms: i64, train_days: i64, val_days: i64, test_days: i64) -> Self {
        let at = |d: i64| start_ms + d * civil::MS_PER_DAY;
        SplitSpec {
            train: at(0)..at(train_days),
            val: at(train_days)..at(train_days + val_days),
            test: at(train_days + val_days)..at(train_days + val_days + test_days),
        }
    }

    fn is_ordered(&self) -> bool {
        self.train.start <= self.train.end
            && self.train.end <= self.val.start
            && self.val.start <= self.val.end
            && self.val.end <= self.test.start
            && self.test.start <= self.test.end
    }
}

/// The three splits of a tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: TrafficTensor,
    pub val: TrafficTensor,
    pub test: TrafficTensor,
}

/// Partitions the time axis; a frame belongs to the range containing its
/// timestamp.
pub fn split(tensor: &TrafficTensor, spec: &SplitSpec) -> Result<Splits, GridError> {
    if !spec.is_ordered() {
        return Err(GridError::UnorderedSplit);
    }
    let span = tensor.start_ms..tensor.end_ms();
    let frames_in = |r: &Range<i64>| -> Result<Range<usize>, GridError> {
        if r.start < span.start || r.end > span.end {
            return Err(GridError::RangeOutOfBounds {
                start: r.start,
                end: r.end,
                span_start: span.start,
                span_end: span.end,
            });
        }
        let first = |ms: i64| (ms - tensor.start_ms + tensor.step_ms - 1).div_euclid(tensor.step_ms) as usize;
        Ok(first(r.start)..first(r.end))
    };
    Ok(Splits {
        train: tensor.slice_frames(frames_in(&spec.train)?),
        val: tensor.slice_frames(frames_in(&spec.val)?),
        test: tensor.slice_frames(frames_in(&spec.test)?),
    })
}

/// History length, horizon and anchor stride for windowing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowConfig {
    pub history: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            history: 12,
            horizon: 36,
            stride: 1,
        }
    }
}

impl WindowConfig {
    pub fn anchor_count(&self, frames: usize) -> usize {
        if self.history + self.horizon > frames || self.stride == 0 {
            return 0;
        }
        (frames - self.history - self.horizon) / self.stride + 1
    }
}

/// One per-cell training/evaluation sample.
///
/// `anchor` is the index of the last history frame; the history covers the
/// full grid over frames `anchor + 1 - S ..= anchor`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample<'a> {
    tensor: &'a TrafficTensor,
    pub anchor: usize,
    pub cell: Cell,
    pub cell_history: Vec<f64>,
    pub target: Vec<f64>,
    pub target_observed: Vec<bool>,
}

impl<'a> WindowSample<'a> {
    pub fn tensor(&self) -> &'a TrafficTensor {
        self.tensor
    }

    pub fn history_frames(&self) -> Range<usize> {
        self.anchor + 1 - self.cell_history.len()..self.anchor + 1
    }

    /// Row-major `S x H x W` history values.
    pub fn history(&self) -> &'a [f64] {
        let plane = self.tensor.height * self.tensor.width;
        let r = self.history_frames();
        &self.tensor.values[r.start * plane..r.end * plane]
    }

    pub fn anchor_ms(&self) -> i64 {
        self.tensor.timestamp(self.anchor)
    }
}

/// Iterator over every `(anchor, cell)` pair, anchors outermost.
#[derive(Debug, Clone)]
pub struct Windows<'a> {
    tensor: &'a TrafficTensor,
    config: WindowConfig,
    cells: Vec<Cell>,
    next_anchor: usize,
    last_anchor: usize,
    cell_idx: usize,
}

impl<'a> Iterator for Windows<'a> {
    type Item = WindowSample<'a>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.cells.is_empty() || self.next_anchor > self.last_anchor {
            return None;
        }
        let anchor = self.next_anchor;
        let cell = self.cells[self.cell_idx];
        self.cell_idx += 1;
        if self.cell_idx == self.cells.len() {
            self.cell_idx = 0;
            self.next_anchor += self.config.stride;
        }
        let t = self.tensor;
        let hist = anchor + 1 - self.config.history..anchor + 1;
        let fut = anchor + 1..anchor + 1 + self.config.horizon;
        Some(WindowSample {
            tensor: t,
            anchor,
            cell,
            cell_history: hist.map(|i| t.value(i, cell)).collect(),
            target: fut.clone().map(|i| t.value(i, cell)).collect(),
            target_observed: fut.map(|i| t.is_observed(i, cell)).collect(),
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.len();
        (n, Some(n))
    }
}

impl ExactSizeIterator for Windows<'_> {
    fn len(&self) -> usize {
        if self.cells.is_empty() || self.next_anchor > self.last_anchor {
            return 0;
        }
        let anchors = (self.last_anchor - self.next_anchor) / self.config.stride + 1;
        anchors * self.cells.len() - self.cell_idx
    }
}

/// Windows for every stride-aligned anchor and every cell of `region`.
pub fn make_windows<'a>(
    tensor: &'a TrafficTensor,
    config: WindowConfig,
    region: &Region,
) -> Result<Windows<'a>, GridError> {
    if config.history == 0 || config.horizon == 0 || config.stride == 0 {
        return Err(GridError::EmptyWindow);
    }
    if config.history + config.horizon > tensor.frames {
        return Err(GridError::WindowTooLong {
            history: config.history,
            horizon: config.horizon,
            frames: tensor.frames,
        });
    }
    region.check_within(tensor.height, tensor.width)?;
    Ok(Windows {
        tensor,
        config,
        cells: region.cells().collect(),
        next_anchor: config.history - 1,
        last_anchor: tensor.frames - config.horizon - 1,
        cell_idx: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_tensor(series: &[Option<f64>]) -> TrafficTensor {
        let values = series.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let observed = series.iter().map(|v| v.is_some()).collect();
        TrafficTensor::new(1, 1, 0, TEN_MINUTES_MS, values, observed).unwrap()
    }

    fn rec(t: i64, row: usize, col: usize, value: f64) -> Record {
        Record {
            timestamp_ms: t,
            row,
            col,
            value,
        }
    }

    #[test]
    fn duplicates_are_summed() {
        let spec = GridSpec::new(2, 2, 600_000);
        let t = build_tensor(spec, &[rec(0, 2, 1, 3.0), rec(0, 2, 1, 4.0)]).unwrap();
        assert_eq!(t.value(0, Cell::new(2, 1)), 7.0);
        assert!(t.is_observed(0, Cell::new(2, 1)));
        assert!(!t.is_observed(0, Cell::new(1, 1)));
    }

    #[test]
    fn empty_records_with_declared_shape() {
        let spec = GridSpec {
            frames: Some(1),
            ..GridSpec::new(2, 2, 600_000)
        };
        let t = build_tensor(spec, &[]).unwrap();
        assert_eq!((t.frames(), t.height(), t.width()), (1, 2, 2));
        assert!(t.observed_mask().iter().all(|&o| !o));
    }

    #[test]
    fn single_record() {
        let t = build_tensor(GridSpec::new(2, 2, 600_000), &[rec(5, 1, 1, 5.0)]).unwrap();
        assert_eq!(t.value(0, Cell::new(1, 1)), 5.0);
        assert_eq!(t.observed_fraction(), 0.25);
        assert_eq!(t.start_ms(), 5);
    }

    #[test]
    fn overflow_and_misalignment() {
        let spec = GridSpec::new(2, 2, 600_000);
        assert!(matches!(
            build_tensor(spec, &[rec(0, 3, 1, 1.0)]),
            Err(GridError::GridOverflow { record: 0, row: 3, .. })
        ));
        assert!(matches!(
            build_tensor(spec, &[rec(0, 1, 1, 1.0), rec(7, 1, 1, 1.0)]),
            Err(GridError::MisalignedTimestamp { record: 1, .. })
        ));
        assert!(matches!(
            build_tensor(spec, &[rec(0, 1, 1, -1.0)]),
            Err(GridError::InvalidValue { .. })
        ));
    }

    #[test]
    fn square_ids() {
        assert_eq!(square_to_cell(1, 100, 100), Some(Cell::new(1, 1)));
        assert_eq!(square_to_cell(100, 100, 100), Some(Cell::new(1, 100)));
        assert_eq!(square_to_cell(101, 100, 100), Some(Cell::new(2, 1)));
        assert_eq!(square_to_cell(10_000, 100, 100), Some(Cell::new(100, 100)));
        assert_eq!(square_to_cell(0, 100, 100), None);
        assert_eq!(square_to_cell(10_001, 100, 100), None);
    }

    #[test]
    fn impute_interior_gap() {
        let t = series_tensor(&[Some(10.0), None, None, None, Some(18.0)]);
        let out = impute_linear(&t).unwrap();
        assert_eq!(out.values(), [10.0, 12.0, 14.0, 16.0, 18.0]);
        assert_eq!(out.observed_mask(), t.observed_mask());
    }

    #[test]
    fn impute_edges_extend_flat() {
        let out = impute_linear(&series_tensor(&[None, Some(5.0), None])).unwrap();
        assert_eq!(out.values(), [5.0, 5.0, 5.0]);
    }

    #[test]
    fn impute_identity_and_all_missing() {
        let t = series_tensor(&[Some(1.0), Some(4.0), Some(2.0)]);
        assert_eq!(impute_linear(&t).unwrap(), t);
        assert_eq!(
            impute_linear(&series_tensor(&[None, None])),
            Err(GridError::AllMissingCell { row: 1, col: 1 })
        );
    }

    #[test]
    fn milan_split_counts() {
        let spec = SplitSpec::milan();
        let frames = ((spec.test.end - spec.train.start) / TEN_MINUTES_MS) as usize;
        let t = TrafficTensor::missing(frames, 1, 1, spec.train.start, TEN_MINUTES_MS);
        let s = split(&t, &spec).unwrap();
        assert_eq!(s.train.frames(), 6_912);
        assert_eq!(s.val.frames(), 1_008);
        assert_eq!(s.test.frames(), 1_008);
        assert_eq!(s.val.start_ms(), spec.val.start);
    }

    #[test]
    fn split_errors_and_empty_val() {
        let t = TrafficTensor::missing(10, 1, 1, 0, 10);
        let ok = SplitSpec {
            train: 0..50,
            val: 50..50,
            test: 50..100,
        };
        let s = split(&t, &ok).unwrap();
        assert_eq!((s.train.frames(), s.val.frames(), s.test.frames()), (5, 0, 5));
        let too_far = SplitSpec {
            test: 50..110,
            ..ok.clone()
        };
        assert!(matches!(split(&t, &too_far), Err(GridError::RangeOutOfBounds { .. })));
        let unordered = SplitSpec {
            val: 40..60,
            ..ok
        };
        assert_eq!(split(&t, &unordered), Err(GridError::UnorderedSplit));
    }

    #[test]
    fn window_counts() {
        let cfg = WindowConfig {
            history: 12,
            horizon: 36,
            stride: 1,
        };
        let one = Region::single(Cell::new(1, 1));
        let t48 = TrafficTensor::missing(48, 1, 1, 0, 1);
        assert_eq!(make_windows(&t48, cfg, &one).unwrap().count(), 1);
        let t49 = TrafficTensor::missing(49, 1, 1, 0, 1);
        assert_eq!(make_windows(&t49, cfg, &one).unwrap().count(), 2);
        let big = TrafficTensor::missing(48, 100, 100, 0, 1);
        let w = make_windows(&big, cfg, &Region::central_milan()).unwrap();
        assert_eq!(w.len(), 121);
        let t47 = TrafficTensor::missing(47, 1, 1, 0, 1);
        assert!(matches!(
            make_windows(&t47, cfg, &one),
            Err(GridError::WindowTooLong { .. })
        ));
        assert!(make_windows(&big, cfg, &Region::new(95..=101, 1..=1)).is_err());
    }

    #[test]
    fn window_contents() {
        let values: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let mut observed = vec![true; 20];
        observed[6] = false;
        let t = TrafficTensor::new(2, 2, 0, 10, values, observed).unwrap();
        let cfg = WindowConfig {
            history: 2,
            horizon: 1,
            stride: 1,
        };
        let w: Vec<_> = make_windows(&t, cfg, &Region::full(2, 2)).unwrap().collect();
        assert_eq!(w.len(), 3 * 4);
        let s = &w[2];
        assert_eq!((s.anchor, s.cell), (1, Cell::new(2, 1)));
        assert_eq!(s.cell_history, [2.0, 6.0]);
        assert_eq!(s.target, [10.0]);
        assert_eq!(s.history(), &t.values()[0..8]);
        let s = &w[4 + 2];
        assert_eq!(s.target_observed, [true]);
        assert_eq!(w[2 * 4 + 2].cell_history, [10.0, 14.0]);
        assert_eq!(w[6].cell_history, [6.0, 10.0]);
    }

    #[test]
    fn stride_skips_anchors() {
        let t = TrafficTensor::missing(20, 1, 1, 0, 1);
        let cfg = WindowConfig {
            history: 3,
            horizon: 2,
            stride: 4,
        };
        let anchors: Vec<_> = make_windows(&t, cfg, &Region::full(1, 1))
            .unwrap()
            .map(|w| w.anchor)
            .collect();
        assert_eq!(anchors, [2, 6, 10, 14]);
        assert_eq!(cfg.anchor_count(20), 4);
    }
}
