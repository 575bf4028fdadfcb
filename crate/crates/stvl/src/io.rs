//! On-disk formats for tensors, vocabularies, predictions and images.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use stvl_core::grid::{build_tensor, square_to_cell, Cell, GridError, GridSpec, Record, TrafficTensor};
use stvl_core::numcodec::{FpToken, VOCAB_SIZE};
use stvl_core::eval::Prediction;
use stvl_core::visual::ImageFrame;

pub const CACHE_MAGIC: &[u8; 5] = b"STVT1";
pub const CANONICAL_HEADER: &str = "timestamp_ms,row,col,value";
pub const PREDICTIONS_HEADER: &str = "anchor_ms,row,col,step,value";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("not a tensor cache (missing STVT1 header)")]
    BadMagic,
    #[error("tensor cache is truncated or has trailing bytes")]
    Truncated,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

fn malformed(line: usize, reason: impl Into<String>) -> IoError {
    IoError::MalformedRow {
        line,
        reason: reason.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the binary cache: magic, `T H W` as u64, start and step as i64,
/// values in `[t][row][col]` order, then the mask packed LSB-first.
pub fn write_cache(path: &Path, tensor: &TrafficTensor) -> Result<(), IoError> {
    let mut w = create(path)?;
    write_cache_to(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

pub fn write_cache_to(w: &mut impl Write, tensor: &TrafficTensor) -> Result<(), IoError> {
    w.write_all(CACHE_MAGIC)?;
    for d in [tensor.frames(), tensor.height(), tensor.width()] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    w.write_all(&tensor.start_ms().to_le_bytes())?;
    w.write_all(&tensor.step_ms().to_le_bytes())?;
    for v in tensor.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    let mut bits = vec![0u8; tensor.observed_mask().len().div_ceil(8)];
    for (i, &o) in tensor.observed_mask().iter().enumerate() {
        if o {
            bits[i / 8] |= 1 << (i % 8);
        }
    }
    w.write_all(&bits)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<TrafficTensor, IoError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_cache(&bytes)
}

pub fn parse_cache(bytes: &[u8]) -> Result<TrafficTensor, IoError> {
    let body = bytes.strip_prefix(CACHE_MAGIC.as_slice()).ok_or(IoError::BadMagic)?;
    let word = |i: usize| -> Result<[u8; 8], IoError> {
        body.get(i * 8..i * 8 + 8)
            .map(|b| b.try_into().expect("8 bytes"))
            .ok_or(IoError::Truncated)
    };
    let dim = |i| -> Result<usize, IoError> {
        usize::try_from(u64::from_le_bytes(word(i)?)).map_err(|_| IoError::Truncated)
    };
    let (frames, height, width) = (dim(0)?, dim(1)?, dim(2)?);
    let start_ms = i64::from_le_bytes(word(3)?);
    let step_ms = i64::from_le_bytes(word(4)?);
    let n = frames
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or(IoError::Truncated)?;
    let values_at = 40;
    let mask_at = n.checked_mul(8).and_then(|v| v.checked_add(values_at)).ok_or(IoError::Truncated)?;
    if body.len() != mask_at + n.div_ceil(8) {
        return Err(IoError::Truncated);
    }
    let values = body[values_at..mask_at]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let observed = (0..n).map(|i| body[mask_at + i / 8] >> (i % 8) & 1 == 1).collect();
    if n == 0 {
        return Ok(TrafficTensor::missing(0, height, width, start_ms, step_ms));
    }
    Ok(TrafficTensor::new(height, width, start_ms, step_ms, values, observed)?)
}

/// Canonical CSV of observed points only, in `[t][row][col]` order.
pub fn write_canonical_csv(path: &Path, tensor: &TrafficTensor) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "{CANONICAL_HEADER}")?;
    for t in 0..tensor.frames() {
        let ts = tensor.timestamp(t);
        for row in 1..=tensor.height() {
            for col in 1..=tensor.width() {
                let cell = Cell::new(row, col);
                if tensor.is_observed(t, cell) {
                    writeln!(w, "{ts},{row},{col},{}", tensor.value(t, cell))?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_field<T: std::str::FromStr>(line: usize, name: &str, s: &str) -> Result<T, IoError> {
    s.trim()
        .parse()
        .map_err(|_| malformed(line, format!("cannot parse {name} from {s:?}")))
}

pub fn read_canonical_csv(path: &Path, spec: GridSpec) -> Result<TrafficTensor, IoError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(File::open(path)?);
    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 1;
        let row = row.map_err(|e| malformed(line, e.to_string()))?;
        if line == 1 {
            let header: Vec<&str> = row.iter().map(str::trim).collect();
            if header.join(",") != CANONICAL_HEADER {
                return Err(malformed(line, format!("expected header {CANONICAL_HEADER}")));
            }
            continue;
        }
        if row.len() != 4 {
            return Err(malformed(line, format!("expected 4 fields, found {}", row.len())));
        }
        records.push(Record {
            timestamp_ms: parse_field(line, "timestamp_ms", &row[0])?,
            row: parse_field(line, "row", &row[1])?,
            col: parse_field(line, "col", &row[2])?,
            value: parse_field(line, "value", &row[3])?,
        });
    }
    if records.is_empty() && spec.start_ms.is_none() && spec.frames.is_none() {
        return Err(malformed(1, "no records and no declared time span"));
    }
    Ok(build_tensor(spec, &records)?)
}

/// Reads `square_id, time_interval_ms, value` rows, comma or tab separated,
/// with or without a header. `value_column` selects the value field for
/// wider source files; rows with an empty value are skipped.
pub fn read_tim(path: &Path, spec: GridSpec, value_column: usize) -> Result<TrafficTensor, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        if text.trim().is_empty() {
            continue;
        }
        let sep = if text.contains('\t') { '\t' } else { ',' };
        let fields: Vec<&str> = text.split(sep).map(str::trim).collect();
        if line == 1 && fields[0].parse::<u64>().is_err() {
            continue;
        }
        if fields.len() <= value_column.max(1) {
            return Err(malformed(line, format!("expected at least {} fields", value_column.max(1) + 1)));
        }
        if fields[value_column].is_empty() {
            continue;
        }
        let id: u64 = parse_field(line, "square_id", fields[0])?;
        let cell = square_to_cell(id, spec.height, spec.width).ok_or(GridError::SquareIdOutOfRange {
            record: line,
            id,
            max: (spec.height * spec.width) as u64,
        })?;
        records.push(Record {
            timestamp_ms: parse_field(line, "time_interval_ms", fields[1])?,
            row: cell.row,
            col: cell.col,
            value: parse_field(line, "value", fields[value_column])?,
        });
    }
    Ok(build_tensor(spec, &records)?)
}

/// `id<TAB>label<TAB>value` for every token, value with 17 significant digits.
pub fn write_vocab(path: &Path) -> Result<(), IoError> {
    let mut w = create(path)?;
    for id in 0..VOCAB_SIZE as u32 {
        let tok = FpToken::from_id(id).expect("dense ids");
        writeln!(w, "{id}\t{tok}\t{:.16e}", tok.value())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(w, "{PREDICTIONS_HEADER}")?;
    for p in preds {
        for (k, v) in p.values.iter().enumerate() {
            writeln!(w, "{},{},{},{},{v}", p.anchor_ms, p.cell.row, p.cell.col, k + 1)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups rows back into one prediction per (anchor, cell); steps must run
/// `1..=K` contiguously within each group.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, IoError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<Prediction> = Vec::new();
    for (i, text) in reader.lines().enumerate() {
        let line = i + 1;
        let text = text?;
        if line == 1 {
            if text.trim() != PREDICTIONS_HEADER {
                return Err(malformed(line, format!("expected header {PREDICTIONS_HEADER}")));
            }
            continue;
        }
        if text.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = text.split(',').collect();
        if f.len() != 5 {
            return Err(malformed(line, format!("expected 5 fields, found {}", f.len())));
        }
        let anchor_ms: i64 = parse_field(line, "anchor_ms", f[0])?;
        let cell = Cell::new(parse_field(line, "row", f[1])?, parse_field(line, "col", f[2])?);
        let step: usize = parse_field(line, "step", f[3])?;
        let value: f64 = parse_field(line, "value", f[4])?;
        match out.last_mut() {
            Some(p) if p.anchor_ms == anchor_ms && p.cell == cell && step == p.values.len() + 1 => {
                p.values.push(value)
            }
            _ if step == 1 => out.push(Prediction {
                anchor_ms,
                cell,
                values: vec![value],
            }),
            _ => return Err(malformed(line, format!("step {step} out of sequence"))),
        }
    }
    Ok(out)
}

/// 8-bit RGB PNG with channel values `round(255 * u)`.
pub fn write_png(path: &Path, frame: &ImageFrame) -> Result<(), IoError> {
    let mut img = image::RgbImage::new(frame.width() as u32, frame.height() as u32);
    for (i, px) in frame.pixels().iter().enumerate() {
        let (r, c) = (i / frame.width(), i % frame.width());
        let q = px.map(|u| (255.0 * u.clamp(0.0, 1.0)).round() as u8);
        img.put_pixel(c as u32, r as u32, image::Rgb(q));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_rejects_garbage() {
        assert!(matches!(parse_cache(b"nope"), Err(IoError::BadMagic)));
        assert!(matches!(parse_cache(b"STVT1\x01"), Err(IoError::Truncated)));
    }

    #[test]
    fn cache_bytes_are_stable() {
        let t = TrafficTensor::new(1, 2, 5, 10, vec![1.0, f64::NAN, 2.0, 3.0], vec![true, false, true, true]).unwrap();
        let mut buf = Vec::new();
        write_cache_to(&mut buf, &t).unwrap();
        assert_eq!(&buf[..5], b"STVT1");
        assert_eq!(buf.len(), 5 + 40 + 32 + 1);
        assert_eq!(*buf.last().unwrap(), 0b1101);
        let back = parse_cache(&buf).unwrap();
        assert_eq!(back.observed_mask(), t.observed_mask());
        assert_eq!(back.value(1, Cell::new(1, 2)), 3.0);
    }
}
