//! Newline-delimited JSON records for alignment and forecasting corpora.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use stvl_core::dataset::{AlignmentExample, SftRecord};
use stvl_core::grid::Cell;
use stvl_core::numcodec::FpToken;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("line {line}: schema violation: {reason}")]
    SchemaViolation { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn violation(line: usize, reason: impl ToString) -> RecordError {
    RecordError::SchemaViolation {
        line,
        reason: reason.to_string(),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AlignmentLine {
    #[serde(rename = "type")]
    kind: String,
    prompt: String,
    completion: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SftLine {
    frames: Vec<String>,
    prompt: String,
    targets: Vec<String>,
    mask: Vec<usize>,
}

pub fn write_alignment<W: Write>(w: &mut W, ex: &AlignmentExample) -> Result<(), RecordError> {
    let line = AlignmentLine {
        kind: ex.kind(),
        prompt: ex.prompt.clone(),
        completion: ex.completion.clone(),
    };
    serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn write_sft<W: Write>(w: &mut W, rec: &SftRecord) -> Result<(), RecordError> {
    let line = SftLine {
        frames: rec.frames.clone(),
        prompt: rec.prompt.clone(),
        targets: rec.targets.iter().map(|t| t.to_string()).collect(),
        mask: rec.mask.clone(),
    };
    serde_json::to_writer(&mut *w, &line).map_err(std::io::Error::from)?;
    w.write_all(b"\n")?;
    Ok(())
}

fn lines<R: BufRead>(r: R) -> impl Iterator<Item = Result<(usize, String), RecordError>> {
    r.lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(RecordError::from))
        .filter(|res| !matches!(res, Ok((_, l)) if l.trim().is_empty()))
}

pub fn read_alignment<R: BufRead>(r: R) -> Result<Vec<AlignmentExample>, RecordError> {
    lines(r)
        .map(|res| {
            let (n, text) = res?;
            let line: AlignmentLine = serde_json::from_str(&text).map_err(|e| violation(n, e))?;
            let (task, direction) = AlignmentExample::parse_kind(&line.kind)
                .ok_or_else(|| violation(n, format!("unknown type {:?}", line.kind)))?;
            Ok(AlignmentExample {
                direction,
                task,
                prompt: line.prompt,
                completion: line.completion,
            })
        })
        .collect()
}

pub fn read_sft<R: BufRead>(r: R) -> Result<Vec<SftRecord>, RecordError> {
    lines(r)
        .map(|res| {
            let (n, text) = res?;
            let line: SftLine = serde_json::from_str(&text).map_err(|e| violation(n, e))?;
            let targets = line
                .targets
                .iter()
                .map(|l| FpToken::from_label(l).map_err(|e| violation(n, format!("target {l:?}: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let rec = SftRecord {
                frames: line.frames,
                prompt: line.prompt,
                targets,
                mask: line.mask,
            };
            rec.validate().map_err(|e| violation(n, e))?;
            Ok(rec)
        })
        .collect()
}

/// Anchor time of a record: the timestamp suffix of its last frame id.
pub fn record_anchor_ms(rec: &SftRecord) -> Option<i64> {
    rec.frames.last()?.rsplit_once(':')?.1.parse().ok()
}

/// Target cell of a record, read back from its prompt.
pub fn record_cell(rec: &SftRecord) -> Option<Cell> {
    let rest = &rec.prompt[rec.prompt.find("(x=")? + 3..];
    let (row, rest) = rest.split_once(", y=")?;
    let (col, _) = rest.split_once(')')?;
    Some(Cell::new(row.parse().ok()?, col.parse().ok()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream() {
        assert!(read_sft(&b""[..]).unwrap().is_empty());
        assert!(read_alignment(&b"\n"[..]).unwrap().is_empty());
    }

    #[test]
    fn violations_carry_line_numbers() {
        let text = "{\"type\":\"add/tok2str\",\"prompt\":\"p\",\"completion\":\"c\"}\n{\"type\":\"mul/x\",\"prompt\":\"p\",\"completion\":\"c\"}\n";
        match read_alignment(text.as_bytes()) {
            Err(RecordError::SchemaViolation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad_mask = "{\"frames\":[\"a:0\"],\"prompt\":\"p \",\"targets\":[\"<|FP10/0|>\"],\"mask\":[0]}\n";
        assert!(matches!(read_sft(bad_mask.as_bytes()), Err(RecordError::SchemaViolation { line: 1, .. })));
    }
}
