//! Training corpora: numeric-token transcription (stage 1), token arithmetic
//! (stage 2) and per-cell forecasting records with loss masks.
//!
//! Prompt templates are frozen strings; changing any of them changes every
//! generated corpus.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::RangeInclusive;

use crate::civil;
use crate::grid::WindowSample;
use crate::numcodec::{
    self, encode, parse_token_stream, CodecError, FpToken, RangeMode, EXPONENT_MAX, EXPONENT_MIN,
    MAX_MAGNITUDE, MIN_MAGNITUDE, VOCAB_SIZE,
};
use crate::rng::{self, Rng};

pub const STAGE1_STR_TO_TOK: &str =
    "Convert the following string-represented numerical value to numerical tokens: ";
pub const STAGE1_TOK_TO_STR: &str =
    "Transcribe the following numerical token to string numerical value: ";

/// Minimum decimals when rendering numerals as strings.
pub const NUMERAL_DECIMALS: usize = 6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("infeasible constraint: {0}")]
    InfeasibleConstraint(&'static str),
    #[error("cannot encode value {value} at {position}: {source}")]
    EncodingFailure {
        position: &'static str,
        value: f64,
        source: CodecError,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    StrToTok,
    TokToStr,
    TokToTok,
}

impl Direction {
    pub const ALL: [Direction; 3] = [Direction::TokToStr, Direction::StrToTok, Direction::TokToTok];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::StrToTok => "str2tok",
            Direction::TokToStr => "tok2str",
            Direction::TokToTok => "tok2tok",
        }
    }

    fn tokens_in(self) -> bool {
        matches!(self, Direction::TokToStr | Direction::TokToTok)
    }

    fn tokens_out(self) -> bool {
        matches!(self, Direction::StrToTok | Direction::TokToTok)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Transcribe,
    Add,
    Sub,
    Hadamard,
}

impl Task {
    pub const ARITHMETIC: [Task; 3] = [Task::Add, Task::Sub, Task::Hadamard];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Transcribe => "transcribe",
            Task::Add => "add",
            Task::Sub => "sub",
            Task::Hadamard => "hadamard",
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Task::Transcribe => "transcription",
            Task::Add => "element-wise sum a + b",
            Task::Sub => "element-wise difference a - b",
            Task::Hadamard => "Hadamard product a * b",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Task::Transcribe => a,
            Task::Add => a + b,
            Task::Sub => a - b,
            Task::Hadamard => a * b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentExample {
    pub direction: Direction,
    pub task: Task,
    pub prompt: String,
    pub completion: String,
}

impl AlignmentExample {
    /// Value of the record's `type` field, e.g. `add/tok2str`.
    pub fn kind(&self) -> String {
        format!("{}/{}", self.task.as_str(), self.direction.as_str())
    }

    pub fn parse_kind(kind: &str) -> Option<(Task, Direction)> {
        let (t, d) = kind.split_once('/')?;
        let task = [Task::Transcribe, Task::Add, Task::Sub, Task::Hadamard]
            .into_iter()
            .find(|x| x.as_str() == t)?;
        let dir = Direction::ALL.into_iter().find(|x| x.as_str() == d)?;
        Some((task, dir))
    }
}

/// Decimal rendering of a token's value: at least six decimals, more when
/// the token carries finer digits (e.g. `<|FP1234/-4|>` is `0.0001234`).
pub fn numeral(token: FpToken) -> String {
    let decimals = if token.is_zero() {
        NUMERAL_DECIMALS
    } else {
        let digits = token.mantissa().unsigned_abs().to_string().len() as i32;
        NUMERAL_DECIMALS.max((digits - 1 - token.exponent()).max(0) as usize)
    };
    format!("{:.*}", decimals, token.value())
}

/// Stage 1: every vocabulary token in both transcription directions, in a
/// seed-shuffled token order.
pub fn gen_stage1(seed: u64) -> impl Iterator<Item = AlignmentExample> {
    let mut order: Vec<u32> = (0..VOCAB_SIZE as u32).collect();
    rng::shuffle(&mut rng::seeded(seed), &mut order);
    order.into_iter().flat_map(|id| {
        let tok = FpToken::from_id(id).expect("dense ids");
        let s = numeral(tok);
        [
            AlignmentExample {
                direction: Direction::StrToTok,
                task: Task::Transcribe,
                prompt: format!("{STAGE1_STR_TO_TOK}'{s}'"),
                completion: tok.to_string(),
            },
            AlignmentExample {
                direction: Direction::TokToStr,
                task: Task::Transcribe,
                prompt: format!("{STAGE1_TOK_TO_STR}{tok}"),
                completion: s,
            },
        ]
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage2Config {
    pub n_examples: usize,
    pub len_range: RangeInclusive<usize>,
    pub seed: u64,
}

pub const DEFAULT_STAGE2_LEN: RangeInclusive<usize> = 2..=8;

/// Examples per scheduling block: every (task, direction) pair once.
const BLOCK: usize = 9;
/// Token-input examples per block (tok2str and tok2tok for each task).
const TOKEN_INPUT_PER_BLOCK: usize = 6;

/// Smallest example count that guarantees every vocabulary token appears.
pub fn stage2_coverage_threshold(len_range: &RangeInclusive<usize>) -> usize {
    let per_block = TOKEN_INPUT_PER_BLOCK * (*len_range.start()).max(1);
    BLOCK * VOCAB_SIZE.div_ceil(per_block)
}

impl Stage2Config {
    pub fn with_defaults(seed: u64) -> Self {
        Stage2Config {
            n_examples: stage2_coverage_threshold(&DEFAULT_STAGE2_LEN),
            len_range: DEFAULT_STAGE2_LEN,
            seed,
        }
    }
}

/// Stage 2 stream. Tasks and directions are balanced in shuffled blocks of
/// nine; first operands of token-input examples are drawn from a shuffled
/// pass over the whole vocabulary until it is exhausted.
pub struct Stage2Generator {
    config: Stage2Config,
    rng: Rng,
    queue: Vec<u32>,
    emitted: usize,
    block: [(Task, Direction); BLOCK],
}

pub fn gen_stage2(config: Stage2Config) -> Result<Stage2Generator, DatasetError> {
    if config.len_range.is_empty() || *config.len_range.start() == 0 {
        return Err(DatasetError::InfeasibleConstraint("vector length range is empty"));
    }
    if config.n_examples == 0 {
        return Err(DatasetError::InfeasibleConstraint("n_examples must be positive"));
    }
    let mut rng = rng::seeded(config.seed);
    let mut queue: Vec<u32> = (0..VOCAB_SIZE as u32).collect();
    rng::shuffle(&mut rng, &mut queue);
    let block = core::array::from_fn(|i| (Task::ARITHMETIC[i / 3], Direction::ALL[i % 3]));
    Ok(Stage2Generator {
        config,
        rng,
        queue,
        emitted: 0,
        block,
    })
}

impl Stage2Generator {
    fn random_token(&mut self) -> FpToken {
        random_log_uniform(&mut self.rng)
    }

    fn first_operand(&mut self, direction: Direction) -> FpToken {
        if direction.tokens_in() {
            if let Some(id) = self.queue.pop() {
                return FpToken::from_id(id).expect("dense ids");
            }
        }
        self.random_token()
    }

    fn partner(&mut self, task: Task, a: FpToken) -> FpToken {
        for _ in 0..64 {
            let b = match task {
                Task::Hadamard if !a.is_zero() => {
                    let ea = a.exponent();
                    let lo = EXPONENT_MIN.max(EXPONENT_MIN - ea);
                    let hi = EXPONENT_MAX.min(EXPONENT_MAX - ea);
                    let eb = rng::between(&mut self.rng, lo as i64, hi as i64) as i32;
                    let m = rng::between(&mut self.rng, 10, 9999) as i32;
                    let sign = if rng::below(&mut self.rng, 2) == 0 { 1 } else { -1 };
                    canonical(sign * m, eb)
                }
                _ => self.random_token(),
            };
            if representable(task.apply(a.value(), b.value())) {
                return b;
            }
        }
        match task {
            Task::Hadamard => FpToken::new(10, 0).expect("1.0 is a token"),
            _ => FpToken::ZERO,
        }
    }
}

/// Result magnitudes the vocabulary can hold without collapsing to zero.
fn representable(r: f64) -> bool {
    let a = libm::fabs(r);
    a == 0.0 || (MIN_MAGNITUDE..=MAX_MAGNITUDE).contains(&a)
}

fn canonical(m: i32, b: i32) -> FpToken {
    let v = FpToken::new(m, b).expect("in range").value();
    encode(v, RangeMode::Strict).expect("vocabulary values re-encode")
}

/// Sign-symmetric, log-uniform over `[1e-4, 9.999e5]`.
fn random_log_uniform(rng: &mut Rng) -> FpToken {
    let lo = libm::log10(MIN_MAGNITUDE);
    let hi = libm::log10(MAX_MAGNITUDE);
    let mag = libm::pow(10.0, lo + (hi - lo) * rng::unit(rng)).clamp(MIN_MAGNITUDE, MAX_MAGNITUDE);
    let v = if rng::below(rng, 2) == 0 { mag } else { -mag };
    encode(v, RangeMode::Clamp).expect("clamped value encodes")
}

fn token_list(tokens: &[FpToken]) -> String {
    let mut s = String::from("[");
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{t}");
    }
    s.push(']');
    s
}

fn numeral_list(tokens: &[FpToken], quoted: bool) -> String {
    let mut s = String::from("[");
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        if quoted {
            let _ = write!(s, "'{}'", numeral(*t));
        } else {
            s.push_str(&numeral(*t));
        }
    }
    s.push(']');
    s
}

/// Prompt for a stage-2 arithmetic example.
pub fn stage2_prompt(task: Task, direction: Direction, a: &[FpToken], b: &[FpToken]) -> String {
    let (input, output) = match direction {
        Direction::TokToStr => ("numerical token vectors", "string numerical values"),
        Direction::StrToTok => ("string-represented numerical vectors", "numerical tokens"),
        Direction::TokToTok => ("numerical token vectors", "numerical tokens"),
    };
    let render = |v: &[FpToken]| {
        if direction.tokens_in() {
            token_list(v)
        } else {
            numeral_list(v, true)
        }
    };
    format!(
        "Compute the {} of the following {input} and answer with {output}: a = {}; b = {}",
        task.phrase(),
        render(a),
        render(b)
    )
}

impl Iterator for Stage2Generator {
    type Item = AlignmentExample;

    fn next(&mut self) -> Option<AlignmentExample> {
        if self.emitted == self.config.n_examples {
            return None;
        }
        let slot = self.emitted % BLOCK;
        if slot == 0 {
            rng::shuffle(&mut self.rng, &mut self.block);
        }
        let (task, direction) = self.block[slot];
        self.emitted += 1;

        let (lo, hi) = (*self.config.len_range.start(), *self.config.len_range.end());
        let len = rng::between(&mut self.rng, lo as i64, hi as i64) as usize;
        let mut a = Vec::with_capacity(len);
        let mut b = Vec::with_capacity(len);
        let mut result = Vec::with_capacity(len);
        for _ in 0..len {
            let x = self.first_operand(direction);
            let y = self.partner(task, x);
            let r = encode(task.apply(x.value(), y.value()), RangeMode::Strict)
                .expect("partner keeps results representable");
            a.push(x);
            b.push(y);
            result.push(r);
        }
        let completion = if direction.tokens_out() {
            token_list(&result)
        } else {
            numeral_list(&result, false)
        };
        Some(AlignmentExample {
            direction,
            task,
            prompt: stage2_prompt(task, direction, &a, &b),
            completion,
        })
    }
}

/// Free-form context attached to every forecasting record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftMetadata {
    /// Prefix of frame identifiers, e.g. the dataset name.
    pub source: String,
    /// Traffic channel, e.g. `internet`.
    pub channel: String,
}

/// One forecasting sample: visual frame references, the text prompt, target
/// tokens, and the loss mask over the serialized unit sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SftRecord {
    pub frames: Vec<String>,
    pub prompt: String,
    pub targets: Vec<FpToken>,
    pub mask: Vec<usize>,
}

/// Splits text into units: each numeric-token label is one unit, and each
/// run of text between labels is one unit.
pub fn text_units(text: &str) -> Vec<&str> {
    let mut units = Vec::new();
    let mut pos = 0;
    for c in parse_token_stream(text).candidates.iter().filter(|c| c.outcome.is_ok()) {
        if c.span.start > pos {
            units.push(&text[pos..c.span.start]);
        }
        units.push(&text[c.span.clone()]);
        pos = c.span.end;
    }
    if pos < text.len() {
        units.push(&text[pos..]);
    }
    units
}

impl SftRecord {
    /// Prompt units followed by one unit per target token.
    pub fn units(&self) -> Vec<String> {
        let mut units: Vec<String> = text_units(&self.prompt).into_iter().map(String::from).collect();
        units.extend(self.targets.iter().map(|t| t.to_string()));
        units
    }

    /// Mask positions implied by the prompt and target count.
    pub fn expected_mask(&self) -> Vec<usize> {
        let start = text_units(&self.prompt).len();
        (start..start + self.targets.len()).collect()
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.targets.is_empty() {
            return Err(DatasetError::SchemaViolation("record has no targets".into()));
        }
        if self.mask != self.expected_mask() {
            return Err(DatasetError::SchemaViolation(
                "mask does not cover exactly the target positions".into(),
            ));
        }
        Ok(())
    }

    pub fn target_values(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t.value()).collect()
    }
}

fn iso_minute(ms: i64) -> String {
    let ((y, m, d), minute) = civil::utc_parts(ms);
    format!("{y:04}-{m:02}-{d:02}T{:02}:{:02}Z", minute / 60, minute % 60)
}

fn encode_series(values: &[f64], position: &'static str) -> Result<Vec<FpToken>, DatasetError> {
    values
        .iter()
        .map(|&v| {
            numcodec::encode(v, RangeMode::Clamp).map_err(|source| DatasetError::EncodingFailure {
                position,
                value: v,
                source,
            })
        })
        .collect()
}

/// Builds the forecasting record for one window. Values are encoded in
/// clamp mode; missing (NaN) values fail.
pub fn build_sft_record(sample: &WindowSample<'_>, meta: &SftMetadata) -> Result<SftRecord, DatasetError> {
    let tensor = sample.tensor();
    let history = encode_series(&sample.cell_history, "history")?;
    let targets = encode_series(&sample.target, "target")?;
    let frames: Vec<String> = sample
        .history_frames()
        .map(|t| format!("{}:{}", meta.source, tensor.timestamp(t)))
        .collect();
    let first = tensor.timestamp(sample.history_frames().start);
    let step_min = tensor.step_ms() / civil::MS_PER_MINUTE;
    let mut prompt = format!(
        "Traffic grid {}x{}, channel {}, {} frames at {} min steps from {} to {}. Target cell (x={}, y={}). Cell history: ",
        tensor.height(),
        tensor.width(),
        meta.channel,
        frames.len(),
        step_min,
        iso_minute(first),
        iso_minute(sample.anchor_ms()),
        sample.cell.row,
        sample.cell.col,
    );
    for t in &history {
        let _ = write!(prompt, "{t}");
    }
    let _ = write!(
        prompt,
        ". Predict the next {} values for this cell as numerical tokens: ",
        targets.len()
    );
    let mut record = SftRecord {
        frames,
        prompt,
        targets,
        mask: Vec::new(),
    };
    record.mask = record.expected_mask();
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_windows, Cell, Region, TrafficTensor, WindowConfig};
    use alloc::vec;

    #[test]
    fn numerals() {
        let t = |m, b| FpToken::new(m, b).unwrap();
        assert_eq!(numeral(t(114, 2)), "114.000000");
        assert_eq!(numeral(t(-821, 1)), "-82.100000");
        assert_eq!(numeral(t(114, 0)), "1.140000");
        assert_eq!(numeral(t(1234, -4)), "0.0001234");
        assert_eq!(numeral(t(9999, 5)), "999900.000000");
        assert_eq!(numeral(FpToken::ZERO), "0.000000");
    }

    #[test]
    fn stage1_templates() {
        let all: Vec<_> = gen_stage1(0).take(4).collect();
        assert_eq!(all[0].direction, Direction::StrToTok);
        assert!(all[0].prompt.starts_with(STAGE1_STR_TO_TOK));
        assert_eq!(all[1].prompt, format!("{STAGE1_TOK_TO_STR}{}", all[0].completion));

        let tok = FpToken::new(-821, 1).unwrap();
        let ex = gen_stage1(3).find(|e| e.direction == Direction::TokToStr && e.prompt.ends_with(&tok.to_string())).unwrap();
        assert_eq!(ex.completion, "-82.100000");
        let ex = gen_stage1(3).find(|e| e.prompt.ends_with("'1.140000'")).unwrap();
        assert_eq!(ex.completion, "<|FP114/0|>");
        assert_eq!(ex.kind(), "transcribe/str2tok");
    }

    #[test]
    fn stage2_small_run() {
        let cfg = Stage2Config {
            n_examples: 90,
            len_range: 2..=8,
            seed: 5,
        };
        let ex: Vec<_> = gen_stage2(cfg).unwrap().collect();
        assert_eq!(ex.len(), 90);
        for task in Task::ARITHMETIC {
            for dir in Direction::ALL {
                let n = ex.iter().filter(|e| e.task == task && e.direction == dir).count();
                assert_eq!(n, 10);
            }
        }
        assert!(ex.iter().all(|e| AlignmentExample::parse_kind(&e.kind()) == Some((e.task, e.direction))));
    }

    #[test]
    fn stage2_infeasible() {
        let bad = |len_range| Stage2Config {
            n_examples: 1,
            len_range,
            seed: 0,
        };
        #[allow(clippy::reversed_empty_ranges)]
        let empty = 3..=2;
        assert!(gen_stage2(bad(empty)).is_err());
        assert!(gen_stage2(bad(0..=0)).is_err());
    }

    #[test]
    fn stage2_operations() {
        let t = |v: f64| encode(v, RangeMode::Strict).unwrap();
        let p = stage2_prompt(Task::Add, Direction::TokToStr, &[t(1.0), t(2.0)], &[t(3.0), t(4.0)]);
        assert!(p.ends_with("a = [<|FP10/0|> <|FP20/0|>]; b = [<|FP30/0|> <|FP40/0|>]"));
        assert_eq!(Task::Add.apply(1.0, 3.0), 4.0);
        assert_eq!(Task::Hadamard.apply(2.0, 3.0), 6.0);
        assert_eq!(t(Task::Sub.apply(5.0, 5.0)), FpToken::ZERO);
        let p = stage2_prompt(Task::Sub, Direction::StrToTok, &[t(5.0)], &[t(5.0)]);
        assert!(p.ends_with("a = ['5.000000']; b = ['5.000000']"));
    }

    #[test]
    fn coverage_threshold() {
        assert_eq!(stage2_coverage_threshold(&(2..=8)), 9 * 16_651);
        assert_eq!(stage2_coverage_threshold(&(1..=1)), 9 * 33_301);
    }

    fn window_tensor() -> TrafficTensor {
        let values: Vec<f64> = (0..60).map(|v| v as f64 * 1.5).collect();
        TrafficTensor::new(2, 2, 1_383_260_400_000, 600_000, values, vec![true; 60]).unwrap()
    }

    #[test]
    fn sft_record_layout() {
        let tensor = window_tensor();
        let cfg = WindowConfig {
            history: 3,
            horizon: 4,
            stride: 1,
        };
        let meta = SftMetadata {
            source: "synthetic".into(),
            channel: "internet".into(),
        };
        let sample = make_windows(&tensor, cfg, &Region::single(Cell::new(2, 1))).unwrap().next().unwrap();
        let rec = build_sft_record(&sample, &meta).unwrap();
        assert_eq!(rec.targets.len(), 4);
        assert_eq!(rec.mask.len(), 4);
        assert_eq!(rec.frames[0], "synthetic:1383260400000");
        assert!(rec.prompt.contains("(x=2, y=1)"));
        assert!(rec.prompt.contains("from 2013-10-31T23:00Z to 2013-10-31T23:20Z"));
        assert!(rec.prompt.contains("<|FP30/0|><|FP90/0|><|FP15/1|>"));
        assert_eq!(rec.target_values(), [21.0, 27.0, 33.0, 39.0]);
        rec.validate().unwrap();

        let units = rec.units();
        let kept: String = units
            .iter()
            .enumerate()
            .filter(|(i, _)| !rec.mask.contains(i))
            .map(|(_, u)| u.as_str())
            .collect();
        assert_eq!(kept, rec.prompt);
        assert!(rec.mask.iter().all(|&i| FpToken::from_label(&units[i]).is_ok()));
    }

    #[test]
    fn sft_zero_targets_and_missing() {
        let zeros = TrafficTensor::new(1, 1, 0, 600_000, vec![0.0; 5], vec![true; 5]).unwrap();
        let cfg = WindowConfig {
            history: 2,
            horizon: 3,
            stride: 1,
        };
        let meta = SftMetadata {
            source: "s".into(),
            channel: "c".into(),
        };
        let s = make_windows(&zeros, cfg, &Region::full(1, 1)).unwrap().next().unwrap();
        let rec = build_sft_record(&s, &meta).unwrap();
        assert!(rec.targets.iter().all(|t| t.is_zero()));

        let missing = TrafficTensor::missing(5, 1, 1, 0, 600_000);
        let s = make_windows(&missing, cfg, &Region::full(1, 1)).unwrap().next().unwrap();
        assert!(matches!(
            build_sft_record(&s, &meta),
            Err(DatasetError::EncodingFailure { position: "history", .. })
        ));
    }

    #[test]
    fn mask_validation() {
        let mut rec = SftRecord {
            frames: vec!["f:0".into()],
            prompt: "history <|FP10/0|> next: ".into(),
            targets: vec![FpToken::new(20, 0).unwrap()],
            mask: vec![3],
        };
        rec.validate().unwrap();
        rec.mask = vec![2];
        assert!(rec.validate().is_err());
    }
}
