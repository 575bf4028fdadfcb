//! Single-token floating-point codec.
//!
//! A numeric token `<|FPm/b|>` stands for `Norm(m) * 10^b`, where `Norm(m)`
//! places the decimal point after the first significant digit of the integer
//! mantissa `m`. Mantissas range over `{-9999..-10} ∪ {10..9999}` and
//! exponents over `{-4..5}`; one extra `<|FPZERO|>` token represents zero.
//!
//! Token ids are dense and ordered by `(b, m)`, with the zero token last, so
//! ids can be computed arithmetically without a lookup table.

use alloc::vec::Vec;
use core::fmt::{self, Write as _};
use core::ops::Range;

pub const MANTISSA_MIN: i32 = 10;
pub const MANTISSA_MAX: i32 = 9999;
pub const EXPONENT_MIN: i32 = -4;
pub const EXPONENT_MAX: i32 = 5;

/// Mantissas per exponent: `|{-9999..-10}| + |{10..9999}|`.
pub const MANTISSAS_PER_EXPONENT: usize = 2 * (MANTISSA_MAX - MANTISSA_MIN + 1) as usize;
pub const EXPONENT_COUNT: usize = (EXPONENT_MAX - EXPONENT_MIN + 1) as usize;
/// Total vocabulary size including the zero token.
pub const VOCAB_SIZE: usize = MANTISSAS_PER_EXPONENT * EXPONENT_COUNT + 1;
pub const ZERO_ID: u32 = (VOCAB_SIZE - 1) as u32;

/// Largest representable magnitude, `9.999e5`.
pub const MAX_MAGNITUDE: f64 = 9.999e5;
/// Smallest non-zero representable magnitude, `1.0e-4`.
pub const MIN_MAGNITUDE: f64 = 1.0e-4;
/// Magnitudes below this encode to the zero token (midpoint of 0 and `MIN_MAGNITUDE`).
pub const ZERO_THRESHOLD: f64 = 5.0e-5;

pub const ZERO_LABEL: &str = "<|FPZERO|>";

const POW10: [f64; 10] = [1e0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6, 1e7, 1e8, 1e9];

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum CodecError {
    #[error("value {0} is outside the representable range ±9.999e5")]
    OutOfRange(f64),
    #[error("value is not finite")]
    NotFinite,
    #[error("({mantissa}, {exponent}) is not a vocabulary token")]
    UnknownToken { mantissa: i32, exponent: i32 },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(u32),
    #[error("label is well-formed but not in the vocabulary")]
    UnknownLabel,
    #[error("malformed token label")]
    MalformedLabel,
}

/// How `encode` treats magnitudes above `MAX_MAGNITUDE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RangeMode {
    /// Fail with `CodecError::OutOfRange`.
    #[default]
    Strict,
    /// Saturate to `±9.999e5`.
    Clamp,
}

/// One entry of the numeric vocabulary.
///
/// The zero token is stored as mantissa 0; every other token satisfies the
/// mantissa and exponent range invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FpToken {
    mantissa: i16,
    exponent: i8,
}

impl FpToken {
    pub const ZERO: FpToken = FpToken { mantissa: 0, exponent: 0 };

    pub fn new(mantissa: i32, exponent: i32) -> Result<Self, CodecError> {
        let abs = mantissa.unsigned_abs() as i32;
        if !(MANTISSA_MIN..=MANTISSA_MAX).contains(&abs)
            || !(EXPONENT_MIN..=EXPONENT_MAX).contains(&exponent)
        {
            return Err(CodecError::UnknownToken { mantissa, exponent });
        }
        Ok(FpToken {
            mantissa: mantissa as i16,
            exponent: exponent as i8,
        })
    }

    pub fn is_zero(self) -> bool {
        self.mantissa == 0
    }

    pub fn mantissa(self) -> i32 {
        self.mantissa as i32
    }

    pub fn exponent(self) -> i32 {
        self.exponent as i32
    }

    /// Dense id: `(b + 4) * 19980 + rank(m)`, zero token last.
    pub fn id(self) -> u32 {
        if self.is_zero() {
            return ZERO_ID;
        }
        let m = self.mantissa();
        let rank = if m < 0 {
            m + MANTISSA_MAX
        } else {
            (MANTISSA_MAX - MANTISSA_MIN + 1) + (m - MANTISSA_MIN)
        } as u32;
        (self.exponent() - EXPONENT_MIN) as u32 * MANTISSAS_PER_EXPONENT as u32 + rank
    }

    pub fn from_id(id: u32) -> Result<Self, CodecError> {
        if id == ZERO_ID {
            return Ok(FpToken::ZERO);
        }
        if id > ZERO_ID {
            return Err(CodecError::UnknownId(id));
        }
        let per = MANTISSAS_PER_EXPONENT as u32;
        let exponent = (id / per) as i32 + EXPONENT_MIN;
        let rank = (id % per) as i32;
        let half = MANTISSA_MAX - MANTISSA_MIN + 1;
        let mantissa = if rank < half {
            rank - MANTISSA_MAX
        } else {
            rank - half + MANTISSA_MIN
        };
        FpToken::new(mantissa, exponent)
    }

    /// `Norm(m) * 10^b`, computed as one correctly rounded operation on exact
    /// integers so that e.g. `<|FP114/0|>` decodes to exactly `1.14`.
    pub fn value(self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let m = self.mantissa();
        let digits = decimal_digits(m.unsigned_abs());
        let shift = self.exponent() - (digits as i32 - 1);
        if shift >= 0 {
            m as f64 * POW10[shift as usize]
        } else {
            m as f64 / POW10[(-shift) as usize]
        }
    }

    /// `Norm(m)`, in `[1, 10)` by magnitude for non-zero tokens.
    pub fn normalized_mantissa(self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let m = self.mantissa();
        m as f64 / POW10[decimal_digits(m.unsigned_abs()) as usize - 1]
    }

    /// Parses a complete label such as `<|FP-821/1|>`.
    pub fn from_label(label: &str) -> Result<Self, CodecError> {
        match scan_candidate(label.as_bytes(), 0) {
            (Ok(tok), end) if end == label.len() => Ok(tok),
            (Err(TokenIssue::OutOfVocabulary), end) if end == label.len() => {
                Err(CodecError::UnknownLabel)
            }
            _ => Err(CodecError::MalformedLabel),
        }
    }
}

impl fmt::Display for FpToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            f.write_str(ZERO_LABEL)
        } else {
            write!(f, "<|FP{}/{}|>", self.mantissa, self.exponent)
        }
    }
}

fn decimal_digits(n: u32) -> u32 {
    match n {
        0..=9 => 1,
        10..=99 => 2,
        100..=999 => 3,
        1000..=9999 => 4,
        _ => 5,
    }
}

/// Rounds `x` to four significant digits (ties to even on the exact binary
/// value), strips trailing mantissa zeros while `|m| >= 10`, and returns the
/// canonical token.
pub fn encode(x: f64, mode: RangeMode) -> Result<FpToken, CodecError> {
    if x.is_nan() {
        return Err(CodecError::NotFinite);
    }
    let negative = x < 0.0;
    let mut ax = libm::fabs(x);
    if ax < ZERO_THRESHOLD {
        return Ok(FpToken::ZERO);
    }
    if ax > MAX_MAGNITUDE {
        match mode {
            RangeMode::Strict if ax.is_infinite() => return Err(CodecError::NotFinite),
            RangeMode::Strict => return Err(CodecError::OutOfRange(x)),
            RangeMode::Clamp => ax = MAX_MAGNITUDE,
        }
    }
    let (digits, exponent) = round_sig4(ax);
    let (mut m, b) = if exponent < EXPONENT_MIN {
        // [5e-5, 1e-4) rounds onto the smallest token.
        (MANTISSA_MIN, EXPONENT_MIN)
    } else {
        (digits as i32, exponent)
    };
    while m % 10 == 0 && m / 10 >= MANTISSA_MIN {
        m /= 10;
    }
    FpToken::new(if negative { -m } else { m }, b)
}

/// Decodes a token back to its real value.
pub fn decode(token: FpToken) -> f64 {
    token.value()
}

/// Decodes a label, failing with `UnknownToken`/`MalformedLabel` when it is not
/// in the vocabulary.
pub fn decode_label(label: &str) -> Result<f64, CodecError> {
    FpToken::from_label(label).map(FpToken::value)
}

struct StackBuf {
    buf: [u8; 32],
    len: usize,
}

impl fmt::Write for StackBuf {
    fn write_str(&mut self, s: &str) -> fmt::Result {
        let end = self.len + s.len();
        if end > self.buf.len() {
            return Err(fmt::Error);
        }
        self.buf[self.len..end].copy_from_slice(s.as_bytes());
        self.len = end;
        Ok(())
    }
}

/// Returns `(dddd, e)` with `ax ≈ d.ddd × 10^e`. Float formatting in `core`
/// works on the exact binary value and breaks exact ties to even.
fn round_sig4(ax: f64) -> (u32, i32) {
    let mut out = StackBuf { buf: [0; 32], len: 0 };
    write!(out, "{:.3e}", ax).expect("formatting a finite f64 fits in 32 bytes");
    let s = &out.buf[..out.len];
    let mut digits = 0u32;
    let mut i = 0;
    while i < s.len() && s[i] != b'e' {
        if s[i].is_ascii_digit() {
            digits = digits * 10 + (s[i] - b'0') as u32;
        }
        i += 1;
    }
    let mut exp = 0i32;
    let mut neg = false;
    for &c in &s[i + 1..] {
        match c {
            b'-' => neg = true,
            b'0'..=b'9' => exp = exp * 10 + (c - b'0') as i32,
            _ => {}
        }
    }
    (digits, if neg { -exp } else { exp })
}

/// The full numeric vocabulary, with decoded values cached by id.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    values: Vec<f64>,
}

impl Vocabulary {
    pub fn build() -> Self {
        let values = (0..VOCAB_SIZE as u32)
            .map(|id| FpToken::from_id(id).expect("dense ids").value())
            .collect();
        Vocabulary { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn token(&self, id: u32) -> Result<FpToken, CodecError> {
        FpToken::from_id(id)
    }

    pub fn id_of(&self, token: FpToken) -> u32 {
        token.id()
    }

    pub fn id_of_label(&self, label: &str) -> Result<u32, CodecError> {
        FpToken::from_label(label).map(FpToken::id)
    }

    pub fn value_of(&self, id: u32) -> Result<f64, CodecError> {
        self.values
            .get(id as usize)
            .copied()
            .ok_or(CodecError::UnknownId(id))
    }

    /// Decoded values indexed by id.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Tokens in id order.
    pub fn tokens(&self) -> impl ExactSizeIterator<Item = FpToken> + '_ {
        (0..self.values.len() as u32).map(|id| FpToken::from_id(id).expect("dense ids"))
    }

    pub fn encode(&self, x: f64, mode: RangeMode) -> Result<FpToken, CodecError> {
        encode(x, mode)
    }

    pub fn decode(&self, token: FpToken) -> f64 {
        self.values[token.id() as usize]
    }
}

/// Why a token-shaped candidate in free text failed to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenIssue {
    /// Starts like a label but does not follow the label grammar.
    Malformed,
    /// Grammatical, but the (m, b) pair is not in the vocabulary.
    OutOfVocabulary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    /// Byte range of the candidate within the scanned text.
    pub span: Range<usize>,
    pub outcome: Result<FpToken, TokenIssue>,
}

/// Result of scanning free text for numeric-token labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenScan {
    pub candidates: Vec<Candidate>,
}

impl TokenScan {
    pub fn tokens(&self) -> impl Iterator<Item = FpToken> + '_ {
        self.candidates.iter().filter_map(|c| c.outcome.ok())
    }

    pub fn values(&self) -> Vec<f64> {
        self.tokens().map(FpToken::value).collect()
    }

    pub fn issues(&self) -> impl Iterator<Item = &Candidate> {
        self.candidates.iter().filter(|c| c.outcome.is_err())
    }

    /// Set when any candidate failed or nothing decoded at all.
    pub fn decode_failure(&self) -> bool {
        self.issues().next().is_some() || self.tokens().next().is_none()
    }
}

const LABEL_PREFIX: &[u8] = b"<|FP";

/// Extracts every label-shaped candidate from `text`, left to right.
pub fn parse_token_stream(text: &str) -> TokenScan {
    let bytes = text.as_bytes();
    let mut candidates = Vec::new();
    let mut pos = 0;
    while let Some(start) = find(bytes, pos, LABEL_PREFIX) {
        let (outcome, end) = scan_candidate(bytes, start);
        candidates.push(Candidate {
            span: start..end,
            outcome,
        });
        pos = end.max(start + 1);
    }
    TokenScan { candidates }
}

fn find(hay: &[u8], from: usize, needle: &[u8]) -> Option<usize> {
    if from >= hay.len() {
        return None;
    }
    hay[from..]
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|p| p + from)
}

/// Scans one candidate that starts with `<|FP` at `start`. Returns the
/// outcome and the end of the consumed span.
fn scan_candidate(s: &[u8], start: usize) -> (Result<FpToken, TokenIssue>, usize) {
    if !s[start..].starts_with(LABEL_PREFIX) {
        return (Err(TokenIssue::Malformed), start);
    }
    let mut i = start + LABEL_PREFIX.len();
    if s[i..].starts_with(b"ZERO|>") {
        return (Ok(FpToken::ZERO), i + 6);
    }
    let (m, next) = match scan_int(s, i) {
        Some(v) => v,
        None => return (Err(TokenIssue::Malformed), i),
    };
    i = next;
    if s.get(i) != Some(&b'/') {
        return (Err(TokenIssue::Malformed), i);
    }
    i += 1;
    let (b, next) = match scan_int(s, i) {
        Some(v) => v,
        None => return (Err(TokenIssue::Malformed), i),
    };
    i = next;
    if !s[i..].starts_with(b"|>") {
        return (Err(TokenIssue::Malformed), i);
    }
    i += 2;
    let tok = match (m, b) {
        (Some(m), Some(b)) => FpToken::new(m, b).map_err(|_| TokenIssue::OutOfVocabulary),
        _ => Err(TokenIssue::OutOfVocabulary),
    };
    (tok, i)
}

/// Optional sign followed by at least one digit. The inner `None` marks a
/// grammatical integer that cannot be a canonical label field (leading zero
/// or too many digits).
fn scan_int(s: &[u8], mut i: usize) -> Option<(Option<i32>, usize)> {
    let negative = s.get(i) == Some(&b'-');
    if negative {
        i += 1;
    }
    let first = i;
    while i < s.len() && s[i].is_ascii_digit() {
        i += 1;
    }
    let run = &s[first..i];
    if run.is_empty() {
        return None;
    }
    if run.len() > 5 || (run.len() > 1 && run[0] == b'0') {
        return Some((None, i));
    }
    let v = run.iter().fold(0i32, |acc, &c| acc * 10 + (c - b'0') as i32);
    Some((Some(if negative { -v } else { v }), i))
}
