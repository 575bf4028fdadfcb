//! Traffic frames as images: power-law normalization, pseudo-RGB replication,
//! ceiling patching, and a deterministic statistics-based patch encoder that
//! stands in for a pretrained vision tower.

use alloc::vec;
use alloc::vec::Vec;

use crate::grid::TrafficTensor;

/// Embedding width of [`mock_encode`]: 4 summary statistics + 4x4 pooled grid.
pub const EMBED_DIM: usize = 20;
pub const DEFAULT_POWER: f64 = 0.5;
pub const DEFAULT_TMAX_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VisualError {
    #[error("tensor has no finite values")]
    EmptyTensor,
    #[error("maximum training value is zero and no floor was configured")]
    DegenerateTmax,
    #[error("power must lie in (0, 1], got {0}")]
    InvalidPower(f64),
    #[error("t_max must be positive and finite, got {0}")]
    InvalidTmax(f64),
    #[error("value {value} at index {index} is negative or not finite")]
    NegativeValue { index: usize, value: f64 },
    #[error("pixel {value} at index {index} is outside [0, 1]")]
    OutOfRangePixel { index: usize, value: f64 },
    #[error("frame length {len} does not match {height}x{width}")]
    ShapeMismatch { len: usize, height: usize, width: usize },
    #[error("patch size must be at least 1")]
    ZeroPatchSize,
    #[error("frame {frame} has {got} patches, expected {expected}")]
    RaggedFrames { frame: usize, got: usize, expected: usize },
}

/// Power exponent `p` and ceiling `t_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormConfig {
    p: f64,
    t_max: f64,
}

impl NormConfig {
    pub fn new(p: f64, t_max: f64) -> Result<Self, VisualError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(VisualError::InvalidPower(p));
        }
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(VisualError::InvalidTmax(t_max));
        }
        Ok(NormConfig { p, t_max })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// `min(v^p / t_max^p, 1)`.
    pub fn normalize(&self, v: f64) -> f64 {
        let u = libm::pow(v, self.p) / libm::pow(self.t_max, self.p);
        if u > 1.0 {
            1.0
        } else {
            u
        }
    }

    /// Inverse of [`normalize`](Self::normalize) below the clamp.
    pub fn denormalize(&self, u: f64) -> f64 {
        libm::pow(u * libm::pow(self.t_max, self.p), 1.0 / self.p)
    }
}

/// Maximum finite value of the training split. With `floor = Some(f)` the
/// result is at least `f`; without a floor an all-zero split is an error.
pub fn fit_tmax(train: &TrafficTensor, floor: Option<f64>) -> Result<f64, VisualError> {
    let max = train
        .values()
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(VisualError::EmptyTensor)?;
    match floor {
        Some(f) => Ok(max.max(f)),
        None if max > 0.0 => Ok(max),
        None => Err(VisualError::DegenerateTmax),
    }
}

pub fn power_normalize(frame: &[f64], cfg: &NormConfig) -> Result<Vec<f64>, VisualError> {
    frame
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if value.is_finite() && value >= 0.0 {
                Ok(cfg.normalize(value))
            } else {
                Err(VisualError::NegativeValue { index, value })
            }
        })
        .collect()
}

/// `H x W x 3` image with identical channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    height: usize,
    width: usize,
    pixels: Vec<[f64; 3]>,
}

impl ImageFrame {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Row-major RGB pixels.
    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        self.pixels[row * self.width + col]
    }
}

/// Replicates a normalized grayscale frame into R, G and B.
pub fn to_image(norm: &[f64], height: usize, width: usize) -> Result<ImageFrame, VisualError> {
    if norm.len() != height * width {
        return Err(VisualError::ShapeMismatch {
            len: norm.len(),
            height,
            width,
        });
    }
    let pixels = norm
        .iter()
        .enumerate()
        .map(|(index, &value)| {
            if (0.0..=1.0).contains(&value) {
                Ok([value; 3])
            } else {
                Err(VisualError::OutOfRangePixel { index, value })
            }
        })
        .collect::<Result<_, _>>()?;
    Ok(ImageFrame {
        height,
        width,
        pixels,
    })
}

/// Normalizes and replicates frame `t` of a tensor.
pub fn frame_image(tensor: &TrafficTensor, t: usize, cfg: &NormConfig) -> Result<ImageFrame, VisualError> {
    let norm = power_normalize(tensor.frame(t), cfg)?;
    to_image(&norm, tensor.height(), tensor.width())
}

/// `L x L x 3` block, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub pixels: Vec<[f64; 3]>,
}

/// Row-major sequence of `ceil(H/L) * ceil(W/L)` patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSequence {
    pub patch_size: usize,
    /// `(ceil(H/L), ceil(W/L))`
    pub grid_dims: (usize, usize),
    pub patches: Vec<Patch>,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

pub fn patch_count(height: usize, width: usize, patch: usize) -> usize {
    height.div_ceil(patch) * width.div_ceil(patch)
}

/// Zero-pads bottom and right to multiples of `patch`, then cuts row-major.
pub fn patchify(img: &ImageFrame, patch: usize) -> Result<PatchSequence, VisualError> {
    if patch == 0 {
        return Err(VisualError::ZeroPatchSize);
    }
    let rows = img.height.div_ceil(patch);
    let cols = img.width.div_ceil(patch);
    let mut patches = Vec::with_capacity(rows * cols);
    for pr in 0..rows {
        for pc in 0..cols {
            let mut pixels = vec![[0.0; 3]; patch * patch];
            for r in 0..patch {
                let y = pr * patch + r;
                if y >= img.height {
                    break;
                }
                for c in 0..patch {
                    let x = pc * patch + c;
                    if x >= img.width {
                        break;
                    }
                    pixels[r * patch + c] = img.pixel(y, x);
                }
            }
            patches.push(Patch { pixels });
        }
    }
    Ok(PatchSequence {
        patch_size: patch,
        grid_dims: (rows, cols),
        patches,
    })
}

/// Stitches patches back together and drops the padding.
pub fn unpatchify(seq: &PatchSequence, height: usize, width: usize) -> ImageFrame {
    let l = seq.patch_size;
    let (_, cols) = seq.grid_dims;
    let mut pixels = vec![[0.0; 3]; height * width];
    for y in 0..height {
        for x in 0..width {
            let patch = &seq.patches[(y / l) * cols + x / l];
            pixels[y * width + x] = patch.pixels[(y % l) * l + x % l];
        }
    }
    ImageFrame {
        height,
        width,
        pixels,
    }
}

/// Per-patch embeddings of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MockEmbedding {
    pub vectors: Vec<[f64; EMBED_DIM]>,
}

/// `[mean, std, min, max]` of the first channel followed by its 4x4
/// average-pooled grid.
pub fn mock_encode(seq: &PatchSequence) -> MockEmbedding {
    let l = seq.patch_size;
    let bins = pool_bins(l);
    let vectors = seq
        .patches
        .iter()
        .map(|p| {
            let n = p.pixels.len() as f64;
            let mut sum = 0.0;
            let mut min = f64::INFINITY;
            let mut max = f64::NEG_INFINITY;
            for px in &p.pixels {
                sum += px[0];
                min = min.min(px[0]);
                max = max.max(px[0]);
            }
            let mean = sum / n;
            let var = p.pixels.iter().map(|px| (px[0] - mean) * (px[0] - mean)).sum::<f64>() / n;
            let mut v = [0.0; EMBED_DIM];
            v[..4].copy_from_slice(&[mean, libm::sqrt(var), min, max]);
            for (bi, rows) in bins.iter().enumerate() {
                for (bj, cols) in bins.iter().enumerate() {
                    let mut s = 0.0;
                    for r in rows.clone() {
                        for c in cols.clone() {
                            s += p.pixels[r * l + c][0];
                        }
                    }
                    v[4 + bi * 4 + bj] = s / (rows.len() * cols.len()) as f64;
                }
            }
            v
        })
        .collect();
    MockEmbedding { vectors }
}

/// Four non-empty, covering index ranges over `0..l`.
fn pool_bins(l: usize) -> [core::ops::Range<usize>; 4] {
    core::array::from_fn(|i| {
        let lo = (i * l / 4).min(l - 1);
        let hi = ((i + 1) * l / 4).max(lo + 1);
        lo..hi
    })
}

/// Frames concatenated in temporal order, patches in row-major order within
/// each frame.
pub fn assemble_visual_context(frames: &[MockEmbedding]) -> Result<Vec<[f64; EMBED_DIM]>, VisualError> {
    let expected = frames.first().map_or(0, |f| f.vectors.len());
    let mut out = Vec::with_capacity(expected * frames.len());
    for (frame, f) in frames.iter().enumerate() {
        if f.vectors.len() != expected {
            return Err(VisualError::RaggedFrames {
                frame,
                got: f.vectors.len(),
                expected,
            });
        }
        out.extend_from_slice(&f.vectors);
    }
    Ok(out)
}

/// Full visual context for the history of a window: normalize, image,
/// patch and encode each of the frames in `range`.
pub fn encode_history(
    tensor: &TrafficTensor,
    frames: core::ops::Range<usize>,
    cfg: &NormConfig,
    patch: usize,
) -> Result<Vec<[f64; EMBED_DIM]>, VisualError> {
    let embeddings = frames
        .map(|t| {
            let img = frame_image(tensor, t, cfg)?;
            Ok(mock_encode(&patchify(&img, patch)?))
        })
        .collect::<Result<Vec<_>, VisualError>>()?;
    assemble_visual_context(&embeddings)
}
