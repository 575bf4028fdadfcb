//! Desk-scale stand-ins: a synthetic traffic simulator, seasonal baselines,
//! and a corruption-based toy policy for exercising the RL kernels.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dataset::SftRecord;
use crate::grid::{TrafficTensor, TEN_MINUTES_MS};
use crate::numcodec::{encode, FpToken, RangeMode};
use crate::rl::SequenceLogProbs;
use crate::rng::{self, Rng};

/// Frames per day at ten-minute resolution.
pub const DAY_FRAMES: usize = 144;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("history has {got} points, need at least {needed}")]
    HistoryTooShort { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub step_ms: i64,
    pub start_ms: i64,
    /// Diurnal period in frames.
    pub daily_period: usize,
    /// Relative swing of the diurnal sinusoid, in `[0, 1]`.
    pub daily_amplitude: f64,
    /// Relative swing of the seven-period cycle, in `[0, 1]`.
    pub weekly_amplitude: f64,
    pub n_hotspots: usize,
    pub hotspot_scale: f64,
    /// Standard deviation of the log-space noise.
    pub noise_sigma: f64,
    pub base: f64,
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 20,
            width: 20,
            frames: 30 * DAY_FRAMES,
            step_ms: TEN_MINUTES_MS,
            // 2013-11-01 00:00 in Milan local time.
            start_ms: 1_383_260_400_000,
            daily_period: DAY_FRAMES,
            daily_amplitude: 0.8,
            weekly_amplitude: 0.3,
            n_hotspots: 4,
            hotspot_scale: 3.0,
            noise_sigma: 0.03,
            base: 100.0,
            missing_rate: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.height == 0 || self.width == 0 || self.frames == 0 || self.daily_period == 0 {
            return Err(BenchError::InvalidConfig("dimensions and period must be at least 1"));
        }
        if self.step_ms <= 0 {
            return Err(BenchError::InvalidConfig("step must be positive"));
        }
        let unit = 0.0..=1.0;
        if !unit.contains(&self.daily_amplitude) || !unit.contains(&self.weekly_amplitude) {
            return Err(BenchError::InvalidConfig("amplitudes must lie in [0, 1]"));
        }
        if !unit.contains(&self.missing_rate) {
            return Err(BenchError::InvalidConfig("missing rate must lie in [0, 1]"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(BenchError::InvalidConfig("noise sigma must be finite and non-negative"));
        }
        if !(self.base >= 0.0 && self.base.is_finite()) || !(self.hotspot_scale >= 0.0) {
            return Err(BenchError::InvalidConfig("base and hotspot scale must be non-negative"));
        }
        Ok(())
    }
}

struct Hotspot {
    row: f64,
    col: f64,
    radius: f64,
    gain: f64,
}

fn spatial_field(cfg: &SynthConfig, rng: &mut Rng) -> Vec<f64> {
    let reach = (cfg.height.max(cfg.width) as f64 / 4.0).max(1.0);
    let spots: Vec<Hotspot> = (0..cfg.n_hotspots)
        .map(|_| Hotspot {
            row: 1.0 + rng::unit(rng) * (cfg.height - 1) as f64,
            col: 1.0 + rng::unit(rng) * (cfg.width - 1) as f64,
            radius: 1.0 + rng::unit(rng) * (reach - 1.0),
            gain: cfg.hotspot_scale * (0.5 + 0.5 * rng::unit(rng)),
        })
        .collect();
    let mut field = Vec::with_capacity(cfg.height * cfg.width);
    for r in 1..=cfg.height {
        for c in 1..=cfg.width {
            let bumps: f64 = spots
                .iter()
                .map(|s| {
                    let (dr, dc) = (r as f64 - s.row, c as f64 - s.col);
                    let d2 = dr * dr + dc * dc;
                    s.gain * libm::exp(-d2 / (2.0 * s.radius * s.radius))
                })
                .sum();
            field.push(1.0 + bumps);
        }
    }
    field
}

fn cycle(t: usize, period: usize, amplitude: f64) -> f64 {
    // Phase from `t mod period` keeps the series bit-exactly periodic.
    1.0 + amplitude * libm::sin(2.0 * PI * (t % period) as f64 / period as f64)
}

/// Generates a deterministic synthetic tensor. Each frame draws its noise
/// and missingness from its own derived stream.
pub fn synth_traffic(cfg: &SynthConfig) -> Result<TrafficTensor, BenchError> {
    cfg.validate()?;
    let spatial = spatial_field(cfg, &mut rng::derived(cfg.seed, u64::MAX));
    let cells = cfg.height * cfg.width;
    let mut values = Vec::with_capacity(cfg.frames * cells);
    let mut observed = Vec::with_capacity(cfg.frames * cells);
    for t in 0..cfg.frames {
        let mut rng = rng::derived(cfg.seed, t as u64);
        let temporal = cfg.base
            * cycle(t, cfg.daily_period, cfg.daily_amplitude)
            * cycle(t, 7 * cfg.daily_period, cfg.weekly_amplitude);
        for s in &spatial {
            let noise = if cfg.noise_sigma > 0.0 {
                libm::exp(cfg.noise_sigma * rng::normal(&mut rng))
            } else {
                1.0
            };
            let missing = cfg.missing_rate > 0.0 && rng::unit(&mut rng) < cfg.missing_rate;
            values.push(if missing { f64::NAN } else { temporal * s * noise });
            observed.push(!missing);
        }
    }
    Ok(TrafficTensor::new(
        cfg.height,
        cfg.width,
        cfg.start_ms,
        cfg.step_ms,
        values,
        observed,
    )
    .expect("shape is consistent by construction"))
}

/// Repeats the last full period of `history`.
pub fn seasonal_naive(history: &[f64], period: usize, k: usize) -> Result<Vec<f64>, BenchError> {
    if period == 0 {
        return Err(BenchError::InvalidConfig("period must be at least 1"));
    }
    if history.len() < period {
        return Err(BenchError::HistoryTooShort {
            needed: period,
            got: history.len(),
        });
    }
    let base = history.len() - period;
    Ok((0..k).map(|i| history[base + i % period]).collect())
}

/// Repeats the last observed value.
pub fn persistence(history: &[f64], k: usize) -> Result<Vec<f64>, BenchError> {
    let last = *history.last().ok_or(BenchError::HistoryTooShort { needed: 1, got: 0 })?;
    Ok(vec![last; k])
}

/// Mean of all same-phase points in `history`, phase measured backwards
/// from the end so step `k` continues the period.
pub fn historical_average(history: &[f64], period: usize, k: usize) -> Result<Vec<f64>, BenchError> {
    if period == 0 {
        return Err(BenchError::InvalidConfig("period must be at least 1"));
    }
    if history.len() < period {
        return Err(BenchError::HistoryTooShort {
            needed: period,
            got: history.len(),
        });
    }
    let n = history.len();
    let means: Vec<f64> = (0..period)
        .map(|phase| {
            // Indices i with (n + phase - i) divisible by `period`, i.e. the
            // points one, two, ... periods before step `phase + 1`.
            let first = (n + phase) % period;
            let pts: Vec<f64> = history[first..].iter().step_by(period).copied().collect();
            pts.iter().sum::<f64>() / pts.len() as f64
        })
        .collect();
    Ok((0..k).map(|i| means[i % period]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyPolicy {
    /// Probability that a target token is replaced by a neighbor.
    pub corruption_rate: f64,
    /// Relative value-space distance to the neighbor token.
    pub neighbor_distance: f64,
    pub temperature: f64,
    pub seed: u64,
}

impl Default for ToyPolicy {
    fn default() -> Self {
        ToyPolicy {
            corruption_rate: 0.2,
            neighbor_distance: 0.5,
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Fixed policy used for reference log-probs.
pub const REFERENCE_POLICY: ToyPolicy = ToyPolicy {
    corruption_rate: 0.1,
    neighbor_distance: 0.5,
    temperature: 1.0,
    seed: 0,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Action {
    Keep,
    Up,
    Down,
}

impl ToyPolicy {
    pub fn validate(&self) -> Result<(), BenchError> {
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(BenchError::InvalidConfig("corruption rate must lie in [0, 1]"));
        }
        if !(self.neighbor_distance > 0.0 && self.neighbor_distance < 1.0) {
            return Err(BenchError::InvalidConfig("neighbor distance must lie in (0, 1)"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(BenchError::InvalidConfig("temperature must be positive"));
        }
        Ok(())
    }

    /// Tempered probabilities of keep / up / down.
    fn probs(&self) -> [f64; 3] {
        let c = self.corruption_rate;
        let raw = [1.0 - c, c / 2.0, c / 2.0].map(|p| libm::pow(p, 1.0 / self.temperature));
        let z: f64 = raw.iter().sum();
        raw.map(|p| p / z)
    }

    fn logp(&self, a: Action) -> f64 {
        let p = self.probs();
        libm::log(match a {
            Action::Keep => p[0],
            Action::Up => p[1],
            Action::Down => p[2],
        })
    }

    fn neighbor(&self, tok: FpToken, a: Action) -> FpToken {
        let d = self.neighbor_distance;
        let v = tok.value();
        let target = match a {
            Action::Keep => return tok,
            _ if tok.is_zero() => d,
            Action::Up => v * (1.0 + d),
            Action::Down => v * (1.0 - d),
        };
        encode(target, RangeMode::Clamp).expect("finite values encode under clamping")
    }
}

/// One sampled output with its per-token log-probs.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub tokens: Vec<FpToken>,
    pub text: String,
    pub logprobs: SequenceLogProbs,
}

/// Samples `g` candidates by corrupting the record's target tokens. The
/// sampling policy doubles as the old policy; the reference log-probs come
/// from [`REFERENCE_POLICY`].
pub fn toy_policy_sample(record: &SftRecord, policy: &ToyPolicy, g: usize) -> Result<Vec<Candidate>, BenchError> {
    policy.validate()?;
    if g < 2 {
        return Err(BenchError::InvalidConfig("group size must be at least 2"));
    }
    let mut rng = rng::seeded(policy.seed);
    let probs = policy.probs();
    Ok((0..g)
        .map(|_| {
            let mut tokens = Vec::with_capacity(record.targets.len());
            let mut lp = Vec::with_capacity(record.targets.len());
            let mut lp_ref = Vec::with_capacity(record.targets.len());
            for &t in &record.targets {
                let u = rng::unit(&mut rng);
                let action = if u < probs[0] {
                    Action::Keep
                } else if u < probs[0] + probs[1] {
                    Action::Up
                } else {
                    Action::Down
                };
                tokens.push(policy.neighbor(t, action));
                lp.push(policy.logp(action));
                lp_ref.push(REFERENCE_POLICY.logp(action));
            }
            let text = tokens.iter().map(|t| t.to_string()).collect();
            Candidate {
                tokens,
                text,
                logprobs: SequenceLogProbs {
                    new: lp.clone(),
                    old: lp,
                    reference: lp_ref,
                },
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::{group_advantages, reward, GrpoConfig, NormMode, RewardConfig};

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            height: 3,
            width: 4,
            frames: 3 * DAY_FRAMES,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn degenerate_config_is_periodic_and_uniform() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            n_hotspots: 0,
            weekly_amplitude: 0.0,
            ..small(1)
        };
        let t = synth_traffic(&cfg).unwrap();
        for f in 0..t.frames() {
            let frame = t.frame(f);
            assert!(frame.iter().all(|&v| v == frame[0]));
            if f >= DAY_FRAMES {
                assert_eq!(frame[0], t.frame(f - DAY_FRAMES)[0]);
            }
        }
    }

    #[test]
    fn deterministic_and_non_negative() {
        let a = synth_traffic(&small(9)).unwrap();
        assert_eq!(a, synth_traffic(&small(9)).unwrap());
        assert_ne!(a, synth_traffic(&small(10)).unwrap());
        assert!(a.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn missing_rate_binomial() {
        let cfg = SynthConfig {
            height: 10,
            width: 10,
            frames: 1000,
            missing_rate: 0.1,
            ..small(3)
        };
        let t = synth_traffic(&cfg).unwrap();
        let n = t.observed_mask().len() as f64;
        let frac = t.observed_mask().iter().filter(|&&o| o).count() as f64 / n;
        // 1% band is about 10.5 binomial standard deviations at n = 1e5.
        assert!((frac - 0.9).abs() < 0.01, "{frac}");
        for (v, o) in t.values().iter().zip(t.observed_mask()) {
            assert_eq!(v.is_nan(), !o);
        }
    }

    #[test]
    fn baselines() {
        assert_eq!(persistence(&[1.0, 2.0, 3.0], 2).unwrap(), [3.0, 3.0]);
        assert_eq!(historical_average(&[1.0, 3.0, 1.0, 3.0], 2, 2).unwrap(), [1.0, 3.0]);
        assert_eq!(historical_average(&[5.0, 1.0, 3.0], 2, 3).unwrap(), [1.0, 4.0, 1.0]);
        assert_eq!(seasonal_naive(&[1.0, 2.0, 3.0, 4.0], 3, 5).unwrap(), [2.0, 3.0, 4.0, 2.0, 3.0]);
        assert_eq!(persistence(&[7.0; 4], 3).unwrap(), [7.0; 3]);
        assert_eq!(seasonal_naive(&[7.0; 4], 2, 3).unwrap(), [7.0; 3]);
        assert_eq!(
            seasonal_naive(&[1.0], 2, 1),
            Err(BenchError::HistoryTooShort { needed: 2, got: 1 })
        );
        assert!(persistence(&[], 1).is_err());
    }

    fn record(values: &[f64]) -> SftRecord {
        let targets: Vec<FpToken> = values.iter().map(|&v| encode(v, RangeMode::Clamp).unwrap()).collect();
        SftRecord {
            frames: vec!["f:0".into()],
            prompt: "p: ".into(),
            mask: (1..=targets.len()).collect(),
            targets,
        }
    }

    #[test]
    fn zero_corruption_is_exact() {
        let rec = record(&[10.0, 20.0, 35.0, 0.0]);
        let policy = ToyPolicy {
            corruption_rate: 0.0,
            ..ToyPolicy::default()
        };
        let cands = toy_policy_sample(&rec, &policy, 8).unwrap();
        assert_eq!(cands.len(), 8);
        let cfg = RewardConfig::new(0.3, NormMode::MeanOfGroundTruth).unwrap();
        let gt = rec.target_values();
        let rewards: Vec<f64> = cands
            .iter()
            .map(|c| {
                assert_eq!(c.tokens, rec.targets);
                assert!(c.logprobs.new.iter().all(|&l| l == 0.0));
                reward(&c.text, &gt, &cfg).unwrap().total
            })
            .collect();
        assert!(rewards.iter().all(|&r| r == 1.0));
        let adv = group_advantages(&rewards, &GrpoConfig::default()).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn full_corruption_scores_low() {
        let rec = record(&[80.0, 120.0, 150.0, 90.0, 60.0, 100.0]);
        let policy = ToyPolicy {
            corruption_rate: 1.0,
            seed: 4,
            ..ToyPolicy::default()
        };
        let cfg = RewardConfig::new(0.3, NormMode::MeanOfGroundTruth).unwrap();
        for c in toy_policy_sample(&rec, &policy, 8).unwrap() {
            assert_eq!(c.logprobs.new.len(), c.tokens.len());
            assert!(c.tokens.iter().zip(&rec.targets).all(|(a, b)| a != b));
            assert!(reward(&c.text, &rec.target_values(), &cfg).unwrap().total < 0.5);
        }
    }

    #[test]
    fn logprobs_are_consistent() {
        let policy = ToyPolicy {
            corruption_rate: 0.3,
            temperature: 2.0,
            ..ToyPolicy::default()
        };
        let p = policy.probs();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Heating flattens the distribution.
        assert!(p[0] < 0.7 && p[1] > 0.15);
        assert!(toy_policy_sample(&record(&[1.0]), &policy, 1).is_err());
    }
}
