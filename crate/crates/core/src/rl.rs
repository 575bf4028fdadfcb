//! Reward shaping and policy-optimization kernels.
//!
//! The reward for a forecast decoded from model text is
//!
//! ```text
//! R = exp(-(ln 2 / x_h) * E) - 0.5 * |L_out - L_gt| / L_gt + delta_dec
//! ```
//!
//! where `E` is the normalized RMSE over the aligned prefix and
//! `delta_dec = -0.5` on any decoding failure. Group-relative advantages,
//! the per-token KL estimator and the clipped surrogate follow GRPO.

use alloc::vec::Vec;

use crate::numcodec::parse_token_stream;

pub const DECODE_PENALTY: f64 = -0.5;
pub const LENGTH_PENALTY_SCALE: f64 = 0.5;
pub const NORM_FLOOR: f64 = 1e-9;
pub const STD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RlError {
    #[error("ground truth is empty")]
    EmptyGroundTruth,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("invalid config: {0}")]
    InvalidConfig(&'static str),
}

/// Normalizer `d` of the reward's NRMSE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormMode {
    Constant(f64),
    /// `max(mean(gt), 1e-9)` over the compared values.
    MeanOfGroundTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    half_score: f64,
    norm: NormMode,
}

impl RewardConfig {
    pub fn new(half_score: f64, norm: NormMode) -> Result<Self, RlError> {
        if !(half_score > 0.0 && half_score.is_finite()) {
            return Err(RlError::InvalidConfig("half-score rate must be positive"));
        }
        if let NormMode::Constant(d) = norm {
            if !(d > 0.0 && d.is_finite()) {
                return Err(RlError::InvalidConfig("normalization constant must be positive"));
            }
        }
        Ok(RewardConfig { half_score, norm })
    }

    pub fn half_score(&self) -> f64 {
        self.half_score
    }

    pub fn norm(&self) -> NormMode {
        self.norm
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub accuracy_term: f64,
    pub length_penalty: f64,
    pub decode_penalty: f64,
    pub nrmse: f64,
    pub total: f64,
    pub output_len: usize,
}

/// `exp(-(ln 2 / x_h) * E)`, written as `exp(-ln 2 * (E / x_h))` so that
/// `E == x_h` yields exactly 0.5.
pub fn accuracy_term(nrmse: f64, half_score: f64) -> f64 {
    libm::exp(-core::f64::consts::LN_2 * (nrmse / half_score))
}

/// `(1/d) * sqrt(mean((pred - gt)^2))`.
pub fn nrmse_reward(pred: &[f64], gt: &[f64], norm: NormMode) -> Result<f64, RlError> {
    if pred.len() != gt.len() {
        return Err(RlError::LengthMismatch(pred.len(), gt.len()));
    }
    if gt.is_empty() {
        return Err(RlError::EmptyGroundTruth);
    }
    let n = gt.len() as f64;
    let mse = pred.iter().zip(gt).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / n;
    let d = match norm {
        NormMode::Constant(d) => d,
        NormMode::MeanOfGroundTruth => (gt.iter().sum::<f64>() / n).max(NORM_FLOOR),
    };
    Ok(libm::sqrt(mse) / d)
}

/// Scores model output text against the ground-truth series.
pub fn reward(output_text: &str, gt: &[f64], cfg: &RewardConfig) -> Result<RewardBreakdown, RlError> {
    if gt.is_empty() {
        return Err(RlError::EmptyGroundTruth);
    }
    let scan = parse_token_stream(output_text);
    let decoded = scan.values();
    let out_len = decoded.len();
    let aligned = out_len.min(gt.len());
    let (nrmse, accuracy) = if aligned == 0 {
        (0.0, 0.0)
    } else {
        let e = nrmse_reward(&decoded[..aligned], &gt[..aligned], cfg.norm)?;
        (e, accuracy_term(e, cfg.half_score))
    };
    let length_penalty =
        -LENGTH_PENALTY_SCALE * out_len.abs_diff(gt.len()) as f64 / gt.len() as f64;
    let decode_penalty = if scan.decode_failure() { DECODE_PENALTY } else { 0.0 };
    Ok(RewardBreakdown {
        accuracy_term: accuracy,
        length_penalty,
        decode_penalty,
        nrmse,
        total: accuracy + length_penalty + decode_penalty,
        output_len: out_len,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub std_normalize: bool,
    pub kl_beta: f64,
    pub clip_epsilon: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        GrpoConfig {
            group_size: 8,
            std_normalize: true,
            kl_beta: 0.04,
            clip_epsilon: 0.2,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if self.group_size < 2 {
            return Err(RlError::GroupTooSmall(self.group_size));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(RlError::InvalidConfig("kl beta must be non-negative"));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon.is_finite()) {
            return Err(RlError::InvalidConfig("clip epsilon must be positive"));
        }
        Ok(())
    }
}

/// `r_i - mean(r)`, optionally divided by `max(std(r), 1e-9)` (population std).
/// Exactly mean-zero up to rounding; a second centering pass removes the
/// residual of the first.
pub fn group_advantages(rewards: &[f64], cfg: &GrpoConfig) -> Result<Vec<f64>, RlError> {
    if rewards.len() < 2 {
        return Err(RlError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let mut adv: Vec<f64> = rewards.iter().map(|r| r - mean).collect();
    if cfg.std_normalize {
        let std = libm::sqrt(adv.iter().map(|a| a * a).sum::<f64>() / n);
        let scale = std.max(STD_FLOOR);
        adv.iter_mut().for_each(|a| *a /= scale);
    }
    let residual = adv.iter().sum::<f64>() / n;
    adv.iter_mut().for_each(|a| *a -= residual);
    Ok(adv)
}

/// `exp(d) - d - 1` with `d = logp_ref - logp_policy`, evaluated by series
/// near zero so that it is strictly positive whenever `d != 0`.
pub fn kl_term(delta: f64) -> f64 {
    if libm::fabs(delta) < 1e-2 {
        let d = delta;
        d * d * (0.5 + d * (1.0 / 6.0 + d * (1.0 / 24.0 + d * (1.0 / 120.0 + d / 720.0))))
    } else {
        libm::expm1(delta) - delta
    }
}

/// Derivative of [`kl_term`] with respect to the policy log-prob.
fn kl_term_grad_policy(delta: f64) -> f64 {
    -libm::expm1(delta)
}

pub fn kl_estimate(logp_policy: &[f64], logp_ref: &[f64]) -> Result<Vec<f64>, RlError> {
    if logp_policy.len() != logp_ref.len() {
        return Err(RlError::LengthMismatch(logp_policy.len(), logp_ref.len()));
    }
    Ok(logp_policy
        .iter()
        .zip(logp_ref)
        .map(|(p, r)| kl_term(r - p))
        .collect())
}

/// Per-token log-probabilities of one sampled sequence under the current,
/// sampling-time and reference policies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceLogProbs {
    pub new: Vec<f64>,
    pub old: Vec<f64>,
    pub reference: Vec<f64>,
}

fn check_group(group: &[SequenceLogProbs], advantages: &[f64]) -> Result<(), RlError> {
    if group.len() != advantages.len() {
        return Err(RlError::ShapeMismatch("one advantage per sequence"));
    }
    if group.is_empty() {
        return Err(RlError::ShapeMismatch("empty group"));
    }
    for s in group {
        if s.new.is_empty() {
            return Err(RlError::ShapeMismatch("empty sequence"));
        }
        if s.old.len() != s.new.len() || s.reference.len() != s.new.len() {
            return Err(RlError::ShapeMismatch("log-prob lists differ in length"));
        }
    }
    Ok(())
}

/// Clipped surrogate minus the KL penalty, averaged over tokens then over
/// sequences. The value is to be maximized.
pub fn grpo_objective(
    group: &[SequenceLogProbs],
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<f64, RlError> {
    check_group(group, advantages)?;
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let mut total = 0.0;
    for (s, &a) in group.iter().zip(advantages) {
        let mut seq = 0.0;
        for i in 0..s.new.len() {
            let ratio = libm::exp(s.new[i] - s.old[i]);
            let surrogate = (ratio * a).min(ratio.clamp(lo, hi) * a);
            seq += surrogate - cfg.kl_beta * kl_term(s.reference[i] - s.new[i]);
        }
        total += seq / s.new.len() as f64;
    }
    Ok(total / group.len() as f64)
}

/// Analytic gradient of [`grpo_objective`] with respect to every `new`
/// log-prob. Where the clipped branch is strictly smaller the surrogate is
/// flat in `new`.
pub fn grpo_objective_grad(
    group: &[SequenceLogProbs],
    advantages: &[f64],
    cfg: &GrpoConfig,
) -> Result<Vec<Vec<f64>>, RlError> {
    check_group(group, advantages)?;
    let (lo, hi) = (1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let g = group.len() as f64;
    Ok(group
        .iter()
        .zip(advantages)
        .map(|(s, &a)| {
            let scale = 1.0 / (g * s.new.len() as f64);
            (0..s.new.len())
                .map(|i| {
                    let ratio = libm::exp(s.new[i] - s.old[i]);
                    let unclipped = ratio * a;
                    let surrogate_grad = if unclipped <= ratio.clamp(lo, hi) * a {
                        unclipped
                    } else {
                        0.0
                    };
                    let kl_grad = kl_term_grad_policy(s.reference[i] - s.new[i]);
                    scale * (surrogate_grad - cfg.kl_beta * kl_grad)
                })
                .collect()
        })
        .collect())
}

/// Masked negative log-likelihood: mean of `-logp` over positions where
/// `mask` is true.
pub fn sft_loss(logp_targets: &[f64], mask: &[bool]) -> Result<f64, RlError> {
    if logp_targets.len() != mask.len() {
        return Err(RlError::LengthMismatch(logp_targets.len(), mask.len()));
    }
    let (sum, count) = logp_targets
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (lp, _)| (s + lp, c + 1));
    if count == 0 {
        return Err(RlError::EmptyMask);
    }
    Ok(-sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::String;
    use alloc::vec;
    use core::f64::consts::LN_2;

    fn cfg(x_h: f64) -> RewardConfig {
        RewardConfig::new(x_h, NormMode::MeanOfGroundTruth).unwrap()
    }

    fn tokens(values: &[f64]) -> String {
        let mut s = String::new();
        for &v in values {
            let t = crate::numcodec::encode(v, crate::RangeMode::Clamp).unwrap();
            s.push_str(&alloc::format!("{t}"));
        }
        s
    }

    #[test]
    fn perfect_output_scores_one() {
        let gt = [100.0, 200.0, 5.0];
        let r = reward(&tokens(&gt), &gt, &cfg(0.3)).unwrap();
        assert_eq!((r.nrmse, r.total), (0.0, 1.0));
        assert_eq!(r.accuracy_term + r.length_penalty + r.decode_penalty, r.total);
    }

    #[test]
    fn half_score_at_x_h() {
        for x_h in [0.1, 0.3, 1.0] {
            assert_eq!(accuracy_term(x_h, x_h), 0.5);
        }
        // RMSE 1 against d = 10 gives E = 0.1 exactly.
        let gt = [100.0, 200.0];
        let c = RewardConfig::new(0.1, NormMode::Constant(10.0)).unwrap();
        let r = reward(&tokens(&[101.0, 201.0]), &gt, &c).unwrap();
        assert_eq!(r.nrmse, 0.1);
        assert_eq!(r.total, 0.5);
    }

    #[test]
    fn short_output_is_penalized() {
        let gt: Vec<f64> = (1..=36).map(|v| v as f64).collect();
        let r = reward(&tokens(&gt[..18]), &gt, &cfg(0.3)).unwrap();
        assert_eq!(r.length_penalty, -0.25);
        assert_eq!(r.total, 0.75);
    }

    #[test]
    fn undecodable_output_floor() {
        let gt = [1.0; 36];
        let r = reward("I think traffic will rise", &gt, &cfg(0.3)).unwrap();
        assert_eq!(
            (r.accuracy_term, r.length_penalty, r.decode_penalty, r.total),
            (0.0, -0.5, -0.5, -1.0)
        );
        let partial = reward("<|FP10/0|><|FP12345/0|>", &[1.0, 1.0], &cfg(0.3)).unwrap();
        assert_eq!(partial.decode_penalty, -0.5);
        assert_eq!(partial.output_len, 1);
        assert_eq!(reward("", &[], &cfg(0.3)), Err(RlError::EmptyGroundTruth));
    }

    #[test]
    fn nrmse_examples() {
        let e = nrmse_reward(&[110.0, 190.0], &[100.0, 200.0], NormMode::MeanOfGroundTruth).unwrap();
        assert!((e - 10.0 / 150.0).abs() < 1e-15);
        assert_eq!(nrmse_reward(&[1.0], &[1.0], NormMode::Constant(2.0)).unwrap(), 0.0);
        let z = nrmse_reward(&[1.0], &[0.0], NormMode::MeanOfGroundTruth).unwrap();
        assert_eq!(z, 1.0 / NORM_FLOOR);
        assert_eq!(
            nrmse_reward(&[1.0], &[1.0, 2.0], NormMode::Constant(1.0)),
            Err(RlError::LengthMismatch(1, 2))
        );
    }

    #[test]
    fn advantage_examples() {
        let plain = GrpoConfig {
            std_normalize: false,
            ..GrpoConfig::default()
        };
        let a = group_advantages(&[0.2, 0.4, 0.6], &plain).unwrap();
        for (x, e) in a.iter().zip([-0.2, 0.0, 0.2]) {
            assert!((x - e).abs() < 1e-15);
        }
        let a = group_advantages(&[0.2, 0.4, 0.6], &GrpoConfig::default()).unwrap();
        let k = 0.2 / libm::sqrt(0.08 / 3.0);
        for (x, e) in a.iter().zip([-k, 0.0, k]) {
            assert!((x - e).abs() < 1e-12);
        }
        assert!((k - 1.2247).abs() < 1e-4);
        for c in [plain, GrpoConfig::default()] {
            assert_eq!(group_advantages(&[0.7; 4], &c).unwrap(), [0.0; 4]);
        }
        assert_eq!(group_advantages(&[1.0], &plain), Err(RlError::GroupTooSmall(1)));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_estimate(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(), [0.0, 0.0]);
        let k = kl_estimate(&[0.0, 0.0], &[LN_2, -LN_2]).unwrap();
        assert!((k[0] - (1.0 - LN_2)).abs() < 1e-15);
        assert!((k[1] - (LN_2 - 0.5)).abs() < 1e-15);
        assert!((k[0] - 0.30685).abs() < 1e-5 && (k[1] - 0.19315).abs() < 1e-5);
        assert!(kl_term(1e-9) > 0.0 && kl_term(-1e-9) > 0.0);
        // Series and closed form agree at the switch point.
        assert!((kl_term(0.00999999) - (libm::expm1(0.00999999) - 0.00999999)).abs() < 1e-17);
    }

    fn seq(new: f64, old: f64) -> SequenceLogProbs {
        SequenceLogProbs {
            new: vec![new],
            old: vec![old],
            reference: vec![new],
        }
    }

    #[test]
    fn objective_examples() {
        let c = GrpoConfig {
            kl_beta: 0.0,
            ..GrpoConfig::default()
        };
        let group = [seq(-1.0, -1.0), seq(-2.0, -2.0), seq(-0.5, -0.5)];
        let adv = group_advantages(&[0.1, 0.9, 0.5], &c).unwrap();
        assert!(grpo_objective(&group, &adv, &c).unwrap().abs() < 1e-15);

        let up = grpo_objective(&[seq(libm::log(1.5), 0.0)], &[1.0], &c).unwrap();
        assert!((up - 1.2).abs() < 1e-15);
        let down = grpo_objective(&[seq(libm::log(0.5), 0.0)], &[-1.0], &c).unwrap();
        assert!((down + 0.8).abs() < 1e-15);
        assert!(grpo_objective(&group, &adv[..2], &c).is_err());
    }

    #[test]
    fn sft_loss_examples() {
        assert!((sft_loss(&[libm::log(0.5)], &[true]).unwrap() - LN_2).abs() < 1e-15);
        let l = sft_loss(&[-9.0, -9.0, -1.0, -3.0], &[false, false, true, true]).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(sft_loss(&[-1.0, -3.0], &[true, true]).unwrap(), 2.0);
        assert_eq!(sft_loss(&[-1.0], &[false]), Err(RlError::EmptyMask));
    }
}
