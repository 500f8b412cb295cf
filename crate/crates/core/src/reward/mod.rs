//! Binary verifiable reward, group-normalized advantages and the clipped
//! GRPO surrogate objective.
//!
//! Nothing here samples or trains; the functions consume rewards and
//! per-token log-probabilities produced elsewhere.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{ExecStatus, ExecVerdict};
use crate::lint::LintVerdict;

pub const DEFAULT_CLIP_EPS: f64 = 0.2;
pub const DEFAULT_KL_BETA: f64 = 0.0;
pub const DEFAULT_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("group of size {0} is too small for advantages (need at least 2)")]
    GroupTooSmall(usize),
    #[error("rollout {rollout} of group {prompt_id} has no token scores")]
    MissingScores { prompt_id: String, rollout: usize },
    #[error("group {prompt_id}: {rewards} rewards but {sequences} score sequences")]
    ScoreCountMismatch {
        prompt_id: String,
        rewards: usize,
        sequences: usize,
    },
    #[error("non-finite value in group {0}")]
    NonFinite(String),
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub candidate_id: String,
    pub lint_ok: bool,
    pub tests_ok: bool,
    pub r: f64,
}

/// `r = 1` iff the source is Triton and every test case passed.
pub fn reward(candidate_id: impl Into<String>, lint: &LintVerdict, exec: &ExecVerdict) -> RewardRecord {
    reward_from_parts(candidate_id, lint.is_triton, exec.status)
}

pub fn reward_from_parts(candidate_id: impl Into<String>, is_triton: bool, status: ExecStatus) -> RewardRecord {
    let tests_ok = status == ExecStatus::Pass;
    RewardRecord {
        candidate_id: candidate_id.into(),
        lint_ok: is_triton,
        tests_ok,
        r: if is_triton && tests_ok { 1.0 } else { 0.0 },
    }
}

/// Population-normalized advantages. Groups whose spread is below `std_floor`
/// carry no signal and get all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>, RewardError> {
    if rewards.len() < 2 {
        return Err(RewardError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std < std_floor {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / std).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub logp_theta: f64,
    pub logp_old: f64,
    pub logp_ref: f64,
}

impl TokenScore {
    pub fn new(logp_theta: f64, logp_old: f64, logp_ref: f64) -> Self {
        Self {
            logp_theta,
            logp_old,
            logp_ref,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.logp_theta.is_finite() && self.logp_old.is_finite() && self.logp_ref.is_finite()
    }

    pub fn ratio(&self) -> f64 {
        (self.logp_theta - self.logp_old).exp()
    }
}

/// Per-token estimator of the divergence from the reference policy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `exp(d) - d - 1` with `d = logp_ref - logp_theta`; never negative.
    #[default]
    NonNegative,
    /// `logp_theta - logp_ref`; unbiased but can go negative per token.
    LogRatio,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub std_floor: f64,
    #[serde(default)]
    pub kl_estimator: KlEstimator,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: DEFAULT_CLIP_EPS,
            kl_beta: DEFAULT_KL_BETA,
            std_floor: DEFAULT_STD_FLOOR,
            kl_estimator: KlEstimator::NonNegative,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(RewardError::Config(format!(
                "clip_eps must be in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            return Err(RewardError::Config(format!(
                "kl_beta must be >= 0, got {}",
                self.kl_beta
            )));
        }
        if !(self.std_floor > 0.0 && self.std_floor.is_finite()) {
            return Err(RewardError::Config(format!(
                "std_floor must be > 0, got {}",
                self.std_floor
            )));
        }
        Ok(())
    }
}

pub fn kl_token(score: &TokenScore) -> f64 {
    kl_token_with(score, KlEstimator::NonNegative)
}

pub fn kl_token_with(score: &TokenScore, estimator: KlEstimator) -> f64 {
    let d = score.logp_ref - score.logp_theta;
    match estimator {
        KlEstimator::NonNegative => d.exp() - d - 1.0,
        KlEstimator::LogRatio => -d,
    }
}

fn kl_grad(score: &TokenScore, estimator: KlEstimator) -> f64 {
    match estimator {
        KlEstimator::NonNegative => 1.0 - (score.logp_ref - score.logp_theta).exp(),
        KlEstimator::LogRatio => 1.0,
    }
}

/// `min(ρÂ, clip(ρ, 1-ε, 1+ε)Â) - β·KL` for a single token.
pub fn grpo_token_surrogate(score: &TokenScore, advantage: f64, config: &GrpoConfig) -> f64 {
    let rho = score.ratio();
    let clipped = rho.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let policy = (rho * advantage).min(clipped * advantage);
    if config.kl_beta == 0.0 {
        policy
    } else {
        policy - config.kl_beta * kl_token_with(score, config.kl_estimator)
    }
}

/// Derivative of [`grpo_token_surrogate`] with respect to `logp_theta`.
///
/// Where the clipped branch is strictly smaller the policy term is flat.
pub fn grpo_token_surrogate_grad(score: &TokenScore, advantage: f64, config: &GrpoConfig) -> f64 {
    let rho = score.ratio();
    let clipped = rho.clamp(1.0 - config.clip_eps, 1.0 + config.clip_eps);
    let policy = if rho * advantage <= clipped * advantage {
        rho * advantage
    } else {
        0.0
    };
    policy - config.kl_beta * kl_grad(score, config.kl_estimator)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub rewards: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_scores: Option<Vec<Vec<TokenScore>>>,
}

impl RolloutGroup {
    pub fn new(prompt_id: impl Into<String>, rewards: Vec<f64>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            rewards,
            token_scores: None,
        }
    }

    pub fn with_scores(mut self, scores: Vec<Vec<TokenScore>>) -> Self {
        self.token_scores = Some(scores);
        self
    }

    fn scores(&self) -> Result<&[Vec<TokenScore>], RewardError> {
        let scores = self.token_scores.as_deref().ok_or_else(|| RewardError::MissingScores {
            prompt_id: self.prompt_id.clone(),
            rollout: 0,
        })?;
        if scores.len() != self.rewards.len() {
            return Err(RewardError::ScoreCountMismatch {
                prompt_id: self.prompt_id.clone(),
                rewards: self.rewards.len(),
                sequences: scores.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| s.is_empty()) {
            return Err(RewardError::MissingScores {
                prompt_id: self.prompt_id.clone(),
                rollout: i,
            });
        }
        if !scores.iter().flatten().all(TokenScore::is_finite) || !self.rewards.iter().all(|r| r.is_finite()) {
            return Err(RewardError::NonFinite(self.prompt_id.clone()));
        }
        Ok(scores)
    }

    /// `(1/G) Σ_i (1/|o_i|) Σ_t surrogate` for this group.
    pub fn objective(&self, config: &GrpoConfig) -> Result<f64, RewardError> {
        let scores = self.scores()?;
        let adv = group_advantages(&self.rewards, config.std_floor)?;
        let g = scores.len() as f64;
        let total: f64 = scores
            .iter()
            .zip(&adv)
            .map(|(seq, &a)| seq.iter().map(|s| grpo_token_surrogate(s, a, config)).sum::<f64>() / seq.len() as f64)
            .sum();
        Ok(total / g)
    }

    /// Per-token derivative of [`RolloutGroup::objective`] with respect to `logp_theta`.
    pub fn objective_grad(&self, config: &GrpoConfig) -> Result<Vec<Vec<f64>>, RewardError> {
        let scores = self.scores()?;
        let adv = group_advantages(&self.rewards, config.std_floor)?;
        let g = scores.len() as f64;
        Ok(scores
            .iter()
            .zip(&adv)
            .map(|(seq, &a)| {
                let w = 1.0 / (g * seq.len() as f64);
                seq.iter()
                    .map(|s| w * grpo_token_surrogate_grad(s, a, config))
                    .collect()
            })
            .collect())
    }
}

/// Mean of the per-group objectives.
pub fn grpo_objective(groups: &[RolloutGroup], config: &GrpoConfig) -> Result<f64, RewardError> {
    config.validate()?;
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in groups {
        total += g.objective(config)?;
    }
    Ok(total / groups.len() as f64)
}

/// Gradient of [`grpo_objective`] with respect to every token's `logp_theta`,
/// indexed `[group][rollout][token]`.
pub fn grpo_objective_grad(groups: &[RolloutGroup], config: &GrpoConfig) -> Result<Vec<Vec<Vec<f64>>>, RewardError> {
    config.validate()?;
    let n = groups.len() as f64;
    groups
        .iter()
        .map(|g| {
            let mut grad = g.objective_grad(config)?;
            grad.iter_mut().flatten().for_each(|x| *x /= n);
            Ok(grad)
        })
        .collect()
}

/// One JSONL line of reward output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewardRecord {
    pub prompt_id: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

/// Advantages for `group`, plus its objective when token scores are present.
pub fn group_record(group: &RolloutGroup, config: &GrpoConfig) -> Result<GroupRewardRecord, RewardError> {
    config.validate()?;
    let advantages = group_advantages(&group.rewards, config.std_floor)?;
    let objective = match group.token_scores {
        Some(_) => Some(group.objective(config)?),
        None => None,
    };
    Ok(GroupRewardRecord {
        prompt_id: group.prompt_id.clone(),
        rewards: group.rewards.clone(),
        advantages,
        objective,
    })
}
