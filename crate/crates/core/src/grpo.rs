//! Group-relative policy optimization on toy categorical policies.
//!
//! Each prompt owns a logit vector over a finite answer vocabulary. The
//! objective, its analytic gradient and a small training loop are exposed
//! so the math can be checked numerically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::rng::DetRng;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum GrpoError {
    #[error("group of size {0} is too small (need at least 2)")]
    GroupTooSmall(usize),
    #[error("reference policy has zero mass where theta does not (prompt {0})")]
    SupportMismatch(String),
    #[error("unknown prompt id {0}")]
    UnknownPrompt(String),
    #[error("answer index {index} outside vocabulary of size {vocab}")]
    AnswerOutOfRange { index: usize, vocab: usize },
    #[error("invalid grpo config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    #[default]
    Exact,
    K3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub beta: f64,
    pub adv_eps: f64,
    pub kl_estimator: KlEstimator,
    pub mask_truncated: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            eps_low: 0.2,
            eps_high: 0.28,
            beta: 1e-3,
            adv_eps: 1e-8,
            kl_estimator: KlEstimator::Exact,
            mask_truncated: true,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        if !(self.eps_low > 0.0 && self.eps_high > 0.0) {
            return Err(GrpoError::Config("eps_low and eps_high must be positive".into()));
        }
        if !(self.beta >= 0.0) || !(self.adv_eps >= 0.0) {
            return Err(GrpoError::Config("beta and adv_eps must be non-negative".into()));
        }
        Ok(())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CategoricalPolicy {
    pub logits: BTreeMap<String, Vec<f64>>,
}

impl CategoricalPolicy {
    pub fn uniform<I, S>(prompts: I, vocab: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            logits: prompts.into_iter().map(|p| (p.into(), vec![0.0; vocab])).collect(),
        }
    }

    pub fn logits_of(&self, prompt: &str) -> Result<&[f64], GrpoError> {
        self.logits
            .get(prompt)
            .map(Vec::as_slice)
            .ok_or_else(|| GrpoError::UnknownPrompt(prompt.to_string()))
    }

    pub fn probs(&self, prompt: &str) -> Result<Vec<f64>, GrpoError> {
        self.logits_of(prompt).map(softmax)
    }

    /// Adds `scale * grad` to the logits of every prompt present in `grad`.
    pub fn step(&mut self, grad: &CategoricalPolicy, scale: f64) {
        for (p, g) in &grad.logits {
            if let Some(l) = self.logits.get_mut(p) {
                l.iter_mut().zip(g).for_each(|(x, d)| *x += scale * d);
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            logits: self.logits.iter().map(|(k, v)| (k.clone(), vec![0.0; v.len()])).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub answer: usize,
    pub reward: f64,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_id: String,
    pub outcomes: Vec<Outcome>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn new(prompt_id: impl Into<String>, outcomes: Vec<Outcome>, adv_eps: f64) -> Result<Self, GrpoError> {
        let rewards: Vec<f64> = outcomes.iter().map(|o| o.reward).collect();
        let advantages = group_advantages(&rewards, adv_eps)?;
        Ok(Self {
            prompt_id: prompt_id.into(),
            outcomes,
            advantages,
        })
    }
}

/// `(r - mean) / (std + adv_eps)` with the population standard deviation.
/// Zero-variance groups give all-zero advantages.
pub fn group_advantages(rewards: &[f64], adv_eps: f64) -> Result<Vec<f64>, GrpoError> {
    let n = rewards.len();
    if n < 2 {
        return Err(GrpoError::GroupTooSmall(n));
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Ok(vec![0.0; n]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / (std + adv_eps)).collect())
}

pub fn clipped_surrogate(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    (ratio * advantage).min(clipped * advantage)
}

/// d surrogate / d ratio; the clipped branch is flat.
fn surrogate_slope(ratio: f64, advantage: f64, eps_low: f64, eps_high: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps_low, 1.0 + eps_high);
    if clipped != ratio && clipped * advantage < ratio * advantage {
        0.0
    } else {
        advantage
    }
}

fn check_support(p: &[f64], q: &[f64], prompt: &str) -> Result<(), GrpoError> {
    if p.iter().zip(q).any(|(pi, qi)| *qi == 0.0 && *pi > 0.0) {
        return Err(GrpoError::SupportMismatch(prompt.to_string()));
    }
    Ok(())
}

/// Closed-form `sum p log(p / q)`.
pub fn kl_exact(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

/// Per-sample estimator `q/p - ln(q/p) - 1`, evaluated at the sampled answer.
pub fn kl_k3(p_sample: f64, q_sample: f64) -> f64 {
    let t = q_sample / p_sample;
    t - t.ln() - 1.0
}

/// KL penalty for one group: exact over the prompt's vocabulary or the k3
/// estimate averaged over the group's samples (masked samples count as 0).
pub fn kl_term(
    theta: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    group: &RolloutGroup,
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    let p = theta.probs(&group.prompt_id)?;
    let q = reference.probs(&group.prompt_id)?;
    check_support(&p, &q, &group.prompt_id)?;
    Ok(match cfg.kl_estimator {
        KlEstimator::Exact => kl_exact(&p, &q),
        KlEstimator::K3 => {
            let g = group.outcomes.len() as f64;
            group
                .outcomes
                .iter()
                .filter(|o| !(cfg.mask_truncated && o.truncated))
                .map(|o| kl_k3(p[o.answer], q[o.answer]))
                .sum::<f64>()
                / g
        }
    })
}

fn check_answers(group: &RolloutGroup, vocab: usize) -> Result<(), GrpoError> {
    if group.outcomes.len() < 2 {
        return Err(GrpoError::GroupTooSmall(group.outcomes.len()));
    }
    match group.outcomes.iter().find(|o| o.answer >= vocab) {
        Some(o) => Err(GrpoError::AnswerOutOfRange { index: o.answer, vocab }),
        None => Ok(()),
    }
}

fn group_value_and_grad(
    theta: &CategoricalPolicy,
    old: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    group: &RolloutGroup,
    cfg: &GrpoConfig,
) -> Result<(f64, Vec<f64>), GrpoError> {
    let p = theta.probs(&group.prompt_id)?;
    let p_old = old.probs(&group.prompt_id)?;
    let q = reference.probs(&group.prompt_id)?;
    check_answers(group, p.len())?;
    check_support(&p, &q, &group.prompt_id)?;
    let g = group.outcomes.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for (o, adv) in group.outcomes.iter().zip(&group.advantages) {
        if cfg.mask_truncated && o.truncated {
            continue;
        }
        let a = o.answer;
        let ratio = p[a] / p_old[a];
        value += clipped_surrogate(ratio, *adv, cfg.eps_low, cfg.eps_high) / g;
        let slope = surrogate_slope(ratio, *adv, cfg.eps_low, cfg.eps_high) * ratio / g;
        if slope != 0.0 {
            for (k, gk) in grad.iter_mut().enumerate() {
                *gk += slope * (f64::from(u8::from(k == a)) - p[k]);
            }
        }
    }
    if cfg.beta != 0.0 {
        match cfg.kl_estimator {
            KlEstimator::Exact => {
                let kl = kl_exact(&p, &q);
                value -= cfg.beta * kl;
                for (k, gk) in grad.iter_mut().enumerate() {
                    if p[k] > 0.0 {
                        *gk -= cfg.beta * p[k] * ((p[k] / q[k]).ln() - kl);
                    }
                }
            }
            KlEstimator::K3 => {
                for o in &group.outcomes {
                    if cfg.mask_truncated && o.truncated {
                        continue;
                    }
                    let a = o.answer;
                    let t = q[a] / p[a];
                    value -= cfg.beta * kl_k3(p[a], q[a]) / g;
                    for (k, gk) in grad.iter_mut().enumerate() {
                        let d = f64::from(u8::from(k == a)) - p[k];
                        *gk -= cfg.beta * d * (1.0 - t) / g;
                    }
                }
            }
        }
    }
    Ok((value, grad))
}

/// Mean over groups of the clipped surrogate average minus `beta * KL`.
pub fn grpo_objective(
    theta: &CategoricalPolicy,
    old: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<f64, GrpoError> {
    if groups.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in groups {
        total += group_value_and_grad(theta, old, reference, g, cfg)?.0;
    }
    Ok(total / groups.len() as f64)
}

/// Analytic gradient of [`grpo_objective`] with respect to every logit of
/// `theta`. Groups are evaluated independently and summed in input order.
pub fn grpo_gradient(
    theta: &CategoricalPolicy,
    old: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
) -> Result<CategoricalPolicy, GrpoError> {
    let per_group = par::map(groups, |g| group_value_and_grad(theta, old, reference, g, cfg));
    let mut out = theta.zeros_like();
    let n = groups.len() as f64;
    for (g, res) in groups.iter().zip(per_group) {
        let (_, grad) = res?;
        let slot = out.logits.get_mut(&g.prompt_id).expect("prompt checked during evaluation");
        slot.iter_mut().zip(grad).for_each(|(s, d)| *s += d / n);
    }
    Ok(out)
}

/// Central finite-difference gradient of the objective, for verification.
pub fn numeric_gradient(
    theta: &CategoricalPolicy,
    old: &CategoricalPolicy,
    reference: &CategoricalPolicy,
    groups: &[RolloutGroup],
    cfg: &GrpoConfig,
    h: f64,
) -> Result<CategoricalPolicy, GrpoError> {
    let mut out = theta.zeros_like();
    let mut probe = theta.clone();
    for (prompt, logits) in &theta.logits {
        for k in 0..logits.len() {
            let base = logits[k];
            probe.logits.get_mut(prompt).unwrap()[k] = base + h;
            let up = grpo_objective(&probe, old, reference, groups, cfg)?;
            probe.logits.get_mut(prompt).unwrap()[k] = base - h;
            let down = grpo_objective(&probe, old, reference, groups, cfg)?;
            probe.logits.get_mut(prompt).unwrap()[k] = base;
            out.logits.get_mut(prompt).unwrap()[k] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all logits.
pub fn max_relative_error(a: &CategoricalPolicy, b: &CategoricalPolicy, floor: f64) -> f64 {
    a.logits
        .iter()
        .flat_map(|(p, va)| {
            let vb = &b.logits[p];
            va.iter().zip(vb).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- simulation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPrompt {
    pub id: String,
    pub rewarded: Vec<usize>,
}

/// Synthetic task: every prompt shares one answer vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub vocab_size: usize,
    pub prompts: Vec<SimPrompt>,
    /// Length of each answer, used for the response-length proxy and for
    /// truncation. Defaults to `1 + index`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_lengths: Option<Vec<f64>>,
    /// Answers longer than this are marked truncated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_response_len: Option<f64>,
}

impl SimTask {
    /// `n_prompts` prompts with one rewarded answer each, drawn uniformly.
    pub fn synthetic(n_prompts: usize, vocab_size: usize, seed: u64) -> Self {
        let mut rng = DetRng::substream(seed, 0x7461_736b);
        let prompts = (0..n_prompts)
            .map(|i| SimPrompt {
                id: format!("p{i:04}"),
                rewarded: vec![rng.below(vocab_size as u64) as usize],
            })
            .collect();
        Self {
            vocab_size,
            prompts,
            answer_lengths: None,
            max_response_len: None,
        }
    }

    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.vocab_size == 0 {
            return Err(GrpoError::Config("vocab_size must be positive".into()));
        }
        if let Some(l) = &self.answer_lengths {
            if l.len() != self.vocab_size {
                return Err(GrpoError::Config(format!(
                    "answer_lengths has {} entries for vocab_size {}",
                    l.len(),
                    self.vocab_size
                )));
            }
        }
        for p in &self.prompts {
            if p.rewarded.is_empty() {
                return Err(GrpoError::Config(format!("prompt {} has no rewarded answer", p.id)));
            }
            if let Some(&bad) = p.rewarded.iter().find(|&&r| r >= self.vocab_size) {
                return Err(GrpoError::AnswerOutOfRange { index: bad, vocab: self.vocab_size });
            }
        }
        Ok(())
    }

    pub fn answer_length(&self, answer: usize) -> f64 {
        self.answer_lengths
            .as_ref()
            .map_or(1.0 + answer as f64, |l| l[answer])
    }

    fn truncated(&self, answer: usize) -> bool {
        self.max_response_len
            .is_some_and(|m| self.answer_length(answer) > m)
    }
}

/// Reward for choosing `answer` on a prompt.
pub trait SimReward: Sync {
    fn reward(&self, prompt: &SimPrompt, answer: usize) -> f64;
}

/// 1 for a rewarded answer index, 0 otherwise.
pub struct IndexReward;

impl SimReward for IndexReward {
    fn reward(&self, prompt: &SimPrompt, answer: usize) -> f64 {
        f64::from(u8::from(prompt.rewarded.contains(&answer)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mean_reward: f64,
    pub accuracy: f64,
    pub response_proxy: f64,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Exact expected reward, greedy accuracy and expected answer length under
/// `policy`, averaged over prompts.
pub fn evaluate(
    policy: &CategoricalPolicy,
    task: &SimTask,
    reward: &dyn SimReward,
    step: usize,
) -> Result<TraceRow, GrpoError> {
    let per_prompt = par::map(&task.prompts, |p| -> Result<(f64, f64, f64), GrpoError> {
        let logits = policy.logits_of(&p.id)?;
        let probs = softmax(logits);
        let exp_r: f64 = probs.iter().enumerate().map(|(j, pj)| pj * reward.reward(p, j)).sum();
        let hit = f64::from(u8::from(p.rewarded.contains(&argmax(logits))));
        let len: f64 = probs.iter().enumerate().map(|(j, pj)| pj * task.answer_length(j)).sum();
        Ok((exp_r, hit, len))
    });
    let (mut r, mut a, mut l) = (0.0, 0.0, 0.0);
    for res in per_prompt {
        let (x, y, z) = res?;
        r += x;
        a += y;
        l += z;
    }
    let n = task.prompts.len().max(1) as f64;
    Ok(TraceRow {
        step,
        mean_reward: r / n,
        accuracy: a / n,
        response_proxy: l / n,
    })
}

/// Samples one group per prompt from `policy`. Each prompt draws from its
/// own sub-stream so results do not depend on evaluation order.
pub fn sample_groups(
    policy: &CategoricalPolicy,
    task: &SimTask,
    reward: &dyn SimReward,
    cfg: &GrpoConfig,
    seed: u64,
    step: usize,
) -> Result<Vec<RolloutGroup>, GrpoError> {
    let step_seed = DetRng::derive_seed(seed, step as u64);
    let indices: Vec<usize> = (0..task.prompts.len()).collect();
    par::map(&indices, |&idx| {
        let p = &task.prompts[idx];
        let mut rng = DetRng::substream(step_seed, idx as u64);
        let probs = policy.probs(&p.id)?;
        let outcomes = (0..cfg.group_size)
            .map(|_| {
                let a = rng.categorical(&probs);
                Outcome {
                    answer: a,
                    reward: reward.reward(p, a),
                    truncated: task.truncated(a),
                }
            })
            .collect();
        RolloutGroup::new(p.id.clone(), outcomes, cfg.adv_eps)
    })
    .into_iter()
    .collect()
}

/// Plain gradient ascent starting from uniform logits, which also serve as
/// the reference policy. Row 0 is the initial evaluation.
pub fn simulate_training(
    task: &SimTask,
    reward: &dyn SimReward,
    cfg: &GrpoConfig,
    steps: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Vec<TraceRow>, GrpoError> {
    cfg.validate()?;
    task.validate()?;
    let reference = CategoricalPolicy::uniform(task.prompts.iter().map(|p| p.id.clone()), task.vocab_size);
    let mut theta = reference.clone();
    let mut trace = vec![evaluate(&theta, task, reward, 0)?];
    for step in 1..=steps {
        let old = theta.clone();
        let groups = sample_groups(&old, task, reward, cfg, seed, step)?;
        let grad = grpo_gradient(&theta, &old, &reference, &groups, cfg)?;
        theta.step(&grad, learning_rate);
        trace.push(evaluate(&theta, task, reward, step)?);
    }
    Ok(trace)
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}
