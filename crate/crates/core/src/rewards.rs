//! Rollout scoring: answer correctness, format compliance, evidence overlap
//! and the gated composition
//!
//! ```text
//! r_total = r_ans * (1 + lambda1 * r_pos) + lambda2 * r_fmt
//!         + lambda3 * ngram_sim        (text-to-SQL with r_ans = 0 only)
//! ```

use std::collections::HashSet;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::metrics::{bleu, exact_match, token_f1, BleuConfig, NormalizationPolicy};
use crate::response::{reward_format, ParsedResponse};
use crate::sample::{Sample, TaskType};
use crate::sql::{execution_match, ngram_similarity, ExecOptions, SqlError};
use crate::table::CellRef;

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("sample {0} has no database reference")]
    DatabaseUnavailable(String),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error("answer mode is `judge` but no judge is configured")]
    JudgeNotConfigured,
    #[error("judge failed: {0}")]
    Judge(String),
    #[error("invalid reward config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AnswerMode {
    #[default]
    Rule,
    Judge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    /// Weight of the SQL n-gram shaping term, applied on execution failure.
    pub lambda3: f64,
    /// Token-F1 threshold for long answers.
    pub phi: f64,
    /// BLEU threshold for long-form / table-to-text answers.
    pub tau_bleu: f64,
    pub ans_mode: AnswerMode,
    pub ngram_n: usize,
    pub sql_timeout_s: f64,
    pub strict_order: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.0,
            lambda2: 0.2,
            lambda3: 0.1,
            phi: 0.5,
            tau_bleu: 0.3,
            ans_mode: AnswerMode::Rule,
            ngram_n: 2,
            sql_timeout_s: 30.0,
            strict_order: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(RewardError::Config(format!("{name} = {v}")));
            }
        }
        for (name, v) in [("phi", self.phi), ("tau_bleu", self.tau_bleu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(RewardError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(self.sql_timeout_s > 0.0) {
            return Err(RewardError::Config("sql_timeout_s must be positive".into()));
        }
        Ok(())
    }

    pub fn exec_options(&self) -> ExecOptions {
        ExecOptions {
            timeout: Duration::from_secs_f64(self.sql_timeout_s),
            strict_order: self.strict_order,
        }
    }

    /// Largest value `r_total` can take under this config.
    pub fn max_total(&self) -> f64 {
        1.0 + self.lambda1 + self.lambda2 + self.lambda3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ans: u8,
    pub r_fmt: u8,
    pub r_pos: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ngram_sim: Option<f64>,
    pub r_total: f64,
    pub diagnostics: Vec<String>,
}

/// Composition of the reward components.
pub fn compose(r_ans: u8, r_pos: f64, r_fmt: u8, ngram_term: Option<f64>, cfg: &RewardConfig) -> f64 {
    let mut total = f64::from(r_ans) * (1.0 + cfg.lambda1 * r_pos) + cfg.lambda2 * f64::from(r_fmt);
    if r_ans == 0 {
        if let Some(sim) = ngram_term {
            total += cfg.lambda3 * sim;
        }
    }
    total
}

/// Jaccard overlap of normalized evidence sets; 1 when both are empty.
pub fn reward_position(pred: &[CellRef], gold: &[CellRef]) -> f64 {
    let p: HashSet<CellRef> = pred.iter().map(CellRef::key).collect();
    let g: HashSet<CellRef> = gold.iter().map(CellRef::key).collect();
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    let union = p.union(&g).count();
    p.intersection(&g).count() as f64 / union as f64
}

/// Binary semantic-equivalence oracle used when the answer mode is `judge`.
pub trait AnswerJudge: Send + Sync {
    /// Returns the verdict and any diagnostics to attach to the breakdown.
    fn judge(&self, question: &str, candidate: &str, gold: &[String]) -> Result<(u8, Vec<String>), String>;
}

/// Strips a surrounding markdown code fence from an SQL answer.
pub fn strip_sql_fence(answer: &str) -> &str {
    let t = answer.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let rest = rest.strip_prefix("sql").or_else(|| rest.strip_prefix("SQL")).unwrap_or(rest);
    rest.strip_suffix("```").unwrap_or(rest).trim()
}

/// Scores rollouts against samples. Holds no mutable state; share freely.
pub struct RewardEngine<'j> {
    pub cfg: RewardConfig,
    pub policy: NormalizationPolicy,
    pub bleu: BleuConfig,
    judge: Option<&'j dyn AnswerJudge>,
}

impl<'j> RewardEngine<'j> {
    pub fn new(cfg: RewardConfig, policy: NormalizationPolicy) -> Self {
        Self {
            cfg,
            policy,
            bleu: BleuConfig::default(),
            judge: None,
        }
    }

    pub fn with_judge(mut self, judge: &'j dyn AnswerJudge) -> Self {
        self.judge = Some(judge);
        self
    }

    fn bleu_norm(&self, cand: &str, gold: &str) -> f64 {
        let c = crate::metrics::normalize_answer(cand, &self.policy);
        let g = crate::metrics::normalize_answer(gold, &self.policy);
        bleu(&c, &g, &self.bleu).unwrap_or(0.0)
    }

    /// Binary answer reward via the task's metric branch (or the judge).
    /// Returns the verdict plus diagnostics.
    pub fn reward_answer(&self, resp: &ParsedResponse, sample: &Sample) -> Result<(u8, Vec<String>), RewardError> {
        let Some(answer) = resp.answer.as_deref() else {
            return Ok((0, vec!["no_answer".into()]));
        };
        if sample.task_type == TaskType::TextToSql {
            return self.sql_answer(answer, sample);
        }
        let golds = sample.gold_answer.variants();
        if self.cfg.ans_mode == AnswerMode::Judge {
            let judge = self.judge.ok_or(RewardError::JudgeNotConfigured)?;
            return judge
                .judge(&sample.question, answer, golds)
                .map_err(RewardError::Judge);
        }
        let hit = golds.iter().any(|g| match sample.task_type {
            TaskType::ShortQa | TaskType::FactVerification => exact_match(answer, g, &self.policy) == 1,
            TaskType::LongQa => token_f1(answer, g, &self.policy) >= self.cfg.phi,
            TaskType::TableToText => self.bleu_norm(answer, g) >= self.cfg.tau_bleu,
            TaskType::TextToSql => unreachable!(),
        });
        Ok((u8::from(hit), Vec::new()))
    }

    fn sql_answer(&self, answer: &str, sample: &Sample) -> Result<(u8, Vec<String>), RewardError> {
        let db = sample
            .db_ref
            .as_deref()
            .ok_or_else(|| RewardError::DatabaseUnavailable(sample.id.clone()))?;
        let gold = sample.reference_sql().unwrap_or_default();
        let m = execution_match(strip_sql_fence(answer), gold, db, &self.cfg.exec_options())?;
        Ok((u8::from(m.matched), m.diagnostic.into_iter().collect()))
    }

    /// Full breakdown for one rollout.
    pub fn reward_total(&self, resp: &ParsedResponse, sample: &Sample) -> Result<RewardBreakdown, RewardError> {
        let (r_ans, mut diagnostics) = self.reward_answer(resp, sample)?;
        let r_fmt = reward_format(resp);
        if r_fmt == 0 {
            diagnostics.push("format_violation".into());
        }
        let r_pos = match &sample.gold_positions {
            Some(gold) => {
                // column-only gold evidence is compared on columns alone
                if !gold.is_empty() && gold.iter().all(|g| g.cell.is_none()) {
                    let pred: Vec<CellRef> = resp.positions.iter().map(CellRef::column_only).collect();
                    reward_position(&pred, gold)
                } else {
                    reward_position(&resp.positions, gold)
                }
            }
            None => {
                diagnostics.push("no_gold_positions".into());
                0.0
            }
        };
        let ngram_sim = match (sample.task_type, resp.answer.as_deref()) {
            (TaskType::TextToSql, Some(a)) => Some(ngram_similarity(
                strip_sql_fence(a),
                sample.reference_sql().unwrap_or_default(),
                self.cfg.ngram_n,
            )),
            (TaskType::TextToSql, None) => Some(0.0),
            _ => None,
        };
        if resp.truncated {
            diagnostics.push("truncated".into());
        }
        let r_total = compose(r_ans, r_pos, r_fmt, ngram_sim, &self.cfg);
        Ok(RewardBreakdown {
            r_ans,
            r_fmt,
            r_pos,
            ngram_sim,
            r_total,
            diagnostics,
        })
    }
}
