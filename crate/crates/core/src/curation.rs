//! Training-data curation: rejection sampling, redundant-reasoning
//! detection, difficulty buckets and position-evidence aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::metrics::{bleu, exact_match, normalize_answer, token_f1};
use crate::response::ParsedResponse;
use crate::rewards::{strip_sql_fence, RewardEngine, RewardError};
use crate::sample::{Sample, TaskType};
use crate::sql::execution_match;
use crate::table::{CellRef, Table};
use crate::text::alnum_tokens;

pub use crate::sql::sql_schema_positions;

pub const DEFAULT_MODALS: [&str; 8] = ["might", "may", "could", "must", "will", "shall", "would", "should"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RedundancyConfig {
    pub min_words: usize,
    pub sim_threshold: f64,
    pub max_redundant_pairs: usize,
    /// Multiplier when exactly one sentence of a pair is a question.
    pub p_qm: f64,
    /// Multiplier when the pair's modal verbs differ.
    pub p_mv: f64,
    pub modal_lexicon: Vec<String>,
    /// Treat line breaks as sentence boundaries in addition to `.!?`.
    pub split_lines: bool,
}

impl Default for RedundancyConfig {
    fn default() -> Self {
        Self {
            min_words: 5,
            sim_threshold: 0.7,
            max_redundant_pairs: 2,
            p_qm: 0.5,
            p_mv: 0.7,
            modal_lexicon: DEFAULT_MODALS.iter().map(|s| s.to_string()).collect(),
            split_lines: true,
        }
    }
}

impl RedundancyConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sim_threshold > 0.0 && self.sim_threshold <= 1.0) {
            return Err(format!("sim_threshold = {}", self.sim_threshold));
        }
        for (n, v) in [("p_qm", self.p_qm), ("p_mv", self.p_mv)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{n} = {v} outside (0, 1]"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- sentences

const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "etc", "vs", "mr", "mrs", "ms", "dr", "st", "no", "jr", "sr", "inc", "ltd",
    "approx", "fig", "eq", "u.s", "cf", "al",
];

fn word_before(s: &str) -> &str {
    let start = s
        .rfind(|c: char| c.is_whitespace() || c == '(' || c == '"')
        .map(|i| i + 1)
        .unwrap_or(0);
    &s[start..]
}

fn is_guarded_period(before: &str) -> bool {
    let w = word_before(before);
    let lw = w.to_lowercase();
    if ABBREVIATIONS.contains(&lw.as_str()) {
        return true;
    }
    // single initials ("J. Smith")
    if w.chars().count() == 1 && w.chars().all(char::is_uppercase) {
        return true;
    }
    // list markers at line start ("1. Bolivia ...")
    let line = before.rsplit('\n').next().unwrap_or(before);
    !w.is_empty() && w.chars().all(|c| c.is_ascii_digit()) && line.trim() == w
}

/// Splits text into sentences on `.`, `!`, `?` followed by whitespace (and
/// on line breaks when `split_lines`), then drops sentences with fewer than
/// `min_words` whitespace tokens.
pub fn segment_sentences(text: &str, cfg: &RedundancyConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut chars = text.chars().peekable();
    let flush = |cur: &mut String, out: &mut Vec<String>| {
        let s = cur.trim();
        if s.split_whitespace().count() >= cfg.min_words {
            out.push(s.to_string());
        }
        cur.clear();
    };
    while let Some(c) = chars.next() {
        if c == '\n' && cfg.split_lines {
            flush(&mut cur, &mut out);
            continue;
        }
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            // absorb runs like "?!" or "..."
            while let Some(&n) = chars.peek() {
                if matches!(n, '.' | '!' | '?' | '"' | '\'' | ')') {
                    cur.push(n);
                    chars.next();
                } else {
                    break;
                }
            }
            let at_break = chars.peek().is_none_or(|n| n.is_whitespace());
            if at_break && !(c == '.' && is_guarded_period(&cur[..cur.len() - 1])) {
                flush(&mut cur, &mut out);
            }
        }
    }
    flush(&mut cur, &mut out);
    out
}

// ---------------------------------------------------------------- tf-idf

/// L2-normalized TF-IDF vectors over a sentence corpus with smoothed idf
/// `ln((1 + N) / (1 + df)) + 1` and raw term counts.
pub struct TfIdf {
    vectors: Vec<HashMap<String, f64>>,
}

impl TfIdf {
    pub fn fit(sentences: &[String]) -> Self {
        let docs: Vec<Vec<String>> = sentences.iter().map(|s| alnum_tokens(s)).collect();
        let n = docs.len() as f64;
        let mut df: HashMap<&str, usize> = HashMap::new();
        for d in &docs {
            let uniq: HashSet<&str> = d.iter().map(String::as_str).collect();
            for t in uniq {
                *df.entry(t).or_default() += 1;
            }
        }
        let vectors = docs
            .iter()
            .map(|d| {
                let mut tf: HashMap<String, f64> = HashMap::new();
                for t in d {
                    *tf.entry(t.clone()).or_default() += 1.0;
                }
                for (t, w) in tf.iter_mut() {
                    let idf = ((1.0 + n) / (1.0 + df[t.as_str()] as f64)).ln() + 1.0;
                    *w *= idf;
                }
                let norm = tf.values().map(|w| w * w).sum::<f64>().sqrt();
                if norm > 0.0 {
                    tf.values_mut().for_each(|w| *w /= norm);
                }
                tf
            })
            .collect();
        Self { vectors }
    }

    pub fn cosine(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (&self.vectors[i], &self.vectors[j]);
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        // sum in sorted key order so the result does not depend on hash order
        let mut keys: Vec<&String> = small.keys().collect();
        keys.sort_unstable();
        let dot: f64 = keys
            .into_iter()
            .filter_map(|k| large.get(k).map(|w| w * small[k]))
            .sum();
        dot.clamp(0.0, 1.0)
    }
}

fn modal_set<'a>(sentence: &str, lexicon: &'a [String]) -> BTreeSet<&'a str> {
    let toks: HashSet<String> = alnum_tokens(sentence).into_iter().collect();
    lexicon
        .iter()
        .filter(|m| toks.contains(&m.to_lowercase()))
        .map(String::as_str)
        .collect()
}

fn is_question(s: &str) -> bool {
    s.trim_end().ends_with('?')
}

fn penalties(a: &str, b: &str, cfg: &RedundancyConfig) -> f64 {
    let mut f = 1.0;
    if is_question(a) != is_question(b) {
        f *= cfg.p_qm;
    }
    if modal_set(a, &cfg.modal_lexicon) != modal_set(b, &cfg.modal_lexicon) {
        f *= cfg.p_mv;
    }
    f
}

/// Cosine similarity of the pair's TF-IDF vectors (fit on `corpus`) times
/// the question-mismatch and modal-disparity penalties. Sentences not in
/// the corpus are added to it for the fit.
pub fn adjusted_similarity(s_i: &str, s_j: &str, corpus: &[String], cfg: &RedundancyConfig) -> f64 {
    let mut docs = corpus.to_vec();
    let index_of = |s: &str, docs: &mut Vec<String>| {
        docs.iter().position(|d| d == s).unwrap_or_else(|| {
            docs.push(s.to_string());
            docs.len() - 1
        })
    };
    let i = index_of(s_i, &mut docs);
    let j = index_of(s_j, &mut docs);
    let tfidf = TfIdf::fit(&docs);
    tfidf.cosine(i, j) * penalties(s_i, s_j, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RedundancyReport {
    pub redundant: bool,
    pub pair_count: usize,
    pub sentences: usize,
    /// `(i, j, adjusted similarity)` for every pair above the threshold.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Counts sentence pairs whose adjusted similarity exceeds the threshold;
/// the transcript is redundant when that count exceeds
/// `max_redundant_pairs`.
pub fn detect_redundancy(think_text: &str, cfg: &RedundancyConfig) -> RedundancyReport {
    let sentences = segment_sentences(think_text, cfg);
    let tfidf = TfIdf::fit(&sentences);
    let mut pairs = Vec::new();
    for i in 0..sentences.len() {
        for j in i + 1..sentences.len() {
            let cos = tfidf.cosine(i, j);
            if cos <= cfg.sim_threshold {
                continue; // penalties only lower the score
            }
            let sim = cos * penalties(&sentences[i], &sentences[j], cfg);
            if sim > cfg.sim_threshold {
                pairs.push((i, j, sim));
            }
        }
    }
    RedundancyReport {
        redundant: pairs.len() > cfg.max_redundant_pairs,
        pair_count: pairs.len(),
        sentences: sentences.len(),
        pairs,
    }
}

/// Text the redundancy check looks at: the think block when present,
/// otherwise the whole response.
pub fn reasoning_text(resp: &ParsedResponse) -> &str {
    resp.think.as_deref().unwrap_or(&resp.raw)
}

// ---------------------------------------------------------------- rejection sampling

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoAnswer,
    EmMismatch,
    F1BelowPhi,
    BleuNotAboveTau,
    ExecMismatch,
    Redundant,
}

impl DropReason {
    pub fn code(&self) -> &'static str {
        match self {
            DropReason::NoAnswer => "no_answer",
            DropReason::EmMismatch => "em_mismatch",
            DropReason::F1BelowPhi => "f1_below_phi",
            DropReason::BleuNotAboveTau => "bleu_not_above_tau",
            DropReason::ExecMismatch => "exec_mismatch",
            DropReason::Redundant => "redundant",
        }
    }
}

/// Whether a rollout passes its task's retention rule. BLEU retention is
/// strict (`> tau`) unlike the reward's `>=`.
pub fn retention_check(
    resp: &ParsedResponse,
    sample: &Sample,
    engine: &RewardEngine<'_>,
) -> Result<Option<DropReason>, RewardError> {
    let Some(answer) = resp.answer.as_deref() else {
        return Ok(Some(DropReason::NoAnswer));
    };
    let golds = sample.gold_answer.variants();
    let cfg = &engine.cfg;
    let pass = |ok: bool, reason| if ok { None } else { Some(reason) };
    Ok(match sample.task_type {
        TaskType::ShortQa | TaskType::FactVerification => pass(
            golds.iter().any(|g| exact_match(answer, g, &engine.policy) == 1),
            DropReason::EmMismatch,
        ),
        TaskType::LongQa => pass(
            golds.iter().any(|g| token_f1(answer, g, &engine.policy) >= cfg.phi),
            DropReason::F1BelowPhi,
        ),
        TaskType::TableToText => pass(
            golds.iter().any(|g| {
                let c = normalize_answer(answer, &engine.policy);
                let r = normalize_answer(g, &engine.policy);
                bleu(&c, &r, &engine.bleu).unwrap_or(0.0) > cfg.tau_bleu
            }),
            DropReason::BleuNotAboveTau,
        ),
        TaskType::TextToSql => {
            let db = sample
                .db_ref
                .as_deref()
                .ok_or_else(|| RewardError::DatabaseUnavailable(sample.id.clone()))?;
            let gold = sample.reference_sql().unwrap_or_default();
            let m = execution_match(strip_sql_fence(answer), gold, db, &cfg.exec_options())?;
            pass(m.matched, DropReason::ExecMismatch)
        }
    })
}

/// Rollouts that pass the task's retention rule, in input order.
pub fn rejection_filter(
    sample: &Sample,
    rollouts: &[ParsedResponse],
    engine: &RewardEngine<'_>,
) -> Result<Vec<ParsedResponse>, RewardError> {
    let mut kept = Vec::new();
    for r in rollouts {
        if retention_check(r, sample, engine)?.is_none() {
            kept.push(r.clone());
        }
    }
    Ok(kept)
}

// ---------------------------------------------------------------- difficulty

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RolloutOutcome {
    pub sample_id: String,
    pub successes: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyBucket {
    AlwaysCorrect,
    Variable,
    AlwaysWrong,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    All,
    Challenging,
    Variable,
}

/// `None` for an empty outcome list.
pub fn bucket_difficulty(outcome: &RolloutOutcome) -> Option<DifficultyBucket> {
    let s = &outcome.successes;
    if s.is_empty() {
        None
    } else if s.iter().all(|x| *x) {
        Some(DifficultyBucket::AlwaysCorrect)
    } else if s.iter().all(|x| !*x) {
        Some(DifficultyBucket::AlwaysWrong)
    } else {
        Some(DifficultyBucket::Variable)
    }
}

pub fn select_config(buckets: &BTreeMap<String, DifficultyBucket>, config: DataConfig) -> BTreeSet<String> {
    buckets
        .iter()
        .filter(|(_, b)| match config {
            DataConfig::All => true,
            DataConfig::Challenging => **b != DifficultyBucket::AlwaysCorrect,
            DataConfig::Variable => **b == DifficultyBucket::Variable,
        })
        .map(|(id, _)| id.clone())
        .collect()
}

// ---------------------------------------------------------------- evidence

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    #[default]
    Intersection,
    Union,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregated {
    pub positions: Vec<CellRef>,
    pub diagnostic: Option<&'static str>,
}

/// Combines evidence sets from correct rollouts (compared by normalized
/// key). Output follows first-seen order.
pub fn aggregate_positions(position_sets: &[Vec<CellRef>], mode: AggregateMode) -> Aggregated {
    if position_sets.is_empty() {
        return Aggregated {
            positions: Vec::new(),
            diagnostic: Some("no_evidence"),
        };
    }
    let keysets: Vec<HashSet<CellRef>> = position_sets
        .iter()
        .map(|s| s.iter().map(CellRef::key).collect())
        .collect();
    let mut seen = HashSet::new();
    let positions = position_sets
        .iter()
        .flatten()
        .filter(|r| {
            let k = r.key();
            let keep = match mode {
                AggregateMode::Union => true,
                AggregateMode::Intersection => keysets.iter().all(|s| s.contains(&k)),
            };
            keep && seen.insert(k)
        })
        .cloned()
        .collect();
    Aggregated {
        positions,
        diagnostic: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvidenceValidity {
    pub valid_fraction: f64,
    pub all_valid: bool,
}

pub fn validate_evidence(positions: &[CellRef], tables: &[Table]) -> EvidenceValidity {
    if positions.is_empty() {
        return EvidenceValidity {
            valid_fraction: 1.0,
            all_valid: true,
        };
    }
    let valid = positions
        .iter()
        .filter(|p| tables.iter().any(|t| t.contains(p)))
        .count();
    EvidenceValidity {
        valid_fraction: valid as f64 / positions.len() as f64,
        all_valid: valid == positions.len(),
    }
}
