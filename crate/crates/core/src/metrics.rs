//! Answer normalization and scalar metrics: exact match, token F1,
//! sentence BLEU, unbiased pass@k and majority voting.

use std::collections::HashMap;
use std::sync::OnceLock;

use num::bigint::{BigInt, BigUint};
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::text::is_punct;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("k = {k} is outside 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("invalid BLEU config: {0}")]
    BleuConfig(String),
    #[error("majority vote over an empty list")]
    EmptyVote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizationPolicy {
    pub lowercase: bool,
    pub strip_punct: bool,
    pub collapse_ws: bool,
    pub numeric_equivalence: bool,
    pub numeric_tolerance: f64,
}

impl Default for NormalizationPolicy {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punct: true,
            collapse_ws: true,
            numeric_equivalence: true,
            numeric_tolerance: 1e-6,
        }
    }
}

impl NormalizationPolicy {
    /// Policy that only trims.
    pub fn verbatim() -> Self {
        Self {
            lowercase: false,
            strip_punct: false,
            collapse_ws: false,
            numeric_equivalence: false,
            numeric_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub max_n: usize,
    pub weights: Vec<f64>,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self::uniform(4)
    }
}

impl BleuConfig {
    pub fn uniform(max_n: usize) -> Self {
        Self {
            max_n,
            weights: vec![1.0 / max_n as f64; max_n],
        }
    }

    pub fn validate(&self) -> Result<(), MetricError> {
        if !(1..=9).contains(&self.max_n) {
            return Err(MetricError::BleuConfig(format!("max_n = {}", self.max_n)));
        }
        if self.weights.len() != self.max_n {
            return Err(MetricError::BleuConfig("weights length != max_n".into()));
        }
        if self.weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(MetricError::BleuConfig("negative weight".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MetricError::BleuConfig(format!("weights sum to {sum}")));
        }
        Ok(())
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[+-]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?%?$").unwrap())
}

/// Strips punctuation from both ends, keeping a sign or decimal point that
/// directly precedes a digit.
fn strip_edge_punct(s: &str) -> &str {
    let s = s.trim_end_matches(is_punct);
    let mut start = 0;
    let chars: Vec<(usize, char)> = s.char_indices().collect();
    for (k, (i, c)) in chars.iter().enumerate() {
        if !is_punct(*c) {
            start = *i;
            break;
        }
        let next_is_digit = chars.get(k + 1).is_some_and(|(_, n)| n.is_ascii_digit());
        if matches!(c, '-' | '+' | '.') && next_is_digit {
            start = *i;
            break;
        }
        start = i + c.len_utf8();
    }
    &s[start..]
}

fn canonical_number(s: &str) -> Option<String> {
    if number_re().is_match(s) {
        Some(s.replace(',', "").trim_end_matches('%').to_string())
    } else {
        None
    }
}

/// Normalizes an answer string: optional lowercase, trim, whitespace
/// collapse, edge punctuation strip, then number canonicalization
/// (thousands separators and a trailing `%` removed).
pub fn normalize_answer(text: &str, policy: &NormalizationPolicy) -> String {
    let mut s = if policy.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };
    s = s.trim().to_string();
    if policy.collapse_ws {
        s = s.split_whitespace().collect::<Vec<_>>().join(" ");
    }
    if policy.strip_punct {
        s = strip_edge_punct(&s).to_string();
    }
    canonical_number(&s).unwrap_or(s)
}

fn parse_number(normalized: &str) -> Option<f64> {
    if number_re().is_match(normalized) {
        normalized.parse::<f64>().ok()
    } else {
        None
    }
}

fn numbers_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * 1f64.max(a.abs()).max(b.abs())
}

/// 1 when normalized strings agree (or, under numeric equivalence, both
/// are numbers within the relative tolerance), else 0.
pub fn exact_match(pred: &str, gold: &str, policy: &NormalizationPolicy) -> u8 {
    let p = normalize_answer(pred, policy);
    let g = normalize_answer(gold, policy);
    if p == g {
        return 1;
    }
    if policy.numeric_equivalence {
        if let (Some(a), Some(b)) = (parse_number(&p), parse_number(&g)) {
            if numbers_close(a, b, policy.numeric_tolerance) {
                return 1;
            }
        }
    }
    0
}

/// Normalized whitespace tokens used by token F1.
pub fn answer_tokens(text: &str, policy: &NormalizationPolicy) -> Vec<String> {
    normalize_answer(text, policy)
        .split_whitespace()
        .map(|t| normalize_answer(t, policy))
        .filter(|t| !t.is_empty())
        .collect()
}

/// Token-level F1 with multiset (clipped) overlap.
pub fn token_f1(pred: &str, gold: &str, policy: &NormalizationPolicy) -> f64 {
    let p = answer_tokens(pred, policy);
    let g = answer_tokens(gold, policy);
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    let mut gold_counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *gold_counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = gold_counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    // 2PR / (P + R) reduces to 2c / (|p| + |g|); one division keeps it exact
    (2 * common) as f64 / (p.len() + g.len()) as f64
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_default() += 1;
        }
    }
    m
}

/// Modified n-gram precision `(clipped matches, candidate n-gram total)`.
pub fn modified_precision(cand: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let matched = c
        .iter()
        .map(|(g, cnt)| (*cnt).min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len().saturating_sub(n - 1))
}

/// Sentence-level, single-reference BLEU on whitespace tokens, no
/// smoothing. Any required (positive-weight) precision of zero gives 0.
pub fn bleu(candidate: &str, reference: &str, cfg: &BleuConfig) -> Result<f64, MetricError> {
    cfg.validate()?;
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    if cand.is_empty() {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=cfg.max_n {
        let w = cfg.weights[n - 1];
        if w == 0.0 {
            continue;
        }
        let (matched, total) = modified_precision(&cand, &refr, n);
        if matched == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += w * (matched as f64 / total as f64).ln();
    }
    let c = cand.len() as f64;
    let r = refr.len() as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    Ok(bp * log_sum.exp())
}

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        // exact at every step: acc * (n - i) is divisible by (i + 1)
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// Exact value of the unbiased estimator `1 - C(n-c, k) / C(n, k)`.
pub fn pass_at_k_exact(successes: &[bool], k: usize) -> Result<BigRational, MetricError> {
    let n = successes.len();
    if k == 0 || k > n {
        return Err(MetricError::InvalidK { k, n });
    }
    let c = successes.iter().filter(|s| **s).count();
    let miss = BigRational::new(
        BigInt::from(binomial(n - c, k)),
        BigInt::from(binomial(n, k)),
    );
    Ok(BigRational::one() - miss)
}

pub fn pass_at_k(successes: &[bool], k: usize) -> Result<f64, MetricError> {
    let n = successes.len();
    if k == 0 || k > n {
        return Err(MetricError::InvalidK { k, n });
    }
    let c = successes.iter().filter(|s| **s).count();
    let num = binomial(n - c, k);
    let den = binomial(n, k);
    let miss = BigRational::new(BigInt::from(num), BigInt::from(den));
    Ok(1.0 - miss.to_f64().unwrap_or(0.0))
}

/// Most frequent answer class under `policy`; ties go to the class that
/// appears first. Returns the first raw answer of the winning class.
pub fn majority_vote<'a>(
    answers: &'a [String],
    policy: &NormalizationPolicy,
) -> Result<&'a str, MetricError> {
    if answers.is_empty() {
        return Err(MetricError::EmptyVote);
    }
    // (count, first index) per normalized class
    let mut classes: HashMap<String, (usize, usize)> = HashMap::new();
    for (i, a) in answers.iter().enumerate() {
        classes
            .entry(normalize_answer(a, policy))
            .or_insert((0, i))
            .0 += 1;
    }
    let (_, first) = classes
        .values()
        .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)))
        .copied()
        .expect("non-empty");
    Ok(&answers[first])
}
