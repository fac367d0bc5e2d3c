//! One function per subcommand. Each reads its inputs, processes records in
//! fixed-size chunks on the worker pool and writes outputs in input order.

mod bucket;
mod evidence;
mod filter;
mod grpo_sim;
mod passk;
mod perturb;
mod reward;

use std::collections::HashMap;
use std::path::Path;

use tabreward::judge::JudgeClient;
use tabreward::rewards::AnswerMode;
use tabreward::{parse_response, ParsedResponse, Rollout, RunConfig, Sample, TOOL_VERSION};

use crate::error::CliError;
use crate::io::{JsonlReader, Provenance};

pub use bucket::{cmd_bucket, BucketArgs};
pub use evidence::{cmd_evidence, EvidenceArgs};
pub use filter::{cmd_filter, FilterArgs, Stage};
pub use grpo_sim::{cmd_grpo_sim, GrpoSimArgs};
pub use passk::{cmd_passk, PasskArgs};
pub use perturb::{cmd_perturb, PerturbArgs, PerturbModeArg};
pub use reward::{cmd_reward, RewardArgs};

/// Settings shared by every command.
#[derive(Debug, Clone, Default)]
pub struct Ctx {
    pub config: RunConfig,
    /// Worker threads; 0 picks the pool default.
    pub jobs: usize,
}

impl Ctx {
    pub fn new(config: RunConfig, jobs: usize) -> Self {
        Self { config, jobs }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            tool_version: TOOL_VERSION.to_string(),
            config_hash: self.config.hash(),
        }
    }

    /// Judge client when the reward config asks for one. Credentials come
    /// from the environment only.
    pub fn judge(&self) -> Result<Option<JudgeClient>, CliError> {
        if self.config.reward.ans_mode != AnswerMode::Judge {
            return Ok(None);
        }
        let cfg = self.config.judge.clone().unwrap_or_default().with_env();
        let client = JudgeClient::http(cfg)?.with_policy(self.config.normalization.clone());
        Ok(Some(client))
    }

    pub fn run<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        tabreward::par::with_jobs(self.jobs, f)
    }
}

/// Samples keyed by id, in file order. Relative `db_ref` paths resolve
/// against the samples file's directory.
pub struct SampleSet {
    pub order: Vec<String>,
    pub by_id: HashMap<String, Sample>,
}

pub fn load_samples(path: &Path, strict: bool) -> Result<SampleSet, CliError> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = JsonlReader::<Sample>::open(path)?;
    let mut set = SampleSet {
        order: Vec::new(),
        by_id: HashMap::new(),
    };
    let schema = |line, message: String| CliError::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    while let Some(rec) = reader.next_record() {
        let (line, _, mut s) = rec?;
        if strict {
            s.validate().map_err(|e| schema(line, e.to_string()))?;
        }
        if let Some(db) = &s.db_ref {
            if db.is_relative() {
                s.db_ref = Some(base.join(db));
            }
        }
        if set.by_id.contains_key(&s.id) {
            return Err(schema(line, format!("duplicate sample id {:?}", s.id)));
        }
        set.order.push(s.id.clone());
        set.by_id.insert(s.id.clone(), s);
    }
    Ok(set)
}

impl SampleSet {
    pub fn resolve(&self, path: &Path, line: usize, id: &str) -> Result<&Sample, CliError> {
        self.by_id.get(id).ok_or_else(|| CliError::UnresolvedSampleId {
            path: path.to_path_buf(),
            line,
            id: id.to_string(),
        })
    }
}

pub fn parse_rollout(r: &Rollout) -> ParsedResponse {
    parse_response(&r.text).with_truncated(r.truncated)
}

/// Mean of `xs`, 0 when empty.
pub fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
