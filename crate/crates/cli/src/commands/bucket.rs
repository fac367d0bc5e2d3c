use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;

use serde::Serialize;
use tabreward::curation::{bucket_difficulty, select_config, DataConfig, DifficultyBucket, RolloutOutcome};

use super::Ctx;
use crate::error::CliError;
use crate::io::{check_provenance, write_json_file, JsonlReader, OutFile, Provenance};

#[derive(Debug, Clone)]
pub struct BucketArgs {
    pub outcomes: PathBuf,
    pub config: DataConfig,
    pub ids_out: PathBuf,
    pub histogram_out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub config: DataConfig,
    pub total: usize,
    pub selected: usize,
    pub always_correct: usize,
    pub variable: usize,
    pub always_wrong: usize,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Buckets samples by rollout outcomes and writes the ids selected by the
/// data configuration, sorted, one per line.
pub fn cmd_bucket(args: &BucketArgs, ctx: &Ctx) -> Result<Histogram, CliError> {
    check_provenance(&[&args.outcomes])?;
    let mut reader = JsonlReader::<RolloutOutcome>::open(&args.outcomes)?;
    let mut buckets = BTreeMap::new();
    let mut seen = HashSet::new();
    while let Some(rec) = reader.next_record() {
        let (line, _, o) = rec?;
        let schema = |message: String| CliError::Schema {
            path: args.outcomes.clone(),
            line,
            message,
        };
        let b = bucket_difficulty(&o).ok_or_else(|| schema("empty successes list".into()))?;
        if !seen.insert(o.sample_id.clone()) {
            return Err(schema(format!("duplicate sample_id {:?}", o.sample_id)));
        }
        buckets.insert(o.sample_id, b);
    }
    let selected = select_config(&buckets, args.config);
    let mut ids = OutFile::create(&args.ids_out)?;
    for id in &selected {
        ids.write_line(id)?;
    }
    ids.commit()?;
    let count = |b: DifficultyBucket| buckets.values().filter(|x| **x == b).count();
    let hist = Histogram {
        config: args.config,
        total: buckets.len(),
        selected: selected.len(),
        always_correct: count(DifficultyBucket::AlwaysCorrect),
        variable: count(DifficultyBucket::Variable),
        always_wrong: count(DifficultyBucket::AlwaysWrong),
        provenance: ctx.provenance(),
    };
    write_json_file(&args.histogram_out, &hist)?;
    Ok(hist)
}
