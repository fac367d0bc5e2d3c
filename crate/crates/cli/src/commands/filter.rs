use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use tabreward::curation::{detect_redundancy, reasoning_text, retention_check, DropReason};
use tabreward::{RewardEngine, Rollout};

use super::{load_samples, parse_rollout, Ctx};
use crate::error::CliError;
use crate::io::{check_provenance, write_json_file, JsonlReader, OutFile, Provenance, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rejection,
    Redundancy,
    Both,
}

impl Stage {
    fn rejection(self) -> bool {
        matches!(self, Stage::Rejection | Stage::Both)
    }

    fn redundancy(self) -> bool {
        matches!(self, Stage::Redundancy | Stage::Both)
    }

    fn name(self) -> &'static str {
        match self {
            Stage::Rejection => "rejection",
            Stage::Redundancy => "redundancy",
            Stage::Both => "both",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FilterArgs {
    pub transcripts: PathBuf,
    /// Required for the rejection stage.
    pub samples: Option<PathBuf>,
    pub stage: Stage,
    pub out: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageReport {
    pub input: usize,
    pub kept: usize,
    pub dropped: usize,
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterReport {
    pub stage: String,
    pub total: usize,
    pub kept: usize,
    pub stages: BTreeMap<String, StageReport>,
    #[serde(flatten)]
    pub provenance: Provenance,
}

/// Applies rejection sampling and/or redundancy filtering. Kept records
/// are copied verbatim.
pub fn cmd_filter(args: &FilterArgs, ctx: &Ctx) -> Result<FilterReport, CliError> {
    let cfg = &ctx.config;
    let samples = match (&args.samples, args.stage.rejection()) {
        (Some(p), true) => {
            check_provenance(&[p, &args.transcripts])?;
            Some(load_samples(p, cfg.strict_parsing)?)
        }
        (None, true) => return Err(CliError::Config("the rejection stage needs --samples".into())),
        _ => {
            check_provenance(&[&args.transcripts])?;
            None
        }
    };
    let judge = ctx.judge()?;
    let mut engine = RewardEngine::new(cfg.reward.clone(), cfg.normalization.clone());
    if let Some(j) = &judge {
        engine = engine.with_judge(j);
    }
    let mut stages: BTreeMap<String, StageReport> = BTreeMap::new();
    if args.stage.rejection() {
        stages.insert("rejection".into(), StageReport::default());
    }
    if args.stage.redundancy() {
        stages.insert("redundancy".into(), StageReport::default());
    }
    let mut reader = JsonlReader::<Rollout>::open(&args.transcripts)?;
    let mut out = OutFile::create(&args.out)?;
    let (mut total, mut kept) = (0, 0);
    loop {
        let chunk = reader.next_chunk(CHUNK)?;
        if chunk.is_empty() {
            break;
        }
        if let Some(s) = &samples {
            for (line, _, r) in &chunk {
                s.resolve(reader.path(), *line, &r.sample_id)?;
            }
        }
        // (rejection verdict, redundancy verdict); None = stage not reached
        let verdicts = ctx.run(|| {
            tabreward::par::map(&chunk, |(line, _, r)| -> Result<_, CliError> {
                let resp = parse_rollout(r);
                let mut rejected = None;
                if let Some(s) = &samples {
                    let sample = &s.by_id[&r.sample_id];
                    let reason = retention_check(&resp, sample, &engine)
                        .map_err(|e| CliError::from_reward(e, &args.transcripts, *line))?;
                    rejected = Some(reason);
                    if reason.is_some() {
                        return Ok((rejected, None));
                    }
                }
                let redundant = args
                    .stage
                    .redundancy()
                    .then(|| detect_redundancy(reasoning_text(&resp), &cfg.redundancy).redundant);
                Ok((rejected, redundant))
            })
        });
        for ((_, raw, _), v) in chunk.iter().zip(verdicts) {
            let (rejected, redundant) = v?;
            total += 1;
            let mut keep = true;
            if let Some(reason) = rejected {
                keep &= tally(stages.get_mut("rejection").unwrap(), reason);
            }
            if let Some(red) = redundant {
                keep &= tally(stages.get_mut("redundancy").unwrap(), red.then_some(DropReason::Redundant));
            }
            if keep {
                kept += 1;
                out.write_line(raw)?;
            }
        }
    }
    let report = FilterReport {
        stage: args.stage.name().into(),
        total,
        kept,
        stages,
        provenance: ctx.provenance(),
    };
    out.write_trailer(&ctx.provenance(), serde_json::json!({"total": total, "kept": kept}))?;
    out.commit()?;
    write_json_file(&args.report, &report)?;
    Ok(report)
}

fn tally(stage: &mut StageReport, reason: Option<DropReason>) -> bool {
    stage.input += 1;
    match reason {
        None => {
            stage.kept += 1;
            true
        }
        Some(r) => {
            stage.dropped += 1;
            *stage.reasons.entry(r.code().to_string()).or_default() += 1;
            false
        }
    }
}
