use std::collections::HashMap;
use std::path::PathBuf;

use serde::Serialize;
use tabreward::curation::{aggregate_positions, sql_schema_positions, validate_evidence, AggregateMode};
use tabreward::{CellRef, RewardEngine, Rollout, TaskType};

use super::{load_samples, mean, parse_rollout, Ctx};
use crate::error::CliError;
use crate::io::{check_provenance, write_json_file, JsonlReader, OutFile, Provenance, CHUNK};

#[derive(Debug, Clone)]
pub struct EvidenceArgs {
    pub samples: PathBuf,
    pub rollouts: PathBuf,
    pub mode: AggregateMode,
    pub out: PathBuf,
    pub report: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EvidenceRecord<'a> {
    sample_id: &'a str,
    source: &'static str,
    rollouts: usize,
    correct: usize,
    positions: Vec<CellRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    valid_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    all_valid: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostic: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidityReport {
    pub mode: AggregateMode,
    pub samples: usize,
    /// Samples with an aggregated evidence set checked against tables.
    pub with_evidence: usize,
    pub all_valid: usize,
    /// Share of checked samples whose every annotation exists, in percent.
    pub overall_valid_pct: f64,
    pub mean_valid_fraction: f64,
    /// Counts of valid_fraction in ten equal-width bins over [0, 1].
    pub valid_fraction_histogram: [usize; 10],
    #[serde(flatten)]
    pub provenance: Provenance,
}

#[derive(Default)]
struct Acc {
    rollouts: usize,
    correct: Vec<Vec<CellRef>>,
}

/// Aggregates evidence from correct rollouts per sample and validates it
/// against the sample's tables. Text-to-SQL samples take their evidence
/// from the columns the gold query mentions.
pub fn cmd_evidence(args: &EvidenceArgs, ctx: &Ctx) -> Result<ValidityReport, CliError> {
    check_provenance(&[&args.samples, &args.rollouts])?;
    let cfg = &ctx.config;
    let samples = load_samples(&args.samples, cfg.strict_parsing)?;
    let judge = ctx.judge()?;
    let mut engine = RewardEngine::new(cfg.reward.clone(), cfg.normalization.clone());
    if let Some(j) = &judge {
        engine = engine.with_judge(j);
    }
    let mut acc: HashMap<String, Acc> = HashMap::new();
    let mut reader = JsonlReader::<Rollout>::open(&args.rollouts)?;
    loop {
        let chunk = reader.next_chunk(CHUNK)?;
        if chunk.is_empty() {
            break;
        }
        for (line, _, r) in &chunk {
            samples.resolve(reader.path(), *line, &r.sample_id)?;
        }
        let scored = ctx.run(|| {
            tabreward::par::map(&chunk, |(line, _, r)| -> Result<Option<Vec<CellRef>>, CliError> {
                let sample = &samples.by_id[&r.sample_id];
                if sample.task_type == TaskType::TextToSql {
                    return Ok(None);
                }
                let resp = parse_rollout(r);
                let (ok, _) = engine
                    .reward_answer(&resp, sample)
                    .map_err(|e| CliError::from_reward(e, &args.rollouts, *line))?;
                Ok((ok == 1).then_some(resp.positions))
            })
        });
        for ((_, _, r), s) in chunk.iter().zip(scored) {
            let a = acc.entry(r.sample_id.clone()).or_default();
            a.rollouts += 1;
            if let Some(p) = s? {
                a.correct.push(p);
            }
        }
    }

    let mut out = OutFile::create(&args.out)?;
    let mut report = ValidityReport {
        mode: args.mode,
        samples: samples.order.len(),
        with_evidence: 0,
        all_valid: 0,
        overall_valid_pct: 0.0,
        mean_valid_fraction: 0.0,
        valid_fraction_histogram: [0; 10],
        provenance: ctx.provenance(),
    };
    let mut frac_sum = 0.0;
    for id in &samples.order {
        let sample = &samples.by_id[id];
        let a = acc.remove(id).unwrap_or_default();
        let mut rec = EvidenceRecord {
            sample_id: id,
            source: "rollouts",
            rollouts: a.rollouts,
            correct: a.correct.len(),
            positions: Vec::new(),
            valid_fraction: None,
            all_valid: None,
            diagnostic: None,
        };
        if sample.task_type == TaskType::TextToSql {
            rec.source = "schema_linking";
            let (Some(sql), Some(db)) = (sample.reference_sql(), sample.db_ref.as_deref()) else {
                rec.diagnostic = Some("missing_sql_fields".into());
                out.write_json(&rec)?;
                continue;
            };
            match sql_schema_positions(sql, db) {
                Ok(p) => rec.positions = p,
                Err(e) => rec.diagnostic = Some(format!("schema_linking_failed: {e}")),
            }
            out.write_json(&rec)?;
            continue;
        }
        let agg = aggregate_positions(&a.correct, args.mode);
        rec.positions = agg.positions;
        rec.diagnostic = agg.diagnostic.map(str::to_string);
        if rec.diagnostic.is_none() {
            let v = validate_evidence(&rec.positions, &sample.tables);
            rec.valid_fraction = Some(v.valid_fraction);
            rec.all_valid = Some(v.all_valid);
            report.with_evidence += 1;
            report.all_valid += usize::from(v.all_valid);
            frac_sum += v.valid_fraction;
            let bin = ((v.valid_fraction * 10.0) as usize).min(9);
            report.valid_fraction_histogram[bin] += 1;
        }
        out.write_json(&rec)?;
    }
    report.mean_valid_fraction = mean(frac_sum, report.with_evidence);
    report.overall_valid_pct = 100.0 * mean(report.all_valid as f64, report.with_evidence);
    out.write_trailer(&ctx.provenance(), serde_json::json!({"samples": report.samples}))?;
    out.commit()?;
    write_json_file(&args.report, &report)?;
    Ok(report)
}
