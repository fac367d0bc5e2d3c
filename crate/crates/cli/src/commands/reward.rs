use std::path::PathBuf;

use serde::Serialize;
use serde_json::json;
use tabreward::{RewardBreakdown, RewardEngine, Rollout};

use super::{load_samples, mean, parse_rollout, Ctx};
use crate::error::CliError;
use crate::io::{check_provenance, JsonlReader, OutFile, CHUNK};

#[derive(Debug, Clone)]
pub struct RewardArgs {
    pub samples: PathBuf,
    pub rollouts: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Serialize)]
struct RewardRecord<'a> {
    sample_id: &'a str,
    #[serde(flatten)]
    breakdown: RewardBreakdown,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct RewardSummary {
    pub count: usize,
    pub mean_r_total: f64,
    pub mean_r_ans: f64,
    pub mean_r_fmt: f64,
    pub mean_r_pos: f64,
}

/// Scores every rollout; one record per rollout in input order, then a
/// trailer with component means.
pub fn cmd_reward(args: &RewardArgs, ctx: &Ctx) -> Result<RewardSummary, CliError> {
    check_provenance(&[&args.samples, &args.rollouts])?;
    let cfg = &ctx.config;
    let samples = load_samples(&args.samples, cfg.strict_parsing)?;
    let judge = ctx.judge()?;
    let mut engine = RewardEngine::new(cfg.reward.clone(), cfg.normalization.clone());
    if let Some(j) = &judge {
        engine = engine.with_judge(j);
    }
    let mut reader = JsonlReader::<Rollout>::open(&args.rollouts)?;
    let mut out = OutFile::create(&args.out)?;
    let (mut n, mut total, mut ans, mut fmt, mut pos) = (0usize, 0.0, 0.0, 0.0, 0.0);
    loop {
        let chunk = reader.next_chunk(CHUNK)?;
        if chunk.is_empty() {
            break;
        }
        for (line, _, r) in &chunk {
            samples.resolve(reader.path(), *line, &r.sample_id)?;
        }
        let scored = ctx.run(|| {
            tabreward::par::map(&chunk, |(line, _, r)| {
                let sample = &samples.by_id[&r.sample_id];
                engine
                    .reward_total(&parse_rollout(r), sample)
                    .map_err(|e| CliError::from_reward(e, &args.rollouts, *line))
            })
        });
        for ((_, _, r), b) in chunk.iter().zip(scored) {
            let b = b?;
            n += 1;
            total += b.r_total;
            ans += f64::from(b.r_ans);
            fmt += f64::from(b.r_fmt);
            pos += b.r_pos;
            out.write_json(&RewardRecord {
                sample_id: &r.sample_id,
                breakdown: b,
            })?;
        }
    }
    let summary = RewardSummary {
        count: n,
        mean_r_total: mean(total, n),
        mean_r_ans: mean(ans, n),
        mean_r_fmt: mean(fmt, n),
        mean_r_pos: mean(pos, n),
    };
    out.write_trailer(&ctx.provenance(), json!(summary))?;
    out.commit()?;
    Ok(summary)
}
