use std::path::{Path, PathBuf};

use serde::Serialize;
use tabreward::grpo::{simulate_training, IndexReward, SimTask, TraceRow};
use tabreward::rng::GENERATOR_ID;

use super::Ctx;
use crate::error::CliError;
use crate::io::{write_json_file, OutFile, Provenance};

#[derive(Debug, Clone)]
pub struct GrpoSimArgs {
    pub task: PathBuf,
    pub steps: usize,
    pub lr: f64,
    /// Defaults to the config seed.
    pub seed: Option<u64>,
    /// CSV trace; the JSONL trace and summary are written beside it.
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSummary {
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub prompts: usize,
    pub vocab_size: usize,
    pub initial: TraceRow,
    #[serde(rename = "final")]
    pub last: TraceRow,
    pub generator: String,
    #[serde(flatten)]
    pub provenance: Provenance,
}

pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn cmd_grpo_sim(args: &GrpoSimArgs, ctx: &Ctx) -> Result<SimSummary, CliError> {
    let text = std::fs::read_to_string(&args.task).map_err(CliError::io(format!("read {}", args.task.display())))?;
    let task: SimTask = serde_json::from_str(&text).map_err(|e| CliError::Schema {
        path: args.task.clone(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let seed = args.seed.unwrap_or(ctx.config.seed);
    let trace = ctx
        .run(|| simulate_training(&task, &IndexReward, &ctx.config.grpo, args.steps, args.lr, seed))
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = OutFile::create(&args.out)?;
    csv.write_line("step,mean_reward,accuracy,response_proxy")?;
    for r in &trace {
        csv.write_line(&format!("{},{},{},{}", r.step, r.mean_reward, r.accuracy, r.response_proxy))?;
    }
    csv.commit()?;
    let mut jsonl = OutFile::create(&sibling(&args.out, ".jsonl"))?;
    for r in &trace {
        jsonl.write_json(r)?;
    }
    jsonl.write_trailer(&ctx.provenance(), serde_json::json!({"seed": seed}))?;
    jsonl.commit()?;
    let summary = SimSummary {
        steps: args.steps,
        learning_rate: args.lr,
        seed,
        prompts: task.prompts.len(),
        vocab_size: task.vocab_size,
        initial: trace[0],
        last: *trace.last().expect("trace has the initial row"),
        generator: GENERATOR_ID.into(),
        provenance: ctx.provenance(),
    };
    write_json_file(&sibling(&args.out, ".summary.json"), &summary)?;
    Ok(summary)
}
