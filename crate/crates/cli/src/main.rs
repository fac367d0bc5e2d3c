use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tabreward::curation::{AggregateMode, DataConfig};
use tabreward::table::SourceFormat;
use tabreward::RunConfig;
use tabreward_cli::commands::*;
use tabreward_cli::{CliError, Ctx};

#[derive(Parser)]
#[command(name = "tabreward", version, about = "Rewards, curation and GRPO tooling for table reasoning")]
struct Cli {
    /// Run configuration (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Rejection,
    Redundancy,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigArg {
    All,
    Challenging,
    Variable,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Intersection,
    Union,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbArg {
    None,
    Row,
    Column,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Markdown,
    Csv,
    Dataframe,
    JsonGrid,
}

#[derive(Subcommand)]
enum Cmd {
    /// Score rollouts against their samples.
    Reward {
        samples: PathBuf,
        rollouts: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Rejection sampling and redundant-reasoning filtering.
    Filter {
        transcripts: PathBuf,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "both")]
        stage: StageArg,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Difficulty buckets and data-configuration selection.
    Bucket {
        outcomes: PathBuf,
        #[arg(long = "data-config", value_enum, default_value = "challenging")]
        data_config: ConfigArg,
        #[arg(long)]
        ids: PathBuf,
        #[arg(long)]
        histogram: PathBuf,
    },
    /// Aggregate and validate position evidence.
    Evidence {
        samples: PathBuf,
        rollouts: PathBuf,
        #[arg(long, value_enum, default_value = "intersection")]
        mode: ModeArg,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Permute table rows/columns and re-serialize.
    Perturb {
        samples: PathBuf,
        #[arg(long, value_enum, default_value = "both")]
        mode: PerturbArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: FormatArg,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Train a toy categorical policy with GRPO.
    GrpoSim {
        task: PathBuf,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0.5)]
        lr: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Mean pass@k over outcome records.
    Passk {
        outcomes: PathBuf,
        #[arg(long = "k", value_delimiter = ',', default_values_t = [1usize, 2, 4, 8])]
        ks: Vec<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Config(e.to_string()))?,
        None => RunConfig::default(),
    };
    let ctx = Ctx::new(config, cli.jobs);
    match cli.cmd {
        Cmd::Reward { samples, rollouts, out } => {
            let s = cmd_reward(&RewardArgs { samples, rollouts, out }, &ctx)?;
            eprintln!("scored {} rollouts, mean r_total {:.4}", s.count, s.mean_r_total);
        }
        Cmd::Filter { transcripts, samples, stage, out, report } => {
            let stage = match stage {
                StageArg::Rejection => Stage::Rejection,
                StageArg::Redundancy => Stage::Redundancy,
                StageArg::Both => Stage::Both,
            };
            let r = cmd_filter(&FilterArgs { transcripts, samples, stage, out, report }, &ctx)?;
            eprintln!("kept {} of {}", r.kept, r.total);
        }
        Cmd::Bucket { outcomes, data_config, ids, histogram } => {
            let config = match data_config {
                ConfigArg::All => DataConfig::All,
                ConfigArg::Challenging => DataConfig::Challenging,
                ConfigArg::Variable => DataConfig::Variable,
            };
            let h = cmd_bucket(&BucketArgs { outcomes, config, ids_out: ids, histogram_out: histogram }, &ctx)?;
            eprintln!("selected {} of {}", h.selected, h.total);
        }
        Cmd::Evidence { samples, rollouts, mode, out, report } => {
            let mode = match mode {
                ModeArg::Intersection => AggregateMode::Intersection,
                ModeArg::Union => AggregateMode::Union,
            };
            let r = cmd_evidence(&EvidenceArgs { samples, rollouts, mode, out, report }, &ctx)?;
            eprintln!("{:.2}% of {} evidence sets fully valid", r.overall_valid_pct, r.with_evidence);
        }
        Cmd::Perturb { samples, mode, seed, format, out } => {
            let mode = match mode {
                PerturbArg::None => PerturbModeArg::None,
                PerturbArg::Row => PerturbModeArg::Row,
                PerturbArg::Column => PerturbModeArg::Column,
                PerturbArg::Both => PerturbModeArg::Both,
            };
            let format = match format {
                FormatArg::Markdown => SourceFormat::Markdown,
                FormatArg::Csv => SourceFormat::Csv,
                FormatArg::Dataframe => SourceFormat::Dataframe,
                FormatArg::JsonGrid => SourceFormat::JsonGrid,
            };
            let n = cmd_perturb(&PerturbArgs { samples, mode, seed, format, out }, &ctx)?;
            eprintln!("wrote {n} samples");
        }
        Cmd::GrpoSim { task, steps, lr, seed, out } => {
            let s = cmd_grpo_sim(&GrpoSimArgs { task, steps, lr, seed, out }, &ctx)?;
            eprintln!(
                "accuracy {:.3} -> {:.3}, mean reward {:.4} -> {:.4}",
                s.initial.accuracy, s.last.accuracy, s.initial.mean_reward, s.last.mean_reward
            );
        }
        Cmd::Passk { outcomes, ks, out } => {
            let r = cmd_passk(&PasskArgs { outcomes, ks, out }, &ctx)?;
            print!("{}", r.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
