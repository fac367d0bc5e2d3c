use std::path::PathBuf;

use serde_json::Value;
use tabreward::rng::{stable_hash, DetRng, GENERATOR_ID};
use tabreward::table::{perturb, table_to_json, PerturbMode, PerturbationSpec, SourceFormat};
use tabreward::Sample;

use super::Ctx;
use crate::error::CliError;
use crate::io::{check_provenance, JsonlReader, OutFile, CHUNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbModeArg {
    None,
    Row,
    Column,
    Both,
}

impl PerturbModeArg {
    fn mode(self) -> Option<PerturbMode> {
        match self {
            PerturbModeArg::None => None,
            PerturbModeArg::Row => Some(PerturbMode::Row),
            PerturbModeArg::Column => Some(PerturbMode::Column),
            PerturbModeArg::Both => Some(PerturbMode::Both),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PerturbArgs {
    pub samples: PathBuf,
    pub mode: PerturbModeArg,
    /// Defaults to the config seed.
    pub seed: Option<u64>,
    pub format: SourceFormat,
    pub out: PathBuf,
}

/// Seed for table `index` of sample `id`; independent of record order.
pub fn table_seed(seed: u64, id: &str, index: usize) -> u64 {
    DetRng::derive_seed(DetRng::derive_seed(seed, stable_hash(id.as_bytes())), index as u64)
}

fn format_name(f: SourceFormat) -> &'static str {
    match f {
        SourceFormat::Markdown => "markdown",
        SourceFormat::Csv => "csv",
        SourceFormat::Dataframe => "dataframe",
        SourceFormat::JsonGrid => "json_grid",
    }
}

/// Re-serializes every sample's tables after an optional row/column
/// permutation. Each output record is the sample with permuted `tables`
/// plus `tables_text` in the requested format.
pub fn cmd_perturb(args: &PerturbArgs, ctx: &Ctx) -> Result<usize, CliError> {
    check_provenance(&[&args.samples])?;
    let seed = args.seed.unwrap_or(ctx.config.seed);
    let mut reader = JsonlReader::<Sample>::open(&args.samples)?;
    let mut out = OutFile::create(&args.out)?;
    let mut n = 0;
    loop {
        let chunk = reader.next_chunk(CHUNK)?;
        if chunk.is_empty() {
            break;
        }
        let rendered = ctx.run(|| {
            tabreward::par::map(&chunk, |(line, _, s)| -> Result<String, CliError> {
                let mut s = s.clone();
                for (i, t) in s.tables.iter_mut().enumerate() {
                    if let Some(mode) = args.mode.mode() {
                        *t = perturb(t, PerturbationSpec { mode, seed: table_seed(seed, &s.id, i) });
                    }
                }
                let texts: Vec<Value> = s
                    .tables
                    .iter()
                    .map(|t| t.serialize(args.format).map(Value::String))
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Schema {
                        path: args.samples.clone(),
                        line: *line,
                        message: e.to_string(),
                    })?;
                let mut v = serde_json::to_value(&s).map_err(|e| CliError::Other(e.to_string()))?;
                if let Value::Object(m) = &mut v {
                    m.insert("tables".into(), Value::Array(s.tables.iter().map(table_to_json).collect()));
                    m.insert("format".into(), format_name(args.format).into());
                    m.insert("tables_text".into(), Value::Array(texts));
                }
                Ok(v.to_string())
            })
        });
        for r in rendered {
            out.write_line(&r?)?;
            n += 1;
        }
    }
    out.write_trailer(
        &ctx.provenance(),
        serde_json::json!({"count": n, "seed": seed, "generator": GENERATOR_ID}),
    )?;
    out.commit()?;
    Ok(n)
}
