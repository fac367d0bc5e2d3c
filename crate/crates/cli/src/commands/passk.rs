use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;
use tabreward::curation::RolloutOutcome;
use tabreward::metrics::pass_at_k;

use super::{mean, Ctx};
use crate::error::CliError;
use crate::io::{check_provenance, write_json_file, JsonlReader, Provenance};

#[derive(Debug, Clone)]
pub struct PasskArgs {
    pub outcomes: PathBuf,
    pub ks: Vec<usize>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PasskReport {
    pub records: usize,
    /// Mean pass@k keyed by k.
    pub pass_at_k: BTreeMap<usize, f64>,
    #[serde(flatten)]
    pub provenance: Provenance,
}

impl PasskReport {
    pub fn table(&self) -> String {
        let mut s = String::from("k\tpass@k\n");
        for (k, v) in &self.pass_at_k {
            s.push_str(&format!("{k}\t{v:.6}\n"));
        }
        s
    }
}

pub fn cmd_passk(args: &PasskArgs, ctx: &Ctx) -> Result<PasskReport, CliError> {
    check_provenance(&[&args.outcomes])?;
    if args.ks.is_empty() || args.ks.contains(&0) {
        return Err(CliError::Config("--k needs positive integers".into()));
    }
    let mut reader = JsonlReader::<RolloutOutcome>::open(&args.outcomes)?;
    let mut sums = vec![0.0; args.ks.len()];
    let mut n = 0;
    while let Some(rec) = reader.next_record() {
        let (line, _, o) = rec?;
        for (i, &k) in args.ks.iter().enumerate() {
            sums[i] += pass_at_k(&o.successes, k).map_err(|e| CliError::Schema {
                path: args.outcomes.clone(),
                line,
                message: e.to_string(),
            })?;
        }
        n += 1;
    }
    let report = PasskReport {
        records: n,
        pass_at_k: args.ks.iter().zip(sums).map(|(k, s)| (*k, mean(s, n))).collect(),
        provenance: ctx.provenance(),
    };
    if let Some(out) = &args.out {
        write_json_file(out, &report)?;
    }
    Ok(report)
}
