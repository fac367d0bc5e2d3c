use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;
use tabreward::curation::{AggregateMode, DataConfig};
use tabreward::grpo::SimTask;
use tabreward::rng::DetRng;
use tabreward::table::SourceFormat;
use tabreward::RunConfig;
use tabreward_cli::commands::*;
use tabreward_cli::Ctx;

use crate::Check;

const CITIES: &[&str] = &["Oslo", "Lima", "Pune", "Kyiv", "Accra", "Quito", "Hanoi", "Perth"];

fn lines(values: impl IntoIterator<Item = serde_json::Value>) -> String {
    values.into_iter().fold(String::new(), |mut s, v| {
        let _ = writeln!(s, "{v}");
        s
    })
}

/// Samples, rollouts and outcomes large enough to span several chunks.
fn write_corpus(dir: &Path) -> Result<(), String> {
    let conn = rusqlite::Connection::open(dir.join("shop.sqlite")).map_err(|e| e.to_string())?;
    conn.execute_batch(
        "CREATE TABLE orders (id INTEGER, city TEXT, amount REAL);
         INSERT INTO orders VALUES (1,'Oslo',10.5),(2,'Lima',7.0),(3,'Oslo',3.25),(4,'Pune',12.0),(5,'Kyiv',1.0);",
    )
    .map_err(|e| e.to_string())?;
    drop(conn);

    let mut rng = DetRng::new(99);
    let mut samples = Vec::new();
    let mut rollouts = Vec::new();
    for s in 0..300 {
        let id = format!("s{s:03}");
        let rows: Vec<Vec<String>> = (0..6)
            .map(|r| {
                vec![
                    format!("p{r}"),
                    CITIES[rng.below(CITIES.len() as u64) as usize].to_string(),
                    format!("{}", rng.below(100)),
                ]
            })
            .collect();
        let pick = rng.below(6) as usize;
        let city = rows[pick][1].clone();
        let table = json!({"header": ["name", "city", "score"], "rows": rows});
        let (sample, right, wrong) = match s % 5 {
            0 => (
                json!({"id": id, "task_type": "text_to_sql", "question": "Total amount for Oslo?",
                       "gold_sql": "SELECT SUM(amount) FROM orders WHERE city = 'Oslo'", "db_ref": "shop.sqlite"}),
                "SELECT sum(amount) FROM orders WHERE city='Oslo'".to_string(),
                "SELECT SUM(amount) FROM orders".to_string(),
            ),
            1 => (
                json!({"id": id, "task_type": "long_qa", "question": "Where is the player?",
                       "tables": [table], "gold_answer": format!("{} lives in {city}", rows[pick][0])}),
                format!("{} lives in {city} now", rows[pick][0]),
                "nobody knows".to_string(),
            ),
            2 => (
                json!({"id": id, "task_type": "fact_verification", "question": "Is the claim true?",
                       "tables": [table], "gold_answer": "yes"}),
                "Yes".to_string(),
                "no".to_string(),
            ),
            3 => (
                json!({"id": id, "task_type": "table_to_text", "question": "Describe the row.",
                       "tables": [table], "gold_answer": format!("the player {} comes from {city} with score {}", rows[pick][0], rows[pick][2])}),
                format!("the player {} comes from {city} with score {}", rows[pick][0], rows[pick][2]),
                "a table".to_string(),
            ),
            _ => (
                json!({"id": id, "task_type": "short_qa", "question": "Which city?",
                       "tables": [table], "gold_answer": city.clone(),
                       "gold_positions": [{"cell": city.clone(), "column": "city"}]}),
                city.clone(),
                "Atlantis".to_string(),
            ),
        };
        samples.push(sample);
        for k in 0..20 {
            let answer = if rng.below(2) == 0 { &right } else { &wrong };
            let mut think = format!("Row {pick} has \\position{{{city}}}{{city}} and the score column matters.");
            if rng.below(8) == 0 {
                think.push_str(" The score is high. The score is high. The score is high. The score is high. The score is high.");
            }
            let text = match rng.below(10) {
                0 => answer.clone(),
                1 => format!("<think>{think}"),
                _ => format!("<think>{think}</think> <answer>{answer}</answer>"),
            };
            rollouts.push(json!({"sample_id": samples[s]["id"], "text": text, "truncated": k == 19}));
        }
    }
    let outcomes = (0..2000).map(|i| {
        let rate = rng.unit_f64();
        json!({"sample_id": format!("o{i}"), "successes": (0..8).map(|_| rng.unit_f64() < rate).collect::<Vec<_>>()})
    });
    let w = |name: &str, text: String| std::fs::write(dir.join(name), text).map_err(|e| e.to_string());
    w("samples.jsonl", lines(samples))?;
    w("rollouts.jsonl", lines(rollouts))?;
    w("outcomes.jsonl", lines(outcomes))?;
    let task = SimTask::synthetic(50, 8, 7);
    w("task.json", serde_json::to_string(&task).map_err(|e| e.to_string())?)
}

/// Runs every command into `out`.
fn run_all(input: &Path, out: &Path, jobs: usize) -> Result<(), String> {
    let ctx = Ctx::new(RunConfig::default(), jobs);
    let e = |e: tabreward_cli::CliError| e.to_string();
    let i = |name: &str| input.join(name);
    let o = |name: &str| out.join(name);
    cmd_reward(&RewardArgs { samples: i("samples.jsonl"), rollouts: i("rollouts.jsonl"), out: o("rewards.jsonl") }, &ctx)
        .map_err(e)?;
    cmd_filter(
        &FilterArgs {
            transcripts: i("rollouts.jsonl"),
            samples: Some(i("samples.jsonl")),
            stage: Stage::Both,
            out: o("kept.jsonl"),
            report: o("filter_report.json"),
        },
        &ctx,
    )
    .map_err(e)?;
    cmd_bucket(
        &BucketArgs {
            outcomes: i("outcomes.jsonl"),
            config: DataConfig::Challenging,
            ids_out: o("ids.txt"),
            histogram_out: o("histogram.json"),
        },
        &ctx,
    )
    .map_err(e)?;
    cmd_evidence(
        &EvidenceArgs {
            samples: i("samples.jsonl"),
            rollouts: i("rollouts.jsonl"),
            mode: AggregateMode::Intersection,
            out: o("evidence.jsonl"),
            report: o("evidence_report.json"),
        },
        &ctx,
    )
    .map_err(e)?;
    cmd_perturb(
        &PerturbArgs {
            samples: i("samples.jsonl"),
            mode: PerturbModeArg::Both,
            seed: Some(5),
            format: SourceFormat::Markdown,
            out: o("perturbed.jsonl"),
        },
        &ctx,
    )
    .map_err(e)?;
    cmd_grpo_sim(&GrpoSimArgs { task: i("task.json"), steps: 60, lr: 0.5, seed: Some(7), out: o("trace.csv") }, &ctx)
        .map_err(e)?;
    Ok(())
}

fn snapshot(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path: PathBuf = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

pub fn run() -> Check {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = root.path().join("in");
    std::fs::create_dir(&input).map_err(|e| e.to_string())?;
    write_corpus(&input)?;

    let mut baseline: Option<(String, BTreeMap<String, Vec<u8>>)> = None;
    for jobs in [1, 8] {
        for rep in 0..2 {
            let label = format!("jobs {jobs} run {rep}");
            let out = root.path().join(format!("out_{jobs}_{rep}"));
            run_all(&input, &out, jobs).map_err(|e| format!("{label}: {e}"))?;
            let snap = snapshot(&out)?;
            match &baseline {
                None => baseline = Some((label, snap)),
                Some((base, want)) => {
                    ensure!(
                        want.keys().eq(snap.keys()),
                        "{label} wrote {:?}, {base} wrote {:?}",
                        snap.keys().collect::<Vec<_>>(),
                        want.keys().collect::<Vec<_>>()
                    );
                    for (name, bytes) in &snap {
                        ensure!(want[name] == *bytes, "{name} differs between {base} and {label}");
                    }
                }
            }
        }
    }
    let (_, snap) = baseline.expect("at least one run");
    let bytes: usize = snap.values().map(Vec::len).sum();
    Ok(format!("{} output files ({bytes} bytes) identical over 4 runs at jobs 1 and 8", snap.len()))
}
