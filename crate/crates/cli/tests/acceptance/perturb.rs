use std::collections::BTreeMap;

use tabreward::rng::DetRng;
use tabreward::table::{parse_csv_table, parse_markdown_table, PerturbMode, PerturbationSpec, SourceFormat};
use tabreward::Table;

use crate::Check;

const ALPHABET: &[char] = &['a', 'b', 'Z', '7', '0', '.', ',', '"', '-', ' ', 'é', '%', '\''];

/// Pipe-free cell without edge whitespace; sometimes empty.
fn cell(rng: &mut DetRng) -> String {
    let len = rng.below(9) as usize;
    let s: String = (0..len).map(|_| ALPHABET[rng.below(ALPHABET.len() as u64) as usize]).collect();
    s.trim().to_string()
}

fn random_table(rng: &mut DetRng) -> Table {
    let cols = 1 + rng.below(6) as usize;
    let rows = rng.below(9) as usize;
    let header = (0..cols).map(|c| format!("col {c} {}", cell(rng))).map(|h| h.trim().to_string()).collect();
    let rows = (0..rows).map(|_| (0..cols).map(|_| cell(rng)).collect()).collect();
    Table::new(header, rows).expect("generated table is rectangular")
}

fn sorted_cells(t: &Table) -> Vec<&str> {
    let mut v: Vec<&str> = t.cells().collect();
    v.sort_unstable();
    v
}

/// Header -> that column's values, sorted unless `ordered`.
fn bindings(t: &Table, ordered: bool) -> BTreeMap<&str, Vec<&str>> {
    (0..t.n_cols())
        .map(|c| {
            let mut v = t.column_values(c);
            if !ordered {
                v.sort_unstable();
            }
            (t.header[c].as_str(), v)
        })
        .collect()
}

/// Each row as a header-keyed record, order-free.
fn records(t: &Table) -> Vec<BTreeMap<&str, &str>> {
    let mut v: Vec<BTreeMap<&str, &str>> = t
        .rows
        .iter()
        .map(|r| t.header.iter().map(String::as_str).zip(r.iter().map(String::as_str)).collect())
        .collect();
    v.sort_unstable();
    v
}

fn round_trip(t: &Table, format: SourceFormat) -> Result<(), String> {
    let text = t.serialize(format).map_err(|e| e.to_string())?;
    let (back, warnings) = match format {
        SourceFormat::Markdown => parse_markdown_table(&text, true),
        _ => parse_csv_table(&text, true),
    }
    .map_err(|e| format!("{format:?} reparse failed: {e}\n{text}"))?;
    ensure!(warnings.is_empty(), "{format:?} warnings {warnings:?}");
    ensure!(
        back.header == t.header && back.rows == t.rows,
        "{format:?} round trip changed the table\n{text}\n{t:?}\n{back:?}"
    );
    Ok(())
}

pub fn run() -> Check {
    let mut rng = DetRng::new(77);
    for i in 0..1000 {
        let table = random_table(&mut rng);
        for mode in [PerturbMode::Column, PerturbMode::Row, PerturbMode::Both] {
            let spec = PerturbationSpec { mode, seed: rng.next_u64() };
            let out = table.perturb(spec);
            ensure!(out == table.perturb(spec), "table {i} {mode:?}: same seed, different output");
            ensure!(sorted_cells(&out) == sorted_cells(&table), "table {i} {mode:?}: cell multiset changed");
            ensure!(
                bindings(&out, mode == PerturbMode::Column) == bindings(&table, mode == PerturbMode::Column),
                "table {i} {mode:?}: a column lost its values"
            );
            ensure!(records(&out) == records(&table), "table {i} {mode:?}: a row was split");
            round_trip(&out, SourceFormat::Markdown).map_err(|e| format!("table {i} {mode:?}: {e}"))?;
            round_trip(&out, SourceFormat::Csv).map_err(|e| format!("table {i} {mode:?}: {e}"))?;
        }
    }
    Ok("1000 tables x 3 modes: multiset, bindings, determinism, markdown and csv round trips".into())
}
