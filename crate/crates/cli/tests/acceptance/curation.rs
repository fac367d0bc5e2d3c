use std::collections::{BTreeMap, BTreeSet};

use tabreward::curation::{
    aggregate_positions, bucket_difficulty, select_config, AggregateMode, DataConfig, DifficultyBucket,
    RolloutOutcome,
};
use tabreward::rng::DetRng;
use tabreward::CellRef;

use crate::Check;

fn partition(rng: &mut DetRng, matrix: usize) -> Result<[usize; 3], String> {
    let mut buckets = BTreeMap::new();
    let mut counts = [0usize; 3];
    // per-matrix success rate so every bucket shows up
    let rate = rng.unit_f64();
    for s in 0..1000 {
        let outcome = RolloutOutcome {
            sample_id: format!("s{s}"),
            successes: (0..8).map(|_| rng.unit_f64() < rate).collect(),
        };
        let c = outcome.successes.iter().filter(|x| **x).count();
        let b = bucket_difficulty(&outcome).ok_or("empty outcome")?;
        let want = match c {
            8 => DifficultyBucket::AlwaysCorrect,
            0 => DifficultyBucket::AlwaysWrong,
            _ => DifficultyBucket::Variable,
        };
        ensure!(b == want, "matrix {matrix} sample {s}: {c}/8 put in {b:?}");
        counts[b as usize] += 1;
        buckets.insert(outcome.sample_id, b);
    }
    ensure!(counts.iter().sum::<usize>() == 1000, "matrix {matrix}: buckets do not cover the samples");

    let all = select_config(&buckets, DataConfig::All);
    let challenging = select_config(&buckets, DataConfig::Challenging);
    let variable = select_config(&buckets, DataConfig::Variable);
    ensure!(all.len() == 1000, "matrix {matrix}: all has {}", all.len());
    ensure!(variable.is_subset(&challenging), "matrix {matrix}: variable not within challenging");
    ensure!(challenging.is_subset(&all), "matrix {matrix}: challenging not within all");
    ensure!(
        challenging.len() == 1000 - counts[DifficultyBucket::AlwaysCorrect as usize],
        "matrix {matrix}: challenging keeps always-correct samples"
    );
    ensure!(
        variable.len() == counts[DifficultyBucket::Variable as usize],
        "matrix {matrix}: variable size {}",
        variable.len()
    );
    Ok(counts)
}

fn random_family(rng: &mut DetRng) -> Vec<Vec<CellRef>> {
    let members = rng.below(6) as usize;
    (0..members)
        .map(|_| {
            let n = rng.below(7) as usize;
            (0..n)
                .map(|_| {
                    let col = format!("c{}", rng.below(3));
                    if rng.below(4) == 0 {
                        CellRef::column(col)
                    } else {
                        CellRef::cell(format!("v{}", rng.below(5)), col)
                    }
                })
                .collect()
        })
        .collect()
}

fn keys(v: &[CellRef]) -> BTreeSet<CellRef> {
    v.iter().map(CellRef::key).collect()
}

pub fn run() -> Check {
    let mut rng = DetRng::new(6);
    let mut totals = [0usize; 3];
    for m in 0..20 {
        let c = partition(&mut rng, m)?;
        (0..3).for_each(|i| totals[i] += c[i]);
    }
    ensure!(totals.iter().all(|c| *c > 0), "some bucket never populated: {totals:?}");

    let mut empty_inputs = 0;
    for f in 0..1000 {
        let family = random_family(&mut rng);
        let inter = aggregate_positions(&family, AggregateMode::Intersection);
        let union = aggregate_positions(&family, AggregateMode::Union);
        if family.is_empty() {
            empty_inputs += 1;
            ensure!(
                inter.positions.is_empty() && inter.diagnostic == Some("no_evidence"),
                "family {f}: empty input gave {inter:?}"
            );
            continue;
        }
        let i = keys(&inter.positions);
        let u = keys(&union.positions);
        for (k, member) in family.iter().enumerate() {
            let m = keys(member);
            ensure!(i.is_subset(&m), "family {f}: intersection not within member {k}");
            ensure!(m.is_subset(&u), "family {f}: member {k} not within union");
        }
    }
    Ok(format!(
        "20 matrices of 1000x8 (buckets {totals:?}); 1000 families ({empty_inputs} empty)"
    ))
}
