use std::collections::BTreeSet;

use tabreward::curation::{detect_redundancy, RedundancyConfig};
use tabreward::rng::DetRng;

use crate::Check;

const BAD_CASE: &str = include_str!("../../../core/tests/fixtures/badcase_transcript.txt");

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

/// Three-syllable pseudo-words: distinct, and never a modal or an
/// abbreviation.
fn lexicon() -> Vec<String> {
    let mut words = BTreeSet::new();
    let mut rng = DetRng::new(3);
    while words.len() < 800 {
        let w: String = (0..3)
            .map(|_| {
                let o = ONSETS[rng.below(ONSETS.len() as u64) as usize];
                let n = NUCLEI[rng.below(NUCLEI.len() as u64) as usize];
                format!("{o}{n}")
            })
            .collect();
        words.insert(w);
    }
    words.into_iter().collect()
}

fn sentence(rng: &mut DetRng, words: &[String]) -> Vec<String> {
    let len = 8 + rng.below(5) as usize;
    (0..len).map(|_| words[rng.below(words.len() as u64) as usize].clone()).collect()
}

fn render(sentences: &[Vec<String>]) -> String {
    sentences
        .iter()
        .map(|s| {
            let mut text = s.join(" ");
            text[..1].make_ascii_uppercase();
            text + "."
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// 200 transcripts; every tenth loops back over three of its own steps
/// with one word changed in each restatement.
fn corpus() -> (Vec<String>, BTreeSet<usize>) {
    let words = lexicon();
    let mut rng = DetRng::new(2024);
    let mut planted = BTreeSet::new();
    let mut out = Vec::new();
    for t in 0..200 {
        let n = 8 + rng.below(5) as usize;
        let mut sentences: Vec<Vec<String>> = (0..n).map(|_| sentence(&mut rng, &words)).collect();
        if t % 10 == 7 {
            planted.insert(t);
            for _ in 0..3 {
                let src = rng.below(n as u64) as usize;
                let mut copy = sentences[src].clone();
                let at = rng.below(copy.len() as u64) as usize;
                copy[at] = words[rng.below(words.len() as u64) as usize].clone();
                let pos = src + 1 + rng.below((sentences.len() - src) as u64) as usize;
                sentences.insert(pos, copy);
            }
        }
        out.push(render(&sentences));
    }
    (out, planted)
}

pub fn run() -> Check {
    let cfg = RedundancyConfig::default();
    let (transcripts, planted) = corpus();
    let flagged: BTreeSet<usize> = transcripts
        .iter()
        .enumerate()
        .filter(|(_, t)| detect_redundancy(t, &cfg).redundant)
        .map(|(i, _)| i)
        .collect();
    let tp = flagged.intersection(&planted).count();
    let precision = if flagged.is_empty() { 0.0 } else { tp as f64 / flagged.len() as f64 };
    let recall = tp as f64 / planted.len() as f64;
    ensure!(
        flagged == planted,
        "precision {precision:.3} recall {recall:.3}; missed {:?}, spurious {:?}",
        planted.difference(&flagged).collect::<Vec<_>>(),
        flagged.difference(&planted).collect::<Vec<_>>()
    );

    let bad = detect_redundancy(BAD_CASE, &cfg);
    ensure!(bad.redundant, "bad-case transcript not flagged ({} pairs)", bad.pair_count);
    Ok(format!(
        "{} planted of {}, precision {precision:.2} recall {recall:.2}; bad case {} pairs over {} sentences",
        planted.len(),
        transcripts.len(),
        bad.pair_count,
        bad.sentences
    ))
}
