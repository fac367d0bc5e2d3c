use num::{BigInt, BigRational};
use tabreward::metrics::{bleu, pass_at_k, pass_at_k_exact, token_f1, BleuConfig, NormalizationPolicy};
use tabreward::rng::DetRng;

use crate::Check;

const VOCAB: &[&str] = &["the", "total", "is", "42", "rows", "in", "table", "year", "of", "sales"];

fn random_sentence(rng: &mut DetRng, len: usize) -> Vec<String> {
    (0..len).map(|_| VOCAB[rng.below(VOCAB.len() as u64) as usize].to_string()).collect()
}

/// Candidate as a noisy copy of the reference: random substitutions,
/// deletions and insertions.
fn mutate(rng: &mut DetRng, reference: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for w in reference {
        match rng.below(10) {
            0 => {}
            1 => out.push(VOCAB[rng.below(VOCAB.len() as u64) as usize].to_string()),
            2 => {
                out.push(w.clone());
                out.push(VOCAB[rng.below(VOCAB.len() as u64) as usize].to_string());
            }
            _ => out.push(w.clone()),
        }
    }
    if out.is_empty() {
        out.push(reference[0].clone());
    }
    out
}

/// Counts n-gram occurrences by scanning every window.
fn occurrences(words: &[String], gram: &[String]) -> usize {
    words.windows(gram.len()).filter(|w| *w == gram).count()
}

/// BLEU-4 with uniform weights from first principles.
fn oracle_bleu(cand: &[String], reference: &[String]) -> f64 {
    let mut product = 1.0;
    for n in 1..=4 {
        if cand.len() < n {
            return 0.0;
        }
        let mut seen: Vec<&[String]> = Vec::new();
        let mut clipped = 0;
        for gram in cand.windows(n) {
            if seen.contains(&gram) {
                continue;
            }
            seen.push(gram);
            clipped += occurrences(cand, gram).min(occurrences(reference, gram));
        }
        let total = cand.len() + 1 - n;
        if clipped == 0 {
            return 0.0;
        }
        product *= clipped as f64 / total as f64;
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * product.powf(0.25)
}

fn check_bleu() -> Result<String, String> {
    let mut rng = DetRng::new(11);
    let cfg = BleuConfig::default();
    let mut worst: f64 = 0.0;
    let mut nonzero = 0;
    for i in 0..50 {
        let len = 6 + rng.below(15) as usize;
        let reference = random_sentence(&mut rng, len);
        let cand = if rng.below(5) == 0 { random_sentence(&mut rng, len) } else { mutate(&mut rng, &reference) };
        let got = bleu(&cand.join(" "), &reference.join(" "), &cfg).map_err(|e| e.to_string())?;
        let want = oracle_bleu(&cand, &reference);
        if want > 0.0 {
            nonzero += 1;
        }
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() < 1e-9, "pair {i}: bleu {got} vs oracle {want}");
    }
    ensure!(nonzero >= 25, "only {nonzero} of 50 pairs have a nonzero score");
    Ok(format!("bleu 50 pairs ({nonzero} nonzero) max |err| {worst:.1e}"))
}

/// Fraction of k-subsets of the rollouts that contain a success.
fn enumerated_pass_at_k(successes: u32, n: u32, k: u32) -> BigRational {
    let (mut hit, mut all) = (0i64, 0i64);
    for subset in 0u32..(1 << n) {
        if subset.count_ones() == k {
            all += 1;
            if subset & successes != 0 {
                hit += 1;
            }
        }
    }
    BigRational::new(BigInt::from(hit), BigInt::from(all))
}

fn check_pass_at_k() -> Result<String, String> {
    let mut cases = 0;
    for n in 1..=10u32 {
        for mask in 0u32..(1 << n) {
            let successes: Vec<bool> = (0..n).map(|i| (mask >> i) & 1 == 1).collect();
            for k in 1..=n {
                let want = enumerated_pass_at_k(mask, n, k);
                let got = pass_at_k_exact(&successes, k as usize).map_err(|e| e.to_string())?;
                ensure!(got == want, "n={n} mask={mask:b} k={k}: {got} vs {want}");
                let float = pass_at_k(&successes, k as usize).map_err(|e| e.to_string())?;
                let exact = num::ToPrimitive::to_f64(&want).unwrap();
                ensure!((float - exact).abs() <= 1e-15, "n={n} mask={mask:b} k={k}: float {float} vs {exact}");
                cases += 1;
            }
        }
    }
    Ok(format!("pass@k {cases} cases"))
}

/// (prediction, gold, hand-counted numerator, denominator)
const F1_FIXTURES: &[(&str, &str, u32, u32)] = &[
    ("Jedd", "Jedd Greschock", 2, 3),
    ("Jedd Greschock", "Jedd Greschock", 1, 1),
    ("jedd greschock", "Jedd, Greschock.", 1, 1),
    ("a a b", "a b b", 2, 3),
    ("New York City", "new york", 4, 5),
    ("the cat sat on the mat", "the cat", 1, 2),
    ("red blue", "green", 0, 1),
    ("", "green", 0, 1),
    ("1,000 people", "1000 people", 1, 1),
    ("x y z w", "x", 2, 5),
];

fn check_f1() -> Result<String, String> {
    let policy = NormalizationPolicy::default();
    for &(pred, gold, num, den) in F1_FIXTURES {
        let got = token_f1(pred, gold, &policy);
        let want = f64::from(num) / f64::from(den);
        ensure!(got == want, "f1({pred:?}, {gold:?}) = {got}, hand count {num}/{den}");
    }
    Ok(format!("f1 {} fixtures", F1_FIXTURES.len()))
}

pub fn run() -> Check {
    Ok([check_bleu()?, check_pass_at_k()?, check_f1()?].join("; "))
}
