use tabreward::grpo::*;
use tabreward::rng::DetRng;

use crate::Check;

fn random_policy(rng: &mut DetRng, prompts: usize, vocab: usize) -> CategoricalPolicy {
    CategoricalPolicy {
        logits: (0..prompts)
            .map(|p| (format!("q{p}"), (0..vocab).map(|_| 2.0 * rng.unit_f64() - 1.0).collect()))
            .collect(),
    }
}

type Instance = (CategoricalPolicy, CategoricalPolicy, CategoricalPolicy, Vec<RolloutGroup>);

/// Seeded instance whose importance ratios keep clear of the clip
/// boundaries, where the objective is not differentiable.
fn instance(seed: u64, cfg: &GrpoConfig) -> Instance {
    let mut rng = DetRng::new(seed);
    loop {
        let old = random_policy(&mut rng, 5, 6);
        let mut theta = old.clone();
        for v in theta.logits.values_mut() {
            v.iter_mut().for_each(|x| *x += 0.4 * (2.0 * rng.unit_f64() - 1.0));
        }
        let reference = random_policy(&mut rng, 5, 6);
        let groups: Vec<RolloutGroup> = old
            .logits
            .keys()
            .map(|pid| {
                let probs = old.probs(pid).unwrap();
                let outcomes = (0..cfg.group_size)
                    .map(|_| Outcome {
                        answer: rng.categorical(&probs),
                        reward: rng.below(3) as f64 / 2.0,
                        truncated: rng.below(5) == 0,
                    })
                    .collect();
                RolloutGroup::new(pid.clone(), outcomes, cfg.adv_eps).unwrap()
            })
            .collect();
        let clear = groups.iter().all(|g| {
            let p = theta.probs(&g.prompt_id).unwrap();
            let q = old.probs(&g.prompt_id).unwrap();
            g.outcomes.iter().all(|o| {
                let r = p[o.answer] / q[o.answer];
                (r - (1.0 - cfg.eps_low)).abs() > 1e-3 && (r - (1.0 + cfg.eps_high)).abs() > 1e-3
            })
        });
        if clear {
            return (theta, old, reference, groups);
        }
    }
}

fn gradcheck() -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (label, cfg) in [
        ("exact", GrpoConfig { beta: 0.05, ..Default::default() }),
        ("k3", GrpoConfig { beta: 0.05, kl_estimator: KlEstimator::K3, ..Default::default() }),
    ] {
        for seed in 0..10 {
            let (theta, old, reference, groups) = instance(seed, &cfg);
            let analytic = grpo_gradient(&theta, &old, &reference, &groups, &cfg).map_err(|e| e.to_string())?;
            let numeric =
                numeric_gradient(&theta, &old, &reference, &groups, &cfg, 1e-5).map_err(|e| e.to_string())?;
            let err = max_relative_error(&analytic, &numeric, 1e-6);
            ensure!(err < 1e-4, "{label} seed {seed}: relative error {err:e}");
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

pub fn run() -> Check {
    let worst = gradcheck()?;

    let task = SimTask::synthetic(100, 8, 7);
    let cfg = GrpoConfig { group_size: 8, ..Default::default() };
    let trace = simulate_training(&task, &IndexReward, &cfg, 500, 0.5, 7).map_err(|e| e.to_string())?;
    let (first, last) = (trace[0], trace[trace.len() - 1]);
    ensure!(first.accuracy < 0.2, "initial accuracy {}", first.accuracy);
    ensure!(last.accuracy > 0.9, "final accuracy {}", last.accuracy);
    let rewards: Vec<f64> = trace.iter().map(|r| r.mean_reward).collect();
    let ma = moving_average(&rewards, 50);
    if let Some(i) = ma.windows(2).position(|w| w[1] < w[0]) {
        return Err(format!("moving average drops at window {i}: {} -> {}", ma[i], ma[i + 1]));
    }
    Ok(format!(
        "gradcheck max rel err {worst:.1e}; accuracy {:.2} -> {:.2}, reward {:.3} -> {:.3}",
        first.accuracy, last.accuracy, first.mean_reward, last.mean_reward
    ))
}
