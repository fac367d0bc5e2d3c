use tabreward::rewards::compose;
use tabreward::rng::DetRng;
use tabreward::RewardConfig;

use crate::Check;

/// Closed form written out case by case.
fn closed_form(r_ans: u8, r_pos: f64, r_fmt: u8, sql_sim: Option<f64>, l: &RewardConfig) -> f64 {
    let fmt = l.lambda2 * f64::from(r_fmt);
    match (r_ans, sql_sim) {
        (1, _) => 1.0 + l.lambda1 * r_pos + fmt,
        (_, Some(sim)) => fmt + l.lambda3 * sim,
        (_, None) => fmt,
    }
}

pub fn run() -> Check {
    let mut rng = DetRng::new(20240601);
    let mut worst: f64 = 0.0;
    let mut gated = 0;
    for i in 0..1000 {
        let cfg = RewardConfig {
            lambda1: rng.unit_f64(),
            lambda2: rng.unit_f64(),
            lambda3: rng.unit_f64(),
            ..RewardConfig::default()
        };
        let r_ans = rng.below(2) as u8;
        let r_fmt = rng.below(2) as u8;
        let r_pos = rng.unit_f64();
        let sql_sim = (rng.below(2) == 1).then(|| rng.unit_f64());

        let got = compose(r_ans, r_pos, r_fmt, sql_sim, &cfg);
        let want = closed_form(r_ans, r_pos, r_fmt, sql_sim, &cfg);
        worst = worst.max((got - want).abs());
        ensure!((got - want).abs() <= 1e-12, "tuple {i}: {got} vs closed form {want}");

        let hi = 1.0 + cfg.lambda1 + cfg.lambda2;
        ensure!((0.0..=hi).contains(&got), "tuple {i}: {got} outside [0, {hi}]");

        if r_ans == 0 {
            gated += 1;
            let other = compose(0, rng.unit_f64(), r_fmt, sql_sim, &cfg);
            ensure!(other == got, "tuple {i}: r_pos leaks through a zero answer reward");
            if sql_sim.is_none() {
                let no_l3 = compose(0, r_pos, r_fmt, None, &RewardConfig { lambda3: 0.0, ..cfg.clone() });
                ensure!(no_l3 == got, "tuple {i}: lambda3 applied outside text-to-sql");
            }
        }
    }
    Ok(format!("1000 tuples, {gated} gated, max |err| {worst:.1e}"))
}
