use gearopt::bench::*;
use gearopt::sim::participant_presets;
use std::time::Instant;

fn main() {
    let presets = participant_presets();
    for &pct in &[0.03, 0.02, 0.015, 0.01, 0.005] {
        for pi in 0..2 {
            for (family, fixed) in [(ScenarioFamily::MultiSlope, 1.0), (ScenarioFamily::MultiSpeed, 10.0)] {
                let cfg = BenchConfig::default();
                let scenarios = build_scenarios(
                    &presets[pi..pi+1], &[family],
                    &[0.0, 5.0, 10.0], &[1.0, 1.5, 2.0],
                    pct, 10, 7,
                    &cfg.consts, &cfg.score, &cfg.mtbo.acquisition.grid,
                ).unwrap();
                let sc = scenarios.iter().find(|s| s.fixed_value == fixed).unwrap();
                let t0 = Instant::now();
                let r = run_scenario(sc, &cfg).unwrap();
                let hits: Vec<String> = r.tasks.iter().map(|t| format!("{:.2}", t.mtbo.hit_rate)).collect();
                let mq: Vec<String> = r.tasks.iter().map(|t| format!("{}", t.mtbo.median_queries)).collect();
                let rq: Vec<String> = r.tasks.iter().map(|t| format!("{}", t.random.median_queries)).collect();
                println!(
                    "pct={:<6} {} {}[{}] mtbo={:<5} rand={:<5} ratio={:.2} hits=[{}] mtbo_q=[{}] rand_q=[{}] ({:.0?})",
                    pct, sc.participant, family, fixed,
                    r.summary.mtbo_total_median, r.summary.random_total_median,
                    r.summary.mtbo_total_median / r.summary.random_total_median,
                    hits.join(","), mq.join(","), rq.join(","), t0.elapsed()
                );
            }
        }
    }
}
