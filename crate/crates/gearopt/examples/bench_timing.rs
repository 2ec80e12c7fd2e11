use gearopt::bench::*;
use gearopt::sim::participant_presets;
use std::time::Instant;

fn main() {
    let cfg = BenchConfig::default();
    let presets = participant_presets();
    let scenarios = build_scenarios(
        &presets[..1],
        &[ScenarioFamily::MultiSlope],
        &[0.0, 5.0, 10.0],
        &[1.0],
        0.03,
        20,
        0,
        &cfg.consts,
        &cfg.score,
        &cfg.mtbo.acquisition.grid,
    )
    .unwrap();
    let t0 = Instant::now();
    let report = run_scenario(&scenarios[0], &cfg).unwrap();
    println!("one scenario (20 reps): {:.1?}", t0.elapsed());
    println!(
        "mtbo median total {} random median total {} reduction {:.1}%",
        report.summary.mtbo_total_median,
        report.summary.random_total_median,
        report.summary.reduction_pct
    );
    for t in &report.tasks {
        println!(
            "  {}: truth {:.1} | mtbo q={} chosen={:.1} hit={:.2} term v/r/c={}/{}/{} | rand q={} hit={:.2}",
            t.label,
            t.ground_truth_gear,
            t.mtbo.median_queries,
            t.mtbo.median_chosen,
            t.mtbo.hit_rate,
            t.mtbo.termination.variance,
            t.mtbo.termination.repeat,
            t.mtbo.termination.cap,
            t.random.median_queries,
            t.random.hit_rate
        );
    }
    println!("correlation median: {:?}", report.task_correlation_median);
}
