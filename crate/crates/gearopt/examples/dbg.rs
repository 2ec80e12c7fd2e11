use gearopt::gp::*;
use gearopt::mtbo::*;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;

fn main() {
    let cfg = MtboConfig {
        acquisition: AcquisitionConfig { kappa: 100.0, grid: uniform_grid(0.0, 1.0, 21) },
        termination: TerminationConfig::default(),
        fit: FitOptions { restarts: 2, ..FitOptions::default() },
    };
    let peak = cfg.acquisition.grid[14];
    let mut oracle = move |x: f64, _t: usize| Ok(1.0 - 4.0 * (x - peak) * (x - peak));
    let mut model = MtgpModel::new((0.0, 1.0), HyperPrior::default()).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let res = optimize_task(&mut oracle, 0, "q", &mut model, Initialization::Auto, &cfg, &mut rng).unwrap();
    println!("chosen={} reason={:?} n={}", res.chosen_gear_ratio, res.termination, res.queries_used());
    for q in &res.queries { println!("  x={:.3} y={:.4}", q.gear_ratio, q.raw_score); }
    println!("hyper: l={} taskvar={} noise={:e}", model.hyperparams().lengthscale(),
        model.hyperparams().task_cov(0,0), model.hyperparams().noise_vars()[0]);
    for p in res.posterior_curve.iter() {
        println!("  g={:.3} mu={:+.4} var={:.2e}", p.gear_ratio, p.mean, p.variance);
    }
}
