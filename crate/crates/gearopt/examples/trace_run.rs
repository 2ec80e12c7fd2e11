use gearopt::gp::*;
use gearopt::mtbo::*;
use gearopt::seeding::mix;
use gearopt::sim::*;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() {
    let consts = DeviceConstants::default();
    let score = ScoreConfig::default();
    let cfg = MtboConfig::loop_default();
    let grid = cfg.acquisition.grid.clone();
    let burden = BurdenModel::default();
    let tasks: Vec<TaskProfile> = [0.0, 5.0, 10.0]
        .iter()
        .map(|&s| TaskProfile::derive(s, 1.0, &burden, &consts, &score, 0.0075, &grid).unwrap())
        .collect();
    for t in &tasks {
        let gt = ground_truth(t, &grid, &consts, &score).unwrap();
        println!("{}: truth={:.1} noise_std={:.2}", t.label, gt.optimum_gear_ratio, t.noise_std);
    }
    let mut oracle = SimOracle::new(tasks.clone(), consts.clone(), score.clone(), mix(1234, 0));
    let mut fit_rng = ChaCha12Rng::seed_from_u64(mix(1234, 1));
    let mut model = MtgpModel::new(cfg.acquisition.input_range(), HyperPrior::default()).unwrap();

    // manual replication of the loop with tracing
    for (tix, t) in tasks.iter().enumerate() {
        println!("=== task {} ({}) ===", tix, t.label);
        model.ensure_task(tix).unwrap();
        let mut history: Vec<f64> = vec![];
        if model.is_empty() {
            for idx in [0usize, 24, 49] {
                let g = grid[idx];
                let y = oracle.evaluate(g, tix).unwrap();
                model.observe(g, y, tix).unwrap();
                history.push(g);
                println!("  init g={:.1} y={:.2}", g, y);
            }
        }
        loop {
            model
                .refit_if_dirty(&cfg.fit, &mut fit_rng)
                .unwrap();
            let curve = model.posterior_curve(&grid, tix).unwrap();
            let h = model.hyperparams();
            let mut am = 0;
            for (i, p) in curve.iter().enumerate() {
                if p.mean > curve[am].mean {
                    am = i;
                }
            }
            let corr = if tix > 0 { model.task_correlation()[tix][tix - 1] } else { f64::NAN };
            println!(
                "  n={} l={:.3} Ktt={:.2} noise={:.2e} corr_prev={:.4} argmax_mu={:.1} var@={:.2e}",
                history.len(), h.lengthscale(), h.task_cov(tix, tix), h.noise_vars()[tix], corr,
                grid[am], curve[am].variance
            );
            match check_termination(&model, tix, &history, &grid, &cfg.termination).unwrap() {
                TerminationDecision::Stop(r) => {
                    println!("  STOP {:?} chosen={:.1}", r, grid[am]);
                    break;
                }
                TerminationDecision::Continue => {}
            }
            let g = select_next(&model, tix, &cfg.acquisition).unwrap();
            let y = oracle.evaluate(g, tix).unwrap();
            model.observe(g, y, tix).unwrap();
            history.push(g);
            println!("    query g={:.1} y={:.2}", g, y);
            if history.len() > 25 { println!("  ...abort trace"); break; }
        }
    }
}
