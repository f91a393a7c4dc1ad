//! Trains the toy policy on 20 small DAGs at one rate and compares it with the
//! baselines before and after.
//!
//! ```text
//! cargo run --release --example train_toy -- [iterations]
//! ```

use std::time::Instant;

use dagoffload::baselines::SchedulerKind;
use dagoffload::generator::{generate_dag, GeneratorConfig};
use dagoffload::policy::{PolicyConfig, TransformerPolicy};
use dagoffload::ppo::{evaluate, train, OptimizerState, TaskPool, TrainConfig};
use dagoffload::sim::evaluate_plan;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(200);
    let rate = 10.0;
    let base = GeneratorConfig { n: 10, ..GeneratorConfig::default() };
    let graphs = (0..20).map(|i| generate_dag(&GeneratorConfig { seed: 100 + i, ..base })).collect::<Result<Vec<_>, _>>()?;
    let pool = TaskPool::new(graphs, base.embedding_bounds());

    let mut policy = TransformerPolicy::new(PolicyConfig::toy())?;
    let config = TrainConfig { iterations, rates_mbps: vec![rate], ..TrainConfig::toy() };
    let before = evaluate(&policy, &pool, rate, 20, 7)?;

    let mut opt = OptimizerState::new(config.optimizer, &policy);
    let start = Instant::now();
    train(&mut policy, &pool, &config, &mut opt, |m, _| {
        if m.iteration % 10 == 0 {
            println!("iter {:4}  mean AL {:8.2} ms  entropy {:.3}  value {:.4}", m.iteration, m.mean_al_ms, m.entropy, m.value_loss);
        }
        Ok(())
    })?;
    println!("trained in {:.1?}", start.elapsed());
    let after = evaluate(&policy, &pool, rate, 20, 7)?;

    let mut wins = 0;
    let mut sums = [0.0; 6];
    for (i, (b, a)) in before.iter().zip(&after).enumerate() {
        let ctx = pool.context(i, rate)?;
        let al = |k: SchedulerKind| -> Result<f64, Box<dyn std::error::Error>> {
            Ok(1e3 * evaluate_plan(&ctx.graph, &ctx.seq, &k.plan(&ctx.graph, &ctx.seq, &ctx.profile)?, &ctx.profile)?.0)
        };
        let greedy = al(SchedulerKind::Greedy)?;
        let oracle = al(SchedulerKind::Oracle)?;
        if a.best_ms <= greedy {
            wins += 1;
        }
        for (s, v) in sums.iter_mut().zip([b.mean_ms, a.mean_ms, a.best_ms, greedy, al(SchedulerKind::Heft)?, oracle]) {
            *s += v / 20.0;
        }
    }
    println!("mean sampled AL: before {:.2} ms, after {:.2} ms (ratio {:.3})", sums[0], sums[1], sums[1] / sums[0]);
    println!("best-of-20 {:.2}  greedy {:.2}  heft {:.2}  oracle {:.2} ms", sums[2], sums[3], sums[4], sums[5]);
    println!("best-of-20 <= greedy on {wins}/20 DAGs");
    Ok(())
}
