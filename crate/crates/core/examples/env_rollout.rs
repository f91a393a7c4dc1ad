//! Steps the environment by hand with a simple threshold rule and shows that
//! the rewards add up to minus the final latency.

use std::sync::Arc;

use dagoffload::generator::{generate_dag, GeneratorConfig};
use dagoffload::sim::{reset, Decision, EpisodeContext, SystemProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = GeneratorConfig { n: 12, seed: 3, ..GeneratorConfig::default() };
    let graph = generate_dag(&config)?;
    let ctx = Arc::new(EpisodeContext::new(graph, SystemProfile::reference(10.0), &config.embedding_bounds(), 12));

    let mut state = reset(ctx.clone());
    let mut total = 0.0;
    while let Some(task) = state.current_task() {
        let t = &ctx.times[task];
        // offload when the round trip beats local execution
        let decision = if t.offload_round_trip() < t.local { Decision::Offload } else { Decision::Local };
        let reward = state.step_mut(decision)?;
        total += reward;
        println!("task {task:>2} -> {decision:?}: reward {:>9.3} ms, partial AL {:>8.3} ms", reward * 1e3, state.latency() * 1e3);
    }
    println!("plan {}  AL {:.3} ms  sum of rewards {:.3} ms", state.plan, state.latency() * 1e3, total * 1e3);
    Ok(())
}
