//! Runs the untrained transformer policy over one episode, then saves and
//! reloads it through the checkpoint format.

use std::sync::Arc;

use dagoffload::autodiff::Checkpoint;
use dagoffload::generator::{generate_dag, GeneratorConfig};
use dagoffload::policy::{PolicyConfig, TransformerPolicy};
use dagoffload::rng;
use dagoffload::sim::{reset, EpisodeContext, SystemProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let policy = TransformerPolicy::new(PolicyConfig::toy())?;
    println!("toy policy: {} parameters in {} tensors", policy.param_count(), policy.params.len());

    let config = GeneratorConfig { n: 10, seed: 42, ..GeneratorConfig::default() };
    let ctx = Arc::new(EpisodeContext::new(generate_dag(&config)?, SystemProfile::reference(8.5), &config.embedding_bounds(), 12));
    let mut state = reset(ctx);
    let mut rng = rng::seeded(1);
    while !state.is_done() {
        let out = policy.act(&state, &mut rng, false)?;
        println!(
            "step {:>2}: p(offload) {:.4}  value {:+.5}  -> {:?}",
            state.cursor(),
            out.probs[1],
            out.value,
            out.decision
        );
        state.step_mut(out.decision)?;
    }
    println!("sampled plan {}  AL {:.3} ms", state.plan, state.latency() * 1e3);

    let bytes = policy.to_checkpoint(vec![]).to_bytes();
    let restored = TransformerPolicy::from_checkpoint(&Checkpoint::from_bytes(&bytes)?)?;
    println!("checkpoint: {} bytes, reload identical: {}", bytes.len(), restored.params == policy.params);
    Ok(())
}
