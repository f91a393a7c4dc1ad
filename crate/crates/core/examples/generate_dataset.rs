//! Writes a small two-set dataset to a temporary directory, reads it back and
//! reports the communication-to-computation ratio it was generated for.

use dagoffload::generator::{generate_dataset, measured_ccr, Dataset, DatasetManifest, GeneratorConfig, Sampling, SetSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets = [(0, 0.4, 0.4, 0.3), (1, 0.8, 0.6, 0.5)]
        .into_iter()
        .map(|(set_id, fat, density, ccr)| SetSpec {
            set_id,
            config: GeneratorConfig { n: 20, fat, density, ccr, seed: 11 + set_id as u64, ..GeneratorConfig::default() },
            dag_count: 10,
            sampling: Sampling::Fixed,
        })
        .collect();
    let manifest = DatasetManifest::new(2024, sets);

    let dir = std::env::temp_dir().join("dagoffload-example-dataset");
    let written = generate_dataset(&manifest, &dir)?;
    println!("wrote {written} DAGs to {}", dir.display());

    let dataset = Dataset::load(&dir)?;
    for (set_id, graphs) in &dataset.sets {
        let cfg = dataset.manifest.set(*set_id)?.config;
        let edges: usize = graphs.iter().map(|g| g.edges().len()).sum();
        println!(
            "set {set_id}: fat {} density {} target ccr {} measured ccr {:.3}, {:.1} edges per DAG",
            cfg.fat,
            cfg.density,
            cfg.ccr,
            measured_ccr(graphs, cfg.reference_rate, cfg.reference_device),
            edges as f64 / graphs.len() as f64
        );
    }
    println!("\nfirst DAG as Graphviz:\n{}", dataset.sets[0].1[0].to_dot());
    Ok(())
}
