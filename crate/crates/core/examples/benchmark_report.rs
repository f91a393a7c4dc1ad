//! Benchmarks the baselines and a briefly trained policy on a generated
//! dataset and writes the CSV report files.

use dagoffload::baselines::SchedulerKind;
use dagoffload::generator::{Dataset, DatasetManifest, GeneratorConfig, Sampling, SetSpec};
use dagoffload::harness::{run_benchmark, run_training, table_csv, write_report, Algorithm, BenchmarkSpec};
use dagoffload::policy::PolicyConfig;
use dagoffload::ppo::TrainConfig;
use dagoffload::sim::SystemProfile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sets = (0..3)
        .map(|set_id| SetSpec {
            set_id,
            config: GeneratorConfig { n: 10, seed: 90 + set_id as u64, ..GeneratorConfig::default() },
            dag_count: 6,
            sampling: Sampling::PaperProtocol,
        })
        .collect();
    let dataset = Dataset::generate(DatasetManifest::new(8, sets))?;
    let out = std::env::temp_dir().join("dagoffload-example-benchmark");

    let train = TrainConfig { iterations: 20, ..TrainConfig::toy() };
    let run = run_training(&dataset, PolicyConfig::toy(), &train, &out)?;

    let mut algorithms: Vec<Algorithm> =
        [SchedulerKind::Heft, SchedulerKind::Greedy, SchedulerKind::AllLocal, SchedulerKind::AllRemote].map(Algorithm::Baseline).to_vec();
    algorithms.extend([Algorithm::PolicyBest, Algorithm::PolicyMean]);
    let rates = vec![8.5, 11.5];
    let spec = BenchmarkSpec {
        set_ids: vec![0, 1, 2],
        rates_mbps: rates.clone(),
        algorithms,
        policy: Some(&run.policy),
        eval_trajectories: 20,
        seed: 0,
        base_profile: SystemProfile::reference(10.0),
    };
    let rows = run_benchmark(&dataset, &spec)?;
    write_report(&out, &rows, &rates)?;
    print!("{}", table_csv(&rows, &rates));
    println!("report written to {}", out.display());
    Ok(())
}
