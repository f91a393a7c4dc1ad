//! Runs every baseline scheduler on the same DAGs across the rate sweep.

use dagoffload::baselines::SchedulerKind;
use dagoffload::dag::compute_ranks;
use dagoffload::generator::{generate_dag, GeneratorConfig};
use dagoffload::sim::{evaluate_plan, SystemProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let kinds = [
        SchedulerKind::AllLocal,
        SchedulerKind::AllRemote,
        SchedulerKind::Random(5),
        SchedulerKind::Greedy,
        SchedulerKind::Heft,
        SchedulerKind::Oracle,
    ];
    let graphs = (0..10)
        .map(|seed| generate_dag(&GeneratorConfig { n: 14, seed, ..GeneratorConfig::default() }))
        .collect::<Result<Vec<_>, _>>()?;

    print!("{:>6}", "Mbps");
    for k in &kinds {
        print!("{:>12}", k.name());
    }
    println!();
    for rate in [4.0, 7.0, 8.5, 10.0, 11.5, 13.0, 16.0, 19.0, 22.0] {
        let profile = SystemProfile::reference(rate);
        print!("{rate:>6}");
        for kind in &kinds {
            let mut total = 0.0;
            for g in &graphs {
                let seq = compute_ranks(g, &profile);
                let plan = kind.plan(g, &seq, &profile)?;
                total += evaluate_plan(g, &seq, &plan, &profile)?.0;
            }
            print!("{:>12.2}", 1e3 * total / graphs.len() as f64);
        }
        println!();
    }
    println!("\nmean AL in ms over {} DAGs of 14 tasks", graphs.len());
    Ok(())
}
