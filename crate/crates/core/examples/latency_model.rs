//! Closed-form task times and the four-resource schedule of a small DAG.

use dagoffload::dag::{compute_ranks, Task, TaskGraph};
use dagoffload::sim::{evaluate_plan, task_times, OffloadingPlan, SystemProfile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let profile = SystemProfile::reference(8.5);
    let t = task_times(&Task { id: 0, cycles: 1e7, data_up: 5e3, data_do: 5e3 }, &profile);
    println!("1e7 cycles, 5 KB each way at 8.5 Mbps:");
    println!("  local {:.3} ms, upload {:.3} ms, edge {:.3} ms, download {:.3} ms", t.local * 1e3, t.upload * 1e3, t.edge * 1e3, t.download * 1e3);

    // 0 fans out to 1 and 2, which join in 3
    let tasks = vec![
        Task { id: 0, cycles: 2e7, data_up: 2e4, data_do: 1e4 },
        Task { id: 1, cycles: 8e7, data_up: 1e4, data_do: 5e3 },
        Task { id: 2, cycles: 3e7, data_up: 3e4, data_do: 2e4 },
        Task { id: 3, cycles: 1e7, data_up: 5e3, data_do: 5e3 },
    ];
    let graph = TaskGraph::new(tasks, vec![(0, 1), (0, 2), (1, 3), (2, 3)])?;
    let seq = compute_ranks(&graph, &profile);
    println!("\nrank order {:?}", seq.order);

    for bits in ["0000", "1111", "0100", "0110"] {
        let plan: OffloadingPlan = bits.parse()?;
        let (latency, schedule) = evaluate_plan(&graph, &seq, &plan, &profile)?;
        println!("plan {bits}: AL {:.3} ms", latency * 1e3);
        for &task in &seq.order {
            let s = &schedule.slots[task];
            println!(
                "  task {task}: device [{:.2}, {:.2}] uplink [{:.2}, {:.2}] edge [{:.2}, {:.2}] downlink [{:.2}, {:.2}]",
                s.st_ud * 1e3, s.ft_ud * 1e3, s.st_up * 1e3, s.ft_up * 1e3, s.st_ec * 1e3, s.ft_ec * 1e3, s.st_do * 1e3, s.ft_do * 1e3
            );
        }
    }
    Ok(())
}
