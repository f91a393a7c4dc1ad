use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use dagoffload::baselines::{oracle_schedule, SchedulerKind, DEFAULT_ORACLE_CAP};
use dagoffload::dag::{compute_ranks, TaskGraph};
use dagoffload::generator::{generate_dataset, DatasetManifest};
use dagoffload::harness::{
    init_threads, io_err, load_dataset, load_policy, resolve_out_dir, run_benchmark, run_paper_protocol,
    run_training, write_report, Algorithm, BenchmarkSpec, ExperimentConfig, HarnessError, Profile, ProtocolSettings,
};
use dagoffload::sim::{evaluate_plan, OffloadingPlan, SystemProfile};

#[derive(Parser)]
#[command(name = "dagoffload", version, about = "DAG task offloading between a device and an edge server")]
struct Cli {
    /// Worker threads (also OFFLOAD_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Rates {
    /// Uplink rate, Mbps.
    #[arg(long, default_value_t = 10.0)]
    rate_up: f64,
    /// Downlink rate, Mbps.
    #[arg(long, default_value_t = 10.0)]
    rate_do: f64,
}

impl Rates {
    fn profile(&self) -> Result<SystemProfile, HarnessError> {
        let r = SystemProfile::reference(10.0);
        Ok(SystemProfile::new(r.device_speed, r.edge_total, r.users, self.rate_up * 1e6, self.rate_do * 1e6)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset directory from a manifest, or the 25-set protocol dataset.
    Generate {
        #[arg(long, conflicts_with = "protocol")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        protocol: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        dags: usize,
        #[arg(long, default_value_t = 20)]
        tasks: usize,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
    /// Evaluate a plan, or a baseline scheduler's plan, on one DAG.
    Schedule {
        #[arg(long)]
        dag: PathBuf,
        /// Bit string in rank order (1 = offload) or a scheduler name.
        #[arg(long, alias = "algorithm", default_value = "heft")]
        plan: String,
        #[command(flatten)]
        rates: Rates,
    },
    /// Exhaustive optimum for one DAG.
    Oracle {
        #[arg(long)]
        dag: PathBuf,
        #[command(flatten)]
        rates: Rates,
        #[arg(long, default_value_t = DEFAULT_ORACLE_CAP)]
        cap: usize,
    },
    /// Train a policy on the training split.
    Train {
        #[arg(long, conflicts_with = "dataset")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8.5,11.5")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        trajectories: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Sweep algorithms and rates over a dataset.
    Benchmark {
        #[arg(long)]
        config: PathBuf,
    },
    /// Runs the 25-set protocol end to end.
    PaperProtocol {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "toy")]
        profile: Profile,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, default_value = "protocol")]
        out: PathBuf,
    },
}

fn read_dag(path: &Path) -> Result<TaskGraph, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(TaskGraph::from_json(&text)?)
}

fn plan_json(graph: &TaskGraph, profile: &SystemProfile, source: &str, plan: &OffloadingPlan) -> Result<serde_json::Value, HarnessError> {
    let seq = compute_ranks(graph, profile);
    let (latency, schedule) = evaluate_plan(graph, &seq, plan, profile)?;
    let ms = |x: f64| x * 1e3;
    let tasks: Vec<serde_json::Value> = seq
        .order
        .iter()
        .zip(&plan.0)
        .map(|(&task, decision)| {
            let s = &schedule.slots[task];
            json!({
                "task": task,
                "offload": decision.bit() == 1,
                "ft_ud_ms": ms(s.ft_ud),
                "ft_up_ms": ms(s.ft_up),
                "ft_ec_ms": ms(s.ft_ec),
                "ft_do_ms": ms(s.ft_do),
            })
        })
        .collect();
    Ok(json!({ "source": source, "plan": plan.to_string(), "AL_ms": ms(latency), "schedule": tasks }))
}

fn run(cli: Cli) -> Result<serde_json::Value, HarnessError> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Generate { manifest, protocol, seed, dags, tasks, out } => {
            let manifest = match (manifest, protocol) {
                (Some(path), _) => DatasetManifest::load(&path)?,
                (None, true) => DatasetManifest::paper_protocol(seed, dags, tasks),
                (None, false) => return Err(HarnessError::Config("pass --manifest <file> or --protocol".into())),
            };
            let out = resolve_out_dir(&out);
            let written = generate_dataset(&manifest, &out)?;
            Ok(json!({ "out": out, "dags": written }))
        }
        Command::Schedule { dag, plan, rates } => {
            let graph = read_dag(&dag)?;
            let profile = rates.profile()?;
            if !plan.is_empty() && plan.chars().all(|c| c == '0' || c == '1') {
                let bits: OffloadingPlan = plan.parse()?;
                return plan_json(&graph, &profile, "bits", &bits);
            }
            let kind: SchedulerKind = plan.parse()?;
            let seq = compute_ranks(&graph, &profile);
            let chosen = kind.plan(&graph, &seq, &profile)?;
            plan_json(&graph, &profile, &kind.name(), &chosen)
        }
        Command::Oracle { dag, rates, cap } => {
            let graph = read_dag(&dag)?;
            let profile = rates.profile()?;
            let seq = compute_ranks(&graph, &profile);
            let (plan, _) = oracle_schedule(&graph, &seq, &profile, cap)?;
            plan_json(&graph, &profile, "oracle", &plan)
        }
        Command::Train { manifest, dataset, config, out } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::load(&path)?,
                None => ExperimentConfig::default(),
            };
            if dataset.is_some() || manifest.is_some() {
                cfg.experiment.dataset = dataset;
                cfg.experiment.manifest = manifest;
            }
            let data = cfg.dataset()?;
            let out = resolve_out_dir(&out);
            let run = run_training(&data, cfg.policy, &cfg.train, &out)?;
            let last = run.metrics.last().map(|m| m.mean_al_ms);
            Ok(json!({ "checkpoint": run.checkpoint, "iterations": run.metrics.len(), "final_mean_AL_ms": last }))
        }
        Command::Eval { checkpoint, dataset, rates, trajectories, seed, out } => {
            let policy = load_policy(&checkpoint)?;
            let data = load_dataset(&dataset)?;
            let spec = BenchmarkSpec {
                set_ids: data.sets.iter().map(|(id, _)| *id).collect(),
                rates_mbps: rates.clone(),
                algorithms: vec![Algorithm::PolicyBest, Algorithm::PolicyMean],
                policy: Some(&policy),
                eval_trajectories: trajectories,
                seed,
                base_profile: SystemProfile::reference(10.0),
            };
            let rows = run_benchmark(&data, &spec)?;
            let out = resolve_out_dir(&out);
            write_report(&out, &rows, &rates)?;
            Ok(json!({ "out": out, "rows": rows.len() }))
        }
        Command::Benchmark { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            init_threads(cfg.experiment.threads)?;
            let data = cfg.dataset()?;
            let policy = cfg.experiment.checkpoint.as_deref().map(load_policy).transpose()?;
            let spec = BenchmarkSpec {
                set_ids: cfg.set_ids(&data),
                rates_mbps: cfg.experiment.rates_mbps.clone(),
                algorithms: cfg.algorithms()?,
                policy: policy.as_ref(),
                eval_trajectories: cfg.experiment.eval_trajectories,
                seed: cfg.experiment.seed,
                base_profile: SystemProfile::reference(10.0),
            };
            let rows = run_benchmark(&data, &spec)?;
            let out = resolve_out_dir(&cfg.experiment.out_dir);
            write_report(&out, &rows, &cfg.experiment.rates_mbps)?;
            Ok(json!({ "out": out, "rows": rows.len() }))
        }
        Command::PaperProtocol { seed, profile, iterations, out } => {
            let mut settings = ProtocolSettings::for_profile(profile, seed);
            if let Some(k) = iterations {
                settings.train.iterations = k;
            }
            let bundle = run_paper_protocol(seed, &settings, &resolve_out_dir(&out))?;
            Ok(json!({
                "dir": bundle.dir,
                "manifest": bundle.manifest,
                "checkpoint": bundle.checkpoint,
                "metrics": bundle.metrics,
                "report": bundle.report,
            }))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
