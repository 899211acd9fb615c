use std::fs;
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use detective::experiments::{run_experiment, seed_rows, write_results, write_seed_rows, ExperimentKind};
use detective::graph::load_edge_list_file;
use detective::protocol::{build_world, regret_demo_world, run_with_schedule, NewsSchedule};
use detective::{Error, PolicyKind, RunTrace, SocialGraph, WorldConfig};
use rayon::prelude::*;

use crate::config::RunConfig;

pub enum Failure {
    /// Bad usage, config or input file: exit 2.
    Config(anyhow::Error),
    /// Anything that went wrong after the inputs were accepted: exit 1.
    Runtime(anyhow::Error),
}

impl Failure {
    fn from_core(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::UserOutOfRange { .. } | Error::Parse { .. } | Error::EmptyGraph => {
                Failure::Config(e.into())
            }
            other => Failure::Runtime(other.into()),
        }
    }
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load_graph(cfg: &RunConfig) -> Result<Arc<SocialGraph>, Failure> {
    let path = cfg.graph.as_ref().ok_or_else(|| Failure::Config(anyhow!("no graph file given (use --graph)")))?;
    let (graph, report) = load_edge_list_file(path).map_err(|e| match e {
        Error::Io { source, .. } => Failure::Config(anyhow!("cannot read graph {}: {source}", path.display())),
        other => Failure::Config(anyhow!("graph {}: {other}", path.display())),
    })?;
    eprintln!(
        "graph {}: {} nodes, {} edges ({} self-loops, {} duplicate edges dropped)",
        path.display(),
        graph.node_count(),
        graph.edge_count(),
        report.self_loops_dropped,
        report.duplicate_edges
    );
    Ok(Arc::new(graph))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(runtime)
}

fn write_resolved(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display())).map_err(runtime)?;
    let path = out.join("config.resolved.toml");
    let text = cfg.to_toml().map_err(runtime)?;
    fs::write(&path, text).with_context(|| format!("cannot write {}", path.display())).map_err(runtime)
}

/// The graph and world settings a single run plays on.
fn run_world(cfg: &RunConfig) -> Result<(Arc<SocialGraph>, WorldConfig), Failure> {
    if cfg.experiment.kind == ExperimentKind::RegretDemo {
        let e = &cfg.experiment;
        let (g, mut w) = regret_demo_world(e.regret_sources_per_side, e.regret_epsilon, cfg.world.epochs)
            .map_err(Failure::from_core)?;
        w.value_noise = cfg.world.value_noise;
        Ok((Arc::new(g), w))
    } else {
        Ok((load_graph(cfg)?, cfg.world.clone()))
    }
}

pub fn run(cfg: &RunConfig) -> Result<(), Failure> {
    let (graph, world_cfg) = run_world(cfg)?;
    let world = build_world(graph, &world_cfg, cfg.seed).map_err(Failure::from_core)?;
    let schedule = NewsSchedule::generate(&world).map_err(Failure::from_core)?;

    let reference = if cfg.experiment.kind == ExperimentKind::RegretDemo { PolicyKind::Opt } else { PolicyKind::Oracle };
    let mut policies = cfg.experiment.policies.clone();
    if policies.is_empty() {
        return Err(Failure::Config(anyhow!("no policies configured")));
    }
    if !policies.contains(&reference) {
        policies.push(reference);
    }
    let traces: Vec<RunTrace> = pool(cfg.jobs)?
        .install(|| policies.par_iter().map(|&p| run_with_schedule(&world, &schedule, p)).collect::<Result<_, _>>())
        .map_err(Failure::from_core)?;
    let reference_trace = &traces[policies.iter().position(|&p| p == reference).expect("reference was added")];

    let out = &cfg.out;
    write_resolved(cfg, out)?;
    // Where results go and how many threads made them do not change them.
    let mut config_json = serde_json::to_value(cfg).map_err(runtime)?;
    if let Some(fields) = config_json.as_object_mut() {
        fields.remove("jobs");
        fields.remove("out");
    }
    let mut rows = Vec::new();
    println!("{:<16} {:>14} {:>10}", "policy", "utility", "normalized");
    for trace in traces.iter().take(cfg.experiment.policies.len()) {
        let path = out.join(format!("trace_{}.jsonl", trace.policy));
        let file = fs::File::create(&path).with_context(|| format!("cannot create {}", path.display())).map_err(runtime)?;
        trace.write_jsonl(BufWriter::new(file), &config_json).map_err(runtime)?;
        let mine = seed_rows(trace, reference_trace, None).map_err(runtime)?;
        let norm = mine.last().and_then(|r| r.util_norm).map_or_else(|| "n/a".to_string(), |v| format!("{v:.4}"));
        println!("{:<16} {:>14} {:>10}", trace.policy.name(), trace.final_utility(), norm);
        rows.extend(mine);
    }
    write_seed_rows(&out.join("run.csv"), "run", &rows).map_err(runtime)?;
    Ok(())
}

pub fn sweep(cfg: &RunConfig) -> Result<(), Failure> {
    let spec = cfg.experiment_spec();
    spec.validate().map_err(Failure::from_core)?;
    let graph = if spec.kind == ExperimentKind::RegretDemo { None } else { Some(load_graph(cfg)?) };
    let result = run_experiment(&spec, graph, cfg.jobs).map_err(Failure::from_core)?;

    write_resolved(cfg, &cfg.out)?;
    let files = write_results(&result, &cfg.out).map_err(runtime)?;

    let last = result.final_epoch();
    println!("{:<16} {:>8} {:>10} {:>8}", "policy", "grid", "normalized", "std");
    for p in result.summary.iter().filter(|p| p.epoch == last && spec.policies.contains(&p.policy)) {
        let grid = p.grid.map_or_else(|| "na".to_string(), |g| g.to_string());
        match p.util_norm {
            Some(s) => println!("{:<16} {:>8} {:>10.4} {:>8.4}", p.policy.name(), grid, s.mean, s.std),
            None => println!("{:<16} {:>8} {:>10} {:>8}", p.policy.name(), grid, "n/a", "n/a"),
        }
    }
    if spec.kind == ExperimentKind::RegretDemo {
        for &p in &spec.policies {
            if let Some(r) = result.mean_regret(p, last) {
                println!("{:<16} mean regret at epoch {last}: {r:.1}", p.name());
            }
        }
    }
    for (grid, seed) in &result.unnormalized {
        eprintln!("warning: reference earned nothing at grid {grid:?}, seed {seed}; rows left unnormalized");
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    Ok(())
}
