//! Multi-seed experiments: learning curves, engagement and spammer sweeps,
//! and the point-estimate regret world. Results are normalized per seed by
//! the oracle's utility and exported as CSV plus a JSON summary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SocialGraph;
use crate::protocol::{build_world, regret, regret_demo_world, run_with_schedule, NewsSchedule, RunTrace, WorldConfig};
use crate::selection::PolicyKind;
use crate::usermodel::PopulationSpec;

pub const CSV_HEADER: [&str; 8] = ["experiment", "policy", "grid", "seed", "epoch", "util_cum", "util_avg", "util_norm"];
pub const REGRET_HEADER: [&str; 5] = ["experiment", "policy", "seed", "epoch", "regret"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LearningCurve,
    /// Grid values are engagement levels `1 - gamma`.
    EngagementSweep,
    /// Grid values are the share of good users; the rest are spammers.
    SpammerSweep,
    RegretDemo,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 4] = [
        ExperimentKind::LearningCurve,
        ExperimentKind::EngagementSweep,
        ExperimentKind::SpammerSweep,
        ExperimentKind::RegretDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::LearningCurve => "learning_curve",
            ExperimentKind::EngagementSweep => "engagement_sweep",
            ExperimentKind::SpammerSweep => "spammer_sweep",
            ExperimentKind::RegretDemo => "regret_demo",
        }
    }

    pub fn is_sweep(self) -> bool {
        matches!(self, ExperimentKind::EngagementSweep | ExperimentKind::SpammerSweep)
    }

    pub fn default_grid(self) -> Vec<f64> {
        match self {
            ExperimentKind::EngagementSweep => vec![0.0, 0.25, 0.5, 0.75, 1.0],
            ExperimentKind::SpammerSweep => vec![0.1, 0.3, 0.5, 0.7, 0.9],
            _ => Vec::new(),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub world: WorldConfig,
    pub policies: Vec<PolicyKind>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub grid: Vec<f64>,
    /// Accuracy margin of the known user in the regret world.
    #[serde(default = "default_epsilon")]
    pub regret_epsilon: f64,
    #[serde(default = "default_sources_per_side")]
    pub regret_sources_per_side: usize,
}

fn default_epsilon() -> f64 {
    0.05
}

fn default_sources_per_side() -> usize {
    20
}

impl ExperimentSpec {
    /// The standard setup for `kind`: T=100, k=5, M=25, equal thirds with
    /// full engagement, five seeds. The regret world runs 200 epochs over
    /// 20 seeds.
    pub fn standard(kind: ExperimentKind) -> Self {
        let (policies, seeds, epochs) = match kind {
            ExperimentKind::RegretDemo => (vec![PolicyKind::PointEstimate, PolicyKind::Detective], (1..=20).collect(), 200),
            _ => (
                vec![
                    PolicyKind::Oracle,
                    PolicyKind::Opt,
                    PolicyKind::Detective,
                    PolicyKind::FixedCm,
                    PolicyKind::NoLearn,
                    PolicyKind::Random,
                ],
                (1..=5).collect(),
                100,
            ),
        };
        ExperimentSpec {
            kind,
            world: WorldConfig { epochs, ..WorldConfig::default() },
            policies,
            seeds,
            grid: kind.default_grid(),
            regret_epsilon: default_epsilon(),
            regret_sources_per_side: default_sources_per_side(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("experiment needs at least one seed".into()));
        }
        if self.policies.is_empty() {
            return Err(Error::Config("experiment needs at least one policy".into()));
        }
        if self.kind.is_sweep() {
            if self.grid.is_empty() {
                return Err(Error::Config(format!("{} needs a non-empty grid", self.kind)));
            }
            if let Some(g) = self.grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
                return Err(Error::Config(format!("grid value {g} outside [0, 1]")));
            }
        } else if !self.grid.is_empty() {
            return Err(Error::Config(format!("{} takes no grid", self.kind)));
        }
        if !(self.regret_epsilon > 0.0 && self.regret_epsilon <= 0.5) {
            return Err(Error::Config(format!("regret_epsilon = {} outside (0, 0.5]", self.regret_epsilon)));
        }
        self.world.validate()
    }

    fn grid_points(&self) -> Vec<Option<f64>> {
        if self.kind.is_sweep() {
            self.grid.iter().map(|&g| Some(g)).collect()
        } else {
            vec![None]
        }
    }

    /// The world configuration at one grid point.
    pub fn world_at(&self, grid: Option<f64>) -> WorldConfig {
        let mut cfg = self.world.clone();
        match (self.kind, grid) {
            (ExperimentKind::EngagementSweep, Some(e)) => {
                for entry in &mut cfg.population.entries {
                    entry.gamma = 1.0 - e;
                }
            }
            (ExperimentKind::SpammerSweep, Some(g)) => {
                cfg.population = PopulationSpec::good_vs_spammers(g, 0.0);
            }
            _ => {}
        }
        cfg
    }

    /// The policy used as the per-seed reference.
    fn reference(&self) -> PolicyKind {
        match self.kind {
            ExperimentKind::RegretDemo => PolicyKind::Opt,
            _ => PolicyKind::Oracle,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Unbiased estimate; zero with fewer than two samples.
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Option<Stat> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Stat { mean, std, n })
    }
}

/// One (policy, grid point, seed, epoch) measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRow {
    pub policy: PolicyKind,
    pub grid: Option<f64>,
    pub seed: u64,
    pub epoch: u32,
    pub util_cum: u64,
    pub util_avg: f64,
    /// `None` when the oracle has no utility yet at this epoch.
    pub util_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretRow {
    pub policy: PolicyKind,
    pub seed: u64,
    pub epoch: u32,
    pub regret: f64,
}

/// Mean and spread over seeds at one (policy, grid point, epoch).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryPoint {
    pub policy: PolicyKind,
    pub grid: Option<f64>,
    pub epoch: u32,
    pub util_cum: Stat,
    pub util_avg: Stat,
    pub util_norm: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateResult {
    pub spec: ExperimentSpec,
    pub rows: Vec<SeedRow>,
    pub summary: Vec<SummaryPoint>,
    pub regret: Vec<RegretRow>,
    /// (grid point, seed) pairs whose reference run earned nothing; their
    /// rows carry no normalized value.
    pub unnormalized: Vec<(Option<f64>, u64)>,
}

impl AggregateResult {
    pub fn point(&self, policy: PolicyKind, grid: Option<f64>, epoch: u32) -> Option<&SummaryPoint> {
        self.summary.iter().find(|p| p.policy == policy && p.grid == grid && p.epoch == epoch)
    }

    /// Mean normalized utility over seeds.
    pub fn normalized(&self, policy: PolicyKind, grid: Option<f64>, epoch: u32) -> Option<f64> {
        self.point(policy, grid, epoch)?.util_norm.map(|s| s.mean)
    }

    pub fn final_epoch(&self) -> u32 {
        self.spec.world.epochs
    }

    /// Mean regret over seeds at `epoch`.
    pub fn mean_regret(&self, policy: PolicyKind, epoch: u32) -> Option<f64> {
        let xs: Vec<f64> =
            self.regret.iter().filter(|r| r.policy == policy && r.epoch == epoch).map(|r| r.regret).collect();
        Stat::of(&xs).map(|s| s.mean)
    }
}

struct Cell {
    grid_index: usize,
    seed_index: usize,
    policy: PolicyKind,
}

/// Runs every (grid point, seed, policy) cell on at most `jobs` threads.
/// `graph` is required except for the regret world, which builds its own.
pub fn run_experiment(spec: &ExperimentSpec, graph: Option<Arc<SocialGraph>>, jobs: usize) -> Result<AggregateResult> {
    spec.validate()?;
    let (graph, base) = match spec.kind {
        ExperimentKind::RegretDemo => {
            let (g, cfg) = regret_demo_world(spec.regret_sources_per_side, spec.regret_epsilon, spec.world.epochs)?;
            (Arc::new(g), WorldConfig { value_noise: spec.world.value_noise, ..cfg })
        }
        _ => {
            let g = graph.ok_or_else(|| Error::Config(format!("{} needs a social graph", spec.kind)))?;
            (g, spec.world.clone())
        }
    };
    let mut spec = spec.clone();
    if spec.kind == ExperimentKind::RegretDemo {
        spec.world = base.clone();
    }
    let grid = spec.grid_points();
    let reference = spec.reference();
    let mut policies = spec.policies.clone();
    if !policies.contains(&reference) {
        policies.push(reference);
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    pool.install(|| {
        // News depend on the seed only, so every grid point and policy
        // shares one schedule per seed.
        let schedules: Vec<NewsSchedule> = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                let world = build_world(graph.clone(), &spec.world_at(grid[0]), seed)?;
                NewsSchedule::generate(&world)
            })
            .collect::<Result<_>>()?;

        let cells: Vec<Cell> = (0..grid.len())
            .flat_map(|gi| {
                let policies = &policies;
                (0..spec.seeds.len())
                    .flat_map(move |si| policies.iter().map(move |&p| Cell { grid_index: gi, seed_index: si, policy: p }))
            })
            .collect();
        let traces: Vec<RunTrace> = cells
            .par_iter()
            .map(|c| {
                let seed = spec.seeds[c.seed_index];
                let world = build_world(graph.clone(), &spec.world_at(grid[c.grid_index]), seed)?;
                run_with_schedule(&world, &schedules[c.seed_index], c.policy)
            })
            .collect::<Result<_>>()?;
        aggregate(spec.clone(), &grid, &cells, &traces, reference)
    })
}

/// Per-epoch rows of one run, normalized by `reference` from the same seed.
pub fn seed_rows(trace: &RunTrace, reference: &RunTrace, grid: Option<f64>) -> Result<Vec<SeedRow>> {
    if trace.epochs.len() != reference.epochs.len() {
        return Err(Error::Contract("trace and reference cover different epochs".into()));
    }
    Ok(trace
        .cumulative()
        .into_iter()
        .zip(reference.cumulative())
        .enumerate()
        .map(|(t, (cum, r))| SeedRow {
            policy: trace.policy,
            grid,
            seed: trace.seed,
            epoch: t as u32 + 1,
            util_cum: cum,
            util_avg: cum as f64 / (t + 1) as f64,
            util_norm: (r > 0).then(|| cum as f64 / r as f64),
        })
        .collect())
}

fn aggregate(
    spec: ExperimentSpec,
    grid: &[Option<f64>],
    cells: &[Cell],
    traces: &[RunTrace],
    reference: PolicyKind,
) -> Result<AggregateResult> {
    let trace_of = |gi: usize, si: usize, p: PolicyKind| -> &RunTrace {
        let pos = cells
            .iter()
            .position(|c| c.grid_index == gi && c.seed_index == si && c.policy == p)
            .expect("every cell was run");
        &traces[pos]
    };
    let epochs = spec.world.epochs;

    let mut rows = Vec::new();
    let mut regret_rows = Vec::new();
    let mut unnormalized = Vec::new();
    for &policy in &spec.policies {
        for (gi, &g) in grid.iter().enumerate() {
            for (si, &seed) in spec.seeds.iter().enumerate() {
                let mine = trace_of(gi, si, policy);
                rows.extend(seed_rows(mine, trace_of(gi, si, reference), g)?);
                if spec.kind == ExperimentKind::RegretDemo {
                    let reg = regret(trace_of(gi, si, PolicyKind::Opt), mine)?;
                    regret_rows.extend(
                        reg.into_iter().enumerate().map(|(t, regret)| RegretRow { policy, seed, epoch: t as u32 + 1, regret }),
                    );
                }
            }
        }
    }
    for (gi, &g) in grid.iter().enumerate() {
        for (si, &seed) in spec.seeds.iter().enumerate() {
            if trace_of(gi, si, reference).final_utility() == 0 {
                unnormalized.push((g, seed));
            }
        }
    }

    let per_point = spec.seeds.len() * epochs as usize;
    let mut summary = Vec::new();
    for chunk in rows.chunks(per_point) {
        for epoch in 1..=epochs {
            let at: Vec<&SeedRow> = chunk.iter().filter(|r| r.epoch == epoch).collect();
            let cum: Vec<f64> = at.iter().map(|r| r.util_cum as f64).collect();
            let avg: Vec<f64> = at.iter().map(|r| r.util_avg).collect();
            let norm: Vec<f64> = at.iter().filter_map(|r| r.util_norm).collect();
            summary.push(SummaryPoint {
                policy: chunk[0].policy,
                grid: chunk[0].grid,
                epoch,
                util_cum: Stat::of(&cum).expect("non-empty seed list"),
                util_avg: Stat::of(&avg).expect("non-empty seed list"),
                util_norm: Stat::of(&norm),
            });
        }
    }

    Ok(AggregateResult { spec, rows, summary, regret: regret_rows, unnormalized })
}

fn grid_label(g: Option<f64>) -> String {
    g.map_or_else(|| "na".to_string(), |g| g.to_string())
}

fn write_csv<P: AsRef<Path>>(path: P, header: &[&str], records: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(header)?;
    for rec in records {
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes rows under [`CSV_HEADER`], tagging each with `experiment`.
pub fn write_seed_rows(path: &Path, experiment: &str, rows: &[SeedRow]) -> Result<()> {
    write_csv(
        path,
        &CSV_HEADER,
        rows.iter().map(|row| {
            vec![
                experiment.to_string(),
                row.policy.to_string(),
                grid_label(row.grid),
                row.seed.to_string(),
                row.epoch.to_string(),
                row.util_cum.to_string(),
                row.util_avg.to_string(),
                row.util_norm.map_or_else(String::new, |v| v.to_string()),
            ]
        }),
    )
}

#[derive(Serialize)]
struct PolicySummary {
    policy: PolicyKind,
    grid: Option<f64>,
    epoch: u32,
    util_norm: Option<Stat>,
    util_cum: Stat,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: ExperimentKind,
    version: &'static str,
    spec: &'a ExperimentSpec,
    final_results: Vec<PolicySummary>,
    unnormalized: &'a [(Option<f64>, u64)],
}

/// Writes `<kind>.csv`, `<kind>_summary.json` and, for the regret world,
/// `<kind>_regret.csv` into `out`. Returns the written paths.
pub fn write_results(r: &AggregateResult, out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let name = r.spec.kind.name();
    let mut written = Vec::new();

    let csv_path = out.join(format!("{name}.csv"));
    write_seed_rows(&csv_path, name, &r.rows)?;
    written.push(csv_path);

    if r.spec.kind == ExperimentKind::RegretDemo {
        let path = out.join(format!("{name}_regret.csv"));
        write_csv(
            &path,
            &REGRET_HEADER,
            r.regret.iter().map(|row| {
                vec![
                    name.to_string(),
                    row.policy.to_string(),
                    row.seed.to_string(),
                    row.epoch.to_string(),
                    row.regret.to_string(),
                ]
            }),
        )?;
        written.push(path);
    }

    let final_epoch = r.final_epoch();
    let summary = Summary {
        experiment: r.spec.kind,
        version: env!("CARGO_PKG_VERSION"),
        spec: &r.spec,
        final_results: r
            .summary
            .iter()
            .filter(|p| p.epoch == final_epoch)
            .map(|p| PolicySummary { policy: p.policy, grid: p.grid, epoch: p.epoch, util_norm: p.util_norm, util_cum: p.util_cum })
            .collect(),
        unnormalized: &r.unnormalized,
    };
    let json_path = out.join(format!("{name}_summary.json"));
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    written.push(json_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synthetic_graph, SyntheticKind};

    fn graph() -> Arc<SocialGraph> {
        Arc::new(synthetic_graph(SyntheticKind::ErdosRenyi, 200, 0.04, 1).unwrap())
    }

    fn small(kind: ExperimentKind) -> ExperimentSpec {
        let mut spec = ExperimentSpec::standard(kind);
        spec.world.epochs = 8;
        spec.world.sources_per_epoch = 6;
        spec.world.budget = 2;
        spec.seeds = vec![1, 2];
        spec
    }

    #[test]
    fn stat_uses_unbiased_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[7.0]).unwrap().std, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn oracle_alone_normalizes_to_one() {
        let mut spec = small(ExperimentKind::LearningCurve);
        spec.policies = vec![PolicyKind::Oracle];
        let r = run_experiment(&spec, Some(graph()), 1).unwrap();
        assert_eq!(r.rows.len(), 2 * 8);
        for row in &r.rows {
            if row.util_cum > 0 {
                assert_eq!(row.util_norm, Some(1.0));
            }
        }
        for p in &r.summary {
            if let Some(s) = p.util_norm {
                assert_eq!(s.mean, 1.0);
            }
        }
    }

    #[test]
    fn row_count_and_order() {
        let spec = small(ExperimentKind::EngagementSweep);
        let r = run_experiment(&spec, Some(graph()), 1).unwrap();
        assert_eq!(r.rows.len(), 6 * 5 * 2 * 8);
        assert_eq!(r.rows[0].policy, PolicyKind::Oracle);
        assert_eq!(r.rows[0].grid, Some(0.0));
        assert_eq!(r.summary.len(), 6 * 5 * 8);
    }

    #[test]
    fn common_random_numbers_across_grid() {
        // The oracle ignores flags, so its trace is identical at every grid point.
        let spec = small(ExperimentKind::SpammerSweep);
        let r = run_experiment(&spec, Some(graph()), 1).unwrap();
        let oracle_at = |g: f64| -> Vec<u64> {
            r.rows.iter().filter(|row| row.policy == PolicyKind::Oracle && row.grid == Some(g)).map(|row| row.util_cum).collect()
        };
        assert_eq!(oracle_at(0.1), oracle_at(0.9));
    }

    #[test]
    fn parallel_runs_match_serial() {
        let spec = small(ExperimentKind::LearningCurve);
        let a = run_experiment(&spec, Some(graph()), 1).unwrap();
        let b = run_experiment(&spec, Some(graph()), 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn csv_header_and_reproducibility() {
        let spec = small(ExperimentKind::LearningCurve);
        let r = run_experiment(&spec, Some(graph()), 2).unwrap();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        write_results(&r, d1.path()).unwrap();
        let again = run_experiment(&spec, Some(graph()), 1).unwrap();
        write_results(&again, d2.path()).unwrap();
        let a = fs::read_to_string(d1.path().join("learning_curve.csv")).unwrap();
        let b = fs::read_to_string(d2.path().join("learning_curve.csv")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.lines().next().unwrap(), "experiment,policy,grid,seed,epoch,util_cum,util_avg,util_norm");
        assert_eq!(a.lines().count(), 1 + 6 * 2 * 8);
        assert!(d1.path().join("learning_curve_summary.json").exists());
    }

    #[test]
    fn empty_result_writes_header_only() {
        let spec = small(ExperimentKind::LearningCurve);
        let r = AggregateResult { spec, rows: vec![], summary: vec![], regret: vec![], unnormalized: vec![] };
        let d = tempfile::tempdir().unwrap();
        write_results(&r, d.path()).unwrap();
        let text = fs::read_to_string(d.path().join("learning_curve.csv")).unwrap();
        assert_eq!(text, "experiment,policy,grid,seed,epoch,util_cum,util_avg,util_norm\n");
    }

    #[test]
    fn regret_world_writes_regret_csv() {
        let mut spec = ExperimentSpec::standard(ExperimentKind::RegretDemo);
        spec.world.epochs = 10;
        spec.seeds = vec![1, 2, 3];
        let r = run_experiment(&spec, None, 1).unwrap();
        assert_eq!(r.regret.len(), 2 * 3 * 10);
        let d = tempfile::tempdir().unwrap();
        let files = write_results(&r, d.path()).unwrap();
        assert!(files.iter().any(|p| p.ends_with("regret_demo_regret.csv")));
    }

    #[test]
    fn invalid_specs() {
        let mut spec = small(ExperimentKind::LearningCurve);
        spec.seeds.clear();
        assert!(run_experiment(&spec, Some(graph()), 1).is_err());
        let mut spec = small(ExperimentKind::SpammerSweep);
        spec.grid = vec![1.5];
        assert!(spec.validate().is_err());
        let spec = small(ExperimentKind::LearningCurve);
        assert!(run_experiment(&spec, None, 1).is_err());
        assert_eq!("spammer_sweep".parse::<ExperimentKind>().unwrap(), ExperimentKind::SpammerSweep);
        assert!("nope".parse::<ExperimentKind>().is_err());
    }
}
