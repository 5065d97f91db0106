//! Benchmark runs and the success-rate report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{randomize_scenario, FailureCategory, Scenario, ScenarioError, TaskKind, TaskSpec};
use crate::backends::{Backend, BackendError};
use crate::engine::{write_trial_logs, Engine, EngineConfig, Mode, TrialLog, TrialResult};
use crate::memory::LongTermStore;
use crate::skills::SkillRegistry;
use crate::world::WorldConfig;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub tasks: Vec<TaskKind>,
    /// Seeds per task; every seed runs once per phrasing.
    pub trials: usize,
    pub seed: u64,
    /// Buildings cycled through by seed.
    pub buildings: Vec<WorldConfig>,
    pub engine: EngineConfig,
    pub phrasings: usize,
}

impl BenchConfig {
    pub fn new(tasks: Vec<TaskKind>, trials: usize, seed: u64, buildings: Vec<WorldConfig>) -> Self {
        Self { tasks, trials, seed, buildings, engine: EngineConfig::default(), phrasings: 3 }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("no building supports task {0}")]
    NoBuilding(TaskKind),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("{trial}: {source}")]
    Backend { trial: String, source: BackendError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// One planned trial.
#[derive(Debug, Clone)]
pub struct PlannedTrial {
    pub spec: TaskSpec,
    pub scenario: Scenario,
}

pub fn trial_dir_name(spec: &TaskSpec) -> String {
    format!("{}_s{}_p{}", spec.task_id, spec.seed, spec.phrasing)
}

fn supports(cfg: &WorldConfig, task: TaskKind) -> bool {
    task != TaskKind::RearrangeChairs
        || cfg.randomization.as_ref().is_some_and(|r| r.reception.is_some())
}

/// Expands tasks × seeds × phrasings into concrete trials.
pub fn plan_trials(cfg: &BenchConfig) -> Result<Vec<PlannedTrial>, BenchError> {
    if cfg.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let mut out = Vec::new();
    for &task in &cfg.tasks {
        let buildings: Vec<&WorldConfig> = cfg.buildings.iter().filter(|b| supports(b, task)).collect();
        if buildings.is_empty() {
            return Err(BenchError::NoBuilding(task));
        }
        for i in 0..cfg.trials {
            let seed = cfg.seed + i as u64;
            let scenario = randomize_scenario(buildings[i % buildings.len()], task, seed)?;
            for phrasing in 0..cfg.phrasings.min(3) {
                let spec = scenario.task_spec(phrasing).map_err(ScenarioError::from)?;
                out.push(PlannedTrial { spec, scenario: scenario.clone() });
            }
        }
    }
    Ok(out)
}

pub struct BenchOutput {
    pub results: Vec<TrialResult>,
    pub report: Report,
}

/// Runs every planned trial, in parallel, each with the backend `factory`
/// returns for it. Logs go to `out/<trial>/` when `out` is set.
pub fn run_benchmark<F>(
    cfg: &BenchConfig,
    registry: &SkillRegistry,
    ltm: Option<&LongTermStore>,
    factory: F,
    out: Option<&Path>,
) -> Result<BenchOutput, BenchError>
where
    F: Fn(&TaskSpec) -> Result<Box<dyn Backend>, BackendError> + Sync,
{
    let planned = plan_trials(cfg)?;
    let runs: Vec<Result<(TrialResult, TrialLog), BenchError>> = planned
        .par_iter()
        .map(|p| {
            let name = trial_dir_name(&p.spec);
            let backend = factory(&p.spec).map_err(|source| BenchError::Backend { trial: name.clone(), source })?;
            let engine = Engine::new(&cfg.engine, backend.as_ref(), registry).with_ltm(ltm);
            let world = p.scenario.world().map_err(ScenarioError::from)?;
            let (result, log) = engine.run_trial(&p.spec, world);
            if let Some(dir) = out {
                let dir = dir.join(&name);
                write_trial_logs(&dir, &result, &log)?;
                std::fs::write(dir.join("scenario.json"), p.scenario.to_json())?;
            }
            Ok((result, log))
        })
        .collect();
    let mut results = Vec::with_capacity(runs.len());
    for r in runs {
        results.push(r?.0);
    }
    let report = Report::from_results(&results);
    if let Some(dir) = out {
        std::fs::write(dir.join("report.txt"), report.render_text())?;
        std::fs::write(dir.join("report.csv"), report.render_csv())?;
    }
    Ok(BenchOutput { results, report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task: String,
    pub mode: Mode,
    pub trials: usize,
    pub successes: usize,
    /// Mean of the per-phrasing success rates, percent.
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<TaskRow>,
    /// Mean of the task rates per mode, percent.
    pub overall: BTreeMap<Mode, f64>,
    pub failures: usize,
    pub categories: BTreeMap<FailureCategory, usize>,
}

pub fn percent(successes: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * successes as f64 / total as f64
    }
}

impl Report {
    pub fn from_results(results: &[TrialResult]) -> Self {
        // (task, mode) -> phrasing -> (successes, trials)
        let mut groups: BTreeMap<(String, Mode), BTreeMap<usize, (usize, usize)>> = BTreeMap::new();
        let mut categories: BTreeMap<FailureCategory, usize> =
            FailureCategory::FAILURES.iter().map(|c| (*c, 0)).collect();
        let mut failures = 0;
        for r in results {
            let e = groups.entry((r.task_id.clone(), r.mode)).or_default().entry(r.phrasing).or_default();
            e.1 += 1;
            if r.success {
                e.0 += 1;
            } else {
                failures += 1;
                *categories.entry(r.category).or_default() += 1;
            }
        }
        let rows: Vec<TaskRow> = groups
            .into_iter()
            .map(|((task, mode), by_phrasing)| {
                let rates: Vec<f64> = by_phrasing.values().map(|(s, n)| percent(*s, *n)).collect();
                TaskRow {
                    task,
                    mode,
                    trials: by_phrasing.values().map(|(_, n)| n).sum(),
                    successes: by_phrasing.values().map(|(s, _)| s).sum(),
                    rate: rates.iter().sum::<f64>() / rates.len() as f64,
                }
            })
            .collect();
        let mut overall: BTreeMap<Mode, Vec<f64>> = BTreeMap::new();
        for row in &rows {
            overall.entry(row.mode).or_default().push(row.rate);
        }
        let overall = overall.into_iter().map(|(m, v)| (m, v.iter().sum::<f64>() / v.len() as f64)).collect();
        Self { rows, overall, failures, categories }
    }

    pub fn render_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{:<18} {:<14} {:>7} {:>9} {:>8}", "task", "mode", "trials", "successes", "rate").unwrap();
        for r in &self.rows {
            writeln!(s, "{:<18} {:<14} {:>7} {:>9} {:>7.1}%", r.task, r.mode.as_str(), r.trials, r.successes, r.rate)
                .unwrap();
        }
        for (m, rate) in &self.overall {
            writeln!(s, "{:<18} {:<14} {:>7} {:>9} {:>7.1}%", "overall", m.as_str(), "", "", rate).unwrap();
        }
        writeln!(s, "\nfailures: {}", self.failures).unwrap();
        for (c, n) in &self.categories {
            writeln!(s, "  {:<20} {n}", c.as_str()).unwrap();
        }
        s
    }

    pub fn render_csv(&self) -> String {
        let mut s = String::from("task,mode,trials,successes,rate\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{},{:.1}", r.task, r.mode.as_str(), r.trials, r.successes, r.rate).unwrap();
        }
        for (m, rate) in &self.overall {
            writeln!(s, "overall,{},,,{rate:.1}", m.as_str()).unwrap();
        }
        s.push_str("\ncategory,count\n");
        for (c, n) in &self.categories {
            writeln!(s, "{},{n}", c.as_str()).unwrap();
        }
        s
    }
}

/// Reads every `result.json` below `dir`, in path order.
pub fn load_results(dir: &Path) -> std::io::Result<Vec<TrialResult>> {
    let mut paths = Vec::new();
    collect(dir, &mut paths)?;
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)?;
            serde_json::from_str(&text)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {e}", p.display())))
        })
        .collect()
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "result.json") {
            out.push(path);
        }
    }
    Ok(())
}
