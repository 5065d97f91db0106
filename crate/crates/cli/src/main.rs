use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use moma_core::backends::{
    Backend, BackendError, HttpBackend, HttpConfig, LessonSensitiveOracle, OracleBackend, OracleErrorProfile,
    ReplayBackend,
};
use moma_core::engine::{EngineConfig, Mode};
use moma_core::harness::{
    generate_offline, load_dataset, load_results, run_benchmark, run_offline_eval, trial_dir_name,
    offline::to_jsonl, BenchConfig, Report, TaskKind,
};
use moma_core::memory::{curate_lessons, Annotation, LongTermStore, PredictionRecord, DEFAULT_LESSON_CAP};
use moma_core::skills::SkillRegistry;
use moma_core::world::WorldConfig;

const BUILTIN_BUILDINGS: [(&str, &str); 3] = [
    ("b1", include_str!("../../../scenarios/b1.json")),
    ("b2", include_str!("../../../scenarios/b2.json")),
    ("b3", include_str!("../../../scenarios/b3.json")),
];

#[derive(Parser)]
#[command(name = "moma", version, about = "Building-wide mobile manipulation benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run randomized benchmark trials and print the success-rate report.
    Run(RunArgs),
    /// Score an offline skill-parameter dataset.
    EvalOffline(EvalArgs),
    /// Generate an offline skill-parameter dataset as JSONL.
    GenOffline(GenArgs),
    /// Long-term memory maintenance.
    Memory {
        #[command(subcommand)]
        command: MemoryCommand,
    },
    /// Rebuild the report from logged trial results.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    Oracle,
    Lesson,
    Replay,
    Http,
}

#[derive(clap::Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    backend: BackendKind,
    /// JSON error profile for the oracle backend.
    #[arg(long)]
    error_profile: Option<PathBuf>,
    /// JSON endpoint config for the http backend.
    #[arg(long)]
    http_config: Option<PathBuf>,
    /// Directory of logged trials to replay, one subdirectory per trial.
    #[arg(long)]
    replay_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Task id, or `all`.
    #[arg(long, default_value = "all")]
    task: String,
    #[arg(long, default_value = "BUMBLE")]
    mode: Mode,
    #[command(flatten)]
    backend: BackendArgs,
    /// Seeds per task; each runs once per phrasing.
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    phrasings: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Building config files; defaults to the three bundled buildings.
    #[arg(long = "building")]
    buildings: Vec<PathBuf>,
    /// Long-term memory store to load.
    #[arg(long)]
    ltm: Option<PathBuf>,
    /// Log expert ground truth for every prediction.
    #[arg(long)]
    annotate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value = "BUMBLE")]
    mode: Mode,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    csv: bool,
}

#[derive(clap::Args)]
struct GenArgs {
    #[arg(long, default_value_t = 100)]
    per_row: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "building")]
    buildings: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum MemoryCommand {
    /// Turn annotated wrong predictions into a lesson store.
    Curate(CurateArgs),
}

#[derive(clap::Args)]
struct CurateArgs {
    /// Prediction log: a JSONL file or a run directory.
    #[arg(long)]
    log: PathBuf,
    /// Annotations: a JSONL file or a run directory.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LESSON_CAP)]
    cap: usize,
    /// Backend writing the analyses; `oracle` or `lesson` answer offline.
    #[arg(long, value_enum, default_value = "lesson")]
    backend: BackendKind,
    #[arg(long)]
    http_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    csv: bool,
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(a) => run(a),
        Command::EvalOffline(a) => eval_offline(a),
        Command::GenOffline(a) => gen_offline(a),
        Command::Memory { command: MemoryCommand::Curate(a) } => curate(a),
        Command::Report(a) => report(a),
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_buildings(paths: &[PathBuf]) -> Result<Vec<WorldConfig>> {
    if paths.is_empty() {
        return BUILTIN_BUILDINGS
            .iter()
            .map(|(name, text)| WorldConfig::from_json(text).with_context(|| format!("bundled building {name}")))
            .collect();
    }
    paths
        .iter()
        .map(|p| WorldConfig::from_json(&read(p)?).with_context(|| format!("building {}", p.display())))
        .collect()
}

fn parse_tasks(s: &str) -> Result<Vec<TaskKind>> {
    if s == "all" {
        return Ok(TaskKind::ALL.to_vec());
    }
    s.split(',').map(|t| t.trim().parse::<TaskKind>().map_err(anyhow::Error::msg)).collect()
}

/// Builds the shared backend for every kind except replay, which is per trial.
fn shared_backend(args: &BackendArgs, registry: &SkillRegistry) -> Result<Option<Arc<dyn Backend>>> {
    let names = registry.names();
    Ok(match args.backend {
        BackendKind::Oracle => {
            let profile = match &args.error_profile {
                Some(p) => serde_json::from_str::<OracleErrorProfile>(&read(p)?)
                    .with_context(|| format!("error profile {}", p.display()))?,
                None => OracleErrorProfile::default(),
            };
            Some(Arc::new(OracleBackend::new(profile, &names)?))
        }
        BackendKind::Lesson => Some(Arc::new(LessonSensitiveOracle::new(&names))),
        BackendKind::Http => Some(Arc::new(http_backend(args.http_config.as_deref())?)),
        BackendKind::Replay => None,
    })
}

fn http_backend(config: Option<&Path>) -> Result<HttpBackend> {
    let Some(path) = config else { bail!("--http-config is required for the http backend") };
    let cfg: HttpConfig = serde_json::from_str(&read(path)?).with_context(|| format!("http config {}", path.display()))?;
    Ok(HttpBackend::new(cfg)?)
}

fn run(a: RunArgs) -> Result<()> {
    let registry = SkillRegistry::builtin();
    let tasks = parse_tasks(&a.task)?;
    let buildings = load_buildings(&a.buildings)?;
    let ltm = a.ltm.as_deref().map(LongTermStore::load).transpose()?;
    let mut cfg = BenchConfig::new(tasks, a.trials, a.seed, buildings);
    cfg.phrasings = a.phrasings;
    cfg.engine = EngineConfig { mode: a.mode, annotate: a.annotate, ..EngineConfig::default() };
    if let Some(n) = a.max_steps {
        cfg.engine.max_steps = n;
    }
    if matches!(a.backend.backend, BackendKind::Replay) && a.backend.replay_dir.is_none() {
        bail!("--replay-dir is required for the replay backend");
    }
    let shared = shared_backend(&a.backend, &registry)?;
    let replay_dir = a.backend.replay_dir.clone();
    let factory = |spec: &_| -> Result<Box<dyn Backend>, BackendError> {
        match (&shared, &replay_dir) {
            (Some(b), _) => Ok(Box::new(Shared(b.clone()))),
            (None, Some(dir)) => {
                Ok(Box::new(ReplayBackend::load(&dir.join(trial_dir_name(spec)).join("transcript.jsonl"))?))
            }
            (None, None) => unreachable!("checked above"),
        }
    };
    if let Some(out) = &a.out {
        std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    }
    let output = run_benchmark(&cfg, &registry, ltm.as_ref(), factory, a.out.as_deref())?;
    print!("{}", output.report.render_text());
    Ok(())
}

/// One backend shared by every trial.
struct Shared(Arc<dyn Backend>);

impl Backend for Shared {
    fn id(&self) -> &str {
        self.0.id()
    }

    fn complete(
        &self,
        request: &moma_core::backends::BackendRequest,
    ) -> Result<moma_core::backends::BackendResponse, BackendError> {
        self.0.complete(request)
    }
}

fn eval_offline(a: EvalArgs) -> Result<()> {
    let registry = SkillRegistry::builtin();
    let data = load_dataset(&read(&a.dataset)?).with_context(|| format!("dataset {}", a.dataset.display()))?;
    let Some(backend) = shared_backend(&a.backend, &registry)? else {
        bail!("the replay backend cannot score offline datasets");
    };
    let report = run_offline_eval(&data, a.mode, backend.as_ref(), &registry)?;
    print!("{}", if a.csv { report.render_csv() } else { report.render_text() });
    Ok(())
}

fn gen_offline(a: GenArgs) -> Result<()> {
    let buildings = load_buildings(&a.buildings)?;
    let data = generate_offline(&buildings, a.per_row, a.seed)?;
    std::fs::write(&a.out, to_jsonl(&data)).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} instances to {}", data.len(), a.out.display());
    Ok(())
}

/// Reads JSONL records from a file, or from every `name` file below a
/// directory in path order.
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path, name: &str) -> Result<Vec<T>> {
    let mut files = Vec::new();
    if path.is_dir() {
        find(path, name, &mut files)?;
        files.sort();
    } else {
        files.push(path.to_path_buf());
    }
    let mut out = Vec::new();
    for f in files {
        for (i, line) in read(&f)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            out.push(serde_json::from_str(line).with_context(|| format!("{}:{}", f.display(), i + 1))?);
        }
    }
    Ok(out)
}

fn find(dir: &Path, name: &str, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            find(&path, name, out)?;
        } else if path.file_name().is_some_and(|n| n == name) {
            out.push(path);
        }
    }
    Ok(())
}

fn curate(a: CurateArgs) -> Result<()> {
    let registry = SkillRegistry::builtin();
    let log: Vec<PredictionRecord> = read_jsonl(&a.log, "predictions.jsonl")?;
    let truth: Vec<Annotation> = read_jsonl(&a.truth, "annotations.jsonl")?;
    let args = BackendArgs { backend: a.backend, error_profile: None, http_config: a.http_config, replay_dir: None };
    let Some(backend) = shared_backend(&args, &registry)? else {
        bail!("the replay backend cannot write analyses");
    };
    let store = curate_lessons(&log, &truth, backend.as_ref(), a.cap)?;
    store.save(&a.out)?;
    println!("{} lessons from {} predictions written to {}", store.len(), log.len(), a.out.display());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let results = load_results(&a.runs).with_context(|| format!("loading results from {}", a.runs.display()))?;
    if results.is_empty() {
        bail!("no result.json found below {}", a.runs.display());
    }
    let report = Report::from_results(&results);
    print!("{}", if a.csv { report.render_csv() } else { report.render_text() });
    Ok(())
}
