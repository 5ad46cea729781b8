//! Subcommand implementations behind the `navloop` binary.

mod render;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{DecisionBackend, FaultyBackend, ForgetfulOracle, OracleBackend};
use crate::metrics::{
    aggregate, classify_failure, compute_metrics, group_by_seed, render_failures, render_table, ClassifierConfig,
    EpisodeRecord, FailureCategory, FinalState, MetricsError, SummaryTable,
};
use crate::remote::{EndpointConfig, RemoteBackend};
use crate::runner::{run_episode, Ablation, EpisodeConfig, EpisodeTrace, Termination};
use crate::world::{generate_world, read_world, write_world, GeneratorSpec, WorldModel};

pub use render::render_svg;

pub const WORLD_SUFFIX: &str = ".world.json";
pub const TRACE_SUFFIX: &str = ".trace.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
    #[error("{0}")]
    Backend(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) | CliError::SchemaMismatch(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::SchemaMismatch(m) => CliError::SchemaMismatch(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Files directly under `path` ending in `suffix`, sorted; or `path` itself.
pub fn collect_files(path: &Path, suffix: &str) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::Usage(format!("{} does not exist", path.display())));
    }
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(runtime)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(suffix)))
        .collect();
    out.sort();
    Ok(out)
}

fn load_worlds(paths: &[PathBuf]) -> Result<Vec<WorldModel>, CliError> {
    let mut files = vec![];
    for p in paths {
        files.extend(collect_files(p, WORLD_SUFFIX)?);
    }
    if files.is_empty() {
        return Err(CliError::Usage("no world files given".into()));
    }
    let mut worlds = Vec::with_capacity(files.len());
    let mut seen = BTreeMap::new();
    for f in &files {
        let w = read_world(f).map_err(|e| CliError::Usage(format!("{}: {e}", f.display())))?;
        if let Some(prev) = seen.insert(w.name.clone(), f.clone()) {
            return Err(CliError::Usage(format!(
                "world name {} appears in both {} and {}",
                w.name,
                prev.display(),
                f.display()
            )));
        }
        worlds.push(w);
    }
    Ok(worlds)
}

fn world_map(paths: &[PathBuf]) -> Result<BTreeMap<String, WorldModel>, CliError> {
    Ok(load_worlds(paths)?.into_iter().map(|w| (w.name.clone(), w)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldgenArgs {
    pub spec: GeneratorSpec,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

/// Writes one world file per seed and returns the paths.
pub fn command_worldgen(args: &WorldgenArgs) -> Result<Vec<PathBuf>, CliError> {
    args.spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    std::fs::create_dir_all(&args.out).map_err(runtime)?;
    let mut out = vec![];
    for &seed in &args.seeds {
        let w = generate_world(seed, &args.spec).map_err(runtime)?;
        let path = args.out.join(format!("{}{WORLD_SUFFIX}", w.name));
        write_world(&w, &path).map_err(runtime)?;
        out.push(path);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendChoice {
    Oracle,
    /// Oracle that only tracks landmarks through the checklist.
    Forgetful,
    Http { endpoint: EndpointConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub worlds: Vec<PathBuf>,
    pub backend: BackendChoice,
    pub seeds: Vec<u64>,
    pub ablation: Ablation,
    pub out_dir: PathBuf,
    /// Wraps the backend so that this fraction of decisions is corrupted.
    pub error_rate: f64,
    pub episode: EpisodeConfig,
    pub jobs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub traces: Vec<PathBuf>,
    pub successes: usize,
    pub backend_failures: Vec<String>,
}

pub fn make_backend(choice: &BackendChoice, world: &WorldModel) -> Result<Box<dyn DecisionBackend>, CliError> {
    Ok(match choice {
        BackendChoice::Oracle => Box::new(OracleBackend::new(Arc::new(world.clone()))),
        BackendChoice::Forgetful => Box::new(ForgetfulOracle::new(Arc::new(world.clone()))),
        BackendChoice::Http { endpoint } => Box::new(RemoteBackend::new(endpoint.clone()).map_err(CliError::Usage)?),
    })
}

/// Runs every (world, seed) pair. Config problems surface before the first
/// episode; a backend failure in any episode is reported after all traces
/// are written.
pub fn command_run(m: &RunManifest) -> Result<RunReport, CliError> {
    if m.seeds.is_empty() {
        return Err(CliError::Usage("no seeds".into()));
    }
    if !(0.0..=1.0).contains(&m.error_rate) {
        return Err(CliError::Usage(format!("error rate {} outside [0, 1]", m.error_rate)));
    }
    m.episode.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if let BackendChoice::Http { endpoint } = &m.backend {
        endpoint.validate().map_err(CliError::Usage)?;
    }
    let worlds = load_worlds(&m.worlds)?;
    std::fs::create_dir_all(&m.out_dir).map_err(|e| CliError::Usage(format!("{}: {e}", m.out_dir.display())))?;

    let jobs: Vec<(&WorldModel, u64)> = worlds.iter().flat_map(|w| m.seeds.iter().map(move |&s| (w, s))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(m.jobs)
        .build()
        .map_err(runtime)?;
    let results: Vec<Result<(PathBuf, bool, Option<String>), CliError>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|&(w, seed)| {
                let inner = make_backend(&m.backend, w)?;
                let backend: Box<dyn DecisionBackend> = if m.error_rate > 0.0 {
                    Box::new(FaultyBackend::new(inner, m.error_rate, seed))
                } else {
                    inner
                };
                let cfg = EpisodeConfig {
                    seed,
                    ablation: m.ablation,
                    ..m.episode.clone()
                };
                let t = run_episode(w, backend.as_ref(), &cfg).map_err(runtime)?;
                let path = m.out_dir.join(t.file_name());
                t.write(&path).map_err(runtime)?;
                let f = &t.final_summary;
                let failed = (f.termination == Termination::BackendError).then(|| {
                    format!("{} seed {}: {}", w.name, seed, f.failure_reason.clone().unwrap_or_default())
                });
                Ok((path, f.success, failed))
            })
            .collect()
    });
    let mut report = RunReport {
        traces: vec![],
        successes: 0,
        backend_failures: vec![],
    };
    for r in results {
        let (path, ok, failed) = r?;
        report.traces.push(path);
        report.successes += ok as usize;
        report.backend_failures.extend(failed);
    }
    Ok(report)
}

fn load_traces(paths: &[PathBuf]) -> Result<Vec<(PathBuf, EpisodeTrace)>, CliError> {
    let mut files = vec![];
    for p in paths {
        files.extend(collect_files(p, TRACE_SUFFIX)?);
    }
    if files.is_empty() {
        return Err(CliError::Usage("no trace files given".into()));
    }
    files
        .into_iter()
        .map(|f| {
            let t = EpisodeTrace::read(&f).map_err(|e| CliError::Runtime(format!("{}: {e}", f.display())))?;
            Ok((f, t))
        })
        .collect()
}

fn world_for<'a>(worlds: &'a BTreeMap<String, WorldModel>, t: &EpisodeTrace) -> Result<&'a WorldModel, CliError> {
    worlds
        .get(&t.header.world)
        .ok_or_else(|| CliError::SchemaMismatch(format!("no world named {} for this trace", t.header.world)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifiedTrace {
    pub trace: PathBuf,
    pub world: String,
    pub seed: u64,
    pub category: FailureCategory,
}

fn classify_one(t: &EpisodeTrace, w: &WorldModel, cfg: &ClassifierConfig) -> Result<FailureCategory, CliError> {
    let state = FinalState::from_trace(t, w)?;
    Ok(classify_failure(&state, w.task.family, t.header.success_radius, cfg))
}

pub fn command_classify(
    traces: &[PathBuf],
    worlds: &[PathBuf],
    cfg: &ClassifierConfig,
) -> Result<Vec<ClassifiedTrace>, CliError> {
    let worlds = world_map(worlds)?;
    load_traces(traces)?
        .into_iter()
        .map(|(path, t)| {
            let w = world_for(&worlds, &t)?;
            Ok(ClassifiedTrace {
                category: classify_one(&t, w, cfg)?,
                trace: path,
                world: t.header.world.clone(),
                seed: t.header.seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One summary per ablation configuration found in the traces.
    pub configs: BTreeMap<String, SummaryTable>,
    pub episodes: Vec<EvalEpisode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEpisode {
    pub config: String,
    pub record: EpisodeRecord,
}

impl EvalReport {
    pub fn text(&self) -> String {
        let rows: Vec<(String, SummaryTable)> = self.configs.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        let mut s = render_table(&rows);
        for (label, t) in &self.configs {
            s.push_str(&format!("\nfailures ({label}):\n"));
            s.push_str(&render_failures(t));
        }
        s
    }

    pub fn json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn command_eval(traces: &[PathBuf], worlds: &[PathBuf], cfg: &ClassifierConfig) -> Result<EvalReport, CliError> {
    let worlds = world_map(worlds)?;
    let mut by_config: BTreeMap<String, Vec<EpisodeRecord>> = BTreeMap::new();
    let mut episodes = vec![];
    for (_, t) in load_traces(traces)? {
        let w = world_for(&worlds, &t)?;
        let record = EpisodeRecord {
            world: w.name.clone(),
            seed: t.header.seed,
            metrics: compute_metrics(&t, w)?,
            failure: classify_one(&t, w, cfg)?,
        };
        let label = t.header.config.ablation.label().to_string();
        by_config.entry(label.clone()).or_default().push(record.clone());
        episodes.push(EvalEpisode { config: label, record });
    }
    let mut configs = BTreeMap::new();
    for (label, recs) in by_config {
        configs.insert(label, aggregate(&group_by_seed(&recs))?);
    }
    Ok(EvalReport { configs, episodes })
}

pub fn command_render(trace: &Path, world: &Path, out: &Path) -> Result<(), CliError> {
    let t = EpisodeTrace::read(trace).map_err(|e| CliError::Usage(e.to_string()))?;
    let w = read_world(world).map_err(|e| CliError::Usage(format!("{}: {e}", world.display())))?;
    let svg = render_svg(&t, &w)?;
    std::fs::write(out, svg).map_err(runtime)
}

/// Settings read from a TOML file. Every field present here wins over the
/// matching command-line flag.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub worldgen: WorldgenSection,
    pub run: RunSection,
    pub classifier: Option<ClassifierConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldgenSection {
    pub spec: Option<GeneratorSpec>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub worlds: Option<Vec<PathBuf>>,
    pub backend: Option<String>,
    pub endpoint: Option<EndpointConfig>,
    pub seeds: Option<Vec<u64>>,
    pub ablate: Option<String>,
    pub out: Option<PathBuf>,
    pub error_rate: Option<f64>,
    pub jobs: Option<usize>,
    pub episode: Option<EpisodeConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests;
