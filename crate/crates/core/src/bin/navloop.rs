use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use navloop::cli::{
    command_classify, command_eval, command_render, command_run, command_worldgen, BackendChoice, CliError,
    FileConfig, RunManifest, WorldgenArgs,
};
use navloop::metrics::{ClassifierConfig, FailureCategory};
use navloop::remote::EndpointConfig;
use navloop::runner::{Ablation, EpisodeConfig};
use navloop::world::{GeneratorSpec, TaskFamily};

#[derive(Parser, Debug)]
#[command(name = "navloop", version, about = "Run and evaluate language-guided navigation episodes")]
struct Cli {
    /// TOML file whose settings take precedence over flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate world files.
    Worldgen {
        #[arg(long, default_value = "objectnav")]
        family: String,
        /// Number of worlds.
        #[arg(long, default_value_t = 1)]
        count: u64,
        /// First generator seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        floors: Option<usize>,
        #[arg(long)]
        dead_end: bool,
        #[arg(long)]
        max_subgoals: Option<usize>,
        #[arg(long)]
        rooms_x: Option<usize>,
        #[arg(long)]
        rooms_y: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run episodes and write one trace per (world, seed).
    Run {
        /// World files or directories holding them.
        #[arg(long, num_args = 1..)]
        worlds: Vec<PathBuf>,
        /// oracle, forgetful or http.
        #[arg(long, default_value = "oracle")]
        backend: String,
        #[arg(long)]
        endpoint: Option<String>,
        /// Run seeds 0..N.
        #[arg(long, conflicts_with = "seed")]
        seeds: Option<u64>,
        /// Run this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Component to disable: none, tdm, scb or both.
        #[arg(long, default_value = "none")]
        ablate: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        jobs: Option<usize>,
        /// Fraction of corrupted decisions.
        #[arg(long, default_value_t = 0.0)]
        error_rate: f64,
        #[arg(long)]
        max_steps: Option<usize>,
    },
    /// Summarize traces per configuration.
    Eval {
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        worlds: Vec<PathBuf>,
        /// Also write the summary as JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Assign a failure category to every trace.
    Classify {
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        worlds: Vec<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Draw a trace over its world as SVG.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn backend_choice(name: &str, endpoint: Option<EndpointConfig>) -> Result<BackendChoice, CliError> {
    match name {
        "oracle" => Ok(BackendChoice::Oracle),
        "forgetful" => Ok(BackendChoice::Forgetful),
        "http" => Ok(BackendChoice::Http {
            endpoint: endpoint.ok_or_else(|| usage("--backend http needs --endpoint"))?.with_env_token(),
        }),
        other => Err(usage(format!("unknown backend {other:?}"))),
    }
}

fn classifier(cfg: &FileConfig) -> ClassifierConfig {
    cfg.classifier.unwrap_or_default()
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.cmd {
        Cmd::Worldgen {
            family,
            count,
            seed,
            floors,
            dead_end,
            max_subgoals,
            rooms_x,
            rooms_y,
            out,
        } => {
            let fam = TaskFamily::parse(&family).ok_or_else(|| usage(format!("unknown family {family:?}")))?;
            let mut spec = GeneratorSpec::for_family(fam);
            spec.dead_end_rooms = dead_end;
            if let Some(v) = floors {
                spec.floors = v;
            }
            if let Some(v) = max_subgoals {
                spec.max_subgoals = v;
            }
            if let Some(v) = rooms_x {
                spec.rooms_x = v;
            }
            if let Some(v) = rooms_y {
                spec.rooms_y = v;
            }
            let sec = file.worldgen;
            let args = WorldgenArgs {
                spec: sec.spec.unwrap_or(spec),
                seeds: sec.seeds.unwrap_or_else(|| (seed..seed + count).collect()),
                out: sec.out.or(out).ok_or_else(|| usage("worldgen needs --out"))?,
            };
            for p in command_worldgen(&args)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Cmd::Run {
            worlds,
            backend,
            endpoint,
            seeds,
            seed,
            ablate,
            out,
            jobs,
            error_rate,
            max_steps,
        } => {
            let sec = file.run;
            let endpoint = sec.endpoint.or_else(|| endpoint.as_deref().map(EndpointConfig::new));
            let backend = backend_choice(sec.backend.as_deref().unwrap_or(&backend), endpoint)?;
            let ablate = sec.ablate.unwrap_or(ablate);
            let ablation = Ablation::from_flag(&ablate).ok_or_else(|| usage(format!("unknown --ablate {ablate:?}")))?;
            let seeds = sec.seeds.unwrap_or_else(|| match (seeds, seed) {
                (_, Some(s)) => vec![s],
                (Some(n), None) => (0..n).collect(),
                (None, None) => vec![0],
            });
            let mut episode = EpisodeConfig::default();
            if let Some(m) = max_steps {
                episode.max_steps = m;
            }
            let episode = sec.episode.unwrap_or(episode);
            let worlds = sec.worlds.unwrap_or(worlds);
            if worlds.is_empty() {
                return Err(usage("run needs --worlds"));
            }
            let manifest = RunManifest {
                worlds,
                backend,
                seeds,
                ablation,
                out_dir: sec.out.or(out).ok_or_else(|| usage("run needs --out"))?,
                error_rate: sec.error_rate.unwrap_or(error_rate),
                episode,
                jobs: sec
                    .jobs
                    .or(jobs)
                    .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            };
            let report = command_run(&manifest)?;
            println!(
                "{} episodes, {} successful, traces in {}",
                report.traces.len(),
                report.successes,
                manifest.out_dir.display()
            );
            if !report.backend_failures.is_empty() {
                return Err(CliError::Backend(format!(
                    "backend failed in {} episode(s): {}",
                    report.backend_failures.len(),
                    report.backend_failures.join("; ")
                )));
            }
            Ok(())
        }
        Cmd::Eval { traces, worlds, json } => {
            let report = command_eval(&traces, &worlds, &classifier(&file))?;
            print!("{}", report.text());
            if let Some(p) = json {
                write_out(&p, &report.json())?;
            }
            Ok(())
        }
        Cmd::Classify { traces, worlds, json } => {
            let rows = command_classify(&traces, &worlds, &classifier(&file))?;
            for r in &rows {
                println!("{}\t{}\t{}", r.trace.display(), r.seed, r.category.label());
            }
            let failed = rows.iter().filter(|r| r.category != FailureCategory::NotAFailure).count();
            println!("{failed} of {} episodes failed", rows.len());
            if let Some(p) = json {
                write_out(&p, &serde_json::to_string_pretty(&rows).expect("rows serialize"))?;
            }
            Ok(())
        }
        Cmd::Render { trace, world, out } => command_render(&trace, &world, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
