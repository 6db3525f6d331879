//! `hisd`: run saddle searches and build solution landscapes from a config file.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hisd_core::config::{load_config_file, parse_vector, to_toml, validate_config, Config, Resolved, RestartSpec};
use hisd_core::dynamics::search_from_point;
use hisd_core::export::{
    energy_grid_csv, projected_saddles_csv, to_dot, write_gnorm_histories, write_trajectories, SaddleFile,
};
use hisd_core::gallery::{config_by_name, GALLERY_NAMES};
use hisd_core::landscape::Landscape;
use hisd_core::state::{RunManifest, Snapshot};
use hisd_core::{DVector, Error};
use serde_json::json;

#[derive(Parser)]
#[command(name = "hisd", version, about = "High-index saddle search and solution landscapes")]
struct Cli {
    /// Overrides `rng_seed` from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the full landscape described by a config, then apply its restarts.
    Run {
        config: PathBuf,
        #[arg(long, default_value = "hisd_out")]
        out: PathBuf,
    },
    /// Run a single saddle search from the initial point.
    Search {
        config: PathBuf,
        /// Target index; defaults to `saddle_index`.
        #[arg(long)]
        index: Option<usize>,
        /// Start point as comma-separated values; defaults to `initial_point`.
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extend a stored landscape with a search from a new point.
    RestartPoint {
        state: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long)]
        max_index: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Extend a stored landscape from a perturbed saddle.
    RestartSaddle {
        state: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long, allow_hyphen_values = true)]
        perturbation: String,
        #[arg(long)]
        max_index: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write artifacts from a stored landscape; all kinds when none is chosen.
    Export {
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        kinds: ExportKinds,
    },
    /// Resolve a config and print it with every default filled in.
    Validate { config: PathBuf },
    /// Print or run one of the built-in example systems.
    Gallery {
        name: String,
        /// Only print the resolved config as TOML.
        #[arg(long)]
        print_config: bool,
        #[arg(long, default_value = "hisd_out")]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Copy)]
struct ExportKinds {
    #[arg(long)]
    json: bool,
    #[arg(long)]
    dot: bool,
    #[arg(long)]
    csv: bool,
    #[arg(long)]
    grid: bool,
}

impl ExportKinds {
    fn all() -> Self {
        ExportKinds { json: true, dot: true, csv: true, grid: true }
    }

    fn or_all(self) -> Self {
        if self.json || self.dot || self.csv || self.grid {
            self
        } else {
            Self::all()
        }
    }
}

/// Error tagged with the process exit code.
struct Failure {
    code: u8,
    err: anyhow::Error,
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, err: e.into() }
}

fn runtime(e: Error) -> Failure {
    let code = match e {
        Error::Config(_) | Error::Expr(_) => 1,
        _ => 2,
    };
    Failure { code, err: e.into() }
}

fn io(e: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, err: e.into() }
}

fn resolve(path: &Path, seed: Option<u64>) -> Result<Resolved, Failure> {
    let mut raw = load_config_file(path).with_context(|| format!("reading {}", path.display())).map_err(config_err)?;
    if let (Some(seed), Some(map)) = (seed, raw.as_object_mut()) {
        map.insert("rng_seed".into(), json!(seed));
    }
    let resolved = validate_config(&raw).map_err(config_err)?;
    report_notices(&resolved);
    Ok(resolved)
}

fn report_notices(resolved: &Resolved) {
    for n in &resolved.notices {
        log::info!("{n}");
    }
}

fn build_landscape(config: &Config, base: Option<&Path>) -> Result<Landscape, Failure> {
    let spec = config.build_system().map_err(runtime)?;
    for w in spec.warnings() {
        log::warn!("{w}");
    }
    Landscape::new(
        spec,
        config.search_config(),
        config.landscape_config(base).map_err(runtime)?,
        config.initial_point(),
    )
    .map_err(runtime)
}

fn apply_restart(landscape: &mut Landscape, restart: &RestartSpec) -> Result<(), Failure> {
    let result = match restart {
        RestartSpec::Point { x, max_index } => landscape.restart_from_point(&DVector::from_vec(x.clone()), *max_index),
        RestartSpec::Saddle { id, perturbation, max_index } => {
            landscape.restart_from_saddle(*id, &DVector::from_vec(perturbation.clone()), *max_index)
        }
    };
    match result {
        Err(Error::NoSaddleFound) => {
            log::warn!("{}", Error::NoSaddleFound);
            Ok(())
        }
        other => other.map_err(runtime),
    }
}

fn write_outputs(landscape: &Landscape, manifest: RunManifest, out: &Path, kinds: ExportKinds) -> Result<(), Failure> {
    fs::create_dir_all(out).map_err(io)?;
    let graph = landscape.graph();
    let config = manifest.config.clone();
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).map_err(io)? + "\n").map_err(io)?;
    Snapshot::new(manifest, graph).save(&out.join("state.json")).map_err(runtime)?;
    if kinds.json {
        fs::write(out.join("saddles.json"), SaddleFile::from_graph(graph).to_json().map_err(runtime)?).map_err(io)?;
    }
    if kinds.dot {
        fs::write(out.join("landscape.dot"), to_dot(graph)).map_err(io)?;
    }
    if kinds.csv {
        write_trajectories(graph, &config.initial_point(), &out.join("trajectories")).map_err(runtime)?;
        write_gnorm_histories(graph, &out.join("gnorm")).map_err(runtime)?;
    }
    if kinds.grid {
        if let Some(p) = config.projection_matrix() {
            fs::write(out.join("projection.csv"), projected_saddles_csv(graph, &p).map_err(runtime)?).map_err(io)?;
        }
        if landscape.spec().has_energy() && config.dim <= 2 && !graph.bounds.is_empty() {
            let grid =
                energy_grid_csv(landscape.spec(), &graph.bounds, config.grid_n, config.grid_margin).map_err(runtime)?;
            fs::write(out.join("grid.csv"), grid).map_err(io)?;
        } else if kinds.grid && !(kinds.json && kinds.dot && kinds.csv) && config.projection.is_none() {
            return Err(config_err(anyhow!("grid export needs a 1D or 2D energy, or a `projection`")));
        }
    }
    Ok(())
}

fn summarize(landscape: &Landscape) {
    let graph = landscape.graph();
    println!("Saddles found: {}", graph.len());
    for (k, count) in graph.index_counts().iter().enumerate().rev() {
        if *count > 0 {
            println!("  index {k}: {count}");
        }
    }
    for s in &graph.saddles {
        let pos: Vec<String> = s.position.iter().take(6).map(|v| format!("{v:.6}")).collect();
        let more = if s.position.len() > 6 { ", ..." } else { "" };
        println!("  #{} index {} at ({}{more})", s.id, s.morse_index, pos.join(", "));
    }
}

fn run_config(resolved: Resolved, base: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let config = resolved.config.clone();
    let start = Instant::now();
    let mut landscape = build_landscape(&config, base)?;
    landscape.run().map_err(runtime)?;
    for restart in &config.restarts {
        apply_restart(&mut landscape, restart)?;
    }
    let manifest = RunManifest::new(&config, resolved.notices, resolved.warnings, start.elapsed().as_secs_f64());
    write_outputs(&landscape, manifest, out, ExportKinds::all())?;
    summarize(&landscape);
    println!("Results written to {}", out.display());
    Ok(())
}

fn load_state(path: &Path) -> Result<(Snapshot, Landscape), Failure> {
    let snap = Snapshot::load(path).with_context(|| format!("reading {}", path.display())).map_err(config_err)?;
    let landscape = snap.landscape(path.parent()).map_err(runtime)?;
    Ok((snap, landscape))
}

fn restart_and_save(
    state: &Path,
    out: Option<PathBuf>,
    seed: Option<u64>,
    step: impl FnOnce(&mut Landscape) -> Result<(), Failure>,
) -> Result<(), Failure> {
    let (snap, mut landscape) = load_state(state)?;
    if seed.is_some_and(|s| s != snap.manifest.seed) {
        log::warn!("--seed is ignored when resuming; the stored seed {} is used", snap.manifest.seed);
    }
    let start = Instant::now();
    step(&mut landscape)?;
    let mut manifest = snap.manifest;
    manifest.duration_secs += start.elapsed().as_secs_f64();
    let out = out.unwrap_or_else(|| state.parent().map(Path::to_path_buf).unwrap_or_default());
    write_outputs(&landscape, manifest, &out, ExportKinds::all())?;
    summarize(&landscape);
    Ok(())
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out } => {
            let resolved = resolve(&config, cli.seed)?;
            run_config(resolved, config.parent(), &out)
        }
        Command::Search { config, index, x0, out } => {
            let resolved = resolve(&config, cli.seed)?;
            let cfg = resolved.config;
            let spec = cfg.build_system().map_err(runtime)?;
            let mut search = cfg.search_config();
            if let Some(k) = index {
                if k > cfg.dim {
                    return Err(config_err(anyhow!("--index {k} exceeds the dimension {}", cfg.dim)));
                }
                search.saddle_index = k;
            }
            let x0 = match x0 {
                Some(s) => parse_vector(&s).map_err(config_err)?,
                None => cfg.initial_point(),
            };
            if x0.len() != cfg.dim {
                return Err(config_err(anyhow!("--x0 has {} entries, expected {}", x0.len(), cfg.dim)));
            }
            let outcome = search_from_point(&spec, &search, &x0, cfg.rng_seed).map_err(runtime)?;
            println!("Status: {}", outcome.status);
            println!("Iterations: {}", outcome.iterations);
            println!("Morse index: {}", outcome.morse_index);
            println!("Final gradient norm: {:e}", outcome.gnorm_history.last().copied().unwrap_or(f64::NAN));
            println!("Position: {:?}", outcome.x_final.as_slice());
            if let Some(out) = out {
                let doc = json!({
                    "status": outcome.status,
                    "iterations": outcome.iterations,
                    "morse_index": outcome.morse_index,
                    "degenerate": outcome.degenerate,
                    "position": outcome.x_final.as_slice(),
                    "gnorm_history": outcome.gnorm_history,
                    "hvp_evals": outcome.hvp_evals,
                    "force_evals": outcome.force_evals,
                });
                fs::write(&out, serde_json::to_string_pretty(&doc).map_err(io)? + "\n").map_err(io)?;
            }
            if outcome.converged() {
                Ok(())
            } else {
                Err(Failure { code: 2, err: anyhow!("search ended with status {}", outcome.status) })
            }
        }
        Command::RestartPoint { state, x, max_index, out } => {
            let x = parse_vector(&x).map_err(config_err)?;
            restart_and_save(&state, out, cli.seed, |l| {
                apply_restart(l, &RestartSpec::Point { x: x.iter().copied().collect(), max_index })
            })
        }
        Command::RestartSaddle { state, id, perturbation, max_index, out } => {
            let p = parse_vector(&perturbation).map_err(config_err)?;
            restart_and_save(&state, out, cli.seed, |l| {
                if id >= l.graph().len() {
                    return Err(config_err(Error::InvalidSaddleId));
                }
                apply_restart(l, &RestartSpec::Saddle { id, perturbation: p.iter().copied().collect(), max_index })
            })
        }
        Command::Export { state, out, kinds } => {
            let (snap, landscape) = load_state(&state)?;
            write_outputs(&landscape, snap.manifest, &out, kinds.or_all())?;
            println!("Results written to {}", out.display());
            Ok(())
        }
        Command::Validate { config } => {
            let resolved = resolve(&config, cli.seed)?;
            for w in &resolved.warnings {
                eprintln!("{w}");
            }
            print!("{}", to_toml(&resolved.config).map_err(config_err)?);
            Ok(())
        }
        Command::Gallery { name, print_config, out } => {
            let mut config = config_by_name(&name).ok_or_else(|| {
                config_err(anyhow!("unknown gallery system `{name}`; choose one of {GALLERY_NAMES:?}"))
            })?;
            if let Some(seed) = cli.seed {
                config.rng_seed = seed;
            }
            if print_config {
                print!("{}", to_toml(&config).map_err(config_err)?);
                return Ok(());
            }
            run_config(Resolved { config, notices: Vec::new(), warnings: Vec::new() }, None, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.err);
            ExitCode::from(f.code)
        }
    }
}
