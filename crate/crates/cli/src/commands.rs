use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::Value;

use hybrid_pdp::applications::{
    build_fluorescence, discriminate_initial_state, ground_state, photon_count_probs, waiting_time_density,
    ClassicalHistory, FluorescenceParams,
};
use hybrid_pdp::engine::{self, simulate_trajectory, TrajectoryConfig};
use hybrid_pdp::ensemble::{self, compare_to_master, initial_blocks, master_evolve, run_ensemble, TimeGrid};
use hybrid_pdp::io::{self, InitialConfig, RunManifest, Table};
use hybrid_pdp::{HybridModel, PureHybridState};

use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "hybrid-pdp", version, about = "Sample paths and master-equation statistics for coupled classical-quantum models")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Where the model comes from: a configuration file or the fluorescence
/// shortcut.
#[derive(Args, Clone, Debug)]
struct ModelArgs {
    /// Model configuration (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Relaxation rate of the fluorescence model.
    #[arg(long, requires = "omega")]
    gamma: Option<f64>,
    /// Rabi frequency of the fluorescence model.
    #[arg(long, requires = "gamma")]
    omega: Option<f64>,
    /// Keep fluorescence sectors 0..=n-max (default: unbounded chain).
    #[arg(long = "n-max")]
    n_max: Option<usize>,
}

#[derive(Args, Clone, Debug)]
struct SampleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "t-max", default_value_t = 10.0)]
    t_max: f64,
    /// Number of trajectories.
    #[arg(long, default_value_t = 1000)]
    n: usize,
    /// Output grid spacing.
    #[arg(long, default_value_t = 0.05)]
    grid: f64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a model and print its digest.
    Validate {
        #[command(flatten)]
        model: ModelArgs,
        /// Write the normalized model configuration here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate sample paths and write their event logs (JSONL).
    Trajectory {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "t-max", default_value_t = 10.0)]
        t_max: f64,
        /// Index of the first trajectory.
        #[arg(long, default_value_t = 0)]
        index: u64,
        /// Number of consecutive trajectories.
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long = "max-events", default_value_t = 1_000_000)]
        max_events: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ensemble averages on a time grid (CSV).
    Ensemble {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sample: SampleArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sector populations from the master equation (CSV).
    Master {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "t-max", default_value_t = 10.0)]
        t_max: f64,
        #[arg(long, default_value_t = 0.05)]
        grid: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace distance between ensemble and master-equation states (CSV).
    Compare {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sample: SampleArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic and empirical law of the first jump time (CSV).
    WaitingTime {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        sample: SampleArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Photon-count distribution of the fluorescence model at time t (CSV).
    Counts {
        #[arg(long)]
        gamma: f64,
        #[arg(long)]
        omega: f64,
        #[arg(long)]
        t: f64,
        /// Largest count reported.
        #[arg(long = "n-max", default_value_t = 10)]
        n_max: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank candidate initial states by the likelihood of an observed record.
    Discriminate {
        #[command(flatten)]
        model: ModelArgs,
        /// JSON file with `history` ([[t, sector], ...]) and `candidates`
        /// ([{"sector": s, "psi": [[re, im], ...]}, ...]).
        #[arg(long)]
        history: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check an event-log file.
    ValidateLog {
        #[arg(long)]
        log: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Rerun the command recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write to this path instead of the recorded output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Trajectory { .. } => "trajectory",
            Command::Ensemble { .. } => "ensemble",
            Command::Master { .. } => "master",
            Command::Compare { .. } => "compare",
            Command::WaitingTime { .. } => "waiting-time",
            Command::Counts { .. } => "counts",
            Command::Discriminate { .. } => "discriminate",
            Command::ValidateLog { .. } => "validate-log",
            Command::Replay { .. } => "replay",
        }
    }
}

struct Loaded {
    model: HybridModel,
    x0: PureHybridState,
    params: Option<FluorescenceParams>,
}

impl ModelArgs {
    fn is_given(&self) -> bool {
        self.model.is_some() || self.gamma.is_some()
    }

    fn load(&self, expected_digest: Option<&str>) -> Result<Loaded> {
        let loaded = match (&self.model, self.gamma, self.omega) {
            (Some(_), Some(_), _) => {
                return Err(CliError::Usage("--model and --gamma/--omega are exclusive".into()));
            }
            (Some(path), None, _) => {
                if self.n_max.is_some() {
                    return Err(CliError::Usage("--n-max applies to the fluorescence shortcut only".into()));
                }
                let config = io::parse_model_config(path)?;
                let model = config.to_model()?;
                let x0 = match config.initial_state(&model) {
                    Some(x) => x?,
                    None => PureHybridState::basis(&model, 0, 0)?,
                };
                Loaded { model, x0, params: None }
            }
            (None, Some(gamma), Some(omega)) => {
                let params = FluorescenceParams::new(gamma, omega)?;
                let model = build_fluorescence(params, self.n_max)?;
                let x0 = PureHybridState::new(&model, 0, ground_state())?;
                Loaded {
                    model,
                    x0,
                    params: Some(params),
                }
            }
            _ => return Err(CliError::Usage("give --model or --gamma with --omega".into())),
        };
        if let Some(expected) = expected_digest {
            if loaded.model.digest() != expected {
                return Err(CliError::Validation(format!(
                    "model digest {} differs from the recorded {expected}",
                    loaded.model.digest()
                )));
            }
        }
        Ok(loaded)
    }

    fn record(&self, params: &mut BTreeMap<String, Value>) {
        if let Some(p) = &self.model {
            params.insert("model".into(), Value::from(p.display().to_string()));
        }
        if let (Some(g), Some(o)) = (self.gamma, self.omega) {
            params.insert("gamma".into(), Value::from(g));
            params.insert("omega".into(), Value::from(o));
        }
        if let Some(n) = self.n_max {
            params.insert("n_max".into(), Value::from(n));
        }
    }
}

impl SampleArgs {
    fn config(&self) -> TrajectoryConfig {
        TrajectoryConfig {
            t_max: self.t_max,
            seed: self.seed,
            ..TrajectoryConfig::default()
        }
    }

    fn grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::span(self.t_max, self.grid)?)
    }

    fn record(&self, params: &mut BTreeMap<String, Value>) {
        params.insert("seed".into(), Value::from(self.seed));
        params.insert("t_max".into(), Value::from(self.t_max));
        params.insert("n".into(), Value::from(self.n));
        params.insert("grid".into(), Value::from(self.grid));
    }
}

/// What a command produced, for the manifest and the summary line.
struct Outcome {
    digest: String,
    seed: u64,
    params: BTreeMap<String, Value>,
    summary: Vec<String>,
}

impl Outcome {
    fn new(digest: &str, seed: u64) -> Self {
        Outcome {
            digest: digest.to_string(),
            seed,
            params: BTreeMap::new(),
            summary: Vec::new(),
        }
    }
}

fn open_output(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn write_table(out: &Option<PathBuf>, table: &Table) -> Result<()> {
    let mut w = open_output(out)?;
    io::write_csv(&mut w, table)?;
    w.flush()?;
    Ok(())
}

fn finish(command: &str, argv: &[String], out: &Option<PathBuf>, outcome: Outcome) -> Result<()> {
    match out {
        Some(path) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            let manifest = RunManifest {
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv: argv.to_vec(),
                model_digest: outcome.digest,
                seed: outcome.seed,
                params: outcome.params,
                outputs: vec![path.display().to_string()],
            };
            io::write_manifest(&io::manifest_path(path), &manifest)?;
        }
        None => {
            for line in &outcome.summary {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}

/// Runs a parsed command line. `argv` excludes the program name and is
/// recorded in manifests; `expected_digest` pins the model when replaying.
pub fn run(cli: Cli, argv: Vec<String>, expected_digest: Option<String>) -> Result<()> {
    let name = cli.command.name();
    let expected = expected_digest.as_deref();
    match cli.command {
        Command::Validate { model, out } => {
            let loaded = model.load(expected)?;
            let m = &loaded.model;
            let mut o = Outcome::new(m.digest(), 0);
            model.record(&mut o.params);
            o.summary.push(format!("digest {}", m.digest()));
            o.summary.push(match m.sector_count() {
                Some(k) => format!("sectors {k}"),
                None => "sectors unbounded chain".to_string(),
            });
            o.summary.push(format!("rate_bound {}", m.rate_bound()));
            match &out {
                Some(path) => {
                    let config = io::ModelConfig::from_model(m).with_initial(&loaded.x0);
                    std::fs::write(path, io::serialize_config(&config))
                        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
                    finish(name, &argv, &out, o)
                }
                None => {
                    for line in &o.summary {
                        println!("{line}");
                    }
                    Ok(())
                }
            }
        }
        Command::Trajectory {
            model,
            seed,
            t_max,
            index,
            count,
            max_events,
            out,
        } => {
            let loaded = model.load(expected)?;
            let cfg = TrajectoryConfig {
                t_max,
                seed,
                max_events,
                ..TrajectoryConfig::default()
            };
            let mut w = open_output(&out)?;
            let mut jumps = 0;
            for i in index..index + count {
                let log = simulate_trajectory(&loaded.model, &loaded.x0, &cfg, i)?;
                jumps += log.jump_count();
                io::write_event_log(&mut w, &log)?;
            }
            w.flush()?;
            drop(w);
            let mut o = Outcome::new(loaded.model.digest(), seed);
            model.record(&mut o.params);
            o.params.insert("seed".into(), Value::from(seed));
            o.params.insert("t_max".into(), Value::from(t_max));
            o.params.insert("index".into(), Value::from(index));
            o.params.insert("count".into(), Value::from(count));
            o.params.insert("max_events".into(), Value::from(max_events));
            o.summary.push(format!("trajectories {count} jumps {jumps}"));
            finish(name, &argv, &out, o)
        }
        Command::Ensemble { model, sample, out } => {
            let loaded = model.load(expected)?;
            let grid = sample.grid()?;
            let stats = run_ensemble(&loaded.model, &loaded.x0, &sample.config(), sample.n, &grid)?;
            let m = stats.sector_count();
            let nf = stats.trajectories as f64;
            let mut header = vec!["t".to_string()];
            for a in 0..m {
                header.push(format!("occupation_{a}"));
                header.push(format!("occupation_se_{a}"));
            }
            header.extend(["jump_mean", "jump_var", "martingale_mean", "martingale_var"].map(String::from));
            let mut table = Table::new(header);
            for j in 0..grid.len() {
                let mut row = vec![grid.time(j)];
                for a in 0..m {
                    let p = stats.occupation[j][a];
                    row.push(p);
                    row.push((p * (1.0 - p) / nf).sqrt());
                }
                row.extend([
                    stats.jump_mean[j],
                    stats.jump_var[j],
                    stats.martingale_mean[j],
                    stats.martingale_var[j],
                ]);
                table.push(row);
            }
            write_table(&out, &table)?;
            let mut o = Outcome::new(loaded.model.digest(), sample.seed);
            model.record(&mut o.params);
            sample.record(&mut o.params);
            o.summary.push(format!("trajectories {} sectors {m}", stats.trajectories));
            finish(name, &argv, &out, o)
        }
        Command::Master {
            model,
            t_max,
            grid,
            out,
        } => {
            let loaded = model.load(expected)?;
            let grid = TimeGrid::span(t_max, grid).map_err(CliError::from)?;
            let rho0 = initial_blocks(&loaded.model, &loaded.x0, grid.end())?;
            let series = master_evolve(&loaded.model, &rho0, &grid)?;
            let m = rho0.blocks.len();
            let mut header = vec!["t".to_string()];
            header.extend((0..m).map(|a| format!("p_{a}")));
            header.extend(["trace", "min_eigenvalue"].map(String::from));
            let mut table = Table::new(header);
            let mut worst_trace: f64 = 0.0;
            for (j, rho) in series.iter().enumerate() {
                let mut row = vec![grid.time(j)];
                row.extend(rho.traces());
                row.push(rho.trace());
                row.push(rho.min_eigenvalue());
                worst_trace = worst_trace.max((rho.trace() - 1.0).abs());
                table.push(row);
            }
            write_table(&out, &table)?;
            let mut o = Outcome::new(loaded.model.digest(), 0);
            model.record(&mut o.params);
            o.params.insert("t_max".into(), Value::from(t_max));
            o.params.insert("grid".into(), Value::from(grid.dt));
            o.summary.push(format!("sectors {m} max_trace_error {worst_trace:e}"));
            finish(name, &argv, &out, o)
        }
        Command::Compare { model, sample, out } => {
            let loaded = model.load(expected)?;
            let grid = sample.grid()?;
            let stats = run_ensemble(&loaded.model, &loaded.x0, &sample.config(), sample.n, &grid)?;
            let rho0 = initial_blocks(&loaded.model, &loaded.x0, grid.end())?;
            let master = master_evolve(&loaded.model, &rho0, &grid)?;
            let distances = compare_to_master(&stats, &master)?;
            let mut table = Table::new(["t", "trace_distance"]);
            for (j, d) in distances.iter().enumerate() {
                table.push(vec![grid.time(j), *d]);
            }
            write_table(&out, &table)?;
            let worst = distances.iter().cloned().fold(0.0, f64::max);
            let bound = 5.0 / (sample.n as f64).sqrt();
            let mut o = Outcome::new(loaded.model.digest(), sample.seed);
            model.record(&mut o.params);
            sample.record(&mut o.params);
            o.summary.push(format!("max_trace_distance {worst:.6e} bound {bound:.6e}"));
            finish(name, &argv, &out, o)
        }
        Command::WaitingTime { model, sample, out } => {
            let loaded = model.load(expected)?;
            let cfg = TrajectoryConfig {
                max_events: 1,
                ..sample.config()
            };
            let mut first: Vec<f64> = (0..sample.n as u64)
                .into_par_iter()
                .map(|i| {
                    let log = simulate_trajectory(&loaded.model, &loaded.x0, &cfg, i)?;
                    let first = log.jump_times().next();
                    Ok(first)
                })
                .collect::<std::result::Result<Vec<Option<f64>>, engine::EngineError>>()?
                .into_iter()
                .flatten()
                .collect();
            first.sort_by(f64::total_cmp);
            let (m, x0) = (&loaded.model, &loaded.x0);
            let cdf = |t: f64| engine::jump_time_cdf(m, x0, t);
            let density = |t: f64| -> std::result::Result<f64, engine::EngineError> {
                let y = engine::flow(m, x0, t)?;
                Ok(hybrid_pdp::model::total_rate(m, &y)? * engine::analytic_no_jump_prob(m, x0, t)?)
            };
            let grid = sample.grid()?;
            let mut header = vec!["t", "density", "cdf", "empirical_cdf"];
            if loaded.params.is_some() {
                header.push("closed_form_density");
            }
            let mut table = Table::new(header);
            let nf = sample.n as f64;
            for t in grid.times() {
                let t = t.min(sample.t_max);
                let below = first.partition_point(|s| *s <= t) as f64;
                let mut row = vec![t, density(t)?, cdf(t)?, below / nf];
                if let Some(p) = loaded.params {
                    row.push(waiting_time_density(p, t)?);
                }
                table.push(row);
            }
            write_table(&out, &table)?;
            let mut cdf_err = None;
            let ks = ensemble::ks_distance(&first, sample.n, sample.t_max, |t| {
                cdf(t).unwrap_or_else(|e| {
                    cdf_err.get_or_insert(e);
                    f64::NAN
                })
            });
            if let Some(e) = cdf_err {
                return Err(e.into());
            }
            let mut o = Outcome::new(loaded.model.digest(), sample.seed);
            model.record(&mut o.params);
            sample.record(&mut o.params);
            o.summary.push(format!(
                "samples {} jumped {} ks_distance {ks:.6e}",
                sample.n,
                first.len()
            ));
            finish(name, &argv, &out, o)
        }
        Command::Counts {
            gamma,
            omega,
            t,
            n_max,
            n,
            seed,
            out,
        } => {
            if !(t > 0.0) || !t.is_finite() {
                return Err(CliError::Usage(format!("--t must be positive, got {t}")));
            }
            let params = FluorescenceParams::new(gamma, omega)?;
            let model = build_fluorescence(params, None)?;
            let x0 = PureHybridState::new(&model, 0, ground_state())?;
            let analytic = photon_count_probs(params, t, n_max)?;
            let cfg = TrajectoryConfig {
                t_max: t,
                seed,
                ..TrajectoryConfig::default()
            };
            let grid = TimeGrid::new(0.0, t, 1)?;
            let stats = run_ensemble(&model, &x0, &cfg, n, &grid)?;
            let hist = &stats.count_histogram[1];
            let nf = n as f64;
            let mut table = Table::new(["n", "analytic", "empirical", "std_error"]).integer_column("n");
            let mut worst: f64 = 0.0;
            for (k, p) in analytic.iter().enumerate() {
                let e = hist.get(k).copied().unwrap_or(0.0);
                let se = (p * (1.0 - p) / nf).sqrt();
                if se > 0.0 {
                    worst = worst.max((e - p).abs() / se);
                }
                table.push(vec![k as f64, *p, e, se]);
            }
            write_table(&out, &table)?;
            let mut o = Outcome::new(model.digest(), seed);
            for (key, v) in [("gamma", gamma), ("omega", omega), ("t", t)] {
                o.params.insert(key.into(), Value::from(v));
            }
            o.params.insert("n_max".into(), Value::from(n_max));
            o.params.insert("n".into(), Value::from(n));
            o.params.insert("seed".into(), Value::from(seed));
            o.summary.push(format!("max_standardized_deviation {worst:.3}"));
            finish(name, &argv, &out, o)
        }
        Command::Discriminate { model, history, out } => {
            let loaded = model.load(expected)?;
            let file = read_history(&history)?;
            let h = ClassicalHistory::new(file.history)?;
            let candidates = file
                .candidates
                .iter()
                .enumerate()
                .map(|(k, c)| Ok(c.to_state(&loaded.model, &format!("candidates[{k}]"))?))
                .collect::<Result<Vec<_>>>()?;
            let scores = discriminate_initial_state(&loaded.model, &candidates, &h)?;
            let mut table = Table::new(["candidate", "score"]).integer_column("candidate");
            for (k, s) in scores.iter().enumerate() {
                table.push(vec![k as f64, *s]);
            }
            write_table(&out, &table)?;
            let best = scores
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (k, &s)| if s > acc.1 { (k, s) } else { acc });
            let mut o = Outcome::new(loaded.model.digest(), 0);
            model.record(&mut o.params);
            o.params.insert("history".into(), Value::from(history.display().to_string()));
            o.summary.push(format!("most_probable {} score {:.6}", best.0, best.1));
            finish(name, &argv, &out, o)
        }
        Command::ValidateLog { log, model } => {
            let logs = io::read_event_log_file(&log)?;
            let loaded = if model.is_given() { Some(model.load(expected)?) } else { None };
            let summary =
                io::validate_event_logs(&logs, loaded.as_ref().map(|l| &l.model)).map_err(CliError::Validation)?;
            println!("valid trajectories {} events {}", summary.trajectories, summary.events);
            Ok(())
        }
        Command::Replay { manifest, out } => {
            let recorded = io::read_manifest(&manifest)?;
            let argv = replace_out(recorded.argv.clone(), out.as_deref());
            let mut full = vec!["hybrid-pdp".to_string()];
            full.extend(argv.iter().cloned());
            let cli = Cli::try_parse_from(&full).map_err(|e| CliError::Usage(e.to_string()))?;
            if matches!(cli.command, Command::Replay { .. }) {
                return Err(CliError::Usage("a manifest cannot record a replay".into()));
            }
            let digest = (!recorded.model_digest.is_empty()).then_some(recorded.model_digest);
            run(cli, argv, digest)
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HistoryFile {
    history: Vec<(f64, usize)>,
    candidates: Vec<InitialConfig>,
}

fn read_history(path: &Path) -> Result<HistoryFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Points `--out` at `out`, keeping the rest of the command line.
fn replace_out(mut argv: Vec<String>, out: Option<&Path>) -> Vec<String> {
    let Some(out) = out else { return argv };
    let value = out.display().to_string();
    if let Some(k) = argv.iter().position(|a| a == "--out") {
        if k + 1 < argv.len() {
            argv[k + 1] = value;
            return argv;
        }
        argv.truncate(k);
    } else if let Some(k) = argv.iter().position(|a| a.starts_with("--out=")) {
        argv[k] = format!("--out={value}");
        return argv;
    }
    argv.push("--out".into());
    argv.push(value);
    argv
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn out_is_replaced_or_appended() {
        let p = Path::new("/tmp/b");
        assert_eq!(
            replace_out(strings(&["trajectory", "--out", "/tmp/a", "--seed", "1"]), Some(p)),
            strings(&["trajectory", "--out", "/tmp/b", "--seed", "1"])
        );
        assert_eq!(
            replace_out(strings(&["trajectory", "--out=/tmp/a"]), Some(p)),
            strings(&["trajectory", "--out=/tmp/b"])
        );
        assert_eq!(
            replace_out(strings(&["master"]), Some(p)),
            strings(&["master", "--out", "/tmp/b"])
        );
        assert_eq!(replace_out(strings(&["master"]), None), strings(&["master"]));
    }

    #[test]
    fn flags_parse_with_defaults() {
        let cli = Cli::try_parse_from(["hybrid-pdp", "ensemble", "--gamma", "1", "--omega", "2"]).unwrap();
        match cli.command {
            Command::Ensemble { sample, model, .. } => {
                assert_eq!((sample.seed, sample.n, sample.grid), (0, 1000, 0.05));
                assert_eq!((model.gamma, model.omega), (Some(1.0), Some(2.0)));
            }
            _ => panic!(),
        }
        assert!(Cli::try_parse_from(["hybrid-pdp", "ensemble", "--gamma", "1"]).is_err());
        assert!(Cli::try_parse_from(["hybrid-pdp", "nonsense"]).is_err());
    }

    #[test]
    fn model_source_must_be_unique() {
        let args = ModelArgs {
            model: Some(PathBuf::from("m.json")),
            gamma: Some(1.0),
            omega: Some(2.0),
            n_max: None,
        };
        assert_eq!(args.load(None).err().map(|e| e.exit_code()), Some(1));
        let none = ModelArgs {
            model: None,
            gamma: None,
            omega: None,
            n_max: None,
        };
        assert_eq!(none.load(None).err().map(|e| e.exit_code()), Some(1));
    }
}
