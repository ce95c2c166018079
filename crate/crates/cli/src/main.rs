//! `mbcool`: command-line front end for the measurement-based cooling simulator.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mbcool::checks;
use mbcool::protocol::{
    emit_figure_data, fig1_data, gamma_grid, run_protocol, sweep_reserved_state, FigureData,
    FigureId, ProtocolConfig, RunManifest, ScheduleSource,
};
use mbcool::schedule::checkpoint::Checkpoint;
use mbcool::schedule::train;
use serde_json::Value;

#[derive(Parser)]
#[command(
    name = "mbcool",
    version,
    about = "Measurement-based resonator cooling: simulate, optimize, sweep"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the two-step protocol once.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Integrate the master equation even at γ = 0.
        #[arg(long)]
        open: bool,
    },
    /// Train a step-one schedule with distributed PPO.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        updates: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Sweep the first reserved state and decay rate.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Write every figure table.
    Figures {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Run the acceptance checks.
    Check {
        /// Comma-separated criterion numbers (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

/// Run parameters. Values from `--config` take precedence over flags.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// TOML file with the same keys as the flags (snake_case), plus [train].
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resonator frequency ω_b in rad/s.
    #[arg(long)]
    omega_b: Option<f64>,
    /// Bath temperature in kelvin.
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    g_ratio: Option<f64>,
    #[arg(long)]
    detuning_ratio: Option<f64>,
    #[arg(long)]
    n_r: Option<usize>,
    /// Number of unconditional rounds M.
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    gamma_ratio: Option<f64>,
    /// equal | beam | train | path to a JSON schedule.
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[arg(long, default_value_t = 5)]
    n_r_min: usize,
    #[arg(long, default_value_t = 12)]
    n_r_max: usize,
    /// Decay rates as multiples of γ_0 = 1e-5 ω_b.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.5, 1.0, 1.5])]
    gammas: Vec<f64>,
}

impl RunArgs {
    /// Defaults, then flags, then the config file.
    fn resolve(&self) -> Result<ProtocolConfig> {
        let mut config = ProtocolConfig::default();
        macro_rules! flag {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { config.$f = v; })* };
        }
        flag!(
            omega_b,
            temp,
            g_ratio,
            detuning_ratio,
            n_r,
            rounds,
            gamma_ratio,
            seed,
            out
        );
        if let Some(s) = &self.schedule {
            config.schedule = ScheduleSource::parse(s);
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let file: Value =
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let mut merged = serde_json::to_value(&config)?;
            merge(&mut merged, file);
            config = serde_json::from_value(merged)
                .with_context(|| format!("invalid config in {}", path.display()))?;
        }
        Ok(config)
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn write_manifest(dir: &Path, manifest: RunManifest, outputs: &[PathBuf]) -> Result<PathBuf> {
    let mut manifest = manifest;
    manifest.outputs = outputs.iter().map(|p| p.display().to_string()).collect();
    Ok(manifest.write(dir)?)
}

fn simulate(config: &ProtocolConfig) -> Result<()> {
    let result = run_protocol(config)?;
    let data = FigureData::Protocol(&result);
    let outputs = vec![
        emit_figure_data(&config.out, &data, FigureId::Fig2)?,
        emit_figure_data(&config.out, &data, FigureId::Fig3)?,
    ];
    let manifest = write_manifest(
        &config.out,
        RunManifest::new("simulate", config).with_result(&result),
        &outputs,
    )?;
    println!(
        "F = {:.9}  n̄ = {:.3e}  P_s = {:.6}  F_r = {:.6}  ({})",
        result.fidelity,
        result.mean_occupation,
        result.success_prob,
        result.reserved_fidelity,
        if result.open {
            "master equation"
        } else {
            "closed maps"
        }
    );
    println!("schedule {:?}", result.schedule.actions);
    println!("manifest {}", manifest.display());
    Ok(())
}

fn run_train(config: &ProtocolConfig) -> Result<()> {
    let params = config.validate()?.with_gamma(0.0);
    let tc = config.train_config();
    std::fs::create_dir_all(&config.out)?;
    let log_path = config.out.join("train_log.csv");
    let result = train(&params, &tc, Some(&log_path))?;
    let ck = config.out.join("checkpoint.json");
    Checkpoint::new(result.policy.clone(), &tc).save(&ck)?;
    let schedule = config.out.join("schedule.json");
    std::fs::write(&schedule, serde_json::to_vec_pretty(&result.schedule)?)?;
    let mut pinned = config.clone();
    pinned.schedule = ScheduleSource::Actions(result.schedule.actions.clone());
    let mut manifest = RunManifest::new("train", &pinned);
    manifest.summary = serde_json::json!({
        "reserved_fidelity": result.fidelity,
        "equal_spacing_fidelity": result.baseline_fidelity,
        "failed": result.failed,
        "aborted": result.aborted,
        "config_hash": result.config_hash,
    });
    write_manifest(&config.out, manifest, &[log_path, ck, schedule])?;
    println!(
        "F_r = {:.6} (equal spacing {:.6})",
        result.fidelity, result.baseline_fidelity
    );
    println!("schedule {:?}", result.schedule.actions);
    if let Some(reason) = &result.aborted {
        bail!("training aborted: {reason}");
    }
    if result.failed {
        bail!("trained schedule does not beat equal spacing");
    }
    Ok(())
}

fn sweep(config: &ProtocolConfig, grid: &GridArgs) -> Result<PathBuf> {
    if grid.n_r_min > grid.n_r_max {
        bail!("empty n_r range {}..={}", grid.n_r_min, grid.n_r_max);
    }
    let n_rs: Vec<usize> = (grid.n_r_min..=grid.n_r_max).collect();
    let gammas = gamma_grid(config.omega_b, &grid.gammas);
    let rows = sweep_reserved_state(config, &n_rs, &gammas)?;
    for r in &rows {
        println!(
            "n_r = {:2}  γ = {:.3e}  F = {:.6}  P_s = {:.6}",
            r.n_r, r.gamma, r.fidelity, r.success_prob
        );
    }
    Ok(emit_figure_data(
        &config.out,
        &FigureData::Sweep(&rows),
        FigureId::Fig4,
    )?)
}

fn figures(config: &ProtocolConfig, grid: &GridArgs) -> Result<()> {
    let fig1 = fig1_data(config)?;
    let mut outputs = Vec::new();
    for id in [FigureId::Fig1a, FigureId::Fig1b, FigureId::Fig1c] {
        outputs.push(emit_figure_data(&config.out, &FigureData::Fig1(&fig1), id)?);
    }
    let result = run_protocol(config)?;
    for id in [FigureId::Fig2, FigureId::Fig3] {
        outputs.push(emit_figure_data(
            &config.out,
            &FigureData::Protocol(&result),
            id,
        )?);
    }
    outputs.push(sweep(config, grid)?);
    write_manifest(
        &config.out,
        RunManifest::new("figures", config).with_result(&result),
        &outputs,
    )?;
    for p in &outputs {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn check(only: &[u8]) -> Result<bool> {
    let mut all_passed = true;
    for (i, f) in checks::all().into_iter().enumerate() {
        let id = i as u8 + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        match f() {
            Ok(c) => {
                all_passed &= c.passed;
                println!("{c}");
            }
            Err(e) => {
                all_passed = false;
                println!("FAIL [{id}] error: {e}");
            }
        }
    }
    Ok(all_passed)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Simulate { run, open } => run.resolve().and_then(|mut c| {
            c.open |= open;
            simulate(&c)
        }),
        Command::Train {
            run,
            updates,
            workers,
        } => run.resolve().and_then(|mut c| {
            if let Some(u) = updates {
                c.train.updates = *u;
            }
            if let Some(w) = workers {
                c.train.workers = *w;
            }
            run_train(&c)
        }),
        Command::Sweep { run, grid } => run.resolve().and_then(|c| {
            let path = sweep(&c, grid)?;
            write_manifest(&c.out, RunManifest::new("sweep", &c), &[path])?;
            Ok(())
        }),
        Command::Figures { run, grid } => run.resolve().and_then(|c| figures(&c, grid)),
        Command::Check { only } => match check(only) {
            Ok(true) => Ok(()),
            Ok(false) => {
                eprintln!("some checks failed");
                return ExitCode::from(1);
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
