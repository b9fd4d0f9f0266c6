//! The `gpg` command line.
//!
//! Every command resolves its output directory from `--out`, else
//! `$GPG_OUT_ROOT/<command>`, else `runs/<command>`, writes `manifest.json`
//! there before starting, and rewrites it with artifact checksums at the end.
//!
//! Exit status: 0 success, 1 I/O failure, 2 configuration or usage error,
//! 3 incompatible artifact, 4 numerical divergence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::env::record::{episode_rows, write_trajectory_csv};
use crate::error::{Error, Result};
use crate::plot::{plot, PlotKind};
use crate::policy::{AdamState, GcnPolicy, MlpPolicy, Policy};
use crate::trainer::{evaluate, ActionMode, CurveRecord, LearningCurve, TrainConfig, Trainer};
use crate::transfer::{sweep_transfer, write_reports_csv, zero_shot_eval, FormationKind};

pub const OUT_ROOT_VAR: &str = "GPG_OUT_ROOT";

#[derive(Debug, Parser)]
#[command(name = "gpg", version, about = "Graph policy gradients for robot swarms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding `trainer.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the graph policy.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue the run saved in this directory.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train the fully-connected baseline with the same loop.
    BaselineVpg {
        #[command(flatten)]
        common: Common,
    },
    /// Paired static and dynamic graph training over `ablation.seeds`.
    AblateGraph {
        #[command(flatten)]
        common: Common,
    },
    /// Deploy a trained checkpoint on one formation.
    Transfer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Formation name; defaults to `transfer.formation.kind`.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        n_robots: Option<usize>,
    },
    /// Deploy a checkpoint on every formation in `sweep.formations`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Render curve or trajectory CSVs to SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// learning_curve, trajectory or formation_snapshot
        #[arg(long, default_value = "learning_curve")]
        kind: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::BaselineVpg { .. } => "baseline-vpg",
            Command::AblateGraph { .. } => "ablate-graph",
            Command::Transfer { .. } => "transfer",
            Command::Sweep { .. } => "sweep",
            Command::Plot { .. } => "plot",
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: String,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    /// File name to SHA-256, filled in on completion.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, cfg: &RunConfig, out_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            version: format!("gpg {}", env!("CARGO_PKG_VERSION")),
            status: "running".into(),
            seed: cfg.trainer.seed,
            out_dir: out_dir.to_path_buf(),
            config_hash: format!("{:016x}", cfg.train_config().hash()),
            config: serde_json::to_value(cfg).expect("config serializes"),
            inputs: BTreeMap::new(),
            warnings: Vec::new(),
            artifacts: BTreeMap::new(),
        }
    }

    fn write(&self) -> Result<()> {
        let path = self.out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn record(&mut self, name: &str) -> Result<()> {
        self.artifacts.insert(name.to_string(), sha256_file(&self.out_dir.join(name))?);
        Ok(())
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn resolve_out(out: Option<&Path>, command: &str) -> PathBuf {
    match out {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_ROOT_VAR)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(command),
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    if let Some(seed) = common.seed {
        cfg.trainer.seed = seed;
    }
    Ok(cfg)
}

fn prepare(common: &Common, command: &str) -> Result<(RunConfig, RunManifest)> {
    let cfg = load_config(common)?;
    let out = resolve_out(common.out.as_deref(), command);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let manifest = RunManifest::new(command, &cfg, &out);
    manifest.write()?;
    Ok((cfg, manifest))
}

/// Runs `body`, then stamps the manifest with the outcome.
fn finish(mut manifest: RunManifest, body: impl FnOnce(&mut RunManifest) -> Result<()>) -> Result<()> {
    let res = body(&mut manifest);
    manifest.status = match &res {
        Ok(()) => "ok".into(),
        Err(e) => format!("failed: {e}"),
    };
    manifest.write()?;
    res
}

fn save_train_state<P>(dir: &Path, trainer: &Trainer<P>, save: impl Fn(&P, &Path) -> Result<()>) -> Result<()>
where
    P: Policy,
{
    save(trainer.policy(), &dir.join("policy.ckpt"))?;
    trainer.adam_state().save(&dir.join("adam.ckpt"))?;
    trainer.curve().write_csv(&dir.join("curve.csv"))
}

fn log_record(r: &CurveRecord) {
    if r.update % 10 == 0 {
        eprintln!(
            "update {:>5}  return {:>10.2}  collisions {:.2}  coverage {:.2}",
            r.update, r.mean_return, r.collision_rate, r.coverage_rate
        );
    }
}

fn write_eval<P: Policy>(m: &mut RunManifest, policy: &P, train: &TrainConfig) -> Result<()> {
    let summary = evaluate(policy, &train.env, 100, train.trainer.seed, ActionMode::Mean)?;
    let path = m.out_dir.join("eval.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    m.record("eval.json")?;
    eprintln!(
        "eval: coverage {:.2}  collision-free {:.2}  mean return {:.2}",
        summary.coverage_rate, summary.collision_free_rate, summary.mean_return
    );
    Ok(())
}

fn cmd_train(common: &Common, resume: Option<&Path>) -> Result<()> {
    let (cfg, mut manifest) = prepare(common, "train")?;
    let train = cfg.train_config();
    let mut trainer = match resume {
        None => Trainer::new(train.clone())?,
        Some(dir) => {
            let prev: serde_json::Value = serde_json::from_str(
                &std::fs::read_to_string(dir.join("manifest.json")).map_err(|e| Error::io(dir.join("manifest.json"), e))?,
            )
            .map_err(|e| Error::Incompatible(format!("{}: {e}", dir.display())))?;
            if prev["config_hash"].as_str() != Some(manifest.config_hash.as_str()) {
                return Err(Error::Incompatible(format!(
                    "{} was trained with config {}, this run resolves to {}",
                    dir.display(),
                    prev["config_hash"],
                    manifest.config_hash
                )));
            }
            manifest.inputs.insert("resume".into(), dir.display().to_string());
            Trainer::resume(
                train.clone(),
                GcnPolicy::load(&dir.join("policy.ckpt"))?,
                AdamState::load(&dir.join("adam.ckpt"))?,
                LearningCurve::read_csv(&dir.join("curve.csv"))?,
            )?
        }
    };
    finish(manifest, |m| {
        let dir = m.out_dir.clone();
        let every = train.trainer.checkpoint_every;
        trainer.run_with(|t, r| {
            log_record(r);
            if every > 0 && (r.update + 1) % every == 0 {
                save_train_state(&dir, t, GcnPolicy::save)?;
            }
            Ok(())
        })?;
        save_train_state(&dir, &trainer, GcnPolicy::save)?;
        for a in ["curve.csv", "policy.ckpt", "adam.ckpt"] {
            m.record(a)?;
        }
        write_eval(m, trainer.policy(), &train)
    })
}

fn cmd_baseline(common: &Common) -> Result<()> {
    let (cfg, manifest) = prepare(common, "baseline-vpg")?;
    let train = cfg.train_config();
    let mut trainer = Trainer::new_baseline(train.clone())?;
    finish(manifest, |m| {
        trainer.run_with(|_, r| {
            log_record(r);
            Ok(())
        })?;
        save_train_state(&m.out_dir, &trainer, MlpPolicy::save)?;
        for a in ["curve.csv", "policy.ckpt", "adam.ckpt"] {
            m.record(a)?;
        }
        write_eval(m, trainer.policy(), &train)
    })
}

/// First update whose trailing `window`-update mean return reaches `threshold`.
pub fn updates_to_threshold(curve: &LearningCurve, threshold: f64, window: usize) -> Option<usize> {
    let r = curve.mean_returns();
    (0..r.len()).find(|&i| {
        let lo = (i + 1).saturating_sub(window);
        r[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64 >= threshold
    })
}

#[derive(Serialize)]
struct OverlayRow<'a> {
    series: &'a str,
    seed: u64,
    update: usize,
    mean_return: f64,
    std_return: f64,
    collision_rate: f64,
    coverage_rate: f64,
}

#[derive(Serialize)]
struct AblationRow {
    seed: u64,
    threshold: f64,
    static_episodes: Option<usize>,
    dynamic_episodes: Option<usize>,
}

fn cmd_ablate(common: &Common) -> Result<()> {
    let (mut cfg, manifest) = prepare(common, "ablate-graph")?;
    if let Some(seed) = common.seed {
        cfg.ablation.seeds = vec![seed];
    }
    finish(manifest, |m| {
        let threshold = cfg.ablation.threshold(&cfg.env);
        let epu = cfg.trainer.episodes_per_update;
        let curves_path = m.out_dir.join("curves.csv");
        let mut curves = csv::Writer::from_path(&curves_path).map_err(|e| crate::env::record::csv_io(&curves_path, e))?;
        let mut summary = Vec::new();
        for &seed in &cfg.ablation.seeds {
            let mut reached = [None, None];
            for (k, (series, dynamic)) in [("static", false), ("dynamic", true)].into_iter().enumerate() {
                let mut train = cfg.train_config();
                train.trainer.seed = seed;
                train.env.dynamic_graph = dynamic;
                eprintln!("seed {seed}: {series} graph");
                let mut t = Trainer::new(train)?;
                t.run_with(|_, r| {
                    log_record(r);
                    Ok(())
                })?;
                for r in &t.curve().records {
                    curves.serialize(OverlayRow {
                        series,
                        seed,
                        update: r.update,
                        mean_return: r.mean_return,
                        std_return: r.std_return,
                        collision_rate: r.collision_rate,
                        coverage_rate: r.coverage_rate,
                    })?;
                }
                reached[k] = updates_to_threshold(t.curve(), threshold, cfg.ablation.window).map(|u| (u + 1) * epu);
            }
            summary.push(AblationRow {
                seed,
                threshold,
                static_episodes: reached[0],
                dynamic_episodes: reached[1],
            });
        }
        curves.flush().map_err(|e| Error::io(&curves_path, e))?;
        let summary_path = m.out_dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&summary_path).map_err(|e| crate::env::record::csv_io(&summary_path, e))?;
        for row in &summary {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&summary_path, e))?;
        m.record("curves.csv")?;
        m.record("summary.csv")
    })
}

fn parse_formation(name: &str) -> Result<FormationKind> {
    FormationKind::from_name(name).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown formation `{name}`; valid formations: {}",
            FormationKind::NAMES.join(", ")
        ))
    })
}

fn cmd_transfer(common: &Common, checkpoint: &Path, spec: Option<&str>, n_robots: Option<usize>) -> Result<()> {
    let kind = spec.map(parse_formation).transpose()?;
    let (cfg, mut manifest) = prepare(common, "transfer")?;
    manifest.inputs.insert("checkpoint".into(), checkpoint.display().to_string());
    finish(manifest, |m| {
        m.inputs.insert("checkpoint_sha256".into(), sha256_file(checkpoint)?);
        let policy = GcnPolicy::load(checkpoint)?;
        let mut formation = cfg.transfer.formation.clone();
        if let Some(k) = kind {
            formation.kind = k;
        }
        if let Some(n) = n_robots {
            formation.n_robots = n;
        }
        if formation.kind == FormationKind::FigureEight && policy.taps() < 3 {
            let w = format!(
                "figure_eight deployed with a K={} policy; crossings need 3-hop filters",
                policy.taps()
            );
            eprintln!("warning: {w}");
            m.warnings.push(w);
        }
        let mut env = cfg.env.clone();
        env.horizon = cfg.transfer.horizon;
        let mode = if cfg.transfer.stochastic { ActionMode::Sample } else { ActionMode::Mean };
        let run = zero_shot_eval(&policy, &formation, &env, cfg.transfer.episodes, cfg.trainer.seed, mode)?;
        write_reports_csv(&m.out_dir.join("report.csv"), std::slice::from_ref(&run.report))?;
        let rows = episode_rows(0, &run.states, &run.actions, &run.rewards);
        write_trajectory_csv(&m.out_dir.join("trajectory.csv"), &rows)?;
        m.record("report.csv")?;
        m.record("trajectory.csv")?;
        let r = &run.report;
        eprintln!(
            "{} x{}: coverage {:.3}  collisions {}  steps {}  mean final distance {:.4}",
            r.spec_name, r.n_robots, r.coverage, r.collisions, r.steps_to_cover, r.mean_final_dist
        );
        Ok(())
    })
}

fn cmd_sweep(common: &Common, checkpoint: &Path) -> Result<()> {
    let (cfg, mut manifest) = prepare(common, "sweep")?;
    manifest.inputs.insert("checkpoint".into(), checkpoint.display().to_string());
    finish(manifest, |m| {
        m.inputs.insert("checkpoint_sha256".into(), sha256_file(checkpoint)?);
        let policy = GcnPolicy::load(checkpoint)?;
        let mut env = cfg.env.clone();
        env.horizon = cfg.transfer.horizon;
        let reports = sweep_transfer(&policy, &cfg.sweep.formations, &env, cfg.transfer.episodes, cfg.trainer.seed)?;
        write_reports_csv(&m.out_dir.join("report.csv"), &reports)?;
        m.record("report.csv")
    })
}

fn cmd_plot(inputs: &[PathBuf], kind: &str, out: Option<&Path>) -> Result<()> {
    let kind_parsed = PlotKind::from_name(kind).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown plot kind `{kind}`; valid kinds: {}", PlotKind::NAMES.join(", ")))
    })?;
    let out = resolve_out(out, "plot");
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut manifest = RunManifest::new("plot", &RunConfig::default(), &out);
    for (i, p) in inputs.iter().enumerate() {
        manifest.inputs.insert(format!("input{i}"), p.display().to_string());
    }
    manifest.write()?;
    finish(manifest, |m| {
        let name = format!("{kind}.svg");
        let refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
        plot(kind_parsed, &refs, &m.out_dir.join(&name))?;
        m.record(&name)
    })
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train { common, resume } => cmd_train(common, resume.as_deref()),
        Command::BaselineVpg { common } => cmd_baseline(common),
        Command::AblateGraph { common } => cmd_ablate(common),
        Command::Transfer {
            common,
            checkpoint,
            spec,
            n_robots,
        } => cmd_transfer(common, checkpoint, spec.as_deref(), *n_robots),
        Command::Sweep { common, checkpoint } => cmd_sweep(common, checkpoint),
        Command::Plot { inputs, kind, out } => cmd_plot(inputs, kind, out.as_deref()),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
