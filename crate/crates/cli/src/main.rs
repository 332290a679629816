use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use jointprune::config::config_hash;
use jointprune::metrics::{bench_condensed_fc, emit_report};
use jointprune::pipeline::{
    choose_winner_rates, evaluate, joint_finetune, predict_threshold_study, sensitivity_sweep, train_dense,
};
use jointprune::{
    Checkpoint, CheckpointMeta, CsvReport, Dataset, EvalMode, ExperimentConfig, Network, Result, WinnerRateConfig,
};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "jointprune", version, about = "Joint weight and activation pruning experiments")]
struct Cli {
    /// Experiment config (TOML). Relative paths inside it resolve against its directory.
    #[arg(short, long, global = true, default_value = "jointprune.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the dense baseline.
    TrainDense {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-layer accuracy drop over the winner-rate grid on the validation split.
    SweepSensitivity {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Joint finetuning (weight pruning plus activation masks) from a dense checkpoint.
    Prune {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Prune weights only; no activation masks.
        #[arg(long)]
        weights_only: bool,
    },
    /// Test accuracy and MAC report of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Jp)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Effective-MAC report of a checkpoint over the test set.
    ReportMacs {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Jp)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dense vs condensed fc timing at batch size 1.
    BenchFc {
        #[arg(long)]
        inputs: Option<usize>,
        #[arg(long)]
        outputs: Option<usize>,
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy and winner counts with predicted thresholds, per down-sampling rate.
    PredictThresholdStudy {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated down-sampling rates (default: the config's grid).
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Mode {
    Dense,
    Wp,
    Jp,
}

impl From<Mode> for EvalMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Dense => EvalMode::Dense,
            Mode::Wp => EvalMode::WpOnly,
            Mode::Jp => EvalMode::Jp,
        }
    }
}

struct Ctx {
    cfg: ExperimentConfig,
    hash: u64,
}

impl Ctx {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| jointprune::Error::io(path, e))?;
        let mut cfg = ExperimentConfig::parse(&text)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(Ctx { cfg, hash: config_hash(&text) })
    }

    fn out(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.cfg.output_dir.join(default))
    }

    fn data(&self) -> Result<(Dataset, Dataset, Dataset)> {
        self.cfg.load_data()
    }

    fn network(&self, path: &Path) -> Result<Network<f32>> {
        let ck = Checkpoint::load(path)?;
        if ck.meta.model != self.cfg.model.name() {
            return Err(jointprune::Error::invalid(format!(
                "{} holds a `{}` model but the config is for `{}`",
                path.display(),
                ck.meta.model,
                self.cfg.model
            )));
        }
        Ok(ck.network)
    }

    fn save(&self, net: Network<f32>, epochs: usize, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            seed: self.cfg.train.seed,
            epochs: epochs as u32,
            config_hash: self.hash,
            model: self.cfg.model.name().to_string(),
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| jointprune::Error::io(dir, e))?;
        }
        Checkpoint::new(net, meta).save(path)
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::load(&cli.config)?;
    let cfg = &ctx.cfg;
    let t = &cfg.train;
    match cli.command {
        Command::TrainDense { out } => {
            let (train, val, test) = ctx.data()?;
            let mut net = cfg.model.build(t.base_dropout, t.seed)?;
            info!("training {} on {} images", cfg.model, train.len());
            let history = train_dense(&mut net, &train, Some(&val), t)?;
            let acc = evaluate(&net, &test, EvalMode::Dense, t.eval_batch_size)?.accuracy;
            let path = ctx.out(&out, "dense.jpnc");
            emit_report(&history, path.with_extension("history.csv"))?;
            ctx.save(net, t.epochs, &path)?;
            println!("train-dense: {} test accuracy {} after {} epochs -> {}", cfg.model, pct(acc), t.epochs, path.display());
        }
        Command::SweepSensitivity { checkpoint, out } => {
            let net = ctx.network(&ctx.out(&checkpoint, "dense.jpnc"))?;
            let (_, val, _) = ctx.data()?;
            let curve = sensitivity_sweep(&net, &val, &cfg.prune.rate_grid, t.eval_batch_size)?;
            let chosen = choose_winner_rates(&curve, cfg.prune.tolerable_drop)?;
            let path = ctx.out(&out, "sensitivity.csv");
            emit_report(&curve, &path)?;
            println!(
                "sweep-sensitivity: {} rows, baseline {}, rates within a {} drop: {:?} -> {}",
                curve.rows().len(),
                pct(curve.baseline_accuracy),
                pct(cfg.prune.tolerable_drop),
                chosen.rate_list(net.num_weight_layers()),
                path.display()
            );
        }
        Command::Prune { checkpoint, out, weights_only } => {
            let mut net = ctx.network(&ctx.out(&checkpoint, "dense.jpnc"))?;
            let (train, val, test) = ctx.data()?;
            let rates = if weights_only {
                WinnerRateConfig::dense()
            } else {
                match cfg.prune.rates()? {
                    Some(r) => r,
                    None => {
                        info!("no winner rates configured; choosing them from a sensitivity sweep");
                        let curve = sensitivity_sweep(&net, &val, &cfg.prune.rate_grid, t.eval_batch_size)?;
                        let mut r = choose_winner_rates(&curve, cfg.prune.tolerable_drop)?;
                        r.offset_seed = cfg.prune.offset_seed;
                        r
                    }
                }
            };
            let history = joint_finetune(&mut net, &rates, t, &train, Some(&val))?;
            let mode = if weights_only { EvalMode::WpOnly } else { EvalMode::Jp };
            let r = evaluate(&net, &test, mode, t.eval_batch_size)?;
            let path = ctx.out(&out, if weights_only { "wp.jpnc" } else { "jp.jpnc" });
            emit_report(&history, path.with_extension("history.csv"))?;
            let density = net.total_weight_density();
            ctx.save(net, history.records.len(), &path)?;
            println!(
                "prune: test accuracy {}, weight density {}, activation density {}, MACs {} -> {}",
                pct(r.accuracy),
                pct(density),
                pct(r.report.activation_density()),
                pct(r.report.mac_fraction()),
                path.display()
            );
        }
        Command::Eval { checkpoint, mode, out } | Command::ReportMacs { checkpoint, mode, out } => {
            let net = ctx.network(&checkpoint)?;
            let (_, _, test) = ctx.data()?;
            let r = evaluate(&net, &test, mode.into(), t.eval_batch_size)?;
            let path = ctx.out(&out, &format!("macs_{mode:?}.csv").to_lowercase());
            emit_report(&r.report, &path)?;
            println!(
                "{mode:?}: test accuracy {} ({}/{}), weight density {}, activation density {}, MACs {} -> {}",
                pct(r.accuracy),
                r.correct,
                test.len(),
                pct(r.report.weight_density()),
                pct(r.report.activation_density()),
                pct(r.report.mac_fraction()),
                path.display()
            );
        }
        Command::BenchFc { inputs, outputs, rate, trials, out } => {
            let b = &cfg.bench;
            let r = bench_condensed_fc(
                inputs.unwrap_or(b.inputs),
                outputs.unwrap_or(b.outputs),
                rate.unwrap_or(b.rate),
                trials.unwrap_or(b.trials),
                t.seed,
            )?;
            let path = ctx.out(&out, "bench_fc.csv");
            emit_report(&r, &path)?;
            println!(
                "bench-fc: {}x{} at rate {}: {:.2}x ({:.1}us dense, {:.1}us selected){} -> {}",
                r.inputs,
                r.outputs,
                r.rate,
                r.speedup,
                r.time_original * 1e6,
                r.time_prune_plus_mac * 1e6,
                if r.unstable { ", unstable timings" } else { "" },
                path.display()
            );
        }
        Command::PredictThresholdStudy { checkpoint, grid, out } => {
            let net = ctx.network(&checkpoint)?;
            let rates = net
                .winner_rates()
                .cloned()
                .or(cfg.prune.rates()?)
                .ok_or_else(|| jointprune::Error::invalid("no winner rates in the checkpoint or config"))?;
            let grid = if grid.is_empty() { cfg.prune.downsample_grid.clone() } else { grid };
            let (_, _, test) = ctx.data()?;
            let study = predict_threshold_study(&net, &test, &rates, &grid, t.eval_batch_size)?;
            let path = ctx.out(&out, "prediction.csv");
            emit_report(&study, &path)?;
            let drops: Vec<String> =
                study.points.iter().map(|p| format!("{}: {}", p.downsample_rate, pct(p.drop()))).collect();
            println!("predict-threshold-study: exact {}, drop by eps {} -> {}", pct(study.points[0].exact_accuracy), drops.join(", "), path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
