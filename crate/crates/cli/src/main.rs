//! `crossseg` command-line entry point.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crossseg::config::ExperimentConfig;
use crossseg::data::{gen_synthetic, write_ohlcv};
use crossseg::eval::{baseline_table, write_baseline_table};
use crossseg::features::write_feature_rows;
use crossseg::pipeline::{
    load_signals, load_source, run_grid, run_pipeline, run_search, GridPreset, RunOptions,
    RunOutput, RunRecord, Stage,
};
use crossseg::plots::emit_plots;
use crossseg::seeding::derive_seed;
use crossseg::{Error, Result};

#[derive(Parser)]
#[command(
    name = "crossseg",
    version,
    about = "Cross-segmented prediction and trading-agent experiments"
)]
struct Cli {
    /// Experiment config (TOML); omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Skip stages already completed in the output directory.
    #[arg(long, global = true)]
    resume: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load (or generate) the price panel into <out>/data.
    Ingest,
    /// Write a synthetic panel as per-ticker CSV files into <out>.
    Synth,
    /// Write per-day feature rows into <out>/features.
    Features,
    /// Train the segment ensembles and the evaluation ensemble.
    TrainPredictor,
    /// Emit agent-training, validation and test signals.
    Signals,
    /// Train the trading agent.
    TrainAgent,
    /// Finish the pipeline and print the run metrics.
    Evaluate,
    /// Threshold baseline table on the test signals.
    Baseline,
    /// Hyperparameter search for the configured setting.
    Search,
    /// Full pipeline, or a named grid of runs.
    Run {
        /// Grid preset, e.g. `paper-grid`.
        #[arg(long)]
        preset: Option<String>,
    },
    /// Overlay plots from run directories containing run_record.json.
    Plot { runs: Vec<PathBuf> },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stage(cfg: &ExperimentConfig, stop: Stage) -> Result<RunOutput> {
    // Single-stage commands always reuse completed earlier stages.
    run_pipeline(
        cfg,
        RunOptions {
            resume: true,
            stop_after: Some(stop),
        },
    )
}

fn print_record(r: &RunRecord) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
    let m = &r.metrics;
    println!("config hash          {}", r.config_hash);
    println!("timesteps            {}", m.timesteps);
    println!("final train Sharpe   {}", fmt(m.final_train_sharpe));
    println!("final val Sharpe     {}", fmt(m.final_validation_sharpe));
    println!("final test Sharpe    {}", fmt(m.final_test_sharpe));
    println!("final gen ratio      {}", fmt(m.final_gen_ratio));
    println!("best smoothed val    {}", fmt(m.best_smoothed_validation));
    println!("test at best val     {}", fmt(m.test_at_best_validation));
    println!("buy-and-hold test    {:.4}", m.buy_and_hold_test_sharpe);
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cfg.output_dir;
    match &cli.command {
        Command::Ingest => {
            stage(&cfg, Stage::Ingest)?;
            println!("panel written to {}", out.join("data").display());
        }
        Command::Synth => {
            let panel = gen_synthetic(&cfg.data.synthetic, derive_seed(cfg.seed, 1))?;
            for s in panel.to_series() {
                println!("{}", write_ohlcv(&s, out)?.display());
            }
        }
        Command::Features => {
            let panel = load_source(&cfg)?;
            for path in write_feature_rows(&panel, &cfg.features, &out.join("features"))? {
                println!("{}", path.display());
            }
        }
        Command::TrainPredictor => {
            stage(&cfg, Stage::Predictors)?;
            println!("checkpoints in {}", out.join("predictors").display());
        }
        Command::Signals => {
            stage(&cfg, Stage::Signals)?;
            println!("signals in {}", out.join("signals").display());
        }
        Command::TrainAgent => {
            stage(&cfg, Stage::Agent)?;
            println!(
                "evaluation log {}",
                out.join("agent/eval_log.csv").display()
            );
        }
        Command::Evaluate => {
            let rec = run_pipeline(
                &cfg,
                RunOptions {
                    resume: true,
                    stop_after: None,
                },
            )?
            .record()
            .ok_or_else(|| Error::Contract("pipeline stopped early".into()))?;
            print_record(&rec);
        }
        Command::Baseline => {
            stage(&cfg, Stage::Signals)?;
            let data = load_signals(&out.join("signals"))?;
            let rows = baseline_table(&data.test, &cfg.baseline.thresholds, cfg.baseline.tc)?;
            write_baseline_table(&rows, &out.join("baseline.csv"))?;
            println!("threshold  sharpe_no_tc  sharpe_tc");
            for r in rows {
                println!(
                    "{:>9.2}  {:>12.4}  {:>9.4}",
                    r.threshold, r.sharpe_no_tc, r.sharpe_tc
                );
            }
        }
        Command::Search => {
            let result = run_search(
                &cfg,
                RunOptions {
                    resume: cli.resume,
                    stop_after: None,
                },
            )?;
            match result.best {
                Some(b) => {
                    let t = &result.trials[b];
                    println!(
                        "best trial {b}: depth {} width {} lr {:e} entropy {:e} objective {:.4}",
                        t.params.depth,
                        t.params.width,
                        t.params.learning_rate,
                        t.params.entropy,
                        t.objective().unwrap_or(f64::NAN)
                    );
                }
                None => return Err(Error::Numerical("every trial failed".into())),
            }
        }
        Command::Run { preset } => {
            let opts = RunOptions {
                resume: cli.resume,
                stop_after: None,
            };
            match preset {
                Some(name) => {
                    let grid = run_grid(&cfg, name.parse::<GridPreset>()?, opts)?;
                    println!(
                        "{} runs; trial table {}",
                        grid.rows.len(),
                        out.join("trial_table.csv").display()
                    );
                }
                None => {
                    let rec = run_pipeline(&cfg, opts)?
                        .record()
                        .ok_or_else(|| Error::Contract("pipeline stopped early".into()))?;
                    print_record(&rec);
                }
            }
        }
        Command::Plot { runs } => {
            if runs.is_empty() {
                return Err(Error::Config(
                    "plot needs at least one run directory".into(),
                ));
            }
            let records = runs
                .iter()
                .map(|d| RunRecord::load(&d.join("run_record.json")))
                .collect::<Result<Vec<_>>>()?;
            for path in emit_plots(&records, &out.join("plots"))? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
