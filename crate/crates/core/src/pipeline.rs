//! End-to-end experiment runner.
//!
//! Stages run in order and each writes its artifacts under the output
//! directory, then a marker `stages/<stage>.done` holding the config hash.
//! Later stages always read their inputs back from disk, so a resumed run
//! and an uninterrupted run see identical data.
//!
//! ```text
//! <out>/config.toml
//! <out>/data/<TICKER>.csv                 ingest
//! <out>/predictors/*.ckpt, manifest.json  predictors
//! <out>/signals/...                       signals
//! <out>/agent/eval_log.csv, policy.ckpt   agent
//! <out>/baseline.csv, run_record.json     evaluate
//! <out>/plots/*.csv, *.svg                evaluate
//! ```

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSourceKind, ExperimentConfig};
use crate::crossseg::{
    assemble_agent_data, emit_intermediate, make_plan, split_signals, train_ensembles,
    train_evaluation_model, SegmentationPlan, SplitVariant, TrainedEnsemble,
};
use crate::data::{
    align_panel, gen_synthetic, load_dir, series_to_csv, write_ohlcv, AlignPolicy, AlignedPanel,
};
use crate::error::{Error, Result};
use crate::eval::{
    baseline_table, generalization_ratio, hyper_search, realization_seed, threshold_baseline,
    write_baseline_table, write_trial_table, EvalSeries, SearchResult, TrialParams, TrialRow,
};
use crate::features::{build_windows, FeatureWindow};
use crate::plots::emit_plots;
use crate::ppo::{train_agent, AgentData, PolicyConfig, PpoHyper};
use crate::predictor::{PredictorModel, SignalPanel};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Ingest,
    Predictors,
    Signals,
    Agent,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Self::Ingest,
        Self::Predictors,
        Self::Signals,
        Self::Agent,
        Self::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ingest => "ingest",
            Self::Predictors => "predictors",
            Self::Signals => "signals",
            Self::Agent => "agent",
            Self::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Skip stages whose completion marker matches the config hash.
    pub resume: bool,
    /// Stop after this stage (used by the single-stage CLI commands).
    pub stop_after: Option<Stage>,
}

/// Headline numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub final_train_sharpe: Option<f64>,
    pub final_validation_sharpe: Option<f64>,
    pub final_test_sharpe: Option<f64>,
    /// Trailing-mean test Sharpe over trailing-mean train Sharpe at the last period.
    pub final_gen_ratio: Option<f64>,
    pub best_smoothed_validation: Option<f64>,
    /// Smoothed test Sharpe at the period of best smoothed validation Sharpe.
    pub test_at_best_validation: Option<f64>,
    pub buy_and_hold_test_sharpe: f64,
    pub timesteps: u64,
}

impl RunMetrics {
    pub fn compute(
        series: &EvalSeries,
        test: &SignalPanel,
        tc: f64,
        timesteps: u64,
    ) -> Result<Self> {
        let last = series.last();
        let smoothed = |v: Vec<f64>| v.last().copied();
        let final_gen_ratio = match (
            smoothed(series.smoothed_test()),
            smoothed(series.smoothed_train()),
        ) {
            (Some(te), Some(tr)) => generalization_ratio(te, tr),
            _ => None,
        };
        Ok(Self {
            final_train_sharpe: last.map(|r| r.train_sharpe),
            final_validation_sharpe: last.map(|r| r.val_sharpe),
            final_test_sharpe: last.map(|r| r.test_sharpe),
            final_gen_ratio,
            best_smoothed_validation: series.best_smoothed_validation(),
            test_at_best_validation: series.test_at_best_validation(),
            buy_and_hold_test_sharpe: threshold_baseline(test, 0.0, tc)?.sharpe,
            timesteps,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config_hash: String,
    /// SHA-256 content address of the ingested panel.
    pub input_address: String,
    pub seed: u64,
    pub variant: SplitVariant,
    pub tc: f64,
    pub include_portfolio: bool,
    pub series: EvalSeries,
    /// Checkpoint paths relative to the run directory.
    pub checkpoints: Vec<String>,
    pub wall_clock_secs: f64,
    pub metrics: RunMetrics,
}

impl RunRecord {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

/// Output directory with stage markers.
struct Workspace {
    dir: PathBuf,
    hash: String,
    resume: bool,
}

impl Workspace {
    fn open(dir: &Path, hash: String, resume: bool) -> Result<Self> {
        let stages = dir.join("stages");
        if !resume && stages.exists() {
            std::fs::remove_dir_all(&stages)?;
        }
        std::fs::create_dir_all(&stages)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            hash,
            resume,
        })
    }

    fn marker(&self, stage: &str) -> PathBuf {
        self.dir.join("stages").join(format!("{stage}.done"))
    }

    fn done(&self, stage: &str) -> Result<bool> {
        let path = self.marker(stage);
        if !self.resume || !path.exists() {
            return Ok(false);
        }
        let stored = std::fs::read_to_string(&path)?;
        if stored.trim() != self.hash {
            return Err(Error::config(format!(
                "{} was produced by a different configuration; use a fresh output directory or drop --resume",
                self.dir.display()
            )));
        }
        log::info!("stage {stage} already complete, skipping");
        Ok(true)
    }

    fn mark(&self, stage: &str) -> Result<()> {
        std::fs::write(self.marker(stage), &self.hash)?;
        Ok(())
    }
}

fn fresh_dir(path: &Path) -> Result<()> {
    if path.exists() {
        std::fs::remove_dir_all(path)?;
    }
    std::fs::create_dir_all(path)?;
    Ok(())
}

/// Loads the configured data source (CSV directory or synthetic generator).
pub fn load_source(cfg: &ExperimentConfig) -> Result<AlignedPanel> {
    match cfg.data.source {
        DataSourceKind::Synthetic => gen_synthetic(&cfg.data.synthetic, derive_seed(cfg.seed, 1)),
        DataSourceKind::Csv => align_panel(&load_dir(&cfg.data.csv_dir)?, cfg.data.align),
    }
}

/// SHA-256 over the canonical CSV form of every stock in the panel.
pub fn input_address(panel: &AlignedPanel) -> String {
    let mut h = Sha256::new();
    h.update(format!("panel {}\0", panel.n_stocks()).as_bytes());
    for s in panel.to_series() {
        h.update(s.ticker.as_bytes());
        h.update([0]);
        h.update(series_to_csv(&s).as_bytes());
    }
    hex::encode(h.finalize())
}

fn ingest(ws: &Workspace, cfg: &ExperimentConfig) -> Result<AlignedPanel> {
    let dir = ws.dir.join("data");
    if !ws.done(Stage::Ingest.name())? {
        let panel = load_source(cfg)?;
        fresh_dir(&dir)?;
        for s in panel.to_series() {
            write_ohlcv(&s, &dir)?;
        }
        ws.mark(Stage::Ingest.name())?;
    }
    align_panel(&load_dir(&dir)?, AlignPolicy::Intersection)
}

pub fn plan_for(cfg: &ExperimentConfig, panel: &AlignedPanel) -> Result<SegmentationPlan> {
    let t = &cfg.splits.train;
    make_plan(cfg.segmentation.variant, t.start, t.end, &panel.calendar)
}

pub fn windows_for(cfg: &ExperimentConfig, panel: &AlignedPanel) -> Result<Vec<FeatureWindow>> {
    Ok(build_windows(panel, cfg.window_days, &cfg.features)?.windows)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleEntry {
    id: String,
    segment: usize,
    suffixes: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PredictorManifest {
    ensembles: Vec<EnsembleEntry>,
    /// Ensemble id serving validation and test signals.
    evaluation: String,
}

const EVALUATION_ID: &str = "evaluation";

fn save_model(dir: &Path, id: &str, model: &PredictorModel) -> Result<Vec<String>> {
    let mut suffixes = Vec::new();
    for (suffix, ck) in model.checkpoints()? {
        ck.save(dir.join(format!("{id}{suffix}.ckpt")))?;
        suffixes.push(suffix);
    }
    Ok(suffixes)
}

fn load_model(dir: &Path, id: &str, suffixes: &[String]) -> Result<PredictorModel> {
    let parts = suffixes
        .iter()
        .map(|s| {
            Ok((
                s.clone(),
                Checkpoint::load(dir.join(format!("{id}{s}.ckpt")))?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    PredictorModel::from_checkpoints(&parts)
}

struct Predictors {
    ensembles: Vec<TrainedEnsemble>,
    evaluation: Arc<PredictorModel>,
    files: Vec<String>,
}

fn predictors(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    plan: &SegmentationPlan,
    windows: &[FeatureWindow],
) -> Result<Predictors> {
    let dir = ws.dir.join("predictors");
    if !ws.done(Stage::Predictors.name())? {
        fresh_dir(&dir)?;
        let seed = derive_seed(cfg.seed, 2);
        let trained = train_ensembles(
            plan,
            windows,
            &cfg.predictor,
            &cfg.segmentation.cross(),
            seed,
        )?;
        let mut entries = Vec::new();
        for e in &trained {
            entries.push(EnsembleEntry {
                id: e.id.clone(),
                segment: e.segment,
                suffixes: save_model(&dir, &e.id, &e.model)?,
            });
        }
        // The full variant's single ensemble already covers the evaluation range.
        let evaluation = if plan.variant == SplitVariant::Full {
            trained[0].id.clone()
        } else {
            let model = train_evaluation_model(plan, windows, &cfg.predictor, seed)?;
            entries.push(EnsembleEntry {
                id: EVALUATION_ID.into(),
                segment: usize::MAX,
                suffixes: save_model(&dir, EVALUATION_ID, &model)?,
            });
            EVALUATION_ID.to_string()
        };
        let manifest = PredictorManifest {
            ensembles: entries,
            evaluation,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        ws.mark(Stage::Predictors.name())?;
    }
    let manifest: PredictorManifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    let mut ensembles = Vec::new();
    let mut evaluation = None;
    let mut files = Vec::new();
    for e in &manifest.ensembles {
        let model = Arc::new(load_model(&dir, &e.id, &e.suffixes)?);
        files.extend(
            e.suffixes
                .iter()
                .map(|s| format!("predictors/{}{s}.ckpt", e.id)),
        );
        if e.id == manifest.evaluation {
            evaluation = Some(Arc::clone(&model));
        }
        if e.id != EVALUATION_ID {
            ensembles.push(TrainedEnsemble {
                id: e.id.clone(),
                segment: e.segment,
                model,
            });
        }
    }
    let evaluation = evaluation
        .ok_or_else(|| Error::Checkpoint("manifest lacks the evaluation ensemble".into()))?;
    Ok(Predictors {
        ensembles,
        evaluation,
        files,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SignalManifest {
    streams: Vec<(String, usize)>,
    validation_members: usize,
    test_members: usize,
}

/// Agent-facing signal panels of a run.
#[derive(Debug, Clone)]
pub struct SignalSet {
    pub streams: Vec<Arc<SignalPanel>>,
    pub validation: Arc<SignalPanel>,
    pub test: Arc<SignalPanel>,
}

impl SignalSet {
    pub fn agent_data(&self) -> AgentData {
        AgentData {
            train: self.streams.clone(),
            validation: Arc::clone(&self.validation),
            test: Arc::clone(&self.test),
        }
    }
}

fn signals(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    panel: &AlignedPanel,
    plan: &SegmentationPlan,
    windows: &[FeatureWindow],
    preds: &Predictors,
) -> Result<SignalSet> {
    let dir = ws.dir.join("signals");
    if !ws.done(Stage::Signals.name())? {
        fresh_dir(&dir)?;
        let cross = cfg.segmentation.cross();
        let intermediate =
            emit_intermediate(plan, windows, &panel.tickers, &preds.ensembles, &cross)?;
        intermediate.save(&dir.join("intermediate"))?;
        let streams = assemble_agent_data(&intermediate, cross.streams)?;
        let mut names = Vec::new();
        for (k, s) in streams.iter().enumerate() {
            let name = format!("stream_{k:02}.csv");
            s.save(&dir.join(&name))?;
            names.push((name, s.members));
        }
        let val = split_signals(
            &preds.evaluation,
            windows,
            &panel.tickers,
            &cfg.splits.validation,
        )?;
        let test = split_signals(&preds.evaluation, windows, &panel.tickers, &cfg.splits.test)?;
        val.save(&dir.join("validation.csv"))?;
        test.save(&dir.join("test.csv"))?;
        let manifest = SignalManifest {
            streams: names,
            validation_members: val.members,
            test_members: test.members,
        };
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        ws.mark(Stage::Signals.name())?;
    }
    load_signals(&dir)
}

/// Reads the signal panels written by the signals stage in `dir`.
pub fn load_signals(dir: &Path) -> Result<SignalSet> {
    let manifest: SignalManifest =
        serde_json::from_slice(&std::fs::read(dir.join("manifest.json"))?)?;
    Ok(SignalSet {
        streams: manifest
            .streams
            .iter()
            .map(|(name, m)| SignalPanel::load(&dir.join(name), *m).map(Arc::new))
            .collect::<Result<_>>()?,
        validation: Arc::new(SignalPanel::load(
            &dir.join("validation.csv"),
            manifest.validation_members,
        )?),
        test: Arc::new(SignalPanel::load(
            &dir.join("test.csv"),
            manifest.test_members,
        )?),
    })
}

fn agent(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    data: &SignalSet,
    policy: &PolicyConfig,
    ppo: &PpoHyper,
    seed: u64,
) -> Result<(EvalSeries, u64)> {
    let dir = ws.dir.join("agent");
    if !ws.done(Stage::Agent.name())? {
        fresh_dir(&dir)?;
        let outcome = train_agent(&data.agent_data(), &cfg.env, policy, ppo, seed)?;
        outcome.series.save(&dir.join("eval_log.csv"))?;
        outcome
            .params
            .to_checkpoint(seed)
            .save(dir.join("policy.ckpt"))?;
        std::fs::write(dir.join("timesteps"), outcome.timesteps.to_string())?;
        ws.mark(Stage::Agent.name())?;
    }
    let series = EvalSeries::read_csv(std::fs::File::open(dir.join("eval_log.csv"))?)?;
    let timesteps = std::fs::read_to_string(dir.join("timesteps"))?
        .trim()
        .parse()
        .map_err(|_| Error::Checkpoint("bad timesteps file".into()))?;
    Ok((series, timesteps))
}

struct RunContext {
    hash: String,
    input_address: String,
    checkpoints: Vec<String>,
    started: Instant,
}

fn evaluate(
    ws: &Workspace,
    cfg: &ExperimentConfig,
    ctx: &RunContext,
    data: &SignalSet,
    series: EvalSeries,
    timesteps: u64,
) -> Result<RunRecord> {
    let path = ws.dir.join("run_record.json");
    let metrics = RunMetrics::compute(&series, &data.test, cfg.env.tc, timesteps)?;
    let rows = baseline_table(&data.test, &cfg.baseline.thresholds, cfg.baseline.tc)?;
    write_baseline_table(&rows, &ws.dir.join("baseline.csv"))?;
    let record = RunRecord {
        config_hash: ctx.hash.clone(),
        input_address: ctx.input_address.clone(),
        seed: cfg.seed,
        variant: cfg.segmentation.variant,
        tc: cfg.env.tc,
        include_portfolio: cfg.env.include_portfolio,
        series,
        checkpoints: ctx.checkpoints.clone(),
        wall_clock_secs: ctx.started.elapsed().as_secs_f64(),
        metrics,
    };
    if ws.done(Stage::Evaluate.name())? {
        // Keep the original wall-clock time of a completed run.
        let mut stored = RunRecord::load(&path)?;
        stored.series = record.series;
        stored.metrics = record.metrics;
        return Ok(stored);
    }
    record.save(&path)?;
    emit_plots(std::slice::from_ref(&record), &ws.dir.join("plots"))?;
    ws.mark(Stage::Evaluate.name())?;
    Ok(record)
}

/// What a (possibly partial) pipeline run produced.
#[derive(Debug, Clone)]
pub enum RunOutput {
    Partial(Stage),
    Complete(Box<RunRecord>),
}

impl RunOutput {
    pub fn record(self) -> Option<RunRecord> {
        match self {
            Self::Complete(r) => Some(*r),
            Self::Partial(_) => None,
        }
    }
}

fn write_config(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

/// Runs ingest, predictor training, signal generation, agent training and
/// evaluation in `cfg.output_dir`.
pub fn run_pipeline(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let started = Instant::now();
    let hash = cfg.hash();
    write_config(cfg, &cfg.output_dir)?;
    let ws = Workspace::open(&cfg.output_dir, hash.clone(), opts.resume)?;
    let stop = |s: Stage| opts.stop_after == Some(s);

    let panel = ingest(&ws, cfg)?;
    if stop(Stage::Ingest) {
        return Ok(RunOutput::Partial(Stage::Ingest));
    }
    let plan = plan_for(cfg, &panel)?;
    let windows = windows_for(cfg, &panel)?;
    let preds = predictors(&ws, cfg, &plan, &windows)?;
    if stop(Stage::Predictors) {
        return Ok(RunOutput::Partial(Stage::Predictors));
    }
    let data = signals(&ws, cfg, &panel, &plan, &windows, &preds)?;
    if stop(Stage::Signals) {
        return Ok(RunOutput::Partial(Stage::Signals));
    }
    let (series, timesteps) = agent(
        &ws,
        cfg,
        &data,
        &cfg.policy,
        &cfg.ppo,
        derive_seed(cfg.seed, 3),
    )?;
    if stop(Stage::Agent) {
        return Ok(RunOutput::Partial(Stage::Agent));
    }
    let mut checkpoints = preds.files.clone();
    checkpoints.push("agent/policy.ckpt".into());
    let ctx = RunContext {
        hash,
        input_address: input_address(&panel),
        checkpoints,
        started,
    };
    Ok(RunOutput::Complete(Box::new(evaluate(
        &ws, cfg, &ctx, &data, series, timesteps,
    )?)))
}

/// Agent configuration of one search trial.
pub fn trial_configs(cfg: &ExperimentConfig, params: &TrialParams) -> (PolicyConfig, PpoHyper) {
    let policy = PolicyConfig {
        depth: params.depth,
        width: params.width,
        ..cfg.policy.clone()
    };
    let ppo = PpoHyper {
        learning_rate: params.learning_rate,
        ent_coef: params.entropy,
        ..cfg.ppo.clone()
    };
    (policy, ppo)
}

/// Hyperparameter search over the agent, reusing one signal set.
///
/// Returns the search result and, for the best trial, the evaluation series
/// of its first realization.
pub fn search_agent(
    cfg: &ExperimentConfig,
    data: &SignalSet,
    seed: u64,
) -> Result<(SearchResult, Option<EvalSeries>)> {
    let agent_data = data.agent_data();
    let kept: Mutex<Vec<(u64, EvalSeries)>> = Mutex::new(Vec::new());
    let result = hyper_search(&cfg.search, seed, |params, s| {
        let (policy, ppo) = trial_configs(cfg, params);
        let series = train_agent(&agent_data, &cfg.env, &policy, &ppo, s)?.series;
        kept.lock()
            .expect("search log lock")
            .push((s, series.clone()));
        Ok(series)
    })?;
    let best_series = result.best.and_then(|b| {
        let want = realization_seed(seed, b, 0);
        kept.lock()
            .expect("search log lock")
            .iter()
            .find(|(s, _)| *s == want)
            .map(|(_, series)| series.clone())
    });
    Ok((result, best_series))
}

/// Runs the search for `cfg`'s single setting, writing `trials.csv`.
pub fn run_search(cfg: &ExperimentConfig, opts: RunOptions) -> Result<SearchResult> {
    let signal_cfg = RunOptions {
        resume: opts.resume,
        stop_after: Some(Stage::Signals),
    };
    run_pipeline(cfg, signal_cfg)?;
    let data = load_signals(&cfg.output_dir.join("signals"))?;
    let (result, _) = search_agent(cfg, &data, derive_seed(cfg.seed, 4))?;
    let rows: Vec<TrialRow> = result
        .trials
        .iter()
        .map(|t| {
            TrialRow::from_trial(
                cfg.segmentation.variant.label(),
                cfg.env.tc,
                cfg.env.include_portfolio,
                t,
            )
        })
        .collect();
    write_trial_table(&rows, &cfg.output_dir.join("trials.csv"))?;
    Ok(result)
}

/// One setting of the experimental grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCell {
    pub variant: SplitVariant,
    pub tc: f64,
    pub portfolio: bool,
}

impl GridCell {
    pub fn dir_name(&self) -> String {
        format!(
            "{}_tc{}_p{}",
            self.variant,
            self.tc,
            u8::from(self.portfolio)
        )
    }
}

/// Named grid presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridPreset {
    /// 4 split variants x 2 trading costs x 2 state spaces.
    PaperGrid,
}

impl std::str::FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-grid" => Ok(Self::PaperGrid),
            other => Err(Error::config(format!("unknown grid preset '{other}'"))),
        }
    }
}

impl GridPreset {
    /// Cells in table order: variant, then cost, then portfolio flag.
    pub fn cells(self) -> Vec<GridCell> {
        let variants = [
            SplitVariant::Full,
            SplitVariant::Quarters,
            SplitVariant::Halves,
            SplitVariant::SecondHalf,
        ];
        let mut cells = Vec::new();
        for variant in variants {
            for tc in [0.0, 0.001] {
                for portfolio in [false, true] {
                    cells.push(GridCell {
                        variant,
                        tc,
                        portfolio,
                    });
                }
            }
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct GridOutput {
    /// Best trial per cell, in cell order.
    pub rows: Vec<TrialRow>,
    pub records: Vec<RunRecord>,
}

/// Runs every cell of `preset`: predictors and signals once per split
/// variant, then a hyperparameter search per cell. Writes `trial_table.csv`
/// and overlay plots to `cfg.output_dir`.
pub fn run_grid(
    cfg: &ExperimentConfig,
    preset: GridPreset,
    opts: RunOptions,
) -> Result<GridOutput> {
    cfg.validate()?;
    let cells = preset.cells();
    let mut rows = Vec::with_capacity(cells.len());
    let mut records = Vec::with_capacity(cells.len());
    let mut current: Option<(SplitVariant, SignalSet)> = None;
    for cell in &cells {
        let started = Instant::now();
        let mut vcfg = cfg.clone();
        vcfg.segmentation.variant = cell.variant;
        vcfg.output_dir = cfg.output_dir.join(cell.variant.name());
        if current.as_ref().map(|(v, _)| *v) != Some(cell.variant) {
            run_pipeline(
                &vcfg,
                RunOptions {
                    resume: opts.resume,
                    stop_after: Some(Stage::Signals),
                },
            )?;
            current = Some((
                cell.variant,
                load_signals(&vcfg.output_dir.join("signals"))?,
            ));
        }
        let data = &current.as_ref().expect("signals loaded").1;
        let mut ccfg = vcfg.clone();
        ccfg.env.tc = cell.tc;
        ccfg.env.include_portfolio = cell.portfolio;
        ccfg.output_dir = vcfg.output_dir.join(cell.dir_name());
        write_config(&ccfg, &ccfg.output_dir)?;
        let ws = Workspace::open(&ccfg.output_dir, ccfg.hash(), opts.resume)?;
        if !ws.done("search")? {
            let (result, best_series) = search_agent(&ccfg, data, derive_seed(ccfg.seed, 4))?;
            let trial_rows: Vec<TrialRow> = result
                .trials
                .iter()
                .map(|t| TrialRow::from_trial(cell.variant.label(), cell.tc, cell.portfolio, t))
                .collect();
            write_trial_table(&trial_rows, &ccfg.output_dir.join("trials.csv"))?;
            let best = result.best.ok_or_else(|| {
                Error::Numerical(format!("every trial failed in {}", cell.dir_name()))
            })?;
            let trial = &result.trials[best];
            std::fs::write(
                ccfg.output_dir.join("best_trial.json"),
                serde_json::to_vec_pretty(trial)?,
            )?;
            best_series
                .ok_or_else(|| Error::Numerical("best trial left no evaluation series".into()))?
                .save(&ccfg.output_dir.join("eval_log.csv"))?;
            ws.mark("search")?;
        }
        let trial: crate::eval::Trial =
            serde_json::from_slice(&std::fs::read(ccfg.output_dir.join("best_trial.json"))?)?;
        let series =
            EvalSeries::read_csv(std::fs::File::open(ccfg.output_dir.join("eval_log.csv"))?)?;
        let timesteps = series.last().map_or(0, |r| r.timestep);
        let metrics = RunMetrics::compute(&series, &data.test, cell.tc, timesteps)?;
        let record = RunRecord {
            config_hash: ccfg.hash(),
            input_address: input_address(&align_panel(
                &load_dir(vcfg.output_dir.join("data"))?,
                AlignPolicy::Intersection,
            )?),
            seed: ccfg.seed,
            variant: cell.variant,
            tc: cell.tc,
            include_portfolio: cell.portfolio,
            series,
            checkpoints: Vec::new(),
            wall_clock_secs: started.elapsed().as_secs_f64(),
            metrics,
        };
        record.save(&ccfg.output_dir.join("run_record.json"))?;
        rows.push(TrialRow::from_trial(
            cell.variant.label(),
            cell.tc,
            cell.portfolio,
            &trial,
        ));
        records.push(record);
    }
    write_trial_table(&rows, &cfg.output_dir.join("trial_table.csv"))?;
    emit_plots(&records, &cfg.output_dir.join("plots"))?;
    Ok(GridOutput { rows, records })
}
