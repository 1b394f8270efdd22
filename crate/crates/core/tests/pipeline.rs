use std::path::Path;

use crossseg::config::ExperimentConfig;
use crossseg::eval::EvalSeries;
use crossseg::pipeline::{run_grid, run_pipeline, GridPreset, RunOptions, RunRecord, Stage};
use crossseg::plots::read_plot_csv;
use crossseg::Error;

fn tiny_toml(out: &Path, variant: &str) -> String {
    format!(
        r#"
seed = 5
output_dir = "{out}"
window_days = 5

[data.synthetic]
n_stocks = 3
n_days = 800
drift = 0.0005
predictability = 0.5

[splits.train]
start = "2000-01-03"
end = "2001-12-31"
[splits.validation]
start = "2002-01-01"
end = "2002-06-30"
[splits.test]
start = "2002-07-01"
end = "2003-12-31"

[features]
ma_windows = [5, 20]
vol_windows = [5]
rsi_windows = [14]

[predictor]
members = 2
[predictor.train]
linear_hidden = 8
gru_hidden = 8
epochs = 2
batch_size = 128

[segmentation]
variant = "{variant}"

[ppo]
horizon = 128
minibatch = 64
epochs = 2
total_timesteps = 1024

[policy]
width = 16

[search]
trials = 1
realizations = 1
"#,
        out = out.display()
    )
}

fn tiny(out: &Path, variant: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&tiny_toml(out, variant)).unwrap()
}

fn run(cfg: &ExperimentConfig, resume: bool) -> RunRecord {
    run_pipeline(
        cfg,
        RunOptions {
            resume,
            stop_after: None,
        },
    )
    .unwrap()
    .record()
    .unwrap()
}

#[test]
fn pipeline_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "quarters");
    let rec = run(&cfg, false);
    assert_eq!(rec.series.records.len(), 8);
    assert_eq!(rec.metrics.timesteps, 1024);
    for f in [
        "config.toml",
        "data/SYN000.csv",
        "predictors/manifest.json",
        "predictors/evaluation.ckpt",
        "predictors/quarters-p0-s1.ckpt",
        "signals/intermediate/provenance.csv",
        "signals/stream_11.csv",
        "signals/validation.csv",
        "signals/test.csv",
        "agent/eval_log.csv",
        "agent/policy.ckpt",
        "baseline.csv",
        "run_record.json",
        "plots/curves_tc0_p0.csv",
        "plots/test_sharpe_tc0_p0.svg",
        "plots/gen_ratio_tc0_p0.svg",
    ] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    assert!(!dir.path().join("signals/stream_12.csv").exists());
    let stored = RunRecord::load(&dir.path().join("run_record.json")).unwrap();
    assert_eq!(stored, rec);
    let baseline = std::fs::read_to_string(dir.path().join("baseline.csv")).unwrap();
    assert_eq!(baseline.lines().filter(|l| !l.starts_with('#')).count(), 12);
}

#[test]
fn plot_data_round_trips_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let rec = run(&tiny(dir.path(), "halves"), false);
    let rows = read_plot_csv(&dir.path().join("plots/curves_tc0_p0.csv")).unwrap();
    assert_eq!(rows.len(), rec.series.records.len());
    let smoothed = rec.series.smoothed_test();
    for ((row, r), s) in rows.iter().zip(&rec.series.records).zip(smoothed) {
        assert_eq!(row.variant, "halves");
        assert_eq!(row.timestep, r.timestep);
        assert_eq!(row.test_sharpe, r.test_sharpe);
        assert_eq!(row.smoothed_test_sharpe, s);
        assert_eq!(row.gen_ratio, r.gen_ratio);
    }
}

#[test]
fn identical_config_and_seed_reproduce_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run(&tiny(a.path(), "second_half"), false);
    let rb = run(&tiny(b.path(), "second_half"), false);
    assert_eq!(ra.config_hash, rb.config_hash);
    assert_eq!(ra.input_address, rb.input_address);
    assert_eq!(ra.series, rb.series);
    assert_eq!(ra.metrics, rb.metrics);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let whole = tempfile::tempdir().unwrap();
    let parts = tempfile::tempdir().unwrap();
    let reference = run(&tiny(whole.path(), "quarters"), false);

    let cfg = tiny(parts.path(), "quarters");
    for stage in [
        Stage::Ingest,
        Stage::Predictors,
        Stage::Signals,
        Stage::Agent,
    ] {
        let out = run_pipeline(
            &cfg,
            RunOptions {
                resume: true,
                stop_after: Some(stage),
            },
        )
        .unwrap();
        assert!(out.record().is_none());
    }
    // Damage a later artifact: completed stages must not be recomputed.
    let log = parts.path().join("agent/eval_log.csv");
    let before = std::fs::read_to_string(&log).unwrap();
    let resumed = run(&cfg, true);
    assert_eq!(std::fs::read_to_string(&log).unwrap(), before);
    assert_eq!(resumed.series, reference.series);
    assert_eq!(resumed.metrics, reference.metrics);
    assert_eq!(resumed.config_hash, reference.config_hash);
}

#[test]
fn resume_refuses_a_directory_from_another_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path(), "halves");
    run_pipeline(
        &cfg,
        RunOptions {
            resume: false,
            stop_after: Some(Stage::Ingest),
        },
    )
    .unwrap();
    let other = ExperimentConfig {
        seed: 6,
        ..cfg.clone()
    };
    let err = run_pipeline(
        &other,
        RunOptions {
            resume: true,
            stop_after: None,
        },
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn config_hash_tracks_semantic_fields_only() {
    let base = tiny_toml(Path::new("/tmp/a"), "quarters");
    let h = ExperimentConfig::from_toml_str(&base).unwrap().hash();
    // Formatting, comments and the output directory do not matter.
    let reformatted = base.replace(" = ", "=").replace('\n', "\n\n# note\n");
    assert_eq!(
        ExperimentConfig::from_toml_str(&reformatted)
            .unwrap()
            .hash(),
        h
    );
    let moved = tiny_toml(Path::new("/elsewhere"), "quarters");
    assert_eq!(ExperimentConfig::from_toml_str(&moved).unwrap().hash(), h);
    // Restating a default explicitly does not matter either.
    let explicit = format!("{base}\n[env]\npenalty = 1.5\n");
    assert_eq!(
        ExperimentConfig::from_toml_str(&explicit).unwrap().hash(),
        h
    );
    // Any meaningful change does.
    for changed in [
        base.replace("seed = 5", "seed = 6"),
        base.replace("members = 2", "members = 3"),
        base.replace("\"quarters\"", "\"halves\""),
        format!("{base}\n[env]\ntc = 0.001\n"),
    ] {
        assert_ne!(ExperimentConfig::from_toml_str(&changed).unwrap().hash(), h);
    }
}

#[test]
fn grid_preset_has_sixteen_rows_in_table_order() {
    let cells = GridPreset::PaperGrid.cells();
    assert_eq!(cells.len(), 16);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path(), "quarters");
    cfg.ppo.total_timesteps = 256;
    let out = run_grid(&cfg, GridPreset::PaperGrid, RunOptions::default()).unwrap();
    assert_eq!(out.rows.len(), 16);
    let text = std::fs::read_to_string(dir.path().join("trial_table.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "data_split,tc,portfolio,best_val_sharpe,best_test_sharpe,wall_time,depth,width,lr,entropy"
    );
    assert_eq!(lines.len(), 17);
    let keys: Vec<String> = lines[1..]
        .iter()
        .map(|l| l.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    let mut expected = Vec::new();
    for v in ["Full", "Quarters", "Halves", "Second Half"] {
        for tc in ["0", "0.001"] {
            for p in ["0", "1"] {
                expected.push(format!("{v},{tc},{p}"));
            }
        }
    }
    assert_eq!(keys, expected);
    for cell in &cells {
        let log = dir
            .path()
            .join(cell.variant.name())
            .join(cell.dir_name())
            .join("eval_log.csv");
        let series = EvalSeries::read_csv(std::fs::File::open(log).unwrap()).unwrap();
        assert_eq!(series.records.len(), 2);
    }
    assert!(dir.path().join("plots/curves_tc0.001_p1.csv").exists());
}

#[test]
fn shipped_configs_parse_and_smoke_config_runs() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        names.push(path.file_name().unwrap().to_string_lossy().to_string());
    }
    assert!(names.contains(&"smoke.toml".to_string()));
    let out = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&dir.join("smoke.toml")).unwrap();
    cfg.output_dir = out.path().to_path_buf();
    assert_eq!(run(&cfg, false).metrics.timesteps, 2048);
}
