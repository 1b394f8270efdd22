use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use crossseg::crossseg::{
    assemble_agent_data, build_intermediate, make_plan, CrossSegConfig, EnsemblePer,
    IntermediateDataset, Pairing, SplitVariant, StreamMode,
};
use crossseg::data::{gen_synthetic, AlignedPanel, SynthConfig};
use crossseg::features::{build_windows, FeatureSpec, FeatureWindow};
use crossseg::predictor::{PredictorConfig, TrainConfig};
use crossseg::Error;

fn small_spec() -> FeatureSpec {
    FeatureSpec {
        ma_windows: vec![5, 20],
        vol_windows: vec![5],
        rsi_windows: vec![14],
    }
}

fn tiny_predictor() -> PredictorConfig {
    PredictorConfig {
        members: 2,
        train: TrainConfig {
            linear_hidden: 4,
            gru_hidden: 4,
            epochs: 1,
            batch_size: 128,
            patience: 0,
            ..TrainConfig::default()
        },
        ..PredictorConfig::default()
    }
}

fn panel(days: usize) -> (AlignedPanel, Vec<FeatureWindow>) {
    let cfg = SynthConfig {
        n_stocks: 2,
        n_days: days,
        ..SynthConfig::default()
    };
    let p = gen_synthetic(&cfg, 3).unwrap();
    let w = build_windows(&p, 3, &small_spec()).unwrap().windows;
    (p, w)
}

fn build(
    variant: SplitVariant,
    p: &AlignedPanel,
    w: &[FeatureWindow],
    cross: CrossSegConfig,
) -> IntermediateDataset {
    let plan = make_plan(
        variant,
        p.calendar[0],
        *p.calendar.last().unwrap(),
        &p.calendar,
    )
    .unwrap();
    build_intermediate(&plan, w, &p.tickers, &tiny_predictor(), &cross, 11).unwrap()
}

/// Brute-force: collects each pairing's training dates straight from the plan
/// ranges and intersects them with the emitted signal dates.
fn overlaps(ds: &IntermediateDataset) -> Vec<(Pairing, usize)> {
    ds.segments
        .iter()
        .map(|s| {
            let seg = &ds.plan.segments[s.provenance.pairing.predictor];
            let mut count = 0;
            for d in &s.panel.calendar {
                if seg.start <= *d && *d <= seg.end {
                    count += 1;
                }
            }
            (s.provenance.pairing, count)
        })
        .collect()
}

#[test]
fn quarters_on_long_panel_are_disjoint() {
    let (p, w) = panel(2000);
    let ds = build(SplitVariant::Quarters, &p, &w, CrossSegConfig::default());
    assert_eq!(ds.plan.pairings.len(), 12);
    assert_eq!(ds.ensembles.len(), 12);
    let ids: BTreeSet<&String> = ds.ensembles.iter().map(|e| &e.id).collect();
    assert_eq!(ids.len(), 12);
    assert!(ds.disjointness_violations().is_empty());
    for (pairing, n) in overlaps(&ds) {
        assert_eq!(
            n, 0,
            "pairing {pairing:?} emits signals inside its training segment"
        );
    }
    // Segment date sets are pairwise disjoint.
    let sets: Vec<BTreeSet<NaiveDate>> = ds
        .plan
        .segments
        .iter()
        .map(|s| {
            p.calendar
                .iter()
                .copied()
                .filter(|d| s.contains(*d))
                .collect()
        })
        .collect();
    for i in 0..4 {
        for j in i + 1..4 {
            assert!(sets[i].is_disjoint(&sets[j]));
        }
    }
    for s in &ds.segments {
        let pr = s.provenance.predictor_range;
        assert!(s
            .provenance
            .predictor_dates
            .iter()
            .all(|d| pr.0 <= *d && *d <= pr.1));
        assert!(!s.provenance.waived);
    }
}

#[test]
fn halves_and_second_half_pairings() {
    let (p, w) = panel(600);
    let halves = build(SplitVariant::Halves, &p, &w, CrossSegConfig::default());
    assert_eq!(halves.segments.len(), 2);
    assert!(halves.disjointness_violations().is_empty());
    let sh = build(SplitVariant::SecondHalf, &p, &w, CrossSegConfig::default());
    let streams = assemble_agent_data(&sh, StreamMode::Separate).unwrap();
    assert_eq!(streams.len(), 1);
    let second = &sh.plan.segments[1];
    assert!(streams[0].calendar.iter().all(|d| second.contains(*d)));
}

#[test]
fn full_variant_is_flagged_waived() {
    let (p, w) = panel(500);
    let ds = build(SplitVariant::Full, &p, &w, CrossSegConfig::default());
    assert_eq!(ds.segments.len(), 1);
    assert!(ds.segments[0].provenance.waived);
    // Waived pairings do overlap, and are excluded from the violation report.
    assert!(overlaps(&ds)[0].1 > 0);
    assert!(ds.disjointness_violations().is_empty());
}

#[test]
fn quarters_triple_the_episode_days_of_full() {
    let (p, w) = panel(1000);
    let full = build(SplitVariant::Full, &p, &w, CrossSegConfig::default());
    let quarters = build(SplitVariant::Quarters, &p, &w, CrossSegConfig::default());
    let days = |ds: &IntermediateDataset| -> usize {
        assemble_agent_data(ds, StreamMode::Separate)
            .unwrap()
            .iter()
            .map(|s| s.n_days())
            .sum()
    };
    let streams = assemble_agent_data(&quarters, StreamMode::Separate).unwrap();
    assert_eq!(streams.len(), 12);
    assert_eq!(days(&quarters), 3 * days(&full));
    // Every quarter is the signal segment of exactly 3 streams.
    let mut per_target: BTreeMap<usize, usize> = BTreeMap::new();
    for s in &quarters.segments {
        *per_target.entry(s.provenance.pairing.signal).or_default() += 1;
    }
    assert!(per_target.values().all(|&c| c == 3));
}

#[test]
fn averaging_mode_merges_streams_per_segment() {
    let (p, w) = panel(1000);
    let cross = CrossSegConfig {
        streams: StreamMode::Average,
        ensemble_per: EnsemblePer::Segment,
    };
    let ds = build(SplitVariant::Quarters, &p, &w, cross);
    assert_eq!(ds.ensembles.len(), 4);
    let avg = assemble_agent_data(&ds, StreamMode::Average).unwrap();
    assert_eq!(avg.len(), 4);
    assert!(avg.iter().all(|s| s.members == 6));
    let first: Vec<_> = ds
        .segments
        .iter()
        .filter(|s| s.provenance.pairing.signal == 0)
        .map(|s| &s.panel)
        .collect();
    let expect = (first[0].signals[0][0] + first[1].signals[0][0] + first[2].signals[0][0]) / 3.0;
    assert!((avg[0].signals[0][0] - expect).abs() < 1e-12);
}

#[test]
fn empty_predictor_segment_is_config_error() {
    // The first quarter lies entirely inside the feature warm-up.
    let (p, w) = panel(60);
    let plan = make_plan(
        SplitVariant::Quarters,
        p.calendar[0],
        *p.calendar.last().unwrap(),
        &p.calendar,
    )
    .unwrap();
    let err = build_intermediate(
        &plan,
        &w,
        &p.tickers,
        &tiny_predictor(),
        &CrossSegConfig::default(),
        1,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn provenance_sidecar_lists_every_pairing() {
    let (p, w) = panel(600);
    let ds = build(SplitVariant::Halves, &p, &w, CrossSegConfig::default());
    let dir = tempfile::tempdir().unwrap();
    ds.save(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("provenance.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(
        lines[0],
        "pairing,predictor_segment_range,signal_segment_range,ensemble_checkpoint_ids"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0->1,"));
    assert!(dir.path().join("segment_1_0.csv").exists());
}
