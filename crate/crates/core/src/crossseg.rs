//! Temporal cross-segmentation of the training range.
//!
//! The training range is cut into `k` contiguous segments. For every ordered
//! pairing `(i, j)` with `i != j`, an ensemble trained on segment `i` emits
//! signals over segment `j`, so the agent only ever sees out-of-sample
//! signals. The `full` variant trains and emits over the whole range and is
//! flagged as waiving that guarantee.
//!
//! A predictor trains on windows whose as-of and label dates both fall inside
//! its segment, so training labels never cross a boundary. Signals cover every
//! window whose as-of date lies in the signal segment. Look-back rows may
//! reach into earlier segments.

use std::collections::BTreeSet;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DateSplit;
use crate::error::{Error, Result};
use crate::features::FeatureWindow;
use crate::predictor::{PredictorConfig, PredictorModel, SignalPanel};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitVariant {
    Full,
    Halves,
    Quarters,
    SecondHalf,
}

impl SplitVariant {
    pub const ALL: [SplitVariant; 4] = [Self::Full, Self::Halves, Self::Quarters, Self::SecondHalf];

    pub fn segments(self) -> usize {
        match self {
            Self::Full => 1,
            Self::Halves | Self::SecondHalf => 2,
            Self::Quarters => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Halves => "halves",
            Self::Quarters => "quarters",
            Self::SecondHalf => "second_half",
        }
    }

    /// Display label used in tables and plot legends.
    pub fn label(self) -> &'static str {
        match self {
            Self::Full => "Full",
            Self::Halves => "Halves",
            Self::Quarters => "Quarters",
            Self::SecondHalf => "Second Half",
        }
    }
}

impl fmt::Display for SplitVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts the snake-case name or the display label.
impl FromStr for SplitVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s || v.label() == s)
            .ok_or_else(|| Error::config(format!("unknown split variant '{s}'")))
    }
}

/// An ordered (predictor segment, signal segment) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pairing {
    pub predictor: usize,
    pub signal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationPlan {
    pub variant: SplitVariant,
    pub k: usize,
    pub segments: Vec<DateSplit>,
    pub pairings: Vec<Pairing>,
}

impl SegmentationPlan {
    /// True when signals are emitted over the predictor's own training dates.
    pub fn waives_disjointness(&self) -> bool {
        self.variant == SplitVariant::Full
    }

    /// Date range of the ensemble producing validation and test signals: the
    /// union of every predictor segment in the plan.
    pub fn evaluation_range(&self) -> (NaiveDate, NaiveDate) {
        let used: BTreeSet<usize> = self.pairings.iter().map(|p| p.predictor).collect();
        let first = *used.iter().next().expect("plan has pairings");
        let last = *used.iter().next_back().expect("plan has pairings");
        (self.segments[first].start, self.segments[last].end)
    }
}

/// Cuts the trading days of `calendar` inside `[start, end]` into the
/// variant's segments (near-equal day counts) and lists its pairings.
pub fn make_plan(
    variant: SplitVariant,
    start: NaiveDate,
    end: NaiveDate,
    calendar: &[NaiveDate],
) -> Result<SegmentationPlan> {
    if start > end {
        return Err(Error::config(format!(
            "training range {start}..{end} is empty"
        )));
    }
    let days: Vec<NaiveDate> = calendar
        .iter()
        .copied()
        .filter(|d| start <= *d && *d <= end)
        .collect();
    let k = variant.segments();
    // Each segment needs at least one labelled window: two consecutive days.
    if days.len() < 2 * k {
        return Err(Error::config(format!(
            "training range has {} trading days, too short to split {k} ways",
            days.len()
        )));
    }
    let segments = (0..k)
        .map(|s| {
            let lo = s * days.len() / k;
            let hi = (s + 1) * days.len() / k - 1;
            DateSplit::new(format!("segment_{s}"), days[lo], days[hi])
        })
        .collect::<Result<Vec<_>>>()?;
    let pairings = match variant {
        SplitVariant::Full => vec![Pairing {
            predictor: 0,
            signal: 0,
        }],
        SplitVariant::SecondHalf => vec![Pairing {
            predictor: 0,
            signal: 1,
        }],
        SplitVariant::Halves | SplitVariant::Quarters => (0..k)
            .flat_map(|i| {
                (0..k).filter(move |&j| j != i).map(move |j| Pairing {
                    predictor: i,
                    signal: j,
                })
            })
            .collect(),
    };
    Ok(SegmentationPlan {
        variant,
        k,
        segments,
        pairings,
    })
}

/// Windows whose as-of and label dates both lie in `[start, end]`.
pub fn windows_in(
    windows: &[FeatureWindow],
    start: NaiveDate,
    end: NaiveDate,
) -> Vec<FeatureWindow> {
    windows
        .iter()
        .filter(|w| start <= w.as_of && w.label_date <= end)
        .cloned()
        .collect()
}

/// Windows whose as-of date lies in `[start, end]`.
pub fn signal_windows_in(
    windows: &[FeatureWindow],
    start: NaiveDate,
    end: NaiveDate,
) -> Vec<FeatureWindow> {
    windows
        .iter()
        .filter(|w| start <= w.as_of && w.as_of <= end)
        .cloned()
        .collect()
}

/// How many ensembles back the pairings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsemblePer {
    /// An independently seeded ensemble for every pairing.
    #[default]
    Pairing,
    /// One ensemble per predictor segment, shared by its pairings.
    Segment,
}

/// How pairings that cover the same dates reach the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamMode {
    /// One episode stream per pairing.
    #[default]
    Separate,
    /// Signals for the same signal segment are averaged into one stream.
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSegConfig {
    pub ensemble_per: EnsemblePer,
    pub streams: StreamMode,
}

/// Which predictor produced a signal segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pairing: Pairing,
    pub predictor_range: (NaiveDate, NaiveDate),
    pub signal_range: (NaiveDate, NaiveDate),
    pub ensemble_id: String,
    /// Signals overlap the predictor's training dates by construction.
    pub waived: bool,
    /// Distinct as-of dates of the predictor's training windows.
    pub predictor_dates: Vec<NaiveDate>,
}

#[derive(Debug, Clone)]
pub struct IntermediateSegment {
    pub panel: SignalPanel,
    pub provenance: Provenance,
}

#[derive(Debug, Clone)]
pub struct IntermediateDataset {
    pub plan: SegmentationPlan,
    pub segments: Vec<IntermediateSegment>,
    pub ensembles: Vec<TrainedEnsemble>,
}

impl IntermediateDataset {
    /// Pairings whose emitted signal dates intersect the predictor's training
    /// dates, ignoring pairings flagged as waived.
    pub fn disjointness_violations(&self) -> Vec<Pairing> {
        self.segments
            .iter()
            .filter(|s| !s.provenance.waived)
            .filter(|s| {
                let trained: BTreeSet<&NaiveDate> = s.provenance.predictor_dates.iter().collect();
                s.panel.calendar.iter().any(|d| trained.contains(d))
            })
            .map(|s| s.provenance.pairing)
            .collect()
    }

    /// Writes `segment_<i>_<j>.csv` signal files plus the provenance sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for s in &self.segments {
            let p = s.provenance.pairing;
            s.panel
                .save(&dir.join(format!("segment_{}_{}.csv", p.predictor, p.signal)))?;
        }
        write_provenance(&self.segments, &dir.join("provenance.csv"))
    }
}

/// Sidecar header: `pairing,predictor_segment_range,signal_segment_range,ensemble_checkpoint_ids`.
pub fn write_provenance(segments: &[IntermediateSegment], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "pairing,predictor_segment_range,signal_segment_range,ensemble_checkpoint_ids"
    )?;
    for s in segments {
        let p = &s.provenance;
        writeln!(
            out,
            "{}->{},{}..{},{}..{},{}",
            p.pairing.predictor,
            p.pairing.signal,
            p.predictor_range.0,
            p.predictor_range.1,
            p.signal_range.0,
            p.signal_range.1,
            p.ensemble_id
        )?;
    }
    out.flush()?;
    Ok(())
}

fn range_of(split: &DateSplit) -> (NaiveDate, NaiveDate) {
    (split.start, split.end)
}

/// One trained ensemble and the predictor segment it was fit on.
#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub id: String,
    pub segment: usize,
    pub model: Arc<PredictorModel>,
}

/// Identifier of the ensemble serving `pairing`.
pub fn ensemble_id(variant: SplitVariant, per: EnsemblePer, pairing: Pairing) -> String {
    match per {
        EnsemblePer::Pairing => format!("{variant}-p{}-s{}", pairing.predictor, pairing.signal),
        EnsemblePer::Segment => format!("{variant}-p{}", pairing.predictor),
    }
}

fn segment_windows(plan: &SegmentationPlan, windows: &[FeatureWindow]) -> Vec<Vec<FeatureWindow>> {
    plan.segments
        .iter()
        .map(|s| windows_in(windows, s.start, s.end))
        .collect()
}

/// Trains every ensemble the plan needs, in parallel.
///
/// `windows` are raw windows over the whole panel.
pub fn train_ensembles(
    plan: &SegmentationPlan,
    windows: &[FeatureWindow],
    predictor: &PredictorConfig,
    cross: &CrossSegConfig,
    seed: u64,
) -> Result<Vec<TrainedEnsemble>> {
    predictor.validate()?;
    let seg_windows = segment_windows(plan, windows);
    for p in &plan.pairings {
        if seg_windows[p.predictor].is_empty() {
            return Err(Error::config(format!(
                "predictor segment {} ({}..{}) has no feature windows",
                p.predictor, plan.segments[p.predictor].start, plan.segments[p.predictor].end
            )));
        }
    }
    // (ensemble id, predictor segment, seed) for every distinct training job.
    let jobs: Vec<(String, usize, u64)> = match cross.ensemble_per {
        EnsemblePer::Pairing => plan
            .pairings
            .iter()
            .enumerate()
            .map(|(q, p)| {
                (
                    ensemble_id(plan.variant, cross.ensemble_per, *p),
                    p.predictor,
                    derive_seed(seed, q as u64),
                )
            })
            .collect(),
        EnsemblePer::Segment => plan
            .pairings
            .iter()
            .map(|p| p.predictor)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|i| {
                let id = ensemble_id(
                    plan.variant,
                    cross.ensemble_per,
                    Pairing {
                        predictor: i,
                        signal: i,
                    },
                );
                (id, i, derive_seed(seed, 100 + i as u64))
            })
            .collect(),
    };
    jobs.par_iter()
        .map(|(id, seg, s)| {
            log::info!(
                "training ensemble {id} on {} windows",
                seg_windows[*seg].len()
            );
            Ok(TrainedEnsemble {
                id: id.clone(),
                segment: *seg,
                model: Arc::new(PredictorModel::train(&seg_windows[*seg], predictor, *s)?),
            })
        })
        .collect()
}

/// Emits each pairing's signals from already trained ensembles.
pub fn emit_intermediate(
    plan: &SegmentationPlan,
    windows: &[FeatureWindow],
    tickers: &[String],
    ensembles: &[TrainedEnsemble],
    cross: &CrossSegConfig,
) -> Result<IntermediateDataset> {
    let seg_windows = segment_windows(plan, windows);
    let segments = plan
        .pairings
        .par_iter()
        .map(|p| {
            let id = ensemble_id(plan.variant, cross.ensemble_per, *p);
            let ensemble = ensembles
                .iter()
                .find(|e| e.id == id)
                .ok_or_else(|| Error::config(format!("no trained ensemble '{id}'")))?;
            let seg = &plan.segments[p.signal];
            let target = signal_windows_in(windows, seg.start, seg.end);
            if target.is_empty() {
                return Err(Error::config(format!(
                    "signal segment {} has no feature windows",
                    p.signal
                )));
            }
            let signals = ensemble.model.signals(&target)?;
            let panel =
                SignalPanel::from_windows(tickers, &target, &signals, ensemble.model.members())?;
            let predictor_dates: BTreeSet<NaiveDate> =
                seg_windows[p.predictor].iter().map(|w| w.as_of).collect();
            Ok(IntermediateSegment {
                panel,
                provenance: Provenance {
                    pairing: *p,
                    predictor_range: range_of(&plan.segments[p.predictor]),
                    signal_range: range_of(&plan.segments[p.signal]),
                    ensemble_id: id,
                    waived: plan.waives_disjointness(),
                    predictor_dates: predictor_dates.into_iter().collect(),
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IntermediateDataset {
        plan: plan.clone(),
        segments,
        ensembles: ensembles.to_vec(),
    })
}

/// Trains the plan's ensembles and emits each pairing's signals.
pub fn build_intermediate(
    plan: &SegmentationPlan,
    windows: &[FeatureWindow],
    tickers: &[String],
    predictor: &PredictorConfig,
    cross: &CrossSegConfig,
    seed: u64,
) -> Result<IntermediateDataset> {
    let ensembles = train_ensembles(plan, windows, predictor, cross, seed)?;
    emit_intermediate(plan, windows, tickers, &ensembles, cross)
}

/// Episode streams for the agent, in pairing order (or signal-segment order when averaging).
pub fn assemble_agent_data(
    intermediate: &IntermediateDataset,
    mode: StreamMode,
) -> Result<Vec<SignalPanel>> {
    match mode {
        StreamMode::Separate => Ok(intermediate
            .segments
            .iter()
            .map(|s| s.panel.clone())
            .collect()),
        StreamMode::Average => {
            let targets: BTreeSet<usize> = intermediate
                .segments
                .iter()
                .map(|s| s.provenance.pairing.signal)
                .collect();
            targets
                .into_iter()
                .map(|j| {
                    let panels: Vec<SignalPanel> = intermediate
                        .segments
                        .iter()
                        .filter(|s| s.provenance.pairing.signal == j)
                        .map(|s| s.panel.clone())
                        .collect();
                    SignalPanel::average(&panels)
                })
                .collect()
        }
    }
}

/// Trains the ensemble behind validation and test signals on the plan's evaluation range.
pub fn train_evaluation_model(
    plan: &SegmentationPlan,
    windows: &[FeatureWindow],
    predictor: &PredictorConfig,
    seed: u64,
) -> Result<PredictorModel> {
    let (start, end) = plan.evaluation_range();
    PredictorModel::train(
        &windows_in(windows, start, end),
        predictor,
        derive_seed(seed, 1000),
    )
}

/// Signals over every window whose as-of date lies in `split`.
pub fn split_signals(
    model: &PredictorModel,
    windows: &[FeatureWindow],
    tickers: &[String],
    split: &DateSplit,
) -> Result<SignalPanel> {
    let ws = signal_windows_in(windows, split.start, split.end);
    if ws.is_empty() {
        return Err(Error::EmptySplit(split.name.clone()));
    }
    let signals = model.signals(&ws)?;
    SignalPanel::from_windows(tickers, &ws, &signals, model.members())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::business_days;

    fn cal(n: usize) -> Vec<NaiveDate> {
        business_days(NaiveDate::from_ymd_opt(2010, 1, 4).unwrap(), n)
    }

    #[test]
    fn pairing_counts() {
        let c = cal(400);
        let (s, e) = (c[0], c[399]);
        let count = |v| make_plan(v, s, e, &c).unwrap().pairings.len();
        assert_eq!(count(SplitVariant::Full), 1);
        assert_eq!(count(SplitVariant::Halves), 2);
        assert_eq!(count(SplitVariant::Quarters), 12);
        assert_eq!(count(SplitVariant::SecondHalf), 1);
        let sh = make_plan(SplitVariant::SecondHalf, s, e, &c).unwrap();
        assert_eq!(
            sh.pairings,
            vec![Pairing {
                predictor: 0,
                signal: 1
            }]
        );
    }

    #[test]
    fn segments_partition_the_range() {
        let c = cal(403);
        let plan = make_plan(SplitVariant::Quarters, c[0], c[402], &c).unwrap();
        let mut covered = 0;
        for (i, seg) in plan.segments.iter().enumerate() {
            covered += c.iter().filter(|d| seg.contains(**d)).count();
            if i > 0 {
                let prev_end = c
                    .iter()
                    .position(|d| *d == plan.segments[i - 1].end)
                    .unwrap();
                assert_eq!(c[prev_end + 1], seg.start);
            }
        }
        assert_eq!(covered, 403);
        assert!(plan.pairings.iter().all(|p| p.predictor != p.signal));
    }

    #[test]
    fn short_range_is_config_error() {
        let c = cal(7);
        assert!(matches!(
            make_plan(SplitVariant::Quarters, c[0], c[6], &c),
            Err(Error::Config(_))
        ));
        let c8 = cal(8);
        assert!(make_plan(SplitVariant::Quarters, c8[0], c8[6], &c8).is_err());
        assert!(make_plan(SplitVariant::Quarters, c8[0], c8[7], &c8).is_ok());
    }

    #[test]
    fn evaluation_range_of_second_half_is_first_half() {
        let c = cal(100);
        let plan = make_plan(SplitVariant::SecondHalf, c[0], c[99], &c).unwrap();
        assert_eq!(plan.evaluation_range(), (c[0], c[49]));
        let q = make_plan(SplitVariant::Quarters, c[0], c[99], &c).unwrap();
        assert_eq!(q.evaluation_range(), (c[0], c[99]));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in SplitVariant::ALL {
            assert_eq!(v.name().parse::<SplitVariant>().unwrap(), v);
        }
        assert!("thirds".parse::<SplitVariant>().is_err());
    }
}
