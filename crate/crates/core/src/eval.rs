//! Window- and episode-level metrics, channel ranking and fallback
//! inference across per-channel models.

use std::fmt::Write as _;
use std::path::PathBuf;

use fog_nn::Network;
use thiserror::Error;

use crate::channel::Channel;
use crate::dataset::GafSample;
use crate::model::{ModelError, TrainedModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("value {value} at position {index} is not 0 or 1")]
    NonBinary { index: usize, value: u8 },
    #[error("window stream not strictly sorted at position {0}")]
    UnsortedInput(usize),
    #[error("predicted and true windows are not on the same grid (position {0})")]
    GridMismatch(usize),
    #[error("model for {0} has no test F1")]
    MissingF1(Channel),
    #[error("ranking needs single-channel models, got {0}")]
    NotSingleChannel(String),
    #[error("channel {0} ranked twice")]
    DuplicateChannel(Channel),
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("no ranked channel is functional in this window")]
    AllChannelsFailed,
    #[error("loading the {channel} model failed: {reason}")]
    ModelLoad { channel: Channel, reason: String },
    #[error(transparent)]
    Model(Box<ModelError>),
}

impl From<ModelError> for EvalError {
    fn from(e: ModelError) -> Self {
        EvalError::Model(Box::new(e))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Window,
    Episode,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Window => "window",
            Level::Episode => "episode",
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Confusion counts and the ratios derived from them. A ratio whose
/// denominator is zero is `None`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub level: Level,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub fpr: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(level: Level, counts: ConfusionCounts) -> Self {
        let ConfusionCounts { tp, fp, fn_, tn } = counts;
        let precision = ratio(tp, tp + fp);
        let sensitivity = ratio(tp, tp + fn_);
        let f1 = match (precision, sensitivity) {
            (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
            _ => None,
        };
        Self {
            level,
            counts,
            accuracy: ratio(tp + tn, counts.total()),
            precision,
            sensitivity,
            f1,
            fpr: ratio(fp, fp + tn),
        }
    }

    pub const CSV_HEADER: &'static str =
        "name,level,tp,fp,fn,tn,accuracy,precision,sensitivity,f1,fpr";

    pub fn csv_row(&self, name: &str) -> String {
        let c = self.counts;
        format!(
            "{name},{},{},{},{},{},{},{},{},{},{}",
            self.level.name(),
            c.tp,
            c.fp,
            c.fn_,
            c.tn,
            fmt_metric(self.accuracy),
            fmt_metric(self.precision),
            fmt_metric(self.sensitivity),
            fmt_metric(self.f1),
            fmt_metric(self.fpr)
        )
    }

    pub fn to_text(&self, name: &str) -> String {
        let c = self.counts;
        let mut s = format!("{name} ({}-level)\n", self.level.name());
        let _ = writeln!(s, "  TP {}  FP {}  FN {}  TN {}", c.tp, c.fp, c.fn_, c.tn);
        for (label, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("sensitivity", self.sensitivity),
            ("F1", self.f1),
            ("FPR", self.fpr),
        ] {
            let _ = writeln!(
                s,
                "  {label:<12}{}",
                v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
            );
        }
        s
    }
}

pub fn fmt_metric(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn check_binary(values: &[u8]) -> Result<(), EvalError> {
    match values.iter().position(|&v| v > 1) {
        Some(index) => Err(EvalError::NonBinary {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

pub fn confusion(preds: &[u8], labels: &[u8]) -> Result<ConfusionCounts, EvalError> {
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    check_binary(preds)?;
    check_binary(labels)?;
    let mut c = ConfusionCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p, l) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

pub fn window_metrics(preds: &[u8], labels: &[u8]) -> Result<EvalReport, EvalError> {
    if preds.is_empty() && labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(EvalReport::from_counts(
        Level::Window,
        confusion(preds, labels)?,
    ))
}

/// Mean of each metric over the reports where it is defined, with the
/// number of reports that contributed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanMetric {
    pub mean: Option<f64>,
    pub defined: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReportSummary {
    pub runs: usize,
    pub accuracy: MeanMetric,
    pub precision: MeanMetric,
    pub sensitivity: MeanMetric,
    pub f1: MeanMetric,
    pub fpr: MeanMetric,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> MeanMetric {
    let defined: Vec<f64> = values.flatten().collect();
    MeanMetric {
        mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        defined: defined.len(),
    }
}

pub fn summarize(reports: &[EvalReport]) -> ReportSummary {
    ReportSummary {
        runs: reports.len(),
        accuracy: mean_of(reports.iter().map(|r| r.accuracy)),
        precision: mean_of(reports.iter().map(|r| r.precision)),
        sensitivity: mean_of(reports.iter().map(|r| r.sensitivity)),
        f1: mean_of(reports.iter().map(|r| r.f1)),
        fpr: mean_of(reports.iter().map(|r| r.fpr)),
    }
}

impl ReportSummary {
    pub const CSV_HEADER: &'static str = "name,level,runs,accuracy,precision,sensitivity,f1,fpr";

    pub fn csv_row(&self, name: &str, level: Level) -> String {
        let m = |x: MeanMetric| fmt_metric(x.mean);
        format!(
            "{name},{},{},{},{},{},{},{}",
            level.name(),
            self.runs,
            m(self.accuracy),
            m(self.precision),
            m(self.sensitivity),
            m(self.f1),
            m(self.fpr)
        )
    }
}

/// One window of a subject's evaluation grid. The grid position of a
/// non-overlapping window is its start index divided by the window length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridFlag {
    pub subject_id: String,
    pub position: usize,
    pub flag: u8,
}

impl GridFlag {
    pub fn new(subject_id: impl Into<String>, position: usize, flag: u8) -> Self {
        Self {
            subject_id: subject_id.into(),
            position,
            flag,
        }
    }

    fn key(&self) -> (&str, usize) {
        (&self.subject_id, self.position)
    }
}

/// A maximal run of FOG windows; positions are inclusive.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Episode {
    pub subject_id: String,
    pub start: usize,
    pub end: usize,
}

impl Episode {
    pub fn overlaps(&self, other: &Episode) -> bool {
        self.subject_id == other.subject_id && self.start <= other.end && other.start <= self.end
    }

    pub fn contains(&self, subject_id: &str, position: usize) -> bool {
        self.subject_id == subject_id && (self.start..=self.end).contains(&position)
    }
}

fn check_sorted(stream: &[GridFlag]) -> Result<(), EvalError> {
    if let Some(i) = stream.windows(2).position(|p| p[0].key() >= p[1].key()) {
        return Err(EvalError::UnsortedInput(i + 1));
    }
    check_binary(&stream.iter().map(|g| g.flag).collect::<Vec<_>>())
}

/// Merges flagged windows with consecutive grid positions of the same
/// subject into episodes.
pub fn merge_episodes(stream: &[GridFlag]) -> Result<Vec<Episode>, EvalError> {
    check_sorted(stream)?;
    let mut out: Vec<Episode> = Vec::new();
    let mut prev: Option<&GridFlag> = None;
    for g in stream {
        if g.flag == 1 {
            let extends = prev.is_some_and(|p| {
                p.flag == 1 && p.subject_id == g.subject_id && p.position + 1 == g.position
            });
            match out.last_mut() {
                Some(last) if extends => last.end = g.position,
                _ => out.push(Episode {
                    subject_id: g.subject_id.clone(),
                    start: g.position,
                    end: g.position,
                }),
            }
        }
        prev = Some(g);
    }
    Ok(out)
}

/// Flags of `grid` set to 1 exactly where a window lies inside an episode.
pub fn explode_episodes(episodes: &[Episode], grid: &[GridFlag]) -> Vec<u8> {
    grid.iter()
        .map(|g| {
            u8::from(
                episodes
                    .iter()
                    .any(|e| e.contains(&g.subject_id, g.position)),
            )
        })
        .collect()
}

/// Episode-level counts: a true episode overlapping any predicted episode
/// is a TP, otherwise an FN; a predicted episode overlapping no true
/// episode is an FP; every grid window outside all episodes is a TN.
pub fn episode_metrics(
    pred_eps: &[Episode],
    true_eps: &[Episode],
    pred_windows: &[GridFlag],
    true_windows: &[GridFlag],
) -> Result<EvalReport, EvalError> {
    if pred_windows.len() != true_windows.len() {
        return Err(EvalError::GridMismatch(
            pred_windows.len().min(true_windows.len()),
        ));
    }
    if let Some(i) = pred_windows
        .iter()
        .zip(true_windows)
        .position(|(p, t)| p.key() != t.key())
    {
        return Err(EvalError::GridMismatch(i));
    }
    let mut c = ConfusionCounts::default();
    for t in true_eps {
        if pred_eps.iter().any(|p| p.overlaps(t)) {
            c.tp += 1;
        } else {
            c.fn_ += 1;
        }
    }
    c.fp = pred_eps
        .iter()
        .filter(|p| !true_eps.iter().any(|t| t.overlaps(p)))
        .count() as u64;
    c.tn = pred_windows
        .iter()
        .zip(true_windows)
        .filter(|(p, t)| p.flag == 0 && t.flag == 0)
        .count() as u64;
    Ok(EvalReport::from_counts(Level::Episode, c))
}

/// `subject,start,end`.
pub fn episodes_csv(episodes: &[Episode]) -> String {
    let mut s = String::from("subject,start,end\n");
    for e in episodes {
        let _ = writeln!(s, "{},{},{}", e.subject_id, e.start, e.end);
    }
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankEntry<M> {
    pub channel: Channel,
    pub model: M,
    pub test_f1: f64,
}

/// Single-channel models in descending order of test F1; equal scores are
/// ordered AccV, AccAP, AccML.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRanking<M> {
    entries: Vec<RankEntry<M>>,
}

impl<M> ChannelRanking<M> {
    pub fn from_entries(
        entries: impl IntoIterator<Item = (Channel, M, Option<f64>)>,
    ) -> Result<Self, EvalError> {
        let mut out: Vec<RankEntry<M>> = Vec::new();
        for (channel, model, f1) in entries {
            if out.iter().any(|e| e.channel == channel) {
                return Err(EvalError::DuplicateChannel(channel));
            }
            let test_f1 = f1
                .filter(|v| !v.is_nan())
                .ok_or(EvalError::MissingF1(channel))?;
            out.push(RankEntry {
                channel,
                model,
                test_f1,
            });
        }
        if out.is_empty() {
            return Err(EvalError::EmptyRanking);
        }
        out.sort_by(|a, b| {
            b.test_f1
                .total_cmp(&a.test_f1)
                .then(a.channel.tie_order().cmp(&b.channel.tie_order()))
        });
        Ok(Self { entries: out })
    }

    pub fn entries(&self) -> &[RankEntry<M>] {
        &self.entries
    }

    pub fn channels(&self) -> Vec<Channel> {
        self.entries.iter().map(|e| e.channel).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Highest-ranked channel that is functional according to `functional`.
    pub fn select(&self, mut functional: impl FnMut(Channel) -> bool) -> Option<usize> {
        self.entries.iter().position(|e| functional(e.channel))
    }
}

pub fn rank_channels(models: Vec<TrainedModel>) -> Result<ChannelRanking<TrainedModel>, EvalError> {
    let mut entries = Vec::with_capacity(models.len());
    for m in models {
        let [c] = m.channels() else {
            return Err(EvalError::NotSingleChannel(m.config.tag()));
        };
        let (c, f1) = (*c, m.metadata.test_f1);
        entries.push((c, m, f1));
    }
    ChannelRanking::from_entries(entries)
}

/// Something that can produce a trained model on demand.
pub trait WeightSource {
    fn load_model(&self) -> Result<TrainedModel, String>;
}

impl WeightSource for TrainedModel {
    fn load_model(&self) -> Result<TrainedModel, String> {
        Ok(self.clone())
    }
}

impl WeightSource for PathBuf {
    fn load_model(&self) -> Result<TrainedModel, String> {
        let bytes = std::fs::read(self).map_err(|e| format!("{}: {e}", self.display()))?;
        crate::weights::load_weights(&bytes).map_err(|e| format!("{}: {e}", self.display()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FallbackPrediction {
    pub prediction: u8,
    pub fog_probability: f32,
    pub channel_used: Channel,
    /// 0-based rank of the channel used.
    pub rank: usize,
}

/// Channel-fallback inference: each window is classified by the
/// highest-ranked model whose channel is functional in it. Models are
/// loaded the first time they are needed and kept.
pub struct FallbackInferer<M> {
    ranking: ChannelRanking<M>,
    loaded: Vec<Option<Network<f32>>>,
    usage: Vec<usize>,
}

impl<M: WeightSource> FallbackInferer<M> {
    pub fn new(ranking: ChannelRanking<M>) -> Self {
        let n = ranking.len();
        Self {
            ranking,
            loaded: (0..n).map(|_| None).collect(),
            usage: vec![0; n],
        }
    }

    pub fn ranking(&self) -> &ChannelRanking<M> {
        &self.ranking
    }

    /// Windows classified so far per rank.
    pub fn usage(&self) -> &[usize] {
        &self.usage
    }

    fn network(&mut self, rank: usize) -> Result<&mut Network<f32>, EvalError> {
        if self.loaded[rank].is_none() {
            let entry = &self.ranking.entries[rank];
            let load_err = |reason: String| EvalError::ModelLoad {
                channel: entry.channel,
                reason,
            };
            let model = entry.model.load_model().map_err(load_err)?;
            if model.channels() != [entry.channel] {
                return Err(load_err(format!("model is for {}", model.config.tag())));
            }
            self.loaded[rank] = Some(model.network().map_err(|e| load_err(e.to_string()))?);
        }
        Ok(self.loaded[rank].as_mut().expect("loaded above"))
    }

    pub fn infer(
        &mut self,
        sample: &GafSample,
        image_size: usize,
    ) -> Result<FallbackPrediction, EvalError> {
        Ok(self
            .infer_batch(std::slice::from_ref(sample), image_size)?
            .remove(0))
    }

    /// Classifies every sample; fails on the first sample with no
    /// functional ranked channel.
    pub fn infer_batch(
        &mut self,
        samples: &[GafSample],
        image_size: usize,
    ) -> Result<Vec<FallbackPrediction>, EvalError> {
        let mut choice = Vec::with_capacity(samples.len());
        for s in samples {
            choice.push(
                self.ranking
                    .select(|c| s.is_functional(c))
                    .ok_or(EvalError::AllChannelsFailed)?,
            );
        }
        let mut out: Vec<Option<FallbackPrediction>> = vec![None; samples.len()];
        for rank in 0..self.ranking.len() {
            let idx: Vec<usize> = (0..samples.len()).filter(|&i| choice[i] == rank).collect();
            if idx.is_empty() {
                continue;
            }
            let channel = self.ranking.entries[rank].channel;
            let data = crate::dataset::GafDataset {
                split: crate::windowing::SplitTag::Test,
                image_size,
                samples: idx.iter().map(|&i| samples[i].clone()).collect(),
            };
            let all: Vec<usize> = (0..idx.len()).collect();
            let net = self.network(rank)?;
            let probs = crate::model::predict_proba(net, &[channel], &data, &all)?;
            for (&i, p) in idx.iter().zip(probs) {
                out[i] = Some(FallbackPrediction {
                    prediction: u8::from(p > 0.5),
                    fog_probability: p,
                    channel_used: channel,
                    rank,
                });
            }
            self.usage[rank] += idx.len();
        }
        Ok(out
            .into_iter()
            .map(|p| p.expect("every sample assigned"))
            .collect())
    }
}
