//! Fixed-length windows over labeled recordings.
//!
//! Training windows use differential hopping: candidates are laid on a grid
//! whose stride is the gcd of the FOG and no-FOG strides; a candidate whose
//! FOG fraction is a strict majority is kept as FOG if it sits on the FOG
//! stride, a candidate with no FOG samples at all is kept as no-FOG if it
//! sits on the no-FOG stride, and every other candidate is discarded as
//! impure. With 50% / 0% overlaps FOG regions are covered at stride W/2 and
//! no-FOG regions at stride W.
//!
//! Validation and test windows use plain non-overlapping segmentation with
//! majority labels ([`segment_majority`]).

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::channel::{Channel, PerChannel};
use crate::ingest::LabeledRecording;

/// 4 s at 64 Hz.
pub const WINDOW_LEN: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WindowError {
    #[error("recording of {len} samples is shorter than one window ({window_len})")]
    RecordingTooShort { len: usize, window_len: usize },
    #[error("invalid window parameters: {0}")]
    BadParams(String),
    #[error("duplicate window ({subject_id}, {start_index})")]
    DuplicateWindow {
        subject_id: String,
        start_index: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

impl SplitTag {
    pub const ALL: [SplitTag; 3] = [SplitTag::Train, SplitTag::Val, SplitTag::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::Val => "val",
            SplitTag::Test => "test",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SplitTag {
    type Err = WindowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SplitTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| WindowError::BadParams(format!("unknown split `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub subject_id: String,
    /// Offset in the 64 Hz recording.
    pub start_index: usize,
    pub data: PerChannel<Vec<f64>>,
    pub label: u8,
    pub fog_fraction: f64,
    /// `true` = functional channel.
    pub channel_mask: PerChannel<bool>,
}

impl Window {
    pub fn len(&self) -> usize {
        self.data[Channel::AccV].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn key(&self) -> (&str, usize) {
        (&self.subject_id, self.start_index)
    }
}

/// Windows sorted by `(subject_id, start_index)` with unique keys.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSet {
    pub split: SplitTag,
    windows: Vec<Window>,
}

impl WindowSet {
    pub fn new(split: SplitTag, mut windows: Vec<Window>) -> Result<Self, WindowError> {
        windows.sort_by(|a, b| {
            a.subject_id
                .cmp(&b.subject_id)
                .then(a.start_index.cmp(&b.start_index))
        });
        if let Some(pair) = windows.windows(2).find(|p| p[0].key() == p[1].key()) {
            return Err(WindowError::DuplicateWindow {
                subject_id: pair[0].subject_id.clone(),
                start_index: pair[0].start_index,
            });
        }
        Ok(Self { split, windows })
    }

    pub fn windows(&self) -> &[Window] {
        &self.windows
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn into_windows(self) -> Vec<Window> {
        self.windows
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DhwtParams {
    pub window_len: usize,
    pub fog_overlap: f64,
    pub nofog_overlap: f64,
    /// A channel stays functional while its missing-sample fraction in the
    /// window is at most this value. Missing samples of a functional
    /// channel are filled with the window mean of the present ones.
    pub missing_threshold: f64,
}

impl Default for DhwtParams {
    fn default() -> Self {
        Self {
            window_len: WINDOW_LEN,
            fog_overlap: 0.5,
            nofog_overlap: 0.0,
            missing_threshold: 0.0,
        }
    }
}

fn overlap_stride(window_len: usize, overlap: f64) -> Result<usize, WindowError> {
    if !(0.0..1.0).contains(&overlap) {
        return Err(WindowError::BadParams(format!(
            "overlap {overlap} outside [0, 1)"
        )));
    }
    let stride = window_len as f64 * (1.0 - overlap);
    if stride.fract() != 0.0 || stride < 1.0 {
        return Err(WindowError::BadParams(format!(
            "overlap {overlap} does not give an integral stride for window {window_len}"
        )));
    }
    Ok(stride as usize)
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn fog_count(rec: &LabeledRecording, start: usize, len: usize) -> usize {
    rec.label[start..start + len]
        .iter()
        .filter(|&&l| l == 1)
        .count()
}

fn cut(
    rec: &LabeledRecording,
    start: usize,
    len: usize,
    label: u8,
    fog: usize,
    threshold: f64,
) -> Window {
    let mut data = PerChannel::default();
    let mut mask = PerChannel([false; 3]);
    for c in Channel::ALL {
        let values = &rec.channels[c][start..start + len];
        let missing = &rec.missing[c][start..start + len];
        let n_missing = missing.iter().filter(|&&m| m).count();
        let functional = n_missing as f64 <= threshold * len as f64;
        let mut v = values.to_vec();
        if functional && n_missing > 0 {
            let present: Vec<f64> = values
                .iter()
                .zip(missing)
                .filter(|(_, &m)| !m)
                .map(|(&x, _)| x)
                .collect();
            let fill = if present.is_empty() {
                0.0
            } else {
                present.iter().sum::<f64>() / present.len() as f64
            };
            for (x, &m) in v.iter_mut().zip(missing) {
                if m {
                    *x = fill;
                }
            }
        }
        data[c] = v;
        mask[c] = functional;
    }
    Window {
        subject_id: rec.subject_id.clone(),
        start_index: start,
        data,
        label,
        fog_fraction: fog as f64 / len as f64,
        channel_mask: mask,
    }
}

fn check_length(rec: &LabeledRecording, window_len: usize) -> Result<(), WindowError> {
    if window_len == 0 || !window_len.is_multiple_of(2) {
        return Err(WindowError::BadParams(format!(
            "window length {window_len} must be even and positive"
        )));
    }
    if rec.len() < window_len {
        return Err(WindowError::RecordingTooShort {
            len: rec.len(),
            window_len,
        });
    }
    Ok(())
}

/// Differential hopping segmentation (training windows). Ties at exactly
/// half FOG are discarded.
pub fn segment_dhwt(rec: &LabeledRecording, params: &DhwtParams) -> Result<WindowSet, WindowError> {
    let w = params.window_len;
    check_length(rec, w)?;
    let fog_stride = overlap_stride(w, params.fog_overlap)?;
    let nofog_stride = overlap_stride(w, params.nofog_overlap)?;
    let step = gcd(fog_stride, nofog_stride);
    let mut windows = Vec::new();
    let mut start = 0;
    while start + w <= rec.len() {
        let fog = fog_count(rec, start, w);
        if 2 * fog > w && start % fog_stride == 0 {
            windows.push(cut(rec, start, w, 1, fog, params.missing_threshold));
        } else if fog == 0 && start % nofog_stride == 0 {
            windows.push(cut(rec, start, w, 0, fog, params.missing_threshold));
        }
        start += step;
    }
    WindowSet::new(SplitTag::Train, windows)
}

/// Non-overlapping windows labeled by strict majority; exact ties are
/// discarded. Grid position of a window is `start_index / window_len`.
pub fn segment_majority(
    rec: &LabeledRecording,
    window_len: usize,
    missing_threshold: f64,
    split: SplitTag,
) -> Result<WindowSet, WindowError> {
    check_length(rec, window_len)?;
    let mut windows = Vec::new();
    for start in (0..=rec.len() - window_len).step_by(window_len) {
        let fog = fog_count(rec, start, window_len);
        let label = match (2 * fog).cmp(&window_len) {
            std::cmp::Ordering::Greater => 1,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => continue,
        };
        windows.push(cut(rec, start, window_len, label, fog, missing_threshold));
    }
    WindowSet::new(split, windows)
}

/// Subtracts the per-window mean from every functional channel;
/// non-functional channels are returned unchanged.
pub fn center_window(w: &Window) -> Window {
    let mut out = w.clone();
    for c in Channel::ALL {
        if !w.channel_mask[c] || w.data[c].is_empty() {
            continue;
        }
        let n = w.data[c].len() as f64;
        // second pass removes the rounding residue of the first
        for _ in 0..2 {
            let mean = out.data[c].iter().sum::<f64>() / n;
            out.data[c].iter_mut().for_each(|v| *v -= mean);
        }
    }
    out
}

/// `(n_fog, n_nofog)`.
pub fn class_counts(windows: &[Window]) -> (usize, usize) {
    let fog = windows.iter().filter(|w| w.label == 1).count();
    (fog, windows.len() - fog)
}

/// Merges per-recording window sets into one sorted set.
pub fn merge_sets(
    split: SplitTag,
    sets: impl IntoIterator<Item = WindowSet>,
) -> Result<WindowSet, WindowError> {
    WindowSet::new(
        split,
        sets.into_iter().flat_map(WindowSet::into_windows).collect(),
    )
}
