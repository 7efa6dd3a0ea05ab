//! End-to-end preprocessing: session files to centered, split window sets
//! and their GASF images.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::archive::{self, ArchiveError, ClassCountRow};
use crate::dataset::GafDataset;
use crate::eval::GridFlag;
use crate::gaf::{GafConfig, GafError};
use crate::ingest::{
    consolidate_labels, downsample, parse_recording, subject_id_from_path, IngestError,
    LabeledRecording, SubjectSplit, DOWNSAMPLE_FACTOR, INPUT_RATE_HZ,
};
use crate::windowing::{
    center_window, class_counts, segment_dhwt, segment_majority, DhwtParams, SplitTag, WindowError,
    WindowSet,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("no .csv recordings in {0}")]
    NoRecordings(PathBuf),
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error(transparent)]
    Split(IngestError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Gaf(#[from] GafError),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// Parses, labels and downsamples every `*.csv` in `dir`, in file-name
/// order. Each file is one session; its stem is the subject id.
pub fn read_recordings(dir: &Path) -> Result<Vec<LabeledRecording>, PipelineError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| PipelineError::Io { path, source }
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    paths.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) && p.is_file());
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::NoRecordings(dir.to_path_buf()));
    }
    paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(io_err(p))?;
            let ingest = |source| PipelineError::Ingest {
                path: p.clone(),
                source,
            };
            let raw =
                parse_recording(&subject_id_from_path(p), &bytes, INPUT_RATE_HZ).map_err(ingest)?;
            downsample(&consolidate_labels(&raw), DOWNSAMPLE_FACTOR).map_err(ingest)
        })
        .collect()
}

pub fn subject_registry(recordings: &[LabeledRecording]) -> BTreeSet<String> {
    recordings.iter().map(|r| r.subject_id.clone()).collect()
}

/// Centered windows of one subject split.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitWindows {
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
    /// Window counts per class for each split and segmentation.
    pub counts: Vec<ClassCountRow>,
    /// Recordings shorter than one window.
    pub skipped: Vec<String>,
}

impl SplitWindows {
    pub fn get(&self, tag: SplitTag) -> &WindowSet {
        match tag {
            SplitTag::Train => &self.train,
            SplitTag::Val => &self.val,
            SplitTag::Test => &self.test,
        }
    }
}

fn centered(set: WindowSet) -> Result<WindowSet, WindowError> {
    let split = set.split;
    WindowSet::new(split, set.windows().iter().map(center_window).collect())
}

/// Training subjects get differential hopping windows; validation and
/// test subjects get non-overlapping majority-labeled windows. Every window
/// is mean-centered.
pub fn segment_split(
    recordings: &[LabeledRecording],
    split: &SubjectSplit,
    params: &DhwtParams,
) -> Result<SplitWindows, PipelineError> {
    let mut train = Vec::new();
    let mut plain = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    let mut skipped = Vec::new();
    let no_overlap = DhwtParams {
        fog_overlap: 0.0,
        ..*params
    };
    for rec in recordings {
        if rec.len() < params.window_len {
            skipped.push(rec.subject_id.clone());
            continue;
        }
        let id = &rec.subject_id;
        if split.train_subjects.contains(id) {
            train.push(segment_dhwt(rec, params)?);
            plain.push(segment_dhwt(rec, &no_overlap)?);
        } else if split.val_subjects.contains(id) {
            val.push(segment_majority(
                rec,
                params.window_len,
                params.missing_threshold,
                SplitTag::Val,
            )?);
        } else if split.test_subjects.contains(id) {
            test.push(segment_majority(
                rec,
                params.window_len,
                params.missing_threshold,
                SplitTag::Test,
            )?);
        }
    }
    let merge = |tag, sets: Vec<WindowSet>| crate::windowing::merge_sets(tag, sets);
    let train = centered(merge(SplitTag::Train, train)?)?;
    let plain = merge(SplitTag::Train, plain)?;
    let val = centered(merge(SplitTag::Val, val)?)?;
    let test = centered(merge(SplitTag::Test, test)?)?;
    let row = |split: &str, seg: &str, set: &WindowSet| {
        let (fog, nofog) = class_counts(set.windows());
        ClassCountRow {
            split: split.into(),
            segmentation: seg.into(),
            fog,
            nofog,
        }
    };
    let counts = vec![
        row("train", "no_overlap", &plain),
        row("train", "dhwt", &train),
        row("val", "majority", &val),
        row("test", "majority", &test),
    ];
    Ok(SplitWindows {
        train,
        val,
        test,
        counts,
        skipped,
    })
}

/// Writes the three split archives and `class_counts.csv` under `out`.
pub fn write_archives(
    out: &Path,
    windows: &SplitWindows,
    gaf: &GafConfig,
) -> Result<(), PipelineError> {
    for tag in SplitTag::ALL {
        let set = windows.get(tag);
        let images = GafDataset::from_windows(set, gaf)?;
        archive::write_archive(&archive::split_dir(out, tag), set, &images)?;
    }
    archive::write_class_counts(&out.join(archive::CLASS_COUNTS), &windows.counts)?;
    Ok(())
}

/// Grid flags for episode scoring: position = start index / window length.
pub fn grid_flags(data: &GafDataset, flags: &[u8], window_len: usize) -> Vec<GridFlag> {
    data.samples
        .iter()
        .zip(flags)
        .map(|(s, &f)| GridFlag::new(s.subject_id.clone(), s.start_index / window_len, f))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{split_subjects, write_recording_csv, SplitRatios};
    use crate::synthetic::synthetic_recording;

    #[test]
    fn recordings_directory_to_splits() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..10 {
            let rec = synthetic_recording(&format!("S{i:02}"), 40, 3);
            fs::write(
                dir.path().join(format!("S{i:02}.csv")),
                write_recording_csv(&rec),
            )
            .unwrap();
        }
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let recs = read_recordings(dir.path()).unwrap();
        assert_eq!(recs.len(), 10);
        assert!(recs
            .iter()
            .all(|r| r.sample_rate_hz == 64 && r.len() == 40 * 64));
        let split = split_subjects(&subject_registry(&recs), SplitRatios::default(), 5).unwrap();
        let w = segment_split(&recs, &split, &DhwtParams::default()).unwrap();
        assert!(!w.train.is_empty() && !w.test.is_empty());
        assert!(w.counts[1].fog >= w.counts[0].fog);
        for set in [&w.train, &w.val, &w.test] {
            for win in set.windows() {
                let mean = win.data[crate::Channel::AccV].iter().sum::<f64>() / 256.0;
                assert!(mean.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_recordings(dir.path()),
            Err(PipelineError::NoRecordings(_))
        ));
        assert!(matches!(
            read_recordings(&dir.path().join("absent")),
            Err(PipelineError::Io { .. })
        ));
    }
}
