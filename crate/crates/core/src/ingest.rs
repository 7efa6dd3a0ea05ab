//! Recording ingest: CSV parsing, label consolidation, decimation, and
//! subject-level train/validation/test splits.
//!
//! Input files carry the header
//! `Time,AccV,AccML,AccAP,StartHesitation,Turn,Walking`, one file per
//! session, with the subject id taken from the file-name stem. Empty
//! acceleration cells are kept as explicit missing samples (`NaN` value plus
//! a `true` in the channel's missing mask).

use std::collections::BTreeSet;
use std::path::Path;

use fog_nn::seed::rng_for;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::channel::{Channel, PerChannel};

pub const INPUT_RATE_HZ: u32 = 128;
pub const DOWNSAMPLE_FACTOR: u32 = 2;

pub const TIME_COLUMN: &str = "Time";
pub const EVENT_COLUMNS: [&str; 3] = ["StartHesitation", "Turn", "Walking"];
pub const HEADER: &str = "Time,AccV,AccML,AccAP,StartHesitation,Turn,Walking";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error("header lacks required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRows {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("recording has no data rows")]
    EmptyRecording,
    #[error("line {line}, column {column}: invalid value `{value}`")]
    BadValue {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: time index does not increase")]
    NonMonotonicTime { line: u64 },
    #[error("sample rate {rate} Hz is not divisible by factor {factor}")]
    BadFactor { rate: u32, factor: u32 },
    #[error("need at least 3 subjects to split, got {0}")]
    TooFewSubjects(usize),
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("malformed CSV: {0}")]
    Csv(String),
}

/// The three annotated event types of a session, each a 0/1 track.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EventTracks {
    pub start_hesitation: Vec<u8>,
    pub turn: Vec<u8>,
    pub walking: Vec<u8>,
}

impl EventTracks {
    pub fn tracks(&self) -> [&[u8]; 3] {
        [&self.start_hesitation, &self.turn, &self.walking]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub subject_id: String,
    pub sample_rate_hz: u32,
    pub time_index: Vec<i64>,
    /// Acceleration per channel; `NaN` where the cell was empty.
    pub channels: PerChannel<Vec<f64>>,
    pub missing: PerChannel<Vec<bool>>,
    pub events: EventTracks,
}

impl RawRecording {
    pub fn len(&self) -> usize {
        self.time_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_index.is_empty()
    }
}

/// A recording with the event tracks merged into one FOG label (1 = FOG).
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledRecording {
    pub subject_id: String,
    pub sample_rate_hz: u32,
    pub channels: PerChannel<Vec<f64>>,
    pub missing: PerChannel<Vec<bool>>,
    pub label: Vec<u8>,
}

impl LabeledRecording {
    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }
}

/// Subject id for a session file: the file-name stem.
pub fn subject_id_from_path(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn column_index(header: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

pub fn parse_recording(
    subject_id: &str,
    csv_bytes: &[u8],
    sample_rate_hz: u32,
) -> Result<RawRecording, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(csv_bytes);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Csv(e.to_string()))?
        .clone();
    let time_col = column_index(&header, TIME_COLUMN)?;
    let chan_cols = Channel::ALL.map(|c| column_index(&header, c.name()));
    let chan_cols = [
        chan_cols[0].clone()?,
        chan_cols[1].clone()?,
        chan_cols[2].clone()?,
    ];
    let event_cols = [
        column_index(&header, EVENT_COLUMNS[0])?,
        column_index(&header, EVENT_COLUMNS[1])?,
        column_index(&header, EVENT_COLUMNS[2])?,
    ];

    let mut time_index = Vec::new();
    let mut channels = PerChannel::<Vec<f64>>::default();
    let mut missing = PerChannel::<Vec<bool>>::default();
    let mut events = [Vec::new(), Vec::new(), Vec::new()];

    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Csv(e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(IngestError::RaggedRows {
                line,
                expected: header.len(),
                found: record.len(),
            });
        }
        let bad = |column: &str, value: &str| IngestError::BadValue {
            line,
            column: column.to_string(),
            value: value.to_string(),
        };

        let t = record[time_col].trim();
        let t: i64 = t.parse().map_err(|_| bad(TIME_COLUMN, t))?;
        if time_index.last().is_some_and(|&prev| t <= prev) {
            return Err(IngestError::NonMonotonicTime { line });
        }
        time_index.push(t);

        for (c, &col) in Channel::ALL.iter().zip(&chan_cols) {
            let cell = record[col].trim();
            if cell.is_empty() {
                channels[*c].push(f64::NAN);
                missing[*c].push(true);
            } else {
                let v: f64 = cell.parse().map_err(|_| bad(c.name(), cell))?;
                if !v.is_finite() {
                    return Err(bad(c.name(), cell));
                }
                channels[*c].push(v);
                missing[*c].push(false);
            }
        }
        for ((track, &col), name) in events.iter_mut().zip(&event_cols).zip(EVENT_COLUMNS) {
            match record[col].trim() {
                "0" => track.push(0),
                "1" => track.push(1),
                other => return Err(bad(name, other)),
            }
        }
    }

    if time_index.is_empty() {
        return Err(IngestError::EmptyRecording);
    }
    let [start_hesitation, turn, walking] = events;
    Ok(RawRecording {
        subject_id: subject_id.to_string(),
        sample_rate_hz,
        time_index,
        channels,
        missing,
        events: EventTracks {
            start_hesitation,
            turn,
            walking,
        },
    })
}

/// Serializes a recording back to the input CSV format. Values use the
/// shortest representation that parses back to the same `f64`, so a parse
/// of the output reproduces every finite value bit-exactly.
pub fn write_recording_csv(rec: &RawRecording) -> String {
    let mut out = String::with_capacity(rec.len() * 48);
    out.push_str(HEADER);
    out.push('\n');
    for i in 0..rec.len() {
        out.push_str(&rec.time_index[i].to_string());
        for c in Channel::ALL {
            out.push(',');
            if !rec.missing[c][i] {
                out.push_str(&rec.channels[c][i].to_string());
            }
        }
        for track in rec.events.tracks() {
            out.push(',');
            out.push_str(&track[i].to_string());
        }
        out.push('\n');
    }
    out
}

/// `label[t] = 1` iff any event track is 1 at `t`.
pub fn consolidate_labels(rec: &RawRecording) -> LabeledRecording {
    let [sh, turn, walk] = rec.events.tracks();
    let label = sh
        .iter()
        .zip(turn)
        .zip(walk)
        .map(|((&a, &b), &c)| u8::from(a == 1 || b == 1 || c == 1))
        .collect();
    LabeledRecording {
        subject_id: rec.subject_id.clone(),
        sample_rate_hz: rec.sample_rate_hz,
        channels: rec.channels.clone(),
        missing: rec.missing.clone(),
        label,
    }
}

fn stride<T: Copy>(v: &[T], factor: usize) -> Vec<T> {
    v.iter().step_by(factor).copied().collect()
}

/// Keeps every `factor`-th sample of signals, masks and labels.
pub fn downsample(rec: &LabeledRecording, factor: u32) -> Result<LabeledRecording, IngestError> {
    if factor == 0 || !rec.sample_rate_hz.is_multiple_of(factor) {
        return Err(IngestError::BadFactor {
            rate: rec.sample_rate_hz,
            factor,
        });
    }
    let f = factor as usize;
    Ok(LabeledRecording {
        subject_id: rec.subject_id.clone(),
        sample_rate_hz: rec.sample_rate_hz / factor,
        channels: rec.channels.map(|_, v| stride(v, f)),
        missing: rec.missing.map(|_, v| stride(v, f)),
        label: stride(&rec.label, f),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubjectSplit {
    pub train_subjects: BTreeSet<String>,
    pub val_subjects: BTreeSet<String>,
    pub test_subjects: BTreeSet<String>,
    pub seed: u64,
    pub repetition_index: u32,
}

impl SubjectSplit {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (
            self.train_subjects.len(),
            self.val_subjects.len(),
            self.test_subjects.len(),
        )
    }
}

const RATIO_SCALE: u64 = 1_000_000;

/// Largest-remainder apportionment of `n` items. Ratios are resolved to
/// parts per million so remainders compare exactly; equal remainders go to
/// the earlier bucket (train, then validation, then test).
pub fn apportion(n: usize, ratios: SplitRatios) -> Result<[usize; 3], IngestError> {
    let r = [ratios.train, ratios.val, ratios.test];
    if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) || ((r.iter().sum::<f64>()) - 1.0).abs() > 1e-9
    {
        return Err(IngestError::BadRatios(r));
    }
    let parts = r.map(|x| (x * RATIO_SCALE as f64).round() as u64);
    let total: u64 = parts.iter().sum();
    let n64 = n as u64;
    let mut sizes = parts.map(|p| (n64 * p / total) as usize);
    let rems = parts.map(|p| n64 * p % total);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
    let mut left = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        sizes[i] += 1;
        left -= 1;
    }
    Ok(sizes)
}

/// Shuffles the (sorted) registry with a stream derived from `seed` and
/// deals it into train/validation/test by [`apportion`].
pub fn split_subjects(
    registry: &BTreeSet<String>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SubjectSplit, IngestError> {
    if registry.len() < 3 {
        return Err(IngestError::TooFewSubjects(registry.len()));
    }
    let [n_train, n_val, _] = apportion(registry.len(), ratios)?;
    let mut subjects: Vec<String> = registry.iter().cloned().collect();
    subjects.shuffle(&mut rng_for(seed, "split", &[]));
    let mut it = subjects.into_iter();
    let train_subjects = it.by_ref().take(n_train).collect();
    let val_subjects = it.by_ref().take(n_val).collect();
    let test_subjects = it.collect();
    Ok(SubjectSplit {
        train_subjects,
        val_subjects,
        test_subjects,
        seed,
        repetition_index: 0,
    })
}

/// The repeated-split protocol: repetition `r` uses seed `base_seed + r`.
pub fn repeated_splits(
    registry: &BTreeSet<String>,
    ratios: SplitRatios,
    base_seed: u64,
    repetitions: u32,
) -> Result<Vec<SubjectSplit>, IngestError> {
    (0..repetitions)
        .map(|r| {
            let mut split = split_subjects(registry, ratios, base_seed.wrapping_add(u64::from(r)))?;
            split.repetition_index = r;
            Ok(split)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIXTURE: &str = "Time,AccV,AccML,AccAP,StartHesitation,Turn,Walking
0,-9.53,0.12,-1.5,0,0,0
1,-9.61,0.10,-1.4,0,1,0
2,,0.08,-1.3,1,1,0
3,-9.70,0.05,-1.2,0,0,1
4,-9.68,,-1.1,0,0,0
";

    /// Independent reference parser: plain string splitting.
    fn reference_parse(text: &str) -> Vec<[Option<f64>; 3]> {
        text.lines()
            .skip(1)
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                [1, 2, 3].map(|i| {
                    if f[i].is_empty() {
                        None
                    } else {
                        Some(f[i].parse().unwrap())
                    }
                })
            })
            .collect()
    }

    #[test]
    fn parses_rows() {
        let text = "Time,AccV,AccML,AccAP,StartHesitation,Turn,Walking\n0,1,2,3,0,0,0\n1,1,2,3,0,0,0\n2,1,2,3,0,0,0\n3,1,2,3,0,0,1\n";
        let rec = parse_recording("s1", text.as_bytes(), 128).unwrap();
        assert_eq!(rec.len(), 4);
        for c in Channel::ALL {
            assert_eq!(rec.channels[c].len(), 4);
        }
        assert_eq!(rec.events.walking, vec![0, 0, 0, 1]);
    }

    #[test]
    fn missing_cells_match_reference_parser() {
        let rec = parse_recording("s", FIXTURE.as_bytes(), 128).unwrap();
        let reference = reference_parse(FIXTURE);
        for (i, row) in reference.iter().enumerate() {
            for c in Channel::ALL {
                match row[c.index()] {
                    None => {
                        assert!(rec.missing[c][i]);
                        assert!(rec.channels[c][i].is_nan());
                    }
                    Some(v) => {
                        assert!(!rec.missing[c][i]);
                        assert_eq!(rec.channels[c][i], v);
                    }
                }
            }
        }
        assert!(rec.missing[Channel::AccV][2]);
    }

    #[test]
    fn header_only_is_empty() {
        assert_eq!(
            parse_recording("s", format!("{HEADER}\n").as_bytes(), 128),
            Err(IngestError::EmptyRecording)
        );
    }

    #[test]
    fn missing_column_reported() {
        let text = "Time,AccV,AccML,StartHesitation,Turn,Walking\n0,1,2,0,0,0\n";
        assert_eq!(
            parse_recording("s", text.as_bytes(), 128),
            Err(IngestError::MissingColumn("AccAP".into()))
        );
    }

    #[test]
    fn ragged_row_reported() {
        let text = format!("{HEADER}\n0,1,2,3,0,0,0\n1,1,2,3,0\n");
        assert!(matches!(
            parse_recording("s", text.as_bytes(), 128),
            Err(IngestError::RaggedRows {
                found: 5,
                expected: 7,
                ..
            })
        ));
    }

    #[test]
    fn non_binary_event_rejected() {
        let text = format!("{HEADER}\n0,1,2,3,0,2,0\n");
        assert!(matches!(
            parse_recording("s", text.as_bytes(), 128),
            Err(IngestError::BadValue { .. })
        ));
    }

    #[test]
    fn consolidation_is_disjunction() {
        let rec = parse_recording("s", FIXTURE.as_bytes(), 128).unwrap();
        assert_eq!(consolidate_labels(&rec).label, vec![0, 1, 1, 1, 0]);
    }

    fn labeled(values: Vec<f64>, label: Vec<u8>, rate: u32) -> LabeledRecording {
        let n = values.len();
        LabeledRecording {
            subject_id: "s".into(),
            sample_rate_hz: rate,
            channels: PerChannel([values.clone(), values.clone(), values]),
            missing: PerChannel([vec![false; n], vec![false; n], vec![false; n]]),
            label,
        }
    }

    #[test]
    fn downsample_strides() {
        let rec = labeled(vec![1.0, 2.0, 3.0, 4.0], vec![0, 0, 1, 1], 128);
        let ds = downsample(&rec, 2).unwrap();
        assert_eq!(ds.channels[Channel::AccV], vec![1.0, 3.0]);
        assert_eq!(ds.label, vec![0, 1]);
        assert_eq!(ds.sample_rate_hz, 64);

        let long = labeled(vec![0.0; 256], vec![0; 256], 128);
        let ds = downsample(&long, 2).unwrap();
        assert_eq!((ds.sample_rate_hz, ds.len()), (64, 128));

        assert_eq!(downsample(&rec, 1).unwrap(), rec);
        assert_eq!(
            downsample(&rec, 3),
            Err(IngestError::BadFactor {
                rate: 128,
                factor: 3
            })
        );

        let odd = labeled(vec![1.0, 2.0, 3.0], vec![0, 1, 0], 128);
        assert_eq!(downsample(&odd, 2).unwrap().len(), 2);
    }

    fn registry(n: usize) -> BTreeSet<String> {
        (0..n).map(|i| format!("subject{i:03}")).collect()
    }

    #[test]
    fn ten_subjects_split_7_1_2() {
        let reg = registry(10);
        let a = split_subjects(&reg, SplitRatios::default(), 5).unwrap();
        assert_eq!(a.sizes(), (7, 1, 2));
        assert_eq!(a, split_subjects(&reg, SplitRatios::default(), 5).unwrap());
    }

    #[test]
    fn sixty_two_subjects_always_44_6_12() {
        let reg = registry(62);
        for seed in 0..100 {
            let s = split_subjects(&reg, SplitRatios::default(), seed).unwrap();
            assert_eq!(s.sizes(), (44, 6, 12), "seed {seed}");
        }
    }

    #[test]
    fn too_few_subjects() {
        assert_eq!(
            split_subjects(&registry(2), SplitRatios::default(), 0),
            Err(IngestError::TooFewSubjects(2))
        );
    }

    #[test]
    fn repetitions_use_consecutive_seeds() {
        let reg = registry(20);
        let reps = repeated_splits(&reg, SplitRatios::default(), 10, 3).unwrap();
        assert_eq!(
            reps.iter()
                .map(|s| (s.seed, s.repetition_index))
                .collect::<Vec<_>>(),
            vec![(10, 0), (11, 1), (12, 2)]
        );
    }

    proptest! {
        #[test]
        fn split_is_a_partition(n in 3usize..80, seed in any::<u64>()) {
            let reg = registry(n);
            let s = split_subjects(&reg, SplitRatios::default(), seed).unwrap();
            prop_assert!(s.train_subjects.is_disjoint(&s.val_subjects));
            prop_assert!(s.train_subjects.is_disjoint(&s.test_subjects));
            prop_assert!(s.val_subjects.is_disjoint(&s.test_subjects));
            let union: BTreeSet<String> = s.train_subjects.iter().chain(&s.val_subjects).chain(&s.test_subjects).cloned().collect();
            prop_assert_eq!(union, reg);
        }

        #[test]
        fn csv_round_trip_is_bit_exact(values in proptest::collection::vec((any::<f64>(), any::<f64>(), any::<f64>(), 0u8..8), 1..40)) {
            let mut text = format!("{HEADER}\n");
            for (i, (a, b, c, ev)) in values.iter().enumerate() {
                let cell = |v: &f64| if v.is_finite() { v.to_string() } else { String::new() };
                text.push_str(&format!("{i},{},{},{},{},{},{}\n", cell(a), cell(b), cell(c), ev & 1, (ev >> 1) & 1, (ev >> 2) & 1));
            }
            let rec = parse_recording("s", text.as_bytes(), 128).unwrap();
            let again = parse_recording("s", write_recording_csv(&rec).as_bytes(), 128).unwrap();
            for c in Channel::ALL {
                prop_assert_eq!(&rec.missing[c], &again.missing[c]);
                for (x, y) in rec.channels[c].iter().zip(&again.channels[c]) {
                    prop_assert!(x.to_bits() == y.to_bits() || (x.is_nan() && y.is_nan()));
                }
            }
            prop_assert_eq!(write_recording_csv(&again), text);
        }

        #[test]
        fn label_rate_dominates_each_track(events in proptest::collection::vec(0u8..8, 1..200)) {
            let n = events.len();
            let rec = RawRecording {
                subject_id: "s".into(),
                sample_rate_hz: 128,
                time_index: (0..n as i64).collect(),
                channels: PerChannel([vec![0.0; n], vec![0.0; n], vec![0.0; n]]),
                missing: PerChannel([vec![false; n], vec![false; n], vec![false; n]]),
                events: EventTracks {
                    start_hesitation: events.iter().map(|e| e & 1).collect(),
                    turn: events.iter().map(|e| (e >> 1) & 1).collect(),
                    walking: events.iter().map(|e| (e >> 2) & 1).collect(),
                },
            };
            let label_sum: usize = consolidate_labels(&rec).label.iter().map(|&v| v as usize).sum();
            for track in rec.events.tracks() {
                prop_assert!(label_sum >= track.iter().map(|&v| v as usize).sum::<usize>());
            }
        }

        #[test]
        fn downsample_by_one_then_k(len in 1usize..100, k in 1u32..5) {
            let rec = labeled((0..len).map(|i| i as f64).collect(), (0..len).map(|i| (i % 3 == 0) as u8).collect(), 128 * 3 * 5);
            let direct = downsample(&rec, k).unwrap();
            prop_assert_eq!(downsample(&downsample(&rec, 1).unwrap(), k).unwrap(), direct.clone());
            prop_assert_eq!(direct.len(), len.div_ceil(k as usize));
        }
    }
}
