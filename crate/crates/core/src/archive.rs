//! On-disk window and image archives.
//!
//! One directory per split holding `manifest.csv` (one row per window),
//! `windows.bin` (`N x 3 x len` little-endian f64, channel order AccV,
//! AccML, AccAP) and `gaf.bin` (`N x 3 x size x size` little-endian f32,
//! zeros for non-functional channels).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::channel::{Channel, PerChannel};
use crate::dataset::{GafDataset, GafSample};
use crate::windowing::{SplitTag, Window, WindowError, WindowSet};

pub const MANIFEST: &str = "manifest.csv";
pub const WINDOWS_BIN: &str = "windows.bin";
pub const GAF_BIN: &str = "gaf.bin";
pub const CLASS_COUNTS: &str = "class_counts.csv";

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{path} has {actual} bytes, which does not fit {rows} rows")]
    BadSize {
        path: PathBuf,
        rows: usize,
        actual: usize,
    },
    #[error("window set and image set disagree at row {0}")]
    Mismatch(usize),
    #[error(transparent)]
    Window(#[from] WindowError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn split_dir(root: &Path, split: SplitTag) -> PathBuf {
    root.join(split.name())
}

fn mask_string(mask: &PerChannel<bool>) -> String {
    Channel::ALL
        .iter()
        .map(|&c| if mask[c] { '1' } else { '0' })
        .collect()
}

fn parse_mask(s: &str) -> Option<PerChannel<bool>> {
    let b = s.as_bytes();
    if b.len() != 3 || !b.iter().all(|&x| x == b'0' || x == b'1') {
        return None;
    }
    Some(PerChannel([b[0] == b'1', b[1] == b'1', b[2] == b'1']))
}

/// Writes the manifest and both tensor files for one split. Existing files
/// are replaced.
pub fn write_archive(
    dir: &Path,
    windows: &WindowSet,
    images: &GafDataset,
) -> Result<(), ArchiveError> {
    if windows.len() != images.len() {
        return Err(ArchiveError::Mismatch(windows.len().min(images.len())));
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let manifest = dir.join(MANIFEST);
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| ArchiveError::Manifest {
        path: manifest.clone(),
        reason: e.to_string(),
    };
    wtr.write_record([
        "subject_id",
        "start_index",
        "label",
        "fog_fraction",
        "channel_mask",
    ])
    .map_err(csv_err)?;
    let mut wbytes = Vec::new();
    let mut gbytes = Vec::new();
    let s2 = images.image_size * images.image_size;
    for (row, (w, g)) in windows.windows().iter().zip(&images.samples).enumerate() {
        if w.key() != (g.subject_id.as_str(), g.start_index) {
            return Err(ArchiveError::Mismatch(row));
        }
        wtr.write_record([
            w.subject_id.clone(),
            w.start_index.to_string(),
            w.label.to_string(),
            format!("{}", w.fog_fraction),
            mask_string(&w.channel_mask),
        ])
        .map_err(csv_err)?;
        for c in Channel::ALL {
            for v in &w.data[c] {
                wbytes.extend_from_slice(&v.to_le_bytes());
            }
            match &g.planes[c] {
                Some(p) => p
                    .iter()
                    .for_each(|v| gbytes.extend_from_slice(&v.to_le_bytes())),
                None => gbytes.extend(std::iter::repeat_n(0u8, 4 * s2)),
            }
        }
    }
    let text = wtr.into_inner().map_err(|e| ArchiveError::Manifest {
        path: manifest.clone(),
        reason: e.to_string(),
    })?;
    fs::write(&manifest, text).map_err(io_err(&manifest))?;
    let p = dir.join(WINDOWS_BIN);
    fs::write(&p, wbytes).map_err(io_err(&p))?;
    let p = dir.join(GAF_BIN);
    fs::write(&p, gbytes).map_err(io_err(&p))?;
    Ok(())
}

struct ManifestRow {
    subject_id: String,
    start_index: usize,
    label: u8,
    fog_fraction: f64,
    mask: PerChannel<bool>,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, ArchiveError> {
    let bad = |reason: String| ArchiveError::Manifest {
        path: path.to_path_buf(),
        reason,
    };
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != 5 {
            return Err(bad(format!("row {} has {} fields", i + 1, rec.len())));
        }
        let field = |k: usize| rec.get(k).unwrap_or_default();
        rows.push(ManifestRow {
            subject_id: field(0).to_string(),
            start_index: field(1)
                .parse()
                .map_err(|_| bad(format!("bad start_index on row {}", i + 1)))?,
            label: match field(2) {
                "0" => 0,
                "1" => 1,
                other => return Err(bad(format!("bad label `{other}` on row {}", i + 1))),
            },
            fog_fraction: field(3)
                .parse()
                .map_err(|_| bad(format!("bad fog_fraction on row {}", i + 1)))?,
            mask: parse_mask(field(4))
                .ok_or_else(|| bad(format!("bad channel_mask on row {}", i + 1)))?,
        });
    }
    Ok(rows)
}

fn per_row_len(path: &Path, bytes: &[u8], rows: usize, elem: usize) -> Result<usize, ArchiveError> {
    let unit = 3 * rows * elem;
    if rows == 0 {
        return Ok(0);
    }
    if !bytes.len().is_multiple_of(unit) {
        return Err(ArchiveError::BadSize {
            path: path.to_path_buf(),
            rows,
            actual: bytes.len(),
        });
    }
    Ok(bytes.len() / unit)
}

/// Reads the window set of one split directory.
pub fn read_windows(dir: &Path, split: SplitTag) -> Result<WindowSet, ArchiveError> {
    let rows = read_manifest(&dir.join(MANIFEST))?;
    let path = dir.join(WINDOWS_BIN);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let len = per_row_len(&path, &bytes, rows.len(), 8)?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")));
    let windows = rows
        .into_iter()
        .map(|r| Window {
            data: PerChannel::from_fn(|_| values.by_ref().take(len).collect()),
            subject_id: r.subject_id,
            start_index: r.start_index,
            label: r.label,
            fog_fraction: r.fog_fraction,
            channel_mask: r.mask,
        })
        .collect();
    Ok(WindowSet::new(split, windows)?)
}

/// Reads the image set of one split directory.
pub fn read_images(dir: &Path, split: SplitTag) -> Result<GafDataset, ArchiveError> {
    let rows = read_manifest(&dir.join(MANIFEST))?;
    let path = dir.join(GAF_BIN);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let s2 = per_row_len(&path, &bytes, rows.len(), 4)?;
    let size = (s2 as f64).sqrt().round() as usize;
    if size * size != s2 {
        return Err(ArchiveError::BadSize {
            path,
            rows: rows.len(),
            actual: bytes.len(),
        });
    }
    let mut values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")));
    let samples = rows
        .into_iter()
        .map(|r| {
            let planes = PerChannel::from_fn(|c| {
                let plane: Vec<f32> = values.by_ref().take(s2).collect();
                r.mask[c].then_some(plane)
            });
            GafSample {
                subject_id: r.subject_id,
                start_index: r.start_index,
                label: r.label,
                fog_fraction: r.fog_fraction,
                planes,
            }
        })
        .collect();
    Ok(GafDataset {
        split,
        image_size: if s2 == 0 {
            crate::gaf::IMAGE_SIZE
        } else {
            size
        },
        samples,
    })
}

/// Per-split window counts by class, before and after DHWT oversampling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassCountRow {
    pub split: String,
    pub segmentation: String,
    pub fog: usize,
    pub nofog: usize,
}

pub fn write_class_counts(path: &Path, rows: &[ClassCountRow]) -> Result<(), ArchiveError> {
    let mut out = Vec::new();
    writeln!(out, "split,segmentation,fog,nofog").map_err(io_err(path))?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.split, r.segmentation, r.fog, r.nofog)
            .map_err(io_err(path))?;
    }
    fs::write(path, out).map_err(io_err(path))
}
