#![allow(dead_code)]

use fog_core::dataset::GafDataset;
use fog_core::eval::{Episode, GridFlag};
use fog_core::gaf::GafConfig;
use fog_core::synthetic::synthetic_window_set;
use fog_core::windowing::SplitTag;

/// Synthetic GASF dataset with `n` windows over `subjects` subjects.
pub fn synthetic_images(n: usize, subjects: usize, seed: u64, split: SplitTag) -> GafDataset {
    let set = synthetic_window_set(n, 0.5, subjects, seed, split);
    GafDataset::from_windows(&set, &GafConfig::default()).expect("synthetic windows transform")
}

/// Episodes found by scanning for maximal runs of consecutive flagged positions.
pub fn oracle_merge(grid: &[GridFlag]) -> Vec<Episode> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if grid[i].flag == 0 {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < grid.len()
            && grid[j + 1].flag == 1
            && grid[j + 1].subject_id == grid[i].subject_id
            && grid[j + 1].position == grid[j].position + 1
        {
            j += 1;
        }
        out.push(Episode {
            subject_id: grid[i].subject_id.clone(),
            start: grid[i].position,
            end: grid[j].position,
        });
        i = j + 1;
    }
    out
}

/// `(tp, fp, fn, tn)` from the full true-by-predicted overlap matrix.
pub fn oracle_counts(
    pred: &[Episode],
    truth: &[Episode],
    pg: &[GridFlag],
    tg: &[GridFlag],
) -> (u64, u64, u64, u64) {
    let mut overlap = vec![vec![false; pred.len()]; truth.len()];
    for (t, te) in truth.iter().enumerate() {
        for (p, pe) in pred.iter().enumerate() {
            let shared = (te.start..=te.end).any(|x| (pe.start..=pe.end).contains(&x));
            overlap[t][p] = te.subject_id == pe.subject_id && shared;
        }
    }
    let tp = overlap.iter().filter(|row| row.iter().any(|&b| b)).count() as u64;
    let fn_ = truth.len() as u64 - tp;
    let fp = (0..pred.len())
        .filter(|&p| !overlap.iter().any(|row| row[p]))
        .count() as u64;
    let tn = pg
        .iter()
        .zip(tg)
        .filter(|(a, b)| a.flag == 0 && b.flag == 0)
        .count() as u64;
    (tp, fp, fn_, tn)
}
