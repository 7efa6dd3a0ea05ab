//! GASF images of a window set, ready to be batched into network inputs.

use ndarray::{Array4, ArrayD};
use rayon::prelude::*;

use crate::channel::{Channel, PerChannel};
use crate::gaf::{transform_series, GafConfig, GafError, GafImage};
use crate::windowing::{SplitTag, Window, WindowSet};

/// Planes fed to each branch; the GASF plane is replicated on all of them.
pub const INPUT_PLANES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct GafSample {
    pub subject_id: String,
    pub start_index: usize,
    pub label: u8,
    pub fog_fraction: f64,
    /// Row-major GASF per channel; `None` for a non-functional channel.
    pub planes: PerChannel<Option<Vec<f32>>>,
}

impl GafSample {
    pub fn from_window(w: &Window, cfg: &GafConfig) -> Result<Self, GafError> {
        let mut planes = PerChannel::default();
        for c in Channel::ALL {
            if w.channel_mask[c] {
                let m = transform_series(&w.data[c], cfg)?;
                planes[c] = Some(m.into_iter().map(|v| v as f32).collect());
            }
        }
        Ok(Self {
            subject_id: w.subject_id.clone(),
            start_index: w.start_index,
            label: w.label,
            fog_fraction: w.fog_fraction,
            planes,
        })
    }

    pub fn is_functional(&self, c: Channel) -> bool {
        self.planes[c].is_some()
    }

    pub fn has_channels(&self, channels: &[Channel]) -> bool {
        channels.iter().all(|&c| self.is_functional(c))
    }

    pub fn image(&self, c: Channel, size: usize) -> Option<GafImage> {
        self.planes[c].as_ref().map(|p| GafImage {
            size,
            matrix: p.iter().map(|&v| f64::from(v)).collect(),
            channel: c,
            subject_id: self.subject_id.clone(),
            start_index: self.start_index,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GafDataset {
    pub split: SplitTag,
    pub image_size: usize,
    pub samples: Vec<GafSample>,
}

impl GafDataset {
    /// Transforms every window; the work is spread over the current rayon
    /// pool and the output order follows the window set.
    pub fn from_windows(set: &WindowSet, cfg: &GafConfig) -> Result<Self, GafError> {
        let samples = set
            .windows()
            .par_iter()
            .map(|w| GafSample::from_window(w, cfg))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            split: set.split,
            image_size: cfg.image_size,
            samples,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Keeps the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            split: self.split,
            image_size: self.image_size,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    /// Indices of samples whose `channels` are all functional.
    pub fn usable_indices(&self, channels: &[Channel]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.samples[i].has_channels(channels))
            .collect()
    }

    /// One `(batch, size, size, 3)` tensor per channel, in `channels` order.
    ///
    /// # Panics
    /// If a selected sample lacks one of the channels.
    pub fn batch_inputs(&self, indices: &[usize], channels: &[Channel]) -> Vec<ArrayD<f32>> {
        let s = self.image_size;
        channels
            .iter()
            .map(|&c| {
                let mut x = Array4::<f32>::zeros((indices.len(), s, s, INPUT_PLANES));
                for (b, &i) in indices.iter().enumerate() {
                    let plane = self.samples[i].planes[c]
                        .as_ref()
                        .unwrap_or_else(|| panic!("sample {i} has no {c} plane"));
                    for (k, &v) in plane.iter().enumerate() {
                        for p in 0..INPUT_PLANES {
                            x[[b, k / s, k % s, p]] = v;
                        }
                    }
                }
                x.into_dyn()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(start: usize, label: u8, mask: [bool; 3]) -> Window {
        Window {
            subject_id: "S1".into(),
            start_index: start,
            data: PerChannel::from_fn(|c| {
                (0..256)
                    .map(|t| ((t * (c.index() + 1)) as f64 / 10.0).sin())
                    .collect()
            }),
            label,
            fog_fraction: f64::from(label),
            channel_mask: PerChannel(mask),
        }
    }

    #[test]
    fn masked_channels_have_no_plane() {
        let set = WindowSet::new(
            SplitTag::Test,
            vec![window(0, 0, [true, false, true]), window(256, 1, [true; 3])],
        )
        .unwrap();
        let ds = GafDataset::from_windows(&set, &GafConfig::default()).unwrap();
        assert_eq!(ds.len(), 2);
        assert!(!ds.samples[0].is_functional(Channel::AccML));
        assert_eq!(ds.usable_indices(&[Channel::AccML]), vec![1]);
        assert_eq!(
            ds.usable_indices(&[Channel::AccV, Channel::AccAP]),
            vec![0, 1]
        );
        assert_eq!(ds.labels(), vec![0, 1]);
    }

    #[test]
    fn batch_replicates_planes() {
        let set = WindowSet::new(
            SplitTag::Train,
            vec![window(0, 0, [true; 3]), window(256, 1, [true; 3])],
        )
        .unwrap();
        let ds = GafDataset::from_windows(&set, &GafConfig::default()).unwrap();
        let x = ds.batch_inputs(&[1, 0], &[Channel::AccAP, Channel::AccV]);
        assert_eq!(x.len(), 2);
        assert_eq!(x[0].shape(), &[2, 64, 64, 3]);
        let plane = ds.samples[1].planes[Channel::AccAP].as_ref().unwrap();
        for k in [0, 77, 4095] {
            for p in 0..3 {
                assert_eq!(x[0][[0, k / 64, k % 64, p]], plane[k]);
            }
        }
    }
}
