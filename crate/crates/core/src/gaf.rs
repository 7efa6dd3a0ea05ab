//! Gramian Angular Summation Field imaging.
//!
//! A 256-sample window channel is reduced to 64 points by block means,
//! rescaled to `[-1, 1]`, mapped to angles `theta_i = arccos(x_i)` and
//! expanded to the 64x64 matrix `cos(theta_i + theta_j)`.

use ndarray::Array3;
use thiserror::Error;

use crate::channel::Channel;

pub const IMAGE_SIZE: usize = 64;
/// Values within this distance outside `[-1, 1]` are clamped before arccos.
pub const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GafError {
    #[error("series of length {len} cannot be reduced to {target} points")]
    BadLength { len: usize, target: usize },
    #[error("value {value} at index {index} lies outside [-1, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("image shapes differ: {0}x{0} vs {1}x{1}")]
    ShapeMismatch(usize, usize),
    #[error("PNG encoding failed: {0}")]
    Encoding(String),
}

/// Which rescaled variable feeds the angle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AngleSource {
    /// `x'' = 2x' - 1` in `[-1, 1]`, giving `theta` in `[0, pi]`.
    #[default]
    Bipolar,
    /// `x'` in `[0, 1]`, giving `theta` in `[0, pi/2]`.
    Unit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GafConfig {
    pub image_size: usize,
    pub angle_source: AngleSource,
}

impl Default for GafConfig {
    fn default() -> Self {
        Self {
            image_size: IMAGE_SIZE,
            angle_source: AngleSource::Bipolar,
        }
    }
}

/// Piecewise aggregate approximation: `out[k]` is the mean of block `k`.
pub fn paa_reduce(series: &[f64], target: usize) -> Result<Vec<f64>, GafError> {
    if target == 0 || !series.len().is_multiple_of(target) {
        return Err(GafError::BadLength {
            len: series.len(),
            target,
        });
    }
    let block = series.len() / target;
    Ok(series
        .chunks_exact(block)
        .map(|c| c.iter().sum::<f64>() / block as f64)
        .collect())
}

/// Min-max scaling `x' = (x - min) / (max - min)` in `[0, 1]`; a constant
/// series maps to `0.5` (so its bipolar value is 0).
pub fn rescale_unit(series: &[f64]) -> Vec<f64> {
    let (min, max) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.5; series.len()];
    }
    series.iter().map(|&v| (v - min) / range).collect()
}

/// `x'' = 2x' - 1`; all zeros for a constant series.
pub fn rescale_bipolar(series: &[f64]) -> Vec<f64> {
    rescale_unit(series)
        .into_iter()
        .map(|u| 2.0 * u - 1.0)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolarEncoding {
    /// Angles in `[0, pi]`.
    pub theta: Vec<f64>,
    /// `r_i = t_i / N` with `t_i = i + 1`. Carried for completeness; the
    /// summation field depends on the angles only.
    pub radius: Vec<f64>,
}

impl PolarEncoding {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

pub fn polar_encode(x: &[f64]) -> Result<PolarEncoding, GafError> {
    let n = x.len();
    let mut theta = Vec::with_capacity(n);
    for (index, &v) in x.iter().enumerate() {
        if !(v.abs() <= 1.0 + CLAMP_TOLERANCE) {
            return Err(GafError::OutOfRange { index, value: v });
        }
        theta.push(v.clamp(-1.0, 1.0).acos());
    }
    let radius = (1..=n).map(|t| t as f64 / n as f64).collect();
    Ok(PolarEncoding { theta, radius })
}

/// Row-major `n x n` matrix `cos(theta_i + theta_j)`.
pub fn gasf(p: &PolarEncoding) -> Vec<f64> {
    let n = p.len();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = (p.theta[i] + p.theta[j]).cos();
            m[i * n + j] = v;
            m[j * n + i] = v;
        }
    }
    m
}

/// Full transform of one window channel into an `image_size^2` field.
pub fn transform_series(series: &[f64], cfg: &GafConfig) -> Result<Vec<f64>, GafError> {
    let reduced = paa_reduce(series, cfg.image_size)?;
    let scaled = match cfg.angle_source {
        AngleSource::Bipolar => rescale_bipolar(&reduced),
        AngleSource::Unit => rescale_unit(&reduced),
    };
    Ok(gasf(&polar_encode(&scaled)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GafImage {
    pub size: usize,
    /// Row-major, entries in `[-1, 1]`.
    pub matrix: Vec<f64>,
    pub channel: Channel,
    pub subject_id: String,
    pub start_index: usize,
}

impl GafImage {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.size + j]
    }
}

/// `(size, size, 3)` tensor with the field replicated on every plane.
pub fn to_input_tensor(img: &GafImage) -> Array3<f32> {
    Array3::from_shape_fn((img.size, img.size, 3), |(i, j, _)| img.get(i, j) as f32)
}

/// Maps `v` in `[-1, 1]` to `round((v + 1) / 2 * 255)`, halves rounding up.
pub fn to_pixel(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// 8-bit grayscale PNG of a square matrix with entries in `[-1, 1]`.
pub fn encode_png(size: usize, matrix: &[f64]) -> Result<Vec<u8>, GafError> {
    let pixels: Vec<u8> = matrix.iter().map(|&v| to_pixel(v)).collect();
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, size as u32, size as u32);
        encoder.set_color(png::ColorType::Grayscale);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| GafError::Encoding(e.to_string()))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| GafError::Encoding(e.to_string()))?;
    }
    Ok(out)
}

pub fn export_png(img: &GafImage) -> Result<Vec<u8>, GafError> {
    encode_png(img.size, &img.matrix)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffCell {
    pub i: usize,
    pub j: usize,
    pub abs_diff: f64,
}

/// Pixel-wise `|a - b|` for every cell, row-major.
pub fn difference_map(a: &GafImage, b: &GafImage) -> Result<Vec<f64>, GafError> {
    if a.size != b.size {
        return Err(GafError::ShapeMismatch(a.size, b.size));
    }
    Ok(a.matrix
        .iter()
        .zip(&b.matrix)
        .map(|(x, y)| (x - y).abs())
        .collect())
}

/// The `top_k` cells with the largest absolute difference; ties are broken
/// by `(i, j)` in lexicographic order.
pub fn gaf_difference(a: &GafImage, b: &GafImage, top_k: usize) -> Result<Vec<DiffCell>, GafError> {
    let diffs = difference_map(a, b)?;
    let mut cells: Vec<DiffCell> = diffs
        .iter()
        .enumerate()
        .map(|(k, &d)| DiffCell {
            i: k / a.size,
            j: k % a.size,
            abs_diff: d,
        })
        .collect();
    cells.sort_by(|x, y| {
        y.abs_diff
            .total_cmp(&x.abs_diff)
            .then((x.i, x.j).cmp(&(y.i, y.j)))
    });
    cells.truncate(top_k);
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn image(size: usize, matrix: Vec<f64>) -> GafImage {
        GafImage {
            size,
            matrix,
            channel: Channel::AccV,
            subject_id: "s".into(),
            start_index: 0,
        }
    }

    #[test]
    fn paa_examples() {
        assert_eq!(paa_reduce(&[3.5; 256], 64).unwrap(), vec![3.5; 64]);
        assert_eq!(
            paa_reduce(&[1.0, 1.0, 2.0, 2.0], 2).unwrap(),
            vec![1.0, 2.0]
        );
        assert_eq!(
            paa_reduce(&[1.0; 10], 3),
            Err(GafError::BadLength { len: 10, target: 3 })
        );
    }

    #[test]
    fn paa_matches_block_loop() {
        let series: Vec<f64> = (0..256)
            .map(|i| ((i * 7919) % 113) as f64 / 17.0 - 3.0)
            .collect();
        let out = paa_reduce(&series, 64).unwrap();
        for k in 0..64 {
            let mut acc = 0.0;
            for t in 4 * k..4 * k + 4 {
                acc += series[t];
            }
            assert_eq!(out[k], acc / 4.0);
        }
    }

    #[test]
    fn rescale_examples() {
        assert_eq!(rescale_bipolar(&[0.0, 5.0, 10.0]), vec![-1.0, 0.0, 1.0]);
        assert_eq!(rescale_bipolar(&[4.2; 7]), vec![0.0; 7]);
    }

    #[test]
    fn polar_examples() {
        let p = polar_encode(&[1.0, 0.0, -1.0, 1.0 + 1e-12]).unwrap();
        assert_eq!(p.theta[0], 0.0);
        assert!((p.theta[1] - FRAC_PI_2).abs() < 1e-15);
        assert!((p.theta[2] - PI).abs() < 1e-15);
        assert_eq!(p.theta[3], 0.0);
        assert_eq!(p.radius, vec![0.25, 0.5, 0.75, 1.0]);
        assert!(matches!(
            polar_encode(&[1.1]),
            Err(GafError::OutOfRange { index: 0, .. })
        ));
    }

    #[test]
    fn gasf_of_extremes() {
        let m = gasf(&polar_encode(&[1.0, -1.0]).unwrap());
        let expected = [1.0, -1.0, -1.0, 1.0];
        for (a, b) in m.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn input_tensor_replicates_plane() {
        let m = transform_series(
            &(0..256).map(|i| (i as f64 / 9.0).sin()).collect::<Vec<_>>(),
            &GafConfig::default(),
        )
        .unwrap();
        let t = to_input_tensor(&image(64, m));
        assert_eq!(t.dim(), (64, 64, 3));
        for i in 0..64 {
            for j in 0..64 {
                assert_eq!(t[[i, j, 0]], t[[i, j, 1]]);
                assert_eq!(t[[i, j, 0]], t[[i, j, 2]]);
                assert!((-1.0..=1.0).contains(&t[[i, j, 0]]));
            }
        }
    }

    #[test]
    fn pixel_mapping() {
        assert_eq!(to_pixel(-1.0), 0);
        assert_eq!(to_pixel(1.0), 255);
        assert_eq!(to_pixel(0.0), 128);
    }

    #[test]
    fn png_has_expected_dimensions() {
        let bytes = export_png(&image(64, vec![0.0; 64 * 64])).unwrap();
        let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (64, 64));
        assert!(buf[..info.buffer_size()].iter().all(|&p| p == 128));
    }

    #[test]
    fn difference_examples() {
        let a = image(4, (0..16).map(|k| k as f64 / 16.0).collect());
        let same = gaf_difference(&a, &a, 15).unwrap();
        assert_eq!(same.len(), 15);
        assert!(same.iter().all(|c| c.abs_diff == 0.0));
        assert_eq!((same[0].i, same[0].j), (0, 0));
        assert_eq!((same[14].i, same[14].j), (3, 2));

        let mut single = vec![0.0; 16];
        single[9] = 0.5;
        let a = image(4, single.clone());
        let b = image(4, single.iter().map(|v| -v).collect());
        let top = gaf_difference(&a, &b, 3).unwrap();
        assert_eq!((top[0].i, top[0].j, top[0].abs_diff), (2, 1, 1.0));

        assert_eq!(
            gaf_difference(&a, &image(3, vec![0.0; 9]), 1),
            Err(GafError::ShapeMismatch(4, 3))
        );
    }

    #[test]
    fn difference_matches_full_sort() {
        let a = image(
            64,
            (0..4096)
                .map(|k| ((k * 37 % 101) as f64 / 50.0) - 1.0)
                .collect(),
        );
        let b = image(
            64,
            (0..4096)
                .map(|k| ((k * 53 % 97) as f64 / 48.0) - 1.0)
                .collect(),
        );
        let top = gaf_difference(&a, &b, 15).unwrap();
        let mut all: Vec<(f64, usize)> = (0..4096)
            .map(|k| ((a.matrix[k] - b.matrix[k]).abs(), k))
            .collect();
        // descending by value, then ascending flat index (= (i, j) order)
        all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        for (cell, (d, k)) in top.iter().zip(&all) {
            assert_eq!((cell.i * 64 + cell.j, cell.abs_diff), (*k, *d));
        }
    }

    proptest! {
        #[test]
        fn field_properties(series in proptest::collection::vec(-20.0f64..20.0, 64)) {
            let (lo, hi) = series.iter().fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assume!(hi - lo > 1e-6);
            let x = rescale_bipolar(&series);
            let xmin = x.iter().copied().fold(f64::MAX, f64::min);
            let xmax = x.iter().copied().fold(f64::MIN, f64::max);
            prop_assert_eq!((xmin, xmax), (-1.0, 1.0));
            let m = gasf(&polar_encode(&x).unwrap());
            let n = x.len();
            for i in 0..n {
                prop_assert!((m[i * n + i] - (2.0 * x[i] * x[i] - 1.0)).abs() < 1e-12);
                for j in 0..n {
                    prop_assert!(m[i * n + j].abs() <= 1.0);
                    prop_assert_eq!(m[i * n + j], m[j * n + i]);
                }
            }
        }

        #[test]
        fn affine_invariance(series in proptest::collection::vec(-5.0f64..5.0, 256), a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let (lo, hi) = series.iter().fold((f64::MAX, f64::MIN), |(p, q), &v| (p.min(v), q.max(v)));
            prop_assume!(hi - lo > 1e-3);
            let base = transform_series(&series, &GafConfig::default()).unwrap();
            let moved: Vec<f64> = series.iter().map(|v| a * v + b).collect();
            let other = transform_series(&moved, &GafConfig::default()).unwrap();
            for (x, y) in base.iter().zip(&other) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn paa_commutes_with_offset(series in proptest::collection::vec(-5.0f64..5.0, 256), c in -10.0f64..10.0) {
            let shifted: Vec<f64> = series.iter().map(|v| v + c).collect();
            let lhs = paa_reduce(&shifted, 64).unwrap();
            let rhs = paa_reduce(&series, 64).unwrap();
            for (x, y) in lhs.iter().zip(&rhs) {
                prop_assert!((x - (y + c)).abs() < 1e-12);
            }
        }

        #[test]
        fn pixels_preserve_order(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
            if a <= b { prop_assert!(to_pixel(a) <= to_pixel(b)); } else { prop_assert!(to_pixel(a) >= to_pixel(b)); }
        }
    }

    #[test]
    fn constant_series_gives_uniform_image() {
        let series = vec![3.25; 256];
        let bipolar = transform_series(&series, &GafConfig::default()).unwrap();
        assert!(bipolar.iter().all(|&v| (v + 1.0).abs() < 1e-12));
        let png = encode_png(64, &bipolar).unwrap();
        assert_eq!(png, encode_png(64, &vec![-1.0; 64 * 64]).unwrap());
        let unit = GafConfig {
            angle_source: AngleSource::Unit,
            ..GafConfig::default()
        };
        let field = transform_series(&series, &unit).unwrap();
        assert!(field.iter().all(|&v| (v + 0.5).abs() < 1e-12));
    }
}
