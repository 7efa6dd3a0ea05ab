//! 3x3, stride 1, zero-padded ("same") 2-D convolution over NHWC tensors.
//!
//! The forward pass lowers each batch to an im2col matrix of shape
//! `(n*h*w, 9*c_in)` and multiplies it by the kernel viewed as
//! `(9*c_in, filters)`; the result is already NHWC. Column index
//! `(kh*3 + kw)*c_in + c` matches the row-major `(3, 3, c_in, filters)`
//! kernel layout.

use ndarray::{Array1, Array2, Array4, ArrayD, ArrayView1, ArrayView4, Axis, Ix1, Ix4};
use rand::Rng;

use crate::param::ParamTensor;
use crate::{NnError, Result, Scalar};

pub const KERNEL: usize = 3;
const PAD: isize = 1;

/// Saved state for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Array2<T>,
    input_shape: [usize; 4],
}

fn im2col<T: Scalar>(x: &[T], [n, h, w, c]: [usize; 4]) -> Vec<T> {
    let k = KERNEL * KERNEL * c;
    let mut cols = vec![T::zero(); n * h * w * k];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let row = ((b * h + i) * w + j) * k;
                for kh in 0..KERNEL {
                    let ii = i as isize + kh as isize - PAD;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kw in 0..KERNEL {
                        let jj = j as isize + kw as isize - PAD;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let src = ((b * h + ii as usize) * w + jj as usize) * c;
                        let dst = row + (kh * KERNEL + kw) * c;
                        cols[dst..dst + c].copy_from_slice(&x[src..src + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], [n, h, w, c]: [usize; 4]) -> Vec<T> {
    let k = KERNEL * KERNEL * c;
    let mut x = vec![T::zero(); n * h * w * c];
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                let row = ((b * h + i) * w + j) * k;
                for kh in 0..KERNEL {
                    let ii = i as isize + kh as isize - PAD;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for kw in 0..KERNEL {
                        let jj = j as isize + kw as isize - PAD;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        let dst = ((b * h + ii as usize) * w + jj as usize) * c;
                        let src = row + (kh * KERNEL + kw) * c;
                        for (d, &s) in x[dst..dst + c].iter_mut().zip(&cols[src..src + c]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
    x
}

fn check_kernel<T>(kernel: &ArrayView4<T>, in_channels: usize, bias_len: usize) -> Result<usize> {
    let ks = kernel.shape();
    let filters = ks[3];
    if ks[0] != KERNEL || ks[1] != KERNEL || ks[2] != in_channels {
        return Err(NnError::shape(
            "conv2d kernel",
            &[KERNEL, KERNEL, in_channels, filters],
            ks,
        ));
    }
    if bias_len != filters {
        return Err(NnError::shape("conv2d bias", &[filters], &[bias_len]));
    }
    Ok(filters)
}

pub fn conv2d_forward<T: Scalar>(
    x: ArrayView4<T>,
    kernel: ArrayView4<T>,
    bias: ArrayView1<T>,
) -> Result<(Array4<T>, ConvCache<T>)> {
    let (n, h, w, c) = x.dim();
    let filters = check_kernel(&kernel, c, bias.len())?;
    let shape = [n, h, w, c];
    let x = x.as_standard_layout();
    let cols = im2col(x.as_slice().expect("standard layout"), shape);
    let cols = Array2::from_shape_vec((n * h * w, KERNEL * KERNEL * c), cols).expect("im2col size");
    let k2 = kernel
        .to_shape((KERNEL * KERNEL * c, filters))
        .expect("kernel reshape");
    let mut y = cols.dot(&k2);
    y += &bias;
    let y = y
        .into_shape_with_order((n, h, w, filters))
        .expect("output reshape");
    Ok((
        y,
        ConvCache {
            cols,
            input_shape: shape,
        },
    ))
}

/// Returns `(dx, d_kernel, d_bias)`.
pub fn conv2d_backward<T: Scalar>(
    dy: ArrayView4<T>,
    cache: &ConvCache<T>,
    kernel: ArrayView4<T>,
) -> Result<(Array4<T>, Array4<T>, Array1<T>)> {
    let [n, h, w, c] = cache.input_shape;
    let filters = kernel.shape()[3];
    if dy.shape() != [n, h, w, filters] {
        return Err(NnError::shape(
            "conv2d output gradient",
            &[n, h, w, filters],
            dy.shape(),
        ));
    }
    let dy2 = dy.to_shape((n * h * w, filters)).expect("dy reshape");
    let k2 = kernel
        .to_shape((KERNEL * KERNEL * c, filters))
        .expect("kernel reshape");
    let dk = cache
        .cols
        .t()
        .dot(&dy2)
        .into_shape_with_order((KERNEL, KERNEL, c, filters))
        .expect("kernel grad reshape");
    let db = dy2.sum_axis(Axis(0));
    let dcols = dy2.dot(&k2.t());
    let dx = col2im(
        dcols.as_slice().expect("standard layout"),
        cache.input_shape,
    );
    let dx = Array4::from_shape_vec((n, h, w, c), dx).expect("dx size");
    Ok((dx, dk, db))
}

/// Convolution layer with Glorot-uniform initialized kernel and zero bias.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub kernel: ParamTensor<T>,
    pub bias: ParamTensor<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng>(
        name: &str,
        in_channels: usize,
        filters: usize,
        l2: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = KERNEL * KERNEL * in_channels;
        let fan_out = KERNEL * KERNEL * filters;
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let kernel = ArrayD::from_shape_fn(vec![KERNEL, KERNEL, in_channels, filters], |_| {
            T::of(rng.gen_range(-limit..limit))
        });
        Self {
            kernel: ParamTensor::new(format!("{name}/kernel"), kernel, l2),
            bias: ParamTensor::new(format!("{name}/bias"), ArrayD::zeros(vec![filters]), false),
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.kernel.shape()[3]
    }

    pub fn forward(&mut self, x: &ArrayD<T>) -> Result<ArrayD<T>> {
        let x4 = x.view().into_dimensionality::<Ix4>().map_err(|_| {
            NnError::shape(
                "conv2d input rank",
                &[0, 0, 0, self.in_channels()],
                x.shape(),
            )
        })?;
        let (y, cache) = conv2d_forward(x4, self.kernel_view(), self.bias_view())?;
        self.cache = Some(cache);
        Ok(y.into_dyn())
    }

    pub fn backward(&mut self, dy: &ArrayD<T>) -> Result<ArrayD<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| NnError::MissingCache(self.kernel.name.clone()))?;
        let dy4 = dy.view().into_dimensionality::<Ix4>().map_err(|_| {
            NnError::shape("conv2d output gradient rank", &[0, 0, 0, 0], dy.shape())
        })?;
        let (dx, dk, db) = conv2d_backward(dy4, cache, self.kernel_view())?;
        self.kernel.grad += &dk.into_dyn();
        self.bias.grad += &db.into_dyn();
        Ok(dx.into_dyn())
    }

    fn kernel_view(&self) -> ArrayView4<'_, T> {
        self.kernel
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .expect("rank-4 kernel")
    }

    fn bias_view(&self) -> ArrayView1<'_, T> {
        self.bias
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .expect("rank-1 bias")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution with explicit zero padding.
    fn naive_conv(x: &Array4<f64>, k: &Array4<f64>, b: &Array1<f64>) -> Array4<f64> {
        let (n, h, w, c) = x.dim();
        let f = k.shape()[3];
        let mut y = Array4::zeros((n, h, w, f));
        for bi in 0..n {
            for i in 0..h {
                for j in 0..w {
                    for fi in 0..f {
                        let mut acc = b[fi];
                        for di in 0..3 {
                            for dj in 0..3 {
                                let ii = i as isize + di as isize - 1;
                                let jj = j as isize + dj as isize - 1;
                                if ii < 0 || jj < 0 || ii >= h as isize || jj >= w as isize {
                                    continue;
                                }
                                for ci in 0..c {
                                    acc +=
                                        k[[di, dj, ci, fi]] * x[[bi, ii as usize, jj as usize, ci]];
                                }
                            }
                        }
                        y[[bi, i, j, fi]] = acc;
                    }
                }
            }
        }
        y
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        Array::from_shape_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn center_tap_kernel_is_identity() {
        let x = Array4::from_elem((1, 1, 1, 1), 2.5);
        let mut k = Array4::zeros((3, 3, 1, 1));
        k[[1, 1, 0, 0]] = 1.0;
        let (y, _) = conv2d_forward(x.view(), k.view(), Array1::zeros(1).view()).unwrap();
        assert_eq!(y[[0, 0, 0, 0]], 2.5);
    }

    #[test]
    fn zero_kernel_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&[2, 4, 4, 3], &mut rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        let k = Array4::zeros((3, 3, 3, 2));
        let b = Array1::from(vec![0.75, -1.5]);
        let (y, _) = conv2d_forward(x.view(), k.view(), b.view()).unwrap();
        for ((_, _, _, f), &v) in y.indexed_iter() {
            assert_eq!(v, b[f]);
        }
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x = random(&[2, 4, 4, 3], &mut rng)
                .into_dimensionality::<Ix4>()
                .unwrap();
            let k = random(&[3, 3, 3, 5], &mut rng)
                .into_dimensionality::<Ix4>()
                .unwrap();
            let b = random(&[5], &mut rng).into_dimensionality::<Ix1>().unwrap();
            let (y, _) = conv2d_forward(x.view(), k.view(), b.view()).unwrap();
            let oracle = naive_conv(&x, &k, &b);
            let diff = (&y - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(diff < 1e-12, "max abs diff {diff}");
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[1, 4, 4, 2], &mut rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        let k = random(&[3, 3, 2, 3], &mut rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        let (_, cache) = conv2d_forward(x.view(), k.view(), Array1::zeros(3).view()).unwrap();
        let (dx, dk, db) =
            conv2d_backward(Array4::zeros((1, 4, 4, 3)).view(), &cache, k.view()).unwrap();
        assert!(dx
            .iter()
            .chain(dk.iter())
            .chain(db.iter())
            .all(|&v| v == 0.0));
    }

    #[test]
    fn bias_gradient_sums_upstream() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&[2, 4, 4, 2], &mut rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        let k = random(&[3, 3, 2, 3], &mut rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        let dy = random(&[2, 4, 4, 3], &mut rng)
            .into_dimensionality::<Ix4>()
            .unwrap();
        let (_, cache) = conv2d_forward(x.view(), k.view(), Array1::zeros(3).view()).unwrap();
        let (_, _, db) = conv2d_backward(dy.view(), &cache, k.view()).unwrap();
        for f in 0..3 {
            let expected: f64 = dy.index_axis(Axis(3), f).sum();
            assert!((db[f] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Array4::<f64>::zeros((1, 4, 4, 2));
        let k = Array4::<f64>::zeros((3, 3, 3, 1));
        let err = conv2d_forward(x.view(), k.view(), Array1::zeros(1).view()).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch { .. }));
    }
}
