use ndarray::{Array2, Array4, ArrayView2, ArrayView4};

use crate::{NnError, Result, Scalar};

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    /// Flat NHWC input offset of the selected element for each output.
    argmax: Vec<usize>,
    input_shape: [usize; 4],
}

impl MaxPoolCache {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// 2x2, stride-2 max pooling. Ties resolve to the first element in
/// row-major window order (top-left first).
pub fn maxpool2x2_forward<T: Scalar>(x: ArrayView4<T>) -> Result<(Array4<T>, MaxPoolCache)> {
    let (n, h, w, c) = x.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::OddDims {
            height: h,
            width: w,
        });
    }
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Vec::with_capacity(n * oh * ow * c);
    let mut argmax = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for i in 0..oh {
            for j in 0..ow {
                for ch in 0..c {
                    let mut best_idx = ((b * h + 2 * i) * w + 2 * j) * c + ch;
                    let mut best = xs[best_idx];
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = ((b * h + 2 * i + di) * w + 2 * j + dj) * c + ch;
                        if xs[idx] > best {
                            best = xs[idx];
                            best_idx = idx;
                        }
                    }
                    y.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
    let y = Array4::from_shape_vec((n, oh, ow, c), y).expect("pool output size");
    Ok((
        y,
        MaxPoolCache {
            argmax,
            input_shape: [n, h, w, c],
        },
    ))
}

pub fn maxpool2x2_backward<T: Scalar>(
    dy: ArrayView4<T>,
    cache: &MaxPoolCache,
) -> Result<Array4<T>> {
    let [n, h, w, c] = cache.input_shape;
    if dy.shape() != [n, h / 2, w / 2, c] {
        return Err(NnError::shape(
            "maxpool output gradient",
            &[n, h / 2, w / 2, c],
            dy.shape(),
        ));
    }
    let mut dx = vec![T::zero(); n * h * w * c];
    for (&idx, &g) in cache.argmax.iter().zip(dy.iter()) {
        dx[idx] += g;
    }
    Ok(Array4::from_shape_vec((n, h, w, c), dx).expect("pool dx size"))
}

/// Per-channel spatial mean: `(n, h, w, c) -> (n, c)`.
pub fn global_avg_pool<T: Scalar>(x: ArrayView4<T>) -> Array2<T> {
    let (n, h, w, c) = x.dim();
    let scale = T::of((h * w) as f64);
    let mut y = Array2::zeros((n, c));
    for b in 0..n {
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    y[[b, ch]] += x[[b, i, j, ch]];
                }
            }
        }
    }
    y.mapv_inplace(|v| v / scale);
    y
}

pub fn global_avg_pool_backward<T: Scalar>(
    dy: ArrayView2<T>,
    input_shape: [usize; 4],
) -> Result<Array4<T>> {
    let [n, h, w, c] = input_shape;
    if dy.shape() != [n, c] {
        return Err(NnError::shape(
            "global average pool gradient",
            &[n, c],
            dy.shape(),
        ));
    }
    let scale = T::of((h * w) as f64);
    Ok(Array4::from_shape_fn((n, h, w, c), |(b, _, _, ch)| {
        dy[[b, ch]] / scale
    }))
}
