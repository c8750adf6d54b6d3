use crate::engine::{Scalar, Tensor};
use crate::error::{shape_err, Result};

/// Bilinear resize of a `[h,w]` map with half-pixel centers and edge clamping.
pub fn upsample_bilinear<T: Scalar>(map: &Tensor<T>, target: (usize, usize)) -> Result<Tensor<T>> {
    if map.ndim() != 2 {
        return shape_err(format!("expected a 2-d map, got {:?}", map.shape()));
    }
    let (h, w) = (map.dim(0), map.dim(1));
    let (th, tw) = target;
    let src = map.data();
    let coord = |i: usize, n_out: usize, n_in: usize| {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, T::of(x - lo as f64))
    };
    let mut out = Vec::with_capacity(th * tw);
    for i in 0..th {
        let (y0, y1, fy) = coord(i, th, h);
        for j in 0..tw {
            let (x0, x1, fx) = coord(j, tw, w);
            let top = src[y0 * w + x0] + (src[y0 * w + x1] - src[y0 * w + x0]) * fx;
            let bot = src[y1 * w + x0] + (src[y1 * w + x1] - src[y1 * w + x0]) * fx;
            out.push(top + (bot - top) * fy);
        }
    }
    Tensor::new([th, tw], out)
}

/// Maps the range of `t` onto `[0,1]`; a constant tensor becomes all zeros.
pub fn min_max_normalize<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (t.min(), t.max());
    if hi > lo {
        t.map(|v| (v - lo) / (hi - lo))
    } else {
        t.map(|_| T::zero())
    }
}
