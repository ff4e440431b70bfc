use alloc::vec;
use alloc::vec::Vec;

use super::Tensor;

/// Source taps `(i0, i1, w1)` for each output index of a linear upsampling of
/// `n` samples by `factor`, half-pixel aligned (`align_corners = false`):
/// `out[o] = (1 - w1) * in[i0] + w1 * in[i1]`.
pub fn linear_upsample_weights(n: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    let scale = 1.0 / factor as f64;
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(n - 1);
            let i1 = if i0 + 1 < n { i0 + 1 } else { i0 };
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// `[outer, n, inner]` view of a 5D shape around spatial axis `a`.
fn split(shape: [usize; 5], a: usize) -> (usize, usize, usize) {
    let d = 2 + a;
    (shape[..d].iter().product(), shape[d], shape[d + 1..].iter().product())
}

fn up_axis(x: &Tensor, a: usize, factor: usize) -> Tensor {
    let (outer, n, inner) = split(x.shape(), a);
    let mut shape = x.shape();
    shape[2 + a] *= factor;
    let taps = linear_upsample_weights(n, factor);
    let mut out = vec![0.0f32; outer * n * factor * inner];
    let src = x.data();
    for b in 0..outer {
        let s = &src[b * n * inner..(b + 1) * n * inner];
        let d = &mut out[b * n * factor * inner..(b + 1) * n * factor * inner];
        for (o, &(i0, i1, w1)) in taps.iter().enumerate() {
            let w0 = 1.0 - w1;
            let row = &mut d[o * inner..(o + 1) * inner];
            let r0 = &s[i0 * inner..(i0 + 1) * inner];
            let r1 = &s[i1 * inner..(i1 + 1) * inner];
            for ((v, a0), a1) in row.iter_mut().zip(r0).zip(r1) {
                *v = w0 * *a0 + w1 * *a1;
            }
        }
    }
    Tensor::from_vec(shape, out).expect("upsample shape")
}

fn up_axis_backward(g: &Tensor, in_shape: [usize; 5], a: usize, factor: usize) -> Tensor {
    let (outer, n, inner) = split(in_shape, a);
    let taps = linear_upsample_weights(n, factor);
    let mut gin = vec![0.0f32; outer * n * inner];
    let src = g.data();
    for b in 0..outer {
        let s = &src[b * n * factor * inner..(b + 1) * n * factor * inner];
        let d = &mut gin[b * n * inner..(b + 1) * n * inner];
        for (o, &(i0, i1, w1)) in taps.iter().enumerate() {
            let w0 = 1.0 - w1;
            let row = &s[o * inner..(o + 1) * inner];
            for (k, gv) in row.iter().enumerate() {
                d[i0 * inner + k] += w0 * *gv;
                d[i1 * inner + k] += w1 * *gv;
            }
        }
    }
    Tensor::from_vec(in_shape, gin).expect("upsample gradient shape")
}

/// Trilinear upsampling by an integer factor per axis.
#[derive(Debug, Clone)]
pub struct Upsample {
    factor: [usize; 3],
    cache: Vec<[usize; 5]>,
}

impl Upsample {
    pub fn new(factor: [usize; 3]) -> Self {
        Self {
            factor,
            cache: Vec::new(),
        }
    }

    pub fn factor(&self) -> [usize; 3] {
        self.factor
    }

    pub fn forward(&self, x: Tensor) -> Tensor {
        let mut x = x;
        for a in 0..3 {
            if self.factor[a] > 1 {
                x = up_axis(&x, a, self.factor[a]);
            }
        }
        x
    }

    pub fn forward_train(&mut self, x: Tensor) -> Tensor {
        self.cache.clear();
        let mut x = x;
        for a in 0..3 {
            if self.factor[a] > 1 {
                self.cache.push(x.shape());
                x = up_axis(&x, a, self.factor[a]);
            }
        }
        x
    }

    pub fn backward(&mut self, grad: Tensor) -> Tensor {
        let mut g = grad;
        for a in (0..3).rev() {
            if self.factor[a] > 1 {
                let shape = self.cache.pop().expect("upsample backward without a cached forward");
                g = up_axis_backward(&g, shape, a, self.factor[a]);
            }
        }
        g
    }
}
