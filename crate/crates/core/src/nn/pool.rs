use alloc::vec::Vec;

use super::Tensor;
use crate::error::{Error, Result};
use crate::volume::Axis;

/// Non-overlapping max pooling: kernel equals stride on every axis, and the
/// input extents must be divisible by it.
#[derive(Debug, Clone)]
pub struct MaxPool3d {
    stride: [usize; 3],
    cache: Option<([usize; 5], Vec<u32>)>,
}

impl MaxPool3d {
    pub fn new(stride: [usize; 3]) -> Self {
        Self { stride, cache: None }
    }

    pub fn stride(&self) -> [usize; 3] {
        self.stride
    }

    fn pool(&self, x: &Tensor) -> Result<(Tensor, Vec<u32>)> {
        let ie = x.spatial();
        for axis in Axis::ALL {
            let a = axis.index();
            if !ie[a].is_multiple_of(self.stride[a]) {
                return Err(Error::Indivisible {
                    axis,
                    extent: ie[a],
                    divisor: self.stride[a],
                });
            }
        }
        let s = self.stride;
        let oe = [ie[0] / s[0], ie[1] / s[1], ie[2] / s[2]];
        let mut out = Tensor::zeros([x.batch(), x.channels(), oe[0], oe[1], oe[2]]);
        let mut arg = Vec::with_capacity(out.data().len());
        for n in 0..x.batch() {
            for c in 0..x.channels() {
                let src = x.plane(n, c);
                let dst = out.plane_mut(n, c);
                let mut o = 0;
                for ox in 0..oe[0] {
                    for oy in 0..oe[1] {
                        for oz in 0..oe[2] {
                            let mut best = f32::NEG_INFINITY;
                            let mut best_i = 0;
                            for dx in 0..s[0] {
                                for dy in 0..s[1] {
                                    let row = ((ox * s[0] + dx) * ie[1] + oy * s[1] + dy) * ie[2] + oz * s[2];
                                    for dz in 0..s[2] {
                                        let v = src[row + dz];
                                        if v > best {
                                            best = v;
                                            best_i = row + dz;
                                        }
                                    }
                                }
                            }
                            dst[o] = best;
                            arg.push(best_i as u32);
                            o += 1;
                        }
                    }
                }
            }
        }
        Ok((out, arg))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.pool(x)?.0)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let (out, arg) = self.pool(&x)?;
        self.cache = Some((x.shape(), arg));
        Ok(out)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (shape, arg) = self.cache.take().expect("pool backward without a cached forward");
        let mut gin = Tensor::zeros(shape);
        let per_plane = grad.plane_len();
        for n in 0..grad.batch() {
            for c in 0..grad.channels() {
                let g = grad.plane(n, c);
                let base = (n * grad.channels() + c) * per_plane;
                let dst = gin.plane_mut(n, c);
                for (i, gv) in g.iter().enumerate() {
                    dst[arg[base + i] as usize] += *gv;
                }
            }
        }
        gin
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pools_maximum_and_routes_gradient() {
        let x = Tensor::from_vec([1, 1, 2, 2, 1], alloc::vec![1.0, 4.0, 3.0, 2.0]).unwrap();
        let mut p = MaxPool3d::new([2, 2, 1]);
        let y = p.forward_train(x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = p.backward(&Tensor::from_vec([1, 1, 1, 1, 1], alloc::vec![2.0]).unwrap());
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn indivisible_extent_names_axis() {
        let x = Tensor::zeros([1, 1, 4, 3, 2]);
        let err = MaxPool3d::new([2, 2, 1]).forward(&x).unwrap_err();
        assert!(matches!(err, Error::Indivisible { axis: Axis::Y, .. }));
    }
}
