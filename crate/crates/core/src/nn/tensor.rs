use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// A batch of volumes laid out `[batch, channel, x, y, z]`, `z` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 5],
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(Error::shape("tensor data", &[shape.iter().product()], &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    /// Stacks volumes with identical channel counts and extents into a batch.
    pub fn stack(volumes: &[Volume]) -> Result<Self> {
        let first = volumes.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let mut data = Vec::with_capacity(volumes.len() * first.data().len());
        for v in volumes {
            if v.extents() != first.extents() || v.channels() != first.channels() {
                return Err(Error::shape(
                    "batch stacking",
                    &[
                        first.channels(),
                        first.extents()[0],
                        first.extents()[1],
                        first.extents()[2],
                    ],
                    &[v.channels(), v.extents()[0], v.extents()[1], v.extents()[2]],
                ));
            }
            data.extend_from_slice(v.data());
        }
        let e = first.extents();
        Ok(Self {
            shape: [volumes.len(), first.channels(), e[0], e[1], e[2]],
            data,
        })
    }

    /// Splits the batch back into volumes carrying `spacing`.
    pub fn unstack(&self, spacing: [f64; 3]) -> Vec<Volume> {
        let per = self.sample_len();
        (0..self.shape[0])
            .map(|n| {
                Volume::from_parts(
                    self.shape[1],
                    self.spatial(),
                    spacing,
                    self.data[n * per..(n + 1) * per].to_vec(),
                )
            })
            .collect()
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane_len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.plane_len();
        let off = (n * self.shape[1] + c) * p;
        &self.data[off..off + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.plane_len();
        let off = (n * self.shape[1] + c) * p;
        &mut self.data[off..off + p]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "tensor add shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("nothing to concatenate"))?;
        for p in parts {
            if p.batch() != first.batch() || p.spatial() != first.spatial() {
                return Err(Error::shape("channel concatenation", &first.shape, &p.shape));
            }
        }
        let channels: usize = parts.iter().map(|p| p.channels()).sum();
        let mut data = Vec::with_capacity(first.batch() * channels * first.plane_len());
        for n in 0..first.batch() {
            for p in parts {
                let per = p.sample_len();
                data.extend_from_slice(&p.data[n * per..(n + 1) * per]);
            }
        }
        let s = first.spatial();
        Ok(Tensor {
            shape: [first.batch(), channels, s[0], s[1], s[2]],
            data,
        })
    }

    /// Inverse of [`Tensor::concat_channels`] with `widths` channels per part.
    pub fn split_channels(&self, widths: &[usize]) -> Vec<Tensor> {
        assert_eq!(widths.iter().sum::<usize>(), self.channels());
        let plane = self.plane_len();
        let s = self.spatial();
        let mut parts: Vec<Tensor> = widths
            .iter()
            .map(|&w| Tensor::zeros([self.batch(), w, s[0], s[1], s[2]]))
            .collect();
        for n in 0..self.batch() {
            let mut c0 = 0;
            for (part, &w) in parts.iter_mut().zip(widths) {
                let src = (n * self.channels() + c0) * plane;
                let dst = n * w * plane;
                part.data[dst..dst + w * plane].copy_from_slice(&self.data[src..src + w * plane]);
                c0 += w;
            }
        }
        parts
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A named learnable tensor, or a non-trainable buffer such as batch-norm
/// running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    trainable: bool,
}

impl Param {
    pub fn new(shape: Vec<usize>, value: Vec<f32>) -> Self {
        let n = value.len();
        debug_assert_eq!(n, shape.iter().product::<usize>());
        Self {
            shape,
            value,
            grad: vec![0.0; n],
            trainable: true,
        }
    }

    pub fn buffer(shape: Vec<usize>, value: Vec<f32>) -> Self {
        Self {
            shape,
            value,
            grad: Vec::new(),
            trainable: false,
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}
