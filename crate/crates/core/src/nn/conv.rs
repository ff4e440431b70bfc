use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use super::init::kaiming_normal;
use super::{join, Module, Param, Tensor};
use crate::error::{Error, Result};
use crate::volume::Volume;

/// Geometry of a 3D convolution. Weights are laid out
/// `[out, in / groups, kx, ky, kz]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Stride-1 convolution with `k / 2` zero padding, no bias.
    pub fn same(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: [1; 3],
            padding: [kernel[0] / 2, kernel[1] / 2, kernel[2] / 2],
            groups: 1,
            bias: false,
        }
    }

    pub fn with_stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.kernel_volume()
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::InvalidConfig(format!(
                "groups {} must divide both {} input and {} output channels",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConfig(format!("degenerate convolution {self:?}")));
        }
        Ok(())
    }

    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::invalid(format!(
                    "input extent {} too small for kernel {} on axis {a}",
                    input[a], self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy)]
struct Geom {
    ie: [usize; 3],
    oe: [usize; 3],
    k: [usize; 3],
    s: [usize; 3],
    p: [usize; 3],
}

impl Geom {
    /// Output indices `o` whose input index `o * s + kk - p` lands in `[0, n_in)`.
    #[inline]
    fn valid(&self, a: usize, kk: usize) -> Range<usize> {
        let (n_in, n_out, s, p) = (self.ie[a], self.oe[a], self.s[a], self.p[a]);
        if n_in + p <= kk {
            return 0..0;
        }
        let lo = if p > kk { (p - kk).div_ceil(s) } else { 0 };
        let hi = ((n_in + p - kk - 1) / s + 1).min(n_out);
        lo..hi.max(lo)
    }

    #[inline]
    fn src(&self, a: usize, o: usize, kk: usize) -> usize {
        o * self.s[a] + kk - self.p[a]
    }
}

/// Walks every (output row, input row, kernel tap) triple that touches real
/// (non-padding) input. `f(out_row_start, in_row_start, tap, z_range, z_src_start)`.
#[inline]
fn for_each_row(g: &Geom, mut f: impl FnMut(usize, usize, usize, Range<usize>, usize)) {
    let [kxn, kyn, kzn] = g.k;
    for kx in 0..kxn {
        for ox in g.valid(0, kx) {
            let ix = g.src(0, ox, kx);
            for ky in 0..kyn {
                for oy in g.valid(1, ky) {
                    let iy = g.src(1, oy, ky);
                    let orow = (ox * g.oe[1] + oy) * g.oe[2];
                    let irow = (ix * g.ie[1] + iy) * g.ie[2];
                    for kz in 0..kzn {
                        let rz = g.valid(2, kz);
                        if rz.is_empty() {
                            continue;
                        }
                        let z0 = g.src(2, rz.start, kz);
                        f(orow, irow, (kx * kyn + ky) * kzn + kz, rz, z0);
                    }
                }
            }
        }
    }
}

fn acc_forward(g: &Geom, input: &[f32], w: &[f32], out: &mut [f32]) {
    let sz = g.s[2];
    for_each_row(g, |orow, irow, tap, rz, z0| {
        let wv = w[tap];
        let o = &mut out[orow + rz.start..orow + rz.end];
        if sz == 1 {
            let i = &input[irow + z0..irow + z0 + o.len()];
            for (ov, iv) in o.iter_mut().zip(i) {
                *ov += wv * *iv;
            }
        } else {
            for (j, ov) in o.iter_mut().enumerate() {
                *ov += wv * input[irow + z0 + j * sz];
            }
        }
    });
}

fn acc_grad_input(g: &Geom, grad_out: &[f32], w: &[f32], grad_in: &mut [f32]) {
    let sz = g.s[2];
    for_each_row(g, |orow, irow, tap, rz, z0| {
        let wv = w[tap];
        let go = &grad_out[orow + rz.start..orow + rz.end];
        if sz == 1 {
            let gi = &mut grad_in[irow + z0..irow + z0 + go.len()];
            for (iv, ov) in gi.iter_mut().zip(go) {
                *iv += wv * *ov;
            }
        } else {
            for (j, ov) in go.iter().enumerate() {
                grad_in[irow + z0 + j * sz] += wv * *ov;
            }
        }
    });
}

fn acc_grad_weight(g: &Geom, grad_out: &[f32], input: &[f32], grad_w: &mut [f32]) {
    let sz = g.s[2];
    for_each_row(g, |orow, irow, tap, rz, z0| {
        let go = &grad_out[orow + rz.start..orow + rz.end];
        let mut acc = 0.0f32;
        if sz == 1 {
            let i = &input[irow + z0..irow + z0 + go.len()];
            for (ov, iv) in go.iter().zip(i) {
                acc += *ov * *iv;
            }
        } else {
            for (j, ov) in go.iter().enumerate() {
                acc += *ov * input[irow + z0 + j * sz];
            }
        }
        grad_w[tap] += acc;
    });
}

/// 3D convolution with optional grouping and bias.
#[derive(Debug, Clone)]
pub struct Conv3d {
    spec: ConvSpec,
    pub weight: Param,
    pub bias: Option<Param>,
    cache: Option<Tensor>,
}

impl Conv3d {
    pub fn new(spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let fan_in = (spec.in_channels / spec.groups) * spec.kernel_volume();
        let weight = kaiming_normal(spec.weight_count(), fan_in, rng);
        Self::from_weights(spec, weight, spec.bias.then(|| vec![0.0; spec.out_channels]))
    }

    pub fn from_weights(spec: ConvSpec, weight: Vec<f32>, bias: Option<Vec<f32>>) -> Result<Self> {
        spec.validate()?;
        if weight.len() != spec.weight_count() {
            return Err(Error::shape(
                "convolution weights",
                &[spec.weight_count()],
                &[weight.len()],
            ));
        }
        if let Some(b) = &bias {
            if b.len() != spec.out_channels {
                return Err(Error::shape("convolution bias", &[spec.out_channels], &[b.len()]));
            }
        }
        let k = spec.kernel;
        let shape = vec![spec.out_channels, spec.in_channels / spec.groups, k[0], k[1], k[2]];
        Ok(Self {
            spec,
            weight: Param::new(shape, weight),
            bias: bias.map(|b| Param::new(vec![spec.out_channels], b)),
            cache: None,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    fn geom(&self, input: &Tensor) -> Result<(Geom, [usize; 5])> {
        if input.channels() != self.spec.in_channels {
            return Err(Error::shape(
                "convolution input channels",
                &[self.spec.in_channels],
                &[input.channels()],
            ));
        }
        let ie = input.spatial();
        let oe = self.spec.output_extents(ie)?;
        let g = Geom {
            ie,
            oe,
            k: self.spec.kernel,
            s: self.spec.stride,
            p: self.spec.padding,
        };
        Ok((g, [input.batch(), self.spec.out_channels, oe[0], oe[1], oe[2]]))
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (g, shape) = self.geom(input)?;
        let mut out = Tensor::zeros(shape);
        let ipg = self.spec.in_channels / self.spec.groups;
        let opg = self.spec.out_channels / self.spec.groups;
        let kv = self.spec.kernel_volume();
        for n in 0..input.batch() {
            for oc in 0..self.spec.out_channels {
                let plane = out.plane_mut(n, oc);
                if let Some(b) = &self.bias {
                    plane.iter_mut().for_each(|v| *v = b.value[oc]);
                }
                let group = oc / opg;
                for icl in 0..ipg {
                    let w = &self.weight.value[(oc * ipg + icl) * kv..(oc * ipg + icl + 1) * kv];
                    acc_forward(&g, input.plane(n, group * ipg + icl), w, plane);
                }
            }
        }
        Ok(out)
    }

    pub fn forward_train(&mut self, input: Tensor) -> Result<Tensor> {
        let out = self.forward(&input)?;
        self.cache = Some(input);
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let input = self.cache.take().expect("conv backward without a cached forward");
        let (g, shape) = self.geom(&input).expect("cached input shape is valid");
        assert_eq!(grad_out.shape(), shape, "conv backward gradient shape");
        let mut grad_in = Tensor::zeros(input.shape());
        let ipg = self.spec.in_channels / self.spec.groups;
        let opg = self.spec.out_channels / self.spec.groups;
        let kv = self.spec.kernel_volume();
        for n in 0..input.batch() {
            for oc in 0..self.spec.out_channels {
                let go = grad_out.plane(n, oc);
                if let Some(b) = &mut self.bias {
                    b.grad[oc] += go.iter().sum::<f32>();
                }
                let group = oc / opg;
                for icl in 0..ipg {
                    let ic = group * ipg + icl;
                    let wr = (oc * ipg + icl) * kv..(oc * ipg + icl + 1) * kv;
                    acc_grad_weight(&g, go, input.plane(n, ic), &mut self.weight.grad[wr.clone()]);
                    acc_grad_input(&g, go, &self.weight.value[wr], grad_in.plane_mut(n, ic));
                }
            }
        }
        grad_in
    }
}

impl Module for Conv3d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        out.push((join(prefix, "weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = &mut self.bias {
            out.push((join(prefix, "bias"), b));
        }
    }
}

/// A dense 3D kernel bank laid out `[out][in][kx][ky][kz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub extent: [usize; 3],
    pub weights: Vec<f32>,
}

impl Kernel3d {
    pub fn new(out_channels: usize, in_channels: usize, extent: [usize; 3], weights: Vec<f32>) -> Result<Self> {
        let n = out_channels * in_channels * extent.iter().product::<usize>();
        if weights.len() != n {
            return Err(Error::shape("kernel weights", &[n], &[weights.len()]));
        }
        Ok(Self {
            out_channels,
            in_channels,
            extent,
            weights,
        })
    }

    /// Identity kernel: a centred unit tap between matching channels.
    pub fn delta(channels: usize, extent: [usize; 3]) -> Result<Self> {
        let kv: usize = extent.iter().product();
        let centre = ((extent[0] / 2) * extent[1] + extent[1] / 2) * extent[2] + extent[2] / 2;
        let mut w = vec![0.0; channels * channels * kv];
        for c in 0..channels {
            w[(c * channels + c) * kv + centre] = 1.0;
        }
        Self::new(channels, channels, extent, w)
    }

    pub fn at(&self, o: usize, i: usize, k: [usize; 3]) -> f32 {
        let e = self.extent;
        self.weights[(((o * self.in_channels + i) * e[0] + k[0]) * e[1] + k[1]) * e[2] + k[2]]
    }
}

/// A 2D kernel bank laid out `[out][in][kx][ky]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub extent: [usize; 2],
    pub weights: Vec<f32>,
}

impl Kernel2d {
    pub fn new(out_channels: usize, in_channels: usize, extent: [usize; 2], weights: Vec<f32>) -> Result<Self> {
        let n = out_channels * in_channels * extent[0] * extent[1];
        if weights.len() != n {
            return Err(Error::shape("kernel weights", &[n], &[weights.len()]));
        }
        Ok(Self {
            out_channels,
            in_channels,
            extent,
            weights,
        })
    }
}

/// Turns a 2D kernel into a 3D one by stacking `reps` copies along the axial
/// (`z`) dimension, each scaled by `1 / reps`.
pub fn inflate_2d_to_3d(kernel: &Kernel2d, reps: usize) -> Result<Kernel3d> {
    if reps < 1 {
        return Err(Error::invalid("inflation needs at least one replication"));
    }
    let mut w = Vec::with_capacity(kernel.weights.len() * reps);
    for &v in &kernel.weights {
        let share = v / reps as f32;
        w.extend(core::iter::repeat_n(share, reps - 1));
        // The last copy absorbs the rounding so the copies sum back to `v`.
        w.push((v as f64 - (reps - 1) as f64 * share as f64) as f32);
    }
    Kernel3d::new(
        kernel.out_channels,
        kernel.in_channels,
        [kernel.extent[0], kernel.extent[1], reps],
        w,
    )
}

/// Direct stride-1 convolution accumulated in `f64`.
fn single_conv(input: &Volume, kernel: &Kernel3d, padding: [usize; 3]) -> Result<Volume> {
    if kernel.in_channels != input.channels() {
        return Err(Error::shape(
            "kernel input channels",
            &[input.channels()],
            &[kernel.in_channels],
        ));
    }
    let spec = ConvSpec::same(kernel.in_channels, kernel.out_channels, kernel.extent).with_padding(padding);
    let oe = spec.output_extents(input.extents())?;
    let (ie, k) = (input.extents(), kernel.extent);
    let mut out = Vec::with_capacity(kernel.out_channels * oe[0] * oe[1] * oe[2]);
    for o in 0..kernel.out_channels {
        for x in 0..oe[0] {
            for y in 0..oe[1] {
                for z in 0..oe[2] {
                    let mut acc = 0.0f64;
                    for i in 0..kernel.in_channels {
                        for a in 0..k[0] {
                            let Some(u) = (x + a).checked_sub(padding[0]).filter(|&u| u < ie[0]) else {
                                continue;
                            };
                            for b in 0..k[1] {
                                let Some(v) = (y + b).checked_sub(padding[1]).filter(|&v| v < ie[1]) else {
                                    continue;
                                };
                                for c in 0..k[2] {
                                    let Some(w) = (z + c).checked_sub(padding[2]).filter(|&w| w < ie[2]) else {
                                        continue;
                                    };
                                    acc += kernel.at(o, i, [a, b, c]) as f64 * input.get(i, [u, v, w]) as f64;
                                }
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    Volume::new(kernel.out_channels, oe, input.spacing(), out)
}

/// Stride-1 dense convolution with explicit zero padding.
pub fn dense_conv3d(input: &Volume, kernel: &Kernel3d, padding: [usize; 3]) -> Result<Volume> {
    single_conv(input, kernel, padding)
}

/// A `k×k×1` spatial convolution followed by a `1×1×k` axial convolution, both
/// zero padded so the extents are preserved.
pub fn separable_conv3d(input: &Volume, spatial: &Kernel3d, axial: &Kernel3d) -> Result<Volume> {
    let [sx, sy, sz] = spatial.extent;
    let [ax, ay, az] = axial.extent;
    if sz != 1 || sx != sy || ax != 1 || ay != 1 {
        return Err(Error::invalid(format!(
            "separable convolution needs a k×k×1 spatial and a 1×1×k axial kernel, got {:?} and {:?}",
            spatial.extent, axial.extent
        )));
    }
    if sx % 2 == 0 || az % 2 == 0 {
        return Err(Error::invalid(format!(
            "separable convolution kernels must be odd-sized, got {sx} and {az}"
        )));
    }
    if axial.in_channels != spatial.out_channels {
        return Err(Error::shape(
            "axial kernel input channels",
            &[spatial.out_channels],
            &[axial.in_channels],
        ));
    }
    let mid = single_conv(input, spatial, [sx / 2, sy / 2, 0])?;
    single_conv(&mid, axial, [0, 0, az / 2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
    }

    /// Direct definition: out[o,x] = b[o] + sum w[o,i,k] * in[i, x*s + k - p].
    fn brute_conv(input: &Tensor, spec: &ConvSpec, w: &[f32], b: Option<&[f32]>) -> Tensor {
        let ie = input.spatial();
        let oe = spec.output_extents(ie).unwrap();
        let ipg = spec.in_channels / spec.groups;
        let opg = spec.out_channels / spec.groups;
        let k = spec.kernel;
        let mut out = Tensor::zeros([input.batch(), spec.out_channels, oe[0], oe[1], oe[2]]);
        for n in 0..input.batch() {
            for o in 0..spec.out_channels {
                for x in 0..oe[0] {
                    for y in 0..oe[1] {
                        for z in 0..oe[2] {
                            let mut acc = b.map_or(0.0, |b| b[o] as f64);
                            for il in 0..ipg {
                                let i = (o / opg) * ipg + il;
                                for a in 0..k[0] {
                                    for bb in 0..k[1] {
                                        for c in 0..k[2] {
                                            let sx = (x * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                            let sy = (y * spec.stride[1] + bb) as isize - spec.padding[1] as isize;
                                            let sz = (z * spec.stride[2] + c) as isize - spec.padding[2] as isize;
                                            if sx < 0 || sy < 0 || sz < 0 {
                                                continue;
                                            }
                                            let (sx, sy, sz) = (sx as usize, sy as usize, sz as usize);
                                            if sx >= ie[0] || sy >= ie[1] || sz >= ie[2] {
                                                continue;
                                            }
                                            let wv = w[(((o * ipg + il) * k[0] + a) * k[1] + bb) * k[2] + c];
                                            let iv = input.plane(n, i)[(sx * ie[1] + sy) * ie[2] + sz];
                                            acc += (wv * iv) as f64;
                                        }
                                    }
                                }
                            }
                            out.plane_mut(n, o)[(x * oe[1] + y) * oe[2] + z] = acc as f32;
                        }
                    }
                }
            }
        }
        out
    }

    fn specs() -> Vec<ConvSpec> {
        vec![
            ConvSpec::same(2, 3, [3, 3, 3]).with_bias(true),
            ConvSpec::same(2, 2, [3, 3, 1]).with_stride([2, 1, 1]),
            ConvSpec::same(3, 2, [1, 1, 3]).with_stride([1, 2, 2]),
            ConvSpec::same(4, 4, [3, 3, 3]).with_groups(4).with_stride([2, 2, 2]),
            ConvSpec::same(2, 4, [7, 7, 7]).with_stride([2, 2, 2]),
            ConvSpec::same(3, 2, [1, 1, 1]).with_bias(true),
        ]
    }

    #[test]
    fn forward_matches_direct_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in specs() {
            let input = Tensor::from_vec(
                [2, spec.in_channels, 6, 5, 4],
                rand_vec(2 * spec.in_channels * 120, &mut rng),
            )
            .unwrap();
            let conv = Conv3d::new(spec, &mut rng).unwrap();
            let mut conv = conv;
            if let Some(b) = &mut conv.bias {
                b.value = rand_vec(spec.out_channels, &mut rng);
            }
            let got = conv.forward(&input).unwrap();
            let want = brute_conv(
                &input,
                &spec,
                &conv.weight.value,
                conv.bias.as_ref().map(|b| &b.value[..]),
            );
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "{spec:?}: {a} vs {b}");
            }
        }
    }

    /// Finite differences in f64 on the scalar loss sum(out * r).
    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for spec in specs() {
            let shape = [1, spec.in_channels, 4, 5, 3];
            let input = Tensor::from_vec(shape, rand_vec(shape.iter().product(), &mut rng)).unwrap();
            let mut conv = Conv3d::new(spec, &mut rng).unwrap();
            let out = conv.forward_train(input.clone()).unwrap();
            let r = Tensor::from_vec(out.shape(), rand_vec(out.data().len(), &mut rng)).unwrap();
            let grad_in = conv.backward(&r);
            let loss = |inp: &Tensor, w: &[f32]| -> f64 {
                let o = brute_conv(inp, &spec, w, conv.bias.as_ref().map(|b| &b.value[..]));
                o.data()
                    .iter()
                    .zip(r.data())
                    .map(|(a, b)| (*a as f64) * (*b as f64))
                    .sum()
            };
            let h = 1e-2f32;
            for idx in [
                0,
                shape.iter().product::<usize>() / 2,
                shape.iter().product::<usize>() - 1,
            ] {
                let mut p = input.clone();
                p.data_mut()[idx] += h;
                let mut m = input.clone();
                m.data_mut()[idx] -= h;
                let fd = (loss(&p, &conv.weight.value) - loss(&m, &conv.weight.value)) / (2.0 * h as f64);
                assert!(
                    (fd - grad_in.data()[idx] as f64).abs() < 2e-3,
                    "{spec:?} dx[{idx}]: {fd} vs {}",
                    grad_in.data()[idx]
                );
            }
            for idx in [0, conv.weight.len() / 3, conv.weight.len() - 1] {
                let mut wp = conv.weight.value.clone();
                wp[idx] += h;
                let mut wm = conv.weight.value.clone();
                wm[idx] -= h;
                let fd = (loss(&input, &wp) - loss(&input, &wm)) / (2.0 * h as f64);
                assert!(
                    (fd - conv.weight.grad[idx] as f64).abs() < 2e-3,
                    "{spec:?} dw[{idx}]: {fd} vs {}",
                    conv.weight.grad[idx]
                );
            }
        }
    }

    #[test]
    fn delta_kernels_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = Volume::new(1, [5, 5, 5], [1.0; 3], rand_vec(125, &mut rng)).unwrap();
        let s = Kernel3d::delta(1, [3, 3, 1]).unwrap();
        let a = Kernel3d::delta(1, [1, 1, 3]).unwrap();
        assert_eq!(separable_conv3d(&v, &s, &a).unwrap(), v);
    }

    #[test]
    fn zero_kernels_give_zero_output() {
        let v = Volume::filled(1, [4, 4, 4], [1.0; 3], 2.5).unwrap();
        let s = Kernel3d::new(2, 1, [3, 3, 1], vec![0.0; 18]).unwrap();
        let a = Kernel3d::new(1, 2, [1, 1, 5], vec![0.0; 10]).unwrap();
        let out = separable_conv3d(&v, &s, &a).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn even_kernels_are_rejected() {
        let v = Volume::filled(1, [4, 4, 4], [1.0; 3], 1.0).unwrap();
        let s = Kernel3d::delta(1, [2, 2, 1]).unwrap();
        let a = Kernel3d::delta(1, [1, 1, 3]).unwrap();
        assert!(separable_conv3d(&v, &s, &a).is_err());
        let s = Kernel3d::delta(1, [3, 3, 1]).unwrap();
        let a = Kernel3d::delta(1, [1, 1, 4]).unwrap();
        assert!(separable_conv3d(&v, &s, &a).is_err());
    }

    #[test]
    fn inflation_with_one_rep_is_identity() {
        let k = Kernel2d::new(2, 1, [3, 3], (0..18).map(|i| i as f32).collect()).unwrap();
        let k3 = inflate_2d_to_3d(&k, 1).unwrap();
        assert_eq!(k3.extent, [3, 3, 1]);
        assert_eq!(k3.weights, k.weights);
        assert!(inflate_2d_to_3d(&k, 0).is_err());
    }

    #[test]
    fn inflated_copies_sum_to_the_source_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let k = Kernel2d::new(3, 2, [3, 3], rand_vec(54, &mut rng)).unwrap();
        for reps in [2, 3, 5, 7] {
            let k3 = inflate_2d_to_3d(&k, reps).unwrap();
            for (j, &v) in k.weights.iter().enumerate() {
                let s: f64 = k3.weights[j * reps..(j + 1) * reps].iter().map(|&w| w as f64).sum();
                assert!((s - v as f64).abs() < 1e-12, "reps {reps}: {s} vs {v}");
            }
        }
    }
}
