use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{join, Activation, ActivationKind, BatchNorm3d, Conv3d, ConvSpec, Module, Param, Tensor};
use crate::error::Result;

/// Convolution, batch normalisation, optional activation.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
    act: Option<Activation>,
}

impl ConvBnAct {
    pub fn new(spec: ConvSpec, act: Option<ActivationKind>, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            bn: BatchNorm3d::new(spec.out_channels),
            conv: Conv3d::new(spec, rng)?,
            act: act.map(Activation::new),
        })
    }

    pub fn out_channels(&self) -> usize {
        self.conv.spec().out_channels
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = self.bn.forward(&self.conv.forward(x)?);
        Ok(match &self.act {
            Some(a) => a.forward(y),
            None => y,
        })
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let y = self.bn.forward_train(self.conv.forward_train(x)?);
        Ok(match &mut self.act {
            Some(a) => a.forward_train(y),
            None => y,
        })
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let g = match &mut self.act {
            Some(a) => a.backward(g),
            None => g,
        };
        let g = self.bn.backward(&g);
        self.conv.backward(&g)
    }
}

impl Module for ConvBnAct {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv.params(&join(prefix, "conv"), out);
        self.bn.params(&join(prefix, "bn"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.params_mut(&join(prefix, "conv"), out);
        self.bn.params_mut(&join(prefix, "bn"), out);
    }
}

/// Separable 3D convolution block: a `k×k×1` spatial conv-BN-ReLU followed by
/// a `1×1×k` axial conv-BN-ReLU. Strides split the same way: `(sx, sy, 1)`
/// for the spatial part and `(1, 1, sz)` for the axial part.
#[derive(Debug, Clone)]
pub struct SepConvBlock {
    pub spatial: ConvBnAct,
    pub axial: ConvBnAct,
}

impl SepConvBlock {
    pub fn new(
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        k: usize,
        stride: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spatial = ConvSpec::same(in_channels, mid_channels, [k, k, 1]).with_stride([stride[0], stride[1], 1]);
        let axial = ConvSpec::same(mid_channels, out_channels, [1, 1, k]).with_stride([1, 1, stride[2]]);
        Ok(Self {
            spatial: ConvBnAct::new(spatial, Some(ActivationKind::Relu), rng)?,
            axial: ConvBnAct::new(axial, Some(ActivationKind::Relu), rng)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.axial.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.axial.forward(&self.spatial.forward(x)?)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let y = self.spatial.forward_train(x)?;
        self.axial.forward_train(y)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let g = self.axial.backward(g);
        self.spatial.backward(g)
    }
}

impl Module for SepConvBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.spatial.params(&join(prefix, "spatial"), out);
        self.axial.params(&join(prefix, "axial"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.spatial.params_mut(&join(prefix, "spatial"), out);
        self.axial.params_mut(&join(prefix, "axial"), out);
    }
}

/// Bottlenecked separable block standing in for an inception-style mixed
/// layer: pointwise reduction to `out / 4` channels, then a separable 3×3×3
/// convolution expanding to `out`.
#[derive(Debug, Clone)]
pub struct MixedBlock {
    pub reduce: ConvBnAct,
    pub sep: SepConvBlock,
}

impl MixedBlock {
    pub fn new(in_channels: usize, out_channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let mid = (out_channels / 4).max(1);
        Ok(Self {
            reduce: ConvBnAct::new(
                ConvSpec::same(in_channels, mid, [1, 1, 1]),
                Some(ActivationKind::Relu),
                rng,
            )?,
            sep: SepConvBlock::new(mid, mid, out_channels, 3, [1; 3], rng)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.sep.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.sep.forward(&self.reduce.forward(x)?)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let y = self.reduce.forward_train(x)?;
        self.sep.forward_train(y)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let g = self.sep.backward(g);
        self.reduce.backward(g)
    }
}

impl Module for MixedBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.reduce.params(&join(prefix, "reduce"), out);
        self.sep.params(&join(prefix, "sep"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.reduce.params_mut(&join(prefix, "reduce"), out);
        self.sep.params_mut(&join(prefix, "sep"), out);
    }
}

/// Inverted residual block with a linear bottleneck: pointwise expansion
/// (skipped when the expansion factor is 1), 3×3×3 depthwise convolution
/// carrying the stride, linear pointwise projection, and an identity shortcut
/// when stride is 1 and channel counts match.
#[derive(Debug, Clone)]
pub struct InvertedResidual {
    pub expand: Option<ConvBnAct>,
    pub depthwise: ConvBnAct,
    pub project: ConvBnAct,
    residual: bool,
}

impl InvertedResidual {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        expansion: usize,
        stride: [usize; 3],
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = in_channels * expansion;
        let expand = if expansion != 1 {
            Some(ConvBnAct::new(
                ConvSpec::same(in_channels, hidden, [1, 1, 1]),
                Some(ActivationKind::Relu6),
                rng,
            )?)
        } else {
            None
        };
        let dw = ConvSpec::same(hidden, hidden, [3, 3, 3])
            .with_stride(stride)
            .with_groups(hidden);
        Ok(Self {
            expand,
            depthwise: ConvBnAct::new(dw, Some(ActivationKind::Relu6), rng)?,
            project: ConvBnAct::new(ConvSpec::same(hidden, out_channels, [1, 1, 1]), None, rng)?,
            residual: stride == [1, 1, 1] && in_channels == out_channels,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.project.out_channels()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = match &self.expand {
            Some(e) => e.forward(x)?,
            None => x.clone(),
        };
        let mut y = self.project.forward(&self.depthwise.forward(&h)?)?;
        if self.residual {
            y.add_assign(x);
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let shortcut = self.residual.then(|| x.clone());
        let h = match &mut self.expand {
            Some(e) => e.forward_train(x)?,
            None => x,
        };
        let h = self.depthwise.forward_train(h)?;
        let mut y = self.project.forward_train(h)?;
        if let Some(s) = shortcut {
            y.add_assign(&s);
        }
        Ok(y)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let shortcut = self.residual.then(|| g.clone());
        let g = self.project.backward(g);
        let g = self.depthwise.backward(g);
        let mut g = match &mut self.expand {
            Some(e) => e.backward(g),
            None => g,
        };
        if let Some(s) = shortcut {
            g.add_assign(&s);
        }
        g
    }
}

impl Module for InvertedResidual {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        if let Some(e) = &self.expand {
            e.params(&join(prefix, "expand"), out);
        }
        self.depthwise.params(&join(prefix, "depthwise"), out);
        self.project.params(&join(prefix, "project"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        if let Some(e) = &mut self.expand {
            e.params_mut(&join(prefix, "expand"), out);
        }
        self.depthwise.params_mut(&join(prefix, "depthwise"), out);
        self.project.params_mut(&join(prefix, "project"), out);
    }
}
