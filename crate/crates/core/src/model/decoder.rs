use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::nn::{join, ActivationKind, Conv3d, ConvBnAct, ConvSpec, Module, Param, SepConvBlock, Tensor, Upsample};

/// conv-BN-ReLU (3×3×3), one or two separable blocks, trilinear upsampling.
#[derive(Debug, Clone)]
pub struct UpBlock {
    conv: ConvBnAct,
    seps: Vec<SepConvBlock>,
    up: Upsample,
}

impl UpBlock {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.conv.forward(x)?;
        for s in &self.seps {
            y = s.forward(&y)?;
        }
        Ok(self.up.forward(y))
    }

    fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let mut y = self.conv.forward_train(x)?;
        for s in &mut self.seps {
            y = s.forward_train(y)?;
        }
        Ok(self.up.forward_train(y))
    }

    fn backward(&mut self, g: Tensor) -> Tensor {
        let mut g = self.up.backward(g);
        for s in self.seps.iter_mut().rev() {
            g = s.backward(g);
        }
        self.conv.backward(g)
    }

    pub fn factor(&self) -> [usize; 3] {
        self.up.factor()
    }
}

impl Module for UpBlock {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        self.conv.params(&join(prefix, "conv"), out);
        for (i, s) in self.seps.iter().enumerate() {
            s.params(&join(prefix, &format!("sep{i}")), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv.params_mut(&join(prefix, "conv"), out);
        for (i, s) in self.seps.iter_mut().enumerate() {
            s.params_mut(&join(prefix, &format!("sep{i}")), out);
        }
    }
}

/// A cascade of upsampling blocks that brings one tap back to input
/// resolution, followed by a pointwise convolution to the class logits.
#[derive(Debug, Clone)]
pub struct Decoder {
    blocks: Vec<UpBlock>,
    head: Conv3d,
    in_channels: usize,
    stride: [usize; 3],
}

impl Decoder {
    pub fn new(cfg: &ModelConfig, tap: usize, rng: &mut impl Rng) -> Result<Self> {
        let in_channels = cfg.channels(cfg.tap_stages[tap]);
        let widths = cfg.decoder_widths(tap);
        let factors = cfg.upsampling_factors(tap);
        let mut blocks = Vec::with_capacity(widths.len());
        let mut c = in_channels;
        for (&w, &f) in widths.iter().zip(&factors) {
            let conv = ConvBnAct::new(ConvSpec::same(c, w, [3, 3, 3]), Some(ActivationKind::Relu), rng)?;
            let seps = (0..cfg.sep_blocks_per_up)
                .map(|_| SepConvBlock::new(w, w, w, 3, [1; 3], rng))
                .collect::<Result<Vec<_>>>()?;
            blocks.push(UpBlock {
                conv,
                seps,
                up: Upsample::new(f),
            });
            c = w;
        }
        let head = Conv3d::new(ConvSpec::same(c, cfg.num_classes, [1, 1, 1]).with_bias(true), rng)?;
        Ok(Self {
            blocks,
            head,
            in_channels,
            stride: cfg.cumulative_stride(cfg.tap_stages[tap]),
        })
    }

    pub fn blocks(&self) -> &[UpBlock] {
        &self.blocks
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Cumulative stride of the tap this decoder undoes.
    pub fn stride(&self) -> [usize; 3] {
        self.stride
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.clone();
        for b in &self.blocks {
            y = b.forward(&y)?;
        }
        self.head.forward(&y)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let mut y = x;
        for b in &mut self.blocks {
            y = b.forward_train(y)?;
        }
        self.head.forward_train(y)
    }

    pub fn backward(&mut self, g: &Tensor) -> Tensor {
        let mut g = self.head.backward(g);
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(g);
        }
        g
    }
}

impl Module for Decoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("up{i}")), out);
        }
        self.head.params(&join(prefix, "head"), out);
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.params_mut(&join(prefix, &format!("up{i}")), out);
        }
        self.head.params_mut(&join(prefix, "head"), out);
    }
}
