use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::config::{Backbone, ModelConfig};
use crate::error::Result;
use crate::nn::{
    join, ActivationKind, ConvBnAct, ConvSpec, InvertedResidual, MaxPool3d, MixedBlock, Module, Param, SepConvBlock,
    Tensor,
};

#[derive(Debug, Clone)]
pub enum Block {
    Pool(MaxPool3d),
    Conv(ConvBnAct),
    Sep(SepConvBlock),
    Mixed(MixedBlock),
    InvRes(InvertedResidual),
}

impl Block {
    fn name(&self) -> &'static str {
        match self {
            Block::Pool(_) => "pool",
            Block::Conv(_) => "conv",
            Block::Sep(_) => "sep",
            Block::Mixed(_) => "mixed",
            Block::InvRes(_) => "invres",
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Block::Pool(b) => b.forward(x),
            Block::Conv(b) => b.forward(x),
            Block::Sep(b) => b.forward(x),
            Block::Mixed(b) => b.forward(x),
            Block::InvRes(b) => b.forward(x),
        }
    }

    fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        match self {
            Block::Pool(b) => b.forward_train(x),
            Block::Conv(b) => b.forward_train(x),
            Block::Sep(b) => b.forward_train(x),
            Block::Mixed(b) => b.forward_train(x),
            Block::InvRes(b) => b.forward_train(x),
        }
    }

    fn backward(&mut self, g: Tensor) -> Tensor {
        match self {
            Block::Pool(b) => b.backward(&g),
            Block::Conv(b) => b.backward(g),
            Block::Sep(b) => b.backward(g),
            Block::Mixed(b) => b.backward(g),
            Block::InvRes(b) => b.backward(g),
        }
    }

    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        match self {
            Block::Pool(_) => {}
            Block::Conv(b) => b.params(prefix, out),
            Block::Sep(b) => b.params(prefix, out),
            Block::Mixed(b) => b.params(prefix, out),
            Block::InvRes(b) => b.params(prefix, out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        match self {
            Block::Pool(_) => {}
            Block::Conv(b) => b.params_mut(prefix, out),
            Block::Sep(b) => b.params_mut(prefix, out),
            Block::Mixed(b) => b.params_mut(prefix, out),
            Block::InvRes(b) => b.params_mut(prefix, out),
        }
    }
}

/// One encoder stage: a sequence of blocks whose output may feed a decoder.
#[derive(Debug, Clone)]
pub struct Stage {
    blocks: Vec<Block>,
}

impl Stage {
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut blocks = self.blocks.iter();
        let first = blocks.next().expect("stages are never empty");
        let mut y = first.forward(x)?;
        for b in blocks {
            y = b.forward(&y)?;
        }
        Ok(y)
    }

    pub fn forward_train(&mut self, x: Tensor) -> Result<Tensor> {
        let mut y = x;
        for b in &mut self.blocks {
            y = b.forward_train(y)?;
        }
        Ok(y)
    }

    pub fn backward(&mut self, g: Tensor) -> Tensor {
        let mut g = g;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(g);
        }
        g
    }
}

impl Module for Stage {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&join(prefix, &format!("{}{i}", b.name())), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            let name = format!("{}{i}", b.name());
            b.params_mut(&join(prefix, &name), out);
        }
    }
}

/// Builds the encoder stages up to (and including) the deepest tap.
pub fn build_stages(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Vec<Stage>> {
    let last = *cfg.tap_stages.last().expect("validated config has taps");
    let mut stages = Vec::with_capacity(last + 1);
    let mut c_prev = cfg.in_channels;
    for i in 0..=last {
        let c = cfg.channels(i);
        let stride = cfg.stride_schedule[i];
        let depth = cfg.stage_depths[i];
        let mut blocks = Vec::with_capacity(depth + 1);
        match cfg.variant.backbone() {
            Backbone::Separable => {
                if i == 0 {
                    // 7×7×7 separable stem carrying the first stride.
                    blocks.push(Block::Sep(SepConvBlock::new(c_prev, c, c, 7, stride, rng)?));
                    for _ in 1..depth {
                        blocks.push(Block::Sep(SepConvBlock::new(c, c, c, 3, [1; 3], rng)?));
                    }
                } else {
                    if stride != [1, 1, 1] {
                        blocks.push(Block::Pool(MaxPool3d::new(stride)));
                    }
                    for d in 0..depth {
                        let c_in = if d == 0 { c_prev } else { c };
                        blocks.push(Block::Mixed(MixedBlock::new(c_in, c, rng)?));
                    }
                }
            }
            Backbone::InvertedResidual => {
                if i == 0 {
                    let spec = ConvSpec::same(c_prev, c, [3, 3, 3]).with_stride(stride);
                    blocks.push(Block::Conv(ConvBnAct::new(spec, Some(ActivationKind::Relu6), rng)?));
                    for _ in 1..depth {
                        let spec = ConvSpec::same(c, c, [3, 3, 3]);
                        blocks.push(Block::Conv(ConvBnAct::new(spec, Some(ActivationKind::Relu6), rng)?));
                    }
                } else {
                    let t = if i == 1 { 1 } else { cfg.expansion };
                    for d in 0..depth {
                        let (c_in, s) = if d == 0 { (c_prev, stride) } else { (c, [1; 3]) };
                        blocks.push(Block::InvRes(InvertedResidual::new(c_in, c, t, s, rng)?));
                    }
                }
            }
        }
        stages.push(Stage { blocks });
        c_prev = c;
    }
    Ok(stages)
}
