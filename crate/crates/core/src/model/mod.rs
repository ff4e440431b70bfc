//! The segmentation network: a strided encoder, one decoder per tapped stage
//! and a pointwise fusion head.

mod config;
mod decoder;
mod encoder;

pub use config::{Backbone, ModelConfig, Scale, Variant};
pub use decoder::{Decoder, UpBlock};
pub use encoder::{Block, Stage};

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{inflate_2d_to_3d, Conv3d, ConvSpec, Kernel2d, Module, Param, Tensor};
use crate::volume::{Axis, Volume};

/// Encoder features at the tapped stages, shallow to deep.
#[derive(Debug, Clone)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

/// Final logits plus the per-decoder logits, all at input resolution.
///
/// Baseline variants carry a single intermediate that equals `final_logits`.
#[derive(Debug, Clone)]
pub struct SegmentationOutput {
    pub final_logits: Tensor,
    pub intermediate_logits: Vec<Tensor>,
}

impl SegmentationOutput {
    /// Sample `n` of the batch as volumes: `(final, intermediates)`.
    pub fn sample(&self, n: usize, spacing: [f64; 3]) -> (Volume, Vec<Volume>) {
        let pick = |t: &Tensor| t.unstack(spacing).swap_remove(n);
        (
            pick(&self.final_logits),
            self.intermediate_logits.iter().map(pick).collect(),
        )
    }

    pub fn all_finite(&self) -> bool {
        self.final_logits.all_finite() && self.intermediate_logits.iter().all(Tensor::all_finite)
    }
}

#[derive(Debug, Clone)]
pub struct HierNet {
    config: ModelConfig,
    stages: Vec<Stage>,
    decoders: Vec<Decoder>,
    fusion: Option<Conv3d>,
}

impl HierNet {
    /// Builds the network with parameters drawn from a seeded generator.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stages = encoder::build_stages(&config, &mut rng)?;
        let decoders = (0..config.tap_stages.len())
            .map(|t| Decoder::new(&config, t, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let fusion = if config.variant.is_baseline() {
            None
        } else {
            let c = config.num_classes;
            let spec = ConvSpec::same(c * decoders.len(), c, [1, 1, 1]).with_bias(true);
            Some(Conv3d::new(spec, &mut rng)?)
        };
        Ok(Self {
            config,
            stages,
            decoders,
            fusion,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn decoders(&self) -> &[Decoder] {
        &self.decoders
    }

    pub fn fusion(&self) -> Option<&Conv3d> {
        self.fusion.as_ref()
    }

    pub fn fusion_mut(&mut self) -> Option<&mut Conv3d> {
        self.fusion.as_mut()
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.is_trainable())
            .map(|(_, p)| p.len())
            .sum()
    }

    /// Every parameter and buffer under a stable dotted name.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        self.params("", &mut out);
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        self.params_mut("", &mut out);
        out
    }

    /// Values of every parameter and buffer, in [`HierNet::named_params`] order.
    pub fn snapshot(&self) -> Vec<Vec<f32>> {
        self.named_params().into_iter().map(|(_, p)| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f32>]) -> Result<()> {
        let mut params = self.named_params_mut();
        if params.len() != snapshot.len() {
            return Err(Error::shape("parameter snapshot", &[params.len()], &[snapshot.len()]));
        }
        for ((name, p), v) in params.iter_mut().zip(snapshot) {
            if p.value.len() != v.len() {
                return Err(Error::invalid(format!(
                    "snapshot entry {name} has {} values, expected {}",
                    v.len(),
                    p.value.len()
                )));
            }
            p.value.copy_from_slice(v);
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for (_, p) in self.named_params_mut() {
            p.zero_grad();
        }
    }

    /// Rejects inputs whose extents the encoder cannot divide exactly.
    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        if shape[1] != self.config.in_channels {
            return Err(Error::shape(
                "model input channels",
                &[self.config.in_channels],
                &[shape[1]],
            ));
        }
        let div = self.config.required_divisor();
        for axis in Axis::ALL {
            let (e, d) = (shape[2 + axis.index()], div[axis.index()]);
            if e % d != 0 {
                return Err(Error::Indivisible {
                    axis,
                    extent: e,
                    divisor: d,
                });
            }
        }
        Ok(())
    }

    pub fn encode(&self, x: &Tensor) -> Result<FeaturePyramid> {
        self.check_input(x)?;
        let mut levels = Vec::with_capacity(self.decoders.len());
        let mut h = x.clone();
        for (i, stage) in self.stages.iter().enumerate() {
            h = stage.forward(&h)?;
            if self.config.tap_stages.contains(&i) {
                levels.push(h.clone());
            }
        }
        Ok(FeaturePyramid { levels })
    }

    /// Runs decoder `tap` on its pyramid level, checking the level matches
    /// an input of extents `input`.
    pub fn decode(&self, tap: usize, level: &Tensor, input: [usize; 3]) -> Result<Tensor> {
        let decoder = self
            .decoders
            .get(tap)
            .ok_or_else(|| Error::invalid(format!("no decoder {tap}; model has {}", self.decoders.len())))?;
        self.check_level(decoder, level, input)?;
        decoder.forward(level)
    }

    fn check_level(&self, decoder: &Decoder, level: &Tensor, input: [usize; 3]) -> Result<()> {
        let s = decoder.stride();
        let expected = [decoder.in_channels(), input[0] / s[0], input[1] / s[1], input[2] / s[2]];
        let ls = level.shape();
        let found = [ls[1], ls[2], ls[3], ls[4]];
        if input.iter().zip(&s).any(|(e, d)| e % d != 0) || expected != found {
            return Err(Error::shape("decoder input", &expected, &found));
        }
        Ok(())
    }

    /// Concatenates the intermediate logits and applies the fusion head.
    pub fn fuse(&self, intermediates: &[Tensor]) -> Result<Tensor> {
        let fusion = self
            .fusion
            .as_ref()
            .ok_or_else(|| Error::invalid("baseline variants have no fusion head"))?;
        self.check_intermediates(intermediates)?;
        let refs: Vec<&Tensor> = intermediates.iter().collect();
        fusion.forward(&Tensor::concat_channels(&refs)?)
    }

    fn check_intermediates(&self, intermediates: &[Tensor]) -> Result<()> {
        if intermediates.len() != self.decoders.len() {
            return Err(Error::shape(
                "fusion inputs",
                &[self.decoders.len()],
                &[intermediates.len()],
            ));
        }
        let first = intermediates[0].shape();
        for t in intermediates {
            if t.shape() != first || t.channels() != self.config.num_classes {
                return Err(Error::shape("fusion inputs", &first, &t.shape()));
            }
        }
        Ok(())
    }

    /// Evaluation-mode forward pass (batch norm uses running statistics).
    pub fn forward(&self, x: &Tensor) -> Result<SegmentationOutput> {
        let pyramid = self.encode(x)?;
        let input = x.spatial();
        let intermediate_logits = pyramid
            .levels
            .iter()
            .enumerate()
            .map(|(k, level)| self.decode(k, level, input))
            .collect::<Result<Vec<_>>>()?;
        let final_logits = match &self.fusion {
            Some(_) => self.fuse(&intermediate_logits)?,
            None => intermediate_logits[0].clone(),
        };
        Ok(SegmentationOutput {
            final_logits,
            intermediate_logits,
        })
    }

    /// Training-mode forward pass; caches activations for [`HierNet::backward`].
    pub fn forward_train(&mut self, x: Tensor) -> Result<SegmentationOutput> {
        self.check_input(&x)?;
        let taps = self.config.tap_stages.clone();
        let mut levels = Vec::with_capacity(taps.len());
        let mut h = x;
        for (i, stage) in self.stages.iter_mut().enumerate() {
            h = stage.forward_train(h)?;
            if taps.contains(&i) {
                levels.push(h.clone());
            }
        }
        drop(h);
        let mut intermediate_logits = Vec::with_capacity(levels.len());
        for (decoder, level) in self.decoders.iter_mut().zip(levels) {
            intermediate_logits.push(decoder.forward_train(level)?);
        }
        let final_logits = match &mut self.fusion {
            Some(f) => {
                let refs: Vec<&Tensor> = intermediate_logits.iter().collect();
                f.forward_train(Tensor::concat_channels(&refs)?)?
            }
            None => intermediate_logits[0].clone(),
        };
        Ok(SegmentationOutput {
            final_logits,
            intermediate_logits,
        })
    }

    /// Accumulates parameter gradients given the loss gradient with respect
    /// to every output of the last [`HierNet::forward_train`].
    pub fn backward(&mut self, grad: &SegmentationOutput) {
        let mut d_inter = grad.intermediate_logits.clone();
        match &mut self.fusion {
            Some(f) => {
                let d_cat = f.backward(&grad.final_logits);
                let widths = [self.config.num_classes].repeat(d_inter.len());
                for (d, part) in d_inter.iter_mut().zip(d_cat.split_channels(&widths)) {
                    d.add_assign(&part);
                }
            }
            None => d_inter[0].add_assign(&grad.final_logits),
        }
        let mut d_levels: Vec<Option<Tensor>> = self
            .decoders
            .iter_mut()
            .zip(&d_inter)
            .map(|(dec, d)| Some(dec.backward(d)))
            .collect();
        let taps = &self.config.tap_stages;
        let mut g: Option<Tensor> = None;
        for (i, stage) in self.stages.iter_mut().enumerate().rev() {
            if let Some(k) = taps.iter().position(|&t| t == i) {
                let d = d_levels[k].take().expect("each level is consumed once");
                g = Some(match g {
                    Some(mut acc) => {
                        acc.add_assign(&d);
                        acc
                    }
                    None => d,
                });
            }
            if let Some(cur) = g.take() {
                g = Some(stage.backward(cur));
            }
        }
    }

    /// Overwrites the convolution weight `name` (as listed by
    /// [`HierNet::named_params`]) with a 2D kernel inflated along z.
    pub fn load_inflated(&mut self, name: &str, kernel: &Kernel2d) -> Result<()> {
        let mut params = self.named_params_mut();
        let (_, p) = params
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name:?}")))?;
        if p.shape.len() != 5 {
            return Err(Error::invalid(format!("{name} is not a convolution weight")));
        }
        let expected = [p.shape[0], p.shape[1], p.shape[2], p.shape[3]];
        let found = [
            kernel.out_channels,
            kernel.in_channels,
            kernel.extent[0],
            kernel.extent[1],
        ];
        if expected != found {
            return Err(Error::shape("inflated kernel", &expected, &found));
        }
        let inflated = inflate_2d_to_3d(kernel, p.shape[4])?;
        p.value.copy_from_slice(&inflated.weights);
        Ok(())
    }
}

impl Module for HierNet {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Param)>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.params(&crate::nn::join(prefix, &format!("encoder.stage{i}")), out);
        }
        for (k, d) in self.decoders.iter().enumerate() {
            d.params(&crate::nn::join(prefix, &format!("decoder{k}")), out);
        }
        if let Some(f) = &self.fusion {
            f.params(&crate::nn::join(prefix, "fusion"), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.params_mut(&crate::nn::join(prefix, &format!("encoder.stage{i}")), out);
        }
        for (k, d) in self.decoders.iter_mut().enumerate() {
            d.params_mut(&crate::nn::join(prefix, &format!("decoder{k}")), out);
        }
        if let Some(f) = &mut self.fusion {
            f.params_mut(&crate::nn::join(prefix, "fusion"), out);
        }
    }
}
