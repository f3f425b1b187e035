//! Screen decoder: recovers a pattern estimate from a (distorted)
//! watermarked screenshot.
//!
//! Fully convolutional — three conv blocks, two residual blocks, one final
//! conv block — with stride 1 throughout, so the output matches the input
//! size at any resolution. A sigmoid bounds the estimate to `[0, 1]`.

use candle_core::{DType, Tensor};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::image::{ImageBuf, ScreenFrame, WatermarkPattern};
use crate::nn::{relu, sigmoid, Conv2d, GroupNorm, ParamStore};

/// Smallest input the decoder accepts (receptive-field floor).
pub const MIN_INPUT: usize = 16;

struct ConvBlock {
    conv: Conv2d,
    norm: GroupNorm,
}

impl ConvBlock {
    fn new(ps: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &format!("{name}.conv"), in_ch, out_ch, 3, 1, 1)?,
            norm: GroupNorm::new(ps, &format!("{name}.norm"), out_ch, groups)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        relu(&self.norm.forward(&self.conv.forward(x)?)?)
    }
}

struct ResBlock {
    conv1: Conv2d,
    norm1: GroupNorm,
    conv2: Conv2d,
    norm2: GroupNorm,
}

impl ResBlock {
    fn new(ps: &mut ParamStore, name: &str, ch: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), ch, ch, 3, 1, 1)?,
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), ch, groups)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), ch, ch, 3, 1, 1)?,
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), ch, groups)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = relu(&self.norm1.forward(&self.conv1.forward(x)?)?)?;
        let y = self.norm2.forward(&self.conv2.forward(&y)?)?;
        relu(&(x + y)?)
    }
}

/// Screenshot → pattern estimate, same spatial size.
pub struct ScreenDecoder {
    block1: ConvBlock,
    block2: ConvBlock,
    block3: ConvBlock,
    res1: ResBlock,
    res2: ResBlock,
    out_conv: Conv2d,
}

impl ScreenDecoder {
    /// Registers the decoder's parameters under `decoder.*`.
    pub fn new(ps: &mut ParamStore, cfg: &TrainingConfig) -> Result<Self> {
        let [c1, c2] = cfg.arch.decoder_channels;
        let groups = cfg.arch.norm_groups;
        Ok(Self {
            block1: ConvBlock::new(ps, "decoder.block1", 3, c1, groups)?,
            block2: ConvBlock::new(ps, "decoder.block2", c1, c2, groups)?,
            block3: ConvBlock::new(ps, "decoder.block3", c2, c2, groups)?,
            res1: ResBlock::new(ps, "decoder.res1", c2, groups)?,
            res2: ResBlock::new(ps, "decoder.res2", c2, groups)?,
            out_conv: Conv2d::new(ps, "decoder.out_conv", c2, 3, 3, 1, 1)?,
        })
    }

    /// Batched forward: `(B, 3, Hs, Ws)` → `(B, 3, Hs, Ws)` in `[0, 1]`.
    pub fn forward(&self, screenshot: &Tensor) -> Result<Tensor> {
        let (_b, c, h, w) = screenshot
            .dims4()
            .map_err(|_| Error::input("decoder expects a (batch, 3, H, W) tensor"))?;
        if c != 3 {
            return Err(Error::input(format!("decoder expects 3 channels, got {c}")));
        }
        if h < MIN_INPUT || w < MIN_INPUT {
            return Err(Error::input(format!(
                "decoder input {h}x{w} is below the {MIN_INPUT}x{MIN_INPUT} minimum"
            )));
        }
        let x = self.block1.forward(screenshot)?;
        let x = self.block2.forward(&x)?;
        let x = self.block3.forward(&x)?;
        let x = self.res1.forward(&x)?;
        let x = self.res2.forward(&x)?;
        sigmoid(&self.out_conv.forward(&x)?)
    }

    /// Single-frame convenience: decodes a screenshot into a pattern estimate
    /// of the same resolution.
    pub fn decode(&self, screenshot: &ScreenFrame, ps: &ParamStore) -> Result<WatermarkPattern> {
        let t = screenshot.buf().to_tensor(ps.device())?.to_dtype(ps.dtype())?.unsqueeze(0)?;
        let out = self.forward(&t)?.detach().to_dtype(DType::F32)?;
        Ok(WatermarkPattern::new(ImageBuf::from_tensor(&out)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn build(cfg: &TrainingConfig) -> (ParamStore, ScreenDecoder) {
        let mut ps = ParamStore::new(&Device::Cpu, DType::F32, 2);
        let d = ScreenDecoder::new(&mut ps, cfg).unwrap();
        (ps, d)
    }

    #[test]
    fn output_matches_input_size_at_any_resolution() {
        let cfg = TrainingConfig::desk();
        let (_ps, dec) = build(&cfg);
        for (h, w) in [(64, 64), (128, 128), (64, 96), (17, 33)] {
            let x = Tensor::rand(0f32, 1f32, (1, 3, h, w), &Device::Cpu).unwrap();
            let y = dec.forward(&x).unwrap();
            assert_eq!(y.dims(), &[1, 3, h, w], "at {h}x{w}");
        }
    }

    #[test]
    fn output_is_bounded() {
        let cfg = TrainingConfig::desk();
        let (_ps, dec) = build(&cfg);
        let x = Tensor::rand(0f32, 1f32, (2, 3, 32, 32), &Device::Cpu).unwrap();
        let y = dec.forward(&x).unwrap();
        let max = y.max_all().unwrap().to_scalar::<f32>().unwrap();
        let min = y.min_all().unwrap().to_scalar::<f32>().unwrap();
        assert!((0.0..=1.0).contains(&min) && (0.0..=1.0).contains(&max));
    }

    #[test]
    fn undersized_input_is_rejected() {
        let cfg = TrainingConfig::desk();
        let (_ps, dec) = build(&cfg);
        let x = Tensor::rand(0f32, 1f32, (1, 3, 8, 32), &Device::Cpu).unwrap();
        assert!(dec.forward(&x).is_err());
    }
}
