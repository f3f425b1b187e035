//! Message codec: the diffuser (bits → pattern) and reverser (pattern →
//! bits) networks.
//!
//! The diffuser projects the payload through a linear layer into a small
//! spatial seed, then doubles resolution once per diffusion block. Each block
//! runs nearest-neighbor-upsample+conv and a stride-2 transposed convolution
//! in parallel and fuses them by mean — the two branches alias differently,
//! which suppresses checkerboard artifacts. A final convolution maps to three
//! channels and a sigmoid bounds the pattern to `[0, 1]`.
//!
//! The reverser is the inverse reader: a small two-branch multi-resolution
//! front end (full and half resolution with cross-fusion), a stack of
//! stride-2 reversal blocks with residual refinement, a double-convolution
//! block, global average pooling, and two linear layers down to per-bit
//! logits. Pooling makes the head independent of input resolution, but the
//! canonical contract is pattern-sized input; callers resize first.

use candle_core::{DType, Tensor};

use crate::config::TrainingConfig;
use crate::error::{Error, Result};
use crate::image::{ImageBuf, WatermarkPattern};
use crate::message::WatermarkMessage;
use crate::nn::{
    bilinear_resize, relu, sigmoid, upsample2x, Conv2d, ConvTranspose2d, GroupNorm, Linear,
    ParamStore,
};

/// One resolution-doubling diffusion block.
struct DiffusionBlock {
    up_conv: Conv2d,
    transposed: ConvTranspose2d,
    norm: GroupNorm,
}

impl DiffusionBlock {
    fn new(ps: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            up_conv: Conv2d::new(ps, &format!("{name}.up_conv"), in_ch, out_ch, 3, 1, 1)?,
            transposed: ConvTranspose2d::new(ps, &format!("{name}.transposed"), in_ch, out_ch, 4, 2, 1)?,
            norm: GroupNorm::new(ps, &format!("{name}.norm"), out_ch, groups)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let a = self.up_conv.forward(&upsample2x(x)?)?;
        let b = self.transposed.forward(x)?;
        let fused = ((a + b)? * 0.5)?;
        relu(&self.norm.forward(&fused)?)
    }
}

/// Bits → irregular watermark pattern.
pub struct MessageDiffuser {
    message_len: usize,
    seed_h: usize,
    seed_w: usize,
    seed_ch: usize,
    project: Linear,
    blocks: Vec<DiffusionBlock>,
    out_conv: Conv2d,
}

impl MessageDiffuser {
    /// Registers the diffuser's parameters under `diffuser.*`.
    pub fn new(ps: &mut ParamStore, cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let seed_h = cfg.seed_height();
        let seed_w = cfg.seed_width();
        let seed_ch = cfg.arch.seed_channels;
        let width = cfg.arch.diffuser_channels;
        let groups = cfg.arch.norm_groups;
        let project = Linear::new(ps, "diffuser.project", cfg.message_len, seed_ch * seed_h * seed_w)?;
        let mut blocks = Vec::with_capacity(cfg.diffusion_blocks);
        for i in 0..cfg.diffusion_blocks {
            let in_ch = if i == 0 { seed_ch } else { width };
            blocks.push(DiffusionBlock::new(ps, &format!("diffuser.block{i}"), in_ch, width, groups)?);
        }
        let last_ch = if cfg.diffusion_blocks == 0 { seed_ch } else { width };
        let out_conv = Conv2d::new(ps, "diffuser.out_conv", last_ch, 3, 3, 1, 1)?;
        Ok(Self { message_len: cfg.message_len, seed_h, seed_w, seed_ch, project, blocks, out_conv })
    }

    pub fn message_len(&self) -> usize {
        self.message_len
    }

    /// Batched forward: `(B, L)` bits in {0,1} → `(B, 3, H, W)` in `[0, 1]`.
    pub fn forward(&self, bits: &Tensor) -> Result<Tensor> {
        let (b, l) = bits.dims2().map_err(|_| Error::input("diffuser expects a (batch, bits) tensor"))?;
        if l != self.message_len {
            return Err(Error::config(format!(
                "message length {l} does not match configured length {}",
                self.message_len
            )));
        }
        let seed = self.project.forward(bits)?;
        let mut x = seed.reshape((b, self.seed_ch, self.seed_h, self.seed_w))?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        sigmoid(&self.out_conv.forward(&x)?)
    }

    /// Single-message convenience: runs the net and materializes the pattern.
    pub fn diffuse(&self, message: &WatermarkMessage, ps: &ParamStore) -> Result<WatermarkPattern> {
        if message.len() != self.message_len {
            return Err(Error::config(format!(
                "message has {} bits, model expects {}",
                message.len(),
                self.message_len
            )));
        }
        let bits = Tensor::from_vec(message.as_f32(), (1, message.len()), ps.device())?
            .to_dtype(ps.dtype())?;
        let out = self.forward(&bits)?.detach();
        Ok(WatermarkPattern::new(ImageBuf::from_tensor(&out)?))
    }
}

/// One stride-2 reversal block with residual refinement.
struct ReversalBlock {
    down: Conv2d,
    norm1: GroupNorm,
    refine: Conv2d,
    norm2: GroupNorm,
}

impl ReversalBlock {
    fn new(ps: &mut ParamStore, name: &str, in_ch: usize, out_ch: usize, groups: usize) -> Result<Self> {
        Ok(Self {
            down: Conv2d::new(ps, &format!("{name}.down"), in_ch, out_ch, 3, 2, 1)?,
            norm1: GroupNorm::new(ps, &format!("{name}.norm1"), out_ch, groups)?,
            refine: Conv2d::new(ps, &format!("{name}.refine"), out_ch, out_ch, 3, 1, 1)?,
            norm2: GroupNorm::new(ps, &format!("{name}.norm2"), out_ch, groups)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let z = relu(&self.norm1.forward(&self.down.forward(x)?)?)?;
        let r = self.norm2.forward(&self.refine.forward(&z)?)?;
        relu(&(z + r)?)
    }
}

/// Pattern → per-bit probabilities.
pub struct MessageReverser {
    message_len: usize,
    pattern_h: usize,
    pattern_w: usize,
    stem: Conv2d,
    stem_norm: GroupNorm,
    full_conv: Conv2d,
    full_norm: GroupNorm,
    half_down: Conv2d,
    half_down_norm: GroupNorm,
    half_conv: Conv2d,
    half_norm: GroupNorm,
    half_to_full: Conv2d,
    half_to_full_norm: GroupNorm,
    full_to_half: Conv2d,
    full_to_half_norm: GroupNorm,
    trunk_down: Conv2d,
    trunk_norm: GroupNorm,
    reversal: Vec<ReversalBlock>,
    head_conv1: Conv2d,
    head_norm1: GroupNorm,
    head_conv2: Conv2d,
    head_norm2: GroupNorm,
    fc1: Linear,
    fc2: Linear,
}

impl MessageReverser {
    /// Registers the reverser's parameters under `reverser.*`.
    pub fn new(ps: &mut ParamStore, cfg: &TrainingConfig) -> Result<Self> {
        cfg.validate()?;
        let full = cfg.arch.reverser_full_channels;
        let half = cfg.arch.reverser_half_channels;
        let head = cfg.arch.reverser_head_channels;
        let groups = cfg.arch.norm_groups;
        let n2 = cfg.reversal_blocks;
        let mut reversal = Vec::with_capacity(n2);
        let mut ch = half;
        for i in 0..n2 {
            // widen linearly from the trunk width to the head width
            let next = half + (head - half) * (i + 1) / n2.max(1);
            reversal.push(ReversalBlock::new(ps, &format!("reverser.reversal{i}"), ch, next, groups)?);
            ch = next;
        }
        let head_in = ch;
        Ok(Self {
            message_len: cfg.message_len,
            pattern_h: cfg.pattern_height,
            pattern_w: cfg.pattern_width,
            stem: Conv2d::new(ps, "reverser.stem", 3, full, 3, 1, 1)?,
            stem_norm: GroupNorm::new(ps, "reverser.stem_norm", full, groups)?,
            full_conv: Conv2d::new(ps, "reverser.full_conv", full, full, 3, 1, 1)?,
            full_norm: GroupNorm::new(ps, "reverser.full_norm", full, groups)?,
            half_down: Conv2d::new(ps, "reverser.half_down", full, half, 3, 2, 1)?,
            half_down_norm: GroupNorm::new(ps, "reverser.half_down_norm", half, groups)?,
            half_conv: Conv2d::new(ps, "reverser.half_conv", half, half, 3, 1, 1)?,
            half_norm: GroupNorm::new(ps, "reverser.half_norm", half, groups)?,
            half_to_full: Conv2d::new(ps, "reverser.half_to_full", half, full, 1, 1, 0)?,
            half_to_full_norm: GroupNorm::new(ps, "reverser.half_to_full_norm", full, groups)?,
            full_to_half: Conv2d::new(ps, "reverser.full_to_half", full, half, 3, 2, 1)?,
            full_to_half_norm: GroupNorm::new(ps, "reverser.full_to_half_norm", half, groups)?,
            trunk_down: Conv2d::new(ps, "reverser.trunk_down", full, half, 3, 2, 1)?,
            trunk_norm: GroupNorm::new(ps, "reverser.trunk_norm", half, groups)?,
            reversal,
            head_conv1: Conv2d::new(ps, "reverser.head_conv1", head_in, head_in, 3, 1, 1)?,
            head_norm1: GroupNorm::new(ps, "reverser.head_norm1", head_in, groups)?,
            head_conv2: Conv2d::new(ps, "reverser.head_conv2", head_in, head_in, 3, 1, 1)?,
            head_norm2: GroupNorm::new(ps, "reverser.head_norm2", head_in, groups)?,
            fc1: Linear::new(ps, "reverser.fc1", head_in, head_in)?,
            fc2: Linear::new(ps, "reverser.fc2", head_in, cfg.message_len)?,
        })
    }

    pub fn message_len(&self) -> usize {
        self.message_len
    }

    /// Batched forward: `(B, 3, H, W)` pattern → `(B, L)` probabilities.
    pub fn forward(&self, pattern: &Tensor) -> Result<Tensor> {
        let (_b, c, h, w) = pattern
            .dims4()
            .map_err(|_| Error::input("reverser expects a (batch, 3, H, W) tensor"))?;
        if c != 3 {
            return Err(Error::input(format!("reverser expects 3 channels, got {c}")));
        }
        if h != self.pattern_h || w != self.pattern_w {
            return Err(Error::config(format!(
                "pattern {h}x{w} does not match trained size {}x{}",
                self.pattern_h, self.pattern_w
            )));
        }
        let s = relu(&self.stem_norm.forward(&self.stem.forward(pattern)?)?)?;
        let f = relu(&self.full_norm.forward(&self.full_conv.forward(&s)?)?)?;
        let h0 = relu(&self.half_down_norm.forward(&self.half_down.forward(&s)?)?)?;
        let hb = relu(&self.half_norm.forward(&self.half_conv.forward(&h0)?)?)?;
        // cross-resolution fusion
        let up = self.half_to_full_norm.forward(&self.half_to_full.forward(&upsample2x(&hb)?)?)?;
        let f2 = relu(&(f.clone() + up)?)?;
        let down = self.full_to_half_norm.forward(&self.full_to_half.forward(&f)?)?;
        let h2 = relu(&(hb + down)?)?;
        let mut t = relu(&(h2 + self.trunk_norm.forward(&self.trunk_down.forward(&f2)?)?)?)?;
        for block in &self.reversal {
            t = block.forward(&t)?;
        }
        let d = relu(&self.head_norm1.forward(&self.head_conv1.forward(&t)?)?)?;
        let d = relu(&self.head_norm2.forward(&self.head_conv2.forward(&d)?)?)?;
        let pooled = d.mean(3)?.mean(2)?;
        let z = relu(&self.fc1.forward(&pooled)?)?;
        sigmoid(&self.fc2.forward(&z)?)
    }

    /// Single-pattern convenience: resizes to the canonical pattern size if
    /// needed and returns per-bit probabilities.
    pub fn reverse(&self, pattern: &WatermarkPattern, ps: &ParamStore) -> Result<Vec<f32>> {
        let t = pattern.buf().to_tensor(ps.device())?.to_dtype(ps.dtype())?.unsqueeze(0)?;
        let t = if pattern.height() != self.pattern_h || pattern.width() != self.pattern_w {
            bilinear_resize(&t, self.pattern_h, self.pattern_w)?
        } else {
            t
        };
        let probs = self.forward(&t)?.detach().to_dtype(DType::F32)?;
        Ok(probs.flatten_all()?.to_vec1::<f32>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ArchConfig;
    use crate::nn::max_rel_err;
    use crate::rng::rng_for;
    use candle_core::Device;

    fn tiny_cfg() -> TrainingConfig {
        let mut cfg = TrainingConfig::desk();
        cfg.message_len = 4;
        cfg.pattern_height = 16;
        cfg.pattern_width = 16;
        cfg.arch = ArchConfig {
            seed_channels: 4,
            diffuser_channels: 4,
            reverser_full_channels: 4,
            reverser_half_channels: 4,
            reverser_head_channels: 8,
            decoder_channels: [4, 4],
            norm_groups: 2,
        };
        cfg.validate().unwrap();
        cfg
    }

    fn build(cfg: &TrainingConfig, dtype: DType, seed: u64) -> (ParamStore, MessageDiffuser, MessageReverser) {
        let mut ps = ParamStore::new(&Device::Cpu, dtype, seed);
        let d = MessageDiffuser::new(&mut ps, cfg).unwrap();
        let r = MessageReverser::new(&mut ps, cfg).unwrap();
        (ps, d, r)
    }

    #[test]
    fn desk_shape_round_trip() {
        let cfg = TrainingConfig::desk();
        let (ps, diffuser, reverser) = build(&cfg, DType::F32, 1);
        let mut rng = rng_for(1, &["codec-test"], 0);
        let msg = WatermarkMessage::random(cfg.message_len, &mut rng);
        let pattern = diffuser.diffuse(&msg, &ps).unwrap();
        assert_eq!((pattern.height(), pattern.width()), (64, 64));
        let probs = reverser.reverse(&pattern, &ps).unwrap();
        assert_eq!(probs.len(), cfg.message_len);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn shape_arithmetic_for_doublings() {
        // seed 16 with two doublings lands at 64
        let cfg = TrainingConfig::desk();
        assert_eq!(cfg.seed_height() << cfg.diffusion_blocks, 64);
        let (ps, diffuser, _r) = build(&cfg, DType::F32, 3);
        let mut rng = rng_for(3, &["codec-test"], 1);
        let msg = WatermarkMessage::random(32, &mut rng);
        let p = diffuser.diffuse(&msg, &ps).unwrap();
        assert_eq!((p.height(), p.width()), (64, 64));
    }

    #[test]
    fn diffuse_is_deterministic_and_bounded() {
        let cfg = tiny_cfg();
        let (ps, diffuser, _r) = build(&cfg, DType::F32, 7);
        let mut rng = rng_for(7, &["codec-test"], 2);
        let msg = WatermarkMessage::random(4, &mut rng);
        let a = diffuser.diffuse(&msg, &ps).unwrap();
        let b = diffuser.diffuse(&msg, &ps).unwrap();
        assert_eq!(a.buf().data(), b.buf().data());
        assert!(a.buf().data().iter().all(|v| (0.0..=1.0).contains(v)));

        // same seed, fresh build: identical weights, identical output
        let (ps2, diffuser2, _r2) = build(&cfg, DType::F32, 7);
        let c = diffuser2.diffuse(&msg, &ps2).unwrap();
        assert_eq!(a.buf().data(), c.buf().data());
    }

    #[test]
    fn message_length_mismatch_is_config_error() {
        let cfg = tiny_cfg();
        let (ps, diffuser, _r) = build(&cfg, DType::F32, 7);
        let mut rng = rng_for(7, &["codec-test"], 3);
        let msg = WatermarkMessage::random(6, &mut rng);
        assert!(matches!(diffuser.diffuse(&msg, &ps), Err(Error::Config(_))));
    }

    #[test]
    fn unreachable_pattern_size_is_config_error() {
        let mut cfg = tiny_cfg();
        cfg.pattern_height = 24; // 24 >> 2 == 6, 6 << 2 == 24, but 24 % 8 != 0
        let mut ps = ParamStore::new(&Device::Cpu, DType::F32, 1);
        assert!(MessageDiffuser::new(&mut ps, &cfg).is_err());
        let mut cfg = tiny_cfg();
        cfg.pattern_height = 20; // 20 >> 2 == 5, 5 << 2 == 20 ok, 20 % 8 != 0 -> rejected
        assert!(MessageReverser::new(&mut ps, &cfg).is_err());
    }

    #[test]
    fn untrained_recovery_sits_at_chance() {
        let cfg = tiny_cfg();
        let (ps, diffuser, reverser) = build(&cfg, DType::F32, 21);
        let mut rng = rng_for(21, &["codec-test"], 4);
        let trials = 1000;
        let mut matches = 0usize;
        let mut total = 0usize;
        for _ in 0..trials {
            let msg = WatermarkMessage::random(cfg.message_len, &mut rng);
            let pattern = diffuser.diffuse(&msg, &ps).unwrap();
            let probs = reverser.reverse(&pattern, &ps).unwrap();
            let rec = WatermarkMessage::from_probabilities(&probs);
            matches += msg
                .bits()
                .iter()
                .zip(rec.bits().iter())
                .filter(|(a, b)| a == b)
                .count();
            total += cfg.message_len;
        }
        let bar = 100.0 * matches as f64 / total as f64;
        assert!((45.0..=55.0).contains(&bar), "untrained BAR should be near 50%, got {bar:.2}%");
    }

    /// Backprop through reverse(distort-free diffuse) against central finite
    /// differences on the diffuser weights, in f64.
    #[test]
    fn message_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let (ps, diffuser, reverser) = build(&cfg, DType::F64, 11);
        let mut rng = rng_for(11, &["codec-gradcheck"], 0);
        let msg = WatermarkMessage::random(cfg.message_len, &mut rng);
        let bits = Tensor::from_vec(msg.as_f32(), (1, cfg.message_len), ps.device())
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap();

        let loss_fn = |d: &MessageDiffuser, r: &MessageReverser| -> f64 {
            let pattern = d.forward(&bits).unwrap();
            let probs = r.forward(&pattern).unwrap();
            crate::losses::scalar(&crate::losses::l_message(&bits, &probs).unwrap()).unwrap()
        };

        let pattern = diffuser.forward(&bits).unwrap();
        let probs = reverser.forward(&pattern).unwrap();
        let loss = crate::losses::l_message(&bits, &probs).unwrap();
        let grads = loss.backward().unwrap();

        let h = 1e-4;
        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        let mut coord_rng = rng_for(11, &["codec-gradcheck", "coords"], 0);
        for (name, var) in ps.with_prefix("diffuser.") {
            let g = grads
                .get(&var)
                .unwrap_or_else(|| panic!("no gradient for {name}"))
                .flatten_all()
                .unwrap()
                .to_vec1::<f64>()
                .unwrap();
            let base = var.as_tensor().flatten_all().unwrap().to_vec1::<f64>().unwrap();
            let shape = var.dims().to_vec();
            // sample a handful of coordinates per tensor; full sweeps are slow
            let n_probe = 6.min(base.len());
            for _ in 0..n_probe {
                use rand::Rng;
                let idx = coord_rng.random_range(0..base.len());
                let mut plus = base.clone();
                plus[idx] += h;
                let mut minus = base.clone();
                minus[idx] -= h;
                let t_plus = Tensor::from_vec(plus, shape.as_slice(), ps.device()).unwrap();
                let t_minus = Tensor::from_vec(minus, shape.as_slice(), ps.device()).unwrap();
                var.set(&t_plus).unwrap();
                let fp = loss_fn(&diffuser, &reverser);
                var.set(&t_minus).unwrap();
                let fm = loss_fn(&diffuser, &reverser);
                let t0 = Tensor::from_vec(base.clone(), shape.as_slice(), ps.device()).unwrap();
                var.set(&t0).unwrap();
                analytic.push(g[idx]);
                numeric.push((fp - fm) / (2.0 * h));
            }
        }
        let err = max_rel_err(&analytic, &numeric);
        assert!(err <= 1e-3, "gradient mismatch: max rel err {err:.3e}");
    }
}
