//! Run configuration: presets, architecture sizes, distortion ranges.
//!
//! Two presets ship with the toolkit:
//!
//! - `paper`: 100-bit payload, 512x512 pattern, 5 diffusion blocks — the
//!   full-scale setup (roughly 100 epochs on a large corpus, accelerator
//!   territory).
//! - `desk`: 32-bit payload, 64x64 pattern, 2 diffusion blocks — small enough
//!   to train on a workstation CPU while exercising every code path.
//!
//! Config files are TOML documents that name a preset and override individual
//! fields. Unknown keys are rejected rather than silently ignored.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a pattern is fitted to a screen of different resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMode {
    /// Repeat the pattern with its native period, starting at the origin.
    Tile,
    /// Bilinearly resize the pattern to the target resolution.
    Scale,
}

/// Loss mixing weights.
///
/// `zero`..`channel` weight the four pattern-control terms; `pattern` and
/// `message` mix the pattern total against the recovery term in the stage-1
/// objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub zero: f64,
    pub dispersion: f64,
    pub variation: f64,
    pub channel: f64,
    pub pattern: f64,
    pub message: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { zero: 1.0, dispersion: 0.5, variation: 0.1, channel: 0.01, pattern: 0.1, message: 1.0 }
    }
}

/// Network widths. Every count here is a free choice, not a contract; the
/// defaults are sized for the corresponding preset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    /// Channels of the seed tensor the diffuser's linear layer produces.
    pub seed_channels: usize,
    /// Working width of the diffusion blocks.
    pub diffuser_channels: usize,
    /// Full-resolution branch width of the reverser front end.
    pub reverser_full_channels: usize,
    /// Half-resolution branch width of the reverser front end.
    pub reverser_half_channels: usize,
    /// Width after the last reversal block (head input).
    pub reverser_head_channels: usize,
    /// Screen-decoder widths: first conv block, then the working width.
    pub decoder_channels: [usize; 2],
    /// Group count for the batch-independent normalization layers.
    pub norm_groups: usize,
}

impl ArchConfig {
    pub fn paper() -> Self {
        Self {
            seed_channels: 64,
            diffuser_channels: 64,
            reverser_full_channels: 32,
            reverser_half_channels: 64,
            reverser_head_channels: 128,
            decoder_channels: [32, 64],
            norm_groups: 8,
        }
    }

    pub fn desk() -> Self {
        Self {
            seed_channels: 12,
            diffuser_channels: 12,
            reverser_full_channels: 8,
            reverser_half_channels: 16,
            reverser_head_channels: 32,
            decoder_channels: [12, 16],
            norm_groups: 4,
        }
    }
}

/// Which image-level distortion kinds the sampler may draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    Crop,
    Cropout,
    Resize,
}

/// Which pixel-level distortion kinds the sampler may draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PixelKind {
    Jpeg,
    Noise,
    Blur,
}

/// Parameter ranges for image-level distortions during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDistortRanges {
    pub kinds: Vec<ImageKind>,
    /// Kept-area fraction range for crop.
    pub crop_keep: [f64; 2],
    /// Replaced-area fraction range for cropout.
    pub cropout_ratio: [f64; 2],
    /// Scale-factor range for resize.
    pub resize_factor: [f64; 2],
}

impl Default for ImageDistortRanges {
    fn default() -> Self {
        Self {
            kinds: vec![ImageKind::Crop, ImageKind::Cropout, ImageKind::Resize],
            crop_keep: [0.7, 1.0],
            cropout_ratio: [0.0, 0.2],
            resize_factor: [0.5, 3.0],
        }
    }
}

/// Parameter ranges for pixel-level distortions during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelDistortRanges {
    pub kinds: Vec<PixelKind>,
    /// JPEG quality range (inclusive).
    pub jpeg_quality: [u8; 2],
    /// Gaussian-noise standard-deviation range.
    pub noise_sigma: [f64; 2],
    /// Odd Gaussian-blur kernel sizes to choose among.
    pub blur_kernels: Vec<usize>,
}

impl Default for PixelDistortRanges {
    fn default() -> Self {
        Self {
            kinds: vec![PixelKind::Jpeg, PixelKind::Noise, PixelKind::Blur],
            jpeg_quality: [50, 99],
            noise_sigma: [0.0, 0.1],
            blur_kernels: vec![1, 3, 5, 7],
        }
    }
}

/// Reading of the crop/cropout percentages.
///
/// The default reads crop p as the *kept* area fraction and cropout p as the
/// *replaced* fraction. `Inverted` flips both readings for experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CropSemantics {
    #[default]
    KeepArea,
    Inverted,
}

/// Everything a training run needs, serializable into checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Name of the preset this config started from (recorded for logs).
    pub preset: String,
    /// Payload length in bits.
    pub message_len: usize,
    /// Pattern height.
    pub pattern_height: usize,
    /// Pattern width.
    pub pattern_width: usize,
    /// Batch size.
    pub batch_size: usize,
    /// Number of resolution-doubling diffusion blocks.
    pub diffusion_blocks: usize,
    /// Number of downsampling reversal blocks.
    pub reversal_blocks: usize,
    /// Blend opacity in 0..=255.
    pub alpha: u8,
    /// Pattern-to-screen fitting mode.
    pub fit_mode: FitMode,
    pub loss_weights: LossWeights,
    pub learning_rate: f64,
    /// Epoch budget for one training run (one stage).
    pub epochs: usize,
    /// Base seed; all randomness derives from it.
    pub seed: u64,
    pub arch: ArchConfig,
    pub image_distortions: ImageDistortRanges,
    pub pixel_distortions: PixelDistortRanges,
    /// Global-norm gradient clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Apply straight-through 8-bit quantization after compositing.
    pub quantize_in_training: bool,
    /// Compute the pattern-control losses on the distorted pattern instead of
    /// the generated one.
    pub pattern_loss_on_distorted: bool,
    /// Use sample variance (divide by n-1) in the dispersion loss.
    pub sample_variance: bool,
    pub crop_semantics: CropSemantics,
    /// Corpus manifest path, if the run needs screen content.
    pub dataset: Option<PathBuf>,
}

impl TrainingConfig {
    /// Full-scale configuration.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            message_len: 100,
            pattern_height: 512,
            pattern_width: 512,
            batch_size: 16,
            diffusion_blocks: 5,
            reversal_blocks: 2,
            alpha: 5,
            fit_mode: FitMode::Tile,
            loss_weights: LossWeights::default(),
            learning_rate: 1e-5,
            epochs: 100,
            seed: 0,
            arch: ArchConfig::paper(),
            image_distortions: ImageDistortRanges::default(),
            pixel_distortions: PixelDistortRanges::default(),
            grad_clip: Some(1.0),
            quantize_in_training: true,
            pattern_loss_on_distorted: false,
            sample_variance: false,
            crop_semantics: CropSemantics::KeepArea,
            dataset: None,
        }
    }

    /// Workstation-scale configuration.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            message_len: 32,
            pattern_height: 64,
            pattern_width: 64,
            batch_size: 16,
            diffusion_blocks: 2,
            reversal_blocks: 2,
            alpha: 5,
            fit_mode: FitMode::Tile,
            loss_weights: LossWeights::default(),
            learning_rate: 1e-4,
            epochs: 25,
            seed: 0,
            arch: ArchConfig::desk(),
            image_distortions: ImageDistortRanges::default(),
            pixel_distortions: PixelDistortRanges::default(),
            grad_clip: Some(1.0),
            quantize_in_training: true,
            pattern_loss_on_distorted: false,
            sample_variance: false,
            crop_semantics: CropSemantics::KeepArea,
            dataset: None,
        }
    }

    /// A preset by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::config(format!(
                "unknown preset {other:?}; available: paper, desk"
            ))),
        }
    }

    /// Spatial size of the diffuser's seed tensor (`H >> diffusion_blocks`).
    pub fn seed_height(&self) -> usize {
        self.pattern_height >> self.diffusion_blocks
    }

    pub fn seed_width(&self) -> usize {
        self.pattern_width >> self.diffusion_blocks
    }

    /// Validates internal consistency; call after any manual field edits.
    pub fn validate(&self) -> Result<()> {
        if self.message_len == 0 {
            return Err(Error::config("message_len must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be positive"));
        }
        let n1 = self.diffusion_blocks;
        for (name, dim) in [("pattern_height", self.pattern_height), ("pattern_width", self.pattern_width)] {
            if dim == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
            let base = dim >> n1;
            if base == 0 || base << n1 != dim {
                return Err(Error::config(format!(
                    "{name} = {dim} is not reachable by {n1} doublings from a whole seed size"
                )));
            }
            let trunk_div = 1usize << (1 + self.reversal_blocks);
            if dim % trunk_div != 0 {
                return Err(Error::config(format!(
                    "{name} = {dim} must be divisible by {trunk_div} (one halving plus {} reversal blocks)",
                    self.reversal_blocks
                )));
            }
        }
        let q = self.pixel_distortions.jpeg_quality;
        if q[0] < 1 || q[1] > 100 || q[0] > q[1] {
            return Err(Error::config(format!("jpeg_quality range {q:?} must lie within [1, 100]")));
        }
        for &k in &self.pixel_distortions.blur_kernels {
            if k % 2 == 0 || k == 0 {
                return Err(Error::config(format!("blur kernel size {k} must be odd")));
            }
        }
        let ck = self.image_distortions.crop_keep;
        if !(ck[0] > 0.0 && ck[1] <= 1.0 && ck[0] <= ck[1]) {
            return Err(Error::config(format!("crop_keep range {ck:?} must lie within (0, 1]")));
        }
        let co = self.image_distortions.cropout_ratio;
        if !(co[0] >= 0.0 && co[1] < 1.0 && co[0] <= co[1]) {
            return Err(Error::config(format!("cropout_ratio range {co:?} must lie within [0, 1)")));
        }
        let rf = self.image_distortions.resize_factor;
        if !(rf[0] > 0.0 && rf[0] <= rf[1]) {
            return Err(Error::config(format!("resize_factor range {rf:?} must be positive")));
        }
        let ns = self.pixel_distortions.noise_sigma;
        if !(ns[0] >= 0.0 && ns[0] <= ns[1]) {
            return Err(Error::config(format!("noise_sigma range {ns:?} must be non-negative")));
        }
        if self.image_distortions.kinds.is_empty() {
            return Err(Error::config("image distortion kind list must be non-empty"));
        }
        if self.pixel_distortions.kinds.is_empty() {
            return Err(Error::config("pixel distortion kind list must be non-empty"));
        }
        let w = self.loss_weights;
        for (name, v) in [
            ("zero", w.zero),
            ("dispersion", w.dispersion),
            ("variation", w.variation),
            ("channel", w.channel),
            ("pattern", w.pattern),
            ("message", w.message),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(format!("loss weight {name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Loads a TOML config file: a preset name plus field overrides.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Parses the TOML override document against its named preset.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overrides: ConfigFile =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse error: {e}")))?;
        let mut cfg = Self::preset(overrides.preset.as_deref().unwrap_or("desk"))?;
        overrides.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// On-disk override document. All fields optional; unknown keys rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    preset: Option<String>,
    message_len: Option<usize>,
    pattern_height: Option<usize>,
    pattern_width: Option<usize>,
    batch_size: Option<usize>,
    diffusion_blocks: Option<usize>,
    reversal_blocks: Option<usize>,
    alpha: Option<u8>,
    fit_mode: Option<FitMode>,
    loss_weights: Option<LossWeights>,
    learning_rate: Option<f64>,
    epochs: Option<usize>,
    seed: Option<u64>,
    arch: Option<ArchConfig>,
    image_distortions: Option<ImageDistortRanges>,
    pixel_distortions: Option<PixelDistortRanges>,
    grad_clip: Option<f64>,
    quantize_in_training: Option<bool>,
    pattern_loss_on_distorted: Option<bool>,
    sample_variance: Option<bool>,
    crop_semantics: Option<CropSemantics>,
    dataset: Option<PathBuf>,
}

impl ConfigFile {
    fn apply(self, cfg: &mut TrainingConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        set!(
            message_len,
            pattern_height,
            pattern_width,
            batch_size,
            diffusion_blocks,
            reversal_blocks,
            alpha,
            fit_mode,
            loss_weights,
            learning_rate,
            epochs,
            seed,
            arch,
            image_distortions,
            pixel_distortions,
            quantize_in_training,
            pattern_loss_on_distorted,
            sample_variance,
            crop_semantics,
            dataset
        );
        if let Some(v) = self.grad_clip {
            cfg.grad_clip = if v > 0.0 { Some(v) } else { None };
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        TrainingConfig::paper().validate().unwrap();
        TrainingConfig::desk().validate().unwrap();
    }

    #[test]
    fn preset_values_are_pinned() {
        let p = TrainingConfig::paper();
        assert_eq!(
            (p.message_len, p.pattern_height, p.pattern_width, p.batch_size),
            (100, 512, 512, 16)
        );
        assert_eq!((p.diffusion_blocks, p.reversal_blocks), (5, 2));
        assert_eq!(p.alpha, 5);
        assert_eq!(p.learning_rate, 1e-5);
        assert_eq!(p.epochs, 100);
        assert_eq!(p.seed_height(), 16);

        let d = TrainingConfig::desk();
        assert_eq!(
            (d.message_len, d.pattern_height, d.pattern_width, d.batch_size),
            (32, 64, 64, 16)
        );
        assert_eq!((d.diffusion_blocks, d.reversal_blocks), (2, 2));
        assert_eq!(d.learning_rate, 1e-4);
        assert!(d.epochs <= 30);
        assert_eq!(d.seed_height(), 16);
    }

    #[test]
    fn loss_weight_defaults_match_published_values() {
        let w = LossWeights::default();
        assert_eq!((w.zero, w.dispersion, w.variation, w.channel), (1.0, 0.5, 0.1, 0.01));
        assert_eq!((w.pattern, w.message), (0.1, 1.0));
    }

    #[test]
    fn toml_overrides_apply() {
        let cfg = TrainingConfig::from_toml_str(
            r#"
            preset = "desk"
            epochs = 3
            seed = 42

            [loss_weights]
            zero = 1.0
            dispersion = 0.5
            variation = 0.1
            channel = 0.01
            pattern = 0.2
            message = 1.0
            "#,
        )
        .unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.loss_weights.pattern, 0.2);
        assert_eq!(cfg.message_len, 32); // inherited from desk
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = TrainingConfig::from_toml_str("preset = \"desk\"\nnot_a_field = 1\n");
        assert!(err.is_err());
        let msg = format!("{}", err.unwrap_err());
        assert!(msg.contains("not_a_field"), "message should name the bad field: {msg}");
    }

    #[test]
    fn invalid_geometry_rejected() {
        let mut cfg = TrainingConfig::desk();
        cfg.pattern_height = 100; // not 16 << 2, not divisible by 8
        assert!(cfg.validate().is_err());
        let mut cfg = TrainingConfig::desk();
        cfg.pixel_distortions.blur_kernels = vec![4];
        assert!(cfg.validate().is_err());
    }
}
