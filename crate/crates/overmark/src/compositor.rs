//! Alpha-fusion rendering: blending a watermark pattern over screen content.
//!
//! This is a software model of a transparent always-on-top overlay window.
//! The blend is convex with weights `alpha/255` and `(255-alpha)/255`, so a
//! small alpha perturbs every screen pixel by at most `alpha/255` — at the
//! default alpha of 5 that is under 2% of full scale. Evaluation composites
//! are quantized to the 8-bit grid, because real screenshots are 8-bit;
//! training uses a straight-through pass so gradients survive quantization.

use candle_core::Tensor;
use ndarray::{Array3, Zip};

use crate::config::FitMode;
use crate::error::{Error, Result};
use crate::image::{quantize_f32, ImageBuf, ScreenFrame, WatermarkPattern};

/// Blend opacity plus the pattern-fitting policy.
#[derive(Debug, Clone, Copy)]
pub struct AlphaConfig {
    /// Opacity in 0..=255; the published operating range is 5..=8.
    pub alpha: u8,
    pub fit_mode: FitMode,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self { alpha: 5, fit_mode: FitMode::Tile }
    }
}

/// Fits a pattern to a target resolution by tiling or scaling.
///
/// Tiling repeats the pattern with period `(H, W)` anchored at the origin;
/// scaling resizes bilinearly. Either mode is the identity when the target
/// already matches the pattern size.
pub fn fit_pattern(
    pattern: &WatermarkPattern,
    target: (usize, usize),
    fit_mode: FitMode,
) -> Result<WatermarkPattern> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::input("target resolution must be at least 1x1"));
    }
    let (ph, pw) = (pattern.height(), pattern.width());
    if (th, tw) == (ph, pw) {
        return Ok(pattern.clone());
    }
    match fit_mode {
        FitMode::Tile => {
            let src = pattern.buf().data();
            let mut out = Array3::zeros((th, tw, 3));
            for i in 0..th {
                for j in 0..tw {
                    for c in 0..3 {
                        out[[i, j, c]] = src[[i % ph, j % pw, c]];
                    }
                }
            }
            Ok(WatermarkPattern::new(ImageBuf::new(out)?))
        }
        FitMode::Scale => Ok(WatermarkPattern::new(pattern.buf().resize_bilinear(th, tw)?)),
    }
}

/// Blends a fitted pattern over a screen frame and quantizes to 8-bit levels.
///
/// The pattern must already be at screen resolution.
pub fn composite(
    pattern: &WatermarkPattern,
    screen: &ScreenFrame,
    alpha: u8,
) -> Result<ScreenFrame> {
    if (pattern.height(), pattern.width()) != (screen.height(), screen.width()) {
        return Err(Error::input(format!(
            "pattern {}x{} does not match screen {}x{}; call fit_pattern first",
            pattern.height(),
            pattern.width(),
            screen.height(),
            screen.width()
        )));
    }
    let w_p = alpha as f32 / 255.0;
    let w_s = (255 - alpha) as f32 / 255.0;
    let mut out = Array3::zeros((screen.height(), screen.width(), 3));
    Zip::from(&mut out)
        .and(pattern.buf().data())
        .and(screen.buf().data())
        .for_each(|o, &p, &s| *o = quantize_f32(w_p * p + w_s * s));
    Ok(ScreenFrame::new(ImageBuf::new(out)?))
}

/// Unquantized blend, for callers that quantize (or not) themselves.
pub fn composite_unquantized(
    pattern: &WatermarkPattern,
    screen: &ScreenFrame,
    alpha: u8,
) -> Result<ScreenFrame> {
    if (pattern.height(), pattern.width()) != (screen.height(), screen.width()) {
        return Err(Error::input("pattern and screen resolutions differ"));
    }
    let w_p = alpha as f32 / 255.0;
    let w_s = (255 - alpha) as f32 / 255.0;
    let mut out = Array3::zeros((screen.height(), screen.width(), 3));
    Zip::from(&mut out)
        .and(pattern.buf().data())
        .and(screen.buf().data())
        .for_each(|o, &p, &s| *o = w_p * p + w_s * s);
    Ok(ScreenFrame::new(ImageBuf::new(out)?))
}

/// Training-path blend on `(B, 3, H, W)` tensors.
///
/// With `straight_through` set, the forward value is snapped to the 8-bit
/// grid while the backward pass treats quantization as identity.
pub fn composite_tensor(
    pattern: &Tensor,
    screen: &Tensor,
    alpha: u8,
    straight_through: bool,
) -> Result<Tensor> {
    if pattern.dims() != screen.dims() {
        return Err(Error::input(format!(
            "pattern dims {:?} do not match screen dims {:?}",
            pattern.dims(),
            screen.dims()
        )));
    }
    let w_p = alpha as f64 / 255.0;
    let w_s = (255 - alpha) as f64 / 255.0;
    let blended = ((pattern * w_p)? + (screen * w_s)?)?;
    if straight_through {
        straight_through_quantize(&blended)
    } else {
        Ok(blended)
    }
}

/// `round(x * 255) / 255` in the forward pass, identity in the backward pass.
pub fn straight_through_quantize(x: &Tensor) -> Result<Tensor> {
    let q = ((x * 255.0)?.round()? / 255.0)?;
    Ok((x + (q - x)?.detach())?)
}
