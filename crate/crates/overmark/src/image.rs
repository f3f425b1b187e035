//! Image containers and conversions.
//!
//! All image math in the toolkit runs on `f32` RGB in `[0, 1]`:
//!
//! - [`ImageBuf`] is the raw container, an `(H, W, 3)` array.
//! - [`WatermarkPattern`] wraps a pattern the diffuser produced (or an
//!   estimate of one) at the pattern-canonical resolution.
//! - [`ScreenFrame`] wraps screen content of arbitrary resolution.
//!
//! Files are read and written through the `image` crate; the network side
//! converts to `candle` tensors in `(C, H, W)` layout.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, RgbImage};
use ndarray::Array3;

use crate::error::{Error, Result};

/// An `(H, W, 3)` RGB image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    data: Array3<f32>,
}

impl ImageBuf {
    /// Wraps an array, validating shape and range.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (h, w, c) = data.dim();
        if c != 3 {
            return Err(Error::input(format!("expected 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::input("image must be non-empty"));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::input("pixel values must be finite and in [0, 1]"));
        }
        Ok(Self { data })
    }

    /// Like [`ImageBuf::new`] but clamps out-of-range values instead of failing.
    pub fn from_clamped(mut data: Array3<f32>) -> Result<Self> {
        data.mapv_inplace(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        Self::new(data)
    }

    /// A constant-valued image.
    pub fn splat(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((height, width, 3), value))
    }

    pub fn height(&self) -> usize {
        self.data.dim().0
    }

    pub fn width(&self) -> usize {
        self.data.dim().1
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f32> {
        &mut self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    /// Loads a PNG/JPEG file and normalizes to `[0, 1]` RGB.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::image(path, e))?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    /// Writes the image as PNG (lossless).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let rgb = self.to_rgb8();
        rgb.save_with_format(path, image::ImageFormat::Png)
            .map_err(|e| Error::image(path, e))
    }

    /// Converts from an 8-bit RGB image.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((h as usize, w as usize, 3));
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[y as usize, x as usize, c]] = px.0[c] as f32 / 255.0;
            }
        }
        Self { data }
    }

    /// Quantizes to 8-bit RGB (round to nearest level).
    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w, _) = self.data.dim();
        let mut img = RgbImage::new(w as u32, h as u32);
        for y in 0..h {
            for x in 0..w {
                let px = [
                    quantize_u8(self.data[[y, x, 0]]),
                    quantize_u8(self.data[[y, x, 1]]),
                    quantize_u8(self.data[[y, x, 2]]),
                ];
                img.put_pixel(x as u32, y as u32, image::Rgb(px));
            }
        }
        img
    }

    /// Round-trips through the real JPEG codec at the given quality.
    pub fn jpeg_round_trip(&self, quality: u8) -> Result<Self> {
        let rgb = self.to_rgb8();
        let mut bytes = Vec::new();
        let enc = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, quality);
        rgb.write_with_encoder(enc)
            .map_err(|e| Error::input(format!("jpeg encode failed: {e}")))?;
        let dyn_img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
            .map_err(|e| Error::input(format!("jpeg decode failed: {e}")))?;
        Ok(Self::from_rgb8(&dyn_img.to_rgb8()))
    }

    /// Snaps every value to the 8-bit grid (`round(v * 255) / 255`) in place.
    pub fn quantize_in_place(&mut self) {
        self.data.mapv_inplace(quantize_f32);
    }

    /// Tensor in `(C, H, W)` layout.
    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        let (h, w, _) = self.data.dim();
        let mut chw = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    chw.push(self.data[[y, x, c]]);
                }
            }
        }
        Ok(Tensor::from_vec(chw, (3, h, w), device)?)
    }

    /// Converts a `(C, H, W)` or `(1, C, H, W)` tensor back to an image,
    /// clamping to `[0, 1]`.
    pub fn from_tensor(tensor: &Tensor) -> Result<Self> {
        let t = match tensor.dims() {
            [1, 3, _, _] => tensor.squeeze(0)?,
            [3, _, _] => tensor.clone(),
            dims => {
                return Err(Error::input(format!(
                    "expected (3, H, W) or (1, 3, H, W) tensor, got {dims:?}"
                )))
            }
        };
        let (_, h, w) = t.dims3()?;
        let flat = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        let mut data = Array3::zeros((h, w, 3));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[[y, x, c]] = flat[c * h * w + y * w + x].clamp(0.0, 1.0);
                }
            }
        }
        Ok(Self { data })
    }

    /// Bilinear resize with half-pixel centers (same taps as the tensor
    /// path, so the two routes agree up to float rounding).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Result<ImageBuf> {
        if out_h == 0 || out_w == 0 {
            return Err(Error::input("resize target must be at least 1x1"));
        }
        let (h, w, _) = self.data.dim();
        if (h, w) == (out_h, out_w) {
            return Ok(self.clone());
        }
        let row_taps = crate::nn::bilinear_taps(h, out_h);
        let col_taps = crate::nn::bilinear_taps(w, out_w);
        // rows first, then columns
        let mut rows = Array3::zeros((out_h, w, 3));
        for (i, &(i0, i1, w0, w1)) in row_taps.iter().enumerate() {
            for j in 0..w {
                for c in 0..3 {
                    rows[[i, j, c]] =
                        (w0 as f32) * self.data[[i0, j, c]] + (w1 as f32) * self.data[[i1, j, c]];
                }
            }
        }
        let mut out = Array3::zeros((out_h, out_w, 3));
        for (j, &(j0, j1, w0, w1)) in col_taps.iter().enumerate() {
            for i in 0..out_h {
                for c in 0..3 {
                    out[[i, j, c]] = (w0 as f32) * rows[[i, j0, c]] + (w1 as f32) * rows[[i, j1, c]];
                }
            }
        }
        ImageBuf::from_clamped(out)
    }

    /// Mean squared error against another image of the same shape.
    pub fn mse(&self, other: &ImageBuf) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::input(format!(
                "shape mismatch: {:?} vs {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = (*a - *b) as f64;
            acc += d * d;
        }
        Ok(acc / self.data.len() as f64)
    }
}

/// Rounds a `[0, 1]` value to its 8-bit level.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds a `[0, 1]` value onto the 8-bit grid, staying in `[0, 1]`.
pub fn quantize_f32(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// A diffused watermark pattern (or an estimate of one) at pattern resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkPattern(ImageBuf);

impl WatermarkPattern {
    pub fn new(buf: ImageBuf) -> Self {
        Self(buf)
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn buf(&self) -> &ImageBuf {
        &self.0
    }

    pub fn into_buf(self) -> ImageBuf {
        self.0
    }
}

/// Screen content (clean, watermarked, or distorted) at arbitrary resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScreenFrame(ImageBuf);

impl ScreenFrame {
    pub fn new(buf: ImageBuf) -> Self {
        Self(buf)
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn buf(&self) -> &ImageBuf {
        &self.0
    }

    pub fn into_buf(self) -> ImageBuf {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_shapes_and_ranges() {
        assert!(ImageBuf::new(Array3::zeros((0, 4, 3))).is_err());
        assert!(ImageBuf::new(Array3::zeros((4, 4, 1))).is_err());
        assert!(ImageBuf::new(Array3::from_elem((2, 2, 3), 1.5)).is_err());
        assert!(ImageBuf::new(Array3::from_elem((2, 2, 3), f32::NAN)).is_err());
        assert!(ImageBuf::new(Array3::from_elem((2, 2, 3), 0.5)).is_ok());
    }

    #[test]
    fn tensor_round_trip() {
        let mut data = Array3::zeros((3, 5, 3));
        for (i, v) in data.iter_mut().enumerate() {
            *v = (i % 17) as f32 / 16.0;
        }
        let img = ImageBuf::new(data).unwrap();
        let t = img.to_tensor(&Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[3, 3, 5]);
        let back = ImageBuf::from_tensor(&t).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn quantization_snaps_to_grid() {
        assert_eq!(quantize_u8(0.0), 0);
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_f32(0.5), 128.0 / 255.0);
        let mut img = ImageBuf::splat(2, 2, 0.123456).unwrap();
        img.quantize_in_place();
        let v = img.data()[[0, 0, 0]];
        assert_eq!(v, (0.123456f32 * 255.0).round() / 255.0);
    }

    #[test]
    fn png_round_trip_preserves_8bit_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let mut data = Array3::zeros((4, 6, 3));
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i * 7) % 256) as f32 / 255.0;
        }
        let img = ImageBuf::new(data).unwrap();
        img.save_png(&path).unwrap();
        let back = ImageBuf::load(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn jpeg_round_trip_is_lossy_but_close_at_high_quality() {
        let mut data = Array3::zeros((16, 16, 3));
        for (i, v) in data.iter_mut().enumerate() {
            *v = 0.3 + 0.4 * ((i as f32 * 0.05).sin() * 0.5 + 0.5) * 0.5;
        }
        let img = ImageBuf::from_clamped(data).unwrap();
        let rt = img.jpeg_round_trip(100).unwrap();
        let mse = img.mse(&rt).unwrap();
        assert!(mse < 1e-4, "QF=100 should be near-identity, mse={mse}");
    }
}
