//! Network building blocks on top of the tensor backend.
//!
//! [`ParamStore`] owns every trainable parameter as a named `Var`. Parameters
//! are initialized from the run seed and the parameter's own name, so a net
//! rebuilt from the same config and seed is bit-identical no matter in which
//! order modules registered. The layer types here are thin: convolution,
//! transposed convolution, linear, and a hand-rolled group normalization that
//! is batch-independent and works in both f32 and f64 (the latter for
//! finite-difference checks).

use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Parameter initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Uniform in `(-sqrt(6/fan_in), sqrt(6/fan_in))`: ReLU-gain He init.
    KaimingUniform { fan_in: usize },
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`: bias init.
    BiasUniform { fan_in: usize },
    Zeros,
    Ones,
}

/// Owner of all named trainable parameters of one or more networks.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    seed: u64,
    params: Vec<(String, Var)>,
}

impl ParamStore {
    pub fn new(device: &Device, dtype: DType, seed: u64) -> Self {
        Self { device: device.clone(), dtype, seed, params: Vec::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Registers (or retrieves) a parameter. Initialization depends only on
    /// `(store seed, name)`, making rebuild order irrelevant.
    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(v.clone());
        }
        let n: usize = shape.iter().product();
        let mut r = rng::rng_for(self.seed, &["param-init", name], 0);
        let values: Vec<f64> = match init {
            Init::KaimingUniform { fan_in } => {
                let bound = (6.0 / fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| r.random_range(-bound..bound)).collect()
            }
            Init::BiasUniform { fan_in } => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| r.random_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        self.params.push((name.to_string(), v.clone()));
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn element_count(&self) -> usize {
        self.params.iter().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.params.iter().map(|(n, v)| (n.as_str(), v))
    }

    /// Parameters whose name starts with `prefix`, in registration order.
    pub fn with_prefix(&self, prefix: &str) -> Vec<(String, Var)> {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect()
    }

    /// Raw f32 data of every parameter under `prefix`.
    pub fn export(&self, prefix: &str) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
        let mut out = Vec::new();
        for (name, var) in self.params.iter().filter(|(n, _)| n.starts_with(prefix)) {
            let data = var
                .as_tensor()
                .to_dtype(DType::F32)?
                .flatten_all()?
                .to_vec1::<f32>()?;
            out.push((name.clone(), var.dims().to_vec(), data));
        }
        Ok(out)
    }

    /// Overwrites parameters from exported data; every entry must match an
    /// existing parameter in name and shape.
    pub fn import(&mut self, entries: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let mut by_name: HashMap<&str, &Var> =
            self.params.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for (name, shape, data) in entries {
            let var = by_name.remove(name.as_str()).ok_or_else(|| {
                Error::checkpoint(format!("parameter {name:?} not present in this architecture"))
            })?;
            if var.dims() != shape.as_slice() {
                return Err(Error::checkpoint(format!(
                    "parameter {name:?} shape mismatch: checkpoint {shape:?}, architecture {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_vec(data.clone(), shape.as_slice(), &self.device)?
                .to_dtype(self.dtype)?;
            var.set(&t)?;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and f32 little-endian bytes of every
    /// parameter under `prefix`. Bit-exact freeze checks compare these.
    pub fn checksum(&self, prefix: &str) -> Result<String> {
        let mut hasher = Sha256::new();
        for (name, shape, data) in self.export(prefix)? {
            hasher.update(name.as_bytes());
            for d in shape {
                hasher.update((d as u64).to_le_bytes());
            }
            for v in data {
                hasher.update(v.to_le_bytes());
            }
        }
        Ok(format!("{:x}", hasher.finalize()))
    }
}

/// 2-D convolution with bias.
pub struct Conv2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = ps.var(
            &format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
            Init::KaimingUniform { fan_in },
        )?;
        let bias = ps.var(&format!("{name}.bias"), &[out_ch], Init::BiasUniform { fan_in })?;
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// 2-D transposed convolution with bias.
pub struct ConvTranspose2d {
    weight: Var,
    bias: Var,
    stride: usize,
    padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let weight = ps.var(
            &format!("{name}.weight"),
            &[in_ch, out_ch, kernel, kernel],
            Init::KaimingUniform { fan_in },
        )?;
        let bias = ps.var(&format!("{name}.bias"), &[out_ch], Init::BiasUniform { fan_in })?;
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv_transpose2d(self.weight.as_tensor(), self.padding, 0, self.stride, 1)?;
        let b = self.bias.as_tensor().reshape((1, (), 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }
}

/// Fully connected layer.
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let weight = ps.var(
            &format!("{name}.weight"),
            &[out_dim, in_dim],
            Init::KaimingUniform { fan_in: in_dim },
        )?;
        let bias = ps.var(&format!("{name}.bias"), &[out_dim], Init::BiasUniform { fan_in: in_dim })?;
        Ok(Self { weight, bias })
    }

    /// `x` is `(B, in_dim)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

/// Group normalization over `(B, C, H, W)`, batch-independent.
pub struct GroupNorm {
    gamma: Var,
    beta: Var,
    groups: usize,
    eps: f64,
}

impl GroupNorm {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, preferred_groups: usize) -> Result<Self> {
        let groups = Self::group_count(channels, preferred_groups);
        let gamma = ps.var(&format!("{name}.gamma"), &[channels], Init::Ones)?;
        let beta = ps.var(&format!("{name}.beta"), &[channels], Init::Zeros)?;
        Ok(Self { gamma, beta, groups, eps: 1e-5 })
    }

    /// Largest divisor of `channels` not exceeding the preferred group count.
    fn group_count(channels: usize, preferred: usize) -> usize {
        (1..=preferred.max(1).min(channels))
            .rev()
            .find(|g| channels % g == 0)
            .unwrap_or(1)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = x.dims4()?;
        let g = self.groups;
        let grouped = x.reshape((b, g, c / g * h * w))?;
        let mean = grouped.mean_keepdim(2)?;
        let centered = grouped.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(2)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        let normed = normed.reshape((b, c, h, w))?;
        let gamma = self.gamma.as_tensor().reshape((1, c, 1, 1))?;
        let beta = self.beta.as_tensor().reshape((1, c, 1, 1))?;
        Ok(normed.broadcast_mul(&gamma)?.broadcast_add(&beta)?)
    }
}

/// Nearest-neighbor 2x upsampling via index duplication (differentiable, any
/// dtype).
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (_b, _c, h, w) = x.dims4()?;
    let rows: Vec<u32> = (0..2 * h as u32).map(|i| i / 2).collect();
    let cols: Vec<u32> = (0..2 * w as u32).map(|i| i / 2).collect();
    let ri = Tensor::from_vec(rows, 2 * h, x.device())?;
    let ci = Tensor::from_vec(cols, 2 * w, x.device())?;
    Ok(x.index_select(&ri, 2)?.index_select(&ci, 3)?)
}

/// Per-output-index source taps and weights for 1-D bilinear interpolation
/// with half-pixel centers.
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            let w1 = pos - i0 as f64;
            (i0, i1, 1.0 - w1, w1)
        })
        .collect()
}

/// Dense `(dst, src)` interpolation matrix built from [`bilinear_taps`].
fn bilinear_matrix(src: usize, dst: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut data = vec![0.0f64; dst * src];
    for (o, (i0, i1, w0, w1)) in bilinear_taps(src, dst).into_iter().enumerate() {
        data[o * src + i0] += w0;
        data[o * src + i1] += w1;
    }
    Ok(Tensor::from_vec(data, (dst, src), device)?.to_dtype(dtype)?)
}

/// Differentiable bilinear resize of a `(B, C, H, W)` tensor, implemented as
/// two interpolation-matrix products.
pub fn bilinear_resize(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::input("resize target must be at least 1x1"));
    }
    let (b, c, h, w) = x.dims4()?;
    if (h, w) == (out_h, out_w) {
        return Ok(x.clone());
    }
    let rh = bilinear_matrix(h, out_h, x.dtype(), x.device())?.unsqueeze(0)?;
    let rw_t = bilinear_matrix(w, out_w, x.dtype(), x.device())?.t()?.unsqueeze(0)?;
    let flat = x.reshape((b * c, h, w))?;
    let y = rh.broadcast_matmul(&flat)?;
    let y = y.broadcast_matmul(&rw_t)?;
    Ok(y.reshape((b, c, out_h, out_w))?)
}

/// Adam optimizer over an ordered parameter list, with optional global-norm
/// gradient clipping. Moments are owned here so they can be checkpointed.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step_count: usize,
    moments: HashMap<String, (Tensor, Tensor)>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step_count: 0, moments: HashMap::new() }
    }

    pub fn step_count(&self) -> usize {
        self.step_count
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update to every parameter that has a gradient. Returns the
    /// global gradient norm (before clipping).
    pub fn step(
        &mut self,
        params: &[(String, Var)],
        grads: &GradStore,
        clip: Option<f64>,
    ) -> Result<f64> {
        let mut sq_sum = 0.0f64;
        let mut present: Vec<(&String, &Var, Tensor)> = Vec::new();
        for (name, var) in params {
            if let Some(g) = grads.get(var) {
                let g = g.to_dtype(DType::F64)?;
                sq_sum += g.sqr()?.sum_all()?.to_scalar::<f64>()?;
                present.push((name, var, g));
            }
        }
        let norm = sq_sum.sqrt();
        let scale = match clip {
            Some(c) if norm > c && norm > 0.0 => c / norm,
            _ => 1.0,
        };
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, var, g) in present {
            let g = if scale != 1.0 { (g * scale)? } else { g };
            let (m, v) = match self.moments.remove(name.as_str()) {
                Some(mv) => mv,
                None => (g.zeros_like()?, g.zeros_like()?),
            };
            let m = ((m * self.beta1)? + (&g * (1.0 - self.beta1))?)?;
            let v = ((v * self.beta2)? + (g.sqr()? * (1.0 - self.beta2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let delta = (m_hat * self.lr)?.div(&(v_hat.sqrt()? + self.eps)?)?;
            let updated = (var.as_tensor().to_dtype(DType::F64)? - delta)?;
            var.set(&updated.to_dtype(var.dtype())?)?;
            self.moments.insert(name.clone(), (m, v));
        }
        Ok(norm)
    }

    /// Serializes `(step_count, per-parameter first/second moments)`.
    pub fn export(&self) -> Result<(usize, Vec<(String, Vec<usize>, Vec<f32>, Vec<f32>)>)> {
        let mut out = Vec::new();
        let mut names: Vec<&String> = self.moments.keys().collect();
        names.sort();
        for name in names {
            let (m, v) = &self.moments[name.as_str()];
            let shape = m.dims().to_vec();
            let md = m.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            let vd = v.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
            out.push((name.clone(), shape, md, vd));
        }
        Ok((self.step_count, out))
    }

    pub fn import(
        &mut self,
        step_count: usize,
        entries: Vec<(String, Vec<usize>, Vec<f32>, Vec<f32>)>,
        device: &Device,
    ) -> Result<()> {
        self.step_count = step_count;
        self.moments.clear();
        for (name, shape, md, vd) in entries {
            let m = Tensor::from_vec(md, shape.as_slice(), device)?.to_dtype(DType::F64)?;
            let v = Tensor::from_vec(vd, shape.as_slice(), device)?.to_dtype(DType::F64)?;
            self.moments.insert(name, (m, v));
        }
        Ok(())
    }
}

/// Max-norm relative disagreement between the backpropagated gradient of
/// `f` at `x0` and a central finite difference with step `h`.
///
/// `f` must be a scalar-valued tensor function. Use f64 inputs: with
/// `h = 1e-4` the difference quotient already carries ~1e-8 truncation error.
pub fn finite_difference_error(
    f: impl Fn(&Tensor) -> Result<Tensor>,
    x0: &Tensor,
    h: f64,
) -> Result<f64> {
    let var = Var::from_tensor(x0)?;
    let loss = f(var.as_tensor())?;
    let grads = loss.backward()?;
    let analytic = grads
        .get(&var)
        .ok_or_else(|| Error::input("function does not depend on its input"))?
        .flatten_all()?
        .to_dtype(DType::F64)?
        .to_vec1::<f64>()?;

    let base = x0.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let shape = x0.dims().to_vec();
    let dev = x0.device().clone();
    let mut fd = vec![0.0f64; base.len()];
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::from_vec(plus, shape.as_slice(), &dev)?)?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?;
        let fm = f(&Tensor::from_vec(minus, shape.as_slice(), &dev)?)?
            .to_dtype(DType::F64)?
            .to_scalar::<f64>()?;
        fd[i] = (fp - fm) / (2.0 * h);
    }
    Ok(max_rel_err(&analytic, &fd))
}

/// `max|a - b| / max(max|a|, max|b|, 1e-12)`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let denom = inf(a).max(inf(b)).max(1e-12);
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / denom
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn dev() -> Device {
        Device::Cpu
    }

    #[test]
    fn param_init_is_order_independent_and_seeded() {
        let mut a = ParamStore::new(&dev(), DType::F32, 9);
        let va1 = a.var("x", &[4, 4], Init::KaimingUniform { fan_in: 4 }).unwrap();
        let _va2 = a.var("y", &[2], Init::Zeros).unwrap();

        let mut b = ParamStore::new(&dev(), DType::F32, 9);
        let _vb2 = b.var("y", &[2], Init::Zeros).unwrap();
        let vb1 = b.var("x", &[4, 4], Init::KaimingUniform { fan_in: 4 }).unwrap();

        let da = va1.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let db = vb1.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(da, db);

        let mut c = ParamStore::new(&dev(), DType::F32, 10);
        let vc = c.var("x", &[4, 4], Init::KaimingUniform { fan_in: 4 }).unwrap();
        let dc = vc.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_ne!(da, dc);
    }

    #[test]
    fn export_import_round_trip_and_checksum() {
        let mut ps = ParamStore::new(&dev(), DType::F32, 1);
        ps.var("net.a", &[3, 3], Init::KaimingUniform { fan_in: 3 }).unwrap();
        ps.var("net.b", &[3], Init::BiasUniform { fan_in: 3 }).unwrap();
        ps.var("other.c", &[2], Init::Ones).unwrap();
        let sum_before = ps.checksum("net.").unwrap();
        let exported = ps.export("net.").unwrap();
        assert_eq!(exported.len(), 2);

        let mut ps2 = ParamStore::new(&dev(), DType::F32, 999);
        ps2.var("net.a", &[3, 3], Init::Zeros).unwrap();
        ps2.var("net.b", &[3], Init::Zeros).unwrap();
        ps2.var("other.c", &[2], Init::Ones).unwrap();
        assert_ne!(ps2.checksum("net.").unwrap(), sum_before);
        ps2.import(&exported).unwrap();
        assert_eq!(ps2.checksum("net.").unwrap(), sum_before);

        // shape mismatch fails loudly
        let mut ps3 = ParamStore::new(&dev(), DType::F32, 1);
        ps3.var("net.a", &[2, 2], Init::Zeros).unwrap();
        assert!(ps3.import(&exported).is_err());
    }

    #[test]
    fn group_count_divides() {
        assert_eq!(GroupNorm::group_count(12, 4), 4);
        assert_eq!(GroupNorm::group_count(12, 8), 6);
        assert_eq!(GroupNorm::group_count(7, 4), 1);
        assert_eq!(GroupNorm::group_count(3, 4), 3);
    }

    #[test]
    fn upsample2x_duplicates_pixels() {
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], (1, 1, 2, 2), &dev()).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v[0..4], [1.0, 1.0, 2.0, 2.0]);
        assert_eq!(v[12..16], [3.0, 3.0, 4.0, 4.0]);
    }

    #[test]
    fn bilinear_resize_identity_and_shape() {
        let x = Tensor::rand(0f32, 1f32, (2, 3, 8, 6), &dev()).unwrap();
        let same = bilinear_resize(&x, 8, 6).unwrap();
        let diff = (&same - &x).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert_eq!(diff, 0.0);
        let up = bilinear_resize(&x, 16, 9).unwrap();
        assert_eq!(up.dims(), &[2, 3, 16, 9]);
        // constant image stays constant under any resize
        let c = Tensor::full(0.37f32, (1, 3, 8, 8), &dev()).unwrap();
        let r = bilinear_resize(&c, 13, 5).unwrap();
        let max = r.max_all().unwrap().to_scalar::<f32>().unwrap();
        let min = r.min_all().unwrap().to_scalar::<f32>().unwrap();
        assert!((max - 0.37).abs() < 1e-6 && (min - 0.37).abs() < 1e-6);
    }

    #[test]
    fn adam_descends_on_quadratic() {
        let mut ps = ParamStore::new(&dev(), DType::F32, 3);
        let v = ps.var("w", &[4], Init::Ones).unwrap();
        let params = ps.with_prefix("");
        let mut opt = Adam::new(0.05);
        let mut last = f64::INFINITY;
        for _ in 0..200 {
            let loss = v.as_tensor().sqr().unwrap().sum_all().unwrap();
            let grads = loss.backward().unwrap();
            opt.step(&params, &grads, Some(1.0)).unwrap();
            last = loss.to_scalar::<f32>().unwrap() as f64;
        }
        assert!(last < 1e-2, "loss after descent: {last}");
    }

    #[test]
    fn adam_resume_matches_uninterrupted_run() {
        let run = |split: Option<usize>| -> Vec<f32> {
            let mut ps = ParamStore::new(&dev(), DType::F32, 5);
            let v = ps.var("w", &[3], Init::KaimingUniform { fan_in: 3 }).unwrap();
            let params = ps.with_prefix("");
            let mut opt = Adam::new(0.01);
            let total = 20;
            for i in 0..total {
                if Some(i) == split {
                    // serialize + restore mid-run
                    let (sc, entries) = opt.export().unwrap();
                    let weights = ps.export("").unwrap();
                    let mut ps2 = ParamStore::new(&dev(), DType::F32, 5);
                    ps2.var("w", &[3], Init::Zeros).unwrap();
                    ps2.import(&weights).unwrap();
                    let mut opt2 = Adam::new(0.01);
                    opt2.import(sc, entries, &dev()).unwrap();
                    ps = ps2;
                    opt = opt2;
                }
                let v2 = ps.with_prefix("")[0].1.clone();
                let loss = (v2.as_tensor() * v2.as_tensor()).unwrap().sum_all().unwrap();
                let grads = loss.backward().unwrap();
                opt.step(&ps.with_prefix(""), &grads, None).unwrap();
            }
            let _ = v;
            ps.export("").unwrap()[0].2.clone()
        };
        assert_eq!(run(None), run(Some(10)));
    }

    #[test]
    fn gradcheck_catches_good_and_bad_gradients() {
        let x0 = Tensor::rand(0.1f64, 0.9, (2, 3, 4), &dev()).unwrap();
        // well-defined smooth function
        let err = finite_difference_error(|x| Ok(x.sqr()?.mean_all()?), &x0, 1e-5).unwrap();
        assert!(err < 1e-6, "smooth function gradcheck err {err}");
    }
}
