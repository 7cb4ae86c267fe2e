//! Progressive-mask inpainting loop over pluggable denoiser, decoder and
//! segmenter models.
//!
//! Each step predicts the clean latent from the noise estimate, decodes and
//! segments it to refresh the human mask, pastes the known latent back
//! outside the mask and renoises for the next step.

mod io;
pub mod synthetic;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::silhouette::SoftMask;

pub use io::{read_latent, read_schedule, sidecar_path, write_latent, write_schedule, LatentHeader, LATENT_VERSION};

#[derive(Debug, Error)]
pub enum InpaintError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("alpha_bar must lie in (0, 1], got {0}")]
    AlphaBar(f64),
    #[error("invalid noise schedule: {0}")]
    Schedule(String),
    #[error("latent contains non-finite values")]
    NonFinite,
    #[error("mask values must lie in [0, 1]")]
    MaskRange,
    #[error("segmenter returned an empty mask for {steps} consecutive steps (last at t = {t})")]
    EmptyMask { steps: usize, t: usize },
    #[error("plug-in failed: {0}")]
    Plugin(String),
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Channel-major (C, H, W) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Latent {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self, InpaintError> {
        if data.len() != channels * height * width {
            return Err(InpaintError::Shape(format!("{} values for {channels}x{height}x{width}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(InpaintError::NonFinite);
        }
        Ok(Latent { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Latent {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Latent {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    /// Standard normal draws.
    pub fn gaussian(channels: usize, height: usize, width: usize, rng: &mut impl rand::Rng) -> Self {
        let data = (0..channels * height * width).map(|_| StandardNormal.sample(rng)).collect();
        Latent { channels, height, width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn check_same(&self, other: &Latent, what: &str) -> Result<(), InpaintError> {
        if self.dims() != other.dims() {
            return Err(InpaintError::Shape(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    fn zip_map(&self, other: &Latent, f: impl Fn(f64, f64) -> f64) -> Latent {
        Latent {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        }
    }
}

/// Cumulative signal levels; entry `t - 1` holds alpha_bar at timestep t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Strictly decreasing, each in (0, 1].
    pub fn new(alpha_bar: Vec<f64>) -> Result<Self, InpaintError> {
        if alpha_bar.is_empty() {
            return Err(InpaintError::Schedule("empty".into()));
        }
        if let Some(a) = alpha_bar.iter().find(|&&a| !(a > 0.0 && a <= 1.0)) {
            return Err(InpaintError::Schedule(format!("alpha_bar {a} outside (0, 1]")));
        }
        if let Some(i) = alpha_bar.windows(2).position(|w| w[1] >= w[0]) {
            return Err(InpaintError::Schedule(format!("not strictly decreasing at index {}", i + 1)));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    /// Schedule of `steps` timesteps with betas spaced linearly over the
    /// first `steps` entries of a 1000-step DDPM schedule.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, InpaintError> {
        if steps == 0 {
            return Err(InpaintError::Schedule("empty".into()));
        }
        let mut prod = 1.0;
        let mut out = Vec::with_capacity(steps);
        for i in 0..steps {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            prod *= 1.0 - (beta_start + frac * (beta_end - beta_start));
            out.push(prod);
        }
        Self::new(out)
    }

    pub fn len(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha_bar.is_empty()
    }

    /// alpha_bar at timestep `t` in 1..=len; timestep 0 is the clean signal.
    pub fn at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.alpha_bar
    }
}

impl TryFrom<Vec<f64>> for NoiseSchedule {
    type Error = InpaintError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        NoiseSchedule::new(v)
    }
}

impl From<NoiseSchedule> for Vec<f64> {
    fn from(s: NoiseSchedule) -> Self {
        s.alpha_bar
    }
}

fn check_alpha(alpha_bar: f64) -> Result<(), InpaintError> {
    if alpha_bar > 0.0 && alpha_bar <= 1.0 {
        Ok(())
    } else {
        Err(InpaintError::AlphaBar(alpha_bar))
    }
}

/// One-step clean estimate (z_t - sqrt(1 - a) eps) / sqrt(a).
pub fn tweedie_predict(z_t: &Latent, eps: &Latent, alpha_bar_t: f64) -> Result<Latent, InpaintError> {
    check_alpha(alpha_bar_t)?;
    z_t.check_same(eps, "tweedie_predict")?;
    let (sa, sn) = (alpha_bar_t.sqrt(), (1.0 - alpha_bar_t).sqrt());
    Ok(z_t.zip_map(eps, |z, e| (z - sn * e) / sa))
}

/// (1 - m) * z0_star + m * z_pred with the mask broadcast over channels.
pub fn blend_known(z_pred: &Latent, z0_star: &Latent, mask_down: &SoftMask) -> Result<Latent, InpaintError> {
    z_pred.check_same(z0_star, "blend_known")?;
    if mask_down.width() != z_pred.width || mask_down.height() != z_pred.height {
        return Err(InpaintError::Shape(format!(
            "mask {}x{} vs latent {}x{}",
            mask_down.width(),
            mask_down.height(),
            z_pred.width,
            z_pred.height
        )));
    }
    let plane = z_pred.width * z_pred.height;
    let m = mask_down.values();
    let data = z_pred
        .data
        .iter()
        .zip(&z0_star.data)
        .enumerate()
        .map(|(i, (&p, &k))| {
            let w = m[i % plane];
            (1.0 - w) * k + w * p
        })
        .collect();
    Ok(Latent { data, ..*z_pred })
}

/// sqrt(a) * z_hat + sqrt(1 - a) * eps.
pub fn renoise(z_hat: &Latent, alpha_bar: f64, eps: &Latent) -> Result<Latent, InpaintError> {
    check_alpha(alpha_bar)?;
    z_hat.check_same(eps, "renoise")?;
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    Ok(z_hat.zip_map(eps, |z, e| sa * z + sn * e))
}

/// Area-average resampling: each output cell is the mean of the input over
/// its footprint, with fractional coverage at the edges when the sizes are
/// not integer multiples.
pub fn downsample_mask(mask: &SoftMask, width: usize, height: usize) -> Result<SoftMask, InpaintError> {
    if width == 0 || height == 0 {
        return Err(InpaintError::Shape(format!("target size {width}x{height}")));
    }
    let (iw, ih) = (mask.width(), mask.height());
    if iw == 0 || ih == 0 {
        return Err(InpaintError::Shape("empty input mask".into()));
    }
    let footprint = |o: usize, out_n: usize, in_n: usize| -> Vec<(usize, f64)> {
        let scale = in_n as f64 / out_n as f64;
        let (a, b) = (o as f64 * scale, (o + 1) as f64 * scale);
        let mut cells = Vec::new();
        let mut i = a.floor() as usize;
        while (i as f64) < b && i < in_n {
            let w = (b.min(i as f64 + 1.0) - a.max(i as f64)).max(0.0);
            if w > 0.0 {
                cells.push((i, w / scale));
            }
            i += 1;
        }
        cells
    };
    let xs: Vec<_> = (0..width).map(|x| footprint(x, width, iw)).collect();
    let ys: Vec<_> = (0..height).map(|y| footprint(y, height, ih)).collect();
    let mut out = Vec::with_capacity(width * height);
    for fy in &ys {
        for fx in &xs {
            let mut acc = 0.0;
            for &(iy, wy) in fy {
                for &(ix, wx) in fx {
                    acc += wy * wx * mask.get(ix, iy);
                }
            }
            out.push(acc.clamp(0.0, 1.0));
        }
    }
    SoftMask::new(width, height, out).map_err(|_| InpaintError::MaskRange)
}

/// Grayscale dilation with a disk of the given pixel radius.
pub fn dilate_mask(mask: &SoftMask, radius: usize) -> SoftMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as isize, mask.height() as isize);
    let r = radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).filter(|(dx, dy)| dx * dx + dy * dy <= r * r).collect();
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut best = 0.0f64;
            for &(dx, dy) in &offsets {
                let (qx, qy) = (x + dx, y + dy);
                if qx >= 0 && qy >= 0 && qx < w && qy < h {
                    best = best.max(mask.get(qx as usize, qy as usize));
                }
            }
            out[(y * w + x) as usize] = best;
        }
    }
    SoftMask::new(mask.width(), mask.height(), out).expect("max of valid values")
}

fn union(a: &SoftMask, b: &SoftMask) -> SoftMask {
    let values = a.values().iter().zip(b.values()).map(|(&x, &y)| x.max(y)).collect();
    SoftMask::new(a.width(), a.height(), values).expect("max of valid values")
}

/// Predicts the noise in `z_t`. `mask` is the current image-resolution mask.
pub trait Denoiser {
    fn predict_noise(&mut self, z_t: &Latent, z0_star: &Latent, mask: &SoftMask, condition: &str, t: usize) -> Result<Latent, InpaintError>;
}

pub trait Decoder {
    fn decode(&mut self, latent: &Latent) -> Result<Latent, InpaintError>;
}

/// Returns a human mask at image resolution.
pub trait Segmenter {
    fn segment(&mut self, image: &Latent) -> Result<SoftMask, InpaintError>;
}

/// Which alpha_bar the renoising step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenoiseIndex {
    /// alpha_bar at t - 1, so the noise level advances each step.
    #[default]
    Previous,
    /// alpha_bar at t, as the update is usually printed.
    LiteralPaper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum MaskUpdate {
    /// Take the segmenter output as is.
    Replace,
    /// Union of the segmenter output with the previous mask dilated by `radius` px.
    UnionDilated { radius: usize },
}

impl Default for MaskUpdate {
    fn default() -> Self {
        MaskUpdate::UnionDilated { radius: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintConfig {
    pub renoise: RenoiseIndex,
    pub mask_update: MaskUpdate,
    /// Consecutive empty segmentations tolerated before giving up.
    pub empty_mask_patience: usize,
    pub seed: u64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        InpaintConfig {
            renoise: RenoiseIndex::Previous,
            mask_update: MaskUpdate::default(),
            empty_mask_patience: 5,
            seed: 0,
        }
    }
}

/// Masks from m_T (the input) down to m_0, at image and latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskTrace {
    pub masks: Vec<SoftMask>,
    pub latent_masks: Vec<SoftMask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintOutput {
    /// Blended clean latent from the last step.
    pub latent: Latent,
    /// Renoised latent after the last step.
    pub z_final: Latent,
    pub trace: MaskTrace,
}

pub struct Plugins<'a> {
    pub denoiser: &'a mut dyn Denoiser,
    pub decoder: &'a mut dyn Decoder,
    pub segmenter: &'a mut dyn Segmenter,
}

/// Runs timesteps T..=1 where T is the schedule length.
///
/// The segmenter sees the decoded provisional blend of the clean estimate
/// with the current mask; its output becomes the next mask, which is then
/// used for the final blend of the step.
pub fn run_inpaint_loop(
    plugins: Plugins<'_>,
    z_init: &Latent,
    z0_star: &Latent,
    m_init: &SoftMask,
    condition: &str,
    schedule: &NoiseSchedule,
    config: &InpaintConfig,
) -> Result<InpaintOutput, InpaintError> {
    z_init.check_same(z0_star, "z_init vs z0_star")?;
    let (c, lh, lw) = z_init.dims();
    let (mw, mh) = (m_init.width(), m_init.height());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut mask = m_init.clone();
    let mut mask_down = downsample_mask(&mask, lw, lh)?;
    let mut trace = MaskTrace {
        masks: vec![mask.clone()],
        latent_masks: vec![mask_down.clone()],
    };
    let mut z_t = z_init.clone();
    let mut z_hat = z0_star.clone();
    let mut empty_run = 0;

    for t in (1..=schedule.len()).rev() {
        let alpha_t = schedule.at(t);
        let eps_pred = plugins.denoiser.predict_noise(&z_t, z0_star, &mask, condition, t)?;
        z_t.check_same(&eps_pred, "denoiser output")?;
        let z0_t = tweedie_predict(&z_t, &eps_pred, alpha_t)?;

        let provisional = blend_known(&z0_t, z0_star, &mask_down)?;
        let image = plugins.decoder.decode(&provisional)?;
        let seg = plugins.segmenter.segment(&image)?;
        if seg.width() != mw || seg.height() != mh {
            return Err(InpaintError::Shape(format!("segmenter returned {}x{}, expected {mw}x{mh}", seg.width(), seg.height())));
        }
        if seg.values().iter().all(|&v| v == 0.0) {
            empty_run += 1;
            if empty_run >= config.empty_mask_patience.max(1) {
                return Err(InpaintError::EmptyMask { steps: empty_run, t });
            }
        } else {
            empty_run = 0;
        }
        mask = match config.mask_update {
            MaskUpdate::Replace => seg,
            MaskUpdate::UnionDilated { radius } => union(&seg, &dilate_mask(&mask, radius)),
        };
        mask_down = downsample_mask(&mask, lw, lh)?;
        z_hat = blend_known(&z0_t, z0_star, &mask_down)?;

        let alpha_next = match config.renoise {
            RenoiseIndex::Previous => schedule.at(t - 1),
            RenoiseIndex::LiteralPaper => alpha_t,
        };
        let noise = Latent::gaussian(c, lh, lw, &mut rng);
        z_t = renoise(&z_hat, alpha_next, &noise)?;
        if z_t.data.iter().any(|v| !v.is_finite()) {
            return Err(InpaintError::NonFinite);
        }
        trace.masks.push(mask.clone());
        trace.latent_masks.push(mask_down.clone());
    }
    Ok(InpaintOutput { latent: z_hat, z_final: z_t, trace })
}
