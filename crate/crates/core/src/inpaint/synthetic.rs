//! Deterministic stand-ins for the diffusion plug-ins.

use super::{Decoder, Denoiser, InpaintError, Latent, NoiseSchedule, Segmenter};
use crate::silhouette::SoftMask;

/// Predicts exactly the noise that separates `z_t` from `z0_star` under the
/// forward process, so the clean estimate is `z0_star` up to rounding.
pub struct OracleDenoiser {
    schedule: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(schedule: NoiseSchedule) -> Self {
        OracleDenoiser { schedule }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict_noise(&mut self, z_t: &Latent, z0_star: &Latent, _mask: &SoftMask, _condition: &str, t: usize) -> Result<Latent, InpaintError> {
        if t == 0 || t > self.schedule.len() {
            return Err(InpaintError::Plugin(format!("timestep {t} outside the oracle schedule")));
        }
        let a = self.schedule.at(t);
        if a == 1.0 {
            return Ok(Latent::zeros(z_t.channels(), z_t.height(), z_t.width()));
        }
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        let data = z_t.data().iter().zip(z0_star.data()).map(|(&z, &k)| (z - sa * k) / sn).collect();
        Latent::new(z_t.channels(), z_t.height(), z_t.width(), data)
    }
}

/// Nearest-neighbour upsampling by an integer factor.
pub struct UpsampleDecoder {
    factor: usize,
}

impl UpsampleDecoder {
    pub fn new(factor: usize) -> Self {
        UpsampleDecoder { factor: factor.max(1) }
    }
}

impl Decoder for UpsampleDecoder {
    fn decode(&mut self, latent: &Latent) -> Result<Latent, InpaintError> {
        let f = self.factor;
        let (c, h, w) = latent.dims();
        let mut data = Vec::with_capacity(c * h * w * f * f);
        for ch in 0..c {
            for y in 0..h * f {
                for x in 0..w * f {
                    data.push(latent.get(ch, y / f, x / f));
                }
            }
        }
        Latent::new(c, h * f, w * f, data)
    }
}

/// Always returns the same mask.
pub struct FixedSegmenter {
    mask: SoftMask,
}

impl FixedSegmenter {
    pub fn new(mask: SoftMask) -> Self {
        FixedSegmenter { mask }
    }
}

impl Segmenter for FixedSegmenter {
    fn segment(&mut self, _image: &Latent) -> Result<SoftMask, InpaintError> {
        Ok(self.mask.clone())
    }
}

/// Returns the given masks in order, repeating the last one.
pub struct ScriptedSegmenter {
    masks: Vec<SoftMask>,
    next: usize,
}

impl ScriptedSegmenter {
    pub fn new(masks: Vec<SoftMask>) -> Self {
        assert!(!masks.is_empty(), "scripted segmenter needs at least one mask");
        ScriptedSegmenter { masks, next: 0 }
    }
}

impl Segmenter for ScriptedSegmenter {
    fn segment(&mut self, _image: &Latent) -> Result<SoftMask, InpaintError> {
        let m = self.masks[self.next.min(self.masks.len() - 1)].clone();
        self.next += 1;
        Ok(m)
    }
}

/// Marks pixels whose first channel exceeds `level`.
pub struct ThresholdSegmenter {
    pub level: f64,
}

impl Segmenter for ThresholdSegmenter {
    fn segment(&mut self, image: &Latent) -> Result<SoftMask, InpaintError> {
        let (_, h, w) = image.dims();
        let values = (0..h * w).map(|i| if image.data()[i] > self.level { 1.0 } else { 0.0 }).collect();
        SoftMask::new(w, h, values).map_err(|e| InpaintError::Plugin(e.to_string()))
    }
}
