//! Contact, penetration and silhouette losses and their weighted sum.

pub mod annotation;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{sample_sdf, SdfGrid, Vec3};
use crate::silhouette::{BinaryMask, RenderError, SoftMask};

pub use annotation::{ContactAnnotation, ContactEntry, ObjectPointSource, ObjectRegions};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("{0} point set is empty")]
    EmptySet(&'static str),
    #[error("neighbor count k must be at least 1")]
    InvalidK,
    #[error("loss weights must be nonnegative and finite with at least one positive: {0:?}")]
    InvalidWeights(LossWeights),
    #[error("non-finite loss term: pen={0}, hoi={1}, mask={2}")]
    NonFinite(f64, f64, f64),
    #[error(transparent)]
    Render(#[from] RenderError),
}

/// Neighbor count used when a configuration does not give one.
pub const DEFAULT_K: usize = 32;

/// Contact point sets `P_h` and `P_o` with the mutual-neighbor count.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSpec {
    human_points: Vec<Vec3>,
    object_points: Vec<Vec3>,
    k: usize,
}

impl ContactSpec {
    pub fn new(human_points: Vec<Vec3>, object_points: Vec<Vec3>, k: usize) -> Result<Self, LossError> {
        if human_points.is_empty() {
            return Err(LossError::EmptySet("human"));
        }
        if object_points.is_empty() {
            return Err(LossError::EmptySet("object"));
        }
        if k == 0 {
            return Err(LossError::InvalidK);
        }
        Ok(ContactSpec {
            human_points,
            object_points,
            k,
        })
    }

    pub fn human_points(&self) -> &[Vec3] {
        &self.human_points
    }

    pub fn object_points(&self) -> &[Vec3] {
        &self.object_points
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Penetration weight.
    pub alpha: f64,
    /// Contact weight.
    pub beta: f64,
    /// Silhouette weight.
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, LossError> {
        let w = LossWeights { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let ws = [self.alpha, self.beta, self.gamma];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || ws.iter().all(|&w| w == 0.0) {
            return Err(LossError::InvalidWeights(*self));
        }
        Ok(())
    }
}

/// Indices of the `k` nearest points of `set` to `q`; ties go to the lower index.
fn knn(q: &Vec3, set: &[Vec3], k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = set.iter().enumerate().map(|(i, p)| ((p - q).norm_squared(), i)).collect();
    let k = k.min(order.len());
    if k < order.len() {
        order.select_nth_unstable_by(k, |a, b| a.partial_cmp(b).expect("finite distances"));
    }
    order.truncate(k);
    order.into_iter().map(|(_, i)| i).collect()
}

/// Index form of [`mutual_knn_filter`]: the retained indices into each set, ascending.
pub fn mutual_knn_indices(human: &[Vec3], object: &[Vec3], k: usize) -> (Vec<usize>, Vec<usize>) {
    if k >= human.len() && k >= object.len() {
        return ((0..human.len()).collect(), (0..object.len()).collect());
    }
    let object_nn: Vec<Vec<usize>> = object.iter().map(|y| knn(y, human, k)).collect();
    let mut keep_h = vec![false; human.len()];
    let mut keep_o = vec![false; object.len()];
    for (i, x) in human.iter().enumerate() {
        for j in knn(x, object, k) {
            if object_nn[j].contains(&i) {
                keep_h[i] = true;
                keep_o[j] = true;
            }
        }
    }
    let pick = |keep: Vec<bool>| keep.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
    (pick(keep_h), pick(keep_o))
}

/// Keeps the points that have at least one partner in the other set for
/// which each lies in the other's `k` nearest neighbors. Either output may be
/// empty; the caller decides how to proceed.
pub fn mutual_knn_filter(spec: &ContactSpec) -> (Vec<Vec3>, Vec<Vec3>) {
    let (h, o) = mutual_knn_indices(&spec.human_points, &spec.object_points, spec.k);
    (
        h.into_iter().map(|i| spec.human_points[i]).collect(),
        o.into_iter().map(|j| spec.object_points[j]).collect(),
    )
}

fn nearest(q: &Vec3, set: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in set.iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Symmetric sum of squared nearest-neighbor distances.
pub fn contact_loss(human: &[Vec3], object: &[Vec3]) -> Result<f64, LossError> {
    Ok(contact_loss_with_grad(human, object)?.0)
}

/// Contact loss and its gradient with respect to each human point.
pub fn contact_loss_with_grad(human: &[Vec3], object: &[Vec3]) -> Result<(f64, Vec<Vec3>), LossError> {
    if human.is_empty() {
        return Err(LossError::EmptySet("human"));
    }
    if object.is_empty() {
        return Err(LossError::EmptySet("object"));
    }
    let mut grad = vec![Vec3::zeros(); human.len()];
    let mut loss = 0.0;
    for (i, x) in human.iter().enumerate() {
        let (j, d) = nearest(x, object);
        loss += d;
        grad[i] += 2.0 * (x - object[j]);
    }
    for y in object {
        let (i, d) = nearest(y, human);
        loss += d;
        grad[i] += 2.0 * (human[i] - y);
    }
    Ok((loss, grad))
}

/// Mean of `-min(phi, 0)` over the points.
pub fn penetration_loss(sdf: &SdfGrid, points: &[Vec3]) -> Result<f64, LossError> {
    if points.is_empty() {
        return Err(LossError::EmptySet("object"));
    }
    let sum: f64 = points.iter().map(|p| -sample_sdf(sdf, p).value.min(0.0)).sum();
    Ok(sum / points.len() as f64)
}

/// `sum min(a, b) / sum max(a, b)`; two empty masks count as identical.
pub fn soft_iou(a: &SoftMask, b: &SoftMask) -> Result<f64, LossError> {
    crate::silhouette::check_same_size(a.width(), a.height(), b.width(), b.height())?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (x, y) in a.values().iter().zip(b.values()) {
        inter += x.min(*y);
        union += x.max(*y);
    }
    Ok(if union == 0.0 { 1.0 } else { inter / union })
}

/// Soft IoU against a binary target.
pub fn soft_iou_binary(rendered: &SoftMask, target: &BinaryMask) -> Result<f64, LossError> {
    crate::silhouette::check_same_size(rendered.width(), rendered.height(), target.width(), target.height())?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (a, &b) in rendered.values().iter().zip(target.bits()) {
        if b {
            inter += a;
            union += 1.0;
        } else {
            union += a;
        }
    }
    Ok(if union == 0.0 { 1.0 } else { inter / union })
}

/// Soft IoU against a binary target and its derivative with respect to every
/// rendered value. With a binary target the IoU is smooth in the rendered values.
pub fn soft_iou_with_grad(rendered: &SoftMask, target: &BinaryMask) -> Result<(f64, Vec<f64>), LossError> {
    crate::silhouette::check_same_size(rendered.width(), rendered.height(), target.width(), target.height())?;
    let (mut inter, mut union) = (0.0, 0.0);
    for (a, &b) in rendered.values().iter().zip(target.bits()) {
        if b {
            inter += a;
            union += 1.0;
        } else {
            union += a;
        }
    }
    if union == 0.0 {
        return Ok((1.0, vec![0.0; target.bits().len()]));
    }
    let u2 = union * union;
    let grad = target
        .bits()
        .iter()
        .map(|&b| if b { union / u2 } else { -inter / u2 })
        .collect();
    Ok((inter / union, grad))
}

/// `(1 - IoU(m_h, m_h_init)) + (1 - IoU(m_hoi, m_hoi_star))`, in `[0, 2]`.
pub fn mask_loss(m_h: &SoftMask, m_hoi: &SoftMask, m_h_init: &BinaryMask, m_hoi_star: &BinaryMask) -> Result<f64, LossError> {
    let a = soft_iou(m_h, &m_h_init.to_soft())?;
    let b = soft_iou(m_hoi, &m_hoi_star.to_soft())?;
    Ok((1.0 - a) + (1.0 - b))
}

pub fn total_loss(pen: f64, hoi: f64, mask: f64, w: &LossWeights) -> Result<f64, LossError> {
    if !(pen.is_finite() && hoi.is_finite() && mask.is_finite()) {
        return Err(LossError::NonFinite(pen, hoi, mask));
    }
    w.validate()?;
    Ok(w.alpha * pen + w.beta * hoi + w.gamma * mask)
}
