//! Pre-visualization core for human-scene interaction keyframes.
//!
//! The crate covers mesh geometry and signed distance fields, hard and soft
//! silhouette rendering, the placement losses and optimizer, object pose
//! refinement, the progressive-mask inpainting loop over pluggable models,
//! action-script parsing with keyframe manifests, and interaction metrics.

pub mod geometry;
pub mod inpaint;
pub mod metrics;
pub mod losses;
pub mod optim;
pub mod pipeline;
pub mod placement;
pub mod posefit;
pub mod scriptplan;
pub mod silhouette;
pub mod synthetic;
