use std::collections::BTreeMap;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::raster::{project_faces, rasterize_camera_space, CoverageIndex, Window, NEAR_PLANE};
use super::{BinaryMask, Camera, DepthBuffer, RenderError, SoftMask, Vec2};
use crate::geometry::{TriMesh, Vec3};

/// Beyond `|sharpness * distance| > BAND` the sigmoid is saturated to 0 or 1.
const BAND: f64 = 12.0;

/// Offset (pixels) of the probes that decide whether a contour edge lies on
/// the outer boundary of the projected silhouette.
const PROBE_OFFSET: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SoftRasterConfig {
    /// Sigmoid slope per pixel of signed boundary distance.
    pub sharpness: f64,
    /// Sigmoid slope per meter of depth difference in the soft depth test.
    pub depth_sharpness: f64,
}

impl Default for SoftRasterConfig {
    fn default() -> Self {
        SoftRasterConfig {
            sharpness: 1.0,
            depth_sharpness: 100.0,
        }
    }
}

impl SoftRasterConfig {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(RenderError::InvalidSharpness(self.sharpness));
        }
        if !(self.depth_sharpness > 0.0 && self.depth_sharpness.is_finite()) {
            return Err(RenderError::InvalidSharpness(self.depth_sharpness));
        }
        Ok(())
    }
}

/// Edge-to-face adjacency, fixed for a mesh's connectivity.
#[derive(Debug, Clone)]
pub struct MeshTopology {
    edges: Vec<[usize; 2]>,
    edge_faces: Vec<Vec<u32>>,
}

impl MeshTopology {
    pub fn new(faces: &[[usize; 3]]) -> Self {
        let mut map: BTreeMap<(usize, usize), Vec<u32>> = BTreeMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi as u32);
            }
        }
        let (edges, edge_faces) = map.into_iter().map(|((a, b), f)| ([a, b], f)).unzip();
        MeshTopology { edges, edge_faces }
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Output of one soft render. Gradients are sparse `(pixel, d value / d params)`
/// lists and are only filled when a vertex Jacobian was supplied.
#[derive(Debug, Clone)]
pub struct SoftRender<const P: usize> {
    pub plain: SoftMask,
    pub occluded: Option<SoftMask>,
    pub coverage: BinaryMask,
    pub plain_grad: Vec<(u32, SVector<f64, P>)>,
    pub occluded_grad: Vec<(u32, SVector<f64, P>)>,
}

/// Binary targets for [`SoftRenderer::overlap`] with their set-pixel counts.
#[derive(Debug, Clone, Copy)]
pub struct OverlapTargets<'a> {
    pub plain: &'a BinaryMask,
    pub occluded: &'a BinaryMask,
    pub plain_count: usize,
    pub occluded_count: usize,
}

impl<'a> OverlapTargets<'a> {
    pub fn new(plain: &'a BinaryMask, occluded: &'a BinaryMask) -> Self {
        OverlapTargets {
            plain,
            occluded,
            plain_count: plain.count(),
            occluded_count: occluded.count(),
        }
    }
}

struct PixelSample<const P: usize> {
    index: usize,
    covered: bool,
    plain: f64,
    plain_grad: Option<SVector<f64, P>>,
    occluded: f64,
    occluded_grad: Option<SVector<f64, P>>,
}

struct Segment {
    a: Vec2,
    b: Vec2,
    za: f64,
    zb: f64,
    va: usize,
    vb: usize,
}

/// Soft silhouette renderer for one mesh connectivity and camera. The
/// occluder is static, so its depth buffer is computed once.
#[derive(Debug, Clone)]
pub struct SoftRenderer {
    topology: MeshTopology,
    faces: Vec<[usize; 3]>,
    camera: Camera,
    config: SoftRasterConfig,
    occluder_depth: Option<DepthBuffer>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    // exp(-40) is below half an ulp of 1, so the result is exactly 1 anyway
    if x > 40.0 {
        return 1.0;
    }
    1.0 / (1.0 + (-x).exp())
}

impl SoftRenderer {
    pub fn new(mesh: &TriMesh, camera: &Camera, config: SoftRasterConfig, occluder: Option<&TriMesh>) -> Result<Self, RenderError> {
        if mesh.is_empty() {
            return Err(RenderError::EmptyMesh);
        }
        config.validate()?;
        Ok(SoftRenderer {
            topology: MeshTopology::new(mesh.faces()),
            faces: mesh.faces().to_vec(),
            camera: camera.clone(),
            config,
            occluder_depth: occluder.map(|o| super::rasterize_depth(o, camera)),
        })
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn config(&self) -> &SoftRasterConfig {
        &self.config
    }

    pub fn occluder_depth(&self) -> Option<&DepthBuffer> {
        self.occluder_depth.as_ref()
    }

    /// Renders the mesh with vertices at `world` (same connectivity as at
    /// construction). `jacobian(i)` gives d world_vertex_i / d params.
    pub fn render<const P: usize>(
        &self,
        world: &[Vec3],
        jacobian: Option<&dyn Fn(usize) -> SMatrix<f64, 3, P>>,
    ) -> SoftRender<P> {
        let (w, h) = (self.camera.width(), self.camera.height());
        let mut plain = vec![0.0; w * h];
        let mut occluded = self.occluder_depth.as_ref().map(|_| vec![0.0; w * h]);
        let mut plain_grad = Vec::new();
        let mut occluded_grad = Vec::new();
        let mut coverage = vec![false; w * h];
        self.render_core::<P, _>(world, jacobian, |px| {
            coverage[px.index] = px.covered;
            plain[px.index] = px.plain;
            if let Some(g) = px.plain_grad {
                plain_grad.push((px.index as u32, g));
            }
            if let Some(out) = occluded.as_mut() {
                out[px.index] = px.occluded;
                if let Some(g) = px.occluded_grad {
                    occluded_grad.push((px.index as u32, g));
                }
            }
        });
        SoftRender {
            plain: SoftMask::from_raw(w, h, plain),
            occluded: occluded.map(|v| SoftMask::from_raw(w, h, v)),
            coverage: BinaryMask::new(w, h, coverage).expect("sized"),
            plain_grad,
            occluded_grad,
        }
    }

    /// Soft IoU of the plain and occluded renders against binary targets,
    /// without materializing the masks. Without an occluder both entries
    /// use the plain render.
    pub fn overlap(&self, world: &[Vec3], targets: &OverlapTargets<'_>) -> Result<[f64; 2], RenderError> {
        let (w, h) = (self.camera.width(), self.camera.height());
        for t in [targets.plain, targets.occluded] {
            super::check_same_size(t.width(), t.height(), w, h)?;
        }
        let (pb, ob) = (targets.plain.bits(), targets.occluded.bits());
        // [intersection, union inside the window, target pixels inside the window]
        let mut acc = [[0.0f64; 3]; 2];
        self.render_core::<1, _>(world, None, |px| {
            for (k, (bits, a)) in [(pb, px.plain), (ob, px.occluded)].into_iter().enumerate() {
                if bits[px.index] {
                    acc[k][0] += a;
                    acc[k][1] += 1.0;
                    acc[k][2] += 1.0;
                } else {
                    acc[k][1] += a;
                }
            }
        });
        let counts = [targets.plain_count, targets.occluded_count];
        Ok([0, 1].map(|k| {
            let union = acc[k][1] + (counts[k] as f64 - acc[k][2]);
            if union == 0.0 {
                1.0
            } else {
                acc[k][0] / union
            }
        }))
    }

    fn render_core<const P: usize, F: FnMut(PixelSample<P>)>(
        &self,
        world: &[Vec3],
        jacobian: Option<&dyn Fn(usize) -> SMatrix<f64, 3, P>>,
        mut sink: F,
    ) {
        let cam = &self.camera;
        let (w, h) = (cam.width(), cam.height());
        let rot = cam.rotation();
        let intr = cam.intrinsics();
        let cam_verts: Vec<Vec3> = world.iter().map(|v| cam.to_camera(v)).collect();
        let projected = project_faces(&cam_verts, &self.faces, cam);
        let sharp = self.config.sharpness;
        let radius = BAND / sharp;
        // pixels outside the covered area grown by the band stay 0
        let (mut x0, mut x1, mut y0, mut y1) = (w, 0, h, 0);
        for (_, t) in &projected {
            for q in t {
                x0 = x0.min((q.x - radius - 1.0).floor().max(0.0) as usize);
                y0 = y0.min((q.y - radius - 1.0).floor().max(0.0) as usize);
                x1 = x1.max((q.x + radius + 1.0).ceil().clamp(0.0, w as f64) as usize);
                y1 = y1.max((q.y + radius + 1.0).ceil().clamp(0.0, h as f64) as usize);
            }
        }
        let win = Window {
            x0,
            y0,
            w: x1.saturating_sub(x0),
            h: y1.saturating_sub(y0),
        };
        let depth = rasterize_camera_space(&cam_verts, &self.faces, cam, Some(&projected), win);
        let coverage_index = CoverageIndex::new(&projected, w, h);

        let front: Vec<bool> = self
            .faces
            .iter()
            .map(|f| {
                let (a, b, c) = (cam_verts[f[0]], cam_verts[f[1]], cam_verts[f[2]]);
                (b - a).cross(&(c - a)).dot(&a) < 0.0
            })
            .collect();

        let mut segments: Vec<Segment> = Vec::new();
        for (e, faces) in self.topology.edges.iter().zip(&self.topology.edge_faces) {
            let first = front[faces[0] as usize];
            let contour = faces.len() == 1 || faces.iter().any(|&f| front[f as usize] != first);
            if !contour {
                continue;
            }
            let (mut pa, mut pb) = (cam_verts[e[0]], cam_verts[e[1]]);
            if pa.z < NEAR_PLANE && pb.z < NEAR_PLANE {
                continue;
            }
            if pa.z < NEAR_PLANE {
                pa = pa + (pb - pa) * ((NEAR_PLANE - pa.z) / (pb.z - pa.z));
            } else if pb.z < NEAR_PLANE {
                pb = pb + (pa - pb) * ((NEAR_PLANE - pb.z) / (pa.z - pb.z));
            }
            let (a, b) = (cam.project(&pa), cam.project(&pb));
            let d = b - a;
            let len = d.norm();
            if !(len > 1e-9) {
                continue;
            }
            let normal = Vec2::new(-d.y, d.x) / len;
            let exterior = [0.25, 0.5, 0.75].iter().any(|&t| {
                let m = a + d * t;
                !coverage_index.covered(m + normal * PROBE_OFFSET) || !coverage_index.covered(m - normal * PROBE_OFFSET)
            });
            if exterior {
                segments.push(Segment {
                    a,
                    b,
                    za: pa.z,
                    zb: pb.z,
                    va: e[0],
                    vb: e[1],
                });
            }
        }

        let mut best_d = vec![f64::INFINITY; win.len()];
        let mut best_seg = vec![u32::MAX; win.len()];
        let mut best_u = vec![0.0f64; win.len()];
        for (si, s) in segments.iter().enumerate() {
            let lx = (s.a.x.min(s.b.x) - radius - 0.5).ceil().max(win.x0 as f64);
            let hx = (s.a.x.max(s.b.x) + radius - 0.5).floor().min((win.x0 + win.w) as f64 - 1.0);
            let ly = (s.a.y.min(s.b.y) - radius - 0.5).ceil().max(win.y0 as f64);
            let hy = (s.a.y.max(s.b.y) + radius - 0.5).floor().min((win.y0 + win.h) as f64 - 1.0);
            if lx > hx || ly > hy {
                continue;
            }
            let e = s.b - s.a;
            let inv_l2 = 1.0 / e.norm_squared();
            for y in ly as usize..=hy as usize {
                let py = y as f64 + 0.5 - s.a.y;
                for x in lx as usize..=hx as usize {
                    let px = x as f64 + 0.5 - s.a.x;
                    let u = ((px * e.x + py * e.y) * inv_l2).clamp(0.0, 1.0);
                    let (dx, dy) = (px - e.x * u, py - e.y * u);
                    let d2 = dx * dx + dy * dy;
                    let i = (y - win.y0) * win.w + x - win.x0;
                    if d2 < best_d[i] {
                        best_d[i] = d2;
                        best_seg[i] = si as u32;
                        best_u[i] = u;
                    }
                }
            }
        }
        // best_d holds squared distances
        let radius2 = radius * radius;

        // d camera_vertex / d params, and d pixel / d params for a camera-space point
        let cam_jac = |v: usize| -> SMatrix<f64, 3, P> { rot * jacobian.expect("jacobian")(v) };
        let proj_jac = |p: &Vec3| -> SMatrix<f64, 2, 3> {
            let iz = 1.0 / p.z;
            SMatrix::<f64, 2, 3>::new(
                intr.fx * iz,
                0.0,
                -intr.fx * p.x * iz * iz,
                0.0,
                intr.fy * iz,
                -intr.fy * p.y * iz * iz,
            )
        };
        let seg_jac: Vec<Option<(SMatrix<f64, 2, P>, SMatrix<f64, 2, P>, SMatrix<f64, 1, P>, SMatrix<f64, 1, P>)>> =
            if jacobian.is_some() {
                segments
                    .iter()
                    .map(|s| {
                        let (ca, cb) = (cam_jac(s.va), cam_jac(s.vb));
                        let (pa, pb) = (cam_verts[s.va], cam_verts[s.vb]);
                        Some((proj_jac(&pa) * ca, proj_jac(&pb) * cb, ca.fixed_rows::<1>(2).into(), cb.fixed_rows::<1>(2).into()))
                    })
                    .collect()
            } else {
                Vec::new()
            };

        let occ = self.occluder_depth.as_ref();
        let kz = self.config.depth_sharpness;

        for li in 0..win.len() {
            let (lx, ly) = (li % win.w, li / win.w);
            let i = (ly + win.y0) * w + lx + win.x0;
            let covered = depth.face_local(li).is_some();
            let p = Vec2::new((lx + win.x0) as f64 + 0.5, (ly + win.y0) as f64 + 0.5);
            let sign = if covered { 1.0 } else { -1.0 };
            let in_band = best_seg[li] != u32::MAX && best_d[li] <= radius2;

            let mut value = if covered { 1.0 } else { 0.0 };
            let mut dvalue: Option<SVector<f64, P>> = None;
            // d distance / d (a, b) and the distance-derivative pieces for u
            let mut seg_info = None;
            if in_band {
                let s = &segments[best_seg[li] as usize];
                let (d, u) = (best_d[li].sqrt(), best_u[li]);
                let x = sharp * sign * d;
                value = sigmoid(x);
                seg_info = Some((s, u, best_seg[li] as usize));
                if jacobian.is_some() && d > 0.0 {
                    let (ja, jb, _, _) = seg_jac[best_seg[li] as usize].as_ref().unwrap();
                    let c = s.a + (s.b - s.a) * u;
                    let dir = (p - c) / d;
                    let dd = -(ja.transpose() * dir) * (1.0 - u) - (jb.transpose() * dir) * u;
                    dvalue = Some(dd * (value * (1.0 - value) * sharp * sign));
                }
            }
            let mut px = PixelSample {
                index: i,
                covered,
                plain: value,
                plain_grad: dvalue,
                occluded: value,
                occluded_grad: dvalue,
            };
            let Some(occ) = occ else {
                sink(px);
                continue;
            };
            let z_occ = occ.depth(i);
            if !z_occ.is_finite() || value == 0.0 {
                sink(px);
                continue;
            }
            // human depth: z-buffer when covered, otherwise the depth at the
            // nearest silhouette point (perspective-correct along the edge)
            let mut dz: Option<SVector<f64, P>> = None;
            let z_h = if covered {
                let f = self.faces[depth.face_local(li).unwrap()];
                let z = depth.depth_local(li);
                if jacobian.is_some() {
                    let (v0, v1, v2) = (cam_verts[f[0]], cam_verts[f[1]], cam_verts[f[2]]);
                    let n = (v1 - v0).cross(&(v2 - v0));
                    let area2 = n.norm();
                    let ray = cam.ray(p.x, p.y);
                    let hit = ray * z;
                    let nn = n / area2;
                    let l0 = (v1 - hit).cross(&(v2 - hit)).dot(&nn) / area2;
                    let l1 = (v2 - hit).cross(&(v0 - hit)).dot(&nn) / area2;
                    let l2 = 1.0 - l0 - l1;
                    let denom = nn.dot(&ray);
                    let mut g = SVector::<f64, P>::zeros();
                    for (l, vi) in [(l0, f[0]), (l1, f[1]), (l2, f[2])] {
                        g += (cam_jac(vi).transpose() * nn) * (l / denom);
                    }
                    dz = Some(g);
                }
                z
            } else if let Some((s, u, si)) = seg_info {
                let wv = (1.0 - u) / s.za + u / s.zb;
                let z = 1.0 / wv;
                if jacobian.is_some() {
                    let (ja, jb, jza, jzb) = seg_jac[si].as_ref().unwrap();
                    let mut dw: SVector<f64, P> =
                        -(jza.transpose() * ((1.0 - u) / (s.za * s.za))) - jzb.transpose() * (u / (s.zb * s.zb));
                    if u > 0.0 && u < 1.0 {
                        let e = s.b - s.a;
                        let l2 = e.norm_squared();
                        let pa = p - s.a;
                        let du_da = (-e - pa + e * (2.0 * u)) / l2;
                        let du_db = (pa - e * (2.0 * u)) / l2;
                        let du = ja.transpose() * du_da + jb.transpose() * du_db;
                        dw += du * (1.0 / s.zb - 1.0 / s.za);
                    }
                    dz = Some(-dw * (z * z));
                }
                z
            } else {
                // value > 0 implies covered or in band
                unreachable!("uncovered pixel outside the band has zero value")
            };
            let o = sigmoid(kz * (z_occ - z_h));
            px.occluded = value * o;
            px.occluded_grad = None;
            if jacobian.is_some() {
                let mut g = dvalue.map(|g| g * o).unwrap_or_else(SVector::zeros);
                if let Some(dz) = dz {
                    g -= dz * (value * o * (1.0 - o) * kz);
                }
                if g.iter().any(|&c| c != 0.0) {
                    px.occluded_grad = Some(g);
                }
            }
            sink(px);
        }
    }
}
