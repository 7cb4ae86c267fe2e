use super::{Camera, Vec2};
use crate::geometry::{TriMesh, Vec3};

/// Geometry closer than this (camera Z, meters) is clipped away.
pub const NEAR_PLANE: f64 = 1e-3;

const NO_FACE: u32 = u32::MAX;

/// Rectangle of pixels `[x0, x0 + w) x [y0, y0 + h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl Window {
    pub(crate) fn full(width: usize, height: usize) -> Self {
        Window { x0: 0, y0: 0, w: width, h: height }
    }

    pub(crate) fn len(&self) -> usize {
        self.w * self.h
    }
}

/// Per-pixel nearest camera-space depth (Z) and the face that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthBuffer {
    width: usize,
    height: usize,
    window: Window,
    depth: Vec<f64>,
    face: Vec<u32>,
}

impl DepthBuffer {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn local(&self, pixel: usize) -> Option<usize> {
        if self.window.w == self.width && self.window.h == self.height {
            return Some(pixel);
        }
        let (x, y) = (pixel % self.width, pixel / self.width);
        let wn = &self.window;
        (x >= wn.x0 && y >= wn.y0 && x < wn.x0 + wn.w && y < wn.y0 + wn.h).then(|| (y - wn.y0) * wn.w + x - wn.x0)
    }

    /// `f64::INFINITY` where nothing was hit.
    pub fn depth(&self, pixel: usize) -> f64 {
        self.local(pixel).map_or(f64::INFINITY, |i| self.depth[i])
    }

    pub fn face(&self, pixel: usize) -> Option<usize> {
        self.local(pixel).and_then(|i| self.face_local(i))
    }

    pub(crate) fn depth_local(&self, i: usize) -> f64 {
        self.depth[i]
    }

    pub(crate) fn face_local(&self, i: usize) -> Option<usize> {
        let f = self.face[i];
        (f != NO_FACE).then_some(f as usize)
    }

    pub fn depths(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.depth(i)).collect()
    }
}

pub fn rasterize_depth(mesh: &TriMesh, camera: &Camera) -> DepthBuffer {
    let cam: Vec<Vec3> = mesh.vertices().iter().map(|v| camera.to_camera(v)).collect();
    rasterize_camera_space(&cam, mesh.faces(), camera, None, Window::full(camera.width(), camera.height()))
}

/// Clips a camera-space triangle against the near plane; returns 0, 3 or 4 vertices.
pub(crate) fn clip_near(tri: [Vec3; 3]) -> Vec<Vec3> {
    let inside = |p: &Vec3| p.z >= NEAR_PLANE;
    if tri.iter().all(inside) {
        return tri.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        match (inside(&a), inside(&b)) {
            (true, true) => out.push(b),
            (true, false) => out.push(a + (b - a) * ((NEAR_PLANE - a.z) / (b.z - a.z))),
            (false, true) => {
                out.push(a + (b - a) * ((NEAR_PLANE - a.z) / (b.z - a.z)));
                out.push(b);
            }
            (false, false) => {}
        }
    }
    out
}

/// 2D triangles after projection, oriented counter-clockwise in pixel space.
pub(crate) type Projected = [Vec2; 3];

fn orient(mut t: Projected) -> Option<Projected> {
    let area = cross(t[1] - t[0], t[2] - t[0]);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    if area < 0.0 {
        t.swap(1, 2);
    }
    Some(t)
}

#[inline]
pub(crate) fn cross(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

#[inline]
pub(crate) fn covers(t: &Projected, q: Vec2) -> bool {
    cross(t[1] - t[0], q - t[0]) >= 0.0 && cross(t[2] - t[1], q - t[1]) >= 0.0 && cross(t[0] - t[2], q - t[2]) >= 0.0
}

/// Projects every face (clipped at the near plane) to pixel space.
pub(crate) fn project_faces(cam_verts: &[Vec3], faces: &[[usize; 3]], camera: &Camera) -> Vec<(usize, Projected)> {
    let mut out = Vec::with_capacity(faces.len());
    for (fi, f) in faces.iter().enumerate() {
        let poly = clip_near([cam_verts[f[0]], cam_verts[f[1]], cam_verts[f[2]]]);
        if poly.len() < 3 {
            continue;
        }
        let p: Vec<Vec2> = poly.iter().map(|v| camera.project(v)).collect();
        for k in 1..p.len() - 1 {
            if let Some(t) = orient([p[0], p[k], p[k + 1]]) {
                out.push((fi, t));
            }
        }
    }
    out
}

pub(crate) fn rasterize_camera_space(
    cam_verts: &[Vec3],
    faces: &[[usize; 3]],
    camera: &Camera,
    projected: Option<&[(usize, Projected)]>,
    window: Window,
) -> DepthBuffer {
    let (w, h) = (camera.width(), camera.height());
    let mut depth = vec![f64::INFINITY; window.len()];
    let mut face = vec![NO_FACE; window.len()];
    let owned;
    let projected = match projected {
        Some(p) => p,
        None => {
            owned = project_faces(cam_verts, faces, camera);
            &owned
        }
    };
    let intr = camera.intrinsics();
    for (fi, t) in projected {
        let f = faces[*fi];
        let (a, b, c) = (cam_verts[f[0]], cam_verts[f[1]], cam_verts[f[2]]);
        let n = (b - a).cross(&(c - a));
        let na = n.dot(&a);
        let Some((x0, x1, y0, y1)) = pixel_range(t, &window) else {
            continue;
        };
        // n . ray(x, y) is affine in the pixel coordinates
        let (ka, kb) = (n.x / intr.fx, n.y / intr.fy);
        let kc = n.z - ka * intr.cx - kb * intr.cy;
        let edges = [(t[0], t[1] - t[0]), (t[1], t[2] - t[1]), (t[2], t[0] - t[2])];
        let qx0 = x0 as f64 + 0.5;
        for y in y0..=y1 {
            let py = y as f64 + 0.5;
            // cross(e, q - o) = e.x * (q.y - o.y) - e.y * (q.x - o.x)
            let mut ef = edges.map(|(o, e)| e.x * (py - o.y) - e.y * (qx0 - o.x));
            let step = edges.map(|(_, e)| -e.y);
            let mut denom = ka * qx0 + kb * py + kc;
            let row = (y - window.y0) * window.w;
            for x in x0..=x1 {
                if ef[0] >= 0.0 && ef[1] >= 0.0 && ef[2] >= 0.0 && denom != 0.0 {
                    let z = na / denom;
                    let i = row + x - window.x0;
                    if z > 0.0 && z < depth[i] {
                        depth[i] = z;
                        face[i] = *fi as u32;
                    }
                }
                for k in 0..3 {
                    ef[k] += step[k];
                }
                denom += ka;
            }
        }
    }
    DepthBuffer {
        width: w,
        height: h,
        window,
        depth,
        face,
    }
}

/// Inclusive pixel index range inside `window` whose centers may fall inside `t`.
fn pixel_range(t: &Projected, window: &Window) -> Option<(usize, usize, usize, usize)> {
    let (mut lx, mut hx, mut ly, mut hy) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in t {
        lx = lx.min(p.x);
        hx = hx.max(p.x);
        ly = ly.min(p.y);
        hy = hy.max(p.y);
    }
    let x0 = (lx - 0.5).ceil().max(window.x0 as f64);
    let x1 = (hx - 0.5).floor().min((window.x0 + window.w) as f64 - 1.0);
    let y0 = (ly - 0.5).ceil().max(window.y0 as f64);
    let y1 = (hy - 0.5).floor().min((window.y0 + window.h) as f64 - 1.0);
    if x0 > x1 || y0 > y1 {
        return None;
    }
    Some((x0 as usize, x1 as usize, y0 as usize, y1 as usize))
}

/// Tile-binned projected triangles for exact point coverage queries.
pub(crate) struct CoverageIndex<'a> {
    triangles: &'a [(usize, Projected)],
    tile: f64,
    tiles_x: usize,
    tiles_y: usize,
    bins: Vec<Vec<u32>>,
}

impl<'a> CoverageIndex<'a> {
    pub(crate) fn new(triangles: &'a [(usize, Projected)], width: usize, height: usize) -> Self {
        let tile = 16.0;
        let tiles_x = (width as f64 / tile).ceil() as usize + 1;
        let tiles_y = (height as f64 / tile).ceil() as usize + 1;
        let mut bins = vec![Vec::new(); tiles_x * tiles_y];
        for (k, (_, t)) in triangles.iter().enumerate() {
            let lx = t.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let hx = t.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let ly = t.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let hy = t.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            if hx < 0.0 || hy < 0.0 || lx > width as f64 || ly > height as f64 {
                continue;
            }
            let tx0 = (lx.max(0.0) / tile) as usize;
            let tx1 = ((hx / tile) as usize).min(tiles_x - 1);
            let ty0 = (ly.max(0.0) / tile) as usize;
            let ty1 = ((hy / tile) as usize).min(tiles_y - 1);
            for ty in ty0..=ty1 {
                for tx in tx0..=tx1 {
                    bins[ty * tiles_x + tx].push(k as u32);
                }
            }
        }
        CoverageIndex {
            triangles,
            tile,
            tiles_x,
            tiles_y,
            bins,
        }
    }

    /// Whether `q` (pixel coordinates) lies inside any projected triangle.
    /// Points outside the image are treated as uncovered.
    pub(crate) fn covered(&self, q: Vec2) -> bool {
        if q.x < 0.0 || q.y < 0.0 {
            return false;
        }
        let tx = (q.x / self.tile) as usize;
        let ty = (q.y / self.tile) as usize;
        if tx >= self.tiles_x || ty >= self.tiles_y {
            return false;
        }
        self.bins[ty * self.tiles_x + tx]
            .iter()
            .any(|&k| covers(&self.triangles[k as usize].1, q))
    }
}
