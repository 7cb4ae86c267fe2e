//! Procedural meshes and self-rendered fixtures used by tests, the demo and
//! the acceptance suite.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{BodyPart, TriMesh, Vec3};
use crate::losses::{ContactAnnotation, ContactEntry, ContactSpec, ObjectPointSource, ObjectRegions, DEFAULT_K};
use crate::optim::OptimConfig;
use crate::placement::{apply_placement, MaskTargets, PlacementError, PlacementParams, PlacementProblem};
use crate::posefit::{render_depth, DepthMap, Pose6D};
use crate::silhouette::{rasterize_silhouette, BinaryMask, Camera, Intrinsics};

/// Closed, outward-oriented axis-aligned box with `subdiv` quads per edge.
pub fn box_mesh(min: Vec3, max: Vec3, subdiv: usize) -> TriMesh {
    let n = subdiv.max(1);
    let mut index: BTreeMap<[usize; 3], usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut vertex = |c: [usize; 3], vertices: &mut Vec<Vec3>| -> usize {
        *index.entry(c).or_insert_with(|| {
            let t = |k: usize| c[k] as f64 / n as f64;
            vertices.push(Vec3::new(
                min.x + (max.x - min.x) * t(0),
                min.y + (max.y - min.y) * t(1),
                min.z + (max.z - min.z) * t(2),
            ));
            vertices.len() - 1
        })
    };
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut c = [0; 3];
                        c[axis] = side;
                        c[u] = i + di;
                        c[v] = j + dj;
                        c
                    };
                    let p00 = vertex(corner(0, 0), &mut vertices);
                    let p10 = vertex(corner(1, 0), &mut vertices);
                    let p11 = vertex(corner(1, 1), &mut vertices);
                    let p01 = vertex(corner(0, 1), &mut vertices);
                    if side == n {
                        faces.push([p00, p10, p11]);
                        faces.push([p00, p11, p01]);
                    } else {
                        faces.push([p00, p11, p10]);
                        faces.push([p00, p01, p11]);
                    }
                }
            }
        }
    }
    TriMesh::new(vertices, faces).expect("box is well formed")
}

/// Geodesic sphere from a subdivided icosahedron, outward oriented.
pub fn icosphere(subdiv: usize, radius: f64, center: Vec3) -> TriMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.extend([[f[0], ab, ca], [f[1], bc, ab], [f[2], ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let verts = verts.into_iter().map(|v| center + v * radius).collect();
    TriMesh::new(verts, faces).expect("icosphere is well formed")
}

/// Two-triangle parallelogram spanned by `edge_u` and `edge_v` from `origin`.
pub fn quad(origin: Vec3, edge_u: Vec3, edge_v: Vec3) -> TriMesh {
    TriMesh::new(
        vec![origin, origin + edge_u, origin + edge_u + edge_v, origin + edge_v],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("quad is well formed")
}

fn part_box(min: [f64; 3], max: [f64; 3], part: BodyPart, subdiv: usize) -> TriMesh {
    let m = box_mesh(Vec3::from(min), Vec3::from(max), subdiv);
    let n = m.vertices().len();
    m.with_part_labels(vec![part; n]).expect("sized")
}

/// A hand box whose bottom (palm) vertices carry the hand label and whose
/// other vertices belong to the forearm.
fn hand_box(min: [f64; 3], max: [f64; 3], hand: BodyPart, forearm: BodyPart, subdiv: usize) -> TriMesh {
    let m = box_mesh(Vec3::from(min), Vec3::from(max), subdiv);
    let labels = m.vertices().iter().map(|v| if v.y == min[1] { hand } else { forearm }).collect();
    m.with_part_labels(labels).expect("sized")
}

/// Seated box figure facing +Z with +Y up and the figure's left on +X. The
/// seat is at y = 0 and the forearms rest horizontally with palms at y = 0.20.
pub fn mannequin(subdiv: usize) -> TriMesh {
    use BodyPart::*;
    let mut parts = vec![
        part_box([-0.18, 0.0, -0.15], [0.18, 0.12, 0.10], Buttocks, subdiv),
        part_box([-0.18, 0.12, -0.15], [0.18, 0.62, 0.05], Back, subdiv),
        part_box([-0.09, 0.66, -0.12], [0.09, 0.88, 0.08], Head, subdiv),
    ];
    for (sign, upper, fore, hand, thigh, calf, foot) in [
        (1.0, LeftUpperArm, LeftForearm, LeftHand, LeftThigh, LeftCalf, LeftFoot),
        (-1.0, RightUpperArm, RightForearm, RightHand, RightThigh, RightCalf, RightFoot),
    ] {
        let x = |a: f64, b: f64| if sign > 0.0 { (a, b) } else { (-b, -a) };
        let (ax0, ax1) = x(0.18, 0.26);
        parts.push(part_box([ax0, 0.30, -0.08], [ax1, 0.60, 0.02], upper, subdiv));
        parts.push(part_box([ax0, 0.21, -0.08], [ax1, 0.30, 0.30], fore, subdiv));
        parts.push(hand_box([ax0, 0.20, 0.30], [ax1, 0.25, 0.42], hand, fore, subdiv));
        let (lx0, lx1) = x(0.02, 0.16);
        parts.push(part_box([lx0, 0.02, 0.10], [lx1, 0.14, 0.50], thigh, subdiv));
        let (cx0, cx1) = x(0.03, 0.15);
        parts.push(part_box([cx0, -0.40, 0.40], [cx1, 0.02, 0.50], calf, subdiv));
        parts.push(part_box([cx0, -0.46, 0.40], [cx1, -0.40, 0.62], foot, subdiv));
    }
    let refs: Vec<&TriMesh> = parts.iter().collect();
    TriMesh::merge(&refs).expect("mannequin is well formed")
}

/// Faces of `mesh` whose three vertices all carry one of `parts`, re-indexed
/// into a standalone mesh.
pub fn part_patch(mesh: &TriMesh, parts: &[BodyPart]) -> TriMesh {
    let labels = mesh.part_labels().expect("labeled mesh");
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for f in mesh.faces() {
        if f.iter().all(|&i| parts.contains(&labels[i])) {
            let mut g = [0; 3];
            for (k, &i) in f.iter().enumerate() {
                g[k] = *remap.entry(i).or_insert_with(|| {
                    vertices.push(mesh.vertices()[i]);
                    vertices.len() - 1
                });
            }
            faces.push(g);
        }
    }
    TriMesh::new(vertices, faces).expect("sub-mesh is well formed")
}

/// Self-rendered placement scene: a seated figure whose palms rest on a
/// desk, with targets rendered at known placement parameters.
#[derive(Debug, Clone)]
pub struct PlacementFixture {
    /// Canonical (unplaced) human.
    pub human: TriMesh,
    /// Desk slab plus the two palm contact patches.
    pub object: TriMesh,
    pub annotation: ContactAnnotation,
    pub regions: ObjectRegions,
    pub spec: ContactSpec,
    pub camera: Camera,
    pub targets: MaskTargets,
    pub truth: PlacementParams,
}

impl PlacementFixture {
    pub fn problem(&self, config: &OptimConfig) -> Result<PlacementProblem, PlacementError> {
        PlacementProblem::new(
            &self.human,
            &self.object,
            self.spec.clone(),
            &self.camera,
            self.targets.clone(),
            config.weights,
            config.silhouette,
        )
    }
}

pub const DESK_REGION: &str = "desk top";

/// Seed 0 places the figure at scale 1.2 and translation (0.3, -0.1, 0.5);
/// other seeds perturb both by up to 0.1.
pub fn placement_fixture(seed: u64) -> PlacementFixture {
    let mut truth = PlacementParams::new(1.2, Vec3::new(0.3, -0.1, 0.5)).expect("positive");
    if seed != 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        truth.scale += rng.gen_range(-0.1..0.1);
        for a in 0..3 {
            truth.translation[a] += rng.gen_range(-0.1..0.1);
        }
    }
    placement_fixture_at(truth)
}

pub fn placement_fixture_at(truth: PlacementParams) -> PlacementFixture {
    let human = mannequin(2);
    let placed = apply_placement(&human, &truth);
    let palms = part_patch(&placed, &[BodyPart::LeftHand, BodyPart::RightHand]);
    let pb = palms.bounds();
    let top = pb.min.y;
    let desk = box_mesh(
        Vec3::new(pb.min.x - 0.35, top - 0.03, pb.min.z - 0.12),
        Vec3::new(pb.max.x + 0.35, top, pb.max.z + 0.3),
        3,
    );
    let object = TriMesh::merge(&[&desk, &palms]).expect("merge");
    let region: Vec<usize> = (desk.vertices().len()..object.vertices().len()).collect();
    let mut regions = ObjectRegions::default();
    regions.regions.insert(DESK_REGION.to_string(), region.clone());
    let annotation = ContactAnnotation {
        version: crate::losses::annotation::CONTACT_VERSION,
        contacts: [BodyPart::LeftHand, BodyPart::RightHand]
            .into_iter()
            .map(|p| ContactEntry {
                human_part: p,
                object_region: DESK_REGION.to_string(),
                object_point_source: ObjectPointSource::MeshRegionFile,
            })
            .collect(),
    };
    let resolved = annotation.resolve(&human, &object, Some(&regions)).expect("fixture contacts resolve");
    let spec = ContactSpec::new(
        resolved.human_vertices.iter().map(|&i| human.vertices()[i]).collect(),
        resolved.object_vertices.iter().map(|&i| object.vertices()[i]).collect(),
        DEFAULT_K,
    )
    .expect("non-empty contacts");
    let center = placed.bounds().center();
    let camera = Camera::look_at(
        center + Vec3::new(1.1, 1.3, 2.4),
        center,
        Vec3::y(),
        Intrinsics {
            fx: 260.0,
            fy: 260.0,
            cx: 128.0,
            cy: 128.0,
        },
        256,
        256,
    )
    .expect("valid camera");
    let targets = MaskTargets {
        m_h_init: rasterize_silhouette(&placed, &camera, None).expect("render"),
        m_hoi_star: rasterize_silhouette(&placed, &camera, Some(&object)).expect("render"),
    };
    PlacementFixture {
        human,
        object,
        annotation,
        regions,
        spec,
        camera,
        targets,
        truth,
    }
}

/// An L-shaped cabinet with a top box offset to one side, so no rotation
/// other than the identity maps its silhouette and depth onto themselves.
pub fn asymmetric_object() -> TriMesh {
    let body = box_mesh(Vec3::new(-0.3, 0.0, -0.2), Vec3::new(0.3, 0.4, 0.2), 2);
    let wing = box_mesh(Vec3::new(0.3, 0.0, -0.2), Vec3::new(0.5, 0.2, 0.05), 2);
    let top = box_mesh(Vec3::new(-0.3, 0.4, -0.2), Vec3::new(-0.05, 0.55, 0.0), 2);
    TriMesh::merge(&[&body, &wing, &top]).expect("merge")
}

/// Pose refinement scene with targets rendered at `truth` and an initial
/// guess 5 degrees, 0.05 m and a factor 1.05 in scale away from it.
#[derive(Debug, Clone)]
pub struct PoseFixture {
    pub mesh: TriMesh,
    pub camera: Camera,
    pub target_depth: DepthMap,
    pub target_mask: BinaryMask,
    pub truth: Pose6D,
    pub init: Pose6D,
}

pub fn pose_fixture(seed: u64) -> PoseFixture {
    use nalgebra::{Unit, UnitQuaternion};
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let yaw = UnitQuaternion::from_axis_angle(&Vec3::y_axis(), rng.gen_range(0.3..1.2));
    let tilt = UnitQuaternion::from_axis_angle(&Vec3::x_axis(), rng.gen_range(-0.15..0.15));
    let t = Vec3::new(rng.gen_range(0.1..0.3), rng.gen_range(-0.05..0.05), rng.gen_range(0.0..0.2));
    let truth = Pose6D::new(tilt * yaw, t, rng.gen_range(0.9..1.1)).expect("valid");

    let unit = |rng: &mut ChaCha8Rng| loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            break v / n;
        }
    };
    let axis = Unit::new_normalize(unit(&mut rng));
    let dt = unit(&mut rng) * 0.05;
    let ds = if rng.gen_bool(0.5) { 1.05 } else { 1.0 / 1.05 };
    let init = Pose6D::new(
        UnitQuaternion::from_axis_angle(&axis, 5f64.to_radians()) * *truth.rotation(),
        truth.translation() + dt,
        truth.scale() * ds,
    )
    .expect("valid");

    let mesh = asymmetric_object();
    let center = Vec3::new(0.2, 0.2, 0.1);
    let camera = Camera::look_at(
        center + Vec3::new(1.0, 0.9, 1.6),
        center,
        Vec3::y(),
        Intrinsics {
            fx: 230.0,
            fy: 230.0,
            cx: 96.0,
            cy: 96.0,
        },
        192,
        192,
    )
    .expect("valid camera");
    let target_depth = render_depth(&mesh, &camera, &truth);
    let target_mask = rasterize_silhouette(&truth.apply_mesh(&mesh), &camera, None).expect("render");
    PoseFixture {
        mesh,
        camera,
        target_depth,
        target_mask,
        truth,
        init,
    }
}
