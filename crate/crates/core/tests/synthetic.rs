use std::collections::BTreeMap;
use previz_core::geometry::BodyPart;
use previz_core::geometry::TriMesh;
use previz_core::geometry::Vec3;
use previz_core::synthetic::*;

fn signed_volume(m: &TriMesh) -> f64 {
    (0..m.faces().len())
        .map(|f| {
            let [a, b, c] = m.triangle(f);
            a.dot(&b.cross(&c)) / 6.0
        })
        .sum()
}

fn is_closed(m: &TriMesh) -> bool {
    let mut edges: BTreeMap<(usize, usize), i32> = BTreeMap::new();
    for f in m.faces() {
        for k in 0..3 {
            *edges.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
        }
    }
    edges.iter().all(|(&(a, b), &c)| c == 1 && edges.get(&(b, a)) == Some(&1))
}

#[test]
fn box_is_closed_and_outward() {
    let m = box_mesh(Vec3::new(-1.0, 0.0, 2.0), Vec3::new(1.0, 0.5, 3.0), 3);
    assert!(is_closed(&m));
    assert!((signed_volume(&m) - 1.0).abs() < 1e-12);
    assert_eq!(m.vertices().len(), 6 * 9 + 2);
}

#[test]
fn icosphere_is_closed_and_outward() {
    let m = icosphere(2, 2.0, Vec3::new(1.0, 1.0, 1.0));
    assert!(is_closed(&m));
    let vol = signed_volume(&m);
    assert!(vol > 0.9 * 4.0 / 3.0 * std::f64::consts::PI * 8.0);
    assert!(m.vertices().iter().all(|v| ((v - Vec3::new(1.0, 1.0, 1.0)).norm() - 2.0).abs() < 1e-12));
}

#[test]
fn mannequin_labels_and_fixture() {
    let m = mannequin(2);
    let labels = m.part_labels().unwrap();
    for p in BodyPart::ALL {
        assert!(labels.contains(&p), "{p} missing");
    }
    // palms: the 3x3 bottom lattice of each hand box
    assert_eq!(m.vertices_with_parts(&[BodyPart::LeftHand]).len(), 9);
    let f = placement_fixture(0);
    assert_eq!(f.spec.human_points().len(), 18);
    assert_eq!(f.spec.object_points().len(), 18);
    let h = f.targets.m_h_init.count();
    let hoi = f.targets.m_hoi_star.count();
    assert!(h > 3000 && hoi < h && hoi > h / 2, "{h} {hoi}");
    let bb = f.targets.m_h_init.bounding_box().unwrap();
    assert!(bb.0 > 5 && bb.1 > 5 && bb.2 < 250 && bb.3 < 250, "{bb:?}");
}
