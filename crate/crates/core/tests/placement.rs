use previz_core::geometry::TriMesh;
use previz_core::geometry::Vec3;
use previz_core::losses::LossWeights;
use previz_core::optim::OptimConfig;
use previz_core::placement::*;
use previz_core::silhouette::SoftRasterConfig;
use previz_core::synthetic::placement_fixture;
use proptest::prelude::*;

#[test]
fn apply_examples() {
    let m = TriMesh::new(vec![Vec3::new(1.0, 1.0, 1.0), Vec3::x(), Vec3::y()], vec![[0, 1, 2]]).unwrap();
    assert_eq!(apply_placement(&m, &PlacementParams::default()), m);
    let doubled = apply_placement(&m, &PlacementParams::new(2.0, Vec3::zeros()).unwrap());
    assert_eq!(doubled.vertices()[0], Vec3::new(2.0, 2.0, 2.0));
    assert!(PlacementParams::new(0.0, Vec3::zeros()).is_err());
}

proptest! {
    #[test]
    fn composition(s1 in 0.2..3.0f64, s2 in 0.2..3.0f64, t1 in prop::array::uniform3(-2.0..2.0f64), t2 in prop::array::uniform3(-2.0..2.0f64)) {
        let m = previz_core::synthetic::box_mesh(Vec3::new(-0.3, 0.1, 0.0), Vec3::new(0.5, 0.4, 0.9), 1);
        let p1 = PlacementParams::new(s1, Vec3::from(t1)).unwrap();
        let p2 = PlacementParams::new(s2, Vec3::from(t2)).unwrap();
        let twice = apply_placement(&apply_placement(&m, &p1), &p2);
        let once = apply_placement(&m, &p1.then(&p2));
        for (a, b) in twice.vertices().iter().zip(once.vertices()) {
            prop_assert!((a - b).norm() < 1e-9);
        }
        let round = PlacementParams::from_theta(&p1.to_theta());
        prop_assert!((round.scale - s1).abs() < 1e-12);
    }
}

#[test]
fn far_human_with_exact_masks_is_pure_contact() {
    let f = placement_fixture(0);
    let far = PlacementParams::new(f.truth.scale, f.truth.translation + Vec3::new(0.0, 0.0, 50.0)).unwrap();
    let placed = apply_placement(&f.human, &far);
    let targets = MaskTargets {
        m_h_init: previz_core::silhouette::rasterize_silhouette(&placed, &f.camera, None).unwrap(),
        m_hoi_star: previz_core::silhouette::rasterize_silhouette(&placed, &f.camera, Some(&f.object)).unwrap(),
    };
    let sharp = SoftRasterConfig { sharpness: 1e4, ..Default::default() };
    let w = LossWeights::new(1.0, 2.0, 1.0).unwrap();
    let l = evaluate_objective(&f.human, &f.object, &f.spec, &f.camera, &targets, &far, &w, &sharp).unwrap();
    assert_eq!(l.pen, 0.0);
    assert!(l.mask < 1e-9, "{}", l.mask);
    assert!(l.hoi > 0.0);
    assert!((l.total - 2.0 * l.hoi - l.mask).abs() < 1e-12);
}

#[test]
fn truth_has_tiny_loss_at_high_sharpness() {
    let f = placement_fixture(0);
    let sharp = SoftRasterConfig { sharpness: 500.0, depth_sharpness: 1e4 };
    let w = LossWeights::default();
    let l = evaluate_objective(&f.human, &f.object, &f.spec, &f.camera, &f.targets, &f.truth, &w, &sharp).unwrap();
    assert!(l.total < 1e-3, "{l:?}");
    let w2 = LossWeights::new(1.0, 1.0, 2.0).unwrap();
    let shifted = PlacementParams::new(1.1, f.truth.translation).unwrap();
    let a = evaluate_objective(&f.human, &f.object, &f.spec, &f.camera, &f.targets, &shifted, &w, &sharp).unwrap();
    let b = evaluate_objective(&f.human, &f.object, &f.spec, &f.camera, &f.targets, &shifted, &w2, &sharp).unwrap();
    assert_eq!(b.mask, a.mask);
    assert!((b.total - a.total - a.mask).abs() < 1e-12);
}

#[test]
fn stationary_at_optimum() {
    let f = placement_fixture(0);
    let config = OptimConfig {
        steps: 40,
        silhouette: SoftRasterConfig { sharpness: 500.0, ..Default::default() },
        ..OptimConfig::default()
    };
    let problem = f.problem(&config).unwrap();
    let r = optimize_placement(&problem, &f.truth, &config).unwrap();
    assert!((r.params.scale - f.truth.scale).abs() < 1e-3);
    assert!((r.params.translation - f.truth.translation).norm() < 1e-3);
    assert_eq!(r.trace.len(), 41);
    let min = r.trace.iter().map(|t| t.loss.total).fold(f64::INFINITY, f64::min);
    assert_eq!(r.trace[r.best_step].loss.total, min);
}

#[test]
fn short_run_descends_and_is_deterministic() {
    let f = placement_fixture(1);
    let config = OptimConfig { steps: 60, ..OptimConfig::default() };
    let problem = f.problem(&config).unwrap();
    let a = optimize_placement(&problem, &PlacementParams::default(), &config).unwrap();
    let b = optimize_placement(&problem, &PlacementParams::default(), &config).unwrap();
    assert_eq!(trace_to_csv(&a.trace), trace_to_csv(&b.trace));
    assert!(a.trace[a.best_step].loss.total < a.trace[0].loss.total);
    assert!(a.trace.iter().all(|r| r.params.scale > 0.0));
}

#[test]
fn analytic_pen_and_contact_gradients() {
    let f = placement_fixture(0);
    let problem = f.problem(&OptimConfig::default()).unwrap();
    // shift down into the desk so both terms are active
    let theta = PlacementParams::new(f.truth.scale * 1.02, f.truth.translation + Vec3::new(0.01, -0.03, 0.02)).unwrap().to_theta();
    let (pen, gp) = problem.penetration(&theta);
    assert!(pen > 0.0);
    let (_, gc) = problem.contact(&theta).unwrap();
    let h = 1e-4;
    for a in 0..4 {
        let mut up = theta;
        let mut down = theta;
        up[a] += h;
        down[a] -= h;
        let fp = (problem.penetration(&up).0 - problem.penetration(&down).0) / (2.0 * h);
        let fc = (problem.contact(&up).unwrap().0 - problem.contact(&down).unwrap().0) / (2.0 * h);
        assert!((fp - gp[a]).abs() <= 1e-2 * gp.norm().max(1e-12), "pen {a}: {fp} vs {}", gp[a]);
        assert!((fc - gc[a]).abs() <= 1e-2 * gc.norm().max(1e-12), "hoi {a}: {fc} vs {}", gc[a]);
    }
}

#[test]
fn trace_csv_format() {
    let row = TraceRow {
        step: 3,
        loss: LossBreakdown { total: 1.5, pen: 0.0, hoi: 1.0, mask: 0.5 },
        params: PlacementParams::new(1.25, Vec3::new(0.1, -0.2, 0.0)).unwrap(),
    };
    assert_eq!(trace_to_csv(&[row]), format!("{TRACE_HEADER}\n3,1.5,0.0,1.0,0.5,1.25,0.1,-0.2,0.0\n"));
}
