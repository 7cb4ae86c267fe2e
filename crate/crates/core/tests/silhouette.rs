mod camera {
    use nalgebra::Matrix3;
    use previz_core::geometry::TriMesh;
    use previz_core::geometry::Vec3;
    use previz_core::silhouette::*;
    use previz_core::silhouette::Camera;
    use previz_core::silhouette::rasterize_silhouette;
    use previz_core::synthetic::{box_mesh, quad};

    fn camera(w: usize, h: usize) -> Camera {
        Camera::new(
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
            },
            Matrix3::identity(),
            Vec3::zeros(),
            w,
            h,
        )
        .unwrap()
    }

    #[test]
    fn camera_validation() {
        let i = Intrinsics { fx: 100.0, fy: 100.0, cx: 32.0, cy: 32.0 };
        assert!(Camera::new(Intrinsics { fx: 0.0, ..i }, Matrix3::identity(), Vec3::zeros(), 64, 64).is_err());
        assert!(Camera::new(Intrinsics { cx: 80.0, ..i }, Matrix3::identity(), Vec3::zeros(), 64, 64).is_err());
        assert!(Camera::new(i, Matrix3::identity() * 1.01, Vec3::zeros(), 64, 64).is_err());
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, 5.0), Vec3::zeros(), Vec3::y(), i, 64, 64).unwrap();
        let p = cam.to_camera(&Vec3::new(1.0, 1.0, 0.0));
        // world +x is image right, world +y is image up
        assert!(p.x > 0.0 && p.y < 0.0 && (p.z - 5.0).abs() < 1e-12);
    }

    #[test]
    fn full_frustum_triangle_covers_everything() {
        let cam = camera(32, 24);
        let tri = TriMesh::new(
            vec![Vec3::new(-100.0, -100.0, 5.0), Vec3::new(100.0, -100.0, 5.0), Vec3::new(0.0, 200.0, 5.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let m = rasterize_silhouette(&tri, &cam, None).unwrap();
        assert_eq!(m.count(), 32 * 24);
    }

    #[test]
    fn cube_projection_bounding_box() {
        let cam = camera(64, 64);
        let cube = box_mesh(Vec3::new(-0.5, -0.5, 4.5), Vec3::new(0.5, 0.5, 5.5), 2);
        let m = rasterize_silhouette(&cube, &cam, None).unwrap();
        let corners: Vec<Vec2> = [-0.5, 0.5]
            .iter()
            .flat_map(|&x| [-0.5, 0.5].into_iter().flat_map(move |y| [4.5, 5.5].into_iter().map(move |z| Vec3::new(x, y, z))))
            .map(|c| cam.project(&c))
            .collect();
        let (x0, x1) = corners.iter().fold((f64::MAX, f64::MIN), |a, c| (a.0.min(c.x), a.1.max(c.x)));
        let (y0, y1) = corners.iter().fold((f64::MAX, f64::MIN), |a, c| (a.0.min(c.y), a.1.max(c.y)));
        let (bx0, by0, bx1, by1) = m.bounding_box().unwrap();
        assert!((bx0 as f64 + 0.5 - x0).abs() <= 1.0);
        assert!((bx1 as f64 + 0.5 - x1).abs() <= 1.0);
        assert!((by0 as f64 + 0.5 - y0).abs() <= 1.0);
        assert!((by1 as f64 + 0.5 - y1).abs() <= 1.0);
    }

    #[test]
    fn occluder_in_front_hides_everything() {
        let cam = camera(32, 32);
        let cube = box_mesh(Vec3::new(-0.5, -0.5, 4.5), Vec3::new(0.5, 0.5, 5.5), 1);
        let wall = quad(Vec3::new(-50.0, -50.0, 2.0), Vec3::new(100.0, 0.0, 0.0), Vec3::new(0.0, 100.0, 0.0));
        let m = rasterize_silhouette(&cube, &cam, Some(&wall)).unwrap();
        assert_eq!(m.count(), 0);
        let behind = quad(Vec3::new(-50.0, -50.0, 9.0), Vec3::new(100.0, 0.0, 0.0), Vec3::new(0.0, 100.0, 0.0));
        let unoccluded = rasterize_silhouette(&cube, &cam, None).unwrap();
        assert_eq!(rasterize_silhouette(&cube, &cam, Some(&behind)).unwrap(), unoccluded);
    }

    #[test]
    fn mesh_behind_camera_is_empty() {
        let cam = camera(32, 32);
        let cube = box_mesh(Vec3::new(-0.5, -0.5, -5.5), Vec3::new(0.5, 0.5, -4.5), 1);
        assert_eq!(rasterize_silhouette(&cube, &cam, None).unwrap().count(), 0);
    }

    #[test]
    fn doubling_resolution_quadruples_area() {
        let cam = camera(64, 64);
        let sphere = previz_core::synthetic::icosphere(3, 0.6, Vec3::new(0.1, 0.0, 5.0));
        let a = rasterize_silhouette(&sphere, &cam, None).unwrap().count() as f64;
        let b = rasterize_silhouette(&sphere, &cam.scaled(2), None).unwrap().count() as f64;
        assert!((b / a - 4.0).abs() <= 0.2, "{}", b / a);
    }
}

mod io {
    use previz_core::geometry::Vec3;
    use previz_core::silhouette::*;
    use previz_core::silhouette::BinaryMask;
    use previz_core::silhouette::Camera;
    use previz_core::silhouette::SoftMask;
    use previz_core::silhouette::io::*;

    #[test]
    fn mask_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = BinaryMask::empty(7, 5);
        m.set(1, 2, true);
        m.set(6, 4, true);
        let p = dir.path().join("m.png");
        write_binary_mask(&m, &p).unwrap();
        assert_eq!(read_binary_mask(&p).unwrap(), m);
        let soft = SoftMask::new(2, 1, vec![0.0, 0.5]).unwrap();
        write_soft_mask(&soft, &p).unwrap();
        let back = read_soft_mask(&p).unwrap();
        assert!((back.get(1, 0) - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn camera_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cam = Camera::look_at(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::zeros(),
            Vec3::y(),
            Intrinsics { fx: 200.0, fy: 210.0, cx: 64.0, cy: 48.0 },
            128,
            96,
        )
        .unwrap();
        let p = dir.path().join("cam.json");
        write_camera(&cam, &p).unwrap();
        let back = read_camera(&p).unwrap();
        assert!((back.rotation() - cam.rotation()).abs().max() < 1e-15);
        assert_eq!(back.width(), 128);
        let mut bad = CameraFile::from(&cam);
        bad.cx = -5.0;
        assert!(bad.to_camera().is_err());
    }
}

mod soft {
    use nalgebra::Matrix3;
    use nalgebra::SVector;
    use previz_core::geometry::Vec3;
    use previz_core::silhouette::*;
    use previz_core::silhouette::Camera;
    use previz_core::silhouette::SoftMask;
    use previz_core::silhouette::SoftRasterConfig;
    use previz_core::silhouette::{rasterize_silhouette, soft_silhouette, Intrinsics};
    use previz_core::synthetic::{box_mesh, icosphere, quad};

    fn camera() -> Camera {
        Camera::new(
            Intrinsics { fx: 120.0, fy: 120.0, cx: 48.0, cy: 40.0 },
            Matrix3::identity(),
            Vec3::zeros(),
            96,
            80,
        )
        .unwrap()
    }

    #[test]
    fn rejects_non_positive_sharpness() {
        let m = box_mesh(Vec3::new(-0.5, -0.5, 4.5), Vec3::new(0.5, 0.5, 5.5), 1);
        let cfg = SoftRasterConfig { sharpness: 0.0, ..Default::default() };
        assert!(matches!(soft_silhouette(&m, &camera(), &cfg, None), Err(RenderError::InvalidSharpness(_))));
    }

    #[test]
    fn far_pixels_saturate() {
        let m = box_mesh(Vec3::new(-0.2, -0.2, 4.5), Vec3::new(0.2, 0.2, 5.5), 1);
        let cfg = SoftRasterConfig { sharpness: 2.0, ..Default::default() };
        let soft = soft_silhouette(&m, &camera(), &cfg, None).unwrap();
        // top-left corner is far more than 100 / sharpness pixels from the silhouette
        assert!(soft.get(0, 0) < 1e-3);
        let center = soft.get(48, 40);
        assert!(center > 0.999);
    }

    #[test]
    fn boundary_pixel_is_one_half() {
        // square whose left edge projects exactly onto pixel column center x = 30.5
        let cam = camera();
        let z = 5.0;
        let x_left = (30.5 - 48.0) * z / 120.0;
        let sq = quad(Vec3::new(x_left, -0.5, z), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0));
        let soft = soft_silhouette(&sq, &cam, &SoftRasterConfig::default(), None).unwrap();
        assert!((soft.get(30, 40) - 0.5).abs() < 1e-9, "{}", soft.get(30, 40));
    }

    #[test]
    fn hard_soft_consistency() {
        let cam = camera();
        let sphere = icosphere(3, 0.8, Vec3::new(0.2, 0.1, 5.0));
        let wall = quad(Vec3::new(-0.1, -3.0, 4.9), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 6.0, 0.0));
        for occ in [None, Some(&wall)] {
            let hard = rasterize_silhouette(&sphere, &cam, occ).unwrap();
            let cfg = SoftRasterConfig { sharpness: 50.0, depth_sharpness: 1e4 };
            let soft = soft_silhouette(&sphere, &cam, &cfg, occ).unwrap();
            let agree = soft
                .values()
                .iter()
                .zip(hard.bits())
                .filter(|(&s, &b)| (s > 0.9 && b) || (s < 0.1 && !b) || (0.1..=0.9).contains(&s))
                .count();
            assert!(agree as f64 >= 0.99 * hard.bits().len() as f64);
        }
    }

    #[test]
    fn translation_gradient_matches_finite_differences() {
        let cam = camera();
        let base = icosphere(2, 0.7, Vec3::new(0.1, -0.05, 5.0));
        let wall = quad(Vec3::new(0.0, -3.0, 4.6), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 6.0, 0.0));
        let cfg = SoftRasterConfig { sharpness: 0.7, depth_sharpness: 5.0 };
        let r = SoftRenderer::new(&base, &cam, cfg, Some(&wall)).unwrap();
        let jac = |_: usize| nalgebra::SMatrix::<f64, 3, 3>::identity();
        let mean = |m: &SoftMask| m.mean();
        let t0 = Vec3::new(0.013, -0.021, 0.037);
        let moved: Vec<Vec3> = base.vertices().iter().map(|v| v + t0).collect();
        let out = r.render::<3>(&moved, Some(&jac));
        let n = (cam.width() * cam.height()) as f64;
        for (grads, pick) in [(&out.plain_grad, 0usize), (&out.occluded_grad, 1usize)] {
            let analytic: SVector<f64, 3> = grads.iter().map(|(_, g)| *g).sum::<SVector<f64, 3>>() / n;
            let h = 1e-4;
            let mut fd = SVector::<f64, 3>::zeros();
            for a in 0..3 {
                let mut dt = Vec3::zeros();
                dt[a] = h;
                let eval = |t: Vec3| {
                    let vs: Vec<Vec3> = base.vertices().iter().map(|v| v + t).collect();
                    let o = r.render::<1>(&vs, None);
                    if pick == 0 {
                        mean(&o.plain)
                    } else {
                        mean(o.occluded.as_ref().unwrap())
                    }
                };
                fd[a] = (eval(t0 + dt) - eval(t0 - dt)) / (2.0 * h);
            }
            let rel = (analytic - fd).norm() / fd.norm();
            assert!(rel < 1e-2, "pick {pick}: analytic {analytic:?} fd {fd:?} rel {rel}");
        }
    }

    #[test]
    fn overlap_matches_materialized_iou() {
        let cam = camera();
        let sphere = icosphere(2, 0.7, Vec3::new(0.1, -0.05, 5.0));
        let wall = quad(Vec3::new(0.0, -3.0, 4.6), Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 6.0, 0.0));
        let shifted = icosphere(2, 0.6, Vec3::new(-0.2, 0.1, 5.0));
        let t_plain = rasterize_silhouette(&shifted, &cam, None).unwrap();
        let t_occ = rasterize_silhouette(&shifted, &cam, Some(&wall)).unwrap();
        let cfg = SoftRasterConfig { sharpness: 0.8, depth_sharpness: 20.0 };
        let r = SoftRenderer::new(&sphere, &cam, cfg, Some(&wall)).unwrap();
        let full = r.render::<1>(sphere.vertices(), None);
        let [a, b] = r.overlap(sphere.vertices(), &OverlapTargets::new(&t_plain, &t_occ)).unwrap();
        let want_a = previz_core::losses::soft_iou(&full.plain, &t_plain.to_soft()).unwrap();
        let want_b = previz_core::losses::soft_iou(full.occluded.as_ref().unwrap(), &t_occ.to_soft()).unwrap();
        assert!((a - want_a).abs() < 1e-12, "{a} {want_a}");
        assert!((b - want_b).abs() < 1e-12, "{b} {want_b}");
    }
}

mod raster {
    use nalgebra::Matrix3;
    use previz_core::geometry::TriMesh;
    use previz_core::geometry::Vec3;
    use previz_core::silhouette::*;
    use previz_core::silhouette::Camera;
    use previz_core::silhouette::Intrinsics;
    use previz_core::synthetic::quad;

    #[test]
    fn clipping_keeps_front_part() {
        let cam = Camera::new(
            Intrinsics { fx: 50.0, fy: 50.0, cx: 16.0, cy: 16.0 },
            Matrix3::identity(),
            Vec3::zeros(),
            32,
            32,
        )
        .unwrap();
        // one vertex behind the camera: only the part in front is drawn
        let straddling = TriMesh::new(vec![Vec3::new(-5.0, 0.0, -1.0), Vec3::new(1.0, -1.0, 3.0), Vec3::new(1.0, 1.0, 3.0)], vec![[0, 1, 2]]).unwrap();
        let m = rasterize_silhouette(&straddling, &cam, None).unwrap();
        assert!(m.get(16, 16));
        let d = rasterize_depth(&straddling, &cam);
        assert!(d.depths().iter().all(|z| !z.is_finite() || *z >= NEAR_PLANE - 1e-12));
        let behind = TriMesh::new(vec![Vec3::new(0.0, 0.0, -1.0), Vec3::new(1.0, 0.0, -1.0), Vec3::new(0.0, 1.0, -1.0)], vec![[0, 1, 2]]).unwrap();
        assert_eq!(rasterize_silhouette(&behind, &cam, None).unwrap().count(), 0);
    }

    #[test]
    fn fronto_parallel_plane_depth() {
        let cam = Camera::new(
            Intrinsics { fx: 50.0, fy: 50.0, cx: 16.0, cy: 16.0 },
            Matrix3::identity(),
            Vec3::zeros(),
            32,
            32,
        )
        .unwrap();
        let plane = quad(Vec3::new(-20.0, -20.0, 5.0), Vec3::new(40.0, 0.0, 0.0), Vec3::new(0.0, 40.0, 0.0));
        let d = rasterize_depth(&plane, &cam);
        assert!(d.depths().iter().all(|&z| (z - 5.0).abs() < 1e-12));
        assert_eq!(rasterize_silhouette(&plane, &cam, None).unwrap().count(), 32 * 32);
    }
}
