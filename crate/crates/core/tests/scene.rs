use bevkit::scene::{
    footprint_cells, generate_scene_with, hit_channel, reprojection_error, MAP_DRIVABLE,
};
use bevkit::{perturb_extrinsics, CameraRig, NoiseSpec, SceneConfig};
use nalgebra::Vector3;

fn small() -> SceneConfig {
    SceneConfig {
        n_cameras: 4,
        n_boxes: 12,
        image_size: (640, 360),
        ..SceneConfig::default()
    }
}

/// Independent rasterizer: a cell belongs to a box when its center passes the
/// half-plane test against the footprint edges.
fn raster_footprint(b: &bevkit::Box3D, grid: &bevkit::VoxelGridSpec) -> Vec<(usize, usize)> {
    let fp = b.footprint();
    let mut out = Vec::new();
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let [x, y, _] = grid.cell_center(ix, iy, 0);
            let sides: Vec<f64> = (0..4)
                .map(|k| {
                    let (p, q) = (fp[k], fp[(k + 1) % 4]);
                    (q.x - p.x) * (y - p.y) - (q.y - p.y) * (x - p.x)
                })
                .collect();
            if sides.iter().all(|&s| s >= 0.0) || sides.iter().all(|&s| s <= 0.0) {
                out.push((ix, iy));
            }
        }
    }
    out
}

#[test]
fn scenes_are_deterministic_per_seed() {
    let a = generate_scene_with(11, &small()).unwrap();
    let b = generate_scene_with(11, &small()).unwrap();
    let c = generate_scene_with(12, &small()).unwrap();
    assert_eq!(a.gt_boxes, b.gt_boxes);
    assert_eq!(a.feature_images, b.feature_images);
    assert_eq!(a.map_mask, b.map_mask);
    assert_ne!(a.gt_boxes, c.gt_boxes);
}

#[test]
fn constrained_boxes_touch_drivable_area() {
    for seed in 0..10 {
        let s = generate_scene_with(seed, &small()).unwrap();
        assert!(!s.gt_boxes.is_empty());
        for b in &s.gt_boxes {
            let mut cells = footprint_cells(b, &s.grid);
            cells.sort_unstable();
            assert_eq!(cells, raster_footprint(b, &s.grid));
            assert!(cells.iter().any(|&(ix, iy)| s.map_mask.get(ix, iy, MAP_DRIVABLE) == 1.0), "seed {seed}");
        }
    }
}

#[test]
fn boxes_do_not_overlap_and_sit_on_ground() {
    for seed in 0..10 {
        let s = generate_scene_with(seed, &small()).unwrap();
        for (i, a) in s.gt_boxes.iter().enumerate() {
            assert!((a.z - a.h / 2.0).abs() < 1e-12);
            for b in &s.gt_boxes[i + 1..] {
                assert_eq!(bevkit::bev_iou(a, b), 0.0);
            }
        }
    }
}

#[test]
fn box_hits_fall_inside_projected_rectangles() {
    let cfg = small();
    for seed in 0..4 {
        let s = generate_scene_with(seed, &cfg).unwrap();
        let scaled = CameraRig::new(
            s.rig
                .cameras()
                .iter()
                .zip(&s.feature_images)
                .map(|(c, f)| c.at_resolution(f.width as u32, f.height as u32))
                .collect(),
        )
        .unwrap();
        let mut hits = 0;
        for (ci, img) in s.feature_images.iter().enumerate() {
            let rects = scaled.boxes_3d_to_2d(ci, &s.gt_boxes).unwrap();
            for row in 0..img.height {
                for col in 0..img.width {
                    let px = img.pixel(row, col);
                    for class in 0..s.num_classes as u32 {
                        if px[hit_channel(class)] == 1.0 {
                            hits += 1;
                            let (u, v) = (col as f64, row as f64);
                            assert!(
                                rects.iter().any(|(r, k)| s.gt_boxes[*k].class_id == class
                                    && r.u_min - 1e-6 <= u
                                    && u <= r.u_max + 1e-6
                                    && r.v_min - 1e-6 <= v
                                    && v <= r.v_max + 1e-6),
                                "seed {seed} camera {ci} pixel ({col}, {row}) class {class}"
                            );
                        }
                    }
                }
            }
        }
        assert!(hits > 0, "seed {seed}");
    }
}

#[test]
fn reprojection_error_grows_with_sigma() {
    let cfg = small();
    let points: Vec<Vector3<f64>> = (0..50)
        .map(|k| {
            let a = k as f64 * 0.7;
            Vector3::new(15.0 * a.cos(), 15.0 * a.sin(), (k % 3) as f64 * 0.5)
        })
        .collect();
    for seed in 0..100u64 {
        let rig = bevkit::scene::ring_rig(seed, &cfg).unwrap();
        let errs: Vec<f64> = [1e-3, 1e-2, 5e-2, 1e-1]
            .iter()
            .map(|&sigma| {
                let noisy = perturb_extrinsics(&rig, &NoiseSpec::with_sigma(sigma), seed).unwrap();
                reprojection_error(&rig, &noisy, &points)
            })
            .collect();
        assert!(errs.windows(2).all(|w| w[0] < w[1]), "seed {seed}: {errs:?}");
    }
    let rig = bevkit::scene::ring_rig(0, &cfg).unwrap();
    assert_eq!(perturb_extrinsics(&rig, &NoiseSpec::with_sigma(0.0), 0).unwrap(), rig);
}
