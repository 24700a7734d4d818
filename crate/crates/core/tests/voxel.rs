use bevkit::oracle::unproject_reference;
use bevkit::voxel::centerness_value;
use bevkit::{
    bev_centerness, channel_to_spatial, spatial_to_channel, unproject, Camera, CameraRig, Extrinsics, FeatureImage,
    Fusion, Intrinsics, Sampling, UnprojectOptions, VoxelGrid, VoxelGridSpec,
};
use nalgebra::Vector3;
use proptest::prelude::*;

fn arb_voxels() -> impl Strategy<Value = VoxelGrid> {
    (1usize..6, 1usize..6, 1usize..5, 1usize..4).prop_flat_map(|(nx, ny, nz, c)| {
        let spec = VoxelGridSpec::centered(nx, ny, nz).unwrap();
        (
            prop::collection::vec(-10.0f32..10.0, spec.num_voxels() * c),
            prop::collection::vec(0u32..4, spec.num_voxels()),
        )
            .prop_map(move |(data, hit_count)| VoxelGrid { spec, channels: c, data, hit_count })
    })
}

fn camera(yaw: f64) -> Camera {
    Camera {
        intrinsics: Intrinsics::new(400.0, 400.0, 400.0, 300.0, 800, 600).unwrap(),
        extrinsics: Extrinsics::looking_at_yaw(Vector3::new(0.0, 0.0, 1.5), yaw, 0.1),
    }
}

fn features(rig: &CameraRig, h: usize, w: usize, c: usize) -> Vec<FeatureImage> {
    (0..rig.len())
        .map(|i| {
            let data = (0..h * w * c).map(|k| ((k * 31 + i * 7) % 97) as f32 / 97.0).collect();
            FeatureImage::new(i, h, w, c, data).unwrap()
        })
        .collect()
}

proptest! {
    #[test]
    fn s2c_round_trips(v in arb_voxels()) {
        let b = spatial_to_channel(&v);
        prop_assert_eq!(b.channels, v.spec.nz * v.channels);
        for ix in 0..v.spec.nx {
            for iy in 0..v.spec.ny {
                for iz in 0..v.spec.nz {
                    for c in 0..v.channels {
                        prop_assert_eq!(b.get(ix, iy, iz * v.channels + c), v.voxel(ix, iy, iz)[c]);
                    }
                }
            }
        }
        let back = channel_to_spatial(&b, &v.spec, Some(&v.hit_count)).unwrap();
        prop_assert_eq!(back, v);
    }

    #[test]
    fn centerness_spans_one_to_two(nx in 2usize..40, ny in 2usize..40) {
        let c = ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0);
        let g = bev_centerness(nx, ny, c).unwrap();
        let (lo, hi) = g.data.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        prop_assert!(lo >= 1.0 - 1e-6 && hi <= 2.0 + 1e-6);
        prop_assert!((g.get(0, 0, 0) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn centerness_grows_outward(nx in 2usize..40, ny in 2usize..40, t in 0.0..1.0f64, s in 0.0..1.0f64) {
        let c = ((nx - 1) as f64 / 2.0, (ny - 1) as f64 / 2.0);
        let at = |k: f64| (c.0 + k * t * c.0, c.1 + k * s * c.1);
        prop_assert!(centerness_value(nx, ny, c, at(0.5)) <= centerness_value(nx, ny, c, at(1.0)) + 1e-12);
    }
}

#[test]
fn unproject_matches_reference_for_every_mode() {
    let rig = CameraRig::new(vec![camera(0.0), camera(1.0), camera(-2.0)]).unwrap();
    let feats = features(&rig, 75, 100, 3);
    let spec = VoxelGridSpec::new(24, 24, 3, [1.0, 1.0, 1.0], [-12.0, -12.0, -1.0]).unwrap();
    for fusion in [Fusion::Average, Fusion::Sum, Fusion::First] {
        for sampling in [Sampling::Bilinear, Sampling::Nearest] {
            let opts = UnprojectOptions { fusion, sampling };
            let got = unproject(&rig, &feats, &spec, opts).unwrap();
            assert_eq!(got, unproject_reference(&rig, &feats, &spec, opts).unwrap(), "{opts:?}");
            assert!(got.hit_count.iter().any(|&h| h >= 2), "{opts:?}");
        }
    }
}

#[test]
fn unproject_is_constant_along_a_column() {
    let rig = CameraRig::new(vec![camera(0.0)]).unwrap();
    let data = (0..60 * 80).flat_map(|k| [(k % 80) as f32 / 80.0, (k / 80) as f32 / 60.0]).collect();
    let feats = vec![FeatureImage::new(0, 60, 80, 2, data).unwrap()];
    let spec = VoxelGridSpec::new(8, 8, 4, [1.0, 1.0, 0.01], [5.0, -4.0, 0.0]).unwrap();
    let v = unproject(&rig, &feats, &spec, UnprojectOptions::default()).unwrap();
    let seen = (0..8).flat_map(|ix| (0..8).map(move |iy| (ix, iy))).filter(|&(ix, iy)| v.hits(ix, iy, 0) == 1);
    let mut checked = 0;
    for (ix, iy) in seen {
        for iz in 1..4 {
            for (a, b) in v.voxel(ix, iy, 0).iter().zip(v.voxel(ix, iy, iz)) {
                assert!((a - b).abs() < 0.01);
            }
        }
        checked += 1;
    }
    assert!(checked > 0);
}

#[test]
fn unproject_rejects_mismatched_inputs() {
    let rig = CameraRig::new(vec![camera(0.0), camera(1.0)]).unwrap();
    let feats = features(&rig, 10, 10, 2);
    let spec = VoxelGridSpec::centered(4, 4, 2).unwrap();
    assert!(unproject(&rig, &feats[..1], &spec, UnprojectOptions::default()).is_err());
    let mixed = vec![feats[0].clone(), features(&rig, 10, 10, 3).remove(1)];
    assert!(unproject(&rig, &mixed, &spec, UnprojectOptions::default()).is_err());
}

#[test]
fn projection_round_trips_through_pixel_rays() {
    let rig = CameraRig::new(vec![camera(0.3)]).unwrap();
    let p = Vector3::new(12.0, 3.0, 0.7);
    let proj = rig.project_point(0, &p).unwrap().expect("in view");
    let ray = rig.pixel_to_ray(0, proj.u, proj.v).unwrap();
    assert!((ray.closest_point(&p) - p).norm() < 1e-9);
    assert!(rig.project_point(0, &Vector3::new(-12.0, 0.0, 0.7)).unwrap().is_none());
    assert!(rig.project_point(3, &p).is_err());
}
