use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use bevkit::checks::{self, CheckOutcome, CheckSizes};
use bevkit::cost::{encoder_cost, EncoderMode};
use bevkit::io;
use bevkit::pipeline::{run_scene, PipelineConfig};
use bevkit::scene::{generate_scene_with, SceneConfig, MAP_DRIVABLE, MAP_LANE};
use bevkit::voxel::{bev_centerness, unproject, VoxelGridSpec};
use clap::Args;

use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Artifact directory.
    #[arg(long, default_value = "selftest-out")]
    out: PathBuf,
    /// Smaller workloads.
    #[arg(long)]
    quick: bool,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
}

fn line(o: &CheckOutcome) -> String {
    format!(
        "criterion {:>2} {:<26} {}  {}",
        o.id,
        o.name,
        if o.passed { "PASS" } else { "FAIL" },
        o.detail
    )
}

pub fn run(a: &SelftestArgs) -> CliResult {
    let sizes = if a.quick { CheckSizes::quick() } else { CheckSizes::full() };
    let out = &a.out;
    fs::create_dir_all(out)?;

    let seed = a.seed;
    let mut outcomes = vec![
        checks::projection_round_trip(sizes.projection_points, sizes.projection_cameras, seed),
        checks::unprojection_oracle(sizes.unproject_scenes, seed + 1),
        checks::uniform_ray(sizes.rays, seed + 2),
        checks::s2c_bijection(sizes.s2c_grids, seed + 3),
        checks::centerness(sizes.centerness_pairs, seed + 4),
        checks::rotated_iou(sizes.iou_pairs, sizes.iou_samples_side, seed + 5),
        checks::nms(sizes.nms_sets, sizes.nms_set_size, seed + 6),
        checks::assignment(sizes.assign_instances, sizes.rescale_trials, seed + 7),
        checks::losses(sizes.loss_inputs, seed + 8),
    ];
    let rows = checks::noise_sweep_rows(sizes.sweep_scenes, sizes.sweep_base_seed)?;
    with_file(out.join("sweep.csv"), |w| io::write_sweep_csv(w, &rows))?;
    let mut sweep = checks::sweep_verdict(&rows);
    sweep.detail = format!("{} scenes: {}", sizes.sweep_scenes, sweep.detail);
    outcomes.push(sweep);
    outcomes.push(checks::cost_model());

    let grads = checks::gradient_report(sizes.loss_inputs, seed + 8)?;
    let mut loss_csv = String::from("loss,inputs,max_rel_error\n");
    for (name, n, err) in &grads.rows {
        writeln!(loss_csv, "{name},{n},{err:.3e}").unwrap();
    }
    fs::write(out.join("loss_check.csv"), loss_csv)?;

    let spec = VoxelGridSpec::default();
    let mut cost_csv = String::from("mode,layers,params,macs\n");
    for layers in 1..=4 {
        for (name, mode) in [("naive3d", EncoderMode::Naive3d), ("s2c2d", EncoderMode::S2c2d)] {
            let c = encoder_cost(&spec, 64, layers, mode, 64)?;
            writeln!(cost_csv, "{name},{layers},{},{}", c.params, c.macs).unwrap();
        }
    }
    fs::write(out.join("cost.csv"), cost_csv)?;

    let scene = generate_scene_with(7, &SceneConfig::default())?;
    io::save_scene(&out.join("scene"), &scene)?;
    let voxels = unproject(&scene.rig, &scene.feature_images, &scene.grid, Default::default())?;
    io::save_voxel_grid(&out.join("voxels.bin"), &voxels)?;
    let result = run_scene(&scene, &scene.rig, &PipelineConfig::default())?;
    io::save_bev_grid(&out.join("bev.bin"), &result.bev)?;
    io::save_pgm(&out.join("seg_drivable.pgm"), &result.seg_pred, 0, 0.0, 1.0)?;
    io::save_pgm(&out.join("seg_lane.pgm"), &result.seg_pred, 1, 0.0, 1.0)?;
    io::save_pgm(&out.join("gt_drivable.pgm"), &scene.map_mask, MAP_DRIVABLE, 0.0, 1.0)?;
    io::save_pgm(&out.join("gt_lane.pgm"), &scene.map_mask, MAP_LANE, 0.0, 1.0)?;
    io::save_boxes(&out.join("detections.csv"), &result.detections)?;
    with_file(out.join("metrics.csv"), |w| io::write_eval_csv(w, &result.eval))?;
    let g = &scene.grid;
    let centerness = bev_centerness(g.nx, g.ny, ((g.nx - 1) as f64 / 2.0, (g.ny - 1) as f64 / 2.0))?;
    io::save_pgm(&out.join("centerness.pgm"), &centerness, 0, 1.0, 2.0)?;

    let mut report = String::new();
    for o in &outcomes {
        let l = line(o);
        println!("{l}");
        report.push_str(&l);
        report.push('\n');
    }
    fs::write(out.join("report.txt"), report)?;

    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    if failed.is_empty() {
        println!("all {} checks passed; artifacts in {}", outcomes.len(), out.display());
        Ok(())
    } else {
        Err(CliError::Invariant(format!("selftest criteria {failed:?} failed")))
    }
}

fn with_file(path: PathBuf, f: impl FnOnce(&mut dyn std::io::Write) -> bevkit::Result<()>) -> CliResult {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    f(&mut file)?;
    std::io::Write::flush(&mut file)?;
    Ok(())
}
