use std::path::Path;
use std::process::{Command, Output};

fn bevkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bevkit"))
        .args(args)
        .env_remove("BEVKIT_THREADS")
        .output()
        .expect("bevkit runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, seed: &str, cameras: &str) {
    let out = bevkit(&["gen", "--seed", seed, "--cameras", cameras, "--boxes", "6", "--image", "640x360", "--out", p(dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_project_eval_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("scene");
    gen(&scene, "5", "4");
    for f in ["scene.json", "rig.json", "gt_boxes.csv", "map.bin", "features/cam00.bin", "features/cam03.bin"] {
        assert!(scene.join(f).exists(), "{f}");
    }
    let vox = tmp.path().join("v.bin");
    let bev = tmp.path().join("b.bin");
    let out = bevkit(&["project", "--scene", p(&scene), "--out", p(&vox), "--bev", p(&bev)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(vox.exists() && bev.exists());

    let gts = scene.join("gt_boxes.csv");
    let metrics = tmp.path().join("m.csv");
    let out = bevkit(&["eval", "--preds", p(&gts), "--gts", p(&gts), "--out", p(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.starts_with("metric,class,threshold,value"));
    let map_line = text.lines().find(|l| l.starts_with("map,")).expect("map row");
    assert_eq!(map_line, "map,,,1.000000");
}

#[test]
fn project_paths_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = tmp.path().join("s");
    gen(&scene, "2", "3");
    let a = tmp.path().join("a.bin");
    let b = tmp.path().join("b.bin");
    let grid = ["--grid", "80x80x4", "--voxel-size", "0.5,0.5,0.5", "--origin", "-20,-20,-0.25"];
    let mut args = vec!["project", "--scene", p(&scene), "--out", p(&a), "--fusion", "sum"];
    args.extend(grid);
    assert!(bevkit(&args).status.success());
    let rig = scene.join("rig.json");
    let feats = scene.join("features");
    let mut args = vec!["project", "--rig", p(&rig), "--features", p(&feats), "--out", p(&b), "--fusion", "sum"];
    args.extend(grid);
    assert!(bevkit(&args).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope.csv");
    assert_eq!(bevkit(&["nms", "--in", p(&missing)]).status.code(), Some(3));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "not,a,box\n1,2\n").unwrap();
    assert_eq!(bevkit(&["nms", "--in", p(&bad)]).status.code(), Some(4));

    let scene = tmp.path().join("s");
    gen(&scene, "1", "2");
    let one = tmp.path().join("one");
    std::fs::create_dir(&one).unwrap();
    std::fs::copy(scene.join("features/cam00.bin"), one.join("cam00.bin")).unwrap();
    let out = tmp.path().join("v.bin");
    let code = bevkit(&["project", "--rig", p(&scene.join("rig.json")), "--features", p(&one), "--out", p(&out)])
        .status
        .code();
    assert_eq!(code, Some(5));

    assert_eq!(bevkit(&["centerness", "--grid", "0x4", "--out", p(&out)]).status.code(), Some(2));
    assert_eq!(bevkit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bevkit(&["loss-check", "--inputs", "20"]).status.code(), Some(0));
}

#[test]
fn assign_and_nms_write_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let anchors = tmp.path().join("anchors.csv");
    let gts = tmp.path().join("gts.csv");
    let header = "x,y,z,w,l,h,theta,vx,vy,score,class_id\n";
    std::fs::write(&anchors, format!("{header}0,0,0.8,2,4,1.5,0,0,0,0.9,0\n0.2,0,0.8,2,4,1.5,0,0,0,0.8,0\n20,0,0.8,2,4,1.5,0,0,0,0.7,0\n")).unwrap();
    std::fs::write(&gts, format!("{header}0,0,0.8,2,4,1.5,0,0,0,1,0\n")).unwrap();
    let out = bevkit(&["assign", "--anchors", p(&anchors), "--gts", p(&gts)]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "anchor_index,label,gt_index\n0,pos,0\n1,pos,0\n2,neg,-1\n");

    let out = bevkit(&["nms", "--in", p(&anchors)]);
    assert!(out.status.success());
    let rows = String::from_utf8(out.stdout).unwrap().lines().count();
    assert_eq!(rows, 3);

    assert_eq!(bevkit(&["assign", "--mode", "dynamic", "--anchors", p(&anchors), "--gts", p(&gts)]).status.code(), Some(2));
}

#[test]
fn noise_sweep_writes_rows_per_level() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("sweep.csv");
    let out = bevkit(&["noise-sweep", "--generate", "1", "--seed", "100", "--levels", "0.001,0.1", "--trials", "2", "--out", p(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "sigma,seg_iou,map");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0,"));
    let seg = |l: &str| l.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(seg(lines[1]) > seg(lines[3]));
}

#[test]
fn bench_reports_both_modes() {
    let out = bevkit(&["bench", "--grid", "100x100x4"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("naive3d") && text.contains("s2c2d"), "{text}");
}
