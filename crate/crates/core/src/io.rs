//! File formats.
//!
//! - Rig: JSON `{"cameras": [{fx, fy, cx, cy, width, height, rotation: [9 row-major], translation: [3]}]}`.
//! - Tensors (feature images, voxel grids, BEV grids, anchor predictions): the
//!   4-byte magic `BEVT`, a little-endian `u32` header length, a JSON header
//!   `{kind, dims, dtype: "float32", order: "row-major", meta}`, then the
//!   `f32` little-endian payload. Voxel grids append their `u32` hit counts.
//! - Boxes: CSV rows `class_id,score,x,y,z,w,l,h,theta,vx,vy` with a header line.
//! - Assignments: CSV rows `anchor_index,label,gt_index`, label `pos|neg|ign`,
//!   `gt_index` is -1 unless positive.
//! - Plots: binary PGM heatmaps and CSV tables.
//! - Scene bundle: a directory with `scene.json`, `rig.json`, `gt_boxes.csv`,
//!   `map.bin` and `features/camNN.bin`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::assign::{AnchorLabel, AnchorPrediction, AssignmentResult};
use crate::boxes::Box3D;
use crate::camera::{Camera, CameraRig, Extrinsics, Intrinsics};
use crate::error::{BevError, Result};
use crate::metrics::EvalResult;
use crate::pipeline::SweepRow;
use crate::scene::SyntheticScene;
use crate::voxel::{BevGrid, FeatureImage, VoxelGrid, VoxelGridSpec};

const MAGIC: &[u8; 4] = b"BEVT";

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => BevError::NotFound(path.to_path_buf()),
        _ => BevError::Io(e),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CameraEntry {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    rotation: [f64; 9],
    translation: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RigFile {
    cameras: Vec<CameraEntry>,
}

pub fn rig_to_json(rig: &CameraRig) -> Result<String> {
    let cameras = rig
        .cameras()
        .iter()
        .map(|c| {
            let r = &c.extrinsics.rotation;
            CameraEntry {
                fx: c.intrinsics.fx,
                fy: c.intrinsics.fy,
                cx: c.intrinsics.cx,
                cy: c.intrinsics.cy,
                width: c.intrinsics.width,
                height: c.intrinsics.height,
                rotation: std::array::from_fn(|i| r[(i / 3, i % 3)]),
                translation: [c.extrinsics.translation.x, c.extrinsics.translation.y, c.extrinsics.translation.z],
            }
        })
        .collect();
    Ok(serde_json::to_string_pretty(&RigFile { cameras })?)
}

/// Parses and validates a rig; failures name the offending camera index.
pub fn rig_from_json(text: &str) -> Result<CameraRig> {
    let file: RigFile = serde_json::from_str(text).map_err(|e| BevError::Format(format!("rig: {e}")))?;
    let cameras = file
        .cameras
        .into_iter()
        .map(|c| Camera {
            intrinsics: Intrinsics {
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                width: c.width,
                height: c.height,
            },
            extrinsics: Extrinsics {
                rotation: Matrix3::from_row_slice(&c.rotation),
                translation: Vector3::from(c.translation),
            },
        })
        .collect();
    CameraRig::new(cameras)
}

pub fn save_rig(path: &Path, rig: &CameraRig) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(rig_to_json(rig)?.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_rig(path: &Path) -> Result<CameraRig> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text)?;
    rig_from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpecJson {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub voxel_size: [f64; 3],
    pub origin: [f64; 3],
}

impl From<&VoxelGridSpec> for GridSpecJson {
    fn from(s: &VoxelGridSpec) -> Self {
        Self {
            nx: s.nx,
            ny: s.ny,
            nz: s.nz,
            voxel_size: s.voxel_size,
            origin: s.origin,
        }
    }
}

impl GridSpecJson {
    pub fn to_spec(&self) -> Result<VoxelGridSpec> {
        VoxelGridSpec::new(self.nx, self.ny, self.nz, self.voxel_size, self.origin)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub kind: String,
    pub dims: Vec<usize>,
    pub dtype: String,
    pub order: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl TensorHeader {
    pub fn new(kind: &str, dims: Vec<usize>, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            dims,
            dtype: "float32".into(),
            order: "row-major".into(),
            meta,
        }
    }

    fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Raw tensor file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub header: TensorHeader,
    pub data: Vec<f32>,
    pub counts: Option<Vec<u32>>,
}

pub fn write_tensor(path: &Path, header: &TensorHeader, data: &[f32], counts: Option<&[u32]>) -> Result<()> {
    if header.numel() != data.len() {
        return Err(BevError::ShapeMismatch(format!(
            "header dims {:?} vs {} values",
            header.dims,
            data.len()
        )));
    }
    let json = serde_json::to_vec(header)?;
    let mut w = create(path)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    if let Some(c) = counts {
        for v in c {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    BufReader::new(open(path)?).read_to_end(&mut bytes)?;
    let bad = |msg: &str| BevError::Format(format!("{}: {msg}", path.display()));
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(bad("missing BEVT magic"));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = bytes.get(8..8 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: TensorHeader = serde_json::from_slice(body).map_err(|e| bad(&format!("header: {e}")))?;
    if header.dtype != "float32" || header.order != "row-major" {
        return Err(bad("only row-major float32 tensors are supported"));
    }
    let payload = &bytes[8 + hlen..];
    let n = header.numel();
    if payload.len() < 4 * n {
        return Err(bad("truncated payload"));
    }
    let data: Vec<f32> = payload[..4 * n]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let rest = &payload[4 * n..];
    let counts = if rest.is_empty() {
        None
    } else if rest.len() % 4 == 0 {
        Some(rest.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect())
    } else {
        return Err(bad("trailing bytes"));
    };
    Ok(Tensor { header, data, counts })
}

fn expect_kind(t: &Tensor, kind: &str, rank: usize) -> Result<()> {
    if t.header.kind != kind || t.header.dims.len() != rank {
        return Err(BevError::Format(format!(
            "expected a rank-{rank} `{kind}` tensor, found rank-{} `{}`",
            t.header.dims.len(),
            t.header.kind
        )));
    }
    Ok(())
}

pub fn save_feature_image(path: &Path, f: &FeatureImage) -> Result<()> {
    let header = TensorHeader::new(
        "feature_image",
        vec![f.height, f.width, f.channels],
        serde_json::json!({ "camera_index": f.camera_index }),
    );
    write_tensor(path, &header, &f.data, None)
}

pub fn load_feature_image(path: &Path) -> Result<FeatureImage> {
    let t = read_tensor(path)?;
    expect_kind(&t, "feature_image", 3)?;
    let camera_index = t.header.meta["camera_index"].as_u64().unwrap_or(0) as usize;
    let d = &t.header.dims;
    FeatureImage::new(camera_index, d[0], d[1], d[2], t.data)
}

pub fn save_voxel_grid(path: &Path, v: &VoxelGrid) -> Result<()> {
    let s = &v.spec;
    let header = TensorHeader::new(
        "voxel_grid",
        vec![s.nx, s.ny, s.nz, v.channels],
        serde_json::json!({ "grid": GridSpecJson::from(s) }),
    );
    write_tensor(path, &header, &v.data, Some(&v.hit_count))
}

pub fn load_voxel_grid(path: &Path) -> Result<VoxelGrid> {
    let t = read_tensor(path)?;
    expect_kind(&t, "voxel_grid", 4)?;
    let grid: GridSpecJson = serde_json::from_value(t.header.meta["grid"].clone())?;
    let spec = grid.to_spec()?;
    let d = &t.header.dims;
    if [spec.nx, spec.ny, spec.nz] != [d[0], d[1], d[2]] {
        return Err(BevError::Format("voxel grid dims disagree with its grid spec".into()));
    }
    let hit_count = t.counts.unwrap_or_else(|| vec![0; spec.num_voxels()]);
    if hit_count.len() != spec.num_voxels() {
        return Err(BevError::Format("voxel hit count length".into()));
    }
    Ok(VoxelGrid {
        spec,
        channels: d[3],
        data: t.data,
        hit_count,
    })
}

pub fn save_bev_grid(path: &Path, b: &BevGrid) -> Result<()> {
    let header = TensorHeader::new("bev_grid", vec![b.nx, b.ny, b.channels], serde_json::Value::Null);
    write_tensor(path, &header, &b.data, None)
}

pub fn load_bev_grid(path: &Path) -> Result<BevGrid> {
    let t = read_tensor(path)?;
    expect_kind(&t, "bev_grid", 3)?;
    let d = &t.header.dims;
    BevGrid::from_data(d[0], d[1], d[2], t.data)
}

/// Row layout: class scores, then `x, y, z, w, l, h, theta, vx, vy`.
pub fn save_predictions(path: &Path, p: &AnchorPrediction) -> Result<()> {
    let width = p.num_classes + 9;
    let mut data = Vec::with_capacity(p.len() * width);
    for (a, b) in p.loc_boxes.iter().enumerate() {
        data.extend(p.cls_scores[a * p.num_classes..(a + 1) * p.num_classes].iter().map(|&v| v as f32));
        data.extend([b.x, b.y, b.z, b.w, b.l, b.h, b.theta, b.vx, b.vy].map(|v| v as f32));
    }
    let header = TensorHeader::new(
        "anchor_predictions",
        vec![p.len(), width],
        serde_json::json!({ "num_classes": p.num_classes }),
    );
    write_tensor(path, &header, &data, None)
}

pub fn load_predictions(path: &Path) -> Result<AnchorPrediction> {
    let t = read_tensor(path)?;
    expect_kind(&t, "anchor_predictions", 2)?;
    let (n, width) = (t.header.dims[0], t.header.dims[1]);
    if width < 10 {
        return Err(BevError::Format("prediction rows need at least one class and 9 box values".into()));
    }
    let k = width - 9;
    let mut scores = Vec::with_capacity(n * k);
    let mut boxes = Vec::with_capacity(n);
    for row in t.data.chunks_exact(width) {
        scores.extend(row[..k].iter().map(|&v| v as f64));
        let r: Vec<f64> = row[k..].iter().map(|&v| v as f64).collect();
        boxes.push(Box3D::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6]).with_velocity(r[7], r[8]));
    }
    AnchorPrediction::new(k, scores, boxes)
}

#[derive(Debug, Serialize, Deserialize)]
struct BoxRow {
    class_id: u32,
    score: f64,
    x: f64,
    y: f64,
    z: f64,
    w: f64,
    l: f64,
    h: f64,
    theta: f64,
    vx: f64,
    vy: f64,
}

pub fn write_boxes_csv<W: Write>(out: W, boxes: &[Box3D]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for b in boxes {
        w.serialize(BoxRow {
            class_id: b.class_id,
            score: b.score,
            x: b.x,
            y: b.y,
            z: b.z,
            w: b.w,
            l: b.l,
            h: b.h,
            theta: b.theta,
            vx: b.vx,
            vy: b.vy,
        })?;
    }
    if boxes.is_empty() {
        w.write_record(["class_id", "score", "x", "y", "z", "w", "l", "h", "theta", "vx", "vy"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_boxes_csv<R: Read>(input: R) -> Result<Vec<Box3D>> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<BoxRow>().enumerate() {
        let row = row?;
        let b = Box3D::new(row.x, row.y, row.z, row.w, row.l, row.h, row.theta)
            .with_class(row.class_id)
            .with_score(row.score)
            .with_velocity(row.vx, row.vy);
        if !b.is_valid() {
            return Err(BevError::Format(format!("box row {i}: non-finite value or non-positive size")));
        }
        out.push(b);
    }
    Ok(out)
}

pub fn save_boxes(path: &Path, boxes: &[Box3D]) -> Result<()> {
    write_boxes_csv(create(path)?, boxes)
}

pub fn load_boxes(path: &Path) -> Result<Vec<Box3D>> {
    read_boxes_csv(BufReader::new(open(path)?))
}

pub fn write_assignment_csv<W: Write>(out: W, result: &AssignmentResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["anchor_index", "label", "gt_index"])?;
    for (a, label) in result.labels(result.num_anchors()).iter().enumerate() {
        let (tag, gt) = match label {
            AnchorLabel::Positive(g) => ("pos", *g as i64),
            AnchorLabel::Negative => ("neg", -1),
            AnchorLabel::Ignored => ("ign", -1),
        };
        w.write_record([a.to_string(), tag.to_string(), gt.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    seed: u64,
    num_classes: usize,
    num_cameras: usize,
    grid: GridSpecJson,
}

fn feature_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("features").join(format!("cam{i:02}.bin"))
}

pub fn save_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    fs::create_dir_all(dir.join("features"))?;
    let meta = SceneMeta {
        seed: scene.seed,
        num_classes: scene.num_classes,
        num_cameras: scene.rig.len(),
        grid: GridSpecJson::from(&scene.grid),
    };
    let mut w = create(&dir.join("scene.json"))?;
    serde_json::to_writer_pretty(&mut w, &meta)?;
    w.write_all(b"\n")?;
    w.flush()?;
    save_rig(&dir.join("rig.json"), &scene.rig)?;
    save_boxes(&dir.join("gt_boxes.csv"), &scene.gt_boxes)?;
    save_bev_grid(&dir.join("map.bin"), &scene.map_mask)?;
    for (i, f) in scene.feature_images.iter().enumerate() {
        save_feature_image(&feature_path(dir, i), f)?;
    }
    Ok(())
}

/// Feature images in `dir`, sorted by file name.
pub fn load_feature_dir(dir: &Path) -> Result<Vec<FeatureImage>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => BevError::NotFound(dir.to_path_buf()),
            _ => BevError::Io(e),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_feature_image(p)).collect()
}

pub fn load_scene(dir: &Path) -> Result<SyntheticScene> {
    let mut text = String::new();
    open(&dir.join("scene.json"))?.read_to_string(&mut text)?;
    let meta: SceneMeta = serde_json::from_str(&text).map_err(|e| BevError::Format(format!("scene.json: {e}")))?;
    let grid = meta.grid.to_spec()?;
    let rig = load_rig(&dir.join("rig.json"))?;
    let gt_boxes = load_boxes(&dir.join("gt_boxes.csv"))?;
    let map_mask = load_bev_grid(&dir.join("map.bin"))?;
    if map_mask.nx != grid.nx || map_mask.ny != grid.ny {
        return Err(BevError::ShapeMismatch("map mask does not match the scene grid".into()));
    }
    let feature_images = (0..meta.num_cameras)
        .map(|i| load_feature_image(&feature_path(dir, i)))
        .collect::<Result<Vec<_>>>()?;
    if feature_images.len() != rig.len() {
        return Err(BevError::ShapeMismatch("feature count differs from camera count".into()));
    }
    Ok(SyntheticScene {
        seed: meta.seed,
        grid,
        rig,
        gt_boxes,
        map_mask,
        feature_images,
        num_classes: meta.num_classes,
    })
}

/// Writes one channel of a BEV grid as a binary 8-bit PGM (P5). Row `i` of
/// the image is `ix = i`, column `j` is `iy = j`; values map linearly from
/// `[lo, hi]` to `[0, 255]` with clamping.
pub fn write_pgm<W: Write>(mut out: W, grid: &BevGrid, channel: usize, lo: f32, hi: f32) -> Result<()> {
    if channel >= grid.channels {
        return Err(BevError::ShapeMismatch(format!(
            "channel {channel} of a {}-channel grid",
            grid.channels
        )));
    }
    if !(hi > lo) {
        return Err(BevError::InvalidArgument(format!("empty intensity range [{lo}, {hi}]")));
    }
    write!(out, "P5\n{} {}\n255\n", grid.ny, grid.nx)?;
    let mut pixels = Vec::with_capacity(grid.nx * grid.ny);
    for ix in 0..grid.nx {
        for iy in 0..grid.ny {
            let t = ((grid.get(ix, iy, channel) - lo) / (hi - lo)).clamp(0.0, 1.0);
            pixels.push((t * 255.0).round() as u8);
        }
    }
    out.write_all(&pixels)?;
    out.flush()?;
    Ok(())
}

pub fn save_pgm(path: &Path, grid: &BevGrid, channel: usize, lo: f32, hi: f32) -> Result<()> {
    write_pgm(create(path)?, grid, channel, lo, hi)
}

/// Noise sweep rows as `sigma,seg_iou,map`; header only when empty.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["sigma", "seg_iou", "map"])?;
    for r in rows {
        w.write_record([r.sigma.to_string(), format!("{:.6}", r.seg_iou), format!("{:.6}", r.map)])?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluation as long-format CSV rows `metric,class,threshold,value`.
pub fn write_eval_csv<W: Write>(out: W, eval: &EvalResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["metric", "class", "threshold", "value"])?;
    for (c, iou) in eval.seg_iou_per_class.iter().enumerate() {
        w.write_record(["seg_iou".to_string(), c.to_string(), String::new(), format!("{iou:.6}")])?;
    }
    for (row, class) in eval.ap_per_class_per_threshold.iter().zip(&eval.classes) {
        for (ap, t) in row.iter().zip(&eval.thresholds) {
            w.write_record(["ap".to_string(), class.to_string(), t.to_string(), format!("{ap:.6}")])?;
        }
    }
    w.write_record(["map".to_string(), String::new(), String::new(), format!("{:.6}", eval.map)])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("bevkit-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn rig_round_trip_and_validation() {
        let k = Intrinsics::new(100.0, 100.0, 50.0, 40.0, 100, 80).unwrap();
        let e = Extrinsics::looking_at_yaw(Vector3::new(1.0, 0.0, 1.5), 0.3, 0.05);
        let rig = CameraRig::new(vec![Camera { intrinsics: k, extrinsics: e }; 2]).unwrap();
        let back = rig_from_json(&rig_to_json(&rig).unwrap()).unwrap();
        assert_eq!(back, rig);

        let bad = r#"{"cameras":[
            {"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2,"rotation":[1,0,0,0,1,0,0,0,1],"translation":[0,0,0]},
            {"fx":1,"fy":1,"cx":0,"cy":0,"width":2,"height":2,"rotation":[2,0,0,0,1,0,0,0,1],"translation":[0,0,0]}]}"#;
        let err = rig_from_json(bad).unwrap_err();
        assert!(matches!(err, BevError::InvalidCamera { index: 1, .. }), "{err}");
        assert!(matches!(rig_from_json("{"), Err(BevError::Format(_))));
    }

    #[test]
    fn boxes_csv_round_trip() {
        let boxes = vec![
            Box3D::new(1.0, 2.0, 0.5, 1.9, 4.6, 1.7, 0.25).with_class(2).with_score(0.7).with_velocity(1.0, -0.5),
            Box3D::new(-3.25, 0.0, 0.5, 0.6, 0.7, 1.8, -3.0),
        ];
        let mut buf = Vec::new();
        write_boxes_csv(&mut buf, &boxes).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("class_id,score,x,y,z,w,l,h,theta,vx,vy\n"));
        assert_eq!(read_boxes_csv(&buf[..]).unwrap(), boxes);

        let mut empty = Vec::new();
        write_boxes_csv(&mut empty, &[]).unwrap();
        assert!(read_boxes_csv(&empty[..]).unwrap().is_empty());
        let bad = "class_id,score,x,y,z,w,l,h,theta,vx,vy\n0,1,0,0,0,-1,1,1,0,0,0\n";
        assert!(read_boxes_csv(bad.as_bytes()).is_err());
    }

    #[test]
    fn tensors_round_trip() {
        let d = tmp("tensor");
        let f = FeatureImage::new(3, 2, 3, 2, (0..12).map(|v| v as f32 * 0.5).collect()).unwrap();
        save_feature_image(&d.join("f.bin"), &f).unwrap();
        assert_eq!(load_feature_image(&d.join("f.bin")).unwrap(), f);

        let spec = VoxelGridSpec::new(2, 1, 2, [0.5; 3], [0.0; 3]).unwrap();
        let mut v = VoxelGrid::zeros(spec, 2);
        v.data.iter_mut().enumerate().for_each(|(i, x)| *x = i as f32);
        v.hit_count = vec![0, 1, 2, 3];
        save_voxel_grid(&d.join("v.bin"), &v).unwrap();
        assert_eq!(load_voxel_grid(&d.join("v.bin")).unwrap(), v);

        assert!(matches!(load_bev_grid(&d.join("v.bin")), Err(BevError::Format(_))));
        assert!(matches!(load_bev_grid(&d.join("missing.bin")), Err(BevError::NotFound(_))));
        fs::write(d.join("junk.bin"), b"nope").unwrap();
        assert!(matches!(read_tensor(&d.join("junk.bin")), Err(BevError::Format(_))));
    }

    #[test]
    fn pgm_and_csv_outputs() {
        let c = crate::voxel::bev_centerness(5, 7, (2.0, 3.0)).unwrap();
        let mut buf = Vec::new();
        write_pgm(&mut buf, &c, 0, 1.0, 2.0).unwrap();
        let header = b"P5\n7 5\n255\n";
        assert_eq!(&buf[..header.len()], header);
        let px = &buf[header.len()..];
        assert_eq!(px.len(), 35);
        let (min_at, _) = px.iter().enumerate().min_by_key(|(_, v)| **v).unwrap();
        assert_eq!(min_at, 2 * 7 + 3);
        assert_eq!(px[0], 255);
        assert_eq!(*px.iter().max().unwrap(), 255);

        let mut mask = BevGrid::zeros(4, 4, 1);
        for (x, y) in [(0, 0), (1, 2), (3, 3)] {
            mask.set(x, y, 0, 1.0);
        }
        let mut buf = Vec::new();
        write_pgm(&mut buf, &mask, 0, 0.0, 1.0).unwrap();
        assert_eq!(buf.iter().skip(11).filter(|&&v| v == 255).count(), 3);
        assert!(write_pgm(Vec::new(), &mask, 1, 0.0, 1.0).is_err());

        let mut empty = Vec::new();
        write_sweep_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), "sigma,seg_iou,map\n");
    }

    #[test]
    fn predictions_round_trip() {
        let d = tmp("preds");
        let boxes = vec![Box3D::new(0.5, 1.0, 0.0, 1.0, 2.0, 1.0, 0.5); 2];
        let p = AnchorPrediction::new(2, vec![0.25, 0.5, 0.75, 1.0], boxes).unwrap();
        save_predictions(&d.join("p.bin"), &p).unwrap();
        assert_eq!(load_predictions(&d.join("p.bin")).unwrap(), p);
    }
}
