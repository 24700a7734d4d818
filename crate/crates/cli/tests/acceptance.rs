//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use bevkit::checks::{self, CheckOutcome, CheckSizes};

const SEED: u64 = 20_240_601;

struct Row {
    outcome: CheckOutcome,
    elapsed: Duration,
    limit: Option<Duration>,
}

impl Row {
    fn passed(&self) -> bool {
        self.outcome.passed && self.limit.is_none_or(|l| self.elapsed < l)
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> CheckOutcome) -> Row {
    let start = Instant::now();
    let outcome = f();
    Row {
        outcome,
        elapsed: start.elapsed(),
        limit,
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).expect("readable artifact dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&path).expect("readable artifact"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

fn determinism() -> CheckOutcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let bin = env!("CARGO_BIN_EXE_bevkit");
    let mut statuses = Vec::new();
    for (run, threads) in [("a", None), ("b", Some("1"))] {
        let mut cmd = Command::new(bin);
        cmd.args(["selftest", "--out"]).arg(tmp.path().join(run));
        match threads {
            Some(t) => cmd.env("BEVKIT_THREADS", t),
            None => cmd.env_remove("BEVKIT_THREADS"),
        };
        let out = cmd.output().expect("bevkit runs");
        statuses.push(out.status.success());
    }
    let a = snapshot(&tmp.path().join("a"));
    let b = snapshot(&tmp.path().join("b"));
    let differing: Vec<&String> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect();
    let bytes: usize = a.values().map(Vec::len).sum();
    CheckOutcome {
        id: 12,
        name: "determinism",
        passed: statuses.iter().all(|&s| s) && differing.is_empty() && !a.is_empty(),
        detail: format!(
            "two selftest runs (default threads, BEVKIT_THREADS=1): exit ok {statuses:?}, {} files / {bytes} bytes, {} differing",
            a.len(),
            differing.len()
        ),
    }
}

fn main() -> ExitCode {
    let s = CheckSizes::full();
    let secs = Duration::from_secs;
    let rows = vec![
        timed(Some(secs(1)), || checks::projection_round_trip(s.projection_points, s.projection_cameras, SEED)),
        timed(Some(secs(10)), || checks::unprojection_oracle(s.unproject_scenes, SEED + 1)),
        timed(None, || checks::uniform_ray(s.rays, SEED + 2)),
        timed(None, || checks::s2c_bijection(s.s2c_grids, SEED + 3)),
        timed(None, || checks::centerness(s.centerness_pairs, SEED + 4)),
        timed(None, || checks::rotated_iou(s.iou_pairs, s.iou_samples_side, SEED + 5)),
        timed(None, || checks::nms(s.nms_sets, s.nms_set_size, SEED + 6)),
        timed(None, || checks::assignment(s.assign_instances, s.rescale_trials, SEED + 7)),
        timed(None, || checks::losses(s.loss_inputs, SEED + 8)),
        timed(Some(secs(120)), || checks::noise(s.sweep_scenes, s.sweep_base_seed)),
        timed(None, checks::cost_model),
        timed(None, determinism),
    ];
    for row in &rows {
        let o = &row.outcome;
        let limit = row.limit.map_or(String::new(), |l| format!(" (limit {} s)", l.as_secs()));
        println!(
            "criterion {:>2} {}  {:<26} {:>7.2} s{limit}  {}",
            o.id,
            if row.passed() { "PASS" } else { "FAIL" },
            o.name,
            row.elapsed.as_secs_f64(),
            o.detail
        );
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    println!("acceptance: {} passed, {failed} failed", rows.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
