use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use simltd_core::evaluation::EvalReport;
use simltd_core::pipeline::RunManifest;
use simltd_core::CheckpointF32;

const TINY: &str = "\
[data.synth]
num_images = 120
num_val = 30
unlabeled_count = 40

[model]
widths = [4, 6, 8, 8, 12]

[stage1]
iterations = 6
batch_size = 2

[stage2]
iterations = 4
batch_size = 2

[stage3]
iterations = 4
batch_size = 2
k = 5
";

fn simltd(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_simltd"));
    cmd.args(args).env("RUST_LOG", "warn").env_remove("SIMLTD_OUT");
    if let Some(p) = out_env {
        cmd.env("SIMLTD_OUT", p);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
        Workspace { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn arg(&self, rel: &str) -> String {
        self.path(rel).display().to_string()
    }

    /// The single run directory created under `root`.
    fn only_run(&self, root: &str) -> PathBuf {
        let runs: Vec<PathBuf> = fs::read_dir(self.path(root)).unwrap().map(|e| e.unwrap().path()).collect();
        assert_eq!(runs.len(), 1, "{runs:?}");
        runs[0].clone()
    }
}

fn is_run_dir_name(name: &str) -> bool {
    // YYYYMMDDTHHMMSSZ-<12 hex digits>
    let b = name.as_bytes();
    b.len() >= 29
        && b[..8].iter().all(u8::is_ascii_digit)
        && b[8] == b'T'
        && b[9..15].iter().all(u8::is_ascii_digit)
        && b[15] == b'Z'
        && b[16] == b'-'
        && b[17..29].iter().all(|c| c.is_ascii_hexdigit())
}

#[test]
fn partition_of_lvis_shaped_fixture() {
    let ws = Workspace::new();
    let o = simltd(&["synth", "--config", &ws.arg("tiny.toml"), "--out", &ws.arg("s"), "--lvis-fixture"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fixture = ws.only_run("s").join("lvis_fixture.json");
    let o = simltd(&["partition", "--dataset", &fixture.display().to_string(), "--m", "10", "--out", &ws.arg("p")], None);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("M = 10: head 866 classes, tail 337 classes, total 1203"), "{}", stdout(&o));
}

#[test]
fn validation_errors_exit_one() {
    let ws = Workspace::new();
    let out = ws.arg("o");
    assert_eq!(code(&simltd(&["partition", "--bogus"], None)), 1);
    assert_eq!(code(&simltd(&["run-all", "--k", "many", "--out", &out], None)), 1);
    assert_eq!(code(&simltd(&["stats", "--config", &ws.arg("missing.toml"), "--out", &out], None)), 1);
    fs::write(ws.path("bad.toml"), "[stage1]\nbogus = 3\n").unwrap();
    let o = simltd(&["stats", "--config", &ws.arg("bad.toml"), "--out", &out], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("stage1.bogus"));
    assert_eq!(code(&simltd(&["run-all", "--tau", "0", "--out", &out], None)), 1);
    assert_eq!(code(&simltd(&["plot", "--kind", "transfer", &ws.arg("nowhere")], None)), 1);
    assert_eq!(code(&simltd(&["--help"], None)), 0);
}

#[test]
fn runtime_failures_exit_two() {
    let ws = Workspace::new();
    // output root is a regular file, so the run directory cannot be created
    fs::write(ws.path("blocker"), "").unwrap();
    let o = simltd(&["partition", "--config", &ws.arg("tiny.toml"), "--out", &ws.arg("blocker")], None);
    assert_eq!(code(&o), 2);
}

#[test]
fn output_root_from_environment_and_verbatim_config() {
    let ws = Workspace::new();
    let o = simltd(&["stats", "--config", &ws.arg("tiny.toml")], Some(&ws.path("env_root")));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = ws.only_run("env_root");
    assert!(is_run_dir_name(run.file_name().unwrap().to_str().unwrap()), "{run:?}");
    assert_eq!(fs::read_to_string(run.join("config.toml")).unwrap(), TINY);
    assert!(run.join("config.resolved.toml").exists());
    assert!(run.join("stats.json").exists());
}

#[test]
fn run_all_then_eval_fuse_and_plot() {
    let ws = Workspace::new();
    let cfg = ws.arg("tiny.toml");
    let o = simltd(&["run-all", "--config", &cfg, "--seed", "1", "--out", &ws.arg("r")], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let run = ws.only_run("r");
    let manifest = RunManifest::load(run.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, 1);

    let ckpt = run.join("stage3.ckpt.json").display().to_string();
    let o = simltd(&["eval", "--config", &cfg, "--seed", "1", "--checkpoint", &ckpt, "--out", &ws.arg("e")], None);
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(ws.only_run("e").join("report.json")).unwrap();
    assert_eq!(EvalReport::from_json(&text).unwrap(), manifest.report.unwrap());

    let (head, tail) = (run.join("stage1.ckpt.json"), run.join("stage2.ckpt.json"));
    let fused_path = ws.path("fused.json");
    let o = simltd(
        &["fuse", "--head", head.to_str().unwrap(), "--tail", tail.to_str().unwrap(), "--out", fused_path.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&o), 0);
    let ours = CheckpointF32::load(&fused_path).unwrap();
    let pipeline = CheckpointF32::load(run.join("fused.ckpt.json")).unwrap();
    assert_eq!(ours.digest(), pipeline.digest());

    let o = simltd(&["plot", "--kind", "transfer", "--out", &ws.arg("plots"), run.to_str().unwrap()], None);
    assert_eq!(code(&o), 0);
    let svg = PathBuf::from(stdout(&o).trim());
    assert!(svg.ends_with("transfer.svg") && svg.exists());
}
