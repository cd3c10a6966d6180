use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"
[training]
latent_dim = 2

[training.sindy]
threshold = 0.2

[training.library]
poly_degree = 1
include_sin_states = false
include_sin_velocities = false
"#;

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_symrom"))
            .current_dir(self.dir.path())
            .env_remove("SYMROM_OUT")
            .env("RUST_LOG", "error")
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_writes_model_and_manifest() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--out", "data"]);
    assert!(ws.path("data/manifest.toml").exists());
    assert!(ws.path("data/ground_truth.json").exists());

    ws.ok(&["train", "--dataset", "data", "--out", "train"]);
    let model: serde_json::Value = serde_json::from_slice(&read(&ws.path("train/model.json"))).unwrap();
    assert!(model.is_object());
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&ws.path("train/run_manifest.json"))).unwrap();
    assert_eq!(manifest["command"], "train");
    assert!(!manifest["inputs"].as_array().unwrap().is_empty());
    assert!(manifest["timings"]["total"].as_f64().unwrap() >= 0.0);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert!(outputs
        .iter()
        .any(|a| a["path"].as_str().unwrap().ends_with("model.json") && a["sha256"].as_str().unwrap().len() == 64));
}

#[test]
fn eval_and_baseline_write_reports() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--out", "data"]);
    ws.ok(&["train", "--dataset", "data", "--out", "train"]);
    ws.ok(&[
        "eval",
        "--dataset",
        "data",
        "--model",
        "train/model.json",
        "--reset-interval",
        "50",
        "--out",
        "eval",
    ]);
    let metrics = String::from_utf8(read(&ws.path("eval/metrics.csv"))).unwrap();
    assert!(metrics.starts_with("jump,mode,mean_rmse"));
    assert!(metrics.lines().any(|l| l.contains(",reset,")));
    assert!(ws.path("eval/rollouts").read_dir().unwrap().count() > 0);

    ws.ok(&["baseline", "--dataset", "data", "--model", "train/model.json", "--out", "base"]);
    let table = String::from_utf8(read(&ws.path("base/comparison.csv"))).unwrap();
    assert!(table.starts_with("model,base_x,base_y,base_z"));
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn eval_rejects_model_missing_a_scheduled_phase() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--out", "two"]);
    ws.ok(&["gen", "--preset", "froggy", "--out", "frog"]);
    ws.ok(&["train", "--dataset", "two", "--out", "train"]);

    let out = ws.run(&["eval", "--dataset", "frog", "--model", "train/model.json", "--out", "eval"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[E_MISSING_PHASE]"), "{stderr}");
    assert!(stderr.contains("PartialContact"), "{stderr}");
}

#[test]
fn scan_writes_one_row_per_cell() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--out", "data"]);
    ws.ok(&[
        "scan",
        "--dataset",
        "data",
        "--l-values",
        "2,4,6",
        "--seeds",
        "0,1",
        "--parallel",
        "--out",
        "scan",
    ]);
    let csv = String::from_utf8(read(&ws.path("scan/selection.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6, "{csv}");
    assert!(ws.path("scan/selection_summary.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::new();
    ws.ok(&["gen", "--out", "data"]);
    for tag in ["a", "b"] {
        ws.ok(&["train", "--dataset", "data", "--seed", "3", "--out", &format!("train_{tag}")]);
        ws.ok(&[
            "scan",
            "--dataset",
            "data",
            "--l-values",
            "1,2",
            "--seeds",
            "0",
            "--parallel",
            "--out",
            &format!("scan_{tag}"),
        ]);
    }
    assert_eq!(read(&ws.path("train_a/model.json")), read(&ws.path("train_b/model.json")));
    assert_eq!(read(&ws.path("scan_a/selection.csv")), read(&ws.path("scan_b/selection.csv")));
}

#[test]
fn errors_carry_a_code() {
    let ws = Workspace::new();
    let out = ws.run(&["train", "--dataset", "nowhere", "--out", "train"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[E_IO]"), "{stderr}");
    assert!(stderr.contains("nowhere"), "{stderr}");

    let out = ws.run(&["eval", "--dataset", "nowhere"]);
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error[E_USAGE]"));

    std::fs::write(ws.path("bad.toml"), "[training]\nlatent_dim = \"two\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_symrom"))
        .current_dir(ws.dir.path())
        .args(["--config", "bad.toml", "train", "--dataset", "data"])
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.starts_with("error[E_CONFIG]"), "{stderr}");
    assert!(stderr.contains("byte"), "{stderr}");
}
