use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use hamroc_core::autoencoder::MlpAutoencoder;
use hamroc_core::io::{read_json, Table};
use hamroc_core::msd::MassSpringNetwork;

fn hamroc(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hamroc"))
        .env("HAMROC_WORKSPACE", ws)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(ws: &Path, args: &[&str]) -> serde_json::Value {
    let out = hamroc(ws, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn error_of(out: &Output) -> (i32, serde_json::Value) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let v = serde_json::from_str(stderr.lines().last().unwrap_or("")).expect("stderr carries an error object");
    (out.status.code().unwrap(), v)
}

/// Short runs so the whole chain finishes in seconds.
const QUICK: &str = r#"
[generator]
n_base_cells = 3

[simulation]
duration = 1.0
sample_dt = 0.02

[dataset.simulation]
duration = 1.0
sample_dt = 0.02

[dataset.protocol]
n_test = 3

[training]
latent_dim = 2

[training.hyper]
epochs = 60

[control]
n_tasks = 2
duration = 0.5

[control.options]
saturation = 20.0

[eval]
n_trajectories = 2
latent_sizes = [1, 2]
noise_seeds = [0, 1]
latent_bases = 2
"#;

fn quick_workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), QUICK).unwrap();
    dir
}

fn pipeline(ws: &Path) {
    let c = ["--config", "run.toml"];
    let with = |rest: &[&str]| -> Vec<String> { c.iter().chain(rest).map(|s| s.to_string()).collect() };
    let run = |rest: &[&str]| {
        let args = with(rest);
        ok(ws, &args.iter().map(String::as_str).collect::<Vec<_>>())
    };
    run(&["generate", "-o", "net.json"]);
    run(&["simulate", "-n", "net.json", "-o", "sim/traj.csv", "--theta", "-1.2"]);
    run(&["make-dataset", "-n", "net.json", "-o", "data"]);
    run(&["train", "-d", "data", "-o", "model/ae.json"]);
    run(&["rom-sim", "-n", "net.json", "-m", "model/ae.json", "-o", "rom/rec.csv"]);
    run(&["control", "-n", "net.json", "-m", "model/ae.json", "-d", "data", "-o", "control"]);
    run(&["eval", "-n", "net.json", "-m", "model/ae.json", "-d", "data", "-o", "eval"]);
    run(&["sweep", "-d", "data", "-o", "sweep", "--kind", "sizes"]);
    run(&["sweep", "-d", "data", "-o", "sweep", "--kind", "sigmas", "-m", "model/ae.json"]);
    run(&["sweep", "-d", "data", "-o", "sweep", "--kind", "fractions", "-m", "model/ae.json"]);
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generate_is_reproducible() {
    let ws = tempfile::tempdir().unwrap();
    let a = ok(ws.path(), &["generate", "-o", "a.json"]);
    let b = ok(ws.path(), &["generate", "-o", "b.json"]);
    assert_eq!(a["result"]["sha256"], b["result"]["sha256"]);
    assert_eq!(
        std::fs::read(ws.path().join("a.json")).unwrap(),
        std::fs::read(ws.path().join("b.json")).unwrap()
    );
    assert_eq!(a["seeds"]["generator"], 0);
    assert_eq!(a["config_hash"].as_str().unwrap().len(), 64);
    let c = ok(ws.path(), &["generate", "-o", "c.json", "--seed", "3"]);
    assert_ne!(a["result"]["sha256"], c["result"]["sha256"]);
    assert_ne!(a["config_hash"], c["config_hash"]);
    let sidecar: serde_json::Value = read_json(&ws.path().join("c.json.run.json")).unwrap();
    assert_eq!(sidecar["seeds"]["generator"], 3);
}

#[test]
fn rom_sim_with_identity_model_matches_simulate() {
    let ws = tempfile::tempdir().unwrap();
    ok(ws.path(), &["generate", "-o", "net.json", "--cells", "3"]);
    let net: MassSpringNetwork = read_json(&ws.path().join("net.json")).unwrap();
    MlpAutoencoder::identity(net.dof()).unwrap().save(&ws.path().join("id.json"), None, None).unwrap();
    let flags = ["--duration", "1", "--g", "7.5", "--theta", "-2.0", "--init-seed", "4"];
    let mut a = vec!["simulate", "-n", "net.json", "-o", "full.csv"];
    a.extend(flags);
    ok(ws.path(), &a);
    let mut b = vec!["rom-sim", "-n", "net.json", "-m", "id.json", "-o", "rom.csv"];
    b.extend(flags);
    ok(ws.path(), &b);
    let full = Table::read(&ws.path().join("full.csv")).unwrap();
    let rom = Table::read(&ws.path().join("rom.csv")).unwrap();
    assert!(ws.path().join("rom_latent.csv").exists());
    assert_eq!(full.rows.len(), rom.rows.len());
    let mut worst = 0.0f64;
    for name in &full.header {
        let (x, y) = (full.column(name).unwrap(), rom.column(name).unwrap());
        for (a, b) in x.iter().zip(&y) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst <= 1e-6, "max deviation {worst:e}");
}

#[test]
fn pipeline_reruns_are_byte_identical() {
    let (a, b) = (quick_workspace(), quick_workspace());
    pipeline(a.path());
    pipeline(b.path());
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    assert!(fa.len() > 30, "only {} files", fa.len());
    assert_eq!(fa.len(), fb.len());
    for ((pa, ba), (pb, bb)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        assert!(ba == bb, "{} differs between reruns", pa.display());
    }
    for expected in [
        "data/train.csv",
        "data/sims/sim_000.csv",
        "model/ae_history.csv",
        "rom/rec_latent.csv",
        "control/control_000.csv",
        "control/summary.json",
        "eval/desk_pointwise_q.csv",
        "eval/desk_compressed_energy.csv",
        "eval/desk_compressed_summary.json",
        "sweep/sizes.csv",
        "sweep/sigmas.csv",
        "sweep/fractions.json",
    ] {
        assert!(a.path().join(expected).exists(), "{expected} missing");
    }
}

#[test]
fn unknown_config_key_is_rejected() {
    let ws = tempfile::tempdir().unwrap();
    std::fs::write(ws.path().join("bad.toml"), "[generator]\nn_cells = 4\n").unwrap();
    let out = hamroc(ws.path(), &["--config", "bad.toml", "generate", "-o", "n.json"]);
    let (code, err) = error_of(&out);
    assert_eq!(code, 3);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("n_cells"));
    std::fs::write(ws.path().join("bad.toml"), "[surprise]\n").unwrap();
    let (code, _) = error_of(&hamroc(ws.path(), &["--config", "bad.toml", "generate", "-o", "n.json"]));
    assert_eq!(code, 3);
}

#[test]
fn errors_map_to_distinct_exit_codes() {
    let ws = tempfile::tempdir().unwrap();
    let (code, err) = error_of(&hamroc(ws.path(), &["simulate", "-n", "nope.json", "-o", "t.csv"]));
    assert_eq!((code, err["error"].as_str().unwrap()), (4, "missing_file"));

    std::fs::write(ws.path().join("garbage.json"), "{\"nodes\": 3}").unwrap();
    let (code, _) = error_of(&hamroc(ws.path(), &["simulate", "-n", "garbage.json", "-o", "t.csv"]));
    assert_eq!(code, 3);

    ok(ws.path(), &["generate", "-o", "net.json", "--cells", "2"]);
    let (code, err) = error_of(&hamroc(ws.path(), &["simulate", "-n", "net.json", "-o", "t.csv", "--g", "-1"]));
    assert_eq!((code, err["error"].as_str().unwrap()), (3, "config"));

    MlpAutoencoder::identity(3).unwrap().save(&ws.path().join("wrong.json"), None, None).unwrap();
    let (code, _) = error_of(&hamroc(ws.path(), &["rom-sim", "-n", "net.json", "-m", "wrong.json", "-o", "r.csv"]));
    assert_eq!(code, 3);

    let out = hamroc(ws.path(), &["simulate"]);
    assert_eq!(out.status.code(), Some(2));

    let help = hamroc(ws.path(), &["--help"]);
    let text = String::from_utf8(help.stdout).unwrap();
    for needle in ["Exit codes", "HAMROC_WORKSPACE", "make-dataset", "rom-sim", "sweep"] {
        assert!(text.contains(needle), "--help lacks {needle}");
    }
}

#[test]
fn workspace_flag_and_env_resolve_relative_paths() {
    let ws = tempfile::tempdir().unwrap();
    let other = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hamroc"))
        .env("HAMROC_WORKSPACE", other.path())
        .args(["--workspace", ws.path().to_str().unwrap(), "generate", "-o", "x/net.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(ws.path().join("x/net.json").exists());
    assert!(!other.path().join("x/net.json").exists());
}

#[test]
fn show_config_round_trips() {
    let ws = quick_workspace();
    let out = hamroc(ws.path(), &["--config", "run.toml", "show-config"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let toml_part: String = text.lines().filter(|l| !l.starts_with('{')).collect::<Vec<_>>().join("\n");
    std::fs::write(ws.path().join("full.toml"), toml_part).unwrap();
    let a = ok(ws.path(), &["--config", "run.toml", "generate", "-o", "a.json"]);
    let b = ok(ws.path(), &["--config", "full.toml", "generate", "-o", "b.json"]);
    assert_eq!(a["config_hash"], b["config_hash"]);
}

#[test]
fn full_pipeline_on_twelve_nodes_under_five_minutes() {
    let ws = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let p = ws.path();
    let gen = ok(p, &["generate", "-o", "net.json", "--cells", "4"]);
    assert_eq!(gen["result"]["nodes"], 12);
    ok(p, &["make-dataset", "-n", "net.json", "-o", "data"]);
    let train = ok(p, &["train", "-d", "data", "-o", "ae.json"]);
    assert!(train["result"]["final_valid"].as_f64().unwrap().is_finite());
    ok(p, &["rom-sim", "-n", "net.json", "-m", "ae.json", "-o", "rom.csv"]);
    let control = ok(p, &["control", "-n", "net.json", "-m", "ae.json", "-d", "data", "-o", "control", "--tasks", "3"]);
    assert_eq!(control["result"]["tasks"], 3);
    let tasks: Vec<serde_json::Value> = read_json(&p.join("control/tasks.json")).unwrap();
    assert_eq!(tasks.len(), 3);
    for t in &tasks {
        let status = t["status"].as_str().unwrap();
        assert!(status == "ok" || t["error"].is_string(), "{t}");
    }
    let eval = ok(p, &["eval", "-n", "net.json", "-m", "ae.json", "-d", "data", "-o", "eval"]);
    assert!(eval["result"]["compressed"]["median_mse_q"].as_f64().unwrap() >= 0.0);
    ok(p, &["sweep", "-d", "data", "-o", "sweep", "--kind", "sigmas", "-m", "ae.json"]);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "pipeline took {secs:.0} s");
}

#[test]
fn shipped_default_config_matches_builtin_defaults() {
    let ws = tempfile::tempdir().unwrap();
    let shipped = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml");
    let a = ok(ws.path(), &["show-config"]);
    let b = ok(ws.path(), &["--config", shipped.to_str().unwrap(), "show-config"]);
    assert_eq!(a["config_hash"], b["config_hash"]);
}
