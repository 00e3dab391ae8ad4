use std::path::Path;
use std::process::{Command, Output};

use rfac_cli::{exit, RunManifest, OUTPUT_DIR_ENV};

const SANITY: &str = "master_seed = 3\ndim = 1\nthetas = [0.0, 0.5]\nns = [8]\nreps = 4\n";

fn rfac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rfac"))
        .args(args)
        .env_remove(OUTPUT_DIR_ENV)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    let text = format!("output_dir = {:?}\n{body}", dir.join("out").display().to_string());
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_the_shipped_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.toml");
    std::fs::write(&path, rfac_cli::DEFAULT_CONFIG).unwrap();
    let o = rfac(&["validate", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::PASS), "{}", stderr(&o));
}

#[test]
fn validate_rejects_a_bad_config_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "master_seed = 1\ndim = 1\nthetas = [0.5]\nns = [16, 8]\nreps = 4\n");
    let o = rfac(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    assert!(stderr(&o).contains("ns"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "master_seed = 1\ndim = 1\nthetas = [0.5]\nns = [8]\nreps = \"many\"\n");
    let o = rfac(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(exit::CONFIG));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(rfac(&["run", "--kind", "nonsense", "--config", "x.toml"]).status.code(), Some(exit::CONFIG));
    assert_eq!(rfac(&["frobnicate"]).status.code(), Some(exit::CONFIG));
}

#[test]
fn zero_workers_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SANITY);
    let o = rfac(&["run", "--kind", "sanity", "--config", &cfg, "--workers", "0"]);
    assert_eq!(o.status.code(), Some(exit::CONFIG), "{}", stderr(&o));
}

#[test]
fn sanity_run_writes_the_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SANITY);
    let o = rfac(&["run", "--kind", "sanity", "--config", &cfg, "--seed", "11"]);
    assert_eq!(o.status.code(), Some(exit::PASS), "{}", stderr(&o));
    let run = dir.path().join("out/sanity");
    for f in ["manifest.json", "report.txt", "aggregate.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let m = RunManifest::load(&run.join("manifest.json")).unwrap();
    assert_eq!(m.master_seed, 11);
    assert!(m.passed());
    assert!(m.csv_paths(&run).iter().all(|p| p.is_file()));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("PASS [hard]")));
    assert!(!stdout.contains("FAIL [hard]"));
}

#[test]
fn output_dir_env_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SANITY);
    let elsewhere = dir.path().join("elsewhere");
    let o = Command::new(env!("CARGO_BIN_EXE_rfac"))
        .args(["run", "--kind", "sanity", "--config", &cfg])
        .env(OUTPUT_DIR_ENV, &elsewhere)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(exit::PASS), "{}", stderr(&o));
    assert!(elsewhere.join("sanity/manifest.json").is_file());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn plots_emit_scripts_and_refuse_empty_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SANITY);
    assert_eq!(rfac(&["run", "--kind", "sanity", "--config", &cfg]).status.code(), Some(0));
    let run = dir.path().join("out/sanity");
    let manifest = run.join("manifest.json");

    let o = rfac(&["plots", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::PASS), "{}", stderr(&o));
    assert!(run.join("plots/gap_trend.py").is_file());

    // a manifest that lists nothing
    let mut value: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    value["cells"] = serde_json::json!([]);
    value["aggregate_csv"] = serde_json::Value::Null;
    value["tables"] = serde_json::json!([]);
    let empty_dir = dir.path().join("empty");
    std::fs::create_dir_all(&empty_dir).unwrap();
    let empty = empty_dir.join("manifest.json");
    std::fs::write(&empty, serde_json::to_vec(&value).unwrap()).unwrap();
    let o = rfac(&["plots", "--manifest", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::RUNTIME));
    assert!(stderr(&o).contains("no result CSVs"), "{}", stderr(&o));
    assert!(!empty_dir.join("plots").exists());

    // a manifest whose CSVs were deleted
    std::fs::remove_file(run.join("aggregate.csv")).unwrap();
    std::fs::remove_dir_all(run.join("plots")).unwrap();
    let o = rfac(&["plots", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(exit::RUNTIME));
    assert!(stderr(&o).contains("aggregate.csv"), "{}", stderr(&o));
    assert!(!run.join("plots").exists());
}

#[test]
fn a_rerun_replaces_the_stale_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SANITY);
    let run = dir.path().join("out/sanity");
    std::fs::create_dir_all(&run).unwrap();
    std::fs::write(run.join("manifest.json"), "stale").unwrap();
    let o = rfac(&["run", "--kind", "sanity", "--config", &cfg, "--workers", "2"]);
    assert_eq!(o.status.code(), Some(exit::PASS), "{}", stderr(&o));
    RunManifest::load(&run.join("manifest.json")).unwrap();
}

#[test]
fn every_shipped_config_validates() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = rfac(&["validate", "--config", path.to_str().unwrap()]);
            assert_eq!(o.status.code(), Some(exit::PASS), "{}: {}", path.display(), stderr(&o));
            seen += 1;
        }
    }
    assert!(seen >= 7);
}
