use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[run]
problem = eit
seed = 4
[mesh]
refinement = 2
[mcmc]
burn_in = 100
samples = 100
[train]
epochs = 2
channels = 4
[data]
count = 30
[paths]
dataset = work/ds.bin
model = work/model.bin
";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcmcnet"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn mcmcnet")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "mcmcnet {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.ini"), config).unwrap();
    dir
}

#[test]
fn unknown_key_is_named() {
    let dir = workspace(&format!("{SMALL}[mcmc]\nburnin = 5\n"));
    let out = run(dir.path(), &["--config", "run.ini", "mesh"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mcmc.burnin"));
}

#[test]
fn missing_dataset_is_reported() {
    let dir = workspace(SMALL);
    let out = run(dir.path(), &["--config", "run.ini", "train"]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("work/ds.bin") && err.contains("datagen"), "{err}");
}

#[test]
fn compare_writes_a_row_per_backend_and_is_repeatable() {
    let dir = workspace(SMALL);
    let d = dir.path();
    ok(d, &["--config", "run.ini", "datagen"]);
    ok(d, &["--config", "run.ini", "train"]);
    ok(d, &["--config", "run.ini", "--out", "a", "compare"]);
    ok(d, &["--config", "run.ini", "--out", "b", "compare"]);

    let metrics = fs::read_to_string(d.join("a/metrics.csv")).unwrap();
    let rows: Vec<&str> = metrics.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("fem,") && rows[1].starts_with("net,"));

    for file in ["fields/fem_mean.csv", "fields/net_mean.csv", "chain/fem/samples.bin", "observation.csv"] {
        assert_eq!(
            fs::read(d.join("a").join(file)).unwrap(),
            fs::read(d.join("b").join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
    let manifest = fs::read_to_string(d.join("a/manifest.txt")).unwrap();
    assert!(manifest.contains("command = compare"));
    assert!(manifest.contains("config_sha256"));
}
