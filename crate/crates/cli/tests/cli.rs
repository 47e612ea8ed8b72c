use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use qnoise_cli::output::sha256_hex;

const CHAR_CHECK: &str = "kind = char-check
seed = 11
[triplet]
beta = 0.2
alpha = 0.5
atoms = 1.5:0.4
[check]
t = 0.5
[mc]
n_paths = 4000
";

fn qnoise(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qnoise")).args(args).output().expect("binary runs")
}

fn run_config(dir: &Path, text: &str, extra: &[&str]) -> Output {
    let config = dir.join("run.conf");
    fs::write(&config, text).unwrap();
    let out = dir.join("out");
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    qnoise(&args)
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/manifest.json")).unwrap()).unwrap()
}

#[test]
fn passing_run_writes_a_hashed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), CHAR_CHECK, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("char-check pass"));
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 11);
    assert_eq!(m["verdict"], "pass");
    let files = m["files"].as_array().unwrap();
    assert!(files.len() >= 3);
    for f in files {
        let bytes = fs::read(dir.path().join("out").join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), sha256_hex(&bytes));
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_config(a.path(), CHAR_CHECK, &["--threads", "1"]).status.code(), Some(0));
    assert_eq!(run_config(b.path(), CHAR_CHECK, &["--threads", "4"]).status.code(), Some(0));
    let (ma, mb) = (manifest(a.path()), manifest(b.path()));
    assert_eq!(ma["files"], mb["files"]);
    assert_eq!(ma["config_hash"], mb["config_hash"]);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), CHAR_CHECK, &["--seed", "99"]).status.code(), Some(0));
    let m = manifest(dir.path());
    assert_eq!(m["seed"], 99);
    let config = fs::read_to_string(dir.path().join("out/config.txt")).unwrap();
    assert!(config.contains("seed = 99"));
}

#[test]
fn format_flag_selects_files() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_config(dir.path(), CHAR_CHECK, &["--format", "json"]).status.code(), Some(0));
    let names: Vec<String> = manifest(dir.path())["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap().to_string())
        .collect();
    assert!(names.iter().all(|n| !n.ends_with(".csv")), "{names:?}");
    assert!(names.iter().any(|n| n.ends_with(".json")));
}

#[test]
fn failed_expectation_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let text = "kind = feller-classify\nseed = 1\n[drift]\nkind = zero\n[feller]\nexpect_l = non-absorbing\n";
    let out = run_config(dir.path(), text, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(manifest(dir.path())["verdict"], "fail");
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing_seed = CHAR_CHECK.replace("seed = 11\n", "");
    let out = run_config(dir.path(), &missing_seed, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));

    let unknown = CHAR_CHECK.replace("[check]\n", "[check]\ncolour = blue\n");
    let out = run_config(dir.path(), &unknown, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let negative = CHAR_CHECK.replace("alpha = 0.5", "alpha = -1");
    let out = run_config(dir.path(), &negative, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha >= 0"));
    assert!(!dir.path().join("out/manifest.json").exists());
}

#[test]
fn subcommand_must_match_the_kind() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.conf");
    fs::write(&config, CHAR_CHECK).unwrap();
    let out = qnoise(&["dyson", "--config", config.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = qnoise(&["char-check", "--config", config.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn progress_goes_to_stderr_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_config(dir.path(), CHAR_CHECK, &[]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(!stdout.contains("[qnoise]"));
    assert_eq!(stdout.lines().count(), 2);
}

#[test]
fn sample_configs_parse() {
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in fs::read_dir(configs).unwrap() {
        let path = entry.unwrap().path();
        let text = fs::read_to_string(&path).unwrap();
        qnoise_cli::parse_config(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        n += 1;
    }
    assert_eq!(n, 11);
}
