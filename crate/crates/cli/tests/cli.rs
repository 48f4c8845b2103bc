use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use brwre_cli::{parse_config, ExperimentId, Overrides};

const BINARY: &str = r#"
[[states]]
kind = "finite_table"
atoms = [{ prob = 1, displacements = [1, -1] }]
"#;

const POISSON_FOUR: &str = r#"
[[states]]
kind = "poisson_gaussian"
lambda = 4
mu = 0
s = 1
"#;

fn run(dir: &Path, subcommand: &str, config: &str, extra: &[&str]) -> Output {
    let path = dir.join("config.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_brwre"))
        .arg(subcommand)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn outputs(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir.join("out"))
        .map(|it| it.filter_map(Result::ok).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

fn summary(dir: &Path) -> toml::Table {
    let name = outputs(dir).into_iter().find(|n| n.ends_with(".summary.toml")).expect("summary written");
    toml::from_str(&fs::read_to_string(dir.join("out").join(name)).unwrap()).unwrap()
}

#[test]
fn deterministic_martingale_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("seed = 3\n{BINARY}\n[params]\nn_max = 5\nreplicates = 10\n");
    let out = run(dir.path(), "martingale", &config, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let files = outputs(dir.path());
    assert_eq!(files.len(), 2);
    assert!(files[0].starts_with("martingale-") && files[0].ends_with(".csv"));
    let s = summary(dir.path());
    assert_eq!(s["verdict"].as_str(), Some("pass"));
    assert_eq!(s["exit_code"].as_integer(), Some(0));
    let csv = fs::read_to_string(dir.path().join("out").join(&files[0])).unwrap();
    assert!(csv.starts_with("n,t,mean_W,se,deviation,pass\n"));
}

#[test]
fn biased_normalization_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("seed = 3\n{BINARY}\n[params]\nn_max = 5\nreplicates = 10\np_scale = 1.1\n");
    let out = run(dir.path(), "martingale", &config, &[]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(summary(dir.path())["verdict"].as_str(), Some("fail"));
}

#[test]
fn population_cap_exits_four_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("seed = 3\n{POISSON_FOUR}\n[params]\nn_max = 8\nreplicates = 10\ncap = 10\n");
    let out = run(dir.path(), "martingale", &config, &[]);
    assert_eq!(out.status.code(), Some(4));
    let s = summary(dir.path());
    assert_eq!(s["verdict"].as_str(), Some("error"));
    assert_eq!(s["experiment"].as_str(), Some("martingale"));
    assert!(s["error"].as_str().unwrap().contains("cap"));
    assert_eq!(outputs(dir.path()).len(), 1);
}

#[test]
fn invalid_config_exits_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = "seed = 3\nbogus = 1\n[[states]]\nkind = \"poisson_gaussian\"\nlambda = -1\nmu = 0\ns = 1\n";
    let out = run(dir.path(), "rates", config, &[]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus") && stderr.contains("states[0].lambda"), "{stderr}");
    assert!(outputs(dir.path()).is_empty());
}

#[test]
fn refused_preconditions_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("seed = 3\n{POISSON_FOUR}\n[params]\nr = 2.0\n");
    let out = run(dir.path(), "u-check", &config, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("refused"));
    assert!(outputs(dir.path()).is_empty());
}

#[test]
fn mismatched_experiment_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("experiment = \"rates\"\nseed = 3\n{BINARY}");
    assert_eq!(run(dir.path(), "martingale", &config, &[]).status.code(), Some(1));
}

#[test]
fn describe_round_trips_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("{POISSON_FOUR}\n[params]\nn_max = 4\n");
    let out = run(dir.path(), "lp-rate", &config, &["--describe", "--seed", "99"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(outputs(dir.path()).is_empty());
    let text = String::from_utf8(out.stdout).unwrap();
    let direct = parse_config(
        &config,
        &Overrides { experiment: ExperimentId::parse("lp-rate"), seed: Some(99), out: None },
    )
    .unwrap();
    let reparsed = parse_config(&text, &Overrides::default()).unwrap();
    assert_eq!(reparsed.canonical(), direct.canonical());
    assert_eq!(reparsed.hash(), direct.hash());
    assert_eq!(reparsed.uint("replicates"), 10_000);
}

#[test]
fn seed_flag_overrides_and_rehashes() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!("seed = 3\n{BINARY}\n[params]\nn_max = 4\nreplicates = 5\n");
    run(dir.path(), "simulate", &config, &[]);
    run(dir.path(), "simulate", &config, &["--seed", "4"]);
    let files = outputs(dir.path());
    assert_eq!(files.len(), 4);
    let seeds: Vec<String> = files
        .iter()
        .filter(|n| n.ends_with(".summary.toml"))
        .map(|n| {
            let t: toml::Table = toml::from_str(&fs::read_to_string(dir.path().join("out").join(n)).unwrap()).unwrap();
            t["seed"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(seeds.len(), 2);
    assert!(seeds.contains(&"3".to_string()) && seeds.contains(&"4".to_string()));
}

#[test]
fn missing_seed_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "rates", BINARY, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}
