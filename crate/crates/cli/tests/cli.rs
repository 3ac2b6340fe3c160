//! Black-box checks of the command-line contract: exit codes, the JSON
//! error channel, command composition, and drift protection for the
//! committed fixture panel.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scm"))
        .args(args)
        .output()
        .expect("failed to launch the scm binary")
}

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn stderr_error(output: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&output.stderr);
    serde_json::from_str(stderr.trim())
        .unwrap_or_else(|e| panic!("stderr is not a JSON error ({e}): {stderr}"))
}

#[test]
fn unreadable_config_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let output = scm(&[
        "fit",
        "--config",
        "/no/such/config.toml",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    let error = stderr_error(&output);
    assert_eq!(error["error"]["kind"], "invalid-spec");
    assert!(error["error"]["message"]
        .as_str()
        .unwrap()
        .contains("/no/such/config.toml"));
}

#[test]
fn malformed_toml_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("broken.toml");
    fs::write(&config, "[data\nschools = ").unwrap();
    let out = tmp.path().join("out");
    let output = scm(&[
        "fit",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert_eq!(stderr_error(&output)["error"]["kind"], "invalid-spec");
}

#[test]
fn unknown_outcome_key_is_a_domain_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let fixtures = workspace_root().join("fixtures");
    let config = tmp.path().join("bad_outcome.toml");
    fs::write(
        &config,
        format!(
            r#"
[data]
schools = "{schools}"
attributes = "{attributes}"
outcomes = ["sorcery"]

[study]
treated = "S001"
treatment_year = 2014

[estimator]
name = "abadie_nocov"

[output]
dir = "out"
"#,
            schools = fixtures.join("schools.csv").display(),
            attributes = fixtures.join("attributes.csv").display(),
        ),
    )
    .unwrap();
    let out = tmp.path().join("out");
    let output = scm(&[
        "fit",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let error = stderr_error(&output);
    assert_eq!(error["error"]["kind"], "unknown-outcome");
    assert!(error["error"]["message"]
        .as_str()
        .unwrap()
        .contains("sorcery"));
}

#[test]
fn missing_output_directory_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("no_output.toml");
    fs::write(
        &config,
        "[study]\ntreated = \"S001\"\ntreatment_year = 2014\n",
    )
    .unwrap();
    let output = scm(&["fit", "--config", config.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let error = stderr_error(&output);
    assert!(error["error"]["message"]
        .as_str()
        .unwrap()
        .contains("--out"));
}

#[test]
fn simulate_then_fit_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let sim_dir = tmp.path().join("sim");
    let dgp = tmp.path().join("dgp.toml");
    fs::write(
        &dgp,
        r#"
[simulate]
n_units = 8
start_year = 2004
end_year = 2012
n_factors = 2
loading_scale = 5.0
noise_sd = 2.0
treated_id = "S001"
seed = 31

[[simulate.outcomes]]
key = "score"
base_level = 55.0
unit_sd = 6.0

[simulate.effect]
2009 = 20.0
2010 = 20.0
2011 = 20.0
2012 = 20.0
"#,
    )
    .unwrap();
    let output = scm(&[
        "simulate",
        "--config",
        dgp.to_str().unwrap(),
        "--out",
        sim_dir.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(sim_dir.join("schools.csv").is_file());
    assert!(sim_dir.join("truth.json").is_file());

    let study = tmp.path().join("study.toml");
    fs::write(
        &study,
        r#"
[data]
schools = "sim/schools.csv"
outcomes = ["score"]

[study]
treated = "S001"
treatment_year = 2009

[estimator]
name = "abadie_nocov"

[output]
dir = "fit_out"
"#,
    )
    .unwrap();
    // No --out: the [output] section places results relative to the config.
    let output = scm(&["fit", "--config", study.to_str().unwrap()]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );
    let fit_dir = tmp.path().join("fit_out");
    for name in [
        "fit_score.json",
        "weights_score.csv",
        "effects_score.json",
        "manifest.json",
    ] {
        assert!(fit_dir.join(name).is_file(), "{name} missing");
    }
}

#[test]
fn committed_fixture_regenerates_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    let config = workspace_root().join("configs/fixture_dgp.toml");
    let out = tmp.path().join("regen");
    let output = scm(&[
        "simulate",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(
        output.status.success(),
        "{}",
        String::from_utf8_lossy(&output.stderr)
    );

    let committed = workspace_root().join("fixtures");
    for name in [
        "schools.csv",
        "attributes.csv",
        "income.csv",
        "truth.json",
        "manifest.json",
    ] {
        let fresh = fs::read(out.join(name)).unwrap();
        let kept = fs::read(committed.join(name))
            .unwrap_or_else(|e| panic!("committed fixture {name} unreadable: {e}"));
        assert_eq!(fresh, kept, "{name} drifted from the committed fixture");
    }
}
