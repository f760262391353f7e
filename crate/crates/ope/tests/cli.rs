//! End-to-end runs of the `ope` binary: every subcommand, the documented
//! file formats, and the exit-code contract (0 success, 2 validation
//! error, 3 numerical failure).

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ope")
}

fn envs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../envs")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn expect_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn expect_code(args: &[&str], code: i32) -> Output {
    let out = run(args);
    assert_eq!(
        out.status.code(),
        Some(code),
        "command {:?}:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn full_workflow_over_files() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let env = envs_dir().join("two_context_ab.json");
    let env = env.to_string_lossy();

    // simulate
    let log = path("log.csv");
    expect_ok(&[
        "simulate", "--env", &env, "--t", "4000", "--b", "2", "--seed", "7", "--out", &log,
    ]);
    let header = std::fs::read_to_string(&log).unwrap();
    assert!(header.starts_with(
        "round,batch,action,reward,x_0,p_real_0,p_real_1,p_true_0,p_true_1"
    ));

    // determinism: same seed, same bytes
    let log2 = path("log2.csv");
    expect_ok(&[
        "simulate", "--env", &env, "--t", "4000", "--b", "2", "--seed", "7", "--out", &log2,
    ]);
    assert_eq!(
        std::fs::read(&log).unwrap(),
        std::fs::read(&log2).unwrap()
    );

    // fit-propensity
    let model = path("model.json");
    expect_ok(&[
        "fit-propensity", "--log", &log, "--family", "sieve-logit", "--basis", "onehot",
        "--clip", "0.01", "--out", &model,
    ]);
    let model_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&model).unwrap()).unwrap();
    assert_eq!(model_json["family"], "sieve-logit");
    assert!(model_json["coefficients"].is_array());

    // fit-reward
    let mu = path("mu.json");
    expect_ok(&[
        "fit-reward", "--log", &log, "--basis", "onehot", "--lambda", "1.0", "--link",
        "logistic", "--out", &mu,
    ]);

    // a policy file
    let policy = path("policy.json");
    std::fs::write(
        &policy,
        r#"{"kind":"table","entries":[
            {"features":[0.0],"weights":[0.0,1.0]},
            {"features":[1.0],"weights":[1.0,0.0]}]}"#,
    )
    .unwrap();

    // estimate with the fitted score
    let est = path("est.json");
    expect_ok(&[
        "estimate", "--log", &log, "--policy", &policy, "--score",
        &format!("estimated:{model}"), "--self-normalized", "--out", &est,
    ]);
    let est_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&est).unwrap()).unwrap();
    assert_eq!(est_json["kind"], "hat_sn");
    assert!(est_json["T"].as_u64().unwrap() == 4000);
    let value = est_json["value"].as_f64().unwrap();
    assert!((value - 0.7).abs() < 0.1, "value = {value}");

    // variance + CI
    let report = path("report.json");
    expect_ok(&[
        "variance", "--log", &log, "--est", &est, "--mu", &mu, "--policy", &policy,
        "--model", &model, "--level", "0.95", "--out", &report,
    ]);
    let rep: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["estimator_kind"], "hat_sn");
    let lo = rep["ci"][0].as_f64().unwrap();
    let hi = rep["ci"][1].as_f64().unwrap();
    assert!(lo < value && value < hi);

    // estimate with the true score
    let est_true = path("est_true.json");
    expect_ok(&[
        "estimate", "--log", &log, "--policy", &policy, "--score", "true", "--out", &est_true,
    ]);
    let report_true = path("report_true.json");
    expect_ok(&[
        "variance", "--log", &log, "--est", &est_true, "--mu", &mu, "--policy", &policy,
        "--level", "0.95", "--out", &report_true,
    ]);

    // realized-score estimate
    let est_real = path("est_real.json");
    expect_ok(&[
        "estimate", "--log", &log, "--policy", &policy, "--score", "realized", "--out",
        &est_real,
    ]);
}

#[test]
fn monte_carlo_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let config = path("exp.json");
    std::fs::write(
        &config,
        format!(
            r#"{{
                "env": "{}",
                "policy": {{"kind": "fixed", "weights": [0.0, 1.0]}},
                "t": 300, "b": 1, "replications": 6, "seed": 5,
                "estimators": ["hat", "tilde"],
                "propensity": {{"family": "sieve-ls"}},
                "reward": {{"link": "logistic"}}
            }}"#,
            envs_dir().join("uniform_ab.json").display()
        ),
    )
    .unwrap();

    let summary = path("summary.json");
    expect_ok(&[
        "monte-carlo", "--config", &config, "--workers", "2", "--out", &summary,
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(parsed["replications"], 6);
    assert_eq!(parsed["oracle"]["true_value"], 0.6);

    let out = expect_ok(&["report", "--summary", &summary, "--format", "md"]);
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("| target-policy | hat |"));
    assert!(text.contains("shrinkage"));

    expect_ok(&["report", "--summary", &summary, "--format", "csv"]);
    expect_ok(&["report", "--summary", &summary, "--format", "json"]);
}

#[test]
fn import_family_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let env = envs_dir().join("uniform_ab.json");
    let log = path("log.csv");
    expect_ok(&[
        "simulate", "--env", &env.to_string_lossy(), "--t", "50", "--b", "1", "--seed", "3",
        "--out", &log,
    ]);

    // external scores aligned by round
    let scores = path("scores.csv");
    let mut text = String::from("round,p_0,p_1\n");
    for i in 1..=50 {
        text.push_str(&format!("{i},0.45,0.55\n"));
    }
    std::fs::write(&scores, text).unwrap();

    let model = path("import.json");
    expect_ok(&[
        "fit-propensity", "--log", &log, "--family", "import", "--import", &scores, "--clip",
        "0.0", "--out", &model,
    ]);

    let policy = path("policy.json");
    std::fs::write(&policy, r#"{"kind":"fixed","weights":[0.0,1.0]}"#).unwrap();
    let est = path("est.json");
    expect_ok(&[
        "estimate", "--log", &log, "--policy", &policy, "--score",
        &format!("estimated:{model}"), "--out", &est,
    ]);

    // misaligned import: too few rows -> numerical failure (exit 3)
    let short = path("short.csv");
    std::fs::write(&short, "round,p_0,p_1\n1,0.5,0.5\n").unwrap();
    expect_code(
        &[
            "fit-propensity", "--log", &log, "--family", "import", "--import", &short,
            "--clip", "0.0", "--out", &path("bad.json"),
        ],
        3,
    );
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    // validation error: malformed log (bad propensity sum)
    let bad_log = path("bad.csv");
    std::fs::write(
        &bad_log,
        "round,batch,action,reward,x_0,p_real_0,p_real_1,p_true_0,p_true_1\n\
         1,1,1,1.0,0.0,0.6,0.6,0.5,0.5\n",
    )
    .unwrap();
    let policy = path("policy.json");
    std::fs::write(&policy, r#"{"kind":"fixed","weights":[0.0,1.0]}"#).unwrap();
    let out = expect_code(
        &[
            "estimate", "--log", &bad_log, "--policy", &policy, "--score", "true", "--out",
            &path("est.json"),
        ],
        2,
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("propensity sum"));

    // validation error: self-normalization with signed weights
    let env = envs_dir().join("uniform_ab.json");
    let log = path("log.csv");
    expect_ok(&[
        "simulate", "--env", &env.to_string_lossy(), "--t", "20", "--b", "1", "--seed", "1",
        "--out", &log,
    ]);
    let ate = path("ate.json");
    std::fs::write(&ate, r#"{"kind":"fixed","weights":[-1.0,1.0]}"#).unwrap();
    expect_code(
        &[
            "estimate", "--log", &log, "--policy", &ate, "--score", "true",
            "--self-normalized", "--out", &path("x.json"),
        ],
        2,
    );

    // numerical failure: separated logit (one action never logged)
    let pure = path("pure.csv");
    let mut text = String::from("round,batch,action,reward,x_0\n");
    for i in 1..=10 {
        text.push_str(&format!("{i},1,1,1.0,0.0\n"));
    }
    std::fs::write(&pure, text).unwrap();
    expect_code(
        &[
            "fit-propensity", "--log", &pure, "--family", "sieve-logit", "--basis",
            "intercept", "--out", &path("m.json"),
        ],
        3,
    );

    // missing file -> validation error
    expect_code(
        &[
            "estimate", "--log", &path("nope.csv"), "--policy", &policy, "--score", "true",
            "--out", &path("y.json"),
        ],
        2,
    );
}
