use std::path::Path;
use std::process::{Command, Output};

fn actsc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_actsc"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = actsc(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn full_pipeline_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--problems", "150", "--direction", "alternating", "--out-dataset", "d.bin", "--out-sim", "sim.jsonl"]);
    assert!(ok(d, &["validate", "--dataset", "d.bin"]).contains("150 records"));
    let dsn = ok(d, &["dsn-identify", "--dataset", "d.bin", "--margin", "0.5", "--mode", "abs", "--out", "dsn.json"]);
    assert!(dsn.contains("8 of 64"), "{dsn}");
    ok(d, &["probe-train", "--dataset", "d.bin", "--dsn", "dsn.json", "--out", "probe.json"]);
    let eval = ok(d, &["probe-eval", "--probe", "probe.json", "--dataset", "d.bin", "--logits-out", "logits.csv"]);
    assert!(eval.contains("accuracy"));
    ok(d, &["calibrate-tau", "--probe", "probe.json", "--dataset", "d.bin", "--out", "tau.json"]);
    ok(
        d,
        &[
            "run", "--policy", "actsc", "--dataset", "d.bin", "--probe", "probe.json", "--tau-file", "tau.json",
            "--sim-spec", "sim.jsonl", "--trace-out", "actsc.jsonl", "--conf-scope", "window",
        ],
    );
    let traces = std::fs::read_to_string(d.join("actsc.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 150);
    let table = ok(
        d,
        &["compare", "--policies", "sc,esc,actsc", "--dataset", "d.bin", "--probe", "probe.json", "--tau", "0.5", "--sim-spec", "sim.jsonl"],
    );
    assert!(table.contains("| SC ") && table.contains("| ESC ") && table.contains("| ACTSC "), "{table}");
    ok(
        d,
        &["compare", "--policies", "sc,dsc", "--dataset", "d.bin", "--sim-spec", "sim.jsonl", "--report-format", "csv", "--report-out", "r.csv"],
    );
    assert_eq!(std::fs::read_to_string(d.join("r.csv")).unwrap().lines().count(), 3);
}

#[test]
fn failures_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = actsc(d, &["validate", "--dataset", "missing.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.jsonl"));

    ok(d, &["synth", "--problems", "20", "--out-dataset", "d.jsonl", "--out-sim", "sim.jsonl"]);
    // ACTSC without a probe.
    let out = actsc(d, &["run", "--policy", "actsc", "--dataset", "d.jsonl", "--sim-spec", "sim.jsonl", "--tau", "0.5"]);
    assert!(!out.status.success());
    // Replay pool that runs dry.
    std::fs::write(
        d.join("pool.jsonl"),
        std::fs::read_to_string(d.join("d.jsonl"))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                format!(
                    "{{\"problem_id\":{},\"gold_answer\":{},\"samples\":[{{\"answer\":\"1\",\"input_tokens\":1,\"output_tokens\":1}}]}}\n",
                    v["problem_id"], v["gold_answer"]
                )
            })
            .collect::<String>(),
    )
    .unwrap();
    let out = actsc(d, &["run", "--policy", "sc", "--sampler", "replay", "--dataset", "d.jsonl", "--pool", "pool.jsonl"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("exhausted"), "{}", String::from_utf8_lossy(&out.stderr));
    let out = actsc(d, &["run", "--policy", "sc", "--dataset", "d.jsonl", "--sim-spec", "sim.jsonl", "--k-max", "0"]);
    assert!(!out.status.success());
}
