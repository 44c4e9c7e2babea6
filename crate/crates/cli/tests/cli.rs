use std::path::Path;
use std::process::{Command, Output};

fn treelcm(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_treelcm"));
    cmd.args(args).env_remove("TREELCM_THREADS");
    if let Some(t) = threads {
        cmd.env("TREELCM_THREADS", t);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = treelcm(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> (i32, String) {
    let out = treelcm(args, None);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const PARAMS: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/parameters/diet_like.json");

fn toy_data(dir: &Path) -> (String, String) {
    let data = dir.join("toy.csv");
    let mut text = String::from("id,a,b,c,d,e,f\n");
    for i in 0..10 {
        let row: Vec<&str> = (0..6).map(|j| if (i + j) % 3 == 0 { "1" } else { "0" }).collect();
        text.push_str(&format!("r{i},{}\n", row.join(",")));
    }
    std::fs::write(&data, text).unwrap();
    let grouping = dir.join("grouping.json");
    std::fs::write(
        &grouping,
        r#"{"schema_version": 1, "groups": [{"name": "G1", "items": [1, 2, 3]}, {"name": "G2", "items": [4, 5, 6]}]}"#,
    )
    .unwrap();
    (s(&data), s(&grouping))
}

fn chain_len(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("chain.jsonl")).unwrap().lines().count()
}

#[test]
fn simulate_writes_requested_shape() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    ok(&["simulate", "--params", PARAMS, "-N", "1", "--out", &s(&one)]);
    let text = std::fs::read_to_string(one.join("responses.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);

    let full = dir.path().join("full");
    ok(&["simulate", "--params", PARAMS, "-N", "496", "--out", &s(&full)]);
    let text = std::fs::read_to_string(full.join("responses.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 79);
    assert_eq!(&header[1..12], (1..=11).map(|k| format!("dairy_{k}")).collect::<Vec<_>>());
    assert_eq!(lines.clone().count(), 496);
    assert!(lines.all(|l| l.split(',').skip(1).all(|v| v == "0" || v == "1")));
    for f in ["truth.json", "tree.nwk", "grouping.json"] {
        assert!(full.join(f).exists(), "{f}");
    }
}

#[test]
fn simulate_is_reproducible_from_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let read = |sub: &str, seed: &str| {
        let out = dir.path().join(sub);
        ok(&["simulate", "--params", PARAMS, "-N", "50", "--seed-response", seed, "--out", &s(&out)]);
        std::fs::read_to_string(out.join("responses.csv")).unwrap()
    };
    assert_eq!(read("a", "4"), read("b", "4"));
    assert_ne!(read("a", "4"), read("c", "5"));
}

#[test]
fn bundle_without_variances_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut bundle: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(PARAMS).unwrap()).unwrap();
    bundle.as_object_mut().unwrap().remove("Sigma_by_group");
    let p = dir.path().join("bad.json");
    std::fs::write(&p, bundle.to_string()).unwrap();
    let (code, msg) = err(&["simulate", "--params", &s(&p), "-N", "5", "--out", &s(&dir.path().join("o"))]);
    assert_eq!(code, 1);
    assert!(msg.starts_with("error[E_SCHEMA]"), "{msg}");
    assert!(msg.contains("Sigma_by_group"), "{msg}");
}

#[test]
fn fit_writes_chain_of_requested_length() {
    let dir = tempfile::tempdir().unwrap();
    let (data, grouping) = toy_data(dir.path());
    let out = dir.path().join("fit");
    let header = ok(&[
        "fit", "--data", &data, "--grouping", &grouping, "-K", "2", "--total-iters", "2", "--out", &s(&out),
    ]);
    assert!(header.contains("DDT-LCM with K = 2 latent classes run on 10 observations and 6 items in 2 major groups. 2 iterations"));
    assert_eq!(chain_len(&out), 2);
    assert_eq!(std::fs::read_to_string(out.join("trees.nwk")).unwrap().lines().count(), 2);
}

#[test]
fn fit_refuses_more_classes_than_observations() {
    let dir = tempfile::tempdir().unwrap();
    let (data, grouping) = toy_data(dir.path());
    let (code, msg) = err(&["fit", "--data", &data, "--grouping", &grouping, "-K", "11", "--out", &s(&dir.path().join("f"))]);
    assert_eq!(code, 1);
    assert!(msg.starts_with("error[E_PARAMETER]"), "{msg}");
}

#[test]
fn fit_runs_independent_chains() {
    let dir = tempfile::tempdir().unwrap();
    let (data, grouping) = toy_data(dir.path());
    let out = dir.path().join("multi");
    let header = ok(&[
        "fit", "--data", &data, "--grouping", &grouping, "-K", "2", "--total-iters", "3", "--chains", "2", "--out",
        &s(&out),
    ]);
    assert_eq!(header.matches("DDT-LCM").count(), 2);
    let a = std::fs::read_to_string(out.join("chain_1/chain.jsonl")).unwrap();
    let b = std::fs::read_to_string(out.join("chain_2/chain.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 3);
    assert_ne!(a, b);
}

#[test]
fn thread_count_does_not_change_the_chain() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--params", PARAMS, "-N", "120", "--out", &s(&dir.path().join("sim"))]);
    let data = s(&dir.path().join("sim/responses.csv"));
    let grouping = s(&dir.path().join("sim/grouping.json"));
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = treelcm(
            &["fit", "--data", &data, "--grouping", &grouping, "-K", "3", "--total-iters", "5", "--out", &s(&out)],
            Some(threads),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read_to_string(out.join("chain.jsonl")).unwrap()
    };
    assert_eq!(run("1"), run("4"));

    let o = treelcm(&["fit", "--data", &data, "--grouping", &grouping, "-K", "3", "--out", &s(&dir.path().join("x"))], Some("zero"));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("TREELCM_THREADS"));
}

#[test]
fn summarize_validates_burnin_and_honours_relabel_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (data, grouping) = toy_data(dir.path());
    let out = dir.path().join("fit");
    ok(&["fit", "--data", &data, "--grouping", &grouping, "-K", "2", "--total-iters", "6", "--out", &s(&out)]);

    let (code, msg) = err(&["summarize", "--chain", &s(&out), "--burnin", "6"]);
    assert_eq!(code, 1);
    assert!(msg.contains("burn"), "{msg}");

    let report = ok(&["summarize", "--chain", &s(&out), "--burnin", "2", "--relabel", "false"]);
    assert!(!report.is_empty());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["relabeled"], false);
    assert_eq!(summary["n_retained"], 4);

    let quiet = ok(&["summarize", "--chain", &s(&out), "--burnin", "2", "--quiet"]);
    assert!(quiet.is_empty());
}

#[test]
fn report_draws_one_label_per_edge() {
    let dir = tempfile::tempdir().unwrap();
    let (data, grouping) = toy_data(dir.path());
    let out = dir.path().join("fit");
    ok(&["fit", "--data", &data, "--grouping", &grouping, "-K", "3", "--total-iters", "4", "--out", &s(&out)]);
    ok(&["summarize", "--chain", &s(&out), "--burnin", "1", "--quiet"]);
    let rep = dir.path().join("rep");
    ok(&["report", "--summary", &s(&out.join("summary.json")), "--plot-option", "tree", "--out", &s(&rep)]);
    let svg = std::fs::read_to_string(rep.join("report.svg")).unwrap();
    assert_eq!(svg.matches("class=\"edge-label\"").count(), 4);
    assert!(!svg.contains("class=\"bar\""));

    let (code, msg) = err(&["report", "--summary", &s(&out.join("summary.json")), "--plot-option", "pie", "--out", &s(&rep)]);
    assert_eq!(code, 2);
    assert!(msg.starts_with("error[E_USAGE]"), "{msg}");
}
