use std::path::Path;
use std::process::{Command, Output};

fn greybox(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_greybox"))
        .args(args)
        .current_dir(dir)
        .env_remove("GREYBOX_CONFIG")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = greybox(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--n-per-class", "12", "--seed", "1", "-o", "data.txt"]);
    ok(dir.path(), &["train", "--manifest", "data.txt", "--save", "model.txt", "--max-epochs", "1500"]);
    dir
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = setup();
    let d = dir.path();
    let code = |args: &[&str]| greybox(d, args).status.code().unwrap();
    assert_eq!(code(&["eval", "--manifest", "missing.txt", "--model", "model.txt"]), 2);
    std::fs::write(d.join("bad.txt"), "not a manifest\n").unwrap();
    assert_eq!(code(&["eval", "--manifest", "bad.txt", "--model", "model.txt"]), 1);
    assert_eq!(code(&["eval", "--no-such-flag"]), 1);
    assert_eq!(code(&["synth", "--p-omit", "1.5"]), 1);
    assert_eq!(code(&["explain", "--manifest", "data.txt", "--model", "model.txt", "--sample", "nope"]), 1);
    assert_eq!(code(&["--help"]), 0);
    let diverging = ["train", "--manifest", "data.txt", "--save", "x.txt", "--learning-rate", "1e6", "--l2-penalty", "1"];
    assert_eq!(code(&diverging), 3);

    ok(d, &["train", "--manifest", "data.txt", "--model", "nb", "--save", "nb.txt"]);
    let out = greybox(d, &["eval", "--manifest", "data.txt", "--model", "nb.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("logistic regression"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("g.toml"), "[train]\nmax_epochs = 3\n").unwrap();
    let from_file = ok(d, &["--config", "g.toml", "train", "--manifest", "data.txt", "--save", "m.txt"]);
    assert!(from_file.contains("epochs: 3\n"), "{from_file}");
    let flag_wins = ok(
        d,
        &["--config", "g.toml", "train", "--manifest", "data.txt", "--save", "m.txt", "--max-epochs", "5"],
    );
    assert!(flag_wins.contains("epochs: 5\n"), "{flag_wins}");

    let via_env = Command::new(env!("CARGO_BIN_EXE_greybox"))
        .args(["train", "--manifest", "data.txt", "--save", "m.txt"])
        .current_dir(d)
        .env("GREYBOX_CONFIG", "g.toml")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&via_env.stdout).contains("epochs: 3\n"));

    std::fs::write(d.join("bad.toml"), "[train]\nepochs = 3\n").unwrap();
    let bad = greybox(d, &["--config", "bad.toml", "train", "--manifest", "data.txt", "--save", "m.txt"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn graph_commands_agree_with_expert_kb() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth", "--n-per-class", "40", "--seed", "2", "-o", "data.txt"]);
    ok(d, &["train", "--manifest", "data.txt", "--save", "model.txt"]);
    ok(d, &["extract-kg", "--model", "model.txt", "-o", "kg.txt"]);
    ok(d, &["extract-kb", "--manifest", "data.txt", "-o", "kb.txt"]);
    let same = ok(d, &["ged", "kg.txt", "kb.txt", "--right-kind", "kb"]);
    assert_eq!(same, "graph edit distance: 0\n");

    let edges = std::fs::read_to_string(d.join("kg.txt")).unwrap();
    assert_eq!(edges.lines().count(), 18);
    std::fs::write(d.join("kg_plus.txt"), format!("{edges}(Buttress) [attribute]\n")).unwrap();
    let diff = ok(d, &["ged", "kg_plus.txt", "kg.txt", "--format", "jsonl"]);
    let v: serde_json::Value = serde_json::from_str(diff.trim()).unwrap();
    assert_eq!(v["distance"], 1);
    assert_eq!(v["edit_script"][0]["op"], "delete_node");

    let dot = ok(d, &["extract-kg", "--model", "model.txt", "--format", "dot"]);
    assert!(dot.starts_with("graph kg {"));
}

#[test]
fn explain_and_counterfactual_report_on_one_sample() {
    let dir = setup();
    let d = dir.path();
    let text = ok(d, &["explain", "--manifest", "data.txt", "--model", "model.txt", "--sample", "s000000"]);
    assert!(text.starts_with("Image s000000 represents a Gothic Monument because"), "{text}");
    let json = ok(
        d,
        &["explain", "--manifest", "data.txt", "--model", "model.txt", "--sample", "s000000", "--format", "jsonl"],
    );
    let v: serde_json::Value = serde_json::from_str(json.trim()).unwrap();
    assert_eq!(v["predicted_class"], "Gothic Monument");
    assert_eq!(format!("{}\n", v["text"].as_str().unwrap()), text);

    let cf = ok(
        d,
        &["counterfactual", "--manifest", "data.txt", "--model", "model.txt", "--sample", "s000000", "--max-flips", "4"],
    );
    assert!(cf.starts_with("sample s000000: predicted Gothic Monument"), "{cf}");
    assert!(cf.lines().count() >= 2);
}

#[test]
fn eval_records_are_json_lines() {
    let dir = setup();
    let out = ok(
        dir.path(),
        &["eval", "--manifest", "data.txt", "--model", "model.txt", "--format", "jsonl"],
    );
    let lines: Vec<serde_json::Value> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 49);
    assert_eq!(lines[0]["record"], "summary");
    assert_eq!(lines[0]["accuracy"], 1.0);
    assert_eq!(lines[0]["failure_counts"]["ExactSeg/CorrectPred"], 48);
    assert!(lines[1..].iter().all(|l| l["record"] == "sample"));
}
