use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn srnn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srnn"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(srnn(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(srnn(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(srnn(dir.path(), &["train", "--n", "1"]).status.code(), Some(1));
    assert_eq!(srnn(dir.path(), &["train", "--set", "nope=1"]).status.code(), Some(1));
    assert_eq!(srnn(dir.path(), &["train", "--model", "m.srnm"]).status.code(), Some(1));
    let missing = srnn(dir.path(), &["train", "--data", "absent.json", "--model", "m.srnm"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!dir.path().join("m.srnm").exists());
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.cfg"),
        "seed = 5\nnum_albums = 4\ndim = 3\nnum_states = 4 # small\n",
    )
    .unwrap();
    let out = srnn(dir.path(), &["gen", "--config", "run.cfg", "--seed", "9", "--out", "d"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let echo: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("d/config.json")).unwrap()).unwrap();
    assert_eq!(echo["seed"], 9);
    assert_eq!(echo["num_albums"], 4);
    assert_eq!(echo["num_states"], 4);
    assert!(dir.path().join("d/manifest.json").exists());
    assert!(dir.path().join("d/truth.json").exists());
}

#[test]
fn pipeline_outputs_are_one_based_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(srnn(d, &["gen", "--out", "d", "--set", "num_albums=12", "--set", "dim=6"]).status.success());
    let common = ["--data", "d/manifest.json", "--model", "m.srnm"];
    let mut train = vec!["train", "--n", "3", "--set", "max_epochs=2", "--set", "hidden=6"];
    train.extend(common);
    assert!(srnn(d, &train).status.success());

    let mut story = vec!["storyline", "--out", "s.json", "--samples", "20"];
    story.extend(common);
    assert!(srnn(d, &story).status.success());
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("s.json")).unwrap()).unwrap();
    let stories = s["stories"].as_array().unwrap();
    assert_eq!(stories.len(), 12);
    for st in stories {
        let idx: Vec<u64> = st["indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        assert_eq!(idx.len(), 3);
        assert!(idx[0] >= 1 && idx.windows(2).all(|w| w[0] < w[1]));
    }

    let mut eval = vec!["eval", "--out", "e.json", "--truth", "d/truth.json", "--samples", "20"];
    eval.extend(common);
    let out = srnn(d, &eval);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(d.join("e.txt")).unwrap();
    assert_eq!(String::from_utf8_lossy(&out.stdout), table);
    for row in ["predict-long", "predict-short", "storyline"] {
        assert!(table.contains(row), "{table}");
    }

    let mut graph = vec!["export-graph", "--out", "g.dot", "--samples", "20"];
    graph.extend(common);
    assert!(srnn(d, &graph).status.success());
    assert!(graphviz_rust::parse(&fs::read_to_string(d.join("g.dot")).unwrap()).is_ok());
}
