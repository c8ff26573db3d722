//! End-to-end smoke tests driving the compiled binary.

use std::fs;
use std::path::Path;
use std::process::Command;

fn tkgr() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tkgr"))
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("exp.conf");
    fs::write(
        &path,
        "\
synth_blocks = 2
synth_entities_per_block = 8
synth_relations = 1
synth_event_rate = 0.5
synth_horizon = 60
synth_drift_period = 15
synth_arrival_rate = 0.5
shots = 1
intervals = 2
dim = 4
budget = 4
time_bound = 15
negatives = 2
epochs = 1
pretrain_epochs = 1
batch_size = 8
eta = 0.01
beta = 0.01
seed = 3
out_dir = out
",
    )
    .unwrap();
    path
}

#[test]
fn synth_ingest_split_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());

    // synth writes a TSV.
    let out = tkgr()
        .args(["synth", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "synth failed: {:?}", out);
    let tsv = dir.path().join("out/synthetic.tsv");
    assert!(tsv.is_file());

    // ingest reports statistics.
    let out = tkgr().args(["ingest", "--data"]).arg(&tsv).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("entities:"));
    assert!(text.contains("quadruples:"));

    // split writes the manifest.
    let out = tkgr()
        .args(["split", "--data"])
        .arg(&tsv)
        .args(["--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "split failed: {:?}", out);
    assert!(dir.path().join("out/split.txt").is_file());

    // train runs the full pipeline and writes artifacts.
    let out = tkgr()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {:?}", out);
    for name in ["metrics.json", "metrics.csv", "train_log.jsonl", "checkpoint.json", "split.txt"] {
        assert!(dir.path().join("out").join(name).is_file(), "missing {name}");
    }

    // eval re-uses the checkpoint.
    let out = tkgr()
        .args(["eval", "--config"])
        .arg(&config)
        .args(["--checkpoint"])
        .arg(dir.path().join("out/checkpoint.json"))
        .args(["--out"])
        .arg(dir.path().join("eval_out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {:?}", out);
    assert!(dir.path().join("eval_out/metrics.json").is_file());
}

#[test]
fn mode_and_seed_overrides_apply() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path());
    let out = tkgr()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--mode", "finetune_only", "--seed", "9"])
        .args(["--out"])
        .arg(dir.path().join("ft"))
        .output()
        .unwrap();
    assert!(out.status.success(), "train failed: {:?}", out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mode=finetune_only"));
    // finetune_only trains nothing in the meta phase: empty log.
    let log = fs::read_to_string(dir.path().join("ft/train_log.jsonl")).unwrap();
    assert!(log.is_empty());
}

#[test]
fn invalid_config_key_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.conf");
    fs::write(&path, "not_a_real_key = 1\n").unwrap();
    let out = tkgr().args(["train", "--config"]).arg(&path).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unknown config key"), "stderr: {err}");
}
