use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "
[data]
events_per_type = 2
tweets_per_event = 20
[tokenizer]
vocab_size = 300
max_len = 24
[pretrain]
epochs = 1
eval_interval = 5
[finetune]
epochs = 1
eval_interval = 5
";

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crisis-hmc")).args(args).env_remove("CRISIS_HMC_LOG").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.ini");
    std::fs::write(&p, TINY).unwrap();
    p.to_string_lossy().into()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_lists_every_config_key_with_its_default() {
    let o = bin(&["--help"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let keys = crisis_hmc::config::documented_keys();
    assert!(keys.len() > 40);
    for (key, default) in keys {
        let line = text.lines().find(|l| l.split_whitespace().next() == Some(key.as_str()));
        let line = line.unwrap_or_else(|| panic!("{key} missing from --help"));
        assert!(line.trim_end().ends_with(default.trim()), "{line}");
    }
    for sub in ["synth", "annotate", "ner-eval", "vocab", "pretrain", "finetune", "evaluate", "ablate", "baseline", "run"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(sub)), "{sub}");
    }
    assert!(text.contains("CRISIS_HMC_LOG"));
}

#[test]
fn unknown_flag_prints_usage_and_exits_1() {
    let o = bin(&["run", "--no-such-flag"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn bad_inputs_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad_ini = dir.path().join("bad.ini");
    std::fs::write(&bad_ini, "[pretrain]\nno_such_key = 3\n").unwrap();
    assert_eq!(code(&bin(&["vocab", "--config", s(&bad_ini), "--out", s(&out)])), 1);
    assert_eq!(code(&bin(&["vocab", "--set", "pretrain.lr=abc", "--out", s(&out)])), 1);
    assert_eq!(code(&bin(&["vocab", "--threads", "0", "--out", s(&out)])), 1);
    let o = Command::new(env!("CARGO_BIN_EXE_crisis-hmc"))
        .args(["synth", "--out", s(&out)])
        .env("CRISIS_HMC_LOG", "verbose")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("CRISIS_HMC_LOG"));
    assert_eq!(code(&bin(&["evaluate", "--config", &tiny_config(dir.path()), "--out", s(&out)])), 1);
}

#[test]
fn runtime_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let o = bin(&["synth", "--config", &tiny_config(dir.path()), "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn synth_writes_corpus_and_gazetteer() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("synth");
    let o = bin(&["synth", "--config", &tiny_config(dir.path()), "--out", s(&out), "--seed", "5"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let corpus = std::fs::read_to_string(out.join("corpus.jsonl")).unwrap();
    assert_eq!(corpus.lines().count(), 4 * 2 * 20);
    assert!(out.join("split.json").exists());
    assert!(out.join("gazetteer").read_dir().unwrap().count() > 0);
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["seeds"]["global"], 5);
}

#[test]
fn single_thread_runs_are_byte_identical_and_rerunnable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let outs: Vec<_> = ["a", "b"].iter().map(|n| dir.path().join(n)).collect();
    for out in &outs {
        let o = bin(&["run", "--threads", "1", "--config", &cfg, "--out", s(out), "--set", "finetune.head=lcl"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["manifest.json", "report_test.json", "report_dev.json", "report_test.csv", "report_test.svg", "finetune.chmc"] {
        assert_eq!(std::fs::read(outs[0].join(f)).unwrap(), std::fs::read(outs[1].join(f)).unwrap(), "{f} differs");
    }
    let c = dir.path().join("c");
    let o = bin(&["--threads", "1", "--config", s(&outs[0].join("manifest.json")), "--out", s(&c)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(outs[0].join("manifest.json")).unwrap(), std::fs::read(c.join("manifest.json")).unwrap());
}
