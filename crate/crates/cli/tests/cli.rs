use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY_RUN: &str = r#"
obj_layers = 1
rel_layers = 1
model_dim = 8
heads = 2
ffn_dim = 8
emb_dim = 4
spatial_dim = 4
union_dim = 8
optimizer = "adam"
lr = 0.01
steps = 6
batch_size = 4
warmup_steps = 2
decay_steps = [4]
"#;

fn sgg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_data(dir: &Path, predicates: usize, seed: u64) {
    let cfg = dir.with_extension("toml");
    fs::write(&cfg, format!("scenes = 90\npredicate_classes = {predicates}\n")).unwrap();
    let o = sgg(&["gen-data", "--out", p(dir), "--config", p(&cfg), "--seed", &seed.to_string()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn group_reports_two_groups_for_worked_example() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    fs::write(&counts, "name,count\na,100\nb,40\nc,12\nd,11\ne,3\n").unwrap();
    let o = sgg(&["group", "--counts", p(&counts), "--mu", "4"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("5 classes, mu = 4, 2 groups"), "{out}");
    assert!(out.contains("group 1: 2 classes, counts 100..40"), "{out}");
    assert!(out.contains("group 2: 3 classes, counts 12..3"), "{out}");

    let o = sgg(&["group", "--counts", p(&counts), "--mu", "1"]);
    assert!(stdout(&o).contains("5 groups"));
}

#[test]
fn bad_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let counts = dir.path().join("counts.csv");
    fs::write(&counts, "name,count\na,10\nb,5\n").unwrap();
    assert_eq!(sgg(&["group", "--counts", p(&counts), "--mu", "0.5"]).status.code(), Some(2));
    let missing = dir.path().join("nope.csv");
    let o = sgg(&["group", "--counts", p(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.csv"));
    fs::write(&counts, "name,count\na,ten\n").unwrap();
    assert_eq!(sgg(&["group", "--counts", p(&counts)]).status.code(), Some(2));
    assert_eq!(sgg(&["train", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn training_twice_writes_identical_metrics() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    gen_data(&data, 6, 3);
    let run_cfg = root.path().join("run.toml");
    fs::write(&run_cfg, TINY_RUN).unwrap();
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = root.path().join(name);
        let o = sgg(&["train", "--data", p(&data), "--out", p(&out), "--config", p(&run_cfg), "--seed", "5"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        for f in ["model.ckpt", "manifest.json", "metrics.csv"] {
            assert!(out.join(f).exists(), "{f} missing");
        }
        tables.push(fs::read(out.join("metrics.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);

    // Re-evaluating the checkpoint reproduces the training-time table.
    let csv = root.path().join("eval.csv");
    let a = root.path().join("a");
    let o = sgg(&[
        "eval",
        "--checkpoint",
        p(&a.join("model.ckpt")),
        "--data",
        p(&data),
        "--config",
        p(&run_cfg),
        "--seed",
        "5",
        "--csv",
        p(&csv),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&csv).unwrap(), tables[0]);

    // One row per predicate class present in the test split.
    let text = String::from_utf8(tables[0].clone()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("class,count,recall_at_20,recall_at_50,recall_at_100"));
    let rows: Vec<&str> = lines.collect();
    let test = fs::read_to_string(data.join("test.jsonl")).unwrap();
    let mut present = std::collections::BTreeSet::new();
    for line in test.lines().filter(|l| !l.trim().is_empty()) {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for r in v["relations"].as_array().unwrap() {
            present.insert(r["pred"].as_str().unwrap().to_string());
        }
    }
    assert_eq!(rows.len(), present.len());
    for row in rows {
        assert!(present.contains(row.split(',').next().unwrap()));
    }

    let o = sgg(&["report", p(&a), p(&root.path().join("b"))]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().count(), 4);
}

#[test]
fn eval_rejects_a_mismatched_vocabulary() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let other = root.path().join("other");
    gen_data(&data, 6, 3);
    gen_data(&other, 8, 3);
    let run_cfg = root.path().join("run.toml");
    fs::write(&run_cfg, TINY_RUN.replace("steps = 6", "steps = 2")).unwrap();
    let out = root.path().join("run");
    let o = sgg(&["train", "--data", p(&data), "--out", p(&out), "--config", p(&run_cfg)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = sgg(&["eval", "--checkpoint", p(&out.join("model.ckpt")), "--data", p(&other)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabulary"));
}
