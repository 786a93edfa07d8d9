use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_probeforge"));
    c.env_remove("PROBEFORGE_SEED");
    c
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec![
        "synth",
        "--out",
        out,
        "--n-tasks",
        "2",
        "--n-per-task",
        "150",
        "--hidden-dim",
        "16",
    ];
    args.extend_from_slice(extra);
    let o = run(&args, dir);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn help_on_every_subcommand() {
    let subs = [
        "validate", "label", "features", "select", "train", "eval", "transfer", "shap", "pca",
        "synth", "report",
    ];
    for s in subs {
        let o = bin().args([s, "--help"]).output().unwrap();
        assert_eq!(code(&o), 0, "{s}");
        let text = stdout(&o);
        for flag in [
            "--seed",
            "--threshold",
            "--bins",
            "--trees",
            "--k",
            "--jobs",
        ] {
            assert!(text.contains(flag), "{s} --help lacks {flag}");
        }
    }
    assert_eq!(code(&bin().arg("--help").output().unwrap()), 0);
    assert_eq!(code(&bin().arg("--version").output().unwrap()), 0);
}

#[test]
fn usage_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["frobnicate"], tmp.path())), 1);
    assert_eq!(
        code(&run(&["validate", "--dataset", "x", "--bogus"], tmp.path())),
        1
    );
    assert_eq!(code(&run(&["validate"], tmp.path())), 1);
    assert_eq!(
        code(&run(
            &[
                "train",
                "--dataset",
                "x",
                "--model",
                "m",
                "--mode",
                "sideways"
            ],
            tmp.path()
        )),
        1
    );
    assert_eq!(code(&run(&[], tmp.path())), 1);
}

#[test]
fn data_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["validate", "--dataset", "missing"], tmp.path());
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("manifest.json"));

    synth(tmp.path(), "data", &[]);
    fs::write(tmp.path().join("data/task0/hidden_states.bin"), b"short").unwrap();
    assert_eq!(
        code(&run(&["validate", "--dataset", "data/task0"], tmp.path())),
        2
    );
}

#[test]
fn validate_prints_summary() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "data", &["--layers", "13,15"]);
    let o = run(&["validate", "--dataset", "data/task1"], tmp.path());
    assert_eq!(code(&o), 0);
    assert_eq!(
        stdout(&o).trim(),
        "ok task1 task=multiple_choice n=150 hidden_dim=16 layers=13,15 labels=stored"
    );
}

#[test]
fn eval_with_mismatched_task_types_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    synth(tmp.path(), "mc", &[]);
    synth(tmp.path(), "sf", &["--task-type", "short_form"]);
    let o = run(
        &[
            "--trees",
            "10",
            "train",
            "--dataset",
            "mc/task0",
            "--model",
            "m.txt",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let o = run(
        &["eval", "--model", "m.txt", "--dataset", "sf/task0"],
        tmp.path(),
    );
    assert_eq!(code(&o), 2);
    let msg = stderr(&o);
    assert!(
        msg.contains("multiple_choice") && msg.contains("short_form"),
        "{msg}"
    );
}

#[test]
fn train_eval_shap_select_features_label() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "data", &[]);
    let o = run(
        &[
            "--trees",
            "30",
            "--k",
            "6",
            "train",
            "--dataset",
            "data/task0",
            "--dataset",
            "data/task1",
            "--mode",
            "selected",
            "--model",
            "m.txt",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("x 11 features"), "{}", stderr(&o));

    let o = run(&["eval", "--model", "m.txt", "--dataset", "data/task0"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["n"], 30);
    assert_eq!(v["config"], "selected_k6");
    let auroc = v["auroc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&auroc));

    let o = run(
        &[
            "shap",
            "--model",
            "m.txt",
            "--dataset",
            "data/task0",
            "--out",
            "shap.csv",
        ],
        d,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let shap = fs::read_to_string(d.join("shap.csv")).unwrap();
    assert_eq!(
        shap.lines().next().unwrap(),
        "rank,feature,mean_shap,agnostic"
    );
    assert_eq!(shap.lines().count(), 12);
    assert_eq!(shap.matches(",true").count(), 5);

    let o = run(&["--k", "4", "select", "--dataset", "data/task0"], d);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 5);

    let o = run(&["features", "--dataset", "data/task0"], d);
    assert_eq!(
        stdout(&o).lines().next().unwrap(),
        "sample_id,p1,p2,p3,p4,entropy"
    );
    assert_eq!(stdout(&o).lines().count(), 151);

    let o = run(&["label", "--dataset", "data/task0"], d);
    assert_eq!(stdout(&o).lines().count(), 150);
    assert!(stdout(&o)
        .lines()
        .all(|l| l.ends_with("\t1") || l.ends_with("\t0")));

    let o = run(
        &["pca", "--dataset", "data/task0", "--dataset", "data/task1"],
        d,
    );
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().count(), 301);
}

fn write_plan(dir: &Path) {
    fs::write(
        dir.join("plan.json"),
        r#"{
  "datasets": ["task0", "task1"],
  "data_dir": "data",
  "transfers": ["task0", "task1-task0", "task0-task1"],
  "configs": [{"mode": "one_layer"}, {"mode": "selected", "k": 5}, {"mode": "multi_layer"}],
  "forest": {"n_trees": 20}
}"#,
    )
    .unwrap();
}

#[test]
fn transfer_then_report_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d, "data", &["--layers", "13,14,15,16,17"]);
    write_plan(d);
    let a = run(
        &[
            "--jobs",
            "1",
            "transfer",
            "--plan",
            "plan.json",
            "--out",
            "a",
        ],
        d,
    );
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = run(
        &[
            "--jobs",
            "3",
            "transfer",
            "--plan",
            "plan.json",
            "--out",
            "b",
        ],
        d,
    );
    assert_eq!(code(&b), 0);
    let names: Vec<String> = {
        let mut v: Vec<String> = fs::read_dir(d.join("a"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    for f in [
        "ablation.csv",
        "delta_perf.csv",
        "pca.csv",
        "report.json",
        "results.csv",
        "shap_task0_one_layer.csv",
    ] {
        assert!(names.iter().any(|n| n == f), "missing {f}");
    }
    for n in &names {
        assert_eq!(
            fs::read(d.join("a").join(n)).unwrap(),
            fs::read(d.join("b").join(n)).unwrap(),
            "{n}"
        );
    }
    let results = fs::read_to_string(d.join("a/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 3 * 3 * 2);

    let o = run(&["report", "--dir", "a"], d);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).starts_with("18 result rows, 9 delta rows, 9 ablation rows, 0 cell errors"));

    // Tampering with a delta breaks the consistency check.
    let path = d.join("a/report.json");
    let mut doc: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    doc["delta_perf"][0]["delta"]["acc"] = serde_json::json!(0.123);
    fs::write(&path, doc.to_string()).unwrap();
    assert_eq!(code(&run(&["report", "--dir", "a"], d)), 2);
}

#[test]
fn seed_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let o = bin()
        .args([
            "synth",
            "--out",
            "env",
            "--n-tasks",
            "1",
            "--n-per-task",
            "20",
            "--hidden-dim",
            "8",
        ])
        .env("PROBEFORGE_SEED", "7")
        .current_dir(d)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let o = run(
        &[
            "--seed",
            "7",
            "synth",
            "--out",
            "flag",
            "--n-tasks",
            "1",
            "--n-per-task",
            "20",
            "--hidden-dim",
            "8",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    let o = run(
        &[
            "synth",
            "--out",
            "default",
            "--n-tasks",
            "1",
            "--n-per-task",
            "20",
            "--hidden-dim",
            "8",
        ],
        d,
    );
    assert_eq!(code(&o), 0);
    let read = |p: &str| fs::read(d.join(p).join("task0/hidden_states.bin")).unwrap();
    assert_eq!(read("env"), read("flag"));
    assert_ne!(read("env"), read("default"));
}
