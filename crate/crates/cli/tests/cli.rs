use std::path::Path;
use std::process::{Command, Output};

use panelbench::episode::{read_episode, DatasetManifest};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panelbench"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).env("PANELBENCH_THREADS", "1").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_under(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().display().to_string());
            }
        }
    }
    out.sort();
    out
}

#[test]
fn script_demos_writes_valid_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["script-demos", "--scene", "desk", "--demos", "12", "--seed", "3", "--out", "data"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let m = DatasetManifest::load(&tmp.path().join("data/manifest.txt")).unwrap();
    assert_eq!(m.len(), 12);
    for e in &m.entries {
        read_episode(&m.resolve(e)).unwrap().validate().unwrap();
    }
    let files = files_under(tmp.path());
    assert!(files.iter().all(|f| f.starts_with("data/")), "{files:?}");
}

#[test]
fn train_without_dataset_reports_category() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["train", "--policy", "bc", "--demos", "missing", "--seed", "1", "--out", "run"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dataset not found"), "{}", stderr(&o));
}

#[test]
fn seed_is_mandatory_and_unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.cfg"), "policy = bc\ndemos = data\nout = run\n").unwrap();
    let o = run(&["train", "--config", "a.cfg"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("malformed config") && stderr(&o).contains("seed"), "{}", stderr(&o));

    std::fs::write(tmp.path().join("b.cfg"), "policy = bc\nseed = 1\nbc.epoch = 3\n").unwrap();
    let o = run(&["train", "--config", "b.cfg"], tmp.path());
    assert!(stderr(&o).contains("unknown key bc.epoch"), "{}", stderr(&o));

    let o = run(&["train", "--config", "nope.cfg"], tmp.path());
    assert!(stderr(&o).contains("malformed config"), "{}", stderr(&o));
}

#[test]
fn eval_rejects_incompatible_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("junk.ckpt"), b"not a checkpoint").unwrap();
    let o = run(&["eval", "--checkpoint", "junk.ckpt", "--seed", "0", "--out", "ev"], tmp.path());
    assert!(!o.status.success());
    let e = stderr(&o);
    assert!(e.contains("incompatible checkpoint") || e.contains("corrupt file"), "{e}");
}

#[test]
fn train_eval_bench_convert_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert!(run(&["script-demos", "--demos", "6", "--seed", "1", "--out", "data", "--perturb", "0"], dir).status.success());
    std::fs::write(
        dir.join("base.cfg"),
        "scene = desk\nseed = 5\ndemos = data\nprotocol = unperturbed\nprotocol.rollouts = 3\nprotocol.max_steps = 40\n\
         bc.epochs = 3\nbc.hidden = 16,16\ndqn.pretrain_steps = 30\ndqn.online_steps = 20\ndqn.hidden = 16,16\n\
         flow.epochs = 1\nflow.hidden = 32,32\nflow.horizon = 8\nflow.replan_every = 8\n",
    )
    .unwrap();
    std::fs::write(dir.join("train.cfg"), "include base.cfg\npolicy = bc\nout = runs/bc\n").unwrap();
    let o = run(&["train", "--config", "train.cfg"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("runs/bc/policy.ckpt").exists());
    assert!(dir.join("runs/bc/curves.csv").exists());

    let o = run(&["eval", "--checkpoint", "runs/bc/policy.ckpt", "--protocol", "unperturbed", "--seed", "2", "--out", "runs/eval", "--demos", "data"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.join("runs/eval/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let o = run(&["bench", "--config", "base.cfg", "--policies", "bc,dqn,flow", "--out", "runs/bench"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(dir.join("runs/bench/report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{report}");
    for (row, p) in rows.iter().zip(["bc", "dqn", "flow"]) {
        assert!(row.starts_with(&format!("{p},desk,unperturbed,6,3,")), "{row}");
    }

    let o = run(&["bench", "--config", "base.cfg", "--policies", "bc,dqn,flow", "--out", "runs/bench2"], dir);
    assert!(o.status.success());
    assert_eq!(std::fs::read(dir.join("runs/bench2/report.csv")).unwrap(), report.as_bytes());

    let o = run(&["convert", "--demos", "data", "--format", "rlds", "--out", "export"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    let first: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("export/ep_00000.json")).unwrap()).unwrap();
    assert!(first.is_object());
    let o = run(&["convert", "--demos", "data/episodes/ep_00001.pnlb", "--format", "csv", "--out", "export_csv"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.join("export_csv/ep_00001.csv").exists());
    let o = run(&["convert", "--demos", "data", "--format", "parquet", "--out", "x"], dir);
    assert!(stderr(&o).contains("invalid input"));

    let mut files = files_under(dir);
    files.retain(|f| !["base.cfg", "train.cfg"].contains(&f.as_str()));
    let roots = ["data/", "runs/bc/", "runs/eval/", "runs/bench/", "runs/bench2/", "export/", "export_csv/"];
    assert!(files.iter().all(|f| roots.iter().any(|r| f.starts_with(r))), "{files:?}");
}
