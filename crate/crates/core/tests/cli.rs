use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use heurlink::model::{Checkpoint, MaterializedFormulation};

fn heurlink(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heurlink"))
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_graph(dir: &Path) {
    fs::write(dir.join("g.txt"), "# small test graph\n0 1\n1 2\n0 2\n2 3\n").unwrap();
}

#[test]
fn heuristic_scores_to_stdout_and_file() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path());
    let o = heurlink(dir.path(), &["heuristic", "--graph", "g.txt", "--method", "cn", "--pair", "0,1", "--pair", "0,3"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "0,1,3\n0,3,1\n");

    let o = heurlink(
        dir.path(),
        &["heuristic", "--graph", "g.txt", "--method", "rwr", "--order", "0", "--pair", "1,1", "--out", "s.csv"],
    );
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(dir.path().join("s.csv")).unwrap(), "i,j,score\n1,1,0.5\n");
}

#[test]
fn verify_runs_the_three_way_check() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path());
    for method in ["cn", "llhn", "ra", "katz", "glhn", "rwr", "lpi", "lrw", "ra_sq", "ra_sym"] {
        let o = heurlink(
            dir.path(),
            &["heuristic", "--graph", "g.txt", "--method", method, "--order", "4", "--all-nonedges", "--verify"],
        );
        assert!(o.status.success(), "{method}: {}", String::from_utf8_lossy(&o.stderr));
    }
    let o = heurlink(dir.path(), &["heuristic", "--graph", "g.txt", "--method", "katz", "--all-nonedges", "--verify"]);
    assert_eq!(o.status.code(), Some(1), "default order 20 is beyond the oracle limit");
}

#[test]
fn exit_codes_follow_error_classes() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path());
    let code = |args: &[&str]| heurlink(dir.path(), args).status.code();
    assert_eq!(code(&["heuristic", "--graph", "g.txt", "--method", "nope", "--pair", "0,1"]), Some(1));
    assert_eq!(code(&["heuristic", "--graph", "g.txt", "--method", "cn", "--pair", "0,9"]), Some(2));
    assert_eq!(code(&["heuristic", "--graph", "missing.txt", "--method", "cn", "--pair", "0,1"]), Some(1));
    assert_eq!(code(&["heuristic", "--graph", "g.txt", "--method", "katz", "--gamma", "1.5", "--pair", "0,1"]), Some(1));
    assert_eq!(code(&["no-such-command"]), Some(1));
    assert_eq!(code(&["--threads", "0", "info", "--graph", "g.txt"]), Some(1));
}

#[test]
fn invalid_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write_graph(dir.path());
    fs::write(dir.path().join("bad.json"), r#"{"dataset": {"edges": "g.txt"}, "model": {"depth": 0, "use_node_embeddings": true}}"#).unwrap();
    let o = heurlink(
        dir.path(),
        &["train", "--config", "bad.json", "--out-checkpoint", "ck.json", "--history", "h.csv", "--out-split", "s.json"],
    );
    assert_eq!(o.status.code(), Some(1));
    for f in ["ck.json", "h.csv", "s.json"] {
        assert!(!dir.path().join(f).exists(), "{f} was written");
    }
}

#[test]
fn synth_train_eval_recover_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let o = heurlink(p, &["--seed", "2", "synth", "--kind", "hexagonal", "--size", "20", "--out-dir", "hex"]);
    assert!(o.status.success());
    for f in ["edges.txt", "split.json", "dataset.json", "run.json"] {
        assert!(p.join("hex").join(f).exists());
    }
    let o = heurlink(
        p,
        &[
            "--seed", "2", "--threads", "1", "train", "--config", "hex/run.json", "--epochs", "3",
            "--out-checkpoint", "ck.json", "--history", "h.csv", "--out-split", "used.json",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let history = fs::read_to_string(p.join("h.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,loss,val_metric"));
    assert_eq!(history.lines().count(), 4);
    let ck = Checkpoint::load(p.join("ck.json")).unwrap();
    assert_eq!((ck.num_nodes, ck.params.depth()), (120, 20));

    let o = heurlink(p, &["eval", "--checkpoint", "ck.json", "--split", "used.json", "--metric", "auc"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["metric"], "auc");
    assert!((0.0..=1.0).contains(&report["value"].as_f64().unwrap()));

    let o = heurlink(p, &["recover", "--checkpoint", "ck.json", "--split", "used.json", "--dense", "--out", "rec.json"]);
    assert!(o.status.success());
    let rec: MaterializedFormulation = serde_json::from_str(&fs::read_to_string(p.join("rec.json")).unwrap()).unwrap();
    assert_eq!(rec.betas, ck.params.betas);
    assert_eq!(rec.dense_h.unwrap().shape(), (120, 120));
}

#[test]
fn epochs_zero_keeps_initial_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert!(heurlink(p, &["synth", "--kind", "triangular", "--size", "10", "--out-dir", "tri"]).status.success());
    let o = heurlink(p, &["train", "--config", "tri/run.json", "--epochs", "0", "--history", "h.csv", "--out-checkpoint", "ck.json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(p.join("h.csv")).unwrap(), "epoch,loss,val_metric\n");
}

#[test]
fn gradcheck_split_and_info() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write_graph(p);
    let o = heurlink(p, &["gradcheck", "--instances", "2", "--out", "fd.json"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("worst"));
    assert!(p.join("fd.json").exists());

    let o = heurlink(p, &["--seed", "3", "split", "--graph", "g.txt", "--valid", "0", "--test", "0.3", "--out", "s.json"]);
    assert!(o.status.success());
    let s = heurlink::data::load_split(p.join("s.json")).unwrap();
    assert_eq!((s.train.len(), s.test_pos.len()), (3, 1));

    let o = heurlink(p, &["info", "--graph", "g.txt"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("nodes        4"));
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let o = heurlink(
        dir.path(),
        &[
            "bench", "--depths", "1,2", "--sizes", "200", "--features", "4", "--nodes", "100", "--repeats", "1",
            "--out", "b.csv",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("axis,depth,num_edges,feature_dim,seconds"));
    assert_eq!(csv.lines().count(), 5);
}
