use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Every written file with its bytes.
type Files = Vec<(PathBuf, Vec<u8>)>;

const BIN: &str = env!("CARGO_BIN_EXE_mcmot");

fn mcmot(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("spawn mcmot")
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = mcmot(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

/// Simulates a small training scene and a small test scene, fits weights and
/// writes a config naming them.
fn fixture(dir: &Path) {
    let sim = ["--set", "n_frames=60", "--set", "n_pedestrians=6", "--set", "n_cameras=3"];
    let mut train = vec!["simulate", "--out", "train", "--set", "seed=7", "--set", "miss_rate=0.1"];
    train.extend(sim);
    ok(dir, &train);
    let mut test = vec!["simulate", "--out", "test", "--set", "seed=3"];
    test.extend(sim);
    ok(dir, &test);
    ok(dir, &["sample-pairs", "--scene", "train", "--out", "pairs", "--set", "train_rounds=5"]);
    ok(
        dir,
        &[
            "fit-weights",
            "--pairs",
            "pairs/temporal_pairs.csv",
            "pairs/spatial_pairs.csv",
            "pairs/split_pairs.csv",
            "--out",
            "w",
        ],
    );
    fs::write(
        dir.join("cfg.txt"),
        "weights_temporal = w/temporal.json\nweights_spatial = w/spatial.json\nweights_split = w/split.json\n",
    )
    .unwrap();
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Runs every subcommand in a fresh directory; returns stdout per step and all files.
fn full_run() -> (Vec<Vec<u8>>, Files) {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let c = ["--config", "cfg.txt"];
    let steps: Vec<Vec<&str>> = vec![
        vec!["precluster", "--scene", "test", "--out", "s/clusters.csv"],
        vec!["split", "--scene", "test", "--out", "s/tracklets.csv"],
        vec!["build-graph", "--scene", "test", "--tracklets", "s/tracklets.csv", "--out", "s/graph.txt"],
        vec!["solve", "--graph", "s/graph.txt", "--out", "s/labels.txt"],
        vec!["track", "--scene", "test", "--out", "run"],
        vec!["eval", "--gt", "test/gt.csv", "--pred", "run/trajectories.csv"],
        vec!["eval", "--json", "--gt", "test/gt.csv", "--pred", "run/trajectories.csv"],
    ];
    let stdout = steps
        .iter()
        .map(|s| {
            let mut args = s.clone();
            args.extend(c);
            ok(d, &args)
        })
        .collect();
    (stdout, files(d))
}

#[test]
fn every_subcommand_is_deterministic() {
    let (out_a, files_a) = full_run();
    let (out_b, files_b) = full_run();
    assert_eq!(out_a, out_b);
    assert_eq!(files_a.len(), files_b.len());
    for ((pa, a), (pb, b)) in files_a.iter().zip(&files_b) {
        assert_eq!(pa, pb);
        assert!(a == b, "{} differs between runs", pa.display());
    }
    let names: Vec<String> = files_a.iter().map(|(p, _)| p.display().to_string()).collect();
    for expected in ["train/switches.csv", "w/split.json", "run/report.txt", "s/labels.txt"] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
}

#[test]
fn stop_after_precluster_writes_clusters_only() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["simulate", "--out", "scene", "--set", "n_frames=20"]);
    ok(d, &["track", "--scene", "scene", "--out", "run", "--stop-after", "precluster"]);
    let names: Vec<PathBuf> = files(&d.join("run")).into_iter().map(|(p, _)| p).collect();
    assert_eq!(names, vec![PathBuf::from("clusters.csv")]);
    let text = fs::read_to_string(d.join("run/clusters.csv")).unwrap();
    assert!(text.lines().count() > 1);
}

#[test]
fn stages_compose_to_one_shot_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fixture(d);
    let c = ["--config", "cfg.txt", "--set", "max_rounds=1"];
    let run = |args: &[&str]| {
        let mut a = args.to_vec();
        a.extend(c);
        ok(d, &a);
    };
    run(&["track", "--scene", "test", "--out", "one"]);
    run(&["precluster", "--scene", "test", "--out", "s/clusters.csv"]);
    run(&["split", "--scene", "test", "--out", "s/tracklets.csv"]);
    run(&["build-graph", "--scene", "test", "--tracklets", "s/tracklets.csv", "--out", "s/graph.txt"]);
    run(&["solve", "--graph", "s/graph.txt", "--out", "s/labels.txt"]);
    for f in ["clusters.csv", "tracklets.csv", "graph.txt", "labels.txt"] {
        let a = fs::read(d.join("one").join(f)).unwrap();
        let b = fs::read(d.join("s").join(f)).unwrap();
        assert!(a == b, "{f} differs between staged and one-shot runs");
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(mcmot(d, &["--help"]).status.code(), Some(0));
    assert_eq!(mcmot(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(mcmot(d, &["eval", "--gt", "a.csv"]).status.code(), Some(1));
    assert_eq!(
        mcmot(d, &["simulate", "--out", "x", "--set", "no_such_key=1"]).status.code(),
        Some(1)
    );
    assert_eq!(
        mcmot(d, &["simulate", "--out", "x", "--set", "n_cameras=0"]).status.code(),
        Some(1)
    );
    assert_eq!(
        mcmot(d, &["eval", "--gt", "missing.csv", "--pred", "missing.csv"]).status.code(),
        Some(2)
    );
    fs::write(d.join("bad.json"), "{").unwrap();
    ok(d, &["simulate", "--out", "scene", "--set", "n_frames=10"]);
    let out = mcmot(
        d,
        &["track", "--scene", "scene", "--out", "run", "--set", "weights_split=bad.json"],
    );
    assert_eq!(out.status.code(), Some(2));
}
