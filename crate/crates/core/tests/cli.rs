use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn drlkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drlkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(format!("{name}.json"));
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = r#"{"agent":{"type":"ppo","networks":{"policy":{"layers":[8]},"value":{"layers":[8]}}},
 "trainer":{"type":"on_policy","n_epochs":1},
 "environment":{"type":"cartpole","n_envs":2},
 "run":{"n_transitions":1500}}"#;

fn data_files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".dat"))
        .collect();
    v.sort();
    v
}

#[test]
fn single_run_writes_one_score_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small", SMALL);
    let out = dir.path().join("out");
    let o = drlkit(&[
        "train",
        "--config",
        &cfg,
        "--runs",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    assert!(o.stderr.is_empty());
    assert_eq!(data_files(&out), vec!["small_seed0.dat"]);
}

#[test]
fn three_runs_add_an_averaged_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small", SMALL);
    let out = dir.path().join("out");
    let o = drlkit(&[
        "train",
        "--config",
        &cfg,
        "--runs",
        "3",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stderr.is_empty());
    assert_eq!(
        data_files(&out),
        vec![
            "small_avg.dat",
            "small_seed7.dat",
            "small_seed8.dat",
            "small_seed9.dat"
        ]
    );
    let avg = fs::read_to_string(out.join("small_avg.dat")).unwrap();
    for line in avg.lines().filter(|l| !l.starts_with('#')) {
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(|c| c.parse().unwrap())
            .collect();
        assert_eq!(cols.len(), 8);
        assert_eq!(cols[1], 3.0);
        assert!(cols[6] <= cols[5] && cols[5] <= cols[7]);
    }
}

#[test]
fn parallel_runs_match_sequential_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(drlkit(&[
        "train",
        "--config",
        &cfg,
        "--runs",
        "2",
        "--out",
        a.to_str().unwrap()
    ])
    .status
    .success());
    let o = drlkit(&[
        "train",
        "--config",
        &cfg,
        "--runs",
        "2",
        "--parallel-runs",
        "--out",
        b.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    for f in data_files(&a) {
        assert_eq!(
            fs::read(a.join(&f)).unwrap(),
            fs::read(b.join(&f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn usage_errors_exit_two() {
    let o = drlkit(&["train"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert_eq!(
        drlkit(&["train", "--config", "x.json", "--runs", "0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(drlkit(&["average"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = drlkit(&["train", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope.json"));

    let bad = write_config(
        dir.path(),
        "bad",
        r#"{"agent":{"type":"dqn"},"trainer":{"type":"on_policy"},"environment":{"type":"cartpole"}}"#,
    );
    let o = drlkit(&["train", "--config", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));

    let out = dir.path().join("avg.dat");
    let o = drlkit(&[
        "average",
        missing.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

fn averaged_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(|c| c.parse().unwrap()).collect())
        .collect()
}

#[test]
fn averaging_one_file_or_duplicates_gives_a_zero_width_band() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("s.dat");
    fs::write(
        &f,
        "# seed 0\n10 1 -5.000000e+00 0.000\n30 2 5.000000e+00 0.000\n70 3 1.000000e+00 0.000\n",
    )
    .unwrap();
    let fs_ = f.to_str().unwrap();
    for files in [vec![fs_], vec![fs_, fs_, fs_]] {
        let out = dir.path().join("avg.dat");
        let mut args = vec!["average"];
        args.extend(&files);
        args.extend(["--out", out.to_str().unwrap()]);
        let o = drlkit(&args);
        assert!(o.status.success() && o.stderr.is_empty());
        let rows = averaged_rows(&out);
        assert_eq!(rows.len(), 61);
        for r in rows {
            assert_eq!(r[1], files.len() as f64);
            assert_eq!((r[6], r[7]), (r[5], r[5]));
        }
    }
}

#[test]
fn averaging_matches_a_hand_computed_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.dat");
    let b = dir.path().join("b.dat");
    fs::write(&a, "0 1 0.0 0\n10 2 10.0 0\n").unwrap();
    fs::write(&b, "0 1 4.0 0\n5 2 3.0 0\n10 3 2.0 0\n").unwrap();
    let out = dir.path().join("avg.dat");
    let o = drlkit(&[
        "average",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--grid-points",
        "3",
        "--window",
        "2",
    ]);
    assert!(o.status.success());
    // grid 0, 5, 10; a -> 0, 5, 10; b -> 4, 3, 2; trailing pairs then mean +- population std
    assert_eq!(
        averaged_rows(&out),
        vec![
            vec![0.0, 2.0, 0.0, 4.0, 2.0, 2.0, 0.0, 4.0],
            vec![5.0, 2.0, 2.5, 3.5, 3.0, 3.0, 2.5, 3.5],
            vec![10.0, 2.0, 2.5, 7.5, 5.0, 5.0, 2.5, 7.5],
        ]
    );
}
