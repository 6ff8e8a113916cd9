use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn novo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_novo")).args(args).output().expect("run novo")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Selection and held-out planted captures sharing the same planted heads.
fn planted_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let sel = dir.join("sel.jsonl");
    let held = dir.join("held.jsonl");
    for (path, seed, n, prefix) in [(&sel, "1", "60", "sel"), (&held, "2", "150", "held")] {
        let o = novo(&[
            "synth", "planted", "--seed", seed, "--heads-seed", "7", "--n-samples", n, "--id-prefix", prefix, "--noise",
            "0.6", "--out", p(path),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    (sel, held)
}

/// Three questions, two heads. Head 0 read with MAX picks options 0, 2, 0;
/// gold is 0, 1, 0, so a dictator on head 0 scores 2/3.
const TOY: &str = r#"{"format":"novo-capture","version":1,"model_id":"toy","dataset_id":"toy","L":1,"H":2,"has_positions":false,"has_attention":false}
{"sample_id":"q1","category":"a","correct_index":0,"options":[{"norms":[3.0,1.0]},{"norms":[1.0,2.0]},{"norms":[2.0,0.5]}]}
{"sample_id":"q2","category":"b","correct_index":1,"options":[{"norms":[1.0,1.0]},{"norms":[2.0,5.0]},{"norms":[4.0,0.0]}]}
{"sample_id":"q3","category":"a","correct_index":0,"options":[{"norms":[0.5,1.0]},{"norms":[0.25,2.0]}]}
"#;

const DICTATOR: &str = r#"{"geometry":{"layers":1,"heads_per_layer":2,"model_id":"toy"},"indices":[0],"indicators":["max"],
"provenance":{"variant":"custom","dataset_id":"other","sample_ids":["elsewhere"]}}"#;

#[test]
fn dictator_accuracy_matches_hand_count() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("toy.jsonl");
    let voters = dir.path().join("v.json");
    fs::write(&cap, TOY).unwrap();
    fs::write(&voters, DICTATOR).unwrap();
    let o = novo(&["eval", "--capture", p(&cap), "--voters", p(&voters), "--by-category"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("accuracy=0.6667"));
    assert!(out.contains("a: accuracy=1.0000 (2/2)"), "{out}");
    assert!(out.contains("b: accuracy=0.0000 (0/1)"), "{out}");
}

#[test]
fn select_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (sel, held) = planted_pair(dir.path());
    let v = dir.path().join("v.json");
    let o = novo(&["select", "--capture", p(&sel), "--percentile", "96", "--seed", "3", "--out", p(&v)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("selected "));
    assert!(v.exists());

    let report = dir.path().join("r.json");
    let o = novo(&["eval", "--capture", p(&held), "--voters", p(&v), "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let acc: f64 = stdout(&o).trim().strip_prefix("accuracy=").unwrap().parse().unwrap();
    assert!(acc > 0.8, "{acc}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(json["format"], "novo-report");
    assert_eq!(json["seed"], 3);
    assert!(json["result"].get("per_category").is_none());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (sel, _) = planted_pair(dir.path());
    let v = dir.path().join("v.json");

    let too_many = novo(&["select", "--capture", p(&sel), "--n-samples", "1000", "--out", p(&v)]);
    assert_eq!(too_many.status.code(), Some(1));
    assert!(stderr(&too_many).contains("n_samples"));

    assert_eq!(novo(&["select", "--nope"]).status.code(), Some(1));

    let o = novo(&["select", "--capture", p(&sel), "--out", p(&v)]);
    assert!(o.status.success());
    let overlap = novo(&["eval", "--capture", p(&sel), "--voters", p(&v)]);
    assert_eq!(overlap.status.code(), Some(1));
    assert!(stderr(&overlap).contains("overlap"));
    let allowed = novo(&["eval", "--capture", p(&sel), "--voters", p(&v), "--allow-overlap"]);
    assert!(allowed.status.success());

    let bad = dir.path().join("bad.jsonl");
    let corrupted = TOY.replace(r#""correct_index":1"#, r#""correct_index":7"#);
    fs::write(&bad, corrupted).unwrap();
    let o = novo(&["validate", "--capture", p(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("gold index out of range"), "{}", stdout(&o));
    assert_eq!(novo(&["select", "--capture", p(&bad), "--out", p(&v)]).status.code(), Some(2));

    fs::write(&bad, "{\"format\":\"novo-capture\",\"version\":1,").unwrap();
    assert_eq!(novo(&["validate", "--capture", p(&bad)]).status.code(), Some(2));

    let good = dir.path().join("toy.jsonl");
    fs::write(&good, TOY).unwrap();
    assert_eq!(novo(&["validate", "--capture", p(&good)]).status.code(), Some(0));
    // voters for a 256-head model against a 2-head capture
    let o = novo(&["eval", "--capture", p(&good), "--voters", p(&v), "--allow-overlap"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn novo_f_warns_about_ignored_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (sel, held) = planted_pair(dir.path());
    let v = dir.path().join("f.json");
    let o = novo(&["select", "--capture", p(&sel), "--variant", "novo-f", "--percentile", "90", "--out", p(&v)]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("ignores"));
    let o = novo(&["eval", "--capture", p(&held), "--voters", p(&v), "--mode", "weighted"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (sel, held) = planted_pair(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("g{threads}.csv"));
        let stats = dir.path().join(format!("s{threads}.csv"));
        let v = dir.path().join(format!("v{threads}.json"));
        let runs = [
            vec!["--threads", threads, "grid", "--capture", p(&sel), "--heldout", p(&held), "--n-samples", "5,20",
                "--percentiles", "85,96", "--repeats", "4", "--seed", "9", "--out", p(&out)],
            vec!["--threads", threads, "stats", "--capture", p(&sel), "--heldout", p(&held), "--runs", "20", "--out", p(&stats)],
            vec!["--threads", threads, "select", "--capture", p(&sel), "--out", p(&v)],
        ];
        for args in runs {
            let o = novo(&args);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        outputs.push([out, stats, v].map(|f| fs::read(f).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
    let grid = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert!(grid.starts_with("# novo-report v1 grid seed=9\nn_samples,percentile,mean_accuracy\n"));
    assert_eq!(grid.lines().count(), 2 + 4);
}

#[test]
fn single_cell_grid_equals_select_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let (sel, held) = planted_pair(dir.path());
    let g = dir.path().join("g.csv");
    let o = novo(&["grid", "--capture", p(&sel), "--heldout", p(&held), "--n-samples", "20", "--percentiles", "90",
        "--repeats", "1", "--seed", "5", "--out", p(&g)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let grid = fs::read_to_string(&g).unwrap();
    let cell: f64 = grid.lines().nth(2).unwrap().split(',').nth(2).unwrap().parse().unwrap();

    let v = dir.path().join("v.json");
    novo(&["select", "--capture", p(&sel), "--n-samples", "20", "--percentile", "90", "--seed", "5", "--out", p(&v)]);
    let r = dir.path().join("r.json");
    novo(&["eval", "--capture", p(&held), "--voters", p(&v), "--out", p(&r)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(json["result"]["accuracy"].as_f64().unwrap(), cell);
}

#[test]
fn stats_emits_seven_columns() {
    let dir = tempfile::tempdir().unwrap();
    let (sel, held) = planted_pair(dir.path());
    let s = dir.path().join("s.csv");
    let runs = dir.path().join("runs.csv");
    let o = novo(&["stats", "--capture", p(&sel), "--heldout", p(&held), "--runs", "200", "--n-samples", "10",
        "--per-run", p(&runs), "--out", p(&s)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&s).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[1], "mean,std,min,25q,50q,75q,max");
    let values: Vec<f64> = lines[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(values.len(), 7);
    assert!(values[2] <= values[3] && values[3] <= values[4] && values[4] <= values[5] && values[5] <= values[6]);
    assert_eq!(fs::read_to_string(&runs).unwrap().lines().count(), 2 + 200);
}

#[test]
fn analyses_and_ablations_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cap = dir.path().join("k.jsonl");
    let o = novo(&["synth", "clustered", "--n-samples", "120", "--out", p(&cap)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v = dir.path().join("v.json");
    let o = novo(&["select", "--capture", p(&cap), "--draw", "all", "--percentile", "1", "--out", p(&v)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cases: Vec<(Vec<&str>, &str, usize)> = vec![
        (vec!["analyze", "curve"], "k,head,layer,index,direction,accuracy,correlation,smoothed_correlation", 265),
        (vec!["analyze", "hamming"], "voter,L0H0", 265),
        (vec!["analyze", "clusters", "--k", "6"], "head,layer,index,direction,cluster", 265),
        (vec!["analyze", "ranked"], "rank,head,layer,index,direction,accuracy", 265),
        (vec!["analyze", "difficulty"], "sample_id,category,difficulty", 120),
        (vec!["ablate", "clusters", "--k", "6"], "strategy,removed,remaining,last_removed,cluster,accuracy", 2 * 265),
    ];
    for (i, (cmd, header, rows)) in cases.into_iter().enumerate() {
        let out = dir.path().join(format!("{i}.csv"));
        let mut args = cmd.clone();
        args.extend(["--capture", p(&cap), "--voters", p(&v), "--out", p(&out)]);
        let o = novo(&args);
        assert!(o.status.success(), "{cmd:?}: {}", stderr(&o));
        let text = fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# novo-report v1"));
        assert!(lines[1].starts_with(header), "{cmd:?}: {}", lines[1]);
        assert_eq!(lines.len() - 2, rows, "{cmd:?}");
    }
}

#[test]
fn compare_reports_delta() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    fs::write(&a, TOY).unwrap();
    // same ids, q2's gold moved so the dictator now gets it right
    fs::write(&b, TOY.replace(r#""correct_index":1"#, r#""correct_index":2"#)).unwrap();
    let v = dir.path().join("v.json");
    fs::write(&v, DICTATOR).unwrap();
    let o = novo(&["ablate", "compare", "--a", p(&a), "--b", p(&b), "--voters", p(&v)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "n=3 acc_a=0.6667 acc_b=1.0000 delta=+0.3333");
}
