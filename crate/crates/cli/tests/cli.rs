use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn gnnrec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnnrec"))
        .args(args)
        .env_remove("GNNREC_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gnnrec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = gnnrec(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

const HAND: &str =
    "1::10::5::0\n1::20::3::0\n2::10::4::0\n2::30::1::0\n3::20::2::0\n3::30::5::0\n3::40::4::0\n";

/// 50 users over 40 items; user `u` rates the 16 items with `(u + i) % 5 < 2`.
fn synthetic() -> String {
    let mut s = String::new();
    for u in 0..50 {
        for i in 0..40 {
            if (u + i) % 5 < 2 {
                s += &format!(
                    "{}::{}::{}::{}\n",
                    u + 1,
                    i + 1,
                    1 + (u * 7 + i) % 5,
                    u * 100 + i
                );
            }
        }
    }
    s
}

struct Run {
    _dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new(ratings: &str, extra: &str) -> Run {
        let dir = TempDir::new().unwrap();
        let data = dir.path().join("ratings.dat");
        fs::write(&data, ratings).unwrap();
        let out = dir.path().join("out");
        let config = dir.path().join("run.conf");
        fs::write(
            &config,
            format!(
                "dataset.path = {}\nrun.output_dir = {}\nmodel.dim = 8\nsampler.size = 3\n\
                 training.epochs = 3\ntraining.batch_size = 64\ntraining.learning_rate = 0.01\n\
                 eval.negatives = 9\n{extra}",
                data.display(),
                out.display()
            ),
        )
        .unwrap();
        Run {
            _dir: dir,
            config,
            out,
        }
    }

    fn cmd(&self, args: &[&str]) -> Vec<String> {
        let mut v = vec![
            args[0].to_string(),
            "-c".into(),
            self.config.display().to_string(),
        ];
        v.extend(args[1..].iter().map(|s| s.to_string()));
        v
    }

    fn ok(&self, args: &[&str]) -> String {
        let v = self.cmd(args);
        ok(&v.iter().map(String::as_str).collect::<Vec<_>>())
    }

    fn err(&self, args: &[&str]) -> String {
        let v = self.cmd(args);
        err(&v.iter().map(String::as_str).collect::<Vec<_>>())
    }

    fn read(&self, name: &str) -> Vec<u8> {
        fs::read(self.out.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
    }
}

fn stat(stats: &str, key: &str) -> String {
    stats
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no `{key}` in {stats}"))
        .to_string()
}

#[test]
fn ingest_stats_match_hand_counts() {
    let run = Run::new(HAND, "split.test_fraction = 0.3\n");
    let printed = run.ok(&["ingest"]);
    let stats = String::from_utf8(run.read("stats.txt")).unwrap();
    assert_eq!(printed, stats);
    assert_eq!(stat(&stats, "users"), "3");
    assert_eq!(stat(&stats, "items"), "4");
    assert_eq!(stat(&stats, "edges"), "7");
    assert_eq!(stat(&stats, "density").parse::<f64>().unwrap(), 7.0 / 12.0);
    // one held-out edge per user
    assert_eq!(stat(&stats, "train_edges"), "4");
    assert_eq!(stat(&stats, "test_edges"), "3");
    assert!(run.out.join("ingest.resolved.conf").exists());
}

#[test]
fn ingest_is_reproducible() {
    let a = Run::new(&synthetic(), "");
    let b = Run::new(&synthetic(), "");
    a.ok(&["ingest"]);
    b.ok(&["ingest"]);
    for name in ["train_graph.txt", "id_maps.tsv", "test_edges.tsv"] {
        assert_eq!(a.read(name), b.read(name), "{name}");
    }
}

#[test]
fn ingest_reports_parse_errors_with_line() {
    let run = Run::new("1::2::5::0\n1::x::5::0\n", "");
    let e = run.err(&["ingest"]);
    assert!(e.contains("ratings.dat:2"), "{e}");
}

fn loss_values(csv: &[u8]) -> Vec<f64> {
    let text = String::from_utf8(csv.to_vec()).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("epoch,mean_loss,wall_time_s"));
    lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn train_evaluate_compare() {
    let run = Run::new(&synthetic(), "");
    run.ok(&["ingest"]);
    run.ok(&["train"]);
    run.ok(&["train", "--model.kind", "bpr"]);
    for kind in ["gnn", "bpr"] {
        let losses = loss_values(&run.read(&format!("loss_{kind}.csv")));
        assert_eq!(losses.len(), 3);
        assert!(
            losses.iter().all(|l| l.is_finite() && *l > 0.0),
            "{losses:?}"
        );
    }
    assert_ne!(run.read("model_gnn.snap"), run.read("model_bpr.snap"));

    let shown = run.ok(&["evaluate"]);
    assert!(shown.contains("gnn"));
    let first = run.read("report_gnn.csv");
    run.ok(&["evaluate"]);
    assert_eq!(run.read("report_gnn.csv"), first);
    run.ok(&["evaluate", "--model.kind=bpr"]);

    let header = String::from_utf8(first)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(
        header,
        "model,dataset,auc,ndcg@1,ndcg@2,ndcg@10,n_users,protocol"
    );

    let gnn = run.out.join("report_gnn.csv");
    let bpr = run.out.join("report_bpr.csv");
    let merged_path = run.out.join("merged.csv");
    run.ok(&[
        "compare",
        gnn.to_str().unwrap(),
        bpr.to_str().unwrap(),
        "--out",
        merged_path.to_str().unwrap(),
    ]);
    let merged = fs::read_to_string(&merged_path).unwrap();
    let rows: Vec<&str> = merged.lines().collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0], header);
    assert!(rows[1].starts_with("gnn,") && rows[2].starts_with("bpr,"));

    // a single report passes through unchanged
    run.ok(&["compare", gnn.to_str().unwrap()]);
    assert_eq!(run.read("comparison.csv"), run.read("report_gnn.csv"));
}

#[test]
fn compare_rejects_mismatched_columns() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    fs::write(&a, "model,auc\ngnn,0.9\n").unwrap();
    fs::write(&b, "model,ndcg@1\nbpr,0.5\n").unwrap();
    let out = dir.path().join("c.csv");
    let e = err(&[
        "compare",
        a.to_str().unwrap(),
        b.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(e.contains("columns differ"), "{e}");
}

#[test]
fn zero_epochs_writes_initial_snapshot() {
    let run = Run::new(&synthetic(), "training.epochs = 0\n");
    run.ok(&["ingest"]);
    run.ok(&["train"]);
    assert!(!run.read("model_gnn.snap").is_empty());
    assert!(loss_values(&run.read("loss_gnn.csv")).is_empty());
}

#[test]
fn evaluate_rejects_dimension_mismatch() {
    let run = Run::new(&synthetic(), "training.epochs = 1\n");
    run.ok(&["ingest"]);
    run.ok(&["train"]);
    let e = run.err(&["evaluate", "--model.dim", "16"]);
    assert!(e.contains("dimension 8"), "{e}");
}

#[test]
fn recommend_unseen_items() {
    let run = Run::new(&synthetic(), "training.epochs = 1\n");
    run.ok(&["ingest"]);
    run.ok(&["train", "--model.kind", "bpr"]);
    let args = ["recommend", "--user", "7", "-k", "5", "--model.kind", "bpr"];
    let listed = run.ok(&args);
    let rows: Vec<(String, f64)> = listed
        .lines()
        .map(|l| {
            let (k, p) = l.split_once('\t').unwrap();
            (k.to_string(), p.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.windows(2).all(|w| w[0].1 >= w[1].1));

    // training items of user 7, from the graph snapshot and id maps
    let maps = String::from_utf8(run.read("id_maps.tsv")).unwrap();
    let item_key = |idx: &str| -> String {
        maps.lines()
            .filter_map(|l| l.strip_prefix("i\t"))
            .find_map(|l| {
                l.split_once('\t')
                    .filter(|(i, _)| *i == idx)
                    .map(|(_, k)| k.to_string())
            })
            .unwrap()
    };
    let user_idx = maps
        .lines()
        .filter_map(|l| l.strip_prefix("u\t"))
        .find_map(|l| {
            l.split_once('\t')
                .filter(|(_, k)| *k == "7")
                .map(|(i, _)| i.to_string())
        })
        .unwrap();
    let graph = String::from_utf8(run.read("train_graph.txt")).unwrap();
    let adj = graph
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{user_idx}\t")))
        .unwrap();
    let seen: Vec<String> = adj
        .split(',')
        .map(|e| item_key(e.split(':').next().unwrap()))
        .collect();
    assert!(!seen.is_empty());
    assert!(rows.iter().all(|(k, _)| !seen.contains(k)));

    assert!(run
        .ok(&["recommend", "--user", "7", "-k", "0", "--model.kind", "bpr"])
        .is_empty());
    let e = run.err(&["recommend", "--user", "nobody", "--model.kind", "bpr"]);
    assert!(e.contains("nobody"), "{e}");
}

#[test]
fn echoed_config_reproduces_run() {
    let run = Run::new(&synthetic(), "training.epochs = 2\n");
    run.ok(&["ingest"]);
    run.ok(&["train", "--model.aggregator", "pooling"]);
    let echoed = run.out.join("train.resolved.conf");
    let text = fs::read_to_string(&echoed).unwrap();
    assert!(text.contains("model.aggregator = pooling"));
    assert!(text.contains("training.optimizer = adam"));
    let snap = run.read("model_gnn.snap");
    let copy = run.out.parent().unwrap().join("echo.conf");
    fs::copy(&echoed, &copy).unwrap();
    ok(&["train", "-c", copy.to_str().unwrap()]);
    assert_eq!(run.read("model_gnn.snap"), snap);
}

#[test]
fn config_from_environment() {
    let run = Run::new(HAND, "");
    let out = Command::new(env!("CARGO_BIN_EXE_gnnrec"))
        .arg("ingest")
        .env("GNNREC_CONFIG", &run.config)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(Path::new(&run.out).join("stats.txt").exists());
}

#[test]
fn errors_exit_nonzero() {
    let run = Run::new(HAND, "");
    assert!(run
        .err(&["ingest", "--model.width", "3"])
        .contains("unknown key"));
    assert!(run.err(&["train"]).contains("ingest"));
    assert!(run
        .err(&["ingest", "--training.epochs"])
        .contains("no value"));
}
