use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gcnphr::data::{load_checkpoint, parse_features, parse_interactions, save_checkpoint, Checkpoint};
use gcnphr::eval::{build_queries, split};
use gcnphr::model::{GcnPhr, ModelConfig, ModelParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gcnphr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcnphr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    /// A small synthetic dataset written to a fresh directory.
    fn new(seed: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let o = gcnphr(&[
            "synth", "--out-dir", dir.path().to_str().unwrap(), "--users", "12", "--videos", "80",
            "--hashtags", "16", "--interests", "2", "--d-v", "6", "--seed", seed,
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        Workspace { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_string()
    }

    fn train(&self, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train".to_string(),
            "--interactions".into(),
            self.p("interactions.tsv"),
            "--features".into(),
            self.p("features.tsv"),
            "--out".into(),
            self.p(out),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        gcnphr(&args)
    }
}

fn parse_report(text: &str) -> Vec<(String, usize, f64)> {
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 3, "{l}");
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn missing_interactions_is_usage_error() {
    let o = gcnphr(&["train", "--features", "f.tsv", "--out", "m.ckpt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--interactions"));
}

#[test]
fn unknown_subcommand_and_bad_values_are_usage_errors() {
    for args in [
        &["frobnicate"][..],
        &["train", "--interactions", "i", "--features", "f", "--out", "o", "--fusion", "max"],
        &["recommend", "--model", "m", "--features", "f", "--user", "u0"],
        &["gradcheck", "--eps", "-1"],
    ] {
        let o = gcnphr(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn runtime_errors_exit_one_with_machine_line() {
    let ws = Workspace::new("1");
    let o = gcnphr(&["eval", "--model", &ws.p("missing.ckpt"), "--interactions", &ws.p("interactions.tsv"), "--features", &ws.p("features.tsv")]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    let fields: Vec<&str> = err.trim_end().split('\t').collect();
    assert_eq!(fields.len(), 3, "{err}");
    assert_eq!(fields[..2], ["error", "io"]);
}

/// The model `train --epochs 0` should produce for this workspace.
fn initialized(ws: &Workspace, dim: usize, seed: u64, std: f64) -> GcnPhr {
    let counts = parse_interactions(&ws.path("interactions.tsv")).unwrap().vocab.counts();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GcnPhr::init(ModelConfig::new(dim, 6), counts.users, counts.hashtags, std, &mut rng).unwrap()
}

#[test]
fn zero_epochs_writes_initialized_params() {
    let ws = Workspace::new("2");
    let o = ws.train("m.ckpt", &["--epochs", "0", "--dim", "5", "--seed", "9", "--init-std", "0.2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert!(load_checkpoint(&ws.path("m.ckpt")).unwrap().model == initialized(&ws, 5, 9, 0.2));
}

#[test]
fn train_log_has_one_tab_separated_line_per_epoch() {
    let ws = Workspace::new("3");
    let o = ws.train("m.ckpt", &["--epochs", "4", "--dim", "4", "--batch", "32", "--val-neg", "20"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 4);
    for (n, line) in lines.iter().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        assert_eq!(f.len(), 4);
        assert_eq!(f[0].parse::<usize>().unwrap(), n + 1);
        for v in &f[1..] {
            assert!(v.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn recommend_matches_library_ranking() {
    let ws = Workspace::new("4");
    let o = ws.train("m.ckpt", &["--epochs", "3", "--dim", "6", "--batch", "16", "--lr", "0.01"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let ck = load_checkpoint(&ws.path("m.ckpt")).unwrap();
    let graph = ck.graph().unwrap();
    let features = parse_features(&ws.path("features.tsv"), Some(6), &ck.vocab.videos).unwrap();
    let all: Vec<usize> = (0..graph.n_hashtags()).collect();

    let user = ck.vocab.users.get("u3").unwrap();
    let video = ck.vocab.videos.get("v20").unwrap();
    let want = ck.model.rank_hashtags(&graph, &features, user, features.row(video), &all, 7).unwrap();
    let o = gcnphr(&["recommend", "--model", &ws.p("m.ckpt"), "--features", &ws.p("features.tsv"), "--user", "u3", "--video", "v20", "--topk", "7"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let got: Vec<(String, f64)> = stdout(&o)
        .lines()
        .map(|l| {
            let (name, score) = l.split_once('\t').unwrap();
            (name.to_string(), score.parse().unwrap())
        })
        .collect();
    let want: Vec<(String, f64)> = want
        .into_iter()
        .map(|(j, s)| (ck.vocab.hashtags.name(j).unwrap().to_string(), s))
        .collect();
    assert_eq!(got, want);

    let row = [0.25, -1.0, 0.5, 0.0, 2.0, -0.125];
    let text = row.map(|x| x.to_string()).join(",");
    let want = ck.model.rank_hashtags(&graph, &features, user, &row, &all, 1).unwrap();
    let o = gcnphr(&["recommend", "--model", &ws.p("m.ckpt"), "--features", &ws.p("features.tsv"), "--user", "u3", "--feature-row", &text, "--topk", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert_eq!(line.lines().count(), 1);
    assert!(line.starts_with(&format!("{}\t", ck.vocab.hashtags.name(want[0].0).unwrap())));

    let o = gcnphr(&["recommend", "--model", &ws.p("m.ckpt"), "--features", &ws.p("features.tsv"), "--user", "nobody", "--video", "v20"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\tunknown_entity\t"));
}

/// Writes a checkpoint whose parameters are all zero: every score ties, so
/// each query's ranking is its candidates in ascending index order.
fn zero_checkpoint(ws: &Workspace, path: &Path, seed: u64) -> Checkpoint {
    let data = parse_interactions(&ws.path("interactions.tsv")).unwrap();
    let ratios = [0.6, 0.2, 0.2];
    let parts = split(&data.triples(), ratios, seed).unwrap();
    let cfg = ModelConfig::new(3, 6);
    let counts = data.vocab.counts();
    let ck = Checkpoint {
        model: GcnPhr::new(cfg, ModelParams::zeros(&cfg, counts.users, counts.hashtags)).unwrap(),
        vocab: data.vocab.clone(),
        train_triples: parts.train,
        uploads: data.uploads(),
        split_seed: seed,
        split_ratios: ratios,
    };
    save_checkpoint(path, &ck).unwrap();
    ck
}

#[test]
fn eval_of_tied_checkpoint_matches_closed_form() {
    let ws = Workspace::new("5");
    let ck = zero_checkpoint(&ws, &ws.path("zero.ckpt"), 21);
    let o = gcnphr(&["eval", "--model", &ws.p("zero.ckpt"), "--interactions", &ws.p("interactions.tsv"), "--features", &ws.p("features.tsv"), "--neg", "5", "--k", "5,10", "--seed", "8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = parse_report(&stdout(&o));
    assert_eq!(report.len(), 6);

    let data = parse_interactions(&ws.path("interactions.tsv")).unwrap();
    let parts = split(&data.triples(), ck.split_ratios, ck.split_seed).unwrap();
    let queries = build_queries(&parts.test, &ck.graph().unwrap(), 5, 8).unwrap();
    for k in [5usize, 10] {
        let (mut p, mut r, mut a) = (0.0, 0.0, 0.0);
        for q in &queries {
            let hits = q.candidates.iter().take(k).filter(|j| q.ground_truth.contains(j)).count() as f64;
            p += hits / k as f64;
            r += hits / q.ground_truth.len() as f64;
            a += if hits > 0.0 { 1.0 } else { 0.0 };
        }
        let n = queries.len() as f64;
        for (name, want) in [("precision", p / n), ("recall", r / n), ("accuracy", a / n)] {
            let got = report.iter().find(|(m, kk, _)| m == name && *kk == k).unwrap().2;
            assert_eq!(got, want, "{name}@{k}");
        }
    }
}

#[test]
fn eval_k5_prints_three_lines_and_is_repeatable() {
    let ws = Workspace::new("6");
    zero_checkpoint(&ws, &ws.path("zero.ckpt"), 2);
    let run = || gcnphr(&["eval", "--model", &ws.p("zero.ckpt"), "--interactions", &ws.p("interactions.tsv"), "--features", &ws.p("features.tsv"), "--k", "5", "--seed", "4"]);
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", stderr(&a));
    let names: Vec<String> = parse_report(&stdout(&a)).into_iter().map(|(m, k, _)| format!("{m}@{k}")).collect();
    assert_eq!(names, ["precision@5", "recall@5", "accuracy@5"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn eval_rejects_other_dataset() {
    let (ws, other) = (Workspace::new("7"), Workspace::new("8"));
    zero_checkpoint(&ws, &ws.path("zero.ckpt"), 2);
    let o = gcnphr(&["eval", "--model", &ws.p("zero.ckpt"), "--interactions", &other.p("interactions.tsv"), "--features", &other.p("features.tsv")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).starts_with("error\tvocabulary_mismatch\t"), "{}", stderr(&o));
}

#[test]
fn trained_model_beats_random_ranking_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n).to_str().unwrap().to_string();
    let o = gcnphr(&["synth", "--out-dir", &p(""), "--seed", "1"]);
    assert!(o.status.success());
    let o = gcnphr(&[
        "train", "--interactions", &p("interactions.tsv"), "--features", &p("features.tsv"), "--out", &p("m.ckpt"),
        "--dim", "16", "--lr", "0.01", "--batch", "16", "--epochs", "30", "--init-std", "0.3", "--seed", "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = gcnphr(&["eval", "--model", &p("m.ckpt"), "--interactions", &p("interactions.tsv"), "--features", &p("features.tsv"), "--k", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recall = parse_report(&stdout(&o)).into_iter().find(|(m, _, _)| m == "recall").unwrap().2;
    // 40 hashtags, every one a candidate: a random ranking recalls 5/40.
    assert!(recall > 5.0 / 40.0, "R@5 {recall}");
}

#[test]
fn gradcheck_binary_passes_every_variant() {
    for variant in ["full", "no-attn", "no-user-on-hashtag", "no-hashtag-on-user"] {
        for fusion in ["nn", "sum"] {
            let o = gcnphr(&["gradcheck", "--variant", variant, "--fusion", fusion]);
            assert_eq!(o.status.code(), Some(0), "{variant}/{fusion}: {}", stderr(&o));
            let value: f64 = stdout(&o).trim().split('\t').nth(1).unwrap().parse().unwrap();
            assert!(value < 1e-4);
        }
    }
}

#[test]
fn config_file_defaults_reach_the_command() {
    let ws = Workspace::new("9");
    let cfg = ws.path("train.conf");
    std::fs::write(&cfg, "# shared settings\ndim=5\nepochs=0\nseed=9\ninit_std=0.2\n").unwrap();
    let o = ws.train("m.ckpt", &["--config", cfg.to_str().unwrap(), "--seed", "10"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(load_checkpoint(&ws.path("m.ckpt")).unwrap().model == initialized(&ws, 5, 10, 0.2));
}
