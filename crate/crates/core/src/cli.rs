//! Command-line front end: `train`, `eval`, `recommend`, `synth` and
//! `gradcheck`.
//!
//! Exit codes are 0 on success, 1 on a runtime failure and 2 on a usage
//! error. Failures print one line `error<TAB>kind<TAB>message` on stderr.
//!
//! `--config FILE` reads `key=value` lines as defaults for the subcommand's
//! flags (`dim=32` stands for `--dim 32`); flags given on the command line
//! win.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    generate_synthetic, load_checkpoint, parse_feature_values, parse_features, parse_interactions, save_checkpoint,
    Checkpoint, SynthConfig,
};
use crate::error::{Error, Result};
use crate::eval::{build_queries, evaluate, split, GcnPhrScorer};
use crate::graph::EntityKind;
use crate::model::{Aggregation, Fusion, ModelConfig, Variant};
use crate::training::{fit, fixture, gradient_check, TrainConfig};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "gcnphr", version, about = "Personalized hashtag recommendation for micro-videos")]
#[command(args_override_self = true)]
pub struct Cli {
    /// File of key=value lines supplying flag defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint; the epoch log goes to stdout.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out test split.
    Eval(EvalArgs),
    /// Rank hashtags for one user and one video.
    Recommend(RecommendArgs),
    /// Generate a planted synthetic dataset.
    Synth(SynthArgs),
    /// Compare analytic and finite-difference gradients on a fixture graph.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub interactions: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub l2: f64,
    #[arg(long, default_value_t = 256, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value = "nn")]
    pub fusion: Fusion,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    /// How a user's video messages are combined.
    #[arg(long, default_value = "sum")]
    pub aggregate: Aggregation,
    #[arg(long, default_value_t = 0.01)]
    pub leaky_slope: f64,
    #[arg(long, default_value_t = 0.1)]
    pub init_std: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub neg_per_positive: u64,
    /// Train/validation/test proportions over (user, video) pairs.
    #[arg(long, value_delimiter = ',', num_args = 3, default_value = "0.8,0.1,0.1")]
    pub split: Vec<f64>,
    /// Negatives sampled per validation query.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub val_neg: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub interactions: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Negatives sampled per test query.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pub neg: u64,
    #[arg(long, value_delimiter = ',', default_value = "5,10", value_parser = clap::value_parser!(u64).range(1..))]
    pub k: Vec<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads for scoring; the report does not depend on it.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub threads: Option<u64>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["video", "feature_row"])))]
pub struct RecommendArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature file covering every video of the checkpoint's vocabulary.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub user: String,
    /// A known video, scored with its row from --features.
    #[arg(long)]
    pub video: Option<String>,
    /// Comma-separated features of a new video.
    #[arg(long, allow_hyphen_values = true)]
    pub feature_row: Option<String>,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    pub topk: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub users: usize,
    #[arg(long, default_value_t = 500)]
    pub videos: usize,
    #[arg(long, default_value_t = 40)]
    pub hashtags: usize,
    #[arg(long, default_value_t = 4)]
    pub interests: usize,
    #[arg(long, default_value_t = 16)]
    pub d_v: usize,
    #[arg(long, default_value_t = 3.0)]
    pub tags_per_video: f64,
    #[arg(long, default_value_t = 0.3)]
    pub multi_interest: f64,
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
    /// Hashtags per interest a user draws from; 0 means all.
    #[arg(long, default_value_t = 4)]
    pub user_vocab: usize,
    #[arg(long, default_value_t = 0.5)]
    pub secondary_weight: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: u64,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value = "full")]
    pub variant: Variant,
    #[arg(long, default_value = "nn")]
    pub fusion: Fusion,
    #[arg(long, default_value = "sum")]
    pub aggregate: Aggregation,
    #[arg(long, default_value_t = 0.01)]
    pub leaky_slope: f64,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
    /// Ran to completion but the result is a failure (e.g. gradcheck).
    Check(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Output goes to the process's stdout and stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(args, &mut stdout.lock(), &mut stderr.lock())
}

/// [`main_with_args`] with explicit output streams.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match with_config_defaults(args) {
        Ok(a) => a,
        Err(e) => return report(err, &Failure::Runtime(e)),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Recommend(a) => cmd_recommend(&a, out),
        Command::Synth(a) => cmd_synth(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    };
    match result {
        Ok(()) => 0,
        Err(f) => report(err, &f),
    }
}

fn report(err: &mut dyn Write, failure: &Failure) -> i32 {
    let (code, kind, msg) = match failure {
        Failure::Usage(m) => (2, "usage", m.clone()),
        Failure::Runtime(e) => (1, e.kind(), e.to_string()),
        Failure::Check(m) => (1, "check_failed", m.clone()),
    };
    let msg = msg.replace(['\n', '\t'], " ");
    let _ = writeln!(err, "error\t{kind}\t{msg}");
    code
}

const SUBCOMMANDS: [&str; 5] = ["train", "eval", "recommend", "synth", "gradcheck"];

/// Removes `--config FILE` from `args` and inserts the file's entries as
/// flags right after the subcommand, ahead of the user's own flags.
fn with_config_defaults(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut config = None;
    let mut iter = args.into_iter();
    while let Some(a) = iter.next() {
        if a == "--config" {
            match iter.next() {
                Some(p) => config = Some(PathBuf::from(p)),
                // Leave it for clap to report the missing value.
                None => rest.push(a),
            }
        } else if let Some(p) = a.to_str().and_then(|s| s.strip_prefix("--config=")) {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else { return Ok(rest) };
    let defaults = read_config(&path)?;
    let Some(at) = rest.iter().position(|a| a.to_str().is_some_and(|s| SUBCOMMANDS.contains(&s))) else {
        return Ok(rest);
    };
    // Clap validates every occurrence, so overridden defaults are dropped
    // rather than passed along.
    let given = |key: &str| {
        rest[at + 1..].iter().any(|a| {
            a.to_str()
                .and_then(|s| s.strip_prefix("--"))
                .is_some_and(|s| s == key || s.starts_with(&format!("{key}=")))
        })
    };
    let flags: Vec<OsString> = defaults
        .into_iter()
        .filter(|(k, _)| !given(k))
        .map(|(k, v)| OsString::from(format!("--{k}={v}")))
        .collect();
    rest.splice(at + 1..at + 1, flags);
    Ok(rest)
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |reason: &str| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason: reason.to_string(),
        };
        let (k, v) = line.split_once('=').ok_or_else(|| parse_err("expected key=value"))?;
        let k = k.trim().trim_start_matches("--").replace('_', "-");
        if k.is_empty() || k == "config" {
            return Err(parse_err("missing or reserved key"));
        }
        entries.push((k, v.trim().to_string()));
    }
    Ok(entries)
}

fn usage_if_invalid(r: Result<()>) -> std::result::Result<(), Failure> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn write_line(out: &mut dyn Write, line: std::fmt::Arguments<'_>) -> Result<()> {
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let train_config = TrainConfig {
        learning_rate: a.lr,
        l2_lambda: a.l2,
        batch_size: a.batch as usize,
        epochs: a.epochs,
        seed: a.seed,
        neg_per_positive: a.neg_per_positive as usize,
        init_std: a.init_std,
    };
    usage_if_invalid(train_config.validate())?;
    let ratios: [f64; 3] = [a.split[0], a.split[1], a.split[2]];
    if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Failure::Usage(format!("bad split ratios {ratios:?}")));
    }
    let mut model_config = ModelConfig {
        fusion: a.fusion,
        variant: a.variant,
        leaky_slope: a.leaky_slope,
        aggregate_videos: a.aggregate,
        ..ModelConfig::new(a.dim as usize, 1)
    };
    usage_if_invalid(model_config.validate())?;

    let data = parse_interactions(&a.interactions)?;
    let features = parse_features(&a.features, None, &data.vocab.videos)?;
    model_config.d_v = features.cols();
    let parts = split(&data.triples(), ratios, a.seed)?;
    let graph = data.graph_with(&parts.train)?;
    let validation = build_queries(&parts.validation, &graph, a.val_neg as usize, a.seed)?;

    let mut write_err = None;
    let outcome = fit(&graph, &features, model_config, &train_config, &validation, |log| {
        if write_err.is_none() {
            write_err = write_line(out, format_args!("{log}")).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let checkpoint = Checkpoint {
        model: outcome.model,
        vocab: data.vocab.clone(),
        train_triples: parts.train,
        uploads: data.uploads(),
        split_seed: a.seed,
        split_ratios: ratios,
    };
    save_checkpoint(&a.out, &checkpoint)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let ks: Vec<usize> = a.k.iter().map(|&k| k as usize).collect();
    let ck = load_checkpoint(&a.model)?;
    let data = parse_interactions(&a.interactions)?;
    ck.vocab.check_matches(&data.vocab)?;
    let parts = split(&data.triples(), ck.split_ratios, ck.split_seed)?;
    if parts.train != ck.train_triples {
        return Err(Error::VocabularyMismatch(
            "interactions do not reproduce the checkpoint's training split".into(),
        )
        .into());
    }
    let features = parse_features(&a.features, Some(ck.model.config.d_v), &data.vocab.videos)?;
    let graph = ck.graph()?;
    let queries = build_queries(&parts.test, &graph, a.neg as usize, a.seed)?;
    let scorer = GcnPhrScorer::new(&ck.model, &graph, &features);
    let report = match a.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| Failure::Usage(format!("cannot start {n} threads: {e}")))?
            .install(|| evaluate(&scorer, &queries, &ks))?,
        None => evaluate(&scorer, &queries, &ks)?,
    };
    for m in &report.metrics {
        for (name, value) in [("precision", m.precision), ("recall", m.recall), ("accuracy", m.accuracy)] {
            write_line(out, format_args!("{name}\t{}\t{value}", m.k))?;
        }
    }
    Ok(())
}

fn cmd_recommend(a: &RecommendArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let ck = load_checkpoint(&a.model)?;
    let d_v = ck.model.config.d_v;
    let features = parse_features(&a.features, Some(d_v), &ck.vocab.videos)?;
    let graph = ck.graph()?;
    let user = ck.vocab.users.get(&a.user).ok_or_else(|| Error::UnknownEntity {
        kind: EntityKind::User.name(),
        name: a.user.clone(),
    })?;
    let video_feature = match (&a.video, &a.feature_row) {
        (Some(v), _) => {
            let k = ck.vocab.videos.get(v).ok_or_else(|| Error::UnknownEntity {
                kind: EntityKind::Video.name(),
                name: v.clone(),
            })?;
            features.row(k).to_vec()
        }
        (None, Some(row)) => parse_feature_values(row, d_v)
            .map_err(|reason| Failure::Usage(format!("--feature-row: {reason}")))?,
        (None, None) => return Err(Failure::Usage("need --video or --feature-row".into())),
    };
    let candidates: Vec<usize> = (0..graph.n_hashtags()).collect();
    let ranked = ck
        .model
        .rank_hashtags(&graph, &features, user, &video_feature, &candidates, a.topk as usize)?;
    for (j, score) in ranked {
        let name = ck.vocab.hashtags.name(j).unwrap_or("?");
        write_line(out, format_args!("{name}\t{score}"))?;
    }
    Ok(())
}

fn cmd_synth(a: &SynthArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    let config = SynthConfig {
        n_users: a.users,
        n_videos: a.videos,
        n_hashtags: a.hashtags,
        n_interests: a.interests,
        d_v: a.d_v,
        tags_per_video: a.tags_per_video,
        multi_interest_fraction: a.multi_interest,
        noise_std: a.noise,
        user_vocab_size: a.user_vocab,
        secondary_weight: a.secondary_weight,
        seed: a.seed,
    };
    usage_if_invalid(config.validate())?;
    let dataset = generate_synthetic(&config)?;
    dataset.write_to(&a.out_dir)?;
    for name in ["interactions.tsv", "features.tsv", "planted.tsv"] {
        write_line(out, format_args!("{}", a.out_dir.join(name).display()))?;
    }
    Ok(())
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    if !(a.eps > 0.0 && a.eps.is_finite()) {
        return Err(Failure::Usage(format!("--eps must be positive, got {}", a.eps)));
    }
    let (graph, features) = fixture();
    let config = ModelConfig {
        fusion: a.fusion,
        variant: a.variant,
        leaky_slope: a.leaky_slope,
        aggregate_videos: a.aggregate,
        ..ModelConfig::new(a.dim as usize, features.cols())
    };
    usage_if_invalid(config.validate())?;
    let err = gradient_check(&graph, &features, config, a.eps)?;
    write_line(out, format_args!("max_rel_err\t{err:e}"))?;
    if err < GRADCHECK_THRESHOLD {
        Ok(())
    } else {
        Err(Failure::Check(format!(
            "max relative error {err:e} >= {GRADCHECK_THRESHOLD:e}"
        )))
    }
}
