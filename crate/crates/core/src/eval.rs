//! Splitting, candidate construction, ranking metrics and baselines.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{TaggingTriple, TripartiteGraph};
use crate::model::{output, sort_ranked, GcnPhr};
use crate::numerics::{axpy, dot_unchecked, leaky_relu, Matrix};
use crate::training::{epoch_triplets, TrainConfig};

/// Tagging triples partitioned by `(user, video)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<TaggingTriple>,
    pub validation: Vec<TaggingTriple>,
    pub test: Vec<TaggingTriple>,
    /// Pairs moved from validation/test into training because their user had
    /// no training pair.
    pub moved_to_train: usize,
}

/// Shuffles distinct `(user, video)` pairs and assigns them to
/// train/validation/test in the given proportions. Every triple of a pair
/// lands in the same part.
pub fn split(triples: &[TaggingTriple], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) || ratios.iter().sum::<f64>() <= 0.0 {
        return Err(Error::InvalidConfig(format!("bad split ratios {ratios:?}")));
    }
    let mut by_pair: BTreeMap<(usize, usize), Vec<TaggingTriple>> = BTreeMap::new();
    for t in triples {
        by_pair.entry((t.user, t.video)).or_default().push(*t);
    }
    if by_pair.len() < 3 {
        return Err(Error::Degenerate(format!(
            "need at least 3 (user, video) pairs to split, found {}",
            by_pair.len()
        )));
    }
    let mut pairs: Vec<(usize, usize)> = by_pair.keys().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pairs.shuffle(&mut rng);

    let total: f64 = ratios.iter().sum();
    let n = pairs.len();
    let n_val = ((ratios[1] / total * n as f64).round() as usize).max(1);
    let n_test = ((ratios[2] / total * n as f64).round() as usize).max(1);
    if n_val + n_test >= n {
        return Err(Error::Degenerate(format!(
            "{n} pairs cannot fill {n_val} validation and {n_test} test pairs and a training part"
        )));
    }
    let (val_pairs, rest) = pairs.split_at(n_val);
    let (test_pairs, train_pairs) = rest.split_at(n_test);

    let mut train: Vec<(usize, usize)> = train_pairs.to_vec();
    let seen: BTreeSet<usize> = train.iter().map(|p| p.0).collect();
    let mut moved = 0;
    let mut keep = |part: &[(usize, usize)]| -> Vec<(usize, usize)> {
        let mut kept = Vec::new();
        for &p in part {
            if seen.contains(&p.0) {
                kept.push(p);
            } else {
                train.push(p);
                moved += 1;
            }
        }
        kept
    };
    let val_pairs = keep(val_pairs);
    let test_pairs = keep(test_pairs);
    if moved > 0 {
        log::warn!("moved {moved} held-out pairs of users without training data into training");
    }

    let collect = |ps: &[(usize, usize)]| -> Vec<TaggingTriple> {
        let mut out: Vec<TaggingTriple> = ps.iter().flat_map(|p| by_pair[p].iter().copied()).collect();
        out.sort();
        out
    };
    Ok(Split {
        train: collect(&train),
        validation: collect(&val_pairs),
        test: collect(&test_pairs),
        moved_to_train: moved,
    })
}

/// One ranking query: the hashtags the user put on a held-out video plus
/// sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalQuery {
    pub user: usize,
    pub video: usize,
    /// Sorted.
    pub ground_truth: Vec<usize>,
    /// Ground truth plus negatives, sorted.
    pub candidates: Vec<usize>,
    /// Negatives actually drawn; fewer than requested when the vocabulary
    /// runs out.
    pub n_negatives: usize,
}

/// Builds one query per held-out `(user, video)` pair, in sorted pair order.
pub fn build_queries(
    held_out: &[TaggingTriple],
    graph: &TripartiteGraph,
    n_neg: usize,
    seed: u64,
) -> Result<Vec<EvalQuery>> {
    if n_neg == 0 {
        return Err(Error::InvalidConfig("need at least one negative per query".into()));
    }
    let n_h = graph.n_hashtags();
    let mut gt: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for t in held_out {
        if t.hashtag >= n_h {
            return Err(Error::IndexOutOfRange {
                kind: "hashtag",
                index: t.hashtag,
                count: n_h,
            });
        }
        gt.entry((t.user, t.video)).or_default().insert(t.hashtag);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut short = 0;
    let queries = gt
        .into_iter()
        .map(|((user, video), tags)| {
            let eligible: Vec<usize> = (0..n_h).filter(|j| !tags.contains(j)).collect();
            let negatives: Vec<usize> = if eligible.len() <= n_neg {
                if eligible.len() < n_neg {
                    short += 1;
                }
                eligible
            } else {
                index::sample(&mut rng, eligible.len(), n_neg)
                    .into_iter()
                    .map(|x| eligible[x])
                    .collect()
            };
            let ground_truth: Vec<usize> = tags.into_iter().collect();
            let mut candidates = ground_truth.clone();
            candidates.extend(&negatives);
            candidates.sort_unstable();
            EvalQuery {
                user,
                video,
                ground_truth,
                candidates,
                n_negatives: negatives.len(),
            }
        })
        .collect();
    if short > 0 {
        log::warn!("{short} queries received fewer than {n_neg} negatives");
    }
    Ok(queries)
}

fn check_metric_args(ground_truth: &[usize], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    if ground_truth.is_empty() {
        return Err(Error::EmptyInput("ground truth"));
    }
    Ok(())
}

fn hits(ranked: &[usize], ground_truth: &[usize], k: usize) -> usize {
    let gt: BTreeSet<usize> = ground_truth.iter().copied().collect();
    ranked.iter().take(k).filter(|j| gt.contains(j)).count()
}

/// `|top-K ∩ GT| / K`.
pub fn precision_at_k(ranked: &[usize], ground_truth: &[usize], k: usize) -> Result<f64> {
    check_metric_args(ground_truth, k)?;
    Ok(hits(ranked, ground_truth, k) as f64 / k as f64)
}

/// `|top-K ∩ GT| / |GT|`.
pub fn recall_at_k(ranked: &[usize], ground_truth: &[usize], k: usize) -> Result<f64> {
    check_metric_args(ground_truth, k)?;
    let gt: BTreeSet<usize> = ground_truth.iter().copied().collect();
    Ok(hits(ranked, ground_truth, k) as f64 / gt.len() as f64)
}

/// 1 when at least one ground-truth hashtag is in the top K.
pub fn accuracy_at_k(ranked: &[usize], ground_truth: &[usize], k: usize) -> Result<f64> {
    check_metric_args(ground_truth, k)?;
    Ok(if hits(ranked, ground_truth, k) > 0 { 1.0 } else { 0.0 })
}

/// Anything that can score candidate hashtags for a `(user, video)` pair.
pub trait Scorer: Sync {
    fn score_candidates(&self, user: usize, video: usize, candidates: &[usize]) -> Vec<f64>;
}

/// Candidates in ranked order: descending score, ties by ascending index.
pub fn rank<S: Scorer + ?Sized>(scorer: &S, user: usize, video: usize, candidates: &[usize]) -> Vec<usize> {
    let scores = scorer.score_candidates(user, video, candidates);
    let mut scored: Vec<(usize, f64)> = candidates.iter().copied().zip(scores).collect();
    sort_ranked(&mut scored);
    scored.into_iter().map(|(j, _)| j).collect()
}

/// GCN-PHR scoring with every fused user and hashtag vector precomputed.
pub struct GcnPhrScorer<'a> {
    model: &'a GcnPhr,
    features: &'a Matrix,
    users: Vec<Vec<f64>>,
    /// `W_h 𝐡ⱼ` per hashtag.
    hashtag_part: Vec<Vec<f64>>,
}

impl<'a> GcnPhrScorer<'a> {
    pub fn new(model: &'a GcnPhr, graph: &TripartiteGraph, features: &'a Matrix) -> Self {
        let trace = model.full_trace(graph, features);
        let users = trace.users.into_values().map(|s| s.fused).collect();
        let hashtag_part = trace
            .hashtags
            .into_values()
            .map(|s| model.params.output.hashtag_weight.mul_vec(&s.fused))
            .collect();
        GcnPhrScorer {
            model,
            features,
            users,
            hashtag_part,
        }
    }

    /// Scores for an arbitrary video feature vector.
    pub fn score_feature(&self, user: usize, feature: &[f64], candidates: &[usize]) -> Vec<f64> {
        let p = &self.model.params.output;
        let slope = self.model.config.leaky_slope;
        let u = &self.users[user];
        let v_bar = output::video_forward(p, feature, u, slope).out;
        let user_part = p.hashtag_user.mul_vec(u);
        candidates
            .iter()
            .map(|&j| {
                let mut pre = self.hashtag_part[j].clone();
                axpy(1.0, &user_part, &mut pre);
                axpy(1.0, p.hashtag_bias.data(), &mut pre);
                dot_unchecked(&leaky_relu(&pre, slope), &v_bar)
            })
            .collect()
    }
}

impl Scorer for GcnPhrScorer<'_> {
    fn score_candidates(&self, user: usize, video: usize, candidates: &[usize]) -> Vec<f64> {
        self.score_feature(user, self.features.row(video), candidates)
    }
}

/// Scores a hashtag by how many training tagging triples use it.
pub struct PopularityScorer {
    counts: Vec<usize>,
}

impl PopularityScorer {
    pub fn new(graph: &TripartiteGraph) -> Self {
        PopularityScorer {
            counts: (0..graph.n_hashtags()).map(|j| graph.hashtag_frequency(j)).collect(),
        }
    }
}

impl Scorer for PopularityScorer {
    fn score_candidates(&self, _user: usize, _video: usize, candidates: &[usize]) -> Vec<f64> {
        candidates.iter().map(|&j| self.counts[j] as f64).collect()
    }
}

/// User-hashtag matrix factorization trained with BPR; ignores the video.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixFactorization {
    pub users: Matrix,
    pub hashtags: Matrix,
}

impl MatrixFactorization {
    /// Trains on the graph's tagging triples with the same sampling, batching
    /// and regularization as the main model.
    pub fn fit(graph: &TripartiteGraph, dim: usize, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidConfig("dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = rand_distr::Normal::new(0.0, config.init_std)
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let mut draw = |rows: usize| {
            let data = (0..rows * dim).map(|_| rand_distr::Distribution::sample(&normal, &mut rng)).collect();
            Matrix::from_vec(rows, dim, data)
        };
        let mut mf = MatrixFactorization {
            users: draw(graph.n_users())?,
            hashtags: draw(graph.n_hashtags())?,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
        for _ in 0..config.epochs {
            let triplets = epoch_triplets(graph, config.neg_per_positive, &mut rng)?;
            for batch in triplets.chunks(config.batch_size) {
                let mut gu = Matrix::zeros(mf.users.rows(), dim);
                let mut gh = Matrix::zeros(mf.hashtags.rows(), dim);
                let scale = 1.0 / batch.len() as f64;
                for t in batch {
                    let u = mf.users.row(t.user);
                    let p = mf.hashtags.row(t.positive);
                    let n = mf.hashtags.row(t.negative);
                    let l = crate::training::bpr_loss(dot_unchecked(u, p), dot_unchecked(u, n));
                    axpy(scale * l.d_pos, p, gu.row_mut(t.user));
                    axpy(scale * l.d_neg, n, gu.row_mut(t.user));
                    axpy(scale * l.d_pos, u, gh.row_mut(t.positive));
                    axpy(scale * l.d_neg, u, gh.row_mut(t.negative));
                }
                gu.add_scaled(2.0 * config.l2_lambda, &mf.users);
                gh.add_scaled(2.0 * config.l2_lambda, &mf.hashtags);
                mf.users.add_scaled(-config.learning_rate, &gu);
                mf.hashtags.add_scaled(-config.learning_rate, &gh);
            }
            if !mf.users.is_finite() || !mf.hashtags.is_finite() {
                return Err(Error::NonFiniteGradient("matrix factorization".into()));
            }
        }
        Ok(mf)
    }
}

impl Scorer for MatrixFactorization {
    fn score_candidates(&self, user: usize, _video: usize, candidates: &[usize]) -> Vec<f64> {
        let u = self.users.row(user);
        candidates
            .iter()
            .map(|&j| dot_unchecked(u, self.hashtags.row(j)))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsAtK {
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QueryResult {
    pub user: usize,
    pub video: usize,
    pub ranked: Vec<usize>,
    /// Hits in the top K, aligned with the requested K values.
    pub hits: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    /// Means over scored queries, one entry per requested K.
    pub metrics: Vec<MetricsAtK>,
    pub queries: Vec<QueryResult>,
    /// Queries skipped for having no ground truth.
    pub dropped: usize,
}

impl EvalReport {
    pub fn at(&self, k: usize) -> Option<&MetricsAtK> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

/// Ranks every query's candidates and averages P@K, R@K and A@K.
///
/// Queries are scored in parallel; results are reduced in query order so the
/// report does not depend on the thread count.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, queries: &[EvalQuery], ks: &[usize]) -> Result<EvalReport> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidConfig(format!("K values must be >= 1, got {ks:?}")));
    }
    let scored: Vec<&EvalQuery> = queries.iter().filter(|q| !q.ground_truth.is_empty()).collect();
    let dropped = queries.len() - scored.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} queries with empty ground truth");
    }
    if scored.is_empty() {
        return Err(Error::EmptyInput("evaluation queries"));
    }
    let results: Vec<QueryResult> = scored
        .par_iter()
        .map(|q| {
            let ranked = rank(scorer, q.user, q.video, &q.candidates);
            let hits = ks.iter().map(|&k| hits(&ranked, &q.ground_truth, k)).collect();
            QueryResult {
                user: q.user,
                video: q.video,
                ranked,
                hits,
            }
        })
        .collect();

    let n = scored.len() as f64;
    let metrics = ks
        .iter()
        .enumerate()
        .map(|(idx, &k)| {
            let (mut p, mut r, mut a) = (0.0, 0.0, 0.0);
            for (res, q) in results.iter().zip(&scored) {
                let h = res.hits[idx] as f64;
                p += h / k as f64;
                r += h / q.ground_truth.len() as f64;
                a += if h > 0.0 { 1.0 } else { 0.0 };
            }
            MetricsAtK {
                k,
                precision: p / n,
                recall: r / n,
                accuracy: a / n,
            }
        })
        .collect();
    Ok(EvalReport {
        metrics,
        queries: results,
        dropped,
    })
}

/// Expected R@K of a uniformly random ranking: `min(K, |C|) / |C|` averaged
/// over queries.
pub fn random_recall_at_k(queries: &[EvalQuery], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidConfig("K must be >= 1".into()));
    }
    if queries.is_empty() {
        return Err(Error::EmptyInput("evaluation queries"));
    }
    let total: f64 = queries
        .iter()
        .map(|q| k.min(q.candidates.len()) as f64 / q.candidates.len() as f64)
        .sum();
    Ok(total / queries.len() as f64)
}
