//! Pairwise (BPR) training with negative sampling and plain SGD.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::{self, EvalQuery, GcnPhrScorer};
use crate::graph::{build_graph, Counts, TaggingTriple, TripartiteGraph};
use crate::model::{output, GcnPhr, ModelConfig, ModelParams};
use crate::numerics::{axpy, dot_unchecked, finite_difference_check, sigmoid, softplus, Matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// λ in `λ‖Θ‖²`.
    pub l2_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Negatives drawn per positive triple each epoch.
    pub neg_per_positive: usize,
    /// Standard deviation of the Gaussian initializer.
    pub init_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            l2_lambda: 1e-4,
            batch_size: 256,
            epochs: 20,
            seed: 0,
            neg_per_positive: 1,
            init_std: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0) || !self.l2_lambda.is_finite() {
            return bad(format!("l2 must be >= 0, got {}", self.l2_lambda));
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1".into());
        }
        if self.neg_per_positive == 0 {
            return bad("negatives per positive must be >= 1".into());
        }
        if !(self.init_std > 0.0) || !self.init_std.is_finite() {
            return bad(format!("init std must be > 0, got {}", self.init_std));
        }
        Ok(())
    }
}

/// `(user, video)` with a used hashtag and one the user did not put on that video.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrainTriplet {
    pub user: usize,
    pub video: usize,
    pub positive: usize,
    pub negative: usize,
}

const MAX_REJECTIONS: usize = 10_000;

/// Uniform hashtag outside ℋᵢ,ₖ, by rejection.
pub fn sample_negative<R: Rng + ?Sized>(
    graph: &TripartiteGraph,
    user: usize,
    video: usize,
    rng: &mut R,
) -> Result<usize> {
    let used = graph.hashtags_of_user_video(user, video);
    let n = graph.n_hashtags();
    if n == 0 {
        return Err(Error::Degenerate("graph has no hashtags".into()));
    }
    for _ in 0..MAX_REJECTIONS {
        let j = rng.random_range(0..n);
        if used.binary_search(&j).is_err() {
            return Ok(j);
        }
    }
    Err(Error::Degenerate(format!(
        "no negative hashtag found for user {user}, video {video} ({} of {n} hashtags used)",
        used.len()
    )))
}

/// A uniformly drawn tagging triple with a uniformly drawn negative.
pub fn sample_triplet<R: Rng + ?Sized>(graph: &TripartiteGraph, rng: &mut R) -> Result<TrainTriplet> {
    let triples = graph.triples();
    if triples.is_empty() {
        return Err(Error::Degenerate("graph has no tagging triples".into()));
    }
    let t = triples[rng.random_range(0..triples.len())];
    let negative = sample_negative(graph, t.user, t.video, rng)?;
    Ok(TrainTriplet {
        user: t.user,
        video: t.video,
        positive: t.hashtag,
        negative,
    })
}

/// One pass over every tagging triple in shuffled order, with fresh negatives.
pub fn epoch_triplets<R: Rng + ?Sized>(
    graph: &TripartiteGraph,
    neg_per_positive: usize,
    rng: &mut R,
) -> Result<Vec<TrainTriplet>> {
    let mut out = Vec::with_capacity(graph.triples().len() * neg_per_positive);
    for t in graph.triples() {
        for _ in 0..neg_per_positive {
            out.push(TrainTriplet {
                user: t.user,
                video: t.video,
                positive: t.hashtag,
                negative: sample_negative(graph, t.user, t.video, rng)?,
            });
        }
    }
    out.shuffle(rng);
    Ok(out)
}

/// `−ln σ(pos − neg)` and its derivatives with respect to both scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BprLoss {
    pub loss: f64,
    pub d_pos: f64,
    pub d_neg: f64,
}

pub fn bpr_loss(pos_score: f64, neg_score: f64) -> BprLoss {
    let delta = pos_score - neg_score;
    let g = sigmoid(-delta);
    BprLoss {
        loss: softplus(-delta),
        d_pos: -g,
        d_neg: g,
    }
}

/// Mean BPR loss over `triplets` and its gradient with respect to every
/// parameter (regularization excluded).
pub fn loss_and_gradient(
    model: &GcnPhr,
    graph: &TripartiteGraph,
    features: &Matrix,
    triplets: &[TrainTriplet],
) -> (f64, ModelParams) {
    let mut grad = model.params.zeros_like();
    if triplets.is_empty() {
        return (0.0, grad);
    }
    let trace = model.trace(
        graph,
        features,
        triplets.iter().map(|t| t.user),
        triplets.iter().flat_map(|t| [t.positive, t.negative]),
    );
    let d = model.config.dim;
    let slope = model.config.leaky_slope;
    let out = &model.params.output;
    let scale = 1.0 / triplets.len() as f64;

    let mut d_users: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut d_hashtags: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut total = 0.0;

    for t in triplets {
        let u = &trace.users[&t.user].fused;
        let h_pos = &trace.hashtags[&t.positive].fused;
        let h_neg = &trace.hashtags[&t.negative].fused;
        let feature = features.row(t.video);

        let v_bar = output::video_forward(out, feature, u, slope);
        let p_bar = output::hashtag_forward(out, h_pos, u, slope);
        let n_bar = output::hashtag_forward(out, h_neg, u, slope);
        let pos = dot_unchecked(&p_bar.out, &v_bar.out);
        let neg = dot_unchecked(&n_bar.out, &v_bar.out);
        let l = bpr_loss(pos, neg);
        total += l.loss;

        let mut d_v_bar = vec![0.0; d];
        axpy(scale * l.d_pos, &p_bar.out, &mut d_v_bar);
        axpy(scale * l.d_neg, &n_bar.out, &mut d_v_bar);
        let d_p_bar: Vec<f64> = v_bar.out.iter().map(|x| scale * l.d_pos * x).collect();
        let d_n_bar: Vec<f64> = v_bar.out.iter().map(|x| scale * l.d_neg * x).collect();

        let d_u = d_users.entry(t.user).or_insert_with(|| vec![0.0; d]);
        output::video_backward(out, &v_bar, feature, u, &d_v_bar, slope, &mut grad.output, d_u);
        let d_hp = d_hashtags.entry(t.positive).or_insert_with(|| vec![0.0; d]);
        output::hashtag_backward(
            out, &p_bar, h_pos, u, &d_p_bar, slope, &mut grad.output, d_u, d_hp,
        );
        let d_hn = d_hashtags.entry(t.negative).or_insert_with(|| vec![0.0; d]);
        output::hashtag_backward(
            out, &n_bar, h_neg, u, &d_n_bar, slope, &mut grad.output, d_u, d_hn,
        );
    }

    model.backward(&trace, features, &d_users, &d_hashtags, &mut grad);
    (total * scale, grad)
}

/// Mean BPR loss over `triplets` plus `λ‖Θ‖²`.
pub fn objective(
    model: &GcnPhr,
    graph: &TripartiteGraph,
    features: &Matrix,
    triplets: &[TrainTriplet],
    l2_lambda: f64,
) -> f64 {
    let trace = model.trace(
        graph,
        features,
        triplets.iter().map(|t| t.user),
        triplets.iter().flat_map(|t| [t.positive, t.negative]),
    );
    let slope = model.config.leaky_slope;
    let out = &model.params.output;
    let mut total = 0.0;
    for t in triplets {
        let u = &trace.users[&t.user].fused;
        let v_bar = output::video_forward(out, features.row(t.video), u, slope).out;
        let p = output::hashtag_forward(out, &trace.hashtags[&t.positive].fused, u, slope).out;
        let n = output::hashtag_forward(out, &trace.hashtags[&t.negative].fused, u, slope).out;
        total += bpr_loss(dot_unchecked(&p, &v_bar), dot_unchecked(&n, &v_bar)).loss;
    }
    let data = if triplets.is_empty() {
        0.0
    } else {
        total / triplets.len() as f64
    };
    data + l2_lambda * model.params.sum_squares()
}

/// One SGD update on `batch`. Returns the mean BPR loss before the update.
pub fn step(
    model: &mut GcnPhr,
    graph: &TripartiteGraph,
    features: &Matrix,
    batch: &[TrainTriplet],
    config: &TrainConfig,
) -> Result<f64> {
    let (loss, mut grad) = loss_and_gradient(model, graph, features, batch);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("batch loss {loss}")));
    }
    grad.add_scaled(2.0 * config.l2_lambda, &model.params);
    if let Some(name) = grad.first_non_finite() {
        return Err(Error::NonFiniteGradient(name.to_string()));
    }
    model.params.add_scaled(-config.learning_rate, &grad);
    if let Some(name) = model.params.first_non_finite() {
        return Err(Error::NonFiniteGradient(format!("{name} (after update)")));
    }
    Ok(loss)
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// R@5 on the validation queries; NaN when there are none.
    pub val_recall_at_5: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.3}",
            self.epoch, self.train_loss, self.val_recall_at_5, self.seconds
        )
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Parameters from the epoch with the best validation R@5.
    pub model: GcnPhr,
    pub log: Vec<EpochLog>,
    /// 0 when no epoch ran (initial parameters returned).
    pub best_epoch: usize,
}

/// Trains a model on `graph`, keeping the epoch with the best validation R@5.
///
/// With no validation queries the final epoch is kept. `on_epoch` sees each
/// log line as soon as the epoch finishes.
pub fn fit(
    graph: &TripartiteGraph,
    features: &Matrix,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    validation: &[EvalQuery],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    train_config.validate()?;
    if graph.triples().is_empty() {
        return Err(Error::Degenerate("training split has no tagging triples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    let mut model = GcnPhr::init(
        model_config,
        graph.n_users(),
        graph.n_hashtags(),
        train_config.init_std,
        &mut rng,
    )?;

    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_recall = f64::NEG_INFINITY;
    let mut log = Vec::with_capacity(train_config.epochs);

    for epoch in 1..=train_config.epochs {
        let started = Instant::now();
        let triplets = epoch_triplets(graph, train_config.neg_per_positive, &mut rng)?;
        let mut weighted = 0.0;
        for batch in triplets.chunks(train_config.batch_size) {
            weighted += step(&mut model, graph, features, batch, train_config)? * batch.len() as f64;
        }
        let val_recall_at_5 = if validation.is_empty() {
            f64::NAN
        } else {
            let scorer = GcnPhrScorer::new(&model, graph, features);
            eval::evaluate(&scorer, validation, &[5])?.metrics[0].recall
        };
        let entry = EpochLog {
            epoch,
            train_loss: weighted / triplets.len() as f64,
            val_recall_at_5,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&entry);
        log.push(entry);

        if validation.is_empty() || val_recall_at_5 > best_recall {
            best_recall = val_recall_at_5;
            best = model.clone();
            best_epoch = epoch;
        }
    }

    Ok(FitOutcome {
        model: best,
        log,
        best_epoch,
    })
}

/// The 3-user / 5-video / 4-hashtag graph with 6-dimensional features used
/// for gradient checks.
pub fn fixture() -> (TripartiteGraph, Matrix) {
    let tags: [(usize, usize, &[usize]); 5] = [
        (0, 0, &[0, 1]),
        (0, 1, &[0, 2]),
        (1, 2, &[1]),
        (1, 3, &[1, 3]),
        (2, 4, &[2, 3, 0]),
    ];
    let mut triples = Vec::new();
    let mut uploads = Vec::new();
    for (u, v, hs) in tags {
        uploads.push((u, v));
        triples.extend(hs.iter().map(|&h| TaggingTriple::new(u, v, h)));
    }
    let graph = build_graph(Counts::new(3, 4, 5), &triples, &uploads)
        .expect("fixture graph is valid");
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let data = (0..5 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let features = Matrix::from_vec(5, 6, data).expect("fixture features are finite");
    (graph, features)
}

/// One triplet per tagging triple; the negative is the lowest-indexed hashtag
/// the user did not put on that video.
pub fn deterministic_triplets(graph: &TripartiteGraph) -> Vec<TrainTriplet> {
    graph
        .triples()
        .iter()
        .filter_map(|t| {
            let used = graph.hashtags_of_user_video(t.user, t.video);
            (0..graph.n_hashtags())
                .find(|j| used.binary_search(j).is_err())
                .map(|negative| TrainTriplet {
                    user: t.user,
                    video: t.video,
                    positive: t.hashtag,
                    negative,
                })
        })
        .collect()
}

const GRADCHECK_SEED: u64 = 0x5eed;
const GRADCHECK_STD: f64 = 0.3;
const GRADCHECK_L2: f64 = 1e-2;

/// Maximum relative error between analytic and central-difference gradients
/// of the regularized mean BPR loss, over every parameter.
///
/// Parameters are drawn from a fixed seed; triplets come from
/// [`deterministic_triplets`]. Intended for tiny graphs such as [`fixture`].
pub fn gradient_check(
    graph: &TripartiteGraph,
    features: &Matrix,
    model_config: ModelConfig,
    eps: f64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(GRADCHECK_SEED);
    let model = GcnPhr::init(
        model_config,
        graph.n_users(),
        graph.n_hashtags(),
        GRADCHECK_STD,
        &mut rng,
    )?;
    let triplets = deterministic_triplets(graph);
    gradient_check_model(&model, graph, features, &triplets, GRADCHECK_L2, eps)
}

/// [`gradient_check`] for explicit parameters and triplets.
pub fn gradient_check_model(
    model: &GcnPhr,
    graph: &TripartiteGraph,
    features: &Matrix,
    triplets: &[TrainTriplet],
    l2_lambda: f64,
    eps: f64,
) -> Result<f64> {
    let (_, mut grad) = loss_and_gradient(model, graph, features, triplets);
    grad.add_scaled(2.0 * l2_lambda, &model.params);
    let f = |p: &ModelParams| {
        let probe = GcnPhr {
            config: model.config,
            params: p.clone(),
        };
        objective(&probe, graph, features, triplets, l2_lambda)
    };
    finite_difference_check(f, &model.params, &grad, eps)
}
