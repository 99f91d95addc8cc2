//! The GCN-PHR forward pass.
//!
//! A single propagation layer produces a fused user vector 𝐮ᵢ (from the
//! user's hashtags and attention-weighted videos) and a fused hashtag vector
//! 𝐡ⱼ (the mirror image over users and videos). Layer-0 inputs are the
//! learnable ID embeddings. A candidate hashtag is scored against a video by
//! the dot product of their user-conditioned output vectors.

pub mod output;
mod params;
mod propagate;
mod trace;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use params::{FusionParams, ModelParams, OutputParams, Side, SideParams};
pub use propagate::{AttentionGroup, EntityState};
pub use trace::ForwardTrace;

use crate::error::{Error, Result};
use crate::graph::{EntityKind, TripartiteGraph};
use crate::numerics::{dot_unchecked, leaky_relu, Matrix};
use propagate::SideInputs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Fusion {
    /// Concatenate then a fully connected layer with activation.
    NeuralNet,
    /// Two linear maps summed, no activation.
    TransformSum,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// No attention on either side.
    NoAttention,
    /// Hashtag side aggregates videos without user attention.
    NoUserPrefOnHashtag,
    /// User side aggregates videos without hashtag attention.
    NoHashtagGuidanceOnUser,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Aggregation {
    Sum,
    Mean,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoAttention,
        Variant::NoUserPrefOnHashtag,
        Variant::NoHashtagGuidanceOnUser,
    ];

    /// Whether α (hashtag-guided attention over a user's videos) is active.
    pub fn user_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::NoUserPrefOnHashtag)
    }

    /// Whether β (user-guided attention over a hashtag's videos) is active.
    pub fn hashtag_attention(self) -> bool {
        matches!(self, Variant::Full | Variant::NoHashtagGuidanceOnUser)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAttention => "no-attn",
            Variant::NoUserPrefOnHashtag => "no-user-on-hashtag",
            Variant::NoHashtagGuidanceOnUser => "no-hashtag-on-user",
        }
    }
}

impl Fusion {
    pub fn name(self) -> &'static str {
        match self {
            Fusion::NeuralNet => "nn",
            Fusion::TransformSum => "sum",
        }
    }
}

impl Aggregation {
    pub fn name(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

impl FromStr for Fusion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn" => Ok(Fusion::NeuralNet),
            "sum" => Ok(Fusion::TransformSum),
            _ => Err(Error::InvalidConfig(format!("unknown fusion {s:?}"))),
        }
    }
}

impl FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            _ => Err(Error::InvalidConfig(format!("unknown aggregation {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    /// Embedding size D.
    pub dim: usize,
    /// Video feature length D_v.
    pub d_v: usize,
    pub fusion: Fusion,
    pub variant: Variant,
    pub leaky_slope: f64,
    pub aggregate_videos: Aggregation,
}

impl ModelConfig {
    pub fn new(dim: usize, d_v: usize) -> Self {
        ModelConfig {
            dim,
            d_v,
            fusion: Fusion::NeuralNet,
            variant: Variant::Full,
            leaky_slope: 0.01,
            aggregate_videos: Aggregation::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.d_v == 0 {
            return Err(Error::InvalidConfig(format!(
                "dim and d_v must be positive (got {} and {})",
                self.dim, self.d_v
            )));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "leaky slope {} outside (0, 1]",
                self.leaky_slope
            )));
        }
        Ok(())
    }
}

/// Configuration plus parameters: everything needed to score.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnPhr {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl GcnPhr {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(GcnPhr { config, params })
    }

    /// Gaussian-initialized model for a graph with the given entity counts.
    pub fn init<R: Rng + ?Sized>(
        config: ModelConfig,
        n_users: usize,
        n_hashtags: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::gaussian(&config, n_users, n_hashtags, std, rng)?;
        Ok(GcnPhr { config, params })
    }

    fn check_inputs(&self, graph: &TripartiteGraph, features: &Matrix) -> Result<()> {
        if self.params.user_emb.rows() != graph.n_users()
            || self.params.hashtag_emb.rows() != graph.n_hashtags()
        {
            return Err(Error::Shape {
                op: "GcnPhr",
                detail: format!(
                    "model has {} users / {} hashtags, graph has {} / {}",
                    self.params.user_emb.rows(),
                    self.params.hashtag_emb.rows(),
                    graph.n_users(),
                    graph.n_hashtags()
                ),
            });
        }
        if features.cols() != self.config.d_v || features.rows() < graph.n_videos() {
            return Err(Error::Shape {
                op: "GcnPhr",
                detail: format!(
                    "features are {}x{}, need at least {} rows of length {}",
                    features.rows(),
                    features.cols(),
                    graph.n_videos(),
                    self.config.d_v
                ),
            });
        }
        Ok(())
    }

    /// Full user-side propagation state for user `i`.
    pub fn user_state(&self, graph: &TripartiteGraph, features: &Matrix, user: usize) -> EntityState {
        let hashtags = graph.hashtags_of_user(user);
        propagate::propagate(
            &self.params.user_side,
            &self.config,
            self.config.variant.user_attention(),
            &self.params.hashtag_emb,
            features,
            SideInputs {
                entity: user,
                id_neighbors: hashtags,
                groups: hashtags
                    .iter()
                    .map(|&j| (j, graph.videos_of_user_hashtag(user, j)))
                    .collect(),
                videos: graph.videos_of_user(user),
            },
        )
    }

    /// Full hashtag-side propagation state for hashtag `j`.
    pub fn hashtag_state(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        hashtag: usize,
    ) -> EntityState {
        let users = graph.users_of_hashtag(hashtag);
        propagate::propagate(
            &self.params.hashtag_side,
            &self.config,
            self.config.variant.hashtag_attention(),
            &self.params.user_emb,
            features,
            SideInputs {
                entity: hashtag,
                id_neighbors: users,
                groups: users
                    .iter()
                    .map(|&i| (i, graph.videos_of_user_hashtag(i, hashtag)))
                    .collect(),
                videos: graph.videos_of_hashtag(hashtag),
            },
        )
    }

    /// Message from a hashtag to a user: `𝐦 = W_h→u 𝐡ⱼ`.
    pub fn message_hashtag_to_user(&self, hashtag_emb_row: &[f64]) -> Vec<f64> {
        self.params.user_side.id_transform.mul_vec(hashtag_emb_row)
    }

    /// 𝐮ᵢʰ; the zero vector for a user with no hashtags.
    pub fn user_pref_hashtags(&self, graph: &TripartiteGraph, user: usize) -> Vec<f64> {
        let hashtags = graph.hashtags_of_user(user);
        let d = self.config.dim;
        if hashtags.is_empty() {
            return vec![0.0; d];
        }
        let mut acc = vec![0.0; d];
        for &j in hashtags {
            let m = self.message_hashtag_to_user(self.params.hashtag_emb.row(j));
            crate::numerics::axpy(1.0 / hashtags.len() as f64, &m, &mut acc);
        }
        leaky_relu(&acc, self.config.leaky_slope)
    }

    /// User-side similarity `s = w_gᵀ [𝐡ⱼ ; W 𝐯ₖ ; 𝐡ⱼ ⊙ W 𝐯ₖ] + b_g`.
    pub fn attention_score(&self, hashtag_emb_row: &[f64], video_feature: &[f64]) -> f64 {
        propagate::similarity(&self.params.user_side, hashtag_emb_row, video_feature)
    }

    /// Hashtag-side similarity between a user embedding and a video.
    pub fn hashtag_attention_score(&self, user_emb_row: &[f64], video_feature: &[f64]) -> f64 {
        propagate::similarity(&self.params.hashtag_side, user_emb_row, video_feature)
    }

    /// α over 𝒱ᵢ,ⱼ as `(video, weight)` pairs.
    pub fn attention_weights(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
        hashtag: usize,
    ) -> Result<Vec<(usize, f64)>> {
        let videos = graph.videos_of_user_hashtag(user, hashtag);
        if videos.is_empty() {
            return Err(Error::InvalidGraph(format!(
                "user {user} never tagged a video with hashtag {hashtag}"
            )));
        }
        let side = &self.params.user_side;
        let projection = propagate::query_projection(side, self.params.hashtag_emb.row(hashtag));
        let weights = propagate::group_weights(side, &projection, videos, features);
        Ok(videos.iter().copied().zip(weights).collect())
    }

    /// Video `k`'s message to user `i`; zero when the user put no
    /// hashtag on it. Without user-side attention the weight sum is 1.
    pub fn message_video_to_user(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
        video: usize,
    ) -> Result<Vec<f64>> {
        let hashtags = graph.hashtags_of_user_video(user, video);
        let weight = if hashtags.is_empty() {
            0.0
        } else if self.config.variant.user_attention() {
            let mut sum = 0.0;
            for &j in hashtags {
                sum += self
                    .attention_weights(graph, features, user, j)?
                    .into_iter()
                    .find(|&(k, _)| k == video)
                    .map_or(0.0, |(_, a)| a);
            }
            sum
        } else {
            1.0
        };
        let mut m = self.params.user_side.video_transform.mul_vec(features.row(video));
        m.iter_mut().for_each(|x| *x *= weight);
        Ok(m)
    }

    /// 𝐮ᵢᵛ.
    pub fn user_pref_videos(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
    ) -> Vec<f64> {
        self.user_state(graph, features, user).video_pref
    }

    /// User-side fusion of 𝐮ᵢʰ and 𝐮ᵢᵛ.
    pub fn fuse_user(&self, u_h: &[f64], u_v: &[f64]) -> Vec<f64> {
        propagate::fuse(&self.params.user_side.fusion, u_v, u_h, self.config.leaky_slope).1
    }

    /// Fused user vector 𝐮ᵢ.
    pub fn user_representation(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
    ) -> Vec<f64> {
        self.user_state(graph, features, user).fused
    }

    /// Fused hashtag vector 𝐡ⱼ; zero for a hashtag nobody used.
    pub fn hashtag_representation(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        hashtag: usize,
    ) -> Vec<f64> {
        self.hashtag_state(graph, features, hashtag).fused
    }

    /// User-specific video vector `v̄`.
    pub fn user_specific_video_repr(&self, user: &[f64], video_feature: &[f64]) -> Vec<f64> {
        output::video_forward(&self.params.output, video_feature, user, self.config.leaky_slope).out
    }

    /// User-specific hashtag vector `h̄`.
    pub fn user_specific_hashtag_repr(&self, user: &[f64], hashtag: &[f64]) -> Vec<f64> {
        output::hashtag_forward(&self.params.output, hashtag, user, self.config.leaky_slope).out
    }

    /// Suitability of hashtag `j` for video `k` uploaded by user `i`.
    pub fn score(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
        video: usize,
        hashtag: usize,
    ) -> Result<f64> {
        graph.check_index(EntityKind::Video, video)?;
        self.score_feature(graph, features, user, features.row(video), hashtag)
    }

    /// As [`GcnPhr::score`] for an arbitrary feature vector (e.g. a new video).
    pub fn score_feature(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
        video_feature: &[f64],
        hashtag: usize,
    ) -> Result<f64> {
        self.check_inputs(graph, features)?;
        graph.check_index(EntityKind::User, user)?;
        graph.check_index(EntityKind::Hashtag, hashtag)?;
        if video_feature.len() != self.config.d_v {
            return Err(Error::Shape {
                op: "score",
                detail: format!("feature length {} != {}", video_feature.len(), self.config.d_v),
            });
        }
        let u = self.user_representation(graph, features, user);
        let h = self.hashtag_representation(graph, features, hashtag);
        let v_bar = self.user_specific_video_repr(&u, video_feature);
        let h_bar = self.user_specific_hashtag_repr(&u, &h);
        Ok(dot_unchecked(&h_bar, &v_bar))
    }

    /// Candidates sorted by descending score, ties by ascending hashtag
    /// index, truncated to `top_k`.
    pub fn rank_hashtags(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        user: usize,
        video_feature: &[f64],
        candidates: &[usize],
        top_k: usize,
    ) -> Result<Vec<(usize, f64)>> {
        self.check_inputs(graph, features)?;
        graph.check_index(EntityKind::User, user)?;
        for &j in candidates {
            graph.check_index(EntityKind::Hashtag, j)?;
        }
        if video_feature.len() != self.config.d_v {
            return Err(Error::Shape {
                op: "rank_hashtags",
                detail: format!("feature length {} != {}", video_feature.len(), self.config.d_v),
            });
        }
        let u = self.user_representation(graph, features, user);
        let v_bar = self.user_specific_video_repr(&u, video_feature);
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&j| {
                let h = self.hashtag_representation(graph, features, j);
                let h_bar = self.user_specific_hashtag_repr(&u, &h);
                (j, dot_unchecked(&h_bar, &v_bar))
            })
            .collect();
        sort_ranked(&mut scored);
        scored.truncate(top_k);
        Ok(scored)
    }
}

/// Descending score, ties broken by ascending index.
pub fn sort_ranked(scored: &mut [(usize, f64)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}
