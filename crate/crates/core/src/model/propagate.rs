//! One round of message passing for a single user or hashtag.
//!
//! Both sides share the same structure. For a user `i` the ID neighbors are
//! ℋᵢ, the attention groups are 𝒱ᵢ,ⱼ queried by hashtag `j`, and the video
//! neighbors are 𝒱ᵢ. For a hashtag `j` the ID neighbors are 𝒰ⱼ, the groups are
//! 𝒱ᵢ,ⱼ queried by user `i`, and the video neighbors are 𝒱ⱼ. In both cases the
//! ID table and the attention query table are the same embedding matrix.

use std::collections::BTreeMap;

use super::params::{FusionParams, SideParams};
use super::{Aggregation, ModelConfig};
use crate::numerics::{self, axpy, dot_unchecked, leaky_relu, leaky_relu_backward, Matrix};

/// Softmax group over the videos one user tagged with one hashtag.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGroup {
    /// Query entity: the hashtag on the user side, the user on the hashtag side.
    pub query: usize,
    pub videos: Vec<usize>,
    /// Normalized weights, aligned with `videos`. All ones when attention is off.
    pub weights: Vec<f64>,
    /// `w_x + w_qx ⊙ q`, the query-dependent projection of the similarity layer.
    pub projection: Vec<f64>,
}

/// Everything one side's forward pass produced for one entity.
#[derive(Clone, Debug, PartialEq)]
pub struct EntityState {
    pub entity: usize,
    /// No tagging neighbors at all; every propagated vector is zero.
    pub cold: bool,
    pub id_neighbors: Vec<usize>,
    pub id_mean: Vec<f64>,
    pub id_pre: Vec<f64>,
    /// 𝐮ᵢʰ on the user side, 𝐡ⱼᵘ on the hashtag side.
    pub id_pref: Vec<f64>,
    pub groups: Vec<AttentionGroup>,
    /// Scale of each video's message per video neighbor: the sum of its
    /// attention weights, or 1 for a tagged video when attention is off.
    pub video_weights: Vec<(usize, f64)>,
    /// `Σ_k scale_k · 𝐯ₖ`, divided by the neighbor count under mean aggregation.
    pub video_agg: Vec<f64>,
    pub video_pre: Vec<f64>,
    /// 𝐮ᵢᵛ on the user side, 𝐡ⱼᵛ on the hashtag side.
    pub video_pref: Vec<f64>,
    /// Pre-activation of the neural fusion layer; empty for transform-sum.
    pub fusion_pre: Vec<f64>,
    pub fused: Vec<f64>,
}

pub(crate) struct SideInputs<'a> {
    pub entity: usize,
    pub id_neighbors: &'a [usize],
    pub groups: Vec<(usize, &'a [usize])>,
    pub videos: &'a [usize],
}

/// `w_x + w_qx ⊙ q`; the `w_q · q` term and the bias are constant inside a
/// group and cancel in the softmax.
pub(crate) fn query_projection(side: &SideParams, query: &[f64]) -> Vec<f64> {
    let d = query.len();
    let w = side.attn_vec.data();
    (0..d).map(|c| w[d + c] + w[2 * d + c] * query[c]).collect()
}

/// Full similarity score `w_gᵀ [q ; x ; q ⊙ x] + b_g` with `x = W_attn 𝐯`.
pub(crate) fn similarity(side: &SideParams, query: &[f64], feature: &[f64]) -> f64 {
    let d = query.len();
    let x = side.attn_map.mul_vec(feature);
    let w = side.attn_vec.data();
    let mut s = side.attn_bias.data()[0];
    for c in 0..d {
        s += w[c] * query[c] + w[d + c] * x[c] + w[2 * d + c] * query[c] * x[c];
    }
    s
}

/// Softmax weights for one group, computed from the group-varying part of
/// the similarity score.
pub(crate) fn group_weights(
    side: &SideParams,
    projection: &[f64],
    videos: &[usize],
    features: &Matrix,
) -> Vec<f64> {
    let a = side.attn_map.mul_vec_t(projection);
    let logits: Vec<f64> = videos
        .iter()
        .map(|&k| dot_unchecked(&a, features.row(k)))
        .collect();
    numerics::softmax(&logits).expect("attention groups are never empty")
}

pub(crate) fn propagate(
    side: &SideParams,
    config: &ModelConfig,
    attention: bool,
    table: &Matrix,
    features: &Matrix,
    inputs: SideInputs<'_>,
) -> EntityState {
    let d = config.dim;
    let dv = config.d_v;
    let slope = config.leaky_slope;

    if inputs.id_neighbors.is_empty() {
        return EntityState {
            entity: inputs.entity,
            cold: true,
            id_neighbors: Vec::new(),
            id_mean: vec![0.0; d],
            id_pre: vec![0.0; d],
            id_pref: vec![0.0; d],
            groups: Vec::new(),
            video_weights: inputs.videos.iter().map(|&k| (k, 0.0)).collect(),
            video_agg: vec![0.0; dv],
            video_pre: vec![0.0; d],
            video_pref: vec![0.0; d],
            fusion_pre: Vec::new(),
            fused: vec![0.0; d],
        };
    }

    let mut id_mean = vec![0.0; d];
    for &n in inputs.id_neighbors {
        axpy(1.0, table.row(n), &mut id_mean);
    }
    let inv = 1.0 / inputs.id_neighbors.len() as f64;
    id_mean.iter_mut().for_each(|x| *x *= inv);
    let id_pre = side.id_transform.mul_vec(&id_mean);
    let id_pref = leaky_relu(&id_pre, slope);

    let mut scale_of: BTreeMap<usize, f64> = inputs.videos.iter().map(|&k| (k, 0.0)).collect();
    let groups: Vec<AttentionGroup> = inputs
        .groups
        .into_iter()
        .map(|(query, videos)| {
            let (weights, projection) = if attention {
                let projection = query_projection(side, table.row(query));
                (group_weights(side, &projection, videos, features), projection)
            } else {
                (vec![1.0; videos.len()], Vec::new())
            };
            for (&k, &w) in videos.iter().zip(&weights) {
                let scale = scale_of.entry(k).or_insert(0.0);
                // Without attention a tagged video sends its message once.
                if attention {
                    *scale += w;
                } else {
                    *scale = 1.0;
                }
            }
            AttentionGroup {
                query,
                videos: videos.to_vec(),
                weights,
                projection,
            }
        })
        .collect();

    let video_weights: Vec<(usize, f64)> = inputs
        .videos
        .iter()
        .map(|&k| (k, scale_of[&k]))
        .collect();
    let mut video_agg = vec![0.0; dv];
    for &(k, w) in &video_weights {
        if w != 0.0 {
            axpy(w, features.row(k), &mut video_agg);
        }
    }
    if config.aggregate_videos == Aggregation::Mean && !video_weights.is_empty() {
        let inv = 1.0 / video_weights.len() as f64;
        video_agg.iter_mut().for_each(|x| *x *= inv);
    }
    let video_pre = side.video_transform.mul_vec(&video_agg);
    let video_pref = leaky_relu(&video_pre, slope);

    let (fusion_pre, fused) = fuse(&side.fusion, &video_pref, &id_pref, slope);

    EntityState {
        entity: inputs.entity,
        cold: false,
        id_neighbors: inputs.id_neighbors.to_vec(),
        id_mean,
        id_pre,
        id_pref,
        groups,
        video_weights,
        video_agg,
        video_pre,
        video_pref,
        fusion_pre,
        fused,
    }
}

/// Returns `(pre-activation, fused)`; the pre-activation is empty for
/// transform-sum, which has no activation.
pub(crate) fn fuse(
    fusion: &FusionParams,
    video_pref: &[f64],
    id_pref: &[f64],
    slope: f64,
) -> (Vec<f64>, Vec<f64>) {
    match fusion {
        FusionParams::NeuralNet { weight, bias } => {
            let z = numerics::concat(video_pref, id_pref);
            let mut pre = weight.mul_vec(&z);
            axpy(1.0, bias.data(), &mut pre);
            let out = leaky_relu(&pre, slope);
            (pre, out)
        }
        FusionParams::TransformSum { video, ids } => {
            let mut out = video.mul_vec(video_pref);
            ids.mul_vec_add(id_pref, &mut out);
            (Vec::new(), out)
        }
    }
}

/// Accumulates gradients of one entity's forward pass given `∂L/∂fused`.
///
/// `table_grad` receives the gradient for the shared ID/query embedding table.
pub(crate) fn backpropagate(
    state: &EntityState,
    side: &SideParams,
    config: &ModelConfig,
    attention: bool,
    table: &Matrix,
    features: &Matrix,
    d_fused: &[f64],
    grad: &mut SideParams,
    table_grad: &mut Matrix,
) {
    if state.cold {
        return;
    }
    let d = config.dim;
    let slope = config.leaky_slope;

    let (d_video_pref, d_id_pref) = match (&side.fusion, &mut grad.fusion) {
        (
            FusionParams::NeuralNet { weight, .. },
            FusionParams::NeuralNet {
                weight: gw,
                bias: gb,
            },
        ) => {
            let d_pre = leaky_relu_backward(&state.fusion_pre, d_fused, slope);
            let z = numerics::concat(&state.video_pref, &state.id_pref);
            gw.add_outer(1.0, &d_pre, &z);
            axpy(1.0, &d_pre, gb.data_mut());
            let dz = weight.mul_vec_t(&d_pre);
            numerics::concat_backward(&dz, d)
        }
        (
            FusionParams::TransformSum { video, ids },
            FusionParams::TransformSum {
                video: gv,
                ids: gi,
            },
        ) => {
            gv.add_outer(1.0, d_fused, &state.video_pref);
            gi.add_outer(1.0, d_fused, &state.id_pref);
            (video.mul_vec_t(d_fused), ids.mul_vec_t(d_fused))
        }
        _ => unreachable!("gradient buffer fusion layout differs from parameters"),
    };

    // ID-neighbor path.
    let d_id_pre = leaky_relu_backward(&state.id_pre, &d_id_pref, slope);
    grad.id_transform.add_outer(1.0, &d_id_pre, &state.id_mean);
    let d_mean = side.id_transform.mul_vec_t(&d_id_pre);
    let inv = 1.0 / state.id_neighbors.len() as f64;
    for &n in &state.id_neighbors {
        axpy(inv, &d_mean, table_grad.row_mut(n));
    }

    // Video path.
    let d_video_pre = leaky_relu_backward(&state.video_pre, &d_video_pref, slope);
    grad.video_transform
        .add_outer(1.0, &d_video_pre, &state.video_agg);
    if !attention {
        return;
    }
    let mut d_agg = side.video_transform.mul_vec_t(&d_video_pre);
    if config.aggregate_videos == Aggregation::Mean && !state.video_weights.is_empty() {
        let inv = 1.0 / state.video_weights.len() as f64;
        d_agg.iter_mut().for_each(|x| *x *= inv);
    }
    let mut d_scale: BTreeMap<usize, f64> = BTreeMap::new();
    for &(k, _) in &state.video_weights {
        d_scale.insert(k, dot_unchecked(&d_agg, features.row(k)));
    }

    let dv = config.d_v;
    for g in &state.groups {
        let d_weights: Vec<f64> = g.videos.iter().map(|k| d_scale[k]).collect();
        let d_logits = numerics::softmax_backward(&g.weights, &d_weights);
        let mut r = vec![0.0; dv];
        for (&k, &dl) in g.videos.iter().zip(&d_logits) {
            axpy(dl, features.row(k), &mut r);
        }
        // logit_k = projectionᵀ W_attn 𝐯ₖ
        grad.attn_map.add_outer(1.0, &g.projection, &r);
        let d_proj = side.attn_map.mul_vec(&r);
        let q = table.row(g.query);
        let w = side.attn_vec.data();
        let gw = grad.attn_vec.data_mut();
        let q_grad = table_grad.row_mut(g.query);
        for c in 0..d {
            gw[d + c] += d_proj[c];
            gw[2 * d + c] += d_proj[c] * q[c];
            q_grad[c] += d_proj[c] * w[2 * d + c];
        }
    }
}
