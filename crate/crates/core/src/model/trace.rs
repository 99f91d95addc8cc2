use std::collections::BTreeMap;

use super::propagate::{self, EntityState};
use super::{GcnPhr, ModelParams};
use crate::graph::TripartiteGraph;
use crate::numerics::Matrix;

/// Cached propagation states for a set of users and hashtags.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardTrace {
    pub users: BTreeMap<usize, EntityState>,
    pub hashtags: BTreeMap<usize, EntityState>,
}

impl ForwardTrace {
    /// α for video `k` in group (user `i`, hashtag `j`).
    pub fn alpha(&self, user: usize, hashtag: usize, video: usize) -> Option<f64> {
        group_weight(self.users.get(&user)?, hashtag, video)
    }

    /// β for video `k` in group (user `i`, hashtag `j`), from hashtag `j`'s state.
    pub fn beta(&self, hashtag: usize, user: usize, video: usize) -> Option<f64> {
        group_weight(self.hashtags.get(&hashtag)?, user, video)
    }

    pub fn cold_users(&self) -> impl Iterator<Item = usize> + '_ {
        self.users.values().filter(|s| s.cold).map(|s| s.entity)
    }

    pub fn cold_hashtags(&self) -> impl Iterator<Item = usize> + '_ {
        self.hashtags.values().filter(|s| s.cold).map(|s| s.entity)
    }
}

fn group_weight(state: &EntityState, query: usize, video: usize) -> Option<f64> {
    let g = state.groups.iter().find(|g| g.query == query)?;
    let pos = g.videos.iter().position(|&k| k == video)?;
    Some(g.weights[pos])
}

impl GcnPhr {
    /// Forward states for the given users and hashtags (duplicates ignored).
    pub fn trace(
        &self,
        graph: &TripartiteGraph,
        features: &Matrix,
        users: impl IntoIterator<Item = usize>,
        hashtags: impl IntoIterator<Item = usize>,
    ) -> ForwardTrace {
        let mut trace = ForwardTrace::default();
        for i in users {
            trace
                .users
                .entry(i)
                .or_insert_with(|| self.user_state(graph, features, i));
        }
        for j in hashtags {
            trace
                .hashtags
                .entry(j)
                .or_insert_with(|| self.hashtag_state(graph, features, j));
        }
        trace
    }

    /// Forward states for every user and hashtag in the graph.
    pub fn full_trace(&self, graph: &TripartiteGraph, features: &Matrix) -> ForwardTrace {
        self.trace(graph, features, 0..graph.n_users(), 0..graph.n_hashtags())
    }

    /// Accumulates into `grad` the parameter gradients implied by upstream
    /// gradients on fused user and hashtag vectors.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        features: &Matrix,
        d_users: &BTreeMap<usize, Vec<f64>>,
        d_hashtags: &BTreeMap<usize, Vec<f64>>,
        grad: &mut ModelParams,
    ) {
        let p = &self.params;
        for (i, d) in d_users {
            let state = &trace.users[i];
            propagate::backpropagate(
                state,
                &p.user_side,
                &self.config,
                self.config.variant.user_attention(),
                &p.hashtag_emb,
                features,
                d,
                &mut grad.user_side,
                &mut grad.hashtag_emb,
            );
        }
        for (j, d) in d_hashtags {
            let state = &trace.hashtags[j];
            propagate::backpropagate(
                state,
                &p.hashtag_side,
                &self.config,
                self.config.variant.hashtag_attention(),
                &p.user_emb,
                features,
                d,
                &mut grad.hashtag_side,
                &mut grad.user_emb,
            );
        }
    }
}
