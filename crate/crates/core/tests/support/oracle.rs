//! Straight-line reimplementation of the forward pass. It works from the raw
//! triple list and uses the full similarity score (constant terms included)
//! inside the softmax.

use std::collections::BTreeSet;

use gcnphr::graph::{build_graph, Counts, TaggingTriple, TripartiteGraph};
use gcnphr::model::{Aggregation, Fusion, FusionParams, GcnPhr, ModelConfig, SideParams, Variant};
use gcnphr::numerics::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FIXTURES: usize = 100;
pub const TOLERANCE: f64 = 1e-10;

fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn matvec(m: &Matrix, x: &[f64]) -> Vec<f64> {
    assert_eq!(m.cols(), x.len());
    (0..m.rows())
        .map(|r| (0..m.cols()).map(|c| m.get(r, c) * x[c]).sum())
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub struct Raw {
    triples: BTreeSet<(usize, usize, usize)>,
    uploads: Vec<(usize, usize)>,
}

impl Raw {
    fn sim(side: &SideParams, q: &[f64], f: &[f64]) -> f64 {
        let x = matvec(&side.attn_map, f);
        let d = q.len();
        let w = side.attn_vec.data();
        let mut s = side.attn_bias.get(0, 0);
        for c in 0..d {
            s += w[c] * q[c];
            s += w[d + c] * x[c];
            s += w[2 * d + c] * q[c] * x[c];
        }
        s
    }

    /// Softmax weight of `k` in the group `videos` under query `q`.
    fn softmax_at(side: &SideParams, q: &[f64], videos: &[usize], k: usize, feats: &Matrix) -> f64 {
        let scores: Vec<f64> = videos.iter().map(|&v| Self::sim(side, q, feats.row(v))).collect();
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let pos = videos.iter().position(|&v| v == k).unwrap();
        (scores[pos] - max).exp() / z
    }

    fn group(&self, i: usize, j: usize) -> Vec<usize> {
        self.triples
            .iter()
            .filter(|t| t.0 == i && t.2 == j)
            .map(|t| t.1)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn fuse(fp: &FusionParams, vp: &[f64], ip: &[f64], slope: f64) -> Vec<f64> {
        match fp {
            FusionParams::NeuralNet { weight, bias } => {
                let z: Vec<f64> = vp.iter().chain(ip).copied().collect();
                add(&matvec(weight, &z), bias.data())
                    .into_iter()
                    .map(|x| lrelu(x, slope))
                    .collect()
            }
            FusionParams::TransformSum { video, ids } => add(&matvec(video, vp), &matvec(ids, ip)),
        }
    }

    fn user_vector(&self, m: &GcnPhr, feats: &Matrix, i: usize) -> Vec<f64> {
        let cfg = &m.config;
        let p = &m.params;
        let side = &p.user_side;
        let d = cfg.dim;
        let hs: BTreeSet<usize> = self.triples.iter().filter(|t| t.0 == i).map(|t| t.2).collect();
        if hs.is_empty() {
            return vec![0.0; d];
        }
        let mut mean = vec![0.0; d];
        for &j in &hs {
            for c in 0..d {
                mean[c] += p.hashtag_emb.get(j, c) / hs.len() as f64;
            }
        }
        let id_pref: Vec<f64> = matvec(&side.id_transform, &mean).into_iter().map(|x| lrelu(x, cfg.leaky_slope)).collect();

        let mut vids: BTreeSet<usize> = self.triples.iter().filter(|t| t.0 == i).map(|t| t.1).collect();
        vids.extend(self.uploads.iter().filter(|u| u.0 == i).map(|u| u.1));
        let mut agg = vec![0.0; cfg.d_v];
        for &k in &vids {
            let tags: Vec<usize> = self.triples.iter().filter(|t| t.0 == i && t.1 == k).map(|t| t.2).collect();
            let c_k = if tags.is_empty() {
                0.0
            } else if cfg.variant.user_attention() {
                tags.iter()
                    .map(|&j| Self::softmax_at(side, p.hashtag_emb.row(j), &self.group(i, j), k, feats))
                    .sum()
            } else {
                1.0
            };
            for c in 0..cfg.d_v {
                agg[c] += c_k * feats.get(k, c);
            }
        }
        if cfg.aggregate_videos == Aggregation::Mean {
            agg.iter_mut().for_each(|x| *x /= vids.len() as f64);
        }
        let video_pref: Vec<f64> = matvec(&side.video_transform, &agg).into_iter().map(|x| lrelu(x, cfg.leaky_slope)).collect();
        Self::fuse(&side.fusion, &video_pref, &id_pref, cfg.leaky_slope)
    }

    fn hashtag_vector(&self, m: &GcnPhr, feats: &Matrix, j: usize) -> Vec<f64> {
        let cfg = &m.config;
        let p = &m.params;
        let side = &p.hashtag_side;
        let d = cfg.dim;
        let us: BTreeSet<usize> = self.triples.iter().filter(|t| t.2 == j).map(|t| t.0).collect();
        if us.is_empty() {
            return vec![0.0; d];
        }
        let mut mean = vec![0.0; d];
        for &i in &us {
            for c in 0..d {
                mean[c] += p.user_emb.get(i, c) / us.len() as f64;
            }
        }
        let id_pref: Vec<f64> = matvec(&side.id_transform, &mean).into_iter().map(|x| lrelu(x, cfg.leaky_slope)).collect();

        let vids: BTreeSet<usize> = self.triples.iter().filter(|t| t.2 == j).map(|t| t.1).collect();
        let mut agg = vec![0.0; cfg.d_v];
        for &k in &vids {
            let taggers: Vec<usize> = self.triples.iter().filter(|t| t.2 == j && t.1 == k).map(|t| t.0).collect();
            let c_k = if cfg.variant.hashtag_attention() {
                taggers
                    .iter()
                    .map(|&i| Self::softmax_at(side, p.user_emb.row(i), &self.group(i, j), k, feats))
                    .sum()
            } else {
                1.0
            };
            for c in 0..cfg.d_v {
                agg[c] += c_k * feats.get(k, c);
            }
        }
        if cfg.aggregate_videos == Aggregation::Mean {
            agg.iter_mut().for_each(|x| *x /= vids.len() as f64);
        }
        let video_pref: Vec<f64> = matvec(&side.video_transform, &agg).into_iter().map(|x| lrelu(x, cfg.leaky_slope)).collect();
        Self::fuse(&side.fusion, &video_pref, &id_pref, cfg.leaky_slope)
    }

    pub fn score(&self, m: &GcnPhr, feats: &Matrix, i: usize, k: usize, j: usize) -> f64 {
        let o = &m.params.output;
        let s = m.config.leaky_slope;
        let u = self.user_vector(m, feats, i);
        let h = self.hashtag_vector(m, feats, j);
        let v_bar: Vec<f64> = add(&add(&matvec(&o.video_weight, feats.row(k)), &matvec(&o.video_user, &u)), o.video_bias.data())
            .into_iter()
            .map(|x| lrelu(x, s))
            .collect();
        let h_bar: Vec<f64> = add(&add(&matvec(&o.hashtag_weight, &h), &matvec(&o.hashtag_user, &u)), o.hashtag_bias.data())
            .into_iter()
            .map(|x| lrelu(x, s))
            .collect();
        h_bar.iter().zip(&v_bar).map(|(a, b)| a * b).sum()
    }
}

pub fn random_fixture(seed: u64) -> (Raw, TripartiteGraph, Matrix, GcnPhr) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_u = rng.random_range(1..=5);
    let n_h = rng.random_range(1..=6);
    let n_v = rng.random_range(1..=8);
    let uploads: Vec<(usize, usize)> = (0..n_v).map(|k| (rng.random_range(0..n_u), k)).collect();
    let n_t = rng.random_range(0..=3 * n_v);
    let triples: BTreeSet<(usize, usize, usize)> = (0..n_t)
        .map(|_| {
            let k = rng.random_range(0..n_v);
            (uploads[k].0, k, rng.random_range(0..n_h))
        })
        .collect();
    let tt: Vec<TaggingTriple> = triples.iter().map(|&(i, k, j)| TaggingTriple::new(i, k, j)).collect();
    let graph = build_graph(Counts::new(n_u, n_h, n_v), &tt, &uploads).unwrap();

    let d_v = rng.random_range(1..=5);
    let feats = Matrix::from_vec(n_v, d_v, (0..n_v * d_v).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap();
    let config = ModelConfig {
        fusion: if rng.random_bool(0.5) { Fusion::NeuralNet } else { Fusion::TransformSum },
        variant: Variant::ALL[rng.random_range(0..4)],
        aggregate_videos: if rng.random_bool(0.5) { Aggregation::Sum } else { Aggregation::Mean },
        leaky_slope: [0.01, 0.2, 1.0][rng.random_range(0..3)],
        ..ModelConfig::new(rng.random_range(1..=6), d_v)
    };
    let model = GcnPhr::init(config, n_u, n_h, 0.7, &mut rng).unwrap();
    (Raw { triples, uploads }, graph, feats, model)
}

/// Largest relative deviation between library and oracle scores over every
/// (user, video, hashtag) of the first [`FIXTURES`] fixtures.
pub fn worst_deviation() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..FIXTURES as u64 {
        let (raw, graph, feats, model) = random_fixture(seed);
        for i in 0..graph.n_users() {
            for k in 0..graph.n_videos() {
                for j in 0..graph.n_hashtags() {
                    let got = model.score(&graph, &feats, i, k, j).unwrap();
                    let want = raw.score(&model, &feats, i, k, j);
                    let err = (got - want).abs() / want.abs().max(1.0);
                    // NaN must not pass.
                    worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
                }
            }
        }
    }
    worst
}
