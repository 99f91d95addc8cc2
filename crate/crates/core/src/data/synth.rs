//! Planted-preference synthetic datasets.
//!
//! Hashtags belong to latent interests. Each interest has a unit prototype in
//! feature space, and every user holds one or two interests with a small
//! personal vocabulary of that interest's hashtags. A video is drawn around
//! the prototype of one of its uploader's interests and tagged only from that
//! interest. Videos of two-interest users also carry a weaker copy of the
//! other prototype, so a model has to attend to the part that drives the tags.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{features_to_text, Interactions};
use crate::error::{Error, Result};
use crate::numerics::{axpy, Matrix};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_videos: usize,
    pub n_hashtags: usize,
    pub n_interests: usize,
    pub d_v: usize,
    /// Mean number of hashtags per video (at least one is always drawn).
    pub tags_per_video: f64,
    pub multi_interest_fraction: f64,
    pub noise_std: f64,
    /// Hashtags of each interest a user draws from; 0 means all of them.
    pub user_vocab_size: usize,
    /// Weight of the non-driving prototype in two-interest users' videos.
    pub secondary_weight: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 50,
            n_videos: 500,
            n_hashtags: 40,
            n_interests: 4,
            d_v: 16,
            tags_per_video: 3.0,
            multi_interest_fraction: 0.3,
            noise_std: 0.3,
            user_vocab_size: 4,
            secondary_weight: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_users == 0 || self.n_videos == 0 || self.n_hashtags == 0 || self.n_interests == 0 || self.d_v == 0
        {
            return bad("synthetic counts must all be >= 1".into());
        }
        if self.n_interests > self.n_hashtags {
            return bad(format!(
                "{} interests need at least as many hashtags, got {}",
                self.n_interests, self.n_hashtags
            ));
        }
        if !(self.tags_per_video >= 1.0) || !self.tags_per_video.is_finite() {
            return bad(format!("tags per video must be >= 1, got {}", self.tags_per_video));
        }
        if !(0.0..=1.0).contains(&self.multi_interest_fraction) {
            return bad(format!(
                "multi-interest fraction must be in [0, 1], got {}",
                self.multi_interest_fraction
            ));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return bad(format!("noise std must be >= 0, got {}", self.noise_std));
        }
        if !(self.secondary_weight >= 0.0) || !self.secondary_weight.is_finite() {
            return bad(format!("secondary weight must be >= 0, got {}", self.secondary_weight));
        }
        Ok(())
    }
}

/// The latent assignment the data was generated from. Indices follow the
/// dataset vocabularies (`u{i}`, `h{j}`, `v{k}` in index order).
#[derive(Clone, Debug, PartialEq)]
pub struct Planted {
    /// Interest prototypes, one unit-norm row each.
    pub prototypes: Matrix,
    pub hashtag_interest: Vec<usize>,
    /// One or two interests per user, sorted.
    pub user_interests: Vec<Vec<usize>>,
    /// Per user, per held interest (aligned with `user_interests`), the
    /// hashtags the user draws from.
    pub user_vocab: Vec<Vec<Vec<usize>>>,
    pub video_uploader: Vec<usize>,
    /// The interest whose hashtags tag each video.
    pub video_interest: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub interactions: Interactions,
    pub features: Matrix,
    pub planted: Planted,
}

fn unit_prototypes(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut m = Matrix::zeros(n, d);
    for r in 0..n {
        loop {
            let row: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                m.row_mut(r).iter_mut().zip(&row).for_each(|(o, x)| *o = x / norm);
                break;
            }
        }
    }
    m
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    let c = config;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);

    let prototypes = unit_prototypes(c.n_interests, c.d_v, &mut rng);

    // Round-robin then shuffle so every interest owns at least one hashtag.
    let mut hashtag_interest: Vec<usize> = (0..c.n_hashtags).map(|j| j % c.n_interests).collect();
    hashtag_interest.shuffle(&mut rng);
    let by_interest: Vec<Vec<usize>> = (0..c.n_interests)
        .map(|t| (0..c.n_hashtags).filter(|&j| hashtag_interest[j] == t).collect())
        .collect();

    let mut user_interests = Vec::with_capacity(c.n_users);
    let mut user_vocab = Vec::with_capacity(c.n_users);
    for _ in 0..c.n_users {
        let two = c.n_interests >= 2 && rng.random_bool(c.multi_interest_fraction);
        let mut ints = index::sample(&mut rng, c.n_interests, if two { 2 } else { 1 }).into_vec();
        ints.sort_unstable();
        let vocab: Vec<Vec<usize>> = ints
            .iter()
            .map(|&t| {
                let pool = &by_interest[t];
                let size = if c.user_vocab_size == 0 {
                    pool.len()
                } else {
                    c.user_vocab_size.min(pool.len())
                };
                let mut v: Vec<usize> = index::sample(&mut rng, pool.len(), size)
                    .into_iter()
                    .map(|x| pool[x])
                    .collect();
                v.sort_unstable();
                v
            })
            .collect();
        user_interests.push(ints);
        user_vocab.push(vocab);
    }

    // The first videos go one per user so that every user uploads something.
    let video_uploader: Vec<usize> = (0..c.n_videos)
        .map(|k| if k < c.n_users { k } else { rng.random_range(0..c.n_users) })
        .collect();

    let noise = Normal::new(0.0, c.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let extra_tags = (c.tags_per_video > 1.0)
        .then(|| Poisson::new(c.tags_per_video - 1.0))
        .transpose()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let mut interactions = Interactions::new();
    for i in 0..c.n_users {
        interactions.vocab.users.insert(&format!("u{i}"));
    }
    for j in 0..c.n_hashtags {
        interactions.vocab.hashtags.insert(&format!("h{j}"));
    }
    for k in 0..c.n_videos {
        interactions.vocab.videos.insert(&format!("v{k}"));
    }

    let mut features = Matrix::zeros(c.n_videos, c.d_v);
    let mut video_interest = Vec::with_capacity(c.n_videos);
    for (k, &i) in video_uploader.iter().enumerate() {
        let ints = &user_interests[i];
        let slot = rng.random_range(0..ints.len());
        let t = ints[slot];
        video_interest.push(t);

        let row = features.row_mut(k);
        axpy(1.0, prototypes.row(t), row);
        if ints.len() == 2 {
            axpy(c.secondary_weight, prototypes.row(ints[1 - slot]), row);
        }
        if c.noise_std > 0.0 {
            row.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
        }

        let pool = &user_vocab[i][slot];
        let extra = extra_tags.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
        let n_tags = (1 + extra).min(pool.len());
        let mut tags: Vec<usize> = index::sample(&mut rng, pool.len(), n_tags)
            .into_iter()
            .map(|x| pool[x])
            .collect();
        tags.sort_unstable();
        for j in tags {
            interactions.push(&format!("u{i}"), &format!("v{k}"), Some(&format!("h{j}")));
        }
    }

    Ok(SyntheticDataset {
        interactions,
        features,
        planted: Planted {
            prototypes,
            hashtag_interest,
            user_interests,
            user_vocab,
            video_uploader,
            video_interest,
        },
    })
}

impl Planted {
    /// Tab-separated `kind, name, value` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# kind\tname\tvalue\n");
        for (j, t) in self.hashtag_interest.iter().enumerate() {
            let _ = writeln!(out, "hashtag\th{j}\t{t}");
        }
        for (i, ints) in self.user_interests.iter().enumerate() {
            let ints: Vec<String> = ints.iter().map(|t| t.to_string()).collect();
            let _ = writeln!(out, "user\tu{i}\t{}", ints.join(","));
        }
        for (k, t) in self.video_interest.iter().enumerate() {
            let _ = writeln!(out, "video\tv{k}\t{t}");
        }
        out
    }
}

impl SyntheticDataset {
    /// Writes `interactions.tsv`, `features.tsv` and `planted.tsv` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            ("interactions.tsv", self.interactions.to_text()),
            (
                "features.tsv",
                features_to_text(&self.interactions.vocab.videos, &self.features),
            ),
            ("planted.tsv", self.planted.to_text()),
        ] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}
