//! The user / hashtag / micro-video interaction graph.
//!
//! Edges only connect different node kinds. Every adjacency list is sorted so
//! iteration order, and therefore training, is reproducible.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityKind {
    User,
    Hashtag,
    Video,
}

impl EntityKind {
    pub fn name(self) -> &'static str {
        match self {
            EntityKind::User => "user",
            EntityKind::Hashtag => "hashtag",
            EntityKind::Video => "video",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityIndex {
    pub kind: EntityKind,
    pub index: usize,
}

/// User `user` tagged video `video` with hashtag `hashtag`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaggingTriple {
    pub user: usize,
    pub video: usize,
    pub hashtag: usize,
}

impl TaggingTriple {
    pub fn new(user: usize, video: usize, hashtag: usize) -> Self {
        TaggingTriple {
            user,
            video,
            hashtag,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub users: usize,
    pub hashtags: usize,
    pub videos: usize,
}

impl Counts {
    pub fn new(users: usize, hashtags: usize, videos: usize) -> Self {
        Counts {
            users,
            hashtags,
            videos,
        }
    }

    /// Smallest counts that make every index in the input valid.
    pub fn infer(triples: &[TaggingTriple], uploads: &[(usize, usize)]) -> Self {
        let mut c = Counts::default();
        for t in triples {
            c.users = c.users.max(t.user + 1);
            c.videos = c.videos.max(t.video + 1);
            c.hashtags = c.hashtags.max(t.hashtag + 1);
        }
        for &(u, v) in uploads {
            c.users = c.users.max(u + 1);
            c.videos = c.videos.max(v + 1);
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripartiteGraph {
    counts: Counts,
    hashtags_of_user: Vec<Vec<usize>>,
    videos_of_user: Vec<Vec<usize>>,
    users_of_hashtag: Vec<Vec<usize>>,
    videos_of_hashtag: Vec<Vec<usize>>,
    videos_of_user_hashtag: BTreeMap<(usize, usize), Vec<usize>>,
    hashtags_of_user_video: BTreeMap<(usize, usize), Vec<usize>>,
    uploader_of_video: Vec<Option<usize>>,
    triples: Vec<TaggingTriple>,
    uploads: Vec<(usize, usize)>,
}

/// Builds the graph from tagging triples and `(user, video)` uploads.
///
/// Duplicates are collapsed and input order is irrelevant.
pub fn build_graph(
    counts: Counts,
    triples: &[TaggingTriple],
    uploads: &[(usize, usize)],
) -> Result<TripartiteGraph> {
    let mut uploader_of_video: Vec<Option<usize>> = vec![None; counts.videos];
    for &(user, video) in uploads {
        if user >= counts.users || video >= counts.videos {
            return Err(Error::InvalidGraph(format!(
                "upload (user {user}, video {video}) out of range for {} users / {} videos",
                counts.users, counts.videos
            )));
        }
        match uploader_of_video[video] {
            Some(first) if first != user => {
                return Err(Error::DuplicateUploader {
                    video,
                    first,
                    second: user,
                })
            }
            _ => uploader_of_video[video] = Some(user),
        }
    }

    let mut sorted: Vec<TaggingTriple> = triples.to_vec();
    sorted.sort_unstable();
    sorted.dedup();

    for t in &sorted {
        let out_of_range = [
            (t.user >= counts.users, "user", counts.users),
            (t.video >= counts.videos, "video", counts.videos),
            (t.hashtag >= counts.hashtags, "hashtag", counts.hashtags),
        ]
        .into_iter()
        .find(|(bad, _, _)| *bad);
        if let Some((_, kind, count)) = out_of_range {
            return Err(Error::InvalidTriple {
                user: t.user,
                video: t.video,
                hashtag: t.hashtag,
                reason: format!("{kind} index out of range (count {count})"),
            });
        }
        if uploader_of_video[t.video].is_none() {
            return Err(Error::InvalidTriple {
                user: t.user,
                video: t.video,
                hashtag: t.hashtag,
                reason: "video has no upload record".into(),
            });
        }
    }

    let mut hashtags_of_user = vec![Vec::new(); counts.users];
    let mut videos_of_user = vec![Vec::new(); counts.users];
    let mut users_of_hashtag = vec![Vec::new(); counts.hashtags];
    let mut videos_of_hashtag = vec![Vec::new(); counts.hashtags];
    let mut videos_of_user_hashtag: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut hashtags_of_user_video: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();

    for t in &sorted {
        hashtags_of_user[t.user].push(t.hashtag);
        videos_of_user[t.user].push(t.video);
        users_of_hashtag[t.hashtag].push(t.user);
        videos_of_hashtag[t.hashtag].push(t.video);
        videos_of_user_hashtag
            .entry((t.user, t.hashtag))
            .or_default()
            .push(t.video);
        hashtags_of_user_video
            .entry((t.user, t.video))
            .or_default()
            .push(t.hashtag);
    }
    for (video, uploader) in uploader_of_video.iter().enumerate() {
        if let Some(user) = *uploader {
            videos_of_user[user].push(video);
        }
    }

    let normalize = |lists: &mut Vec<Vec<usize>>| {
        for l in lists.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
    };
    normalize(&mut hashtags_of_user);
    normalize(&mut videos_of_user);
    normalize(&mut users_of_hashtag);
    normalize(&mut videos_of_hashtag);
    for l in videos_of_user_hashtag.values_mut() {
        l.sort_unstable();
        l.dedup();
    }
    for l in hashtags_of_user_video.values_mut() {
        l.sort_unstable();
        l.dedup();
    }

    let uploads = uploader_of_video
        .iter()
        .enumerate()
        .filter_map(|(v, u)| u.map(|u| (u, v)))
        .collect();

    Ok(TripartiteGraph {
        counts,
        hashtags_of_user,
        videos_of_user,
        users_of_hashtag,
        videos_of_hashtag,
        videos_of_user_hashtag,
        hashtags_of_user_video,
        uploader_of_video,
        triples: sorted,
        uploads,
    })
}

const EMPTY: &[usize] = &[];

impl TripartiteGraph {
    pub fn counts(&self) -> Counts {
        self.counts
    }

    pub fn n_users(&self) -> usize {
        self.counts.users
    }

    pub fn n_hashtags(&self) -> usize {
        self.counts.hashtags
    }

    pub fn n_videos(&self) -> usize {
        self.counts.videos
    }

    /// ℋᵢ: hashtags user `i` has used.
    pub fn hashtags_of_user(&self, user: usize) -> &[usize] {
        &self.hashtags_of_user[user]
    }

    /// 𝒱ᵢ: videos user `i` tagged or uploaded.
    pub fn videos_of_user(&self, user: usize) -> &[usize] {
        &self.videos_of_user[user]
    }

    /// 𝒰ⱼ: users who used hashtag `j`.
    pub fn users_of_hashtag(&self, hashtag: usize) -> &[usize] {
        &self.users_of_hashtag[hashtag]
    }

    /// 𝒱ⱼ: videos tagged with hashtag `j` by anyone.
    pub fn videos_of_hashtag(&self, hashtag: usize) -> &[usize] {
        &self.videos_of_hashtag[hashtag]
    }

    /// 𝒱ᵢ,ⱼ: videos user `i` tagged with hashtag `j`.
    pub fn videos_of_user_hashtag(&self, user: usize, hashtag: usize) -> &[usize] {
        self.videos_of_user_hashtag
            .get(&(user, hashtag))
            .map_or(EMPTY, Vec::as_slice)
    }

    /// ℋᵢ,ₖ: hashtags user `i` put on video `k`.
    pub fn hashtags_of_user_video(&self, user: usize, video: usize) -> &[usize] {
        self.hashtags_of_user_video
            .get(&(user, video))
            .map_or(EMPTY, Vec::as_slice)
    }

    pub fn uploader_of_video(&self, video: usize) -> Option<usize> {
        self.uploader_of_video.get(video).copied().flatten()
    }

    /// All distinct tagging triples, sorted.
    pub fn triples(&self) -> &[TaggingTriple] {
        &self.triples
    }

    /// All `(user, video)` uploads, sorted by video.
    pub fn uploads(&self) -> &[(usize, usize)] {
        &self.uploads
    }

    /// Number of tagging triples that use `hashtag`.
    pub fn hashtag_frequency(&self, hashtag: usize) -> usize {
        self.users_of_hashtag(hashtag)
            .iter()
            .map(|&u| self.videos_of_user_hashtag(u, hashtag).len())
            .sum()
    }

    pub fn check_index(&self, kind: EntityKind, index: usize) -> Result<()> {
        let count = match kind {
            EntityKind::User => self.counts.users,
            EntityKind::Hashtag => self.counts.hashtags,
            EntityKind::Video => self.counts.videos,
        };
        if index < count {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                kind: kind.name(),
                index,
                count,
            })
        }
    }

    /// A copy whose neighbor lists are stored in a shuffled order.
    ///
    /// Representations must not depend on storage order; this exists to
    /// test exactly that.
    pub fn with_permuted_neighbors(&self, seed: u64) -> TripartiteGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = self.clone();
        for lists in [
            &mut g.hashtags_of_user,
            &mut g.videos_of_user,
            &mut g.users_of_hashtag,
            &mut g.videos_of_hashtag,
        ] {
            for l in lists.iter_mut() {
                l.shuffle(&mut rng);
            }
        }
        for l in g.videos_of_user_hashtag.values_mut() {
            l.shuffle(&mut rng);
        }
        for l in g.hashtags_of_user_video.values_mut() {
            l.shuffle(&mut rng);
        }
        g
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DegreeSummary {
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

impl DegreeSummary {
    fn from_degrees(degrees: impl Iterator<Item = usize>) -> Self {
        let mut n = 0usize;
        let mut total = 0usize;
        let mut min = usize::MAX;
        let mut max = 0usize;
        for d in degrees {
            n += 1;
            total += d;
            min = min.min(d);
            max = max.max(d);
        }
        if n == 0 {
            return DegreeSummary::default();
        }
        DegreeSummary {
            min,
            mean: total as f64 / n as f64,
            max,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DegreeStats {
    pub user_hashtags: DegreeSummary,
    pub user_videos: DegreeSummary,
    pub hashtag_users: DegreeSummary,
    pub hashtag_videos: DegreeSummary,
    pub video_hashtags: DegreeSummary,
    pub video_users: DegreeSummary,
}

pub fn degree_stats(g: &TripartiteGraph) -> DegreeStats {
    let mut video_hashtags = vec![Vec::new(); g.n_videos()];
    let mut video_users = vec![Vec::new(); g.n_videos()];
    for t in g.triples() {
        video_hashtags[t.video].push(t.hashtag);
        video_users[t.video].push(t.user);
    }
    for &(u, v) in g.uploads() {
        video_users[v].push(u);
    }
    let distinct = |mut l: Vec<usize>| {
        l.sort_unstable();
        l.dedup();
        l.len()
    };
    DegreeStats {
        user_hashtags: DegreeSummary::from_degrees(g.hashtags_of_user.iter().map(Vec::len)),
        user_videos: DegreeSummary::from_degrees(g.videos_of_user.iter().map(Vec::len)),
        hashtag_users: DegreeSummary::from_degrees(g.users_of_hashtag.iter().map(Vec::len)),
        hashtag_videos: DegreeSummary::from_degrees(g.videos_of_hashtag.iter().map(Vec::len)),
        video_hashtags: DegreeSummary::from_degrees(video_hashtags.into_iter().map(distinct)),
        video_users: DegreeSummary::from_degrees(video_users.into_iter().map(distinct)),
    }
}
