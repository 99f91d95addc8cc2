//! Text formats for interactions and features, synthetic data, checkpoints.
//!
//! Interaction lines are `user<TAB>video<TAB>hashtag`; a hashtag field of `-`
//! records an upload without a tag. Feature files start with `dim=<d>` and
//! continue with `video<TAB>f1,f2,...`. Lines starting with `#` are comments
//! in both.

pub mod checkpoint;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{build_graph, Counts, TaggingTriple, TripartiteGraph};
use crate::numerics::Matrix;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use synth::{generate_synthetic, Planted, SynthConfig, SyntheticDataset};

/// Field value marking an upload-only line.
pub const NO_HASHTAG: &str = "-";

/// Bijection between raw string IDs and dense indices, in first-seen order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names(names: Vec<String>) -> Result<Self> {
        let mut v = Vocabulary::new();
        for n in names {
            if v.index.contains_key(&n) {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry {n:?}")));
            }
            v.insert(&n);
        }
        Ok(v)
    }

    pub fn insert(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), i);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabularies {
    pub users: Vocabulary,
    pub hashtags: Vocabulary,
    pub videos: Vocabulary,
}

impl Vocabularies {
    pub fn counts(&self) -> Counts {
        Counts::new(self.users.len(), self.hashtags.len(), self.videos.len())
    }

    /// Errors unless `other` has exactly the same entries in the same order.
    pub fn check_matches(&self, other: &Vocabularies) -> Result<()> {
        for (kind, a, b) in [
            ("user", &self.users, &other.users),
            ("hashtag", &self.hashtags, &other.hashtags),
            ("video", &self.videos, &other.videos),
        ] {
            if a.names != b.names {
                let at = a.names.iter().zip(&b.names).position(|(x, y)| x != y);
                let detail = match at {
                    Some(i) => format!("{kind} {i} is {:?} in one and {:?} in the other", a.names[i], b.names[i]),
                    None => format!("{kind} counts differ ({} vs {})", a.len(), b.len()),
                };
                return Err(Error::VocabularyMismatch(detail));
            }
        }
        Ok(())
    }
}

/// Parsed interaction lines with their vocabularies.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Interactions {
    pub vocab: Vocabularies,
    /// Distinct `(user, video, hashtag)` lines in first-seen order.
    lines: Vec<(usize, usize, Option<usize>)>,
    seen: BTreeSet<(usize, usize, Option<usize>)>,
}

impl Interactions {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a line; returns false if it was already present.
    pub fn push(&mut self, user: &str, video: &str, hashtag: Option<&str>) -> bool {
        let u = self.vocab.users.insert(user);
        let v = self.vocab.videos.insert(video);
        let h = hashtag.map(|h| self.vocab.hashtags.insert(h));
        if self.seen.insert((u, v, h)) {
            self.lines.push((u, v, h));
            true
        } else {
            false
        }
    }

    pub fn lines(&self) -> &[(usize, usize, Option<usize>)] {
        &self.lines
    }

    pub fn triples(&self) -> Vec<TaggingTriple> {
        let set: BTreeSet<TaggingTriple> = self
            .lines
            .iter()
            .filter_map(|&(u, v, h)| h.map(|h| TaggingTriple::new(u, v, h)))
            .collect();
        set.into_iter().collect()
    }

    /// `(user, video)` for every video; the user on any of its lines is its uploader.
    pub fn uploads(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.lines.iter().map(|&(u, v, _)| (u, v)).collect();
        set.into_iter().collect()
    }

    pub fn graph(&self) -> Result<TripartiteGraph> {
        build_graph(self.vocab.counts(), &self.triples(), &self.uploads())
    }

    /// Graph with all uploads but only the given tagging triples.
    pub fn graph_with(&self, triples: &[TaggingTriple]) -> Result<TripartiteGraph> {
        build_graph(self.vocab.counts(), triples, &self.uploads())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for &(u, v, h) in &self.lines {
            let h = h.map_or(NO_HASHTAG, |h| self.vocab.hashtags.names[h].as_str());
            let _ = writeln!(out, "{}\t{}\t{}", self.vocab.users.names[u], self.vocab.videos.names[v], h);
        }
        out
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

/// Data lines as `(1-based line number, content)`, skipping blanks and comments.
fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
}

pub fn parse_interactions_str(text: &str, path: &Path) -> Result<Interactions> {
    let mut out = Interactions::new();
    for (n, line) in data_lines(text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_error(path, n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        if let Some(i) = fields.iter().position(|f| f.is_empty()) {
            return Err(parse_error(path, n, format!("field {} is empty", i + 1)));
        }
        if fields[0] == NO_HASHTAG || fields[1] == NO_HASHTAG {
            return Err(parse_error(path, n, "'-' is only allowed in the hashtag field"));
        }
        let hashtag = (fields[2] != NO_HASHTAG).then_some(fields[2]);
        out.push(fields[0], fields[1], hashtag);
    }
    Ok(out)
}

pub fn parse_interactions(path: &Path) -> Result<Interactions> {
    parse_interactions_str(&read_text(path)?, path)
}

pub fn write_interactions(path: &Path, data: &Interactions) -> Result<()> {
    write_text(path, &data.to_text())
}

/// Raw feature table: declared dimension and rows in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub dim: usize,
    pub rows: BTreeMap<String, Vec<f64>>,
}

/// Parses comma-separated floats, requiring exactly `dim` finite values.
pub fn parse_feature_values(text: &str, dim: usize) -> std::result::Result<Vec<f64>, String> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| format!("bad value {s:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    if values.len() != dim {
        return Err(format!("expected {dim} values, found {}", values.len()));
    }
    if let Some(x) = values.iter().find(|x| !x.is_finite()) {
        return Err(format!("non-finite value {x}"));
    }
    Ok(values)
}

pub fn parse_feature_table_str(text: &str, path: &Path) -> Result<FeatureTable> {
    let mut lines = data_lines(text);
    let (n, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing dim=<d> header"))?;
    let dim: usize = header
        .strip_prefix("dim=")
        .and_then(|d| d.trim().parse().ok())
        .filter(|&d| d > 0)
        .ok_or_else(|| parse_error(path, n, format!("expected dim=<d> header, found {header:?}")))?;
    let mut rows = BTreeMap::new();
    for (n, line) in lines {
        let (video, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_error(path, n, "expected video<TAB>values"))?;
        let values = parse_feature_values(values, dim)
            .map_err(|e| parse_error(path, n, format!("video {video:?}: {e}")))?;
        if rows.insert(video.to_string(), values).is_some() {
            return Err(parse_error(path, n, format!("duplicate row for video {video:?}")));
        }
    }
    Ok(FeatureTable { dim, rows })
}

impl FeatureTable {
    /// One row per vocabulary video, in index order. Rows for unknown videos
    /// are ignored.
    pub fn to_matrix(&self, videos: &Vocabulary, expected_dim: Option<usize>) -> Result<Matrix> {
        if let Some(d) = expected_dim {
            if d != self.dim {
                return Err(Error::Shape {
                    op: "features",
                    detail: format!("file has dim={}, expected {d}", self.dim),
                });
            }
        }
        let mut m = Matrix::zeros(videos.len(), self.dim);
        for (k, name) in videos.names().iter().enumerate() {
            let row = self
                .rows
                .get(name)
                .ok_or_else(|| Error::MissingFeature(name.clone()))?;
            m.row_mut(k).copy_from_slice(row);
        }
        Ok(m)
    }
}

/// Feature matrix aligned with `videos`.
pub fn parse_features(path: &Path, expected_dim: Option<usize>, videos: &Vocabulary) -> Result<Matrix> {
    parse_feature_table_str(&read_text(path)?, path)?.to_matrix(videos, expected_dim)
}

/// `Display` for `f64` prints the shortest string that parses back to the same value.
pub fn features_to_text(videos: &Vocabulary, features: &Matrix) -> String {
    let mut out = format!("dim={}\n", features.cols());
    for (k, name) in videos.names().iter().enumerate() {
        out.push_str(name);
        out.push('\t');
        for (c, x) in features.row(k).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            let _ = write!(out, "{x}");
        }
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, videos: &Vocabulary, features: &Matrix) -> Result<()> {
    if features.rows() != videos.len() {
        return Err(Error::Shape {
            op: "write_features",
            detail: format!("{} rows for {} videos", features.rows(), videos.len()),
        });
    }
    write_text(path, &features_to_text(videos, features))
}
