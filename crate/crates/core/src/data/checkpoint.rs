//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "GPHR" | version u32
//! dim u32 | d_v u32 | fusion u8 | variant u8 | aggregation u8 | leaky_slope f64
//! 3 × vocabulary: count u32, then per entry (len u32, UTF-8 bytes)
//!     order: users, hashtags, videos
//! block count u32, then per block: name len u32, name, rows u32, cols u32, rows·cols f64
//! training graph: triple count u64, (user u32, video u32, hashtag u32)…,
//!     upload count u64, (user u32, video u32)…
//! split: seed u64, 3 × ratio f64
//! ```
//!
//! The training graph travels with the parameters because propagation needs
//! it at scoring time.

use std::fs;
use std::path::Path;

use super::{Vocabularies, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{build_graph, TaggingTriple, TripartiteGraph};
use crate::model::{Aggregation, Fusion, GcnPhr, ModelConfig, ModelParams, Variant};

pub const MAGIC: &[u8; 4] = b"GPHR";
pub const VERSION: u32 = 1;

/// Everything needed to reproduce scoring exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: GcnPhr,
    pub vocab: Vocabularies,
    /// Tagging triples of the training split.
    pub train_triples: Vec<TaggingTriple>,
    pub uploads: Vec<(usize, usize)>,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
}

impl Checkpoint {
    pub fn graph(&self) -> Result<TripartiteGraph> {
        build_graph(self.vocab.counts(), &self.train_triples, &self.uploads)
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("invalid UTF-8 before byte {}", self.pos)))
    }
    /// Element count whose payload must still fit in the file.
    fn count(&mut self, wide: bool, item_bytes: usize) -> Result<usize> {
        let n = if wide { self.u64()? as usize } else { self.u32()? };
        let remaining = self.bytes.len() - self.pos;
        if n.saturating_mul(item_bytes) > remaining {
            return Err(Error::Checkpoint(format!("count {n} exceeds remaining {remaining} bytes")));
        }
        Ok(n)
    }
}

fn fusion_code(f: Fusion) -> u8 {
    match f {
        Fusion::NeuralNet => 0,
        Fusion::TransformSum => 1,
    }
}

fn variant_code(v: Variant) -> u8 {
    match v {
        Variant::Full => 0,
        Variant::NoAttention => 1,
        Variant::NoUserPrefOnHashtag => 2,
        Variant::NoHashtagGuidanceOnUser => 3,
    }
}

fn aggregation_code(a: Aggregation) -> u8 {
    match a {
        Aggregation::Sum => 0,
        Aggregation::Mean => 1,
    }
}

pub fn encode(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());

    let c = &ck.model.config;
    w.u32(c.dim)?;
    w.u32(c.d_v)?;
    w.u8(fusion_code(c.fusion));
    w.u8(variant_code(c.variant));
    w.u8(aggregation_code(c.aggregate_videos));
    w.f64(c.leaky_slope);

    for v in [&ck.vocab.users, &ck.vocab.hashtags, &ck.vocab.videos] {
        w.u32(v.len())?;
        for name in v.names() {
            w.str(name)?;
        }
    }

    let blocks = ck.model.params.blocks();
    w.u32(blocks.len())?;
    for (name, m) in blocks {
        w.str(name)?;
        w.u32(m.rows())?;
        w.u32(m.cols())?;
        for &x in m.data() {
            w.f64(x);
        }
    }

    w.u64(ck.train_triples.len() as u64);
    for t in &ck.train_triples {
        w.u32(t.user)?;
        w.u32(t.video)?;
        w.u32(t.hashtag)?;
    }
    w.u64(ck.uploads.len() as u64);
    for &(u, v) in &ck.uploads {
        w.u32(u)?;
        w.u32(v)?;
    }
    w.u64(ck.split_seed);
    for r in ck.split_ratios {
        w.f64(r);
    }
    Ok(w.0)
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| Error::Checkpoint("file too short for magic".into()))? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes (not a checkpoint)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
    }

    let dim = r.u32()?;
    let d_v = r.u32()?;
    let fusion = match r.u8()? {
        0 => Fusion::NeuralNet,
        1 => Fusion::TransformSum,
        x => return Err(Error::Checkpoint(format!("unknown fusion code {x}"))),
    };
    let variant = match r.u8()? {
        0 => Variant::Full,
        1 => Variant::NoAttention,
        2 => Variant::NoUserPrefOnHashtag,
        3 => Variant::NoHashtagGuidanceOnUser,
        x => return Err(Error::Checkpoint(format!("unknown variant code {x}"))),
    };
    let aggregate_videos = match r.u8()? {
        0 => Aggregation::Sum,
        1 => Aggregation::Mean,
        x => return Err(Error::Checkpoint(format!("unknown aggregation code {x}"))),
    };
    let config = ModelConfig {
        dim,
        d_v,
        fusion,
        variant,
        leaky_slope: r.f64()?,
        aggregate_videos,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;

    let mut vocabs = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.count(false, 4)?;
        let names = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        vocabs.push(Vocabulary::from_names(names)?);
    }
    let videos = vocabs.pop().unwrap();
    let hashtags = vocabs.pop().unwrap();
    let users = vocabs.pop().unwrap();

    let mut params = ModelParams::zeros(&config, users.len(), hashtags.len());
    let n_blocks = r.u32()?;
    let mut slots = params.blocks_mut();
    if n_blocks != slots.len() {
        return Err(Error::Checkpoint(format!(
            "{n_blocks} parameter blocks stored, {} expected",
            slots.len()
        )));
    }
    for (expected, m) in slots.iter_mut() {
        let name = r.str()?;
        if name != *expected {
            return Err(Error::Checkpoint(format!("block {name:?} where {expected:?} expected")));
        }
        let (rows, cols) = (r.u32()?, r.u32()?);
        if (rows, cols) != m.shape() {
            return Err(Error::Checkpoint(format!(
                "block {name} is {rows}x{cols}, expected {:?}",
                m.shape()
            )));
        }
        for x in m.data_mut() {
            *x = r.f64()?;
        }
        if !m.is_finite() {
            return Err(Error::Checkpoint(format!("block {name} holds non-finite values")));
        }
    }
    drop(slots);

    let n = r.count(true, 12)?;
    let mut train_triples = Vec::with_capacity(n);
    for _ in 0..n {
        train_triples.push(TaggingTriple::new(r.u32()?, r.u32()?, r.u32()?));
    }
    let n = r.count(true, 8)?;
    let mut uploads = Vec::with_capacity(n);
    for _ in 0..n {
        uploads.push((r.u32()?, r.u32()?));
    }
    let split_seed = r.u64()?;
    let split_ratios = [r.f64()?, r.f64()?, r.f64()?];
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let ck = Checkpoint {
        model: GcnPhr { config, params },
        vocab: Vocabularies {
            users,
            hashtags,
            videos,
        },
        train_triples,
        uploads,
        split_seed,
        split_ratios,
    };
    ck.graph()
        .map_err(|e| Error::Checkpoint(format!("stored training graph: {e}")))?;
    Ok(ck)
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode(ck)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
