//! Hierarchical time-contrastive triplets: intra-chunk triplets over frames
//! and inter-chunk triplets over whole chunks, evaluated on externally
//! produced per-frame embeddings.

use super::{AnalyticsError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

/// Largest deviation from unit norm accepted for an f32 embedding.
pub const UNIT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TripletConfig {
    /// Frames per chunk.
    pub chunk_len: usize,
    /// Intra-chunk positives lie within this many frames of the anchor.
    pub pos_radius: usize,
    /// Intra-chunk negatives lie in (pos_radius, neg_radius] frames.
    pub neg_radius: usize,
    pub chunk_pos_radius: usize,
    pub chunk_neg_radius: usize,
    pub margin: f64,
    pub lambda_hf: f64,
    pub lambda_lf: f64,
    pub lambda_term: f64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            chunk_len: 24,
            pos_radius: 6,
            neg_radius: 12,
            chunk_pos_radius: 3,
            chunk_neg_radius: 6,
            margin: 0.2,
            lambda_hf: 1.0,
            lambda_lf: 1.0,
            lambda_term: 1.0,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0 < self.pos_radius
            && self.pos_radius < self.neg_radius
            && self.neg_radius <= self.chunk_len
            && 0 < self.chunk_pos_radius
            && self.chunk_pos_radius < self.chunk_neg_radius
            && self.margin.is_finite()
            && self.margin >= 0.0
            && [self.lambda_hf, self.lambda_lf, self.lambda_term].iter().all(|l| l.is_finite() && *l >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(AnalyticsError::InvalidArgument(format!("inconsistent triplet config {self:?}")))
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TripletConfig = toml::from_str(text).map_err(|e| AnalyticsError::InvalidArgument(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn chunk_of(&self, frame: usize) -> usize {
        frame / self.chunk_len
    }

    /// Positives and negatives allowed for `anchor` among `frames` frames.
    pub fn candidates(&self, kind: TripletKind, frames: usize, anchor: usize) -> (Vec<usize>, Vec<usize>) {
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        match kind {
            TripletKind::IntraChunk => {
                let c = self.chunk_of(anchor);
                let chunk = c * self.chunk_len..((c + 1) * self.chunk_len).min(frames);
                for f in chunk {
                    let d = f.abs_diff(anchor);
                    if 0 < d && d <= self.pos_radius {
                        pos.push(f);
                    } else if self.pos_radius < d && d <= self.neg_radius {
                        neg.push(f);
                    }
                }
            }
            TripletKind::InterChunk => {
                let c = self.chunk_of(anchor);
                for f in 0..frames {
                    let d = self.chunk_of(f).abs_diff(c);
                    if 0 < d && d <= self.chunk_pos_radius {
                        pos.push(f);
                    } else if self.chunk_pos_radius < d && d <= self.chunk_neg_radius {
                        neg.push(f);
                    }
                }
            }
        }
        (pos, neg)
    }

    /// Last `chunk_len` frames: the terminal frames of a successful demonstration.
    pub fn terminal_frames(&self, frames: usize) -> Range<usize> {
        frames.saturating_sub(self.chunk_len)..frames
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripletKind {
    IntraChunk,
    InterChunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
    pub kind: TripletKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    pub triplets: Vec<Triplet>,
    /// Kinds with no valid triplet at this frame count.
    pub omitted: Vec<TripletKind>,
}

/// Draws `count` triplets of each kind. Anchors are uniform over frames and
/// redrawn until they admit a positive and a negative; positive and negative
/// are then uniform over their candidate sets.
pub fn sample_triplets(frames: usize, cfg: &TripletConfig, count: usize, seed: u64) -> Result<TripletSet> {
    cfg.validate()?;
    if frames < 2 * cfg.chunk_len {
        return Err(AnalyticsError::InvalidArgument(format!(
            "{frames} frames is fewer than two chunks of {}",
            cfg.chunk_len
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = TripletSet { triplets: Vec::with_capacity(2 * count), omitted: Vec::new() };
    for kind in [TripletKind::IntraChunk, TripletKind::InterChunk] {
        let possible = (0..frames).any(|a| {
            let (p, n) = cfg.candidates(kind, frames, a);
            !p.is_empty() && !n.is_empty()
        });
        if !possible {
            log::warn!("no valid {kind:?} triplet among {frames} frames; omitting that kind");
            out.omitted.push(kind);
            continue;
        }
        for _ in 0..count {
            let (anchor, pos, neg) = loop {
                let a = rng.gen_range(0..frames);
                let (p, n) = cfg.candidates(kind, frames, a);
                if !p.is_empty() && !n.is_empty() {
                    break (a, p, n);
                }
            };
            let positive = pos[rng.gen_range(0..pos.len())];
            let negative = neg[rng.gen_range(0..neg.len())];
            out.triplets.push(Triplet { anchor, positive, negative, kind });
        }
    }
    Ok(out)
}

/// Row-major per-frame embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl Embeddings {
    pub fn new(frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || data.len() != frames * dim {
            return Err(AnalyticsError::InvalidArgument(format!(
                "{} values do not form {frames} frames of dimension {dim}",
                data.len()
            )));
        }
        Ok(Embeddings { frames, dim, data })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// `[frames u32][dim u32][frames*dim f32]`, little-endian.
    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut hdr = [0u8; 8];
        r.read_exact(&mut hdr)?;
        let frames = u32::from_le_bytes(hdr[0..4].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(hdr[4..8].try_into().unwrap()) as usize;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        if body.len() != frames * dim * 4 {
            return Err(AnalyticsError::InvalidArgument(format!(
                "embedding file declares {frames}x{dim} but holds {} bytes of values",
                body.len()
            )));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Embeddings::new(frames, dim, data)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Embeddings::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&(self.frames as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn check_unit(&self) -> Result<()> {
        for i in 0..self.frames {
            let n = self.row(i).iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
            if (n - 1.0).abs() > UNIT_TOLERANCE {
                return Err(AnalyticsError::InvalidArgument(format!("embedding {i} has norm {n}")));
            }
        }
        Ok(())
    }
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TcnLoss {
    pub high_freq: f64,
    pub low_freq: f64,
    pub terminal: f64,
    pub total: f64,
}

fn push_mean(mean: &mut f64, n: &mut usize, x: f64) {
    // running form keeps a mean of equal terms exactly equal to the term
    *n += 1;
    *mean += (x - *mean) / *n as f64;
}

/// Weighted hinge losses over the triplets plus the terminal-frame
/// clustering term over every unordered pair of `terminal` frames. A term
/// with nothing to average contributes 0.
pub fn tcn_loss(emb: &Embeddings, triplets: &[Triplet], cfg: &TripletConfig, terminal: &[usize]) -> Result<TcnLoss> {
    emb.check_unit()?;
    let in_range = |i: usize| {
        if i < emb.frames() {
            Ok(())
        } else {
            Err(AnalyticsError::InvalidArgument(format!("frame {i} out of range for {} frames", emb.frames())))
        }
    };
    let (mut hf, mut n_hf, mut lf, mut n_lf) = (0.0, 0, 0.0, 0);
    for t in triplets {
        for i in [t.anchor, t.positive, t.negative] {
            in_range(i)?;
        }
        let a = emb.row(t.anchor);
        let l = (squared_distance(a, emb.row(t.positive)) - squared_distance(a, emb.row(t.negative)) + cfg.margin).max(0.0);
        match t.kind {
            TripletKind::IntraChunk => push_mean(&mut hf, &mut n_hf, l),
            TripletKind::InterChunk => push_mean(&mut lf, &mut n_lf, l),
        }
    }
    let (mut term, mut n_term) = (0.0, 0);
    for (k, &i) in terminal.iter().enumerate() {
        in_range(i)?;
        for &j in &terminal[k + 1..] {
            push_mean(&mut term, &mut n_term, squared_distance(emb.row(i), emb.row(j)));
        }
    }
    Ok(TcnLoss {
        high_freq: hf,
        low_freq: lf,
        terminal: term,
        total: cfg.lambda_hf * hf + cfg.lambda_lf * lf + cfg.lambda_term * term,
    })
}

/// Index of the semi-hard negative given the anchor-positive distance and
/// the anchor-candidate distances: the nearest candidate farther than the
/// positive, or the farthest candidate if none is. Ties go to the lower index.
pub fn select_semihard_by_distance(d_ap: f64, d_an: &[f64]) -> Result<usize> {
    if d_an.is_empty() {
        return Err(AnalyticsError::InvalidArgument("no negative candidates".into()));
    }
    let mut best: Option<usize> = None;
    for (i, &d) in d_an.iter().enumerate() {
        if d > d_ap && best.map_or(true, |b| d < d_an[b]) {
            best = Some(i);
        }
    }
    if let Some(b) = best {
        return Ok(b);
    }
    let mut far = 0;
    for (i, &d) in d_an.iter().enumerate() {
        if d > d_an[far] {
            far = i;
        }
    }
    Ok(far)
}

/// [`select_semihard_by_distance`] on embedding rows; returns the chosen
/// entry of `candidates`.
pub fn select_semihard(emb: &Embeddings, anchor: usize, positive: usize, candidates: &[usize]) -> Result<usize> {
    let a = emb.row(anchor);
    let d_ap = squared_distance(a, emb.row(positive)).sqrt();
    let d_an: Vec<f64> = candidates.iter().map(|&c| squared_distance(a, emb.row(c)).sqrt()).collect();
    Ok(candidates[select_semihard_by_distance(d_ap, &d_an)?])
}
