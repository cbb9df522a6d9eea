//! Video corpus: records, relevance lists, splits, synthetic generation and
//! the on-disk manifest + blob format.
//!
//! On disk a corpus is a directory holding `manifest.json` and one
//! `features/<id>.f32` blob per video. Each blob is the frame matrix
//! (row-major) followed by the video-level vector, all little-endian `f32`.
//! Values are widened to `f64` on load.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::binio::f32_bytes;
use crate::error::{Error, LoadIssue, Result};
use crate::matrix::Matrix;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::config("split", format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// `[n_frames x frame_dim]`
    pub frame_features: Matrix,
    pub video_feature: Vec<f64>,
}

impl VideoRecord {
    pub fn n_frames(&self) -> usize {
        self.frame_features.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceList {
    pub anchor_id: String,
    /// Most relevant first.
    pub relevant_ids: Vec<String>,
}

/// Immutable collection of videos with relevance lists and a split assignment.
///
/// Relevance is held as corpus indices; index order is the order videos were
/// supplied in and is what every downstream module refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    frame_dim: usize,
    video_dim: usize,
    videos: Vec<VideoRecord>,
    splits: Vec<Split>,
    relevance: Vec<Vec<usize>>,
    index: HashMap<String, usize>,
}

pub(crate) fn validate_token(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !id.starts_with('.');
    if ok {
        Ok(())
    } else {
        Err(Error::Data(format!("invalid video id `{id}`")))
    }
}

impl Corpus {
    pub fn new(
        frame_dim: usize,
        video_dim: usize,
        videos: Vec<VideoRecord>,
        splits: Vec<Split>,
        relevance: Vec<RelevanceList>,
    ) -> Result<Self> {
        if splits.len() != videos.len() {
            return Err(Error::dims("split assignment", videos.len(), splits.len()));
        }
        let mut index = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            validate_token(&v.id)?;
            if index.insert(v.id.clone(), i).is_some() {
                return Err(Error::Data(format!("duplicate video id `{}`", v.id)));
            }
            if v.n_frames() == 0 {
                return Err(Error::EmptySequence(format!("video `{}` has no frames", v.id)));
            }
            if v.frame_features.cols() != frame_dim {
                return Err(Error::dims(
                    format!("frame features of `{}`", v.id),
                    frame_dim,
                    v.frame_features.cols(),
                ));
            }
            if v.video_feature.len() != video_dim {
                return Err(Error::dims(
                    format!("video feature of `{}`", v.id),
                    video_dim,
                    v.video_feature.len(),
                ));
            }
            let finite = v.frame_features.as_slice().iter().all(|x| x.is_finite())
                && v.video_feature.iter().all(|x| x.is_finite());
            if !finite {
                return Err(Error::Data(format!("video `{}` has non-finite values", v.id)));
            }
        }

        let mut rel = vec![Vec::new(); videos.len()];
        for list in relevance {
            let a = *index
                .get(&list.anchor_id)
                .ok_or_else(|| Error::Data(format!("unknown anchor `{}`", list.anchor_id)))?;
            if !rel[a].is_empty() {
                return Err(Error::Data(format!(
                    "duplicate relevance list for `{}`",
                    list.anchor_id
                )));
            }
            let mut seen = Vec::with_capacity(list.relevant_ids.len());
            for rid in &list.relevant_ids {
                let r = *index.get(rid).ok_or_else(|| {
                    Error::Data(format!("relevance list of `{}` names unknown `{rid}`", list.anchor_id))
                })?;
                if r == a {
                    return Err(Error::Data(format!("`{rid}` lists itself as relevant")));
                }
                if seen.contains(&r) {
                    return Err(Error::Data(format!(
                        "duplicate `{rid}` in relevance list of `{}`",
                        list.anchor_id
                    )));
                }
                seen.push(r);
            }
            rel[a] = seen;
        }

        Ok(Corpus {
            frame_dim,
            video_dim,
            videos,
            splits,
            relevance: rel,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn frame_dim(&self) -> usize {
        self.frame_dim
    }

    pub fn video_dim(&self) -> usize {
        self.video_dim
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.videos
    }

    pub fn video(&self, i: usize) -> &VideoRecord {
        &self.videos[i]
    }

    pub fn id(&self, i: usize) -> &str {
        &self.videos[i].id
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn split(&self, i: usize) -> Split {
        self.splits[i]
    }

    /// Ranked relevant indices for video `i` (empty when it has no list).
    pub fn relevant(&self, i: usize) -> &[usize] {
        &self.relevance[i]
    }

    pub fn relevance_list(&self, i: usize) -> RelevanceList {
        RelevanceList {
            anchor_id: self.id(i).to_string(),
            relevant_ids: self.relevance[i].iter().map(|&r| self.id(r).to_string()).collect(),
        }
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }
}

/// Parameters of the planted-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_videos: usize,
    pub n_clusters: usize,
    pub frame_dim: usize,
    pub video_dim: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    pub noise_sigma: f64,
    pub relevance_size: usize,
    pub seed: u64,
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_videos: 200,
            n_clusters: 10,
            frame_dim: 32,
            video_dim: 16,
            frames_min: 4,
            frames_max: 8,
            noise_sigma: 0.25,
            relevance_size: 5,
            seed: 7,
            train_frac: 0.7,
            val_frac: 0.15,
        }
    }
}

const CENTROID_RETRIES: usize = 100;
const MIN_SEPARATION_SIGMAS: f64 = 6.0;

fn draw_centroids(rng: &mut ChaCha8Rng, k: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect()
}

fn min_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.min(euclidean(&points[i], &points[j]));
        }
    }
    best
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Per-cluster member counts in each split under stratified assignment.
fn split_counts(pop: usize, train_frac: f64, val_frac: f64) -> (usize, usize, usize) {
    let train = ((pop as f64) * train_frac).round() as usize;
    let train = train.min(pop);
    let val = (((pop as f64) * val_frac).round() as usize).min(pop - train);
    (train, val, pop - train - val)
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_videos == 0 {
            return Err(Error::config("n_videos", "must be at least 1"));
        }
        if self.n_clusters == 0 || self.n_clusters > self.n_videos {
            return Err(Error::config("n_clusters", "must be in 1..=n_videos"));
        }
        if self.frame_dim == 0 {
            return Err(Error::config("frame_dim", "must be at least 1"));
        }
        if self.video_dim == 0 {
            return Err(Error::config("video_dim", "must be at least 1"));
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return Err(Error::config("frames_range", "need 1 <= min <= max"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma > 0.0) {
            return Err(Error::config("noise_sigma", "must be a positive finite real"));
        }
        let fracs_ok = (0.0..=1.0).contains(&self.train_frac)
            && (0.0..=1.0).contains(&self.val_frac)
            && self.train_frac + self.val_frac <= 1.0;
        if !fracs_ok {
            return Err(Error::config("train_frac", "split fractions must lie in [0,1] and sum to <= 1"));
        }
        if self.relevance_size > 0 {
            let pop = self.n_videos / self.n_clusters;
            if self.relevance_size >= pop {
                return Err(Error::config(
                    "relevance_size",
                    format!("must be below the per-cluster population {pop}"),
                ));
            }
            // Lists only reference train videos plus the anchor's own split.
            let (tr, va, te) = split_counts(pop, self.train_frac, self.val_frac);
            let mut room = tr.saturating_sub(1);
            if va > 0 {
                room = room.min(tr + va - 1);
            }
            if te > 0 {
                room = room.min(tr + te - 1);
            }
            if self.relevance_size > room {
                return Err(Error::config(
                    "relevance_size",
                    format!(
                        "per-cluster split sizes (train {tr}, val {va}, test {te}) leave room for only {room} relevant videos"
                    ),
                ));
            }
        }
        Ok(())
    }
}

/// Generates a planted-cluster corpus. Pure function of `config`.
///
/// Each video is assigned one cluster. Its frames and video vector are the
/// cluster centroids plus i.i.d. Gaussian noise, rounded to `f32` precision
/// so the in-memory corpus equals its on-disk form. Relevance lists hold the
/// `relevance_size` nearest same-cluster videos in video-feature space, drawn
/// from the train split plus the anchor's own split.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let k = config.n_clusters;
    let min_sep = MIN_SEPARATION_SIGMAS * config.noise_sigma;

    let mut centroids = None;
    for _ in 0..=CENTROID_RETRIES {
        let frame_c = draw_centroids(&mut rng, k, config.frame_dim);
        let video_c = draw_centroids(&mut rng, k, config.video_dim);
        if min_pairwise_distance(&frame_c) >= min_sep && min_pairwise_distance(&video_c) >= min_sep {
            centroids = Some((frame_c, video_c));
            break;
        }
    }
    let (frame_c, video_c) = centroids.ok_or_else(|| {
        Error::config(
            "noise_sigma",
            format!(
                "could not place {k} centroids at least {MIN_SEPARATION_SIGMAS} sigma apart after {CENTROID_RETRIES} retries"
            ),
        )
    })?;

    let n = config.n_videos;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cluster = vec![0usize; n];
    for (slot, &v) in order.iter().enumerate() {
        cluster[v] = slot % k;
    }

    let mut splits = vec![Split::Train; n];
    for c in 0..k {
        let mut members: Vec<usize> = (0..n).filter(|&v| cluster[v] == c).collect();
        members.shuffle(&mut rng);
        let (tr, va, _) = split_counts(members.len(), config.train_frac, config.val_frac);
        for (pos, &v) in members.iter().enumerate() {
            splits[v] = if pos < tr {
                Split::Train
            } else if pos < tr + va {
                Split::Val
            } else {
                Split::Test
            };
        }
    }

    let noise = Normal::new(0.0, config.noise_sigma).expect("validated sigma");
    let width = n.saturating_sub(1).to_string().len().max(4);
    let mut videos = Vec::with_capacity(n);
    for v in 0..n {
        let c = cluster[v];
        let n_frames = rng.random_range(config.frames_min..=config.frames_max);
        let mut frames = Vec::with_capacity(n_frames * config.frame_dim);
        for _ in 0..n_frames {
            for &mu in &frame_c[c] {
                frames.push(round_f32(mu + noise.sample(&mut rng)));
            }
        }
        let video_feature = video_c[c]
            .iter()
            .map(|&mu| round_f32(mu + noise.sample(&mut rng)))
            .collect();
        videos.push(VideoRecord {
            id: format!("v{v:0width$}"),
            frame_features: Matrix::new(n_frames, config.frame_dim, frames)?,
            video_feature,
        });
    }

    let mut relevance = Vec::new();
    if config.relevance_size > 0 {
        for a in 0..n {
            let mut cands: Vec<(f64, usize)> = (0..n)
                .filter(|&b| {
                    b != a
                        && cluster[b] == cluster[a]
                        && (splits[b] == Split::Train || splits[b] == splits[a])
                })
                .map(|b| (euclidean(&videos[a].video_feature, &videos[b].video_feature), b))
                .collect();
            cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            relevance.push(RelevanceList {
                anchor_id: videos[a].id.clone(),
                relevant_ids: cands
                    .iter()
                    .take(config.relevance_size)
                    .map(|&(_, b)| videos[b].id.clone())
                    .collect(),
            });
        }
    }

    Corpus::new(config.frame_dim, config.video_dim, videos, splits, relevance)
}

#[inline]
fn round_f32(x: f64) -> f64 {
    x as f32 as f64
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    frame_dim: usize,
    video_dim: usize,
    videos: Vec<ManifestVideo>,
    relevance: Vec<RelevanceList>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestVideo {
    id: String,
    n_frames: usize,
    split: Split,
    path: String,
}

/// Writes `manifest.json` and `features/<id>.f32` under `dir`.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<PathBuf> {
    let feat_dir = dir.join("features");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut entries = Vec::with_capacity(corpus.len());
    for (i, v) in corpus.videos().iter().enumerate() {
        let rel = format!("features/{}.f32", v.id);
        let bytes = f32_bytes(
            v.frame_features
                .as_slice()
                .iter()
                .chain(&v.video_feature)
                .copied(),
        );
        let path = dir.join(&rel);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestVideo {
            id: v.id.clone(),
            n_frames: v.n_frames(),
            split: corpus.split(i),
            path: rel,
        });
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        frame_dim: corpus.frame_dim(),
        video_dim: corpus.video_dim(),
        videos: entries,
        relevance: (0..corpus.len())
            .filter(|&i| !corpus.relevant(i).is_empty())
            .map(|i| corpus.relevance_list(i))
            .collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Loads a corpus from its manifest. Blob paths resolve relative to the
/// manifest's directory.
pub fn load_corpus(manifest_path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format_version != MANIFEST_FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported manifest format_version {}",
            manifest.format_version
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (fd, vd) = (manifest.frame_dim, manifest.video_dim);

    let mut videos = Vec::with_capacity(manifest.videos.len());
    let mut splits = Vec::with_capacity(manifest.videos.len());
    for entry in &manifest.videos {
        validate_token(&entry.id)?;
        let path = base.join(&entry.path);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let n_values = entry.n_frames * fd + vd;
        let expected = (n_values * 4) as u64;
        if bytes.len() as u64 != expected {
            return Err(Error::Load {
                id: entry.id.clone(),
                offset: expected.min(bytes.len() as u64),
                issue: LoadIssue::DimensionMismatch {
                    expected_bytes: expected,
                    got_bytes: bytes.len() as u64,
                },
            });
        }
        let mut values = Vec::with_capacity(n_values);
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let x = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !x.is_finite() {
                return Err(Error::Load {
                    id: entry.id.clone(),
                    offset: (k * 4) as u64,
                    issue: LoadIssue::NonFinite,
                });
            }
            values.push(x as f64);
        }
        let video_feature = values.split_off(entry.n_frames * fd);
        videos.push(VideoRecord {
            id: entry.id.clone(),
            frame_features: Matrix::new(entry.n_frames, fd, values)?,
            video_feature,
        });
        splits.push(entry.split);
    }
    Corpus::new(fd, vd, videos, splits, manifest.relevance)
}
