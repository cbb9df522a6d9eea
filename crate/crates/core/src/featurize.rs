//! Fixed-length fused feature vectors from variable-length frame sequences.
//!
//! A fused vector is the flattened, feature-axis pooled matrix of seven
//! temporal statistics (optionally also computed over first and second
//! differences of the frames) followed by the video-level vector.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::f32_bytes;
use crate::corpus::{Corpus, VideoRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Row order of [`temporal_stats`].
pub const STAT_NAMES: [&str; 7] = ["mean", "max", "min", "median", "q25", "q75", "std"];
pub const N_STATS: usize = STAT_NAMES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub pool_k: usize,
    pub delta: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            pool_k: 4,
            delta: false,
        }
    }
}

impl FeatureConfig {
    /// Token identifying the statistics set, pooling and delta flags.
    pub fn config_hash(&self) -> String {
        format!("stats7-featpool{}-delta{}", self.pool_k, u8::from(self.delta))
    }

    /// Inverse of [`FeatureConfig::config_hash`].
    pub fn from_hash(token: &str) -> Result<Self> {
        let bad = || Error::Data(format!("unrecognised feature config token `{token}`"));
        let rest = token.strip_prefix("stats7-featpool").ok_or_else(bad)?;
        let (k, d) = rest.split_once("-delta").ok_or_else(bad)?;
        let pool_k = k.parse().map_err(|_| bad())?;
        let delta = match d {
            "0" => false,
            "1" => true,
            _ => return Err(bad()),
        };
        let cfg = FeatureConfig { pool_k, delta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.pool_k == 0 {
            return Err(Error::config("pool_k", "must be at least 1"));
        }
        Ok(())
    }

    /// Length of a fused vector for the given input dimensions.
    pub fn fused_len(&self, frame_dim: usize, video_dim: usize) -> usize {
        let blocks = if self.delta { 3 } else { 1 };
        blocks * N_STATS * frame_dim.div_ceil(self.pool_k) + video_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedFeatureVector {
    pub values: Vec<f64>,
    pub config_hash: String,
}

/// Linear interpolation between order statistics at position `(n-1)*q`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Column-wise statistics over time: rows are mean, max, min, median, q25,
/// q75 and population standard deviation.
pub fn temporal_stats(frames: &Matrix) -> Result<Matrix> {
    let n = frames.rows();
    if n == 0 {
        return Err(Error::EmptySequence("temporal statistics need at least one frame".into()));
    }
    let d = frames.cols();
    let mut out = Matrix::zeros(N_STATS, d);
    let mut column = vec![0.0; n];
    for j in 0..d {
        for (t, slot) in column.iter_mut().enumerate() {
            *slot = frames.get(t, j);
        }
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / n as f64;
        let var = column.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let stats = [
            mean,
            column[n - 1],
            column[0],
            quantile_sorted(&column, 0.5),
            quantile_sorted(&column, 0.25),
            quantile_sorted(&column, 0.75),
            var.sqrt(),
        ];
        for (s, v) in stats.into_iter().enumerate() {
            out.set(s, j, v);
        }
    }
    Ok(out)
}

/// First difference along time: row `t` is `frames[t+1] - frames[t]`.
pub fn delta_sequence(frames: &Matrix) -> Result<Matrix> {
    let n = frames.rows();
    if n < 2 {
        return Err(Error::EmptySequence(format!(
            "delta features need at least 2 frames, got {n}"
        )));
    }
    let d = frames.cols();
    let mut out = Matrix::zeros(n - 1, d);
    for t in 0..n - 1 {
        let (a, b) = (frames.row(t), frames.row(t + 1));
        for (o, (x, y)) in out.row_mut(t).iter_mut().zip(a.iter().zip(b)) {
            *o = y - x;
        }
    }
    Ok(out)
}

/// Non-overlapping average pooling along the feature axis. A trailing
/// partial window is averaged over its actual width.
pub fn pool_features(stats: &Matrix, pool_k: usize) -> Result<Matrix> {
    if pool_k == 0 {
        return Err(Error::config("pool_k", "must be at least 1"));
    }
    let width = stats.cols().div_ceil(pool_k);
    let mut out = Matrix::zeros(stats.rows(), width);
    for r in 0..stats.rows() {
        for (w, chunk) in stats.row(r).chunks(pool_k).enumerate() {
            out.set(r, w, chunk.iter().sum::<f64>() / chunk.len() as f64);
        }
    }
    Ok(out)
}

/// Fused vector for one video: pooled statistics (stat-major) then the
/// video-level vector.
pub fn fuse(record: &VideoRecord, config: &FeatureConfig) -> Result<FusedFeatureVector> {
    config.validate()?;
    let frames = &record.frame_features;
    let mut values = Vec::with_capacity(config.fused_len(frames.cols(), record.video_feature.len()));
    values.extend_from_slice(pool_features(&temporal_stats(frames)?, config.pool_k)?.as_slice());
    if config.delta {
        let delta = delta_sequence(frames)?;
        let delta2 = delta_sequence(&delta)?;
        for seq in [&delta, &delta2] {
            values.extend_from_slice(pool_features(&temporal_stats(seq)?, config.pool_k)?.as_slice());
        }
    }
    values.extend_from_slice(&record.video_feature);
    Ok(FusedFeatureVector {
        values,
        config_hash: config.config_hash(),
    })
}

/// Fused vectors for every video, one row per corpus index.
pub fn featurize_corpus(corpus: &Corpus, config: &FeatureConfig) -> Result<Matrix> {
    let rows: Vec<Vec<f64>> = corpus
        .videos()
        .par_iter()
        .map(|v| fuse(v, config).map(|f| f.values))
        .collect::<Result<_>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, config.fused_len(corpus.frame_dim(), corpus.video_dim())));
    }
    Matrix::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub pooling_axis: String,
    pub stats: Vec<String>,
    pub rows: usize,
    pub cols: usize,
    pub ids: Vec<String>,
    pub path: String,
}

/// Writes `features.f32` (packed row-major) and `features.json` into `dir`.
pub fn save_features(corpus: &Corpus, features: &Matrix, config: &FeatureConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let blob = dir.join("features.f32");
    fs::write(&blob, f32_bytes(features.as_slice().iter().copied())).map_err(|e| Error::io(&blob, e))?;
    let manifest = FeatureManifest {
        format_version: 1,
        config_hash: config.config_hash(),
        pooling_axis: "feature".into(),
        stats: STAT_NAMES.iter().map(|s| s.to_string()).collect(),
        rows: features.rows(),
        cols: features.cols(),
        ids: (0..corpus.len()).map(|i| corpus.id(i).to_string()).collect(),
        path: "features.f32".into(),
    };
    let path = dir.join("features.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Loads packed features and reorders them to match `corpus` indices.
pub fn load_features(dir: &Path, corpus: &Corpus) -> Result<(Matrix, FeatureConfig)> {
    let path = dir.join("features.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: FeatureManifest = serde_json::from_str(&text)?;
    let config = FeatureConfig::from_hash(&manifest.config_hash)?;
    let blob = dir.join(&manifest.path);
    let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
    if bytes.len() != manifest.rows * manifest.cols * 4 || manifest.ids.len() != manifest.rows {
        return Err(Error::dims("feature blob bytes", manifest.rows * manifest.cols * 4, bytes.len()));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite value in feature blob".into()));
    }
    let packed = Matrix::new(manifest.rows, manifest.cols, values)?;
    let mut out = Matrix::zeros(corpus.len(), manifest.cols);
    let mut filled = vec![false; corpus.len()];
    for (r, id) in manifest.ids.iter().enumerate() {
        if let Some(i) = corpus.index_of(id) {
            out.row_mut(i).copy_from_slice(packed.row(r));
            filled[i] = true;
        }
    }
    if let Some(i) = filled.iter().position(|f| !f) {
        return Err(Error::Data(format!("features missing for video `{}`", corpus.id(i))));
    }
    Ok((out, config))
}
