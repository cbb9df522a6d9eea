//! Fused LSTM embedding network trained as a triplet network.
//!
//! `embed(video) = W [lstm(frames); video_feature] + b`. The three branches
//! of a triplet share one set of parameters, so gradients from the anchor,
//! positive and negative passes are summed.

mod adam;
mod lstm;
mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use lstm::{lstm_forward, LstmCache, LstmParams};
pub use train::{train, LossPoint, TrainConfig, TrainReport};

use crate::binio::{BinReader, BinWriter};
use crate::corpus::{Corpus, VideoRecord};
use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::omks::{read_kernel, write_kernel};
use crate::simkernel::{softmax_pair, triplet_hinge, KernelKind, KernelSpec, TripletLossSpec};

pub const FLSM_MAGIC: &[u8; 4] = b"FLSM";
pub const FLSM_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EMBED_DIM: usize = 256;
pub const DEFAULT_HIDDEN_DIM: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `[out_dim x in_dim]`
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
        }
    }

    fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let mut d = Self::zeros(in_dim, out_dim);
        let bound = 1.0 / (in_dim as f64).sqrt();
        for x in &mut d.w {
            *x = rng.random_range(-bound..=bound);
        }
        d
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        (0..self.out_dim)
            .map(|r| self.b[r] + dot(&self.w[r * self.in_dim..(r + 1) * self.in_dim], x))
            .collect()
    }

    /// Accumulates weight gradients and returns `dL/dx`.
    fn backward(&self, x: &[f64], dy: &[f64], grad: &mut DenseLayer) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (r, &d) in dy.iter().enumerate() {
            let row = r * self.in_dim..(r + 1) * self.in_dim;
            for ((g, xv), (w, dxv)) in grad.w[row.clone()]
                .iter_mut()
                .zip(x)
                .zip(self.w[row].iter().zip(dx.iter_mut()))
            {
                *g += d * xv;
                *dxv += w * d;
            }
            grad.b[r] += d;
        }
        dx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedConfig {
    pub frame_dim: usize,
    pub video_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub kernel: KernelSpec,
    pub loss: TripletLossSpec,
}

impl FusedConfig {
    /// Full-size defaults (hidden 256, embedding 256) for the given inputs.
    pub fn new(frame_dim: usize, video_dim: usize, kernel: KernelSpec) -> Self {
        FusedConfig {
            frame_dim,
            video_dim,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            embed_dim: DEFAULT_EMBED_DIM,
            kernel,
            loss: TripletLossSpec::for_kernel(kernel.kind),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("frame_dim", self.frame_dim),
            ("video_dim", self.video_dim),
            ("hidden", self.hidden_dim),
            ("embed_dim", self.embed_dim),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        self.kernel.validate()?;
        self.loss.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedEmbedder {
    pub lstm: LstmParams,
    pub dense: DenseLayer,
    pub kernel: KernelSpec,
    pub loss: TripletLossSpec,
}

/// Gradient buffers shaped like [`FusedEmbedder`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub lstm: LstmParams,
    pub dense: DenseLayer,
}

impl Gradients {
    pub fn tensors(&self) -> Vec<&[f64]> {
        let [w, u, b] = self.lstm.tensors();
        vec![w, u, b, &self.dense.w, &self.dense.b]
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Loss terms of one triplet evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletEval {
    pub loss: f64,
    pub hinge: f64,
    pub s_pos: f64,
    pub s_neg: f64,
}

struct Branch {
    embedding: Vec<f64>,
    fused_input: Vec<f64>,
    cache: LstmCache,
}

impl FusedEmbedder {
    pub fn new(config: &FusedConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lstm = LstmParams::init(config.frame_dim, config.hidden_dim, &mut rng);
        let dense = DenseLayer::init(config.hidden_dim + config.video_dim, config.embed_dim, &mut rng);
        Ok(FusedEmbedder {
            lstm,
            dense,
            kernel: config.kernel,
            loss: config.loss,
        })
    }

    /// All-zero parameters.
    pub fn zeros(config: &FusedConfig) -> Result<Self> {
        config.validate()?;
        Ok(FusedEmbedder {
            lstm: LstmParams::zeros(config.frame_dim, config.hidden_dim),
            dense: DenseLayer::zeros(config.hidden_dim + config.video_dim, config.embed_dim),
            kernel: config.kernel,
            loss: config.loss,
        })
    }

    pub fn config(&self) -> FusedConfig {
        FusedConfig {
            frame_dim: self.lstm.input_dim,
            video_dim: self.video_dim(),
            hidden_dim: self.lstm.hidden_dim,
            embed_dim: self.embed_dim(),
            kernel: self.kernel,
            loss: self.loss,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.dense.out_dim
    }

    pub fn video_dim(&self) -> usize {
        self.dense.in_dim - self.lstm.hidden_dim
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            lstm: LstmParams::zeros(self.lstm.input_dim, self.lstm.hidden_dim),
            dense: DenseLayer::zeros(self.dense.in_dim, self.dense.out_dim),
        }
    }

    /// Mutable views of every parameter tensor, in a fixed order shared
    /// with [`Gradients::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let [w, u, b] = self.lstm.tensors_mut();
        vec![w, u, b, &mut self.dense.w, &mut self.dense.b]
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let [w, u, b] = self.lstm.tensors();
        vec![w.len(), u.len(), b.len(), self.dense.w.len(), self.dense.b.len()]
    }

    pub fn parameter_norm(&self) -> f64 {
        let [w, u, b] = self.lstm.tensors();
        [w, u, b, &self.dense.w[..], &self.dense.b[..]]
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    fn check_record(&self, record: &VideoRecord) -> Result<()> {
        if record.frame_features.cols() != self.lstm.input_dim {
            return Err(Error::dims(
                format!("frame features of `{}`", record.id),
                self.lstm.input_dim,
                record.frame_features.cols(),
            ));
        }
        if record.video_feature.len() != self.video_dim() {
            return Err(Error::dims(
                format!("video feature of `{}`", record.id),
                self.video_dim(),
                record.video_feature.len(),
            ));
        }
        Ok(())
    }

    fn branch(&self, record: &VideoRecord) -> Result<Branch> {
        self.check_record(record)?;
        let (h_last, cache) = lstm_forward(&self.lstm, &record.frame_features)?;
        let mut fused_input = h_last;
        fused_input.extend_from_slice(&record.video_feature);
        Ok(Branch {
            embedding: self.dense.forward(&fused_input),
            fused_input,
            cache,
        })
    }

    /// Fused embedding of one video.
    pub fn embed(&self, record: &VideoRecord) -> Result<Vec<f64>> {
        Ok(self.branch(record)?.embedding)
    }

    /// Embeddings of every corpus video, one row per index.
    pub fn embed_corpus(&self, corpus: &Corpus) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = corpus
            .videos()
            .par_iter()
            .map(|v| self.embed(v))
            .collect::<Result<_>>()?;
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.embed_dim()));
        }
        Matrix::from_rows(&rows)
    }

    /// Loss of one triplet without gradients.
    pub fn triplet_loss(&self, records: [&VideoRecord; 3]) -> Result<TripletEval> {
        let e: Vec<Vec<f64>> = records.iter().map(|r| self.embed(r)).collect::<Result<_>>()?;
        Ok(embedding_loss(&self.kernel, &self.loss, [&e[0], &e[1], &e[2]])?.0)
    }

    /// Loss and exact gradients for `(anchor, positive, negative)`.
    pub fn triplet_backward(&self, records: [&VideoRecord; 3]) -> Result<(Gradients, TripletEval)> {
        let branches: Vec<Branch> = records.iter().map(|r| self.branch(r)).collect::<Result<_>>()?;
        let (eval, de) = embedding_loss(
            &self.kernel,
            &self.loss,
            [&branches[0].embedding, &branches[1].embedding, &branches[2].embedding],
        )?;
        let mut grads = self.zero_grads();
        let h = self.lstm.hidden_dim;
        for ((branch, record), d_emb) in branches.iter().zip(records).zip(&de) {
            if d_emb.iter().all(|&g| g == 0.0) {
                continue;
            }
            let d_in = self.dense.backward(&branch.fused_input, d_emb, &mut grads.dense);
            lstm::lstm_backward(&self.lstm, &record.frame_features, &branch.cache, &d_in[..h], &mut grads.lstm);
        }
        Ok((grads, eval))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BinWriter::new(BufWriter::new(file));
        w.bytes(FLSM_MAGIC)?;
        w.u32(FLSM_FORMAT_VERSION)?;
        for d in [self.lstm.input_dim, self.lstm.hidden_dim, self.video_dim(), self.embed_dim()] {
            w.u64(d as u64)?;
        }
        write_kernel(&mut w, &self.kernel)?;
        w.f64(self.loss.margin)?;
        w.f64(self.loss.lambda)?;
        let [lw, lu, lb] = self.lstm.tensors();
        for t in [lw, lu, lb, &self.dense.w[..], &self.dense.b[..]] {
            w.f64s(t)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BinReader::new(BufReader::new(file));
        r.magic(FLSM_MAGIC)?;
        let version = r.u32()?;
        if version != FLSM_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported FLSM format_version {version}")));
        }
        let frame_dim = r.usize()?;
        let hidden_dim = r.usize()?;
        let video_dim = r.usize()?;
        let embed_dim = r.usize()?;
        let kernel = read_kernel(&mut r)?;
        let loss = TripletLossSpec {
            margin: r.f64()?,
            lambda: r.f64()?,
        };
        let config = FusedConfig {
            frame_dim,
            video_dim,
            hidden_dim,
            embed_dim,
            kernel,
            loss,
        };
        let mut model = FusedEmbedder::zeros(&config)?;
        for t in model.tensors_mut() {
            let values = r.f64s(t.len())?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data("non-finite parameter in model file".into()));
            }
            t.copy_from_slice(&values);
        }
        r.expect_end()?;
        Ok(model)
    }
}

/// Pairwise similarity and its gradients with respect to both arguments.
fn pair_similarity(kernel: &KernelSpec, a: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    match kernel.kind {
        KernelKind::Rbf => {
            let diff: Vec<f64> = a.iter().zip(x).map(|(p, q)| p - q).collect();
            let d2 = dot(&diff, &diff);
            let scale = kernel.gamma * kernel.sigma * kernel.sigma;
            let (arg, darg_scale) = if kernel.squared {
                (d2, 2.0)
            } else {
                let d = d2.sqrt();
                (d, if d > 0.0 { 1.0 / d } else { 0.0 })
            };
            let s = (-arg / scale).exp();
            let coef = -s / scale * darg_scale;
            let da: Vec<f64> = diff.iter().map(|v| coef * v).collect();
            let dx = da.iter().map(|v| -v).collect();
            Ok((s, da, dx))
        }
        KernelKind::ShiftedCosine => {
            if !kernel.normalize_inputs {
                return Ok((0.5 + 0.5 * dot(a, x), x.iter().map(|v| 0.5 * v).collect(), a.iter().map(|v| 0.5 * v).collect()));
            }
            let (na, nx) = (norm(a), norm(x));
            if na == 0.0 || nx == 0.0 {
                return Err(Error::DegenerateEmbedding("zero-norm embedding under normalized cosine".into()));
            }
            let c = dot(a, x) / (na * nx);
            let da = a
                .iter()
                .zip(x)
                .map(|(av, xv)| 0.5 * (xv / (na * nx) - c * av / (na * na)))
                .collect();
            let dx = a
                .iter()
                .zip(x)
                .map(|(av, xv)| 0.5 * (av / (na * nx) - c * xv / (nx * nx)))
                .collect();
            Ok((0.5 + 0.5 * c, da, dx))
        }
        KernelKind::Linear => Ok((dot(a, x), x.to_vec(), a.to_vec())),
        KernelKind::Softmax => unreachable!("softmax is evaluated per triplet"),
    }
}

/// Triplet loss on embeddings and its gradients with respect to each of the
/// three embeddings.
pub(crate) fn embedding_loss(kernel: &KernelSpec, spec: &TripletLossSpec, e: [&[f64]; 3]) -> Result<(TripletEval, [Vec<f64>; 3])> {
    let [ea, ep, en] = e;
    let dim = ea.len();
    let mut ga = vec![0.0; dim];
    let mut gp = vec![0.0; dim];
    let mut gn = vec![0.0; dim];

    let (s_pos, s_neg) = if kernel.kind == KernelKind::Softmax {
        let dpv: Vec<f64> = ea.iter().zip(ep).map(|(a, b)| a - b).collect();
        let dnv: Vec<f64> = ea.iter().zip(en).map(|(a, b)| a - b).collect();
        let (d_pos, d_neg) = (norm(&dpv), norm(&dnv));
        let (s_pos, s_neg) = softmax_pair(d_pos, d_neg);
        if spec.margin + s_neg - s_pos > 0.0 {
            // s_neg = 1 - s_pos, so dL/dd_pos = 2 s_pos s_neg = -dL/dd_neg
            let w = 2.0 * s_pos * s_neg;
            let wp = if d_pos > 0.0 { w / d_pos } else { 0.0 };
            let wn = if d_neg > 0.0 { w / d_neg } else { 0.0 };
            for k in 0..dim {
                ga[k] += wp * dpv[k] - wn * dnv[k];
                gp[k] -= wp * dpv[k];
                gn[k] += wn * dnv[k];
            }
        }
        (s_pos, s_neg)
    } else {
        let (s_pos, dpa, dpp) = pair_similarity(kernel, ea, ep)?;
        let (s_neg, dna, dnn) = pair_similarity(kernel, ea, en)?;
        if spec.margin + s_neg - s_pos > 0.0 {
            for k in 0..dim {
                ga[k] += dna[k] - dpa[k];
                gp[k] -= dpp[k];
                gn[k] += dnn[k];
            }
        }
        (s_pos, s_neg)
    };

    let hinge = triplet_hinge(s_pos, s_neg, spec.margin);
    let mut loss = hinge;
    if spec.lambda > 0.0 {
        for (emb, g) in [(ea, &mut ga), (ep, &mut gp), (en, &mut gn)] {
            let n = norm(emb);
            loss += spec.lambda * n;
            if n > 0.0 {
                for (gk, v) in g.iter_mut().zip(emb) {
                    *gk += spec.lambda * v / n;
                }
            }
        }
    }
    Ok((
        TripletEval {
            loss,
            hinge,
            s_pos,
            s_neg,
        },
        [ga, gp, gn],
    ))
}
