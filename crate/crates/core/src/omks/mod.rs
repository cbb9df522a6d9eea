//! Online kernel similarity learning.
//!
//! The learned similarity is a kernel plus a support-set expansion:
//!
//! ```text
//! S(p, q) = k(p, q) + sum_k tau_k * k(q, p_k) * (k(p, pos_k) - k(p, neg_k))
//! ```
//!
//! Each update is a passive-aggressive step on one triplet with the step
//! size capped at `C`. The expansion is not symmetric in `(p, q)`; rankers
//! always pass the anchor as `p`.

mod batch;
mod oasis;
mod train;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub use batch::{batch_score, naive_batch_score};
pub use oasis::{BilinearModel, OasisOutcome, OASIS_MAGIC};
pub use train::{train_oasis, train_omks, TrainStats};

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::simkernel::{KernelKind, KernelSpec};

pub const OMKS_MAGIC: &[u8; 4] = b"OMKS";
pub const OMKS_FORMAT_VERSION: u32 = 1;

/// Denominators at or below this are treated as degenerate.
pub const DENOMINATOR_TOLERANCE: f64 = 1e-12;

/// One support triplet: indices into the model's vector table plus its
/// learned coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportEntry {
    pub p: usize,
    pub pos: usize,
    pub neg: usize,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStatus {
    /// Margin already met; `tau = 0`.
    Satisfied,
    Updated,
    /// Positive loss but a vanishing denominator.
    SkippedDegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub loss: f64,
    /// `k(p,p) * (k(pos,pos) - 2 k(pos,neg) + k(neg,neg))`
    pub denominator: f64,
    /// `(k(p,pos) - k(p,neg))^2`, the factor the margin actually moves by.
    pub gain_coefficient: f64,
    pub tau: f64,
    pub status: UpdateStatus,
}

#[derive(Debug, Clone)]
pub struct KernelModel {
    kernel: KernelSpec,
    c: f64,
    dim: usize,
    feature_config_hash: String,
    vectors: Vec<Vec<f64>>,
    support: Vec<SupportEntry>,
    interned: HashMap<Vec<u64>, usize>,
}

impl PartialEq for KernelModel {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.c.to_bits() == other.c.to_bits()
            && self.dim == other.dim
            && self.feature_config_hash == other.feature_config_hash
            && self.vectors == other.vectors
            && self.support == other.support
    }
}

impl KernelModel {
    pub fn new(kernel: KernelSpec, c: f64, dim: usize, feature_config_hash: impl Into<String>) -> Result<Self> {
        kernel.validate()?;
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config("aggressiveness", "C must be a positive finite real"));
        }
        if dim == 0 {
            return Err(Error::config("dim", "feature dimension must be at least 1"));
        }
        Ok(KernelModel {
            kernel,
            c,
            dim,
            feature_config_hash: feature_config_hash.into(),
            vectors: Vec::new(),
            support: Vec::new(),
            interned: HashMap::new(),
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn aggressiveness(&self) -> f64 {
        self.c
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn feature_config_hash(&self) -> &str {
        &self.feature_config_hash
    }

    pub fn support(&self) -> &[SupportEntry] {
        &self.support
    }

    /// Distinct vectors referenced by the support set.
    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// The support entry `k` as `(x_p, x_pos, x_neg, tau)`.
    pub fn support_triplet(&self, k: usize) -> (&[f64], &[f64], &[f64], f64) {
        let e = &self.support[k];
        (&self.vectors[e.p], &self.vectors[e.pos], &self.vectors[e.neg], e.tau)
    }

    pub(crate) fn check_input(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::dims("feature vector", self.dim, v.len()));
        }
        self.kernel.check_vector(v)
    }

    pub(crate) fn intern(&mut self, v: &[f64]) -> usize {
        let key: Vec<u64> = v.iter().map(|x| x.to_bits()).collect();
        if let Some(&i) = self.interned.get(&key) {
            return i;
        }
        let i = self.vectors.len();
        self.vectors.push(v.to_vec());
        self.interned.insert(key, i);
        i
    }

    pub(crate) fn push_support(&mut self, x_p: &[f64], x_pos: &[f64], x_neg: &[f64], tau: f64) {
        let p = self.intern(x_p);
        let pos = self.intern(x_pos);
        let neg = self.intern(x_neg);
        self.support.push(SupportEntry { p, pos, neg, tau });
    }

    /// Appends a support triplet directly, bypassing the update rule.
    pub fn insert_support(&mut self, x_p: &[f64], x_pos: &[f64], x_neg: &[f64], tau: f64) -> Result<()> {
        for v in [x_p, x_pos, x_neg] {
            self.check_input(v)?;
        }
        if !tau.is_finite() {
            return Err(Error::config("tau", "must be finite"));
        }
        self.push_support(x_p, x_pos, x_neg, tau);
        Ok(())
    }

    pub(crate) fn push_support_indices(&mut self, [p, pos, neg]: [usize; 3], tau: f64) {
        self.support.push(SupportEntry { p, pos, neg, tau });
    }

    /// Learned similarity of `q` to the anchor `p`.
    pub fn score(&self, x_p: &[f64], x_q: &[f64]) -> Result<f64> {
        self.check_input(x_p)?;
        self.check_input(x_q)?;
        Ok(self.score_unchecked(x_p, x_q))
    }

    pub(crate) fn score_unchecked(&self, x_p: &[f64], x_q: &[f64]) -> f64 {
        let k = &self.kernel;
        let mut s = k.eval(x_p, x_q);
        for e in &self.support {
            let kq = k.eval(x_q, &self.vectors[e.p]);
            let diff = k.eval(x_p, &self.vectors[e.pos]) - k.eval(x_p, &self.vectors[e.neg]);
            s += support_term(e.tau, kq, diff);
        }
        s
    }

    /// One passive-aggressive step on `(x_p, x_pos, x_neg)`.
    pub fn update(&mut self, x_p: &[f64], x_pos: &[f64], x_neg: &[f64], margin: f64) -> Result<UpdateOutcome> {
        for v in [x_p, x_pos, x_neg] {
            self.check_input(v)?;
        }
        let k = self.kernel;
        let s_pos = self.score_unchecked(x_p, x_pos);
        let s_neg = self.score_unchecked(x_p, x_neg);
        let k_p_pos = k.eval(x_p, x_pos);
        let k_p_neg = k.eval(x_p, x_neg);
        let denominator = k.eval(x_p, x_p)
            * (k.eval(x_pos, x_pos) - 2.0 * k.eval(x_pos, x_neg) + k.eval(x_neg, x_neg));
        let outcome = pa_step(s_pos, s_neg, margin, denominator, k_p_pos - k_p_neg, self.c);
        if outcome.status == UpdateStatus::Updated {
            self.push_support(x_p, x_pos, x_neg, outcome.tau);
        }
        Ok(outcome)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BinWriter::new(BufWriter::new(file));
        w.bytes(OMKS_MAGIC)?;
        w.u32(OMKS_FORMAT_VERSION)?;
        write_kernel(&mut w, &self.kernel)?;
        w.f64(self.c)?;
        w.string(&self.feature_config_hash)?;
        w.u64(self.dim as u64)?;
        w.u64(self.vectors.len() as u64)?;
        for v in &self.vectors {
            w.f64s(v)?;
        }
        w.u64(self.support.len() as u64)?;
        for e in &self.support {
            w.u64(e.p as u64)?;
            w.u64(e.pos as u64)?;
            w.u64(e.neg as u64)?;
            w.f64(e.tau)?;
        }
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BinReader::new(BufReader::new(file));
        r.magic(OMKS_MAGIC)?;
        let version = r.u32()?;
        if version != OMKS_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported OMKS format_version {version}")));
        }
        let kernel = read_kernel(&mut r)?;
        let c = r.f64()?;
        let hash = r.string()?;
        let dim = r.usize()?;
        let mut model = KernelModel::new(kernel, c, dim, hash)?;
        let n_vectors = r.usize()?;
        for _ in 0..n_vectors {
            let v = r.f64s(dim)?;
            if model.intern(&v) + 1 != model.vectors.len() {
                return Err(Error::Data("duplicate vector in model file".into()));
            }
        }
        let n_support = r.usize()?;
        for _ in 0..n_support {
            let e = SupportEntry {
                p: r.usize()?,
                pos: r.usize()?,
                neg: r.usize()?,
                tau: r.f64()?,
            };
            if e.p.max(e.pos).max(e.neg) >= n_vectors || !(e.tau > 0.0 && e.tau <= c) {
                return Err(Error::Data("invalid support entry in model file".into()));
            }
            model.support.push(e);
        }
        r.expect_end()?;
        Ok(model)
    }
}

/// `tau * k(q, p_k) * (k(p, pos_k) - k(p, neg_k))`, in one fixed operation
/// order shared by every scorer so results agree bit for bit.
#[inline(always)]
pub(crate) fn support_term(tau: f64, kq: f64, diff: f64) -> f64 {
    (tau * kq) * diff
}

pub(crate) fn pa_step(s_pos: f64, s_neg: f64, margin: f64, denominator: f64, gain_diff: f64, c: f64) -> UpdateOutcome {
    let loss = (margin + s_neg - s_pos).max(0.0);
    let gain_coefficient = gain_diff * gain_diff;
    let (tau, status) = if loss <= 0.0 {
        (0.0, UpdateStatus::Satisfied)
    } else if denominator <= DENOMINATOR_TOLERANCE {
        (0.0, UpdateStatus::SkippedDegenerate)
    } else {
        (c.min(loss / denominator), UpdateStatus::Updated)
    };
    log::trace!(
        "omks step: loss={loss:.6e} denominator={denominator:.6e} gain={gain_coefficient:.6e} tau={tau:.6e}"
    );
    UpdateOutcome {
        loss,
        denominator,
        gain_coefficient,
        tau,
        status,
    }
}

pub(crate) fn write_kernel<W: std::io::Write>(w: &mut BinWriter<W>, k: &KernelSpec) -> Result<()> {
    w.u8(k.kind.code())?;
    w.f64(k.gamma)?;
    w.f64(k.sigma)?;
    w.u8(u8::from(k.normalize_inputs))?;
    w.u8(u8::from(k.squared))
}

pub(crate) fn read_kernel<R: std::io::Read>(r: &mut BinReader<R>) -> Result<KernelSpec> {
    let kind = KernelKind::from_code(r.u8()?)?;
    let spec = KernelSpec {
        kind,
        gamma: r.f64()?,
        sigma: r.f64()?,
        normalize_inputs: r.u8()? != 0,
        squared: r.u8()? != 0,
    };
    spec.validate()?;
    Ok(spec)
}
