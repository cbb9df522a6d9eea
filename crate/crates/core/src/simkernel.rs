//! Distances, similarity kernels and the regularized triplet hinge loss.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Rbf,
    ShiftedCosine,
    /// Triplet softmax over negative distances. As a pairwise kernel it
    /// evaluates the unnormalized term `exp(-d(p, q))`.
    Softmax,
    Linear,
}

impl KernelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            KernelKind::Rbf => "rbf",
            KernelKind::ShiftedCosine => "shifted_cosine",
            KernelKind::Softmax => "softmax",
            KernelKind::Linear => "linear",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            KernelKind::Rbf => 0,
            KernelKind::ShiftedCosine => 1,
            KernelKind::Softmax => 2,
            KernelKind::Linear => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Result<Self> {
        Ok(match c {
            0 => KernelKind::Rbf,
            1 => KernelKind::ShiftedCosine,
            2 => KernelKind::Softmax,
            3 => KernelKind::Linear,
            _ => return Err(Error::Data(format!("unknown kernel code {c}"))),
        })
    }

    /// Default hinge margin; must sit inside the kernel's output range.
    pub fn default_margin(self) -> f64 {
        match self {
            KernelKind::Rbf => 0.1,
            KernelKind::ShiftedCosine | KernelKind::Softmax | KernelKind::Linear => 0.2,
        }
    }

    /// Default norm penalty. Only the rbf and softmax kernels are penalized.
    pub fn default_lambda(self) -> f64 {
        match self {
            KernelKind::Rbf | KernelKind::Softmax => 1e-4,
            KernelKind::ShiftedCosine | KernelKind::Linear => 0.0,
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub gamma: f64,
    pub sigma: f64,
    pub normalize_inputs: bool,
    /// rbf only: use the squared distance in the exponent.
    pub squared: bool,
}

impl KernelSpec {
    pub fn rbf(gamma: f64, sigma: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf,
            gamma,
            sigma,
            normalize_inputs: false,
            squared: false,
        }
    }

    pub fn shifted_cosine() -> Self {
        KernelSpec {
            kind: KernelKind::ShiftedCosine,
            gamma: 1.0,
            sigma: 1.0,
            normalize_inputs: true,
            squared: false,
        }
    }

    pub fn softmax() -> Self {
        KernelSpec {
            kind: KernelKind::Softmax,
            ..Self::shifted_cosine()
        }
        .with_normalize(false)
    }

    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            ..Self::softmax()
        }
    }

    pub fn of_kind(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Rbf => Self::rbf(1.0, 1.0),
            KernelKind::ShiftedCosine => Self::shifted_cosine(),
            KernelKind::Softmax => Self::softmax(),
            KernelKind::Linear => Self::linear(),
        }
    }

    pub fn with_normalize(mut self, on: bool) -> Self {
        self.normalize_inputs = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == KernelKind::Rbf {
            if !(self.gamma.is_finite() && self.gamma > 0.0) {
                return Err(Error::config("gamma", "must be a positive finite real"));
            }
            if !(self.sigma.is_finite() && self.sigma > 0.0) {
                return Err(Error::config("sigma", "must be a positive finite real"));
            }
        }
        Ok(())
    }

    /// Rejects vectors the kernel cannot evaluate (zero norm under
    /// normalized cosine, non-finite entries).
    pub fn check_vector(&self, v: &[f64]) -> Result<()> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite kernel input".into()));
        }
        if self.kind == KernelKind::ShiftedCosine && self.normalize_inputs && norm(v) == 0.0 {
            return Err(Error::DegenerateEmbedding(
                "zero-norm vector under normalized cosine".into(),
            ));
        }
        Ok(())
    }

    /// Pairwise kernel value.
    pub fn pairwise(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        self.validate()?;
        check_len(p, q)?;
        self.check_vector(p)?;
        self.check_vector(q)?;
        Ok(self.eval(p, q))
    }

    /// Unchecked pairwise evaluation. Callers validate lengths and inputs.
    #[inline]
    pub(crate) fn eval(&self, p: &[f64], q: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Rbf => {
                let d2 = sq_dist(p, q);
                let arg = if self.squared { d2 } else { d2.sqrt() };
                (-arg / (self.gamma * self.sigma * self.sigma)).exp()
            }
            KernelKind::ShiftedCosine => {
                let c = if self.normalize_inputs {
                    dot(p, q) / (norm(p) * norm(q))
                } else {
                    dot(p, q)
                };
                0.5 + 0.5 * c
            }
            KernelKind::Softmax => (-sq_dist(p, q).sqrt()).exp(),
            KernelKind::Linear => dot(p, q),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossSpec {
    pub margin: f64,
    pub lambda: f64,
}

impl TripletLossSpec {
    pub fn for_kernel(kind: KernelKind) -> Self {
        TripletLossSpec {
            margin: kind.default_margin(),
            lambda: kind.default_lambda(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::config("margin", "must be a finite real >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be a finite real >= 0"));
        }
        Ok(())
    }
}

fn check_len(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::dims("vector length", p.len(), q.len()));
    }
    Ok(())
}

#[inline]
pub(crate) fn sq_dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn l2_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p, q)?;
    Ok(sq_dist(p, q).sqrt())
}

/// `exp(-d / (gamma * sigma^2))`, with `d` the distance (or its square when
/// `spec.squared`).
pub fn rbf_similarity(p: &[f64], q: &[f64], spec: &KernelSpec) -> Result<f64> {
    if spec.kind != KernelKind::Rbf {
        return Err(Error::config("kernel", "rbf_similarity needs an rbf spec"));
    }
    spec.pairwise(p, q)
}

/// `0.5 + 0.5 <p, q>`, on l2-normalized inputs when `normalize` is set.
pub fn shifted_cosine(p: &[f64], q: &[f64], normalize: bool) -> Result<f64> {
    KernelSpec::shifted_cosine().with_normalize(normalize).pairwise(p, q)
}

/// Softmax over negative anchor distances: returns `(s_pos, s_neg)`.
pub fn softmax_triplet_similarity(p: &[f64], pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    check_len(p, pos)?;
    check_len(p, neg)?;
    Ok(softmax_pair(sq_dist(p, pos).sqrt(), sq_dist(p, neg).sqrt()))
}

/// Shared-denominator softmax of `(-d_pos, -d_neg)` with max subtraction.
#[inline]
pub(crate) fn softmax_pair(d_pos: f64, d_neg: f64) -> (f64, f64) {
    let (a, b) = (-d_pos, -d_neg);
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let den = ea + eb;
    (ea / den, eb / den)
}

/// Hinge `max(0, margin + s_neg - s_pos)` only.
#[inline]
pub fn triplet_hinge(s_pos: f64, s_neg: f64, margin: f64) -> f64 {
    (margin + s_neg - s_pos).max(0.0)
}

/// Hinge plus `lambda` times the sum of the three embedding norms.
pub fn triplet_loss(s_pos: f64, s_neg: f64, embeddings: [&[f64]; 3], spec: &TripletLossSpec) -> f64 {
    let norms: f64 = embeddings.iter().map(|e| norm(e)).sum();
    triplet_hinge(s_pos, s_neg, spec.margin) + spec.lambda * norms
}

const SIGMA_MAX_PAIRS: usize = 1000;

/// Median pairwise distance over at most 1000 pairs (all pairs when there are
/// that few, otherwise a seeded sample). Falls back to 1.0 when the median is
/// zero.
pub fn estimate_sigma<R: AsRef<[f64]>>(sample: &[R], seed: u64) -> Result<f64> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::config("sigma", "estimation needs at least two vectors"));
    }
    let d = sample[0].as_ref().len();
    if let Some(bad) = sample.iter().find(|v| v.as_ref().len() != d) {
        return Err(Error::dims("sigma sample", d, bad.as_ref().len()));
    }
    let total = n * (n - 1) / 2;
    let mut dists = Vec::with_capacity(total.min(SIGMA_MAX_PAIRS));
    if total <= SIGMA_MAX_PAIRS {
        for i in 0..n {
            for j in i + 1..n {
                dists.push(sq_dist(sample[i].as_ref(), sample[j].as_ref()).sqrt());
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        while dists.len() < SIGMA_MAX_PAIRS {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                dists.push(sq_dist(sample[i].as_ref(), sample[j].as_ref()).sqrt());
            }
        }
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median > 0.0 && median.is_finite() {
        Ok(median)
    } else {
        log::warn!("median pairwise distance is {median}; falling back to sigma = 1.0");
        Ok(1.0)
    }
}
