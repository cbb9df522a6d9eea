use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::binio::{BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};

pub const OASIS_MAGIC: &[u8; 4] = b"OASS";
pub const OASIS_FORMAT_VERSION: u32 = 1;

/// Bilinear similarity `S(a, b) = a^T W b`, learned with passive-aggressive
/// steps. `W` starts at the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearModel {
    w: Matrix,
    c: f64,
    feature_config_hash: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OasisOutcome {
    pub loss: f64,
    pub tau: f64,
    pub updated: bool,
    pub skipped: bool,
}

impl BilinearModel {
    pub fn new(dim: usize, c: f64, feature_config_hash: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "feature dimension must be at least 1"));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::config("aggressiveness", "C must be a positive finite real"));
        }
        let mut w = Matrix::zeros(dim, dim);
        for i in 0..dim {
            w.set(i, i, 1.0);
        }
        Ok(BilinearModel {
            w,
            c,
            feature_config_hash: feature_config_hash.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.w.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn aggressiveness(&self) -> f64 {
        self.c
    }

    pub fn feature_config_hash(&self) -> &str {
        &self.feature_config_hash
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dims("feature vector", self.dim(), v.len()));
        }
        Ok(())
    }

    pub fn score(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.score_unchecked(a, b))
    }

    pub(crate) fn score_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .enumerate()
            .map(|(i, &ai)| ai * dot(self.w.row(i), b))
            .sum()
    }

    /// `W <- W + tau * x_p (x_pos - x_neg)^T` when the margin is violated,
    /// `tau = min(C, loss / (|x_p|^2 |x_pos - x_neg|^2))`.
    pub fn update(&mut self, x_p: &[f64], x_pos: &[f64], x_neg: &[f64], margin: f64) -> Result<OasisOutcome> {
        for v in [x_p, x_pos, x_neg] {
            self.check(v)?;
        }
        let loss = (margin - self.score_unchecked(x_p, x_pos) + self.score_unchecked(x_p, x_neg)).max(0.0);
        if loss <= 0.0 {
            return Ok(OasisOutcome {
                loss,
                tau: 0.0,
                updated: false,
                skipped: false,
            });
        }
        let diff: Vec<f64> = x_pos.iter().zip(x_neg).map(|(a, b)| a - b).collect();
        // Frobenius norm of a rank-one outer product
        let frob2 = dot(x_p, x_p) * dot(&diff, &diff);
        if frob2 <= super::DENOMINATOR_TOLERANCE {
            return Ok(OasisOutcome {
                loss,
                tau: 0.0,
                updated: false,
                skipped: true,
            });
        }
        let tau = self.c.min(loss / frob2);
        for (i, &pi) in x_p.iter().enumerate() {
            let scale = tau * pi;
            for (w, d) in self.w.row_mut(i).iter_mut().zip(&diff) {
                *w += scale * d;
            }
        }
        Ok(OasisOutcome {
            loss,
            tau,
            updated: true,
            skipped: false,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BinWriter::new(BufWriter::new(file));
        w.bytes(OASIS_MAGIC)?;
        w.u32(OASIS_FORMAT_VERSION)?;
        w.f64(self.c)?;
        w.string(&self.feature_config_hash)?;
        w.u64(self.dim() as u64)?;
        w.f64s(self.w.as_slice())?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BinReader::new(BufReader::new(file));
        r.magic(OASIS_MAGIC)?;
        let version = r.u32()?;
        if version != OASIS_FORMAT_VERSION {
            return Err(Error::Data(format!("unsupported OASIS format_version {version}")));
        }
        let c = r.f64()?;
        let hash = r.string()?;
        let d = r.usize()?;
        let mut model = BilinearModel::new(d, c, hash)?;
        let values = r.f64s(d * d)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite bilinear weight".into()));
        }
        model.w = Matrix::new(d, d, values)?;
        r.expect_end()?;
        Ok(model)
    }
}
