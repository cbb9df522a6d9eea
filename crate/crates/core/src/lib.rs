//! Video-to-video relevance learning from triplet supervision.
//!
//! Two learners share one data model and evaluation path:
//!
//! * [`omks`]: online kernel similarity learning over fused feature vectors,
//!   with a bilinear (OASIS) baseline and a blocked batch scorer.
//! * [`fusednet`]: an LSTM over frame features fused with the video-level
//!   vector through a dense layer, trained as a triplet network.
//!
//! [`corpus`] generates or loads data, [`featurize`] builds fixed-length
//! inputs, [`triplets`] streams training triplets and [`evalrank`] ranks
//! candidates and reports hit@k and recall@k. [`cli`] wires them into the
//! `vidrel` command line.

pub mod bench;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod evalrank;
pub mod featurize;
pub mod fusednet;
pub mod matrix;
pub mod omks;
pub mod simkernel;
pub mod triplets;

mod binio;

pub use error::{Error, Result};
pub use matrix::Matrix;
