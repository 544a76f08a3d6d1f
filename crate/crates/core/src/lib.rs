//! Label-free calibration of query-to-class similarity matrices.
//!
//! The pipeline whitens query embeddings per subject and candidate
//! embeddings globally, scores them by scaled cosine, then reranks with an
//! adaptive CSLS geometric expert fused with a rank-based structural expert.
//! See [`pipeline::run`] for the one-call entry point and [`harness`] for
//! leave-one-subject-out evaluation.

// `!(x > 0.0)` style checks are used on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod formats;
pub mod fusion;
pub mod geom;
pub mod harness;
pub mod metrics;
pub mod pipeline;
pub mod rank;
pub mod similarity;
pub mod structural;
pub mod synth;
pub mod types;
pub mod whitening;

pub use config::{CalibConfig, CslsMode};
pub use error::{Error, Result};
pub use fusion::{calibrate, calibrate_detailed, poe_fuse, Calibrated, PoEWeights};
pub use metrics::EvalReport;
pub use pipeline::{run, FittedModels};
pub use types::{EmbeddingSet, Role, SimMatrix, Stage};

/// Sizes the global rayon pool from `SIMCAL_THREADS` (unset or 0 means one
/// thread per core). Results do not depend on the thread count. Returns
/// false if the pool was already initialized.
pub fn init_threads() -> bool {
    let n = std::env::var("SIMCAL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_ok()
}
