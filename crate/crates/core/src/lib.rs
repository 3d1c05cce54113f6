//! Weak supervision for lesion segmentation from RECIST diameters.
//!
//! A RECIST annotation (the major diameter of a lesion plus the longest
//! chord perpendicular to it) is turned into two pseudo-labels:
//!
//! 1. **Q**, the filled quadrilateral spanned by the four endpoints, which
//!    under-segments a convex lesion;
//! 2. **C**, the filled minimum enclosing circle of the endpoints, which
//!    over-segments it.
//!
//! Two small fully-convolutional subnets are trained against Q and C, and a
//! soft Dice consistency term restricted to the ambiguous ring `A = C − Q`
//! pulls their predictions together. Inference averages both outputs.
//!
//! Module map:
//!
//! - [`geometry`] – endpoints, quadrilateral, enclosing circle, RECIST extraction.
//! - [`raster`] – pixel-center rasterization and region algebra.
//! - [`labels`] – per-lesion and per-slice dual masks.
//! - [`losses`] – soft Dice with analytic gradients and the combined objective.
//! - [`model`] – the from-scratch convolutional scorer.
//! - [`trainer`] – two-phase co-training with AdaMax, prediction.
//! - [`metrics`] – Dice, Jaccard, HD95, recall/precision and reports.
//! - [`synthgen`] – synthetic convex lesion slices.
//! - [`dataio`] – HU windowing, PNG/PGM I/O, annotation CSV, manifests, splits.
//! - [`experiment`] – ablation and λ-sweep drivers shared by the CLI and tests.

pub mod dataio;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod grid;
pub mod labels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod raster;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{Circle, Point2, Quadrilateral, RecistPair};
pub use grid::{BinaryMask, Grid, ProbMap, SliceImage};

/// SplitMix64 finalizer; derives independent seeds from one.
pub(crate) fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
