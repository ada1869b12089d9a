//! Quad-stream graph convolution over signed functional connectomes.
//!
//! * [`connectome`]: Pearson connectivity, bipolar split, the four Laplacian priors.
//! * [`numerics`]: reverse-mode tape, AdamW, finite-difference checks.
//! * [`model`]: mixer, NeuroGraph blocks with view attention, pooling, head, ablations.
//! * [`training`]: stratified folds, training loop, metrics, ablation sweeps.
//! * [`attribution`]: integrated gradients over the connectivity input and edge reports.
//! * [`dataset`] and [`io`]: subjects, manifests, and the on-disk formats.
//! * [`synth`]: planted-structure synthetic cohorts.

pub mod attribution;
pub mod connectome;
pub mod dataset;
pub mod error;
pub mod io;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod synth;
pub mod training;

pub use connectome::{
    bipolar_split, build_quad_laplacians, normalize_adjacency, pearson_connectivity,
    spectrum_report, ConnectivityMatrix, Matrix, QuadLaplacians, SignedAdjacency, SpectrumReport,
    TimeSeries,
};
pub use error::{LuminaError, Result};
pub use model::{AblationSwitches, HyperParams, Lumina, ModelParams, Route, Variant};
pub use numerics::{AdamWConfig, AdamWState, Tape, Var};
