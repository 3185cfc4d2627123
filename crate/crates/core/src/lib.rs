//! Trains small transformers to grokking on modular-arithmetic tasks, tracks
//! the spectral edge of the weight-update trajectory, and characterizes what
//! the edge directions do: perturbation-response Fourier analysis in
//! group-adapted bases, ridge probes, sparse-autoencoder overlap nulls, and
//! per-example co-usage statistics.

pub mod cousage;
pub mod funcmode;
pub mod groupmath;
pub mod model;
pub mod numcore;
pub mod probes;
pub mod sae;
pub mod spectral;

pub use groupmath::{Dataset, DlogTable, GroupingBasis, OpKind, TaskSpec};
pub use model::{AttnLayout, AttnVector, Model, ModelConfig, MultiTaskConfig, TrainRecord};
pub use numcore::{Mat, NumError, PowerSpectrum, Spectrum};
pub use spectral::{GapSeries, GramSpectrum, UpdateWindow};
