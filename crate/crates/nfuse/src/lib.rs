//! Volumetric CNN toolkit for multi-modal MRI stage classification.
//!
//! The crate covers the full desk-scale pipeline: a define-by-run autodiff
//! tape with 3D conv/pool/norm kernels ([`tensor`]), the four-block
//! classification network and cascade head ([`arch`]), SGD-with-momentum
//! training under transfer regimes ([`train`]), synthetic paired T1/FLAIR
//! data plus augmentation and patient-level splits ([`data`]), EHR-derived
//! stage labeling ([`labeling`]), multi-class ROC-AUC evaluation
//! ([`metrics`]), and weighted late fusion ([`fusion`]).

pub mod arch;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod fusion;
pub mod labeling;
pub mod metrics;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
