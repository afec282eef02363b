//! Building-block subset design for combinatorial (DNA-encoded) libraries.
//!
//! A library is described by a binary selection vector over the building
//! blocks of each synthesis cycle; the molecules are the Cartesian product of
//! the selected blocks. Samplers construct selections under a library-size
//! window and are scored by the mean per-molecule score of the library.

pub mod baselines;
pub mod cluster;
pub mod env;
pub mod error;
pub mod gflownet;
pub mod library;
pub mod metrics;
pub mod neural;
pub mod reward;

pub use error::{Error, Result};
pub use library::{
    decode_selection, encode_selection, library_size, CycleSpec, DesignState, SampleEntry,
    SampleSet, SizeConstraint,
};
pub use reward::{log_reward, mean_score, RewardConfig, ScoreAccumulator, ScoreTable, Tensor3};
