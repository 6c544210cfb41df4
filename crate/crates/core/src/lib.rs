//! Passage retrieval with bagged epsilon-SVR ensembles over an embedding space.
//!
//! The collection's embedding rows are split into overlapping subsets. For each
//! subset, every training query's `k` nearest passages are turned into
//! `[query | passage]` feature rows labelled 1 for the relevant passage and 0
//! otherwise, and a z-scored RBF SVR is fitted to those labels. At query time
//! every member scores its own neighborhood and a passage is retrieved when any
//! member scores it at or above the decision threshold.

pub mod bagging;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod knn;
pub mod metrics;
pub mod registry;
pub mod run;
pub mod scaler;
pub mod svr;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
