//! Active low-rank matrix completion.
//!
//! A partially observed matrix is reconstructed by solving one small
//! least-squares system per row and column, in an order derived from the
//! bipartite graph of observed positions. Systems that are underdetermined
//! or badly conditioned for their particular right-hand side are repaired by
//! querying a budgeted oracle for a few hidden entries.

pub mod completion;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod oracle;
pub mod stability;

pub use error::{Error, Result};
