//! Fault-tolerant local load balancing on a synchronous message-passing
//! simulator, with the counting and consensus protocols built on top of it
//! and independent oracles that re-check the analytical bounds on traces.

pub mod error;
pub mod experiment;
pub mod graph;
pub mod llb;
pub mod oracle;
pub mod protocols;
pub mod simnet;

pub use error::{Error, Result};
pub use graph::{Graph, NodeId};
