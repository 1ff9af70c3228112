//! Federated neural-network training under multiparty leveled homomorphic encryption.

pub mod approx;
pub mod config;
pub mod cost;
pub mod federation;
pub mod math;
pub mod mhe;
pub mod netsim;
pub mod nn;
pub mod packing;
