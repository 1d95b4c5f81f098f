//! Byzantine-robust secure aggregation: fixed-point encoding, Paillier
//! encryption, trust-score weighting, R1CS circuits with a proof interface,
//! and a simulated dual-server training protocol.

pub mod fixedpoint;
pub mod paillier;
pub mod rng;
pub mod r1cs;
pub mod fltrust;
pub mod gadgets;
pub mod proofsys;
pub mod attacks;
pub mod protocol;
pub mod experiment;
