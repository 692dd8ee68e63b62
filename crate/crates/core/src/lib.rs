#![allow(clippy::neg_cmp_op_on_partial_ord)]
//! Simulation of entanglement-based protocols on small networks of NV centres.

pub mod densmat;
pub mod network;
pub mod noise;
pub mod protocols;
pub mod streams;
pub mod dephasing;
pub mod harness;
pub mod pulse;
pub mod stats;
