//! Inductive IP address embeddings learned from Zeek connection logs.
//!
//! The pipeline parses `conn.log` files ([`zeek`]), aggregates flows into
//! fixed-interval communication graphs ([`graph`]), trains a gated graph
//! convolutional auto-encoder whose input layer works on edge features alone
//! ([`model`], [`train`]) and serves similarity, anomaly and projection
//! queries over the resulting per-IP embeddings ([`embed`]). [`synth`]
//! provides a role-based traffic generator and a holdout evaluation harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod codec;
pub mod cli;
pub mod embed;
pub mod graph;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod zeek;
