//! BiJEPA: bi-directional joint embedding predictive architecture.
//!
//! The crate is layered bottom-up: [`autodiff`] provides the tape and
//! primitives, [`nn`] assembles them into the encoder and predictor
//! networks, [`optim`] holds AdamW and the EMA target update, and [`jepa`]
//! wires everything into the training system. [`data`], [`eval`] and
//! [`experiment`] reproduce the sine, Lorenz and MNIST studies.

pub mod autodiff;
pub mod data;
pub mod eval;
pub mod experiment;
pub mod jepa;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod serde_float;
