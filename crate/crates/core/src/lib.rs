//! Numerical tools for cyclic negative feedback systems
//! `x'_i = f_i(x_{i-1}, x_i, x_{i+1})` with indices taken mod n.
//!
//! The crate is organised bottom up: [`model`] holds vector fields and class
//! checks, [`lyapunov`] the integer-valued Lyapunov function and its cones,
//! [`integrate`] the flows, [`floquet`] the block decomposition of solution
//! operators, [`critical`] equilibria and periodic orbits, [`limitset`] the
//! limit-set classifier and [`connect`] connecting orbits and transversality.

// `!(a > b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod connect;
pub mod critical;
pub mod floquet;
pub mod integrate;
pub mod limitset;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod schur;

pub use model::{CyclicVectorField, DomainBox, FeedbackSignature, JacobianMode};
