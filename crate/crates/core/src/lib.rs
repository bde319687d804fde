//! Distributed unknown input observer (DUIO) for discrete-time LTI plants.
//!
//! Every sensor node runs a reduced-order observer on the quotient space
//! `X / W_g` that is blind to its local unknown inputs, producing an
//! auxiliary measurement `xi_i ~ T_i x`. The nodes then recover the full
//! state by solving `min sum_i 0.5 |T_i x - xi_i|^2` over the communication
//! graph with linearized ADMM, optionally after a Cholesky change of
//! variables that makes the aggregate Hessian the identity.
//!
//! Module map:
//!
//! * [`numerics`]: dense factorizations and spectral quantities.
//! * [`graph`]: undirected topologies, Laplacians, algebraic connectivity.
//! * [`geometry`]: conditioned-invariant subspaces and observer synthesis.
//! * [`observer`]: the per-node quotient estimator.
//! * [`fusion`]: linearized ADMM, normalization, centralized oracle, error bound.
//! * [`scenario`]: plant simulation and the two-time-scale estimation loop.
//! * [`cli`]: scenario files, CSV output and the `duio` command line.

pub mod cli;
pub mod fusion;
pub mod geometry;
pub mod graph;
pub mod numerics;
pub mod observer;
pub mod scenario;

pub use numerics::{Matrix, Tolerance, Vector};
