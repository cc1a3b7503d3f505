//! Solver library for the relaxed prescribed-mean-curvature functional over
//! planar domains, with boundary detachment.
//!
//! The pipeline: represent a planar domain with collar maps (`domain`), a
//! boundary manifold with optional jump (`boundary`), build the approximating
//! problem data — cutoff curvature and divergence-free collar fields
//! (`divfree`, `approx`) — minimize the discrete functional (`functional`,
//! `solver`), assemble the associated surface current graph + wall
//! (`current`), and verify quantitative bounds against independent oracles
//! (`verify`). File formats and run configuration live in `io`.

pub mod approx;
pub mod boundary;
pub mod current;
pub mod divfree;
pub mod domain;
pub mod exec;
pub mod functional;
pub mod geom;
pub mod linalg;
pub mod quad;
pub mod solver;
