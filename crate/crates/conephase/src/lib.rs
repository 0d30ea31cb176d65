//! Critical points of the mass-constrained Allen-Cahn energy on truncated
//! elliptic cones with a conical tip singularity.
//!
//! The crate discretizes the constrained problem
//!
//! ```text
//!   -eps^2 (Laplace-Beltrami) u + W'(u) - lambda = 0,   <u> = m,
//! ```
//!
//! with `W(u) = (u^2-1)^2/4` on the surface obtained by mapping the unit
//! disk to a cone of height `h` with elliptic base (semi axes `a >= 1` and
//! `1`), and provides:
//!
//! * exact geometry of the cone ([`geometry`]),
//! * symmetric triangulations of the disk with adaptive refinement
//!   ([`mesh`]),
//! * P1 finite elements for the cone metric: operators, residual, Jacobian,
//!   energy and level-set lengths ([`fem`]),
//! * a generic pseudo-arclength continuation engine with fold / branch-point
//!   detection, branch switching and two-parameter fold and branch-point
//!   continuation ([`continuation`]),
//! * semi-analytic reference values for interface lengths on circular cones
//!   and the scalar bifurcation normal forms ([`oracle`]),
//! * a batch scenario runner behind the `conephase` binary ([`scenario`]).
//!
//! See the `examples/` directory for one runnable program per capability;
//! `cargo run --example oracle_table` is a good starting point.

pub mod continuation;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod scenario;



pub use geometry::{ConeParams, MetricSample};

