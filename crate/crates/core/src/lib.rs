//! Moment-based reduction of large homogeneous multi-agent systems.
//!
//! Agents are summarized by generalized moments `m_k = (1/N) sum_i phi_k(x_i)`.
//! The crate simulates the agent dynamics, fits linear, quadratic and
//! leader-driven ODEs for the moments, integrates them together with a-priori
//! error bounds, and recovers densities or mass bounds from moment vectors.

pub mod basis;
pub mod dynamics;
pub mod error;
pub mod expr;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod lp;
pub mod ode;
pub mod quadrature;
pub mod reconstruction;
pub mod reduction;
pub mod rng;
pub mod simulator;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use basis::{make_basis, BasisSpec, EvalTable, KernelBasis};
pub use error::{Error, Result};
pub use geometry::{BoxDomain, PointSet};
pub use quadrature::{PairGrid, QuadratureGrid};
