//! Numerical checks of the best-approximation bounds behind the convergence of
//! monomial moment dynamics as the number of moments grows.
//!
//! `E_n(f)` below always denotes the error of the best uniform approximation
//! of `f` by polynomials of degree at most `n`.

pub mod decay;
mod error;
pub mod lemmas;
pub mod pkn;
pub mod remez;

pub use decay::{
    interval_divergence, powell_bound, proposition_decay, strictly_decreasing, theorem3_decay, verify_powell,
    DecaySequence, DecayTerm, DivergenceTerm, PropositionTerm,
};
pub use error::{Error, Result};
pub use lemmas::{
    verify_chebyshev, verify_en_properties, verify_p_identities, verify_sandwich, Check, ExactCheck,
    MonomialErrors, PropertiesReport, SandwichReport,
};
pub use pkn::{p_kn, PknValue};
pub use remez::{best_linf_poly, BestApproxResult, MAX_DEGREE};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
