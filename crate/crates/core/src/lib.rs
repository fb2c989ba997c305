#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Buffer-based timely remote estimation.
//!
//! A receiver keeps the `b` most recent samples of each of `N` autoregressive
//! sources. The estimation error depends on the whole vector of sample ages
//! ([`source`]), which evolves as a controlled Markov chain ([`aoi`]). The
//! multi-sensor scheduling problem over `M` channels is relaxed with a
//! Lagrange multiplier, each sensor's sub-problem is solved by value iteration
//! ([`mdp`]), the multiplier by dual supergradient ascent ([`dual`]), and the
//! resulting Q-tables drive the Maximum Gain First scheduler ([`sim`]).
//! [`experiment`] wires these into the command-line pipelines.

pub mod aoi;
pub mod dual;
pub mod error;
pub mod experiment;
pub mod mdp;
pub mod sim;
pub mod source;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/error-model.md")]
    mod error_model {}
    #[doc = include_str!("../../../book/src/aoi-dynamics.md")]
    mod aoi_dynamics {}
    #[doc = include_str!("../../../book/src/mdp.md")]
    mod mdp {}
    #[doc = include_str!("../../../book/src/dual.md")]
    mod dual {}
    #[doc = include_str!("../../../book/src/scheduling.md")]
    mod scheduling {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
