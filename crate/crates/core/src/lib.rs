//! Continuous-time mirror play in monotone games, together with the mirror
//! differential game whose closed-loop equilibrium path coincides with the
//! mirror path.
//!
//! The crate is organised bottom-up:
//!
//! * [`mirror_maps`]: Legendre regularizers, conjugates, Bregman divergences
//!   and Fenchel couplings.
//! * [`games`]: the monotone game catalog (Cournot duopoly, bilinear zero-sum,
//!   quadratic games), pseudogradients and partial conjugates.
//! * [`dynamics`]: the deterministic mirror-play flow and its RK4 integrator.
//! * [`mdg`]: stage/terminal costs, value functions, Hamiltonians, costates
//!   and the equilibrium certificates built on them.
//! * [`analysis`]: Lyapunov decay, time-average bounds, exponential rates.
//! * [`stochastic`]: Hessian-Riemannian noise, Euler–Maruyama ensembles and
//!   Monte Carlo bound checks.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod games;
pub mod linalg;
pub mod mdg;
pub mod mirror_maps;
pub mod stochastic;

pub use error::{Error, Result};
