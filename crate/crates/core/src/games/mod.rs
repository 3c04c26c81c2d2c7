//! Monotone games: the catalog, pseudogradients, partial conjugates and
//! monotonicity diagnostics.
//!
//! Strategy spaces are all of `R^{n_i}`. Costs are minimised. Every catalog
//! game has a constant pseudogradient Jacobian, which is what the strong
//! monotonicity computation relies on.

mod bilinear;
mod cournot;
mod quadratic;

use std::fmt;
use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use bilinear::{BilinearGame, BilinearParams};
pub use cournot::{cournot_nash, CournotEquilibrium, CournotGame, CournotParams};
pub use quadratic::{QuadraticGame, QuadraticGameParams, QuadraticPlayer};

use crate::error::{Error, Result};
use crate::linalg::{self, block_ranges, dot, norm2};
use crate::mirror_maps::AggregatedMirror;

/// A continuous game with convex, differentiable per-player costs.
///
/// Profiles are stacked vectors `y = (y_1, …, y_N)`; player `i` owns the
/// slice `y[block(i)]`.
pub trait Game: fmt::Debug + Send + Sync {
    fn name(&self) -> &str;

    /// Per-player strategy dimensions `n_i`.
    fn dims(&self) -> &[usize];

    fn players(&self) -> usize {
        self.dims().len()
    }

    fn total_dim(&self) -> usize {
        self.dims().iter().sum()
    }

    fn block(&self, i: usize) -> Range<usize> {
        block_ranges(self.dims())[i].clone()
    }

    /// Cost `ψ_i(y)`.
    fn cost(&self, i: usize, y: &[f64]) -> f64;

    /// Own partial gradient `∇_i ψ_i(y)`.
    fn partial_grad(&self, i: usize, y: &[f64]) -> Vec<f64>;

    /// Own-block Hessian `∇²_{ii} ψ_i(y)`, used by the numeric conjugate.
    fn own_hessian(&self, i: usize, y: &[f64]) -> DMatrix<f64>;

    /// Closed-form partial conjugate `ψ_i*(v | y_{−i})` if the game has one.
    /// The `i`-th block of `profile` is ignored. May return `+∞`.
    fn closed_form_conjugate(&self, _i: usize, _v: &[f64], _profile: &[f64]) -> Option<f64> {
        None
    }

    /// Known Nash equilibrium, if available in closed form.
    fn equilibrium(&self) -> Option<Vec<f64>> {
        None
    }

    /// Constant Jacobian of the pseudogradient (quadratic family only).
    fn pseudogradient_jacobian(&self) -> Option<DMatrix<f64>> {
        None
    }

    /// Model-specific admissibility of a profile (e.g. positive prices).
    /// Returns the violated margin on failure.
    fn admissible(&self, _y: &[f64]) -> std::result::Result<(), f64> {
        Ok(())
    }
}

/// Stacked pseudogradient `Ψ(y) = (∇_i ψ_i(y))_i`.
pub fn pseudogradient(game: &dyn Game, y: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("pseudogradient", game.total_dim(), y.len())?;
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::domain("game", format!("non-finite profile {y:?}")));
    }
    let mut out = Vec::with_capacity(y.len());
    for i in 0..game.players() {
        out.extend(game.partial_grad(i, y));
    }
    Ok(out)
}

/// `‖Ψ(y)‖`; zero exactly at interior Nash equilibria.
pub fn vi_residual(game: &dyn Game, y: &[f64]) -> Result<f64> {
    Ok(norm2(&pseudogradient(game, y)?))
}

/// `ψ_i*(v | y_{−i})`: closed form when the game provides one, otherwise a
/// damped-Newton supremum.
pub fn partial_conjugate(game: &dyn Game, i: usize, v: &[f64], profile: &[f64]) -> Result<f64> {
    Error::check_len("conjugate argument", game.dims()[i], v.len())?;
    match game.closed_form_conjugate(i, v, profile) {
        Some(value) => Ok(value),
        None => numeric_partial_conjugate(game, i, v, profile),
    }
}

const NEWTON_MAX_ITER: usize = 100;
const NEWTON_GRAD_TOL: f64 = 1e-10;

/// Numeric `sup_z ⟨v, z⟩ − ψ_i(z, y_{−i})` by damped Newton with halving
/// backtracking, started from the `i`-th block of `profile`.
pub fn numeric_partial_conjugate(game: &dyn Game, i: usize, v: &[f64], profile: &[f64]) -> Result<f64> {
    let block = game.block(i);
    let mut y = profile.to_vec();
    let objective = |y: &[f64]| dot(v, &y[block.clone()]) - game.cost(i, y);

    let mut value = objective(&y);
    for iter in 0..NEWTON_MAX_ITER {
        let grad = linalg::sub(v, &game.partial_grad(i, &y));
        let gnorm = linalg::norm_inf(&grad);
        if gnorm <= NEWTON_GRAD_TOL {
            return Ok(value);
        }
        let hess = game.own_hessian(i, &y);
        let step = match Cholesky::new(hess) {
            Some(ch) => ch.solve(&DVector::from_column_slice(&grad)),
            None => {
                return Err(Error::Nonconvergence {
                    iterations: iter,
                    residual: gnorm,
                })
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let mut trial = y.clone();
            for (k, idx) in block.clone().enumerate() {
                trial[idx] += t * step[k];
            }
            let trial_value = objective(&trial);
            if trial_value >= value - 1e-14 * value.abs().max(1.0) {
                y = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::Nonconvergence {
                iterations: iter,
                residual: gnorm,
            });
        }
    }
    let residual = linalg::norm_inf(&linalg::sub(v, &game.partial_grad(i, &y)));
    if residual <= NEWTON_GRAD_TOL {
        Ok(value)
    } else {
        Err(Error::Nonconvergence {
            iterations: NEWTON_MAX_ITER,
            residual,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// Minimum of `⟨Ψ(y) − Ψ(y′), y − y′⟩` over sampled pairs.
    pub min_inner_product: f64,
    pub violated: bool,
}

/// Violation threshold for the sampled monotonicity inner product.
pub const MONOTONICITY_TOL: f64 = 1e-10;

/// Samples `sample_count` random pairs in a box of half-width 10 around the
/// equilibrium (or the origin) and reports the smallest monotonicity product.
pub fn monotonicity_probe(game: &dyn Game, sample_count: usize, rng_seed: u64) -> Result<MonotonicityReport> {
    if sample_count == 0 {
        return Err(Error::Invariant("monotonicity probe needs at least one sample".into()));
    }
    let n = game.total_dim();
    let center = game.equilibrium().unwrap_or_else(|| vec![0.0; n]);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut min_ip = f64::INFINITY;
    for _ in 0..sample_count {
        let a: Vec<f64> = center.iter().map(|c| c + rng.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = center.iter().map(|c| c + rng.random_range(-10.0..10.0)).collect();
        let ga = pseudogradient(game, &a)?;
        let gb = pseudogradient(game, &b)?;
        let ip = dot(&linalg::sub(&ga, &gb), &linalg::sub(&a, &b));
        min_ip = min_ip.min(ip);
    }
    Ok(MonotonicityReport {
        samples: sample_count,
        min_inner_product: min_ip,
        violated: min_ip < -MONOTONICITY_TOL,
    })
}

/// Largest `μ ≥ 0` with `⟨Ψ(y) − Ψ(y′), y − y′⟩ ≥ μ D_φ(y, y′)` for a quadratic
/// game and a quadratic aggregated mirror: `2 λ_min(S, A)` where `S` is the
/// symmetric part of the pseudogradient Jacobian and `A = diag(A_i)`.
pub fn strong_monotonicity_modulus(game: &dyn Game, mirror: &AggregatedMirror) -> Result<f64> {
    let jac = game.pseudogradient_jacobian().ok_or_else(|| {
        Error::UnsupportedGame(format!("{} has no constant pseudogradient Jacobian", game.name()))
    })?;
    let a = mirror
        .quadratic_hessian()
        .ok_or_else(|| Error::UnsupportedGame("strong monotonicity needs quadratic mirror maps".into()))?;
    Error::check_len("mirror dimension", jac.nrows(), a.nrows())?;
    let s = (&jac + jac.transpose()) * 0.5;
    let chol = Cholesky::new(a).ok_or_else(|| Error::Invariant("mirror Hessian not positive definite".into()))?;
    let l = chol.l();
    // C = L⁻¹ S L⁻ᵀ shares its spectrum with the pencil (S, A).
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Invariant("singular Cholesky factor".into()))?;
    let c = &l_inv * s * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let lambda_min = c.symmetric_eigenvalues().min();
    Ok((2.0 * lambda_min).max(0.0))
}
