//! Legendre mirror maps and the geometry built on them.
//!
//! A [`MirrorMap`] bridges a player's primal strategy space and its dual
//! (score) space: `∇φ` sends primal points to dual points and `∇φ*` sends them
//! back. Two families are supported:
//!
//! * `Quadratic(A)`: `φ(y) = ½⟨y, A y⟩` on all of `Rⁿ`, with `A` symmetric
//!   positive definite, so `∇φ* (x) = A⁻¹ x`.
//! * `NegativeEntropy`: `φ(y) = Σ_j y_j log y_j − y_j` on the open positive
//!   orthant, so `∇φ*(x) = exp(x)` on the whole dual space.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{self, block_ranges, dot};

/// Symmetry tolerance enforced on quadratic mirror matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct QuadraticMirror {
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl QuadraticMirror {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    fn solve(&self, x: &[f64]) -> Vec<f64> {
        self.chol
            .solve(&DVector::from_column_slice(x))
            .as_slice()
            .to_vec()
    }
}

#[derive(Debug, Clone)]
pub enum MirrorFamily {
    Quadratic(QuadraticMirror),
    NegativeEntropy,
}

#[derive(Debug, Clone)]
pub struct MirrorMap {
    dim: usize,
    family: MirrorFamily,
}

impl MirrorMap {
    /// Quadratic map `½⟨y, A y⟩`. Fails unless `A` is square, symmetric within
    /// [`SYMMETRY_TOL`] and positive definite.
    pub fn quadratic(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::Invariant(format!(
                "mirror matrix must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if !a.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant("mirror matrix has non-finite entries".into()));
        }
        if !linalg::is_symmetric(&a, SYMMETRY_TOL) {
            return Err(Error::Invariant(format!(
                "mirror matrix is not symmetric (max asymmetry {:e})",
                (&a - a.transpose()).amax()
            )));
        }
        let min_eig = a.clone().symmetric_eigenvalues().min();
        if min_eig <= 0.0 {
            return Err(Error::Invariant(format!(
                "mirror matrix is not positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        let chol = Cholesky::new(a.clone()).ok_or_else(|| {
            Error::Invariant("Cholesky factorization of the mirror matrix failed".into())
        })?;
        let a_inv = chol.inverse();
        Ok(MirrorMap {
            dim: a.nrows(),
            family: MirrorFamily::Quadratic(QuadraticMirror { a, a_inv, chol }),
        })
    }

    /// Euclidean map `½‖y‖²`.
    pub fn identity(dim: usize) -> Self {
        Self::quadratic(DMatrix::identity(dim, dim)).expect("identity is positive definite")
    }

    pub fn negative_entropy(dim: usize) -> Self {
        assert!(dim > 0, "mirror map dimension must be positive");
        MirrorMap {
            dim,
            family: MirrorFamily::NegativeEntropy,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &MirrorFamily {
        &self.family
    }

    pub fn as_quadratic(&self) -> Option<&QuadraticMirror> {
        match &self.family {
            MirrorFamily::Quadratic(q) => Some(q),
            MirrorFamily::NegativeEntropy => None,
        }
    }

    pub fn in_primal_domain(&self, y: &[f64]) -> bool {
        y.len() == self.dim
            && match self.family {
                MirrorFamily::Quadratic(_) => y.iter().all(|v| v.is_finite()),
                MirrorFamily::NegativeEntropy => y.iter().all(|&v| v.is_finite() && v > 0.0),
            }
    }

    fn check_primal(&self, y: &[f64]) -> Result<()> {
        Error::check_len("primal point", self.dim, y.len())?;
        if self.in_primal_domain(y) {
            Ok(())
        } else {
            Err(Error::domain("mirror map", format!("primal point {y:?}")))
        }
    }

    fn check_dual(&self, x: &[f64]) -> Result<()> {
        Error::check_len("dual point", self.dim, x.len())?;
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::domain("conjugate mirror map", format!("dual point {x:?}")))
        }
    }

    pub fn phi(&self, y: &[f64]) -> Result<f64> {
        self.check_primal(y)?;
        Ok(match &self.family {
            MirrorFamily::Quadratic(q) => 0.5 * dot(y, &linalg::mat_vec(&q.a, y)),
            MirrorFamily::NegativeEntropy => y.iter().map(|&v| v * v.ln() - v).sum(),
        })
    }

    /// Conjugate value `φ*(x)`.
    pub fn phi_conj(&self, x: &[f64]) -> Result<f64> {
        self.check_dual(x)?;
        Ok(match &self.family {
            MirrorFamily::Quadratic(q) => 0.5 * dot(x, &q.solve(x)),
            MirrorFamily::NegativeEntropy => x.iter().map(|v| v.exp()).sum(),
        })
    }

    pub fn grad_phi(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.check_primal(y)?;
        Ok(match &self.family {
            MirrorFamily::Quadratic(q) => linalg::mat_vec(&q.a, y),
            MirrorFamily::NegativeEntropy => y.iter().map(|v| v.ln()).collect(),
        })
    }

    /// `∇φ*(x)`, the map from dual scores back to primal strategies. Fails if
    /// the image leaves the primal domain (entropy overflow or underflow).
    pub fn grad_phi_conj(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dual(x)?;
        let y = match &self.family {
            MirrorFamily::Quadratic(q) => q.solve(x),
            MirrorFamily::NegativeEntropy => x.iter().map(|v| v.exp()).collect(),
        };
        if self.in_primal_domain(&y) {
            Ok(y)
        } else {
            Err(Error::domain(
                "conjugate mirror map",
                format!("image of {x:?} leaves the primal domain"),
            ))
        }
    }

    pub fn hess_phi_conj(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dual(x)?;
        Ok(match &self.family {
            MirrorFamily::Quadratic(q) => q.a_inv.clone(),
            MirrorFamily::NegativeEntropy => {
                DMatrix::from_diagonal(&DVector::from_iterator(self.dim, x.iter().map(|v| v.exp())))
            }
        })
    }

    /// `D_φ(y, y_ref) = φ(y) − φ(y_ref) − ⟨∇φ(y_ref), y − y_ref⟩`.
    pub fn bregman(&self, y: &[f64], y_ref: &[f64]) -> Result<f64> {
        self.check_primal(y)?;
        self.check_primal(y_ref)?;
        Ok(match &self.family {
            MirrorFamily::Quadratic(q) => {
                let d = linalg::sub(y, y_ref);
                0.5 * dot(&d, &linalg::mat_vec(&q.a, &d))
            }
            MirrorFamily::NegativeEntropy => y
                .iter()
                .zip(y_ref)
                .map(|(&a, &b)| a * (a / b).ln() - a + b)
                .sum(),
        })
    }

    /// `D_φ*(x, x_ref)`; equals `D_φ(∇φ*(x_ref), ∇φ*(x))`.
    pub fn bregman_conj(&self, x: &[f64], x_ref: &[f64]) -> Result<f64> {
        self.check_dual(x)?;
        self.check_dual(x_ref)?;
        Ok(match &self.family {
            MirrorFamily::Quadratic(q) => {
                let d = linalg::sub(x, x_ref);
                0.5 * dot(&d, &q.solve(&d))
            }
            MirrorFamily::NegativeEntropy => x
                .iter()
                .zip(x_ref)
                .map(|(&a, &b)| {
                    let eb = b.exp();
                    // e^a − e^b − e^b (a − b), written to avoid cancellation
                    eb * ((a - b).exp_m1() - (a - b))
                })
                .sum(),
        })
    }
}

/// Fenchel coupling `f(y) + f*(v) − ⟨y, v⟩`. A `+∞` conjugate propagates.
pub fn fenchel_coupling(f_value: f64, f_conj_value: f64, y: &[f64], v: &[f64]) -> f64 {
    if f_conj_value == f64::INFINITY {
        return f64::INFINITY;
    }
    f_value + f_conj_value - dot(y, v)
}

/// The aggregated map `φ(y) = Σ_i φ_i(y_i)` over stacked player blocks.
#[derive(Debug, Clone)]
pub struct AggregatedMirror {
    parts: Vec<MirrorMap>,
    blocks: Vec<Range<usize>>,
}

impl AggregatedMirror {
    pub fn new(parts: Vec<MirrorMap>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::Invariant("aggregated mirror needs at least one player".into()));
        }
        let dims: Vec<usize> = parts.iter().map(MirrorMap::dim).collect();
        Ok(AggregatedMirror {
            blocks: block_ranges(&dims),
            parts,
        })
    }

    pub fn identity(dims: &[usize]) -> Self {
        Self::new(dims.iter().map(|&d| MirrorMap::identity(d)).collect())
            .expect("non-empty player list")
    }

    pub fn players(&self) -> usize {
        self.parts.len()
    }

    pub fn dim(&self) -> usize {
        self.blocks.last().map_or(0, |r| r.end)
    }

    pub fn dims(&self) -> Vec<usize> {
        self.parts.iter().map(MirrorMap::dim).collect()
    }

    pub fn part(&self, i: usize) -> &MirrorMap {
        &self.parts[i]
    }

    pub fn parts(&self) -> &[MirrorMap] {
        &self.parts
    }

    pub fn block(&self, i: usize) -> Range<usize> {
        self.blocks[i].clone()
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        Error::check_len("stacked vector", self.dim(), v.len())
    }

    pub fn phi(&self, y: &[f64]) -> Result<f64> {
        self.check(y)?;
        self.parts
            .iter()
            .zip(&self.blocks)
            .map(|(m, r)| m.phi(&y[r.clone()]))
            .sum()
    }

    fn stacked(&self, v: &[f64], f: impl Fn(&MirrorMap, &[f64]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
        self.check(v)?;
        let mut out = Vec::with_capacity(v.len());
        for (m, r) in self.parts.iter().zip(&self.blocks) {
            out.extend(f(m, &v[r.clone()])?);
        }
        Ok(out)
    }

    pub fn grad_phi(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.stacked(y, MirrorMap::grad_phi)
    }

    /// Stacked `Φ*(x) = (∇φ_i*(x_i))_i`.
    pub fn grad_phi_conj(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.stacked(x, MirrorMap::grad_phi_conj)
    }

    pub fn bregman(&self, y: &[f64], y_ref: &[f64]) -> Result<f64> {
        self.check(y)?;
        self.check(y_ref)?;
        self.parts
            .iter()
            .zip(&self.blocks)
            .map(|(m, r)| m.bregman(&y[r.clone()], &y_ref[r.clone()]))
            .sum()
    }

    pub fn bregman_conj(&self, x: &[f64], x_ref: &[f64]) -> Result<f64> {
        self.check(x)?;
        self.check(x_ref)?;
        self.parts
            .iter()
            .zip(&self.blocks)
            .map(|(m, r)| m.bregman_conj(&x[r.clone()], &x_ref[r.clone()]))
            .sum()
    }

    /// Block-diagonal Hessian `diag(A_i)` when every part is quadratic.
    pub fn quadratic_hessian(&self) -> Option<DMatrix<f64>> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for (m, r) in self.parts.iter().zip(&self.blocks) {
            let q = m.as_quadratic()?;
            h.view_mut((r.start, r.start), (r.len(), r.len()))
                .copy_from(q.matrix());
        }
        Some(h)
    }
}
