use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::Game;
use crate::error::{Error, Result};
use crate::linalg::{self, block_ranges, dot};
use crate::mirror_maps::SYMMETRY_TOL;

/// Player `i` of a quadratic game:
/// `ψ_i(y) = ½ y_iᵀ Q_i y_i + y_iᵀ C_i y_{−i} + b_iᵀ y_i`,
/// where `y_{−i}` stacks the other players in index order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticPlayer {
    pub q: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticGameParams {
    pub players: Vec<QuadraticPlayer>,
}

#[derive(Debug, Clone)]
struct PlayerBlock {
    q: DMatrix<f64>,
    q_chol: Cholesky<f64, Dyn>,
    c: DMatrix<f64>,
    b: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct QuadraticGame {
    params: QuadraticGameParams,
    dims: Vec<usize>,
    blocks: Vec<Range<usize>>,
    players: Vec<PlayerBlock>,
    jacobian: DMatrix<f64>,
    equilibrium: Option<Vec<f64>>,
}

impl QuadraticGame {
    /// Validates shapes and `Q_i ≻ 0`. Monotonicity is not enforced here; use
    /// [`super::monotonicity_probe`] to diagnose it.
    pub fn new(params: QuadraticGameParams) -> Result<Self> {
        if params.players.len() < 2 {
            return Err(Error::Invariant("quadratic game needs at least two players".into()));
        }
        let dims: Vec<usize> = params.players.iter().map(|p| p.q.len()).collect();
        if dims.contains(&0) {
            return Err(Error::Invariant("quadratic game player dimensions must be positive".into()));
        }
        let n: usize = dims.iter().sum();
        let mut players = Vec::with_capacity(dims.len());
        for (i, p) in params.players.iter().enumerate() {
            let ni = dims[i];
            let q = linalg::matrix_from_rows(&p.q)
                .filter(|m| m.nrows() == ni && m.ncols() == ni)
                .ok_or_else(|| Error::Invariant(format!("player {i}: Q must be {ni}x{ni}")))?;
            let c = linalg::matrix_from_rows(&p.c)
                .filter(|m| m.nrows() == ni && m.ncols() == n - ni)
                .ok_or_else(|| Error::Invariant(format!("player {i}: C must be {ni}x{}", n - ni)))?;
            if p.b.len() != ni {
                return Err(Error::Invariant(format!("player {i}: b must have length {ni}")));
            }
            if !q.iter().chain(c.iter()).chain(p.b.iter()).all(|v| v.is_finite()) {
                return Err(Error::Invariant(format!("player {i}: non-finite coefficients")));
            }
            if !linalg::is_symmetric(&q, SYMMETRY_TOL) {
                return Err(Error::Invariant(format!("player {i}: Q is not symmetric")));
            }
            let q_chol = Cholesky::new(q.clone())
                .ok_or_else(|| Error::Invariant(format!("player {i}: Q is not positive definite")))?;
            players.push(PlayerBlock {
                q,
                q_chol,
                c,
                b: p.b.clone(),
            });
        }
        let blocks = block_ranges(&dims);

        let mut jacobian = DMatrix::zeros(n, n);
        for (i, p) in players.iter().enumerate() {
            let r = &blocks[i];
            jacobian.view_mut((r.start, r.start), (r.len(), r.len())).copy_from(&p.q);
            let mut col = 0;
            for (j, rj) in blocks.iter().enumerate() {
                if j == i {
                    continue;
                }
                jacobian
                    .view_mut((r.start, rj.start), (r.len(), rj.len()))
                    .copy_from(&p.c.view((0, col), (r.len(), rj.len())));
                col += rj.len();
            }
        }
        let rhs = DVector::from_iterator(n, players.iter().flat_map(|p| p.b.iter().map(|v| -v)));
        let equilibrium = jacobian
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|y| y.iter().all(|v| v.is_finite()))
            .map(|y| y.as_slice().to_vec());

        Ok(QuadraticGame {
            params,
            dims,
            blocks,
            players,
            jacobian,
            equilibrium,
        })
    }

    pub fn params(&self) -> &QuadraticGameParams {
        &self.params
    }

    fn others(&self, i: usize, y: &[f64]) -> Vec<f64> {
        self.blocks
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, r)| y[r.clone()].iter().copied())
            .collect()
    }

    /// `C_i y_{−i} + b_i`.
    fn linear_term(&self, i: usize, y: &[f64]) -> Vec<f64> {
        let p = &self.players[i];
        linalg::mat_vec(&p.c, &self.others(i, y))
            .into_iter()
            .zip(&p.b)
            .map(|(a, b)| a + b)
            .collect()
    }
}

impl Game for QuadraticGame {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn block(&self, i: usize) -> Range<usize> {
        self.blocks[i].clone()
    }

    fn cost(&self, i: usize, y: &[f64]) -> f64 {
        let own = &y[self.blocks[i].clone()];
        0.5 * dot(own, &linalg::mat_vec(&self.players[i].q, own)) + dot(own, &self.linear_term(i, y))
    }

    fn partial_grad(&self, i: usize, y: &[f64]) -> Vec<f64> {
        let own = &y[self.blocks[i].clone()];
        linalg::mat_vec(&self.players[i].q, own)
            .into_iter()
            .zip(self.linear_term(i, y))
            .map(|(a, b)| a + b)
            .collect()
    }

    fn own_hessian(&self, i: usize, _y: &[f64]) -> DMatrix<f64> {
        self.players[i].q.clone()
    }

    /// `½ (v − c)ᵀ Q_i⁻¹ (v − c)` with `c = C_i y_{−i} + b_i`.
    fn closed_form_conjugate(&self, i: usize, v: &[f64], profile: &[f64]) -> Option<f64> {
        let d = linalg::sub(v, &self.linear_term(i, profile));
        let s = self.players[i].q_chol.solve(&DVector::from_column_slice(&d));
        Some(0.5 * dot(&d, s.as_slice()))
    }

    fn equilibrium(&self) -> Option<Vec<f64>> {
        self.equilibrium.clone()
    }

    fn pseudogradient_jacobian(&self) -> Option<DMatrix<f64>> {
        Some(self.jacobian.clone())
    }
}
