use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Game;
use crate::error::{Error, Result};
use crate::linalg::{self, dot};

/// Zero-sum bilinear game `ψ_1 = y_1ᵀ B y_2 = −ψ_2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilinearParams {
    pub n1: usize,
    pub n2: usize,
    /// Row-major `n1 × n2` matrix.
    pub b: Vec<Vec<f64>>,
}

impl BilinearParams {
    pub fn from_rows(b: Vec<Vec<f64>>) -> Self {
        BilinearParams {
            n1: b.len(),
            n2: b.first().map_or(0, Vec::len),
            b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BilinearGame {
    params: BilinearParams,
    b: DMatrix<f64>,
    dims: [usize; 2],
}

/// Relative tolerance for matching the linear coefficient in the indicator
/// conjugate.
const INDICATOR_TOL: f64 = 1e-12;

impl BilinearGame {
    pub fn new(params: BilinearParams) -> Result<Self> {
        if params.n1 == 0 || params.n2 == 0 {
            return Err(Error::Invariant("bilinear dimensions must be positive".into()));
        }
        let b = linalg::matrix_from_rows(&params.b)
            .filter(|m| m.nrows() == params.n1 && m.ncols() == params.n2)
            .ok_or_else(|| {
                Error::Invariant(format!("bilinear matrix must be {}x{}", params.n1, params.n2))
            })?;
        if !b.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant("bilinear matrix has non-finite entries".into()));
        }
        Ok(BilinearGame {
            dims: [params.n1, params.n2],
            params,
            b,
        })
    }

    pub fn params(&self) -> &BilinearParams {
        &self.params
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Linear coefficient of player `i`'s cost: `B y_2` or `−Bᵀ y_1`.
    fn coefficient(&self, i: usize, y: &[f64]) -> Vec<f64> {
        let (n1, n2) = (self.params.n1, self.params.n2);
        if i == 0 {
            linalg::mat_vec(&self.b, &y[n1..n1 + n2])
        } else {
            linalg::mat_vec(&self.b.transpose(), &y[..n1])
                .into_iter()
                .map(|v| -v)
                .collect()
        }
    }
}

impl Game for BilinearGame {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    fn cost(&self, i: usize, y: &[f64]) -> f64 {
        let n1 = self.params.n1;
        let v = dot(&y[..n1], &linalg::mat_vec(&self.b, &y[n1..]));
        if i == 0 {
            v
        } else {
            -v
        }
    }

    fn partial_grad(&self, i: usize, y: &[f64]) -> Vec<f64> {
        self.coefficient(i, y)
    }

    fn own_hessian(&self, i: usize, _y: &[f64]) -> DMatrix<f64> {
        let n = self.dims[i];
        DMatrix::zeros(n, n)
    }

    /// Conjugate of a linear function: `0` on its coefficient, `+∞` elsewhere.
    fn closed_form_conjugate(&self, i: usize, v: &[f64], profile: &[f64]) -> Option<f64> {
        let c = self.coefficient(i, profile);
        let matches = v
            .iter()
            .zip(&c)
            .all(|(v, c)| (v - c).abs() <= INDICATOR_TOL * (1.0 + c.abs()));
        Some(if matches { 0.0 } else { f64::INFINITY })
    }

    fn equilibrium(&self) -> Option<Vec<f64>> {
        Some(vec![0.0; self.params.n1 + self.params.n2])
    }

    fn pseudogradient_jacobian(&self) -> Option<DMatrix<f64>> {
        let (n1, n2) = (self.params.n1, self.params.n2);
        let mut j = DMatrix::zeros(n1 + n2, n1 + n2);
        j.view_mut((0, n1), (n1, n2)).copy_from(&self.b);
        j.view_mut((n1, 0), (n2, n1)).copy_from(&(-self.b.transpose()));
        Some(j)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_is_skew() {
        let g = BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0, 2.0], vec![0.5, -1.0]])).unwrap();
        let j = g.pseudogradient_jacobian().unwrap();
        assert_eq!(&j + j.transpose(), DMatrix::zeros(4, 4));
    }

    #[test]
    fn rejects_ragged_matrix() {
        let p = BilinearParams {
            n1: 2,
            n2: 2,
            b: vec![vec![1.0, 2.0], vec![1.0]],
        };
        assert!(BilinearGame::new(p).is_err());
    }

    #[test]
    fn costs_are_zero_sum() {
        let g = BilinearGame::new(BilinearParams::from_rows(vec![vec![2.0]])).unwrap();
        let y = [1.5, -0.5];
        assert_eq!(g.cost(0, &y) + g.cost(1, &y), 0.0);
    }
}
