use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Game;
use crate::error::{Error, Result};
use crate::linalg::dot;

/// Two-firm Cournot market over `n` goods with linear inverse demand
/// `P = M − y_1 − y_2` and marginal costs `p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CournotParams {
    pub n: usize,
    pub m: Vec<f64>,
    pub p1: Vec<f64>,
    pub p2: Vec<f64>,
}

impl CournotParams {
    pub fn scalar(m: f64, p1: f64, p2: f64) -> Self {
        CournotParams {
            n: 1,
            m: vec![m],
            p1: vec![p1],
            p2: vec![p2],
        }
    }

    fn cost_vector(&self, i: usize) -> &[f64] {
        if i == 0 {
            &self.p1
        } else {
            &self.p2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Invariant("Cournot dimension must be positive".into()));
        }
        for (name, v) in [("m", &self.m), ("p1", &self.p1), ("p2", &self.p2)] {
            if v.len() != self.n {
                return Err(Error::Invariant(format!(
                    "Cournot field `{name}` has length {}, expected {}",
                    v.len(),
                    self.n
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Invariant(format!("Cournot field `{name}` is not finite")));
            }
        }
        for i in 0..2 {
            let p = self.cost_vector(i);
            if self.m.iter().zip(p).any(|(m, p)| m - p <= 0.0) {
                return Err(Error::Invariant(format!(
                    "Cournot requires M - p{} > 0 componentwise",
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CournotEquilibrium {
    /// Stacked `(ȳ_1, ȳ_2)`.
    pub strategies: Vec<f64>,
    pub price: Vec<f64>,
}

/// Closed-form Nash equilibrium `ȳ_i = (M + p_{−i} − 2 p_i)/3` with market
/// price `P = (M + p_1 + p_2)/3`.
pub fn cournot_nash(params: &CournotParams) -> Result<CournotEquilibrium> {
    params.validate()?;
    let n = params.n;
    let mut strategies = Vec::with_capacity(2 * n);
    for i in 0..2 {
        let own = params.cost_vector(i);
        let other = params.cost_vector(1 - i);
        strategies.extend((0..n).map(|k| (params.m[k] + other[k] - 2.0 * own[k]) / 3.0));
    }
    if strategies.iter().any(|&v| v <= 0.0) {
        return Err(Error::Invariant(format!(
            "Cournot equilibrium has a nonpositive component: {strategies:?}"
        )));
    }
    let price = (0..n)
        .map(|k| (params.m[k] + params.p1[k] + params.p2[k]) / 3.0)
        .collect();
    Ok(CournotEquilibrium { strategies, price })
}

#[derive(Debug, Clone)]
pub struct CournotGame {
    params: CournotParams,
    dims: [usize; 2],
    equilibrium: CournotEquilibrium,
}

impl CournotGame {
    pub fn new(params: CournotParams) -> Result<Self> {
        let equilibrium = cournot_nash(&params)?;
        Ok(CournotGame {
            dims: [params.n, params.n],
            params,
            equilibrium,
        })
    }

    pub fn params(&self) -> &CournotParams {
        &self.params
    }

    pub fn nash(&self) -> &CournotEquilibrium {
        &self.equilibrium
    }

    /// Market price `M − y_1 − y_2` (linear region, no clamp).
    pub fn price(&self, y: &[f64]) -> Vec<f64> {
        let n = self.params.n;
        (0..n).map(|k| self.params.m[k] - y[k] - y[n + k]).collect()
    }

    /// Linear coefficient `y_{−i} + p_i − M` of player `i`'s cost.
    fn linear_term(&self, i: usize, y: &[f64]) -> Vec<f64> {
        let n = self.params.n;
        let other = &y[(1 - i) * n..(2 - i) * n];
        let p = self.params.cost_vector(i);
        (0..n).map(|k| other[k] + p[k] - self.params.m[k]).collect()
    }
}

impl Game for CournotGame {
    fn name(&self) -> &str {
        "cournot"
    }

    fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// `ψ_i(y) = −(P − p_i)ᵀ y_i = ‖y_i‖² + (y_{−i} + p_i − M)ᵀ y_i`.
    fn cost(&self, i: usize, y: &[f64]) -> f64 {
        let n = self.params.n;
        let own = &y[i * n..(i + 1) * n];
        dot(own, own) + dot(&self.linear_term(i, y), own)
    }

    fn partial_grad(&self, i: usize, y: &[f64]) -> Vec<f64> {
        let n = self.params.n;
        let own = &y[i * n..(i + 1) * n];
        self.linear_term(i, y)
            .iter()
            .zip(own)
            .map(|(b, o)| 2.0 * o + b)
            .collect()
    }

    fn own_hessian(&self, _i: usize, _y: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(self.params.n, self.params.n) * 2.0
    }

    /// `ψ_i*(v | y_{−i}) = ‖v − (y_{−i} + p_i − M)‖² / 4`.
    fn closed_form_conjugate(&self, i: usize, v: &[f64], profile: &[f64]) -> Option<f64> {
        let b = self.linear_term(i, profile);
        Some(v.iter().zip(&b).map(|(v, b)| (v - b) * (v - b)).sum::<f64>() / 4.0)
    }

    fn equilibrium(&self) -> Option<Vec<f64>> {
        Some(self.equilibrium.strategies.clone())
    }

    fn pseudogradient_jacobian(&self) -> Option<DMatrix<f64>> {
        let n = self.params.n;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for k in 0..n {
            j[(k, k)] = 2.0;
            j[(n + k, n + k)] = 2.0;
            j[(k, n + k)] = 1.0;
            j[(n + k, k)] = 1.0;
        }
        Some(j)
    }

    fn admissible(&self, y: &[f64]) -> std::result::Result<(), f64> {
        let min_price = self.price(y).into_iter().fold(f64::INFINITY, f64::min);
        if min_price > 0.0 {
            Ok(())
        } else {
            Err(min_price)
        }
    }
}
