//! Stochastic mirror play
//!
//! ```text
//! dX = −Ψ(Φ*(X)) dt + σ(X) dW,    σσᵀ = 2ε diag(∇²φ_i*(X_i))⁻¹
//! ```
//!
//! integrated by Euler–Maruyama. With this volatility the Itô term of every
//! `V_i` is the constant `ε n_i`.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::SimConfig;
use crate::error::{Error, Result};
use crate::games::pseudogradient;
use crate::linalg::{dot, mean_and_se, norm2, sub};
use crate::mdg::DifferentialGame;
use crate::mirror_maps::{AggregatedMirror, MirrorFamily, MirrorMap};

/// Hessian eigenvalues below this make the volatility blow up.
pub const HESSIAN_EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq)]
pub struct SdeConfig {
    pub epsilon: f64,
    pub horizon: f64,
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    /// Keep every `record_stride`-th node of each path.
    pub record_stride: usize,
}

impl SdeConfig {
    pub fn steps(&self) -> Result<usize> {
        SimConfig::new(self.horizon, self.dt, self.x0.clone()).steps()
    }

    pub fn validate(&self, dim: usize) -> Result<usize> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Invariant(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.paths < 2 {
            return Err(Error::Invariant(format!("need at least 2 paths, got {}", self.paths)));
        }
        if self.record_stride == 0 {
            return Err(Error::Invariant("record stride must be positive".into()));
        }
        SimConfig::new(self.horizon, self.dt, self.x0.clone()).validate(dim)
    }
}

/// `σ_i = √(2ε) (∇²φ_i*(x_i))^{−1/2}` per player.
pub fn volatility_blocks(mirror: &AggregatedMirror, x: &[f64], epsilon: f64) -> Result<Vec<DMatrix<f64>>> {
    Error::check_len("state", mirror.dim(), x.len())?;
    (0..mirror.players())
        .map(|i| volatility_block(mirror.part(i), &x[mirror.block(i)], epsilon))
        .collect()
}

fn volatility_block(part: &MirrorMap, x: &[f64], epsilon: f64) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(part.hess_phi_conj(x)?);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min.is_nan() || min < HESSIAN_EIGEN_FLOOR {
        return Err(Error::SingularHessian { eigenvalue: min });
    }
    let scale = (2.0 * epsilon).sqrt();
    let inv_sqrt = eig.eigenvalues.map(|l| scale / l.sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

/// `½ tr(σ_i σ_iᵀ ∇²V_i)`, computed from the actual volatility block.
pub fn ito_correction(mirror: &AggregatedMirror, i: usize, x: &[f64], epsilon: f64) -> Result<f64> {
    let part = mirror.part(i);
    let xi = &x[mirror.block(i)];
    let sigma = volatility_block(part, xi, epsilon)?;
    Ok(0.5 * (&sigma * sigma.transpose() * part.hess_phi_conj(xi)?).trace())
}

/// `V_i(t, x) = D_{φ_i*}(x_i, x̄_i) + ε n_i (T − t)`.
pub fn stochastic_value(dg: &DifferentialGame<'_>, i: usize, t: f64, x: &[f64], horizon: f64, epsilon: f64) -> Result<f64> {
    let ni = dg.mirror().block(i).len() as f64;
    Ok(dg.value(i, x)? + epsilon * ni * (horizon - t))
}

/// `∂V_i/∂t + ½ tr(σσᵀ ∇²V_i) + ⟨∇V_i, u⟩ + c_i` with `u = (u_i, γ*_{−i})`.
pub fn hjb_residual(dg: &DifferentialGame<'_>, i: usize, x: &[f64], u_i: &[f64], epsilon: f64) -> Result<f64> {
    let ni = dg.mirror().block(i).len() as f64;
    let ito = ito_correction(dg.mirror(), i, x, epsilon)?;
    let rest = dg.lemma_gap(i, x, u_i)?;
    Ok(-epsilon * ni + ito + rest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HjbScanReport {
    pub states: usize,
    /// `max |residual|` at the mirror-descent control.
    pub max_at_mp: f64,
    /// Smallest residual among the off-policy controls.
    pub min_off_policy: f64,
    pub off_policy_checked: usize,
    /// Largest distance between the line-grid argmin and the MP control.
    pub max_argmin_offset: f64,
    pub grid_spacing: f64,
}

pub const HJB_OFF_POLICY: usize = 20;
const HJB_LINE_POINTS: usize = 41;
const HJB_LINE_HALF_WIDTH: f64 = 2.0;

/// Random states in a box of half-width 2 around `x̄`; for every player the
/// residual at the MP control, at random off-policy controls and along a line
/// through the MP control.
pub fn hjb_residual_scan(dg: &DifferentialGame<'_>, epsilon: f64, samples: usize, seed: u64) -> Result<HjbScanReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mirror = dg.mirror();
    let spacing = 2.0 * HJB_LINE_HALF_WIDTH / (HJB_LINE_POINTS - 1) as f64;
    let mut report = HjbScanReport {
        states: samples,
        max_at_mp: 0.0,
        min_off_policy: f64::INFINITY,
        off_policy_checked: 0,
        max_argmin_offset: 0.0,
        grid_spacing: spacing,
    };
    for _ in 0..samples {
        let x: Vec<f64> = dg
            .equilibrium_dual()
            .iter()
            .map(|c| c + rng.random_range(-2.0..2.0))
            .collect();
        let mp = dg.mp_control(&x)?;
        for i in 0..dg.players() {
            let r = mirror.block(i);
            let u_star = &mp[r.clone()];
            report.max_at_mp = report.max_at_mp.max(hjb_residual(dg, i, &x, u_star, epsilon)?.abs());

            for _ in 0..HJB_OFF_POLICY {
                let dir = random_unit(&mut rng, r.len());
                let len = rng.random_range(0.1..2.0);
                let u: Vec<f64> = u_star.iter().zip(&dir).map(|(a, d)| a + len * d).collect();
                report.min_off_policy = report.min_off_policy.min(hjb_residual(dg, i, &x, &u, epsilon)?);
                report.off_policy_checked += 1;
            }

            let dir = random_unit(&mut rng, r.len());
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..HJB_LINE_POINTS {
                let s = -HJB_LINE_HALF_WIDTH + spacing * k as f64;
                let u: Vec<f64> = u_star.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
                let h = hjb_residual(dg, i, &x, &u, epsilon)?;
                if h < best.0 {
                    best = (h, s);
                }
            }
            report.max_argmin_offset = report.max_argmin_offset.max(best.1.abs());
        }
    }
    Ok(report)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let d: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm2(&d);
        if n > 1e-6 {
            return d.into_iter().map(|v| v / n).collect();
        }
    }
}

/// One simulated path, recorded every `record_stride` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePath {
    pub index: usize,
    dim: usize,
    states: Vec<f64>,
    /// `D_φ(ȳ, Y_t) = Σ_i D_{φ_i*}(X_{i,t}, x̄_i)` at recorded nodes.
    pub divergence: Vec<f64>,
    /// `Ỹ_T = (1/T) ∫ Y dt`, trapezoid at full step resolution.
    pub time_average: Vec<f64>,
}

impl SamplePath {
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbortedPath {
    pub index: usize,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub times: Vec<f64>,
    pub dim: usize,
    pub epsilon: f64,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub paths: Vec<SamplePath>,
    pub aborted: Vec<AbortedPath>,
}

/// Volatility with quadratic blocks precomputed.
struct Volatility {
    blocks: Vec<Option<DMatrix<f64>>>,
    scale: f64,
}

impl Volatility {
    fn new(mirror: &AggregatedMirror, epsilon: f64) -> Result<Self> {
        let blocks = mirror
            .parts()
            .iter()
            .map(|p| match p.family() {
                MirrorFamily::Quadratic(_) => volatility_block(p, &vec![0.0; p.dim()], epsilon).map(Some),
                MirrorFamily::NegativeEntropy => Ok(None),
            })
            .collect::<Result<_>>()?;
        Ok(Volatility {
            blocks,
            scale: (2.0 * epsilon).sqrt(),
        })
    }

    /// Adds `σ(x) ξ` to `out`.
    fn apply(&self, mirror: &AggregatedMirror, x: &[f64], xi: &[f64], out: &mut [f64]) -> Result<()> {
        for (i, block) in self.blocks.iter().enumerate() {
            let r = mirror.block(i);
            match block {
                Some(s) => {
                    for (a, idx) in r.clone().enumerate() {
                        out[idx] += (0..r.len()).map(|b| s[(a, b)] * xi[r.start + b]).sum::<f64>();
                    }
                }
                // ∇²φ* = diag(eˣ), so σ = √(2ε) diag(e^{−x/2}).
                None => {
                    for idx in r {
                        let h = x[idx].exp();
                        if h.is_nan() || h < HESSIAN_EIGEN_FLOOR {
                            return Err(Error::SingularHessian { eigenvalue: h });
                        }
                        out[idx] += self.scale / h.sqrt() * xi[idx];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Euler–Maruyama ensemble under the CLE drift `−Ψ(Φ*(X))`. Each path draws
/// from its own ChaCha stream keyed by `(seed, path)`, so results do not
/// depend on scheduling. Paths leaving the Cournot price region are aborted
/// and reported.
pub fn euler_maruyama_paths(dg: &DifferentialGame<'_>, cfg: &SdeConfig) -> Result<Ensemble> {
    let mirror = dg.mirror();
    let n = mirror.dim();
    let steps = cfg.validate(n)?;
    let vol = Volatility::new(mirror, cfg.epsilon)?;
    let h = cfg.horizon / steps as f64;
    let times: Vec<f64> = (0..=steps)
        .step_by(cfg.record_stride)
        .map(|k| if k == steps { cfg.horizon } else { k as f64 * h })
        .collect();

    let results: Vec<Result<SamplePath>> = (0..cfg.paths)
        .into_par_iter()
        .map(|index| simulate_path(dg, &vol, cfg, steps, h, index))
        .collect();

    let mut paths = Vec::with_capacity(cfg.paths);
    let mut aborted = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => paths.push(p),
            Err(error @ Error::PriceRegion { .. }) => aborted.push(AbortedPath { index, error }),
            Err(e) => return Err(e),
        }
    }
    Ok(Ensemble {
        times,
        dim: n,
        epsilon: cfg.epsilon,
        horizon: cfg.horizon,
        x0: cfg.x0.clone(),
        paths,
        aborted,
    })
}

fn simulate_path(
    dg: &DifferentialGame<'_>,
    vol: &Volatility,
    cfg: &SdeConfig,
    steps: usize,
    h: f64,
    index: usize,
) -> Result<SamplePath> {
    let game = dg.game();
    let mirror = dg.mirror();
    let n = mirror.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64);
    let sqrt_h = h.sqrt();

    let nodes = steps / cfg.record_stride + 1;
    let mut states = Vec::with_capacity(nodes * n);
    let mut divergence = Vec::with_capacity(nodes);
    let mut integral = vec![0.0; n];
    let mut x = cfg.x0.clone();
    let mut xi = vec![0.0; n];
    let mut prev_y: Option<Vec<f64>> = None;

    for k in 0..=steps {
        let t = if k == steps { cfg.horizon } else { k as f64 * h };
        let y = mirror.grad_phi_conj(&x).map_err(|e| Error::DomainEscape {
            time: t,
            detail: e.to_string(),
        })?;
        if let Err(min_price) = game.admissible(&y) {
            return Err(Error::PriceRegion { time: t, min_price });
        }
        if let Some(p) = &prev_y {
            for j in 0..n {
                integral[j] += 0.5 * h * (p[j] + y[j]);
            }
        }
        if k % cfg.record_stride == 0 {
            states.extend_from_slice(&x);
            divergence.push(dg.total_value(&x)?);
        }
        if k == steps {
            break;
        }
        let drift = pseudogradient(game, &y)?;
        for v in xi.iter_mut() {
            *v = rng.sample::<f64, _>(StandardNormal) * sqrt_h;
        }
        let mut next: Vec<f64> = x.iter().zip(&drift).map(|(a, g)| a - h * g).collect();
        vol.apply(mirror, &x, &xi, &mut next)?;
        x = next;
        prev_y = Some(y);
    }
    Ok(SamplePath {
        index,
        dim: n,
        states,
        divergence,
        time_average: integral.into_iter().map(|v| v / cfg.horizon).collect(),
    })
}

/// Per-time mean and standard error of `D_φ(ȳ, Y_t)` over completed paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub mean_state: Vec<Vec<f64>>,
    pub time_average_mean: Vec<f64>,
    pub time_average_se: Vec<f64>,
    pub paths_used: usize,
    pub aborted: usize,
}

pub fn ensemble_stats(ensemble: &Ensemble) -> EnsembleStats {
    let len = ensemble.times.len();
    let mut mean = Vec::with_capacity(len);
    let mut se = Vec::with_capacity(len);
    let mut mean_state = Vec::with_capacity(len);
    for k in 0..len {
        let d: Vec<f64> = ensemble.paths.iter().map(|p| p.divergence[k]).collect();
        let (m, s) = mean_and_se(&d);
        mean.push(m);
        se.push(s);
        mean_state.push(
            (0..ensemble.dim)
                .map(|j| {
                    let col: Vec<f64> = ensemble.paths.iter().map(|p| p.state(k)[j]).collect();
                    mean_and_se(&col).0
                })
                .collect(),
        );
    }
    let (time_average_mean, time_average_se) = (0..ensemble.dim)
        .map(|j| {
            let col: Vec<f64> = ensemble.paths.iter().map(|p| p.time_average[j]).collect();
            mean_and_se(&col)
        })
        .unzip();
    EnsembleStats {
        times: ensemble.times.clone(),
        mean,
        se,
        mean_state,
        time_average_mean,
        time_average_se,
        paths_used: ensemble.paths.len(),
        aborted: ensemble.aborted.len(),
    }
}

/// Number of standard errors allowed in one-sided Monte Carlo checks.
pub const MC_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct McTimeAverageReport {
    /// Mean over paths of `Σ_i ⟨∇_i ψ_i(ȳ), Ỹ_{i,T} − ȳ_i⟩`.
    pub lhs_mean: f64,
    pub lhs_se: f64,
    /// `(1/T) Σ_i D_{φ_i*}(x_{0,i}, x̄_i) + ε n`.
    pub rhs: f64,
    pub slack: f64,
    /// Whether `Ψ(ȳ) = 0`, in which case the dropped proof term vanishes.
    pub interior_equilibrium: bool,
}

impl McTimeAverageReport {
    pub fn holds(&self) -> bool {
        self.slack >= 0.0
    }
}

pub fn mc_time_average_bound(dg: &DifferentialGame<'_>, ensemble: &Ensemble) -> Result<McTimeAverageReport> {
    let ybar = dg.equilibrium_primal();
    let psi_bar = pseudogradient(dg.game(), ybar)?;
    let lhs: Vec<f64> = ensemble
        .paths
        .iter()
        .map(|p| dot(&psi_bar, &sub(&p.time_average, ybar)))
        .collect();
    let (lhs_mean, lhs_se) = mean_and_se(&lhs);
    let rhs = dg.total_value(&ensemble.x0)? / ensemble.horizon + ensemble.epsilon * dg.dim() as f64;
    Ok(McTimeAverageReport {
        lhs_mean,
        lhs_se,
        rhs,
        slack: rhs - (lhs_mean - MC_SIGMAS * lhs_se),
        interior_equilibrium: norm2(&psi_bar) <= 1e-10,
    })
}

/// `e^{−μt} D_0 + (1 − e^{−μt}) ε n / μ`.
pub fn exponential_bound(t: f64, d0: f64, epsilon: f64, n: usize, mu: f64) -> f64 {
    let decay = (-mu * t).exp();
    decay * d0 + (1.0 - decay) * epsilon * n as f64 / mu
}

#[derive(Debug, Clone, PartialEq)]
pub struct McExpPoint {
    pub t: f64,
    pub mean: f64,
    pub se: f64,
    pub bound: f64,
}

impl McExpPoint {
    pub fn holds(&self) -> bool {
        self.mean - MC_SIGMAS * self.se <= self.bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McExpReport {
    pub mu: f64,
    pub points: Vec<McExpPoint>,
    /// `ε n / μ`.
    pub floor: f64,
    pub terminal_mean: f64,
    pub terminal_se: f64,
}

impl McExpReport {
    pub fn holds(&self) -> bool {
        self.points.iter().all(McExpPoint::holds)
    }
}

pub const MC_CHECK_POINTS: usize = 20;
pub const MAX_RELATIVE_SE: f64 = 0.5;

pub fn mc_exponential_bound(dg: &DifferentialGame<'_>, ensemble: &Ensemble, mu: f64) -> Result<McExpReport> {
    if mu.is_nan() || mu <= 0.0 {
        return Err(Error::Invariant(format!("exponential bound needs mu > 0, got {mu}")));
    }
    let stats = ensemble_stats(ensemble);
    let d0 = dg.total_value(&ensemble.x0)?;
    let n = dg.dim();
    let len = stats.times.len();
    let count = MC_CHECK_POINTS.min(len);
    let mut points = Vec::with_capacity(count);
    for j in 0..count {
        let k = if count == 1 { 0 } else { (j * (len - 1) + (count - 1) / 2) / (count - 1) };
        let t = stats.times[k];
        let bound = exponential_bound(t, d0, ensemble.epsilon, n, mu);
        let ratio = stats.se[k] / bound;
        if ratio > MAX_RELATIVE_SE {
            return Err(Error::InsufficientPaths { time: t, ratio });
        }
        points.push(McExpPoint {
            t,
            mean: stats.mean[k],
            se: stats.se[k],
            bound,
        });
    }
    Ok(McExpReport {
        mu,
        points,
        floor: ensemble.epsilon * n as f64 / mu,
        terminal_mean: stats.mean[len - 1],
        terminal_se: stats.se[len - 1],
    })
}
