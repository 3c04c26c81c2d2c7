//! Post-processing of mirror-play trajectories: Lyapunov decay, the
//! time-average variational bound and the exponential rate.

use crate::dynamics::{integrate_mp, DualTrajectory, SimConfig};
use crate::error::{Error, Result};
use crate::games::pseudogradient;
use crate::linalg::{dot, norm2, sub, trapezoid};
use crate::mdg::DifferentialGame;

/// `V(t_k) = Σ_i V_i(x(t_k))` on the trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSeries {
    pub times: Vec<f64>,
    pub total: Vec<f64>,
    pub per_player: Vec<Vec<f64>>,
}

impl LyapunovSeries {
    /// Largest single-step increase `max_k V(t_{k+1}) − V(t_k)`, floored at 0.
    pub fn max_increase(&self) -> f64 {
        self.total.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    pub fn max_deviation_from_initial(&self) -> f64 {
        let v0 = self.total[0];
        self.total.iter().map(|v| (v - v0).abs()).fold(0.0, f64::max)
    }
}

pub fn lyapunov_series(dg: &DifferentialGame<'_>, traj: &DualTrajectory) -> Result<LyapunovSeries> {
    let players = dg.players();
    let mut per_player = vec![Vec::with_capacity(traj.len()); players];
    let mut total = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let mut sum = 0.0;
        for (i, series) in per_player.iter_mut().enumerate() {
            let v = dg.value(i, traj.state(k))?;
            series.push(v);
            sum += v;
        }
        total.push(sum);
    }
    Ok(LyapunovSeries {
        times: traj.times().to_vec(),
        total,
        per_player,
    })
}

/// `ȳ_{[0,T]} = (1/T) ∫₀ᵀ y(t) dt`, stacked over players.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageStrategy {
    pub horizon: f64,
    pub values: Vec<f64>,
}

pub fn average_strategy(traj: &DualTrajectory) -> AverageStrategy {
    let horizon = traj.horizon() - traj.times()[0];
    let values = (0..traj.dim())
        .map(|j| {
            let column: Vec<f64> = (0..traj.len()).map(|k| traj.primal(k)[j]).collect();
            trapezoid(traj.times(), &column) / horizon
        })
        .collect();
    AverageStrategy { horizon, values }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeAverageReport {
    pub horizon: f64,
    /// `Σ_i ⟨∇_i ψ_i(ȳ), ȳ_{i,[0,T]} − ȳ_i⟩`.
    pub lhs: f64,
    /// `(1/T) Σ_i D_{φ_i}(ȳ_i, y_{i,0})`.
    pub rhs: f64,
    pub slack: f64,
    /// `⟨Ψ(ȳ_{[0,T]}), ȳ_{[0,T]} − ȳ⟩`, reported only.
    pub display_form: f64,
    pub average: AverageStrategy,
}

pub const TIME_AVERAGE_TOL: f64 = 1e-8;

impl TimeAverageReport {
    pub fn holds(&self) -> bool {
        self.slack >= -TIME_AVERAGE_TOL
    }
}

pub fn time_average_bound_check(dg: &DifferentialGame<'_>, traj: &DualTrajectory) -> Result<TimeAverageReport> {
    let game = dg.game();
    let mirror = dg.mirror();
    let ybar = dg.equilibrium_primal();
    let average = average_strategy(traj);
    let psi_bar = pseudogradient(game, ybar)?;
    let lhs = dot(&psi_bar, &sub(&average.values, ybar));
    let rhs = mirror.bregman(ybar, traj.primal(0))? / average.horizon;
    let display_form = dot(&pseudogradient(game, &average.values)?, &sub(&average.values, ybar));
    Ok(TimeAverageReport {
        horizon: average.horizon,
        lhs,
        rhs,
        slack: rhs - lhs,
        display_form,
        average,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AverageProbe {
    pub horizons: Vec<f64>,
    /// `‖ȳ_{[0,T]} − ȳ‖` per horizon.
    pub distances: Vec<f64>,
    /// `distance(T_{k+1}) / distance(T_k)`.
    pub ratios: Vec<f64>,
}

pub fn average_convergence_probe(
    dg: &DifferentialGame<'_>,
    x0: &[f64],
    horizons: &[f64],
    dt: f64,
) -> Result<AverageProbe> {
    let mut distances = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let traj = integrate_mp(dg.game(), dg.mirror(), &SimConfig::new(t, dt, x0.to_vec()))?;
        distances.push(norm2(&sub(&average_strategy(&traj).values, dg.equilibrium_primal())));
    }
    let ratios = distances.windows(2).map(|w| w[1] / w[0]).collect();
    Ok(AverageProbe {
        horizons: horizons.to_vec(),
        distances,
        ratios,
    })
}

pub const DECAY_FLOOR: f64 = 1e-10;
pub const DECAY_MIN_NODES: usize = 10;
pub const DECAY_RELATIVE_SLACK: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentialDecayReport {
    pub mu: f64,
    /// `max_k V(t_k) / (e^{−μ t_k} V(0))` over nodes with nonzero bound.
    pub max_ratio: f64,
    pub pointwise_holds: bool,
    /// Least-squares slope of `log V`; `None` when `V(0)` is below the floor.
    pub fitted_slope: Option<f64>,
    pub bound_slope: f64,
    pub nodes_used: usize,
}

pub fn exponential_decay_check(
    dg: &DifferentialGame<'_>,
    traj: &DualTrajectory,
    mu: f64,
) -> Result<ExponentialDecayReport> {
    let series = lyapunov_series(dg, traj)?;
    let v0 = series.total[0];
    let t0 = series.times[0];
    let mut max_ratio: f64 = 0.0;
    let mut pointwise_holds = true;
    for (&t, &v) in series.times.iter().zip(&series.total) {
        let bound = (-mu * (t - t0)).exp() * v0;
        if v > bound * (1.0 + DECAY_RELATIVE_SLACK) {
            pointwise_holds = false;
        }
        if bound > 0.0 {
            max_ratio = max_ratio.max(v / bound);
        }
    }

    let (fitted_slope, nodes_used) = if v0 <= DECAY_FLOOR {
        (None, 0)
    } else {
        let window: Vec<(f64, f64)> = series
            .times
            .iter()
            .zip(&series.total)
            .take_while(|(_, &v)| v >= DECAY_FLOOR)
            .map(|(&t, &v)| (t, v.ln()))
            .collect();
        if window.len() < DECAY_MIN_NODES {
            return Err(Error::InsufficientDecayData {
                nodes: window.len(),
                required: DECAY_MIN_NODES,
            });
        }
        (Some(least_squares_slope(&window)), window.len())
    };

    Ok(ExponentialDecayReport {
        mu,
        max_ratio,
        pointwise_holds,
        fitted_slope,
        bound_slope: -mu,
        nodes_used,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let tm = points.iter().map(|p| p.0).sum::<f64>() / n;
    let lm = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (num, den) = points.iter().fold((0.0, 0.0), |(num, den), &(t, l)| {
        (num + (t - tm) * (l - lm), den + (t - tm) * (t - tm))
    });
    num / den
}

/// Pointwise checks of the Lyapunov derivative chain along a CLE trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeChainReport {
    /// `max |dV/dt + Σ_i c_i(x, u*)|`.
    pub identity_residual: f64,
    /// `max (dV/dt − Σ_i ⟨∇_i ψ_i(ȳ), ȳ_i − y_i⟩)`; should be ≤ 0.
    pub stability_excess: f64,
    /// `max (dV/dt + μ Σ_i D_{φ_i}(ȳ_i, y_i))`; should be ≤ 0.
    pub strong_excess: Option<f64>,
}

pub const CHAIN_TOL: f64 = 1e-9;

impl DerivativeChainReport {
    pub fn holds(&self) -> bool {
        self.identity_residual <= CHAIN_TOL
            && self.stability_excess <= CHAIN_TOL
            && self.strong_excess.is_none_or(|e| e <= CHAIN_TOL)
    }
}

pub fn derivative_chain_check(
    dg: &DifferentialGame<'_>,
    traj: &DualTrajectory,
    mu: Option<f64>,
) -> Result<DerivativeChainReport> {
    let mirror = dg.mirror();
    let ybar = dg.equilibrium_primal();
    let psi_bar = pseudogradient(dg.game(), ybar)?;
    let mut identity_residual: f64 = 0.0;
    let mut stability_excess = f64::NEG_INFINITY;
    let mut strong_excess = mu.map(|_| f64::NEG_INFINITY);
    for k in 0..traj.len() {
        let x = traj.state(k);
        let y = traj.primal(k);
        let u = traj.control(k);
        let mut dv = 0.0;
        let mut cost = 0.0;
        for i in 0..dg.players() {
            dv += dot(&dg.value_gradient(i, x)?, u);
            cost += dg.stage_cost(i, x, &u[mirror.block(i)])?;
        }
        identity_residual = identity_residual.max((dv + cost).abs());
        stability_excess = stability_excess.max(dv - dot(&psi_bar, &sub(ybar, y)));
        if let (Some(mu), Some(excess)) = (mu, strong_excess.as_mut()) {
            *excess = excess.max(dv + mu * mirror.bregman(ybar, y)?);
        }
    }
    Ok(DerivativeChainReport {
        identity_residual,
        stability_excess,
        strong_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{strong_monotonicity_modulus, BilinearGame, BilinearParams, CournotGame, CournotParams};
    use crate::mirror_maps::AggregatedMirror;
    use approx::assert_abs_diff_eq;

    fn cournot() -> CournotGame {
        CournotGame::new(CournotParams::scalar(10.0, 1.0, 2.0)).unwrap()
    }

    #[test]
    fn lyapunov_at_rest_is_zero() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(1.0, 1e-2, dg.equilibrium_dual().to_vec())).unwrap();
        let s = lyapunov_series(&dg, &traj).unwrap();
        assert!(s.total.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cournot_lyapunov_strictly_decreases() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(10.0, 1e-2, vec![0.0, 0.0])).unwrap();
        let s = lyapunov_series(&dg, &traj).unwrap();
        assert_abs_diff_eq!(s.total[0], dg.total_value(&[0.0, 0.0]).unwrap());
        for w in s.total.windows(2) {
            assert!(w[1] < w[0] || w[0] < 1e-12);
        }
    }

    #[test]
    fn bilinear_lyapunov_is_conserved() {
        let g = BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0]])).unwrap();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(10.0, 1e-3, vec![1.0, 0.0])).unwrap();
        let s = lyapunov_series(&dg, &traj).unwrap();
        assert!(s.max_deviation_from_initial() < 1e-6);
    }

    #[test]
    fn average_strategy_is_in_hull() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let traj = integrate_mp(&g, &id, &SimConfig::new(3.0, 1e-2, vec![0.0, 0.0])).unwrap();
        let avg = average_strategy(&traj);
        for j in 0..2 {
            let col: Vec<f64> = (0..traj.len()).map(|k| traj.primal(k)[j]).collect();
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(avg.values[j] >= lo && avg.values[j] <= hi);
        }
    }

    #[test]
    fn time_average_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(10.0, 1e-2, vec![0.0, 0.0])).unwrap();
        let r = time_average_bound_check(&dg, &traj).unwrap();
        assert!(r.lhs.abs() < 1e-12);
        assert!(r.rhs > 0.0 && r.holds());

        let b = BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0]])).unwrap();
        let dgb = DifferentialGame::new(&b, &id).unwrap();
        let t100 = integrate_mp(&b, &id, &SimConfig::new(100.0, 1e-2, vec![1.0, 0.0])).unwrap();
        let r100 = time_average_bound_check(&dgb, &t100).unwrap();
        assert_eq!(r100.lhs, 0.0);
        assert_abs_diff_eq!(r100.rhs, 0.5 / 100.0, epsilon = 1e-15);
        let t200 = integrate_mp(&b, &id, &SimConfig::new(200.0, 1e-2, vec![1.0, 0.0])).unwrap();
        let r200 = time_average_bound_check(&dgb, &t200).unwrap();
        assert_abs_diff_eq!(r200.rhs / r100.rhs, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn average_probe_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let p = average_convergence_probe(&dg, &[0.0, 0.0], &[5.0, 10.0, 20.0], 1e-2).unwrap();
        // the transient contributes O(1/T) to the average
        assert!(p.ratios.iter().all(|&r| r < 1.0));
        let p = average_convergence_probe(&dg, dg.equilibrium_dual(), &[5.0, 10.0], 1e-2).unwrap();
        assert!(p.distances.iter().all(|&d| d < 1e-12));
    }

    #[test]
    fn exponential_decay_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let mu = strong_monotonicity_modulus(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(5.0, 1e-3, vec![0.0, 0.0])).unwrap();
        let r = exponential_decay_check(&dg, &traj, mu).unwrap();
        assert!(r.pointwise_holds);
        assert!(r.fitted_slope.unwrap() <= -2.0 + 0.05);

        let rest = integrate_mp(&g, &id, &SimConfig::new(1.0, 1e-2, dg.equilibrium_dual().to_vec())).unwrap();
        let r = exponential_decay_check(&dg, &rest, mu).unwrap();
        assert!(r.pointwise_holds && r.fitted_slope.is_none());

        let b = BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0]])).unwrap();
        let dgb = DifferentialGame::new(&b, &id).unwrap();
        let tb = integrate_mp(&b, &id, &SimConfig::new(5.0, 1e-3, vec![1.0, 0.0])).unwrap();
        let r = exponential_decay_check(&dgb, &tb, 0.0).unwrap();
        assert!(r.pointwise_holds);
    }

    #[test]
    fn short_window_is_insufficient_data() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(1.0, 0.2, vec![0.0, 0.0])).unwrap();
        assert!(matches!(
            exponential_decay_check(&dg, &traj, 2.0),
            Err(Error::InsufficientDecayData { .. })
        ));
    }

    #[test]
    fn derivative_chain_holds() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(5.0, 1e-2, vec![0.0, 0.0])).unwrap();
        let r = derivative_chain_check(&dg, &traj, Some(2.0)).unwrap();
        assert!(r.holds(), "{r:?}");
    }
}
