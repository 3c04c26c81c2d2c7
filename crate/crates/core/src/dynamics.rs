//! Deterministic mirror play: `ẋ = u`, `y = Φ*(x)` with the mirror-descent
//! feedback `u = −Ψ(Φ*(x))`, integrated by fixed-step classical RK4.

use crate::error::{Error, Result};
use crate::games::{pseudogradient, Game};
use crate::mirror_maps::AggregatedMirror;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    pub x0: Vec<f64>,
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, x0: Vec<f64>) -> Self {
        SimConfig { horizon, dt, x0 }
    }

    /// Number of steps `K = T/dt`, which must be an integer up to a relative
    /// `1e-9`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Invariant(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Invariant(format!("dt must be positive, got {}", self.dt)));
        }
        if self.dt > self.horizon {
            return Err(Error::Invariant(format!(
                "dt = {} exceeds the horizon {}",
                self.dt, self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        let k = ratio.round();
        if (ratio - k).abs() > 1e-9 * k.max(1.0) {
            return Err(Error::Invariant(format!(
                "horizon / dt = {ratio} is not an integer step count"
            )));
        }
        Ok(k as usize)
    }

    pub fn validate(&self, dim: usize) -> Result<usize> {
        Error::check_len("initial dual state", dim, self.x0.len())?;
        if !self.x0.iter().all(|v| v.is_finite()) {
            return Err(Error::Invariant("initial dual state is not finite".into()));
        }
        self.steps()
    }

    pub fn with_dt(&self, dt: f64) -> Self {
        SimConfig { dt, ..self.clone() }
    }
}

/// Dense record of a dual path `x(t_k)`, its primal image `y(t_k) = Φ*(x(t_k))`
/// and the applied controls `u(t_k)`, all stored flat (`dim` values per node).
#[derive(Debug, Clone, PartialEq)]
pub struct DualTrajectory {
    times: Vec<f64>,
    dim: usize,
    states: Vec<f64>,
    primal: Vec<f64>,
    controls: Vec<f64>,
}

impl DualTrajectory {
    pub(crate) fn with_capacity(dim: usize, nodes: usize) -> Self {
        DualTrajectory {
            times: Vec::with_capacity(nodes),
            dim,
            states: Vec::with_capacity(nodes * dim),
            primal: Vec::with_capacity(nodes * dim),
            controls: Vec::with_capacity(nodes * dim),
        }
    }

    pub(crate) fn push(&mut self, t: f64, x: &[f64], y: &[f64], u: &[f64]) {
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.primal.extend_from_slice(y);
        self.controls.extend_from_slice(u);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn primal(&self, k: usize) -> &[f64] {
        &self.primal[k * self.dim..(k + 1) * self.dim]
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn terminal_primal(&self) -> &[f64] {
        self.primal(self.len() - 1)
    }

    /// Every `stride`-th node, always keeping the first one.
    pub fn thinned(&self, stride: usize) -> DualTrajectory {
        let stride = stride.max(1);
        let mut out = DualTrajectory::with_capacity(self.dim, self.len() / stride + 1);
        for k in (0..self.len()).step_by(stride) {
            out.push(self.times[k], self.state(k), self.primal(k), self.control(k));
        }
        out
    }
}

/// Mirror-play vector field `−Ψ(Φ*(x))`.
pub fn mp_vector_field(game: &dyn Game, mirror: &AggregatedMirror, x: &[f64]) -> Result<Vec<f64>> {
    let y = mirror.grad_phi_conj(x)?;
    Ok(pseudogradient(game, &y)?.into_iter().map(|g| -g).collect())
}

/// Integrates mirror play with RK4 from `cfg.x0` over `[0, T]`.
pub fn integrate_mp(game: &dyn Game, mirror: &AggregatedMirror, cfg: &SimConfig) -> Result<DualTrajectory> {
    integrate_with_policy(game, mirror, cfg, |_t, _x, y| {
        Ok(pseudogradient(game, y)?.into_iter().map(|g| -g).collect())
    })
}

/// Integrates `ẋ = policy(t, x, Φ*(x))` with classical fixed-step RK4.
///
/// Stage points leaving a mirror domain produce [`Error::DomainEscape`]; nodes
/// the game deems inadmissible (Cournot prices) produce
/// [`Error::PriceRegion`].
pub fn integrate_with_policy<F>(
    game: &dyn Game,
    mirror: &AggregatedMirror,
    cfg: &SimConfig,
    policy: F,
) -> Result<DualTrajectory>
where
    F: Fn(f64, &[f64], &[f64]) -> Result<Vec<f64>>,
{
    let n = mirror.dim();
    Error::check_len("game/mirror dimension", game.total_dim(), n)?;
    let steps = cfg.validate(n)?;
    let h = cfg.horizon / steps as f64;

    let field = |t: f64, x: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let y = mirror.grad_phi_conj(x).map_err(|e| Error::DomainEscape {
            time: t,
            detail: e.to_string(),
        })?;
        let u = policy(t, x, &y)?;
        Ok((y, u))
    };

    let mut traj = DualTrajectory::with_capacity(n, steps + 1);
    let mut x = cfg.x0.clone();
    for k in 0..=steps {
        let t = if k == steps { cfg.horizon } else { k as f64 * h };
        let (y, k1) = field(t, &x)?;
        if let Err(min_price) = game.admissible(&y) {
            return Err(Error::PriceRegion { time: t, min_price });
        }
        traj.push(t, &x, &y, &k1);
        if k == steps {
            break;
        }
        let stage = |s: f64, k: &[f64]| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + s * b).collect() };
        let (_, k2) = field(t + 0.5 * h, &stage(0.5 * h, &k1))?;
        let (_, k3) = field(t + 0.5 * h, &stage(0.5 * h, &k2))?;
        let (_, k4) = field(t + h, &stage(h, &k3))?;
        for j in 0..n {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    Ok(traj)
}

/// Pointwise primal image `Φ*(x(t_k))` on the trajectory grid.
pub fn primal_path(traj: &DualTrajectory) -> Vec<Vec<f64>> {
    (0..traj.len()).map(|k| traj.primal(k).to_vec()).collect()
}

/// Long-horizon mirror-play integration until the VI residual drops to
/// `tol`; the terminal primal state is returned as the equilibrium estimate.
pub fn equilibrium_by_integration(
    game: &dyn Game,
    mirror: &AggregatedMirror,
    x0: &[f64],
    dt: f64,
    tol: f64,
    max_horizon: f64,
) -> Result<Vec<f64>> {
    let chunk = 10.0;
    let mut x = x0.to_vec();
    let mut elapsed = 0.0;
    while elapsed < max_horizon {
        let traj = integrate_mp(game, mirror, &SimConfig::new(chunk, dt, x))?;
        let y = traj.terminal_primal().to_vec();
        if crate::games::vi_residual(game, &y)? <= tol {
            return Ok(y);
        }
        x = traj.terminal_state().to_vec();
        elapsed += chunk;
    }
    Err(Error::Invariant(format!(
        "mirror play did not reach VI residual {tol:e} within horizon {max_horizon}"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{BilinearGame, BilinearParams, CournotGame, CournotParams};
    use crate::linalg::norm_inf;
    use crate::mirror_maps::MirrorMap;
    use nalgebra::DMatrix;
    use std::f64::consts::PI;

    fn cournot() -> CournotGame {
        CournotGame::new(CournotParams::scalar(10.0, 1.0, 2.0)).unwrap()
    }

    fn bilinear() -> BilinearGame {
        BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0]])).unwrap()
    }

    #[test]
    fn vector_field_examples() {
        let id = AggregatedMirror::identity(&[1, 1]);
        assert_eq!(mp_vector_field(&cournot(), &id, &[0.0, 0.0]).unwrap(), vec![9.0, 8.0]);
        let xbar = id.grad_phi(&cournot().equilibrium().unwrap()).unwrap();
        assert!(norm_inf(&mp_vector_field(&cournot(), &id, &xbar).unwrap()) < 1e-14);
        let v = mp_vector_field(&bilinear(), &id, &[1.0, 0.0]).unwrap();
        assert_eq!(v, vec![-0.0, 1.0]);
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(SimConfig::new(20.0, 1e-3, vec![]).steps().unwrap(), 20000);
        assert!(SimConfig::new(1.0, 0.3, vec![]).steps().is_err());
        assert!(SimConfig::new(1.0, 2.0, vec![]).steps().is_err());
        assert!(SimConfig::new(1.0, -0.1, vec![]).steps().is_err());
        assert!(SimConfig::new(2.0 * PI, 2.0 * PI / 62832.0, vec![]).steps().is_ok());
    }

    #[test]
    fn cournot_converges_to_nash() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let traj = integrate_mp(&g, &id, &SimConfig::new(20.0, 1e-3, vec![0.0, 0.0])).unwrap();
        assert_eq!(traj.state(0), &[0.0, 0.0]);
        let y = traj.terminal_primal();
        assert!((y[0] - 10.0 / 3.0).abs() < 1e-6 && (y[1] - 7.0 / 3.0).abs() < 1e-6);
        assert_eq!(traj.times().last(), Some(&20.0));
    }

    #[test]
    fn controls_are_the_evaluated_field() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let traj = integrate_mp(&g, &id, &SimConfig::new(1.0, 1e-2, vec![0.5, 0.5])).unwrap();
        for k in [0, 17, 100] {
            assert_eq!(traj.control(k), mp_vector_field(&g, &id, traj.state(k)).unwrap().as_slice());
        }
    }

    #[test]
    fn rest_point_is_fixed() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let xbar = id.grad_phi(&g.equilibrium().unwrap()).unwrap();
        let traj = integrate_mp(&g, &id, &SimConfig::new(5.0, 1e-2, xbar.clone())).unwrap();
        for k in 0..traj.len() {
            assert!(norm_inf(&crate::linalg::sub(traj.state(k), &xbar)) <= 1e-12);
        }
    }

    #[test]
    fn bilinear_orbit_closes() {
        let id = AggregatedMirror::identity(&[1, 1]);
        let steps = 62832;
        let cfg = SimConfig::new(2.0 * PI, 2.0 * PI / steps as f64, vec![1.0, 0.0]);
        let traj = integrate_mp(&bilinear(), &id, &cfg).unwrap();
        let x = traj.terminal_state();
        assert!((x[0] - 1.0).abs() < 1e-5 && x[1].abs() < 1e-5);
    }

    #[test]
    fn primal_path_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let traj = integrate_mp(&g, &id, &SimConfig::new(0.1, 1e-2, vec![1.0, 2.0])).unwrap();
        let path = primal_path(&traj);
        for (k, y) in path.iter().enumerate() {
            assert_eq!(y.as_slice(), traj.state(k));
        }

        let ent = AggregatedMirror::new(vec![MirrorMap::negative_entropy(1), MirrorMap::negative_entropy(1)]).unwrap();
        let traj = integrate_mp(&g, &ent, &SimConfig::new(0.1, 1e-2, vec![0.0, 0.0])).unwrap();
        assert_eq!(primal_path(&traj)[0], vec![1.0, 1.0]);

        let quad = AggregatedMirror::new(vec![
            MirrorMap::quadratic(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0])).unwrap(),
            MirrorMap::identity(2),
        ])
        .unwrap();
        let g2 = CournotGame::new(CournotParams {
            n: 2,
            m: vec![12.0, 9.0],
            p1: vec![1.0, 1.0],
            p2: vec![1.0, 1.0],
        })
        .unwrap();
        let traj = integrate_mp(&g2, &quad, &SimConfig::new(0.1, 1e-2, vec![2.0, 4.0, 1.0, 1.0])).unwrap();
        let y0 = &primal_path(&traj)[0];
        assert!((y0[0] - 1.0).abs() < 1e-15 && (y0[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn price_region_violation_is_reported() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let err = integrate_mp(&g, &id, &SimConfig::new(1.0, 1e-2, vec![8.0, 8.0])).unwrap_err();
        assert!(matches!(err, Error::PriceRegion { time, .. } if time == 0.0));
    }

    #[test]
    fn domain_escape_reports_time() {
        // Entropy dual state far beyond exp's range.
        let g = cournot();
        let ent = AggregatedMirror::new(vec![MirrorMap::negative_entropy(1), MirrorMap::negative_entropy(1)]).unwrap();
        let err = integrate_mp(&g, &ent, &SimConfig::new(1.0, 1e-2, vec![-800.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DomainEscape { .. }));
    }

    #[test]
    fn integration_is_deterministic() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let cfg = SimConfig::new(3.0, 1e-3, vec![0.3, -0.1]);
        assert_eq!(integrate_mp(&g, &id, &cfg).unwrap(), integrate_mp(&g, &id, &cfg).unwrap());
    }

    #[test]
    fn equilibrium_by_integration_recovers_cournot() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let y = equilibrium_by_integration(&g, &id, &[0.0, 0.0], 1e-2, 1e-10, 200.0).unwrap();
        assert!((y[0] - 10.0 / 3.0).abs() < 1e-9);
    }
}
