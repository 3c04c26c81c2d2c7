//! The mirror differential game.
//!
//! State `x` is the stacked dual vector, controls are dual velocities
//! (`ẋ = u`). Player `i` pays the running cost
//!
//! ```text
//! c_i(x, u) = ψ_i(Φ*(x)) + ψ_i*(−u_i | y_{−i}) + ⟨u_i, ȳ_i⟩
//! ```
//!
//! and the terminal cost `q_i(x) = D_{φ_i*}(x_i, x̄_i)`. The candidate value
//! function is `V_i(x) = D_{φ_i*}(x_i, x̄_i)`, and the closed-loop equilibrium
//! policy is the mirror-descent feedback `u_i* = −∇_i ψ_i(Φ*(x))`.

use std::ops::Range;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{self, equilibrium_by_integration, DualTrajectory, SimConfig};
use crate::error::{Error, Result};
use crate::games::{partial_conjugate, pseudogradient, vi_residual, Game};
use crate::linalg::{self, dot, norm2, trapezoid};
use crate::mirror_maps::{fenchel_coupling, AggregatedMirror, MirrorMap};

/// `V_i(x) = D_{φ_i*}(x_i, x̄_i)`.
#[derive(Debug, Clone)]
pub struct ValueFn {
    player: usize,
    block: Range<usize>,
    dim: usize,
    mirror: MirrorMap,
    eq_dual: Vec<f64>,
}

impl ValueFn {
    pub fn player(&self) -> usize {
        self.player
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Error::check_len("value function state", self.dim, x.len())?;
        self.mirror.bregman_conj(&x[self.block.clone()], &self.eq_dual)
    }

    /// `∇_x V_i`: `∇φ_i*(x_i) − ∇φ_i*(x̄_i)` on block `i`, exactly zero elsewhere.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("value function state", self.dim, x.len())?;
        let y = self.mirror.grad_phi_conj(&x[self.block.clone()])?;
        let ybar = self.mirror.grad_phi_conj(&self.eq_dual)?;
        let mut g = vec![0.0; self.dim];
        for (k, idx) in self.block.clone().enumerate() {
            g[idx] = y[k] - ybar[k];
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Cle,
    Perturbed,
}

/// Control samples on a trajectory grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    pub times: Vec<f64>,
    pub dim: usize,
    pub controls: Vec<f64>,
    pub provenance: Provenance,
}

impl ControlSignal {
    pub fn from_trajectory(traj: &DualTrajectory, provenance: Provenance) -> Self {
        let controls = (0..traj.len()).flat_map(|k| traj.control(k).iter().copied()).collect();
        ControlSignal {
            times: traj.times().to_vec(),
            dim: traj.dim(),
            controls,
            provenance,
        }
    }

    pub fn control(&self, k: usize) -> &[f64] {
        &self.controls[k * self.dim..(k + 1) * self.dim]
    }
}

/// Costate `p_i(t_k) ∈ Rⁿ` for one player.
#[derive(Debug, Clone, PartialEq)]
pub struct CostatePath {
    pub player: usize,
    pub times: Vec<f64>,
    pub dim: usize,
    values: Vec<f64>,
}

impl CostatePath {
    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalResidual {
    pub times: Vec<f64>,
    /// `c_i(x, u*) + ⟨∇V_i, u*⟩` per player per node.
    pub analytic: Vec<Vec<f64>>,
    /// Central-difference variant on interior nodes `1..K`.
    pub finite_difference: Vec<Vec<f64>>,
    pub max_analytic: f64,
    pub max_finite_difference: f64,
}

/// Smooth additive control perturbation `a · sin(ω t + θ) · d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub direction: Vec<f64>,
}

impl Perturbation {
    pub fn zero(dim: usize) -> Self {
        Perturbation {
            amplitude: 0.0,
            frequency: 0.0,
            phase: 0.0,
            direction: vec![0.0; dim],
        }
    }

    pub fn at(&self, t: f64) -> impl Iterator<Item = f64> + '_ {
        let s = self.amplitude * (self.frequency * t + self.phase).sin();
        self.direction.iter().map(move |d| s * d)
    }
}

/// Sampling ranges for random perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub amplitude: (f64, f64),
    pub frequency: (f64, f64),
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            amplitude: (0.05, 1.0),
            frequency: (0.5, 4.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlayerDeviation {
    pub player: usize,
    pub value: f64,
    /// `J_i − V_i(x_0)` per trial (`+∞` when a stage cost is infinite).
    pub gaps: Vec<f64>,
    pub min_gap: f64,
    pub infinite_trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub trials: usize,
    pub players: Vec<PlayerDeviation>,
}

impl DeviationReport {
    pub fn min_gap(&self) -> f64 {
        self.players.iter().map(|p| p.min_gap).fold(f64::INFINITY, f64::min)
    }
}

/// Game, mirror geometry and equilibrium data bundled together.
#[derive(Debug, Clone)]
pub struct DifferentialGame<'a> {
    game: &'a dyn Game,
    mirror: &'a AggregatedMirror,
    eq_primal: Vec<f64>,
    eq_dual: Vec<f64>,
}

/// VI residual required of an equilibrium obtained by integration.
pub const EQUILIBRIUM_TOL: f64 = 1e-10;

impl<'a> DifferentialGame<'a> {
    /// Uses the game's closed-form equilibrium, or falls back to long-horizon
    /// mirror play from the mirror's reference point.
    pub fn new(game: &'a dyn Game, mirror: &'a AggregatedMirror) -> Result<Self> {
        match game.equilibrium() {
            Some(eq) => Self::with_equilibrium(game, mirror, eq),
            None => {
                let x0 = vec![0.0; mirror.dim()];
                let eq = equilibrium_by_integration(game, mirror, &x0, 1e-2, EQUILIBRIUM_TOL, 1e4)?;
                Self::with_equilibrium(game, mirror, eq)
            }
        }
    }

    pub fn with_equilibrium(game: &'a dyn Game, mirror: &'a AggregatedMirror, eq_primal: Vec<f64>) -> Result<Self> {
        Error::check_len("game/mirror dimension", game.total_dim(), mirror.dim())?;
        if game.dims() != mirror.dims().as_slice() {
            return Err(Error::Invariant(format!(
                "player dimensions differ: game {:?}, mirror {:?}",
                game.dims(),
                mirror.dims()
            )));
        }
        Error::check_len("equilibrium", mirror.dim(), eq_primal.len())?;
        let eq_dual = mirror.grad_phi(&eq_primal)?;
        Ok(DifferentialGame {
            game,
            mirror,
            eq_primal,
            eq_dual,
        })
    }

    pub fn game(&self) -> &'a dyn Game {
        self.game
    }

    pub fn mirror(&self) -> &'a AggregatedMirror {
        self.mirror
    }

    pub fn players(&self) -> usize {
        self.mirror.players()
    }

    pub fn dim(&self) -> usize {
        self.mirror.dim()
    }

    pub fn equilibrium_primal(&self) -> &[f64] {
        &self.eq_primal
    }

    pub fn equilibrium_dual(&self) -> &[f64] {
        &self.eq_dual
    }

    pub fn equilibrium_residual(&self) -> Result<f64> {
        vi_residual(self.game, &self.eq_primal)
    }

    pub fn value_fn(&self, i: usize) -> ValueFn {
        let block = self.mirror.block(i);
        ValueFn {
            player: i,
            dim: self.dim(),
            mirror: self.mirror.part(i).clone(),
            eq_dual: self.eq_dual[block.clone()].to_vec(),
            block,
        }
    }

    pub fn value(&self, i: usize, x: &[f64]) -> Result<f64> {
        let r = self.mirror.block(i);
        Error::check_len("state", self.dim(), x.len())?;
        self.mirror.part(i).bregman_conj(&x[r.clone()], &self.eq_dual[r])
    }

    /// `V(x) = Σ_i V_i(x)`.
    pub fn total_value(&self, x: &[f64]) -> Result<f64> {
        (0..self.players()).map(|i| self.value(i, x)).sum()
    }

    pub fn value_gradient(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        self.value_fn(i).gradient(x)
    }

    /// Mirror-descent feedback `−Ψ(Φ*(x))`.
    pub fn mp_control(&self, x: &[f64]) -> Result<Vec<f64>> {
        dynamics::mp_vector_field(self.game, self.mirror, x)
    }

    /// `c_i(x, u_i)`; `+∞` when the partial conjugate is infinite.
    pub fn stage_cost(&self, i: usize, x: &[f64], u_i: &[f64]) -> Result<f64> {
        let y = self.mirror.grad_phi_conj(x)?;
        self.stage_cost_at(i, &y, u_i)
    }

    fn stage_cost_at(&self, i: usize, y: &[f64], u_i: &[f64]) -> Result<f64> {
        let r = self.mirror.block(i);
        Error::check_len("player control", r.len(), u_i.len())?;
        let neg_u: Vec<f64> = u_i.iter().map(|v| -v).collect();
        let conj = partial_conjugate(self.game, i, &neg_u, y)?;
        if conj == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
        Ok(self.game.cost(i, y) + conj + dot(u_i, &self.eq_primal[r]))
    }

    /// `q_i(x_T) = D_{φ_i*}(x_{T,i}, x̄_i)`.
    pub fn terminal_cost(&self, i: usize, x_t: &[f64]) -> Result<f64> {
        self.value(i, x_t)
    }

    /// Primal form `D_{φ_i}(y_{T,i}, ȳ_i)`... with the arguments swapped as the
    /// duality requires: `D_{φ_i}(ȳ_i, y_{T,i})`.
    pub fn terminal_cost_primal(&self, i: usize, x_t: &[f64]) -> Result<f64> {
        let r = self.mirror.block(i);
        let part = self.mirror.part(i);
        let y_t = part.grad_phi_conj(&x_t[r.clone()])?;
        part.bregman(&self.eq_primal[r], &y_t)
    }

    /// `H_i = c_i(x, u) + ⟨p_i, u⟩` with `u` the stacked control.
    pub fn hamiltonian(&self, i: usize, p_i: &[f64], x: &[f64], u: &[f64]) -> Result<f64> {
        Error::check_len("costate", self.dim(), p_i.len())?;
        Error::check_len("control", self.dim(), u.len())?;
        let c = self.stage_cost(i, x, &u[self.mirror.block(i)])?;
        if c == f64::INFINITY {
            return Ok(c);
        }
        Ok(c + dot(p_i, u))
    }

    /// `⟨∇_x V_i, (u_i, γ*_{−i})⟩ + c_i(x, u_i)`; nonnegative, zero exactly at
    /// the mirror-descent control.
    pub fn lemma_gap(&self, i: usize, x: &[f64], u_i: &[f64]) -> Result<f64> {
        let mut u = self.mp_control(x)?;
        u[self.mirror.block(i)].copy_from_slice(u_i);
        self.hamiltonian(i, &self.value_gradient(i, x)?, x, &u)
    }

    /// The same quantity written as the Fenchel coupling
    /// `FC_{ψ_i(·, y_{−i})}(y_i, −u_i)`.
    pub fn lemma_gap_as_coupling(&self, i: usize, x: &[f64], u_i: &[f64]) -> Result<f64> {
        let y = self.mirror.grad_phi_conj(x)?;
        let r = self.mirror.block(i);
        let neg_u: Vec<f64> = u_i.iter().map(|v| -v).collect();
        let conj = partial_conjugate(self.game, i, &neg_u, &y)?;
        Ok(fenchel_coupling(self.game.cost(i, &y), conj, &y[r], &neg_u))
    }

    /// `J_i = ∫ c_i dt + q_i(x(T))` by composite trapezoid on the trajectory grid.
    pub fn cumulative_cost(&self, traj: &DualTrajectory, controls: &ControlSignal, i: usize) -> Result<f64> {
        if controls.times != traj.times() {
            return Err(Error::Invariant("control grid does not match trajectory grid".into()));
        }
        let r = self.mirror.block(i);
        let mut stage = Vec::with_capacity(traj.len());
        for k in 0..traj.len() {
            let c = self.stage_cost_at(i, traj.primal(k), &controls.control(k)[r.clone()])?;
            if c == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            stage.push(c);
        }
        Ok(trapezoid(traj.times(), &stage) + self.terminal_cost(i, traj.terminal_state())?)
    }

    /// Backward trapezoid integration of
    /// `ṗ_i = −[0, …, ∇²φ_i*(x_i) ∇_i ψ_i(y), …, 0]` from
    /// `p_i(T) = ∇_x q_i(x(T))`.
    pub fn costate_path(&self, traj: &DualTrajectory) -> Result<Vec<CostatePath>> {
        let n = self.dim();
        let kmax = traj.len() - 1;
        let mut out = Vec::with_capacity(self.players());
        for i in 0..self.players() {
            let r = self.mirror.block(i);
            let part = self.mirror.part(i);
            let rate = |k: usize| -> Result<Vec<f64>> {
                let h = part.hess_phi_conj(&traj.state(k)[r.clone()])?;
                let g = self.game.partial_grad(i, traj.primal(k));
                Ok(linalg::mat_vec(&h, &g))
            };
            let mut values = vec![0.0; n * traj.len()];
            let terminal = self.value_gradient(i, traj.terminal_state())?;
            values[kmax * n..].copy_from_slice(&terminal);
            let mut next_rate = rate(kmax)?;
            for k in (0..kmax).rev() {
                let cur_rate = rate(k)?;
                let h = traj.times()[k + 1] - traj.times()[k];
                for (j, idx) in r.clone().enumerate() {
                    values[k * n + idx] =
                        values[(k + 1) * n + idx] + 0.5 * h * (cur_rate[j] + next_rate[j]);
                }
                next_rate = cur_rate;
            }
            out.push(CostatePath {
                player: i,
                times: traj.times().to_vec(),
                dim: n,
                values,
            });
        }
        Ok(out)
    }

    /// Residual of `c_i(x, u*) + dV_i/dt = 0` along a CLE trajectory, both with
    /// the analytic derivative and with central differences of `V_i`.
    pub fn variational_residual(&self, traj: &DualTrajectory) -> Result<VariationalResidual> {
        let players = self.players();
        let len = traj.len();
        let mut analytic = vec![Vec::with_capacity(len); players];
        let mut finite_difference = vec![Vec::with_capacity(len.saturating_sub(2)); players];
        let mut max_analytic: f64 = 0.0;
        let mut max_fd: f64 = 0.0;
        for i in 0..players {
            let r = self.mirror.block(i);
            let values: Vec<f64> = (0..len)
                .map(|k| self.value(i, traj.state(k)))
                .collect::<Result<_>>()?;
            let mut costs = Vec::with_capacity(len);
            for k in 0..len {
                let u = traj.control(k);
                let c = self.stage_cost_at(i, traj.primal(k), &u[r.clone()])?;
                let dv = dot(&self.value_gradient(i, traj.state(k))?, u);
                let res = c + dv;
                max_analytic = max_analytic.max(res.abs());
                analytic[i].push(res);
                costs.push(c);
            }
            for k in 1..len.saturating_sub(1) {
                let dt = traj.times()[k + 1] - traj.times()[k - 1];
                let res = costs[k] + (values[k + 1] - values[k - 1]) / dt;
                max_fd = max_fd.max(res.abs());
                finite_difference[i].push(res);
            }
        }
        Ok(VariationalResidual {
            times: traj.times().to_vec(),
            analytic,
            finite_difference,
            max_analytic,
            max_finite_difference: max_fd,
        })
    }

    /// Re-integrates the coupled system with player `i` playing
    /// `γ*_i(x) + perturbation(t)` and everyone else on the CLE feedback.
    pub fn integrate_perturbed(&self, cfg: &SimConfig, i: usize, perturbation: &Perturbation) -> Result<DualTrajectory> {
        let r = self.mirror.block(i);
        Error::check_len("perturbation direction", r.len(), perturbation.direction.len())?;
        dynamics::integrate_with_policy(self.game, self.mirror, cfg, |t, _x, y| {
            let mut u: Vec<f64> = pseudogradient(self.game, y)?.into_iter().map(|g| -g).collect();
            for (idx, d) in r.clone().zip(perturbation.at(t)) {
                u[idx] += d;
            }
            Ok(u)
        })
    }

    /// `J_i(x_0, perturbed) − V_i(x_0)`.
    pub fn deviation_gap(&self, cfg: &SimConfig, i: usize, perturbation: &Perturbation) -> Result<f64> {
        let traj = self.integrate_perturbed(cfg, i, perturbation)?;
        let controls = ControlSignal::from_trajectory(&traj, Provenance::Perturbed);
        let j = self.cumulative_cost(&traj, &controls, i)?;
        Ok(j - self.value(i, &cfg.x0)?)
    }

    /// Random smooth perturbations of each player's control in turn.
    pub fn deviation_test(
        &self,
        cfg: &SimConfig,
        spec: &PerturbationSpec,
        trials: usize,
        seed: u64,
    ) -> Result<DeviationReport> {
        let mut players = Vec::with_capacity(self.players());
        for i in 0..self.players() {
            let ni = self.mirror.block(i).len();
            let perturbations: Vec<Perturbation> = (0..trials)
                .map(|trial| sample_perturbation(spec, ni, seed, i, trial))
                .collect();
            let gaps: Vec<f64> = perturbations
                .par_iter()
                .map(|p| self.deviation_gap(cfg, i, p))
                .collect::<Result<_>>()?;
            let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
            players.push(PlayerDeviation {
                player: i,
                value: self.value(i, &cfg.x0)?,
                infinite_trials: gaps.iter().filter(|g| g.is_infinite()).count(),
                min_gap,
                gaps,
            });
        }
        Ok(DeviationReport { trials, players })
    }
}

fn sample_perturbation(spec: &PerturbationSpec, dim: usize, seed: u64, player: usize, trial: usize) -> Perturbation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((player as u64) << 32) | trial as u64);
    let amplitude = rng.random_range(spec.amplitude.0..=spec.amplitude.1);
    let frequency = rng.random_range(spec.frequency.0..=spec.frequency.1);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let direction = loop {
        let d: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = norm2(&d);
        if norm > 1e-3 {
            break d.into_iter().map(|v| v / norm).collect();
        }
    };
    Perturbation {
        amplitude,
        frequency,
        phase,
        direction,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{BilinearGame, BilinearParams, CournotGame, CournotParams};
    use crate::linalg::{norm_inf, sub};
    use approx::assert_abs_diff_eq;

    fn cournot() -> CournotGame {
        CournotGame::new(CournotParams::scalar(10.0, 1.0, 2.0)).unwrap()
    }

    #[test]
    fn stage_cost_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        assert_abs_diff_eq!(dg.stage_cost(0, &[0.0, 0.0], &[9.0]).unwrap(), 30.0, epsilon = 1e-12);
        let xbar = dg.equilibrium_dual().to_vec();
        assert_abs_diff_eq!(dg.stage_cost(0, &xbar, &[0.0]).unwrap(), 0.0, epsilon = 1e-12);

        let b = BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0]])).unwrap();
        let dgb = DifferentialGame::new(&b, &id).unwrap();
        // −B y₂ = 0 at x = (1, 0); any other control is infinitely costly.
        assert_eq!(dgb.stage_cost(0, &[1.0, 0.0], &[0.5]).unwrap(), f64::INFINITY);
        assert_eq!(dgb.stage_cost(0, &[1.0, 0.0], &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn terminal_cost_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let xbar = dg.equilibrium_dual().to_vec();
        assert_eq!(dg.terminal_cost(0, &xbar).unwrap(), 0.0);
        let shifted = [xbar[0] + 1.0, xbar[1] + 1.0];
        for i in 0..2 {
            assert_abs_diff_eq!(dg.terminal_cost(i, &shifted).unwrap(), 0.5, epsilon = 1e-14);
        }

        let ent = AggregatedMirror::new(vec![MirrorMap::negative_entropy(1), MirrorMap::negative_entropy(1)]).unwrap();
        let dge = DifferentialGame::new(&g, &ent).unwrap();
        for x in [[0.3, -0.7], [2.0, 1.0], [-1.0, 0.5]] {
            for i in 0..2 {
                assert_abs_diff_eq!(
                    dge.terminal_cost(i, &x).unwrap(),
                    dge.terminal_cost_primal(i, &x).unwrap(),
                    epsilon = 1e-9
                );
            }
        }
    }

    #[test]
    fn value_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        assert_eq!(dg.value(0, dg.equilibrium_dual()).unwrap(), 0.0);
        assert_abs_diff_eq!(dg.value(0, &[0.0, 0.0]).unwrap(), 50.0 / 9.0, epsilon = 1e-13);
        let v = dg.value_fn(0).value(&[0.0, 0.0]).unwrap() + dg.value_fn(1).value(&[0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(dg.total_value(&[0.0, 0.0]).unwrap(), v);
    }

    #[test]
    fn value_gradient_is_block_sparse() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let grad = dg.value_gradient(0, &[1.5, -2.0]).unwrap();
        assert_eq!(grad[1], 0.0);
        assert_abs_diff_eq!(grad[0], 1.5 - 10.0 / 3.0);
    }

    #[test]
    fn hamiltonian_examples() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let x = [0.4, 1.1];
        let u = dg.mp_control(&x).unwrap();
        assert_eq!(
            dg.hamiltonian(0, &[0.0, 0.0], &x, &u).unwrap(),
            dg.stage_cost(0, &x, &u[..1]).unwrap()
        );
        let p = dg.value_gradient(0, &x).unwrap();
        assert!(dg.hamiltonian(0, &p, &x, &u).unwrap().abs() <= 1e-12);

        let mut min = (f64::INFINITY, 0.0);
        for k in 0..=200 {
            let delta = -1.0 + 0.01 * k as f64;
            let mut up = u.clone();
            up[0] += delta;
            let h = dg.hamiltonian(0, &p, &x, &up).unwrap();
            assert!(h >= -1e-12);
            if delta.abs() > 1e-9 {
                assert!(h > 0.0);
            }
            if h < min.0 {
                min = (h, delta);
            }
        }
        assert!(min.1.abs() < 1e-9);
    }

    #[test]
    fn lemma_gap_equals_fenchel_coupling() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let x = [0.4, 1.1];
        for u in [[-3.0], [0.0], [2.5]] {
            assert_abs_diff_eq!(
                dg.lemma_gap(1, &x, &u).unwrap(),
                dg.lemma_gap_as_coupling(1, &x, &u).unwrap(),
                epsilon = 1e-11
            );
        }
    }

    #[test]
    fn cumulative_cost_on_tiny_horizon_is_terminal_cost() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let cfg = SimConfig::new(1e-9, 1e-9, vec![0.0, 0.0]);
        let traj = dynamics::integrate_mp(&g, &id, &cfg).unwrap();
        let controls = ControlSignal::from_trajectory(&traj, Provenance::Cle);
        let j = dg.cumulative_cost(&traj, &controls, 0).unwrap();
        assert_abs_diff_eq!(j, dg.terminal_cost(0, &cfg.x0).unwrap(), epsilon = 1e-6);
    }

    #[test]
    fn cumulative_cost_rejects_mismatched_grid() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let a = dynamics::integrate_mp(&g, &id, &SimConfig::new(1.0, 0.1, vec![0.0, 0.0])).unwrap();
        let b = dynamics::integrate_mp(&g, &id, &SimConfig::new(1.0, 0.05, vec![0.0, 0.0])).unwrap();
        let controls = ControlSignal::from_trajectory(&b, Provenance::Cle);
        assert!(dg.cumulative_cost(&a, &controls, 0).is_err());
    }

    #[test]
    fn costate_terminal_and_rest_point() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let traj = dynamics::integrate_mp(&g, &id, &SimConfig::new(2.0, 1e-3, vec![0.0, 0.0])).unwrap();
        let paths = dg.costate_path(&traj).unwrap();
        let last = traj.len() - 1;
        for (i, p) in paths.iter().enumerate() {
            let expect = dg.value_gradient(i, traj.terminal_state()).unwrap();
            assert_eq!(p.at(last), expect.as_slice());
            // off-block entries never move
            for k in 0..traj.len() {
                assert_eq!(p.at(k)[1 - i], 0.0);
            }
        }

        let xbar = dg.equilibrium_dual().to_vec();
        let rest = dynamics::integrate_mp(&g, &id, &SimConfig::new(1.0, 1e-2, xbar)).unwrap();
        for p in dg.costate_path(&rest).unwrap() {
            for k in 0..rest.len() {
                assert!(norm_inf(p.at(k)) < 1e-13);
            }
        }
    }

    #[test]
    fn costate_matches_value_gradient_with_nonidentity_mirror() {
        let g = cournot();
        let m = AggregatedMirror::new(vec![
            MirrorMap::quadratic(nalgebra::DMatrix::from_element(1, 1, 2.0)).unwrap(),
            MirrorMap::quadratic(nalgebra::DMatrix::from_element(1, 1, 0.5)).unwrap(),
        ])
        .unwrap();
        let dg = DifferentialGame::new(&g, &m).unwrap();
        let traj = dynamics::integrate_mp(&g, &m, &SimConfig::new(5.0, 1e-3, vec![0.0, 0.0])).unwrap();
        for p in dg.costate_path(&traj).unwrap() {
            for k in (0..traj.len()).step_by(50) {
                let grad = dg.value_gradient(p.player, traj.state(k)).unwrap();
                assert!(norm_inf(&sub(p.at(k), &grad)) < 1e-5);
            }
        }
    }

    #[test]
    fn variational_residual_vanishes_at_rest() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let rest = dynamics::integrate_mp(&g, &id, &SimConfig::new(1.0, 1e-2, dg.equilibrium_dual().to_vec())).unwrap();
        let r = dg.variational_residual(&rest).unwrap();
        assert!(r.max_analytic < 1e-13 && r.max_finite_difference < 1e-13);
    }

    #[test]
    fn perturbation_ladder_increases_gap() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&g, &id).unwrap();
        let cfg = SimConfig::new(5.0, 1e-3, vec![0.0, 0.0]);
        let gaps: Vec<f64> = [2.5, 5.0, 10.0]
            .iter()
            .map(|&a| {
                let p = Perturbation {
                    amplitude: a,
                    frequency: 3.0,
                    phase: 0.3,
                    direction: vec![1.0],
                };
                dg.deviation_gap(&cfg, 0, &p).unwrap()
            })
            .collect();
        assert!(gaps[0] > 0.0 && gaps[0] < gaps[1] && gaps[1] < gaps[2], "{gaps:?}");
    }

    #[test]
    fn bilinear_deviations_are_infinitely_costly() {
        let b = BilinearGame::new(BilinearParams::from_rows(vec![vec![1.0]])).unwrap();
        let id = AggregatedMirror::identity(&[1, 1]);
        let dg = DifferentialGame::new(&b, &id).unwrap();
        let cfg = SimConfig::new(1.0, 1e-2, vec![1.0, 0.0]);
        let r = dg.deviation_test(&cfg, &PerturbationSpec::default(), 5, 3).unwrap();
        assert!(r.players.iter().all(|p| p.infinite_trials == 5));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = cournot();
        let id = AggregatedMirror::identity(&[2]);
        assert!(DifferentialGame::new(&g, &id).is_err());
    }
}
