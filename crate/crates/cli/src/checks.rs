//! Registry of verification checks, keyed by stable names.

use std::sync::OnceLock;
use std::time::Instant;

use mirrorplay::analysis::{exponential_decay_check, lyapunov_series, time_average_bound_check};
use mirrorplay::dynamics::{integrate_mp, DualTrajectory, SimConfig};
use mirrorplay::games::strong_monotonicity_modulus;
use mirrorplay::linalg::{norm_inf, sub};
use mirrorplay::mdg::{ControlSignal, DifferentialGame, PerturbationSpec, Provenance};
use mirrorplay::stochastic::{
    euler_maruyama_paths, hjb_residual_scan, ito_correction, mc_exponential_bound, mc_time_average_bound,
    Ensemble,
};
use mirrorplay::{Error, Result};
use serde::Serialize;

use crate::config::Scenario;
use crate::report::CheckRecord;

pub const CHECK_NAMES: [&str; 12] = [
    "lemma1_scan",
    "variational_identity",
    "bellman_value",
    "deviation",
    "lyapunov_decay",
    "time_average_bound",
    "exp_decay",
    "ito_correction",
    "hjb_residual",
    "mc_time_average",
    "mc_exp_bound",
    "order_check",
];

pub const MC_CHECKS: [&str; 2] = ["mc_time_average", "mc_exp_bound"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub status: Status,
    pub lhs: Option<f64>,
    pub rhs: Option<f64>,
    pub residual: Option<f64>,
    pub tolerance: Option<f64>,
    pub margin: Option<f64>,
    pub note: Option<String>,
}

impl Outcome {
    fn skipped(reason: impl Into<String>) -> Self {
        Outcome {
            status: Status::Skipped,
            lhs: None,
            rhs: None,
            residual: None,
            tolerance: None,
            margin: None,
            note: Some(reason.into()),
        }
    }

    /// Passes when `lhs ≤ rhs + tolerance`.
    fn at_most(lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let margin = rhs + tolerance - lhs;
        Outcome {
            status: if margin >= 0.0 { Status::Pass } else { Status::Fail },
            lhs: Some(lhs),
            rhs: Some(rhs),
            residual: Some(lhs - rhs),
            tolerance: Some(tolerance),
            margin: Some(margin),
            note: None,
        }
    }

    fn and(mut self, ok: bool, note: impl Into<String>) -> Self {
        if !ok {
            self.status = Status::Fail;
        }
        self.note = Some(note.into());
        self
    }
}

/// Shared state for one verification run; expensive artifacts are computed
/// once and reused across checks.
pub struct CheckContext<'a> {
    pub scenario: &'a Scenario,
    pub dg: DifferentialGame<'a>,
    pub seed: u64,
    trajectory: OnceLock<Result<DualTrajectory>>,
    ensemble: OnceLock<Result<Ensemble>>,
}

impl<'a> CheckContext<'a> {
    pub fn new(scenario: &'a Scenario, seed: u64) -> Result<Self> {
        Ok(CheckContext {
            dg: DifferentialGame::new(scenario.game.as_ref(), &scenario.mirror)?,
            scenario,
            seed,
            trajectory: OnceLock::new(),
            ensemble: OnceLock::new(),
        })
    }

    pub fn trajectory(&self) -> Result<&DualTrajectory> {
        self.trajectory
            .get_or_init(|| integrate_mp(self.scenario.game.as_ref(), &self.scenario.mirror, &self.scenario.sim))
            .as_ref()
            .map_err(Clone::clone)
    }

    pub fn ensemble(&self) -> Option<Result<&Ensemble>> {
        let sde = self.scenario.sde.as_ref()?;
        Some(
            self.ensemble
                .get_or_init(|| euler_maruyama_paths(&self.dg, sde))
                .as_ref()
                .map_err(Clone::clone),
        )
    }

    /// Installs an ensemble computed elsewhere so the Monte Carlo checks reuse it.
    pub fn set_ensemble(&self, ensemble: Ensemble) {
        let _ = self.ensemble.set(Ok(ensemble));
    }

    /// Strong monotonicity modulus when it is defined and positive.
    fn mu(&self) -> Option<f64> {
        strong_monotonicity_modulus(self.scenario.game.as_ref(), &self.scenario.mirror)
            .ok()
            .filter(|&m| m > 0.0)
    }
}

pub fn run_check(ctx: &CheckContext<'_>, name: &str) -> CheckRecord {
    let start = Instant::now();
    let result = match name {
        "lemma1_scan" => lemma1_scan(ctx),
        "variational_identity" => variational_identity(ctx),
        "bellman_value" => bellman_value(ctx),
        "deviation" => deviation(ctx),
        "lyapunov_decay" => lyapunov_decay(ctx),
        "time_average_bound" => time_average_bound(ctx),
        "exp_decay" => exp_decay(ctx),
        "ito_correction" => ito(ctx),
        "hjb_residual" => hjb(ctx),
        "mc_time_average" => mc_time_average(ctx),
        "mc_exp_bound" => mc_exp(ctx),
        "order_check" => order_check(ctx),
        other => Err(Error::Invariant(format!("unregistered check `{other}`"))),
    };
    CheckRecord::new(name, result, start.elapsed().as_secs_f64())
}

fn sample_states(ctx: &CheckContext<'_>, count: usize, half_width: f64, stream: u64) -> Vec<Vec<f64>> {
    use rand::{RngExt, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed);
    rng.set_stream(stream);
    (0..count)
        .map(|_| {
            ctx.dg
                .equilibrium_dual()
                .iter()
                .map(|c| c + rng.random_range(-half_width..half_width))
                .collect()
        })
        .collect()
}

fn lemma1_scan(ctx: &CheckContext<'_>) -> Result<Outcome> {
    use rand::{RngExt, SeedableRng};
    let dg = &ctx.dg;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(ctx.seed);
    rng.set_stream(1);
    let states = sample_states(ctx, 500, 5.0, 2);
    let (mut min_gap, mut at_mp) = (f64::INFINITY, 0.0f64);
    for x in &states {
        let i = rng.random_range(0..dg.players());
        let r = dg.mirror().block(i);
        let u: Vec<f64> = r.clone().map(|_| rng.random_range(-10.0..10.0)).collect();
        let mp = dg.mp_control(x)?;
        min_gap = min_gap.min(dg.lemma_gap(i, x, &u)?);
        at_mp = at_mp.max(dg.lemma_gap(i, x, &mp[r])?.abs());
    }
    Ok(Outcome::at_most(at_mp, 0.0, 1e-9).and(
        min_gap >= -1e-10,
        format!("500 samples; min gap {min_gap:e} (>= -1e-10)"),
    ))
}

fn variational_identity(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let r = ctx.dg.variational_residual(ctx.trajectory()?)?;
    Ok(Outcome::at_most(r.max_analytic, 0.0, 1e-9).and(
        true,
        format!("central-difference residual {:e}", r.max_finite_difference),
    ))
}

fn bellman_value(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let traj = ctx.trajectory()?;
    let controls = ControlSignal::from_trajectory(traj, Provenance::Cle);
    let mut worst: f64 = 0.0;
    for i in 0..ctx.dg.players() {
        let j = ctx.dg.cumulative_cost(traj, &controls, i)?;
        worst = worst.max((j - ctx.dg.value(i, &ctx.scenario.sim.x0)?).abs());
    }
    Ok(Outcome::at_most(worst, 0.0, 1e-4))
}

fn deviation(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let trials = 50;
    let r = ctx
        .dg
        .deviation_test(&ctx.scenario.sim, &PerturbationSpec::default(), trials, ctx.seed)?;
    let infinite: usize = r.players.iter().map(|p| p.infinite_trials).sum();
    let min_gap = r.min_gap();
    let mut out = Outcome::at_most(0.0, min_gap, 1e-8);
    out.lhs = Some(min_gap);
    out.rhs = Some(0.0);
    out.residual = Some(min_gap);
    Ok(out.and(true, format!("{trials} trials per player, {infinite} with infinite cost")))
}

fn lyapunov_decay(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let s = lyapunov_series(&ctx.dg, ctx.trajectory()?)?;
    Ok(Outcome::at_most(s.max_increase(), 0.0, 1e-10).and(
        true,
        format!("V(0) = {:e}, V(T) = {:e}", s.total[0], s.total[s.total.len() - 1]),
    ))
}

fn time_average_bound(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let r = time_average_bound_check(&ctx.dg, ctx.trajectory()?)?;
    Ok(Outcome::at_most(r.lhs, r.rhs, 1e-8).and(
        true,
        format!("value at the average strategy, <Psi(avg), avg - eq> = {:e}", r.display_form),
    ))
}

fn exp_decay(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let Some(mu) = ctx.mu() else {
        return Ok(Outcome::skipped("no positive strong monotonicity modulus for this game and mirror"));
    };
    let r = exponential_decay_check(&ctx.dg, ctx.trajectory()?, mu)?;
    let out = Outcome::at_most(r.max_ratio, 1.0, 1e-3);
    Ok(match r.fitted_slope {
        Some(slope) => out.and(
            slope <= -mu + 0.05,
            format!("mu = {mu}; fitted log-slope {slope} (<= {})", -mu + 0.05),
        ),
        None => out.and(true, format!("mu = {mu}; V(0) below the fitting floor")),
    })
}

fn ito(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let Some(sde) = &ctx.scenario.sde else {
        return Ok(Outcome::skipped("no stochastic section"));
    };
    let mirror = &ctx.scenario.mirror;
    let mut worst: f64 = 0.0;
    for x in sample_states(ctx, 100, 3.0, 3) {
        for i in 0..mirror.players() {
            let expect = sde.epsilon * mirror.block(i).len() as f64;
            worst = worst.max((ito_correction(mirror, i, &x, sde.epsilon)? - expect).abs());
        }
    }
    Ok(Outcome::at_most(worst, 0.0, 1e-12))
}

fn hjb(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let Some(sde) = &ctx.scenario.sde else {
        return Ok(Outcome::skipped("no stochastic section"));
    };
    let r = hjb_residual_scan(&ctx.dg, sde.epsilon, 25, ctx.seed)?;
    Ok(Outcome::at_most(r.max_at_mp, 0.0, 1e-9).and(
        r.min_off_policy > 0.0,
        format!(
            "min off-policy residual {:e} over {} controls (> 0)",
            r.min_off_policy, r.off_policy_checked
        ),
    ))
}

fn mc_time_average(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let Some(ensemble) = ctx.ensemble() else {
        return Ok(Outcome::skipped("no stochastic section"));
    };
    let ensemble = ensemble?;
    let r = mc_time_average_bound(&ctx.dg, ensemble)?;
    let mut out = Outcome::at_most(r.lhs_mean - 3.0 * r.lhs_se, r.rhs, 0.0);
    out.lhs = Some(r.lhs_mean);
    let note = format!(
        "lhs standard error {:e}; {}; {} paths aborted",
        r.lhs_se,
        if r.interior_equilibrium {
            "interior equilibrium"
        } else {
            "equilibrium not interior, dropped term nonzero"
        },
        ensemble.aborted.len()
    );
    Ok(out.and(true, note))
}

fn mc_exp(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let Some(ensemble) = ctx.ensemble() else {
        return Ok(Outcome::skipped("no stochastic section"));
    };
    let Some(mu) = ctx.mu() else {
        return Ok(Outcome::skipped("no positive strong monotonicity modulus for this game and mirror"));
    };
    let r = mc_exponential_bound(&ctx.dg, ensemble?, mu)?;
    let (worst, at) = r
        .points
        .iter()
        .map(|p| (p.mean - 3.0 * p.se - p.bound, p))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("at least one checked time");
    let mut out = Outcome::at_most(at.mean - 3.0 * at.se, at.bound, 0.0);
    out.residual = Some(worst);
    Ok(out.and(
        true,
        format!(
            "tightest of {} times at t = {}; terminal mean {:e} vs floor {:e}",
            r.points.len(),
            at.t,
            r.terminal_mean,
            r.floor
        ),
    ))
}

/// Halving ratio of the RK4 global error on `[0, min(T, 2)]`, against a
/// reference run with a 64 times finer step.
fn order_check(ctx: &CheckContext<'_>) -> Result<Outcome> {
    let game = ctx.scenario.game.as_ref();
    let mirror = &ctx.scenario.mirror;
    let horizon = ctx.scenario.sim.horizon.min(2.0);
    let h = horizon / 20.0;
    let x0 = ctx.scenario.sim.x0.clone();
    let terminal = |dt: f64| -> Result<Vec<f64>> {
        Ok(integrate_mp(game, mirror, &SimConfig::new(horizon, dt, x0.clone()))?
            .terminal_state()
            .to_vec())
    };
    let reference = terminal(h / 64.0)?;
    let e1 = norm_inf(&sub(&terminal(h)?, &reference));
    let e2 = norm_inf(&sub(&terminal(h / 2.0)?, &reference));
    if e2 < 1e-12 {
        return Ok(Outcome::skipped(format!("errors at roundoff level ({e1:e}, {e2:e})")));
    }
    let ratio = e1 / e2;
    let mut out = Outcome::at_most((ratio - 16.0).abs(), 0.0, 4.0);
    out.lhs = Some(ratio);
    out.rhs = Some(16.0);
    Ok(out.and(true, format!("errors {e1:e}, {e2:e} at dt = {h}, {}", h / 2.0)))
}
