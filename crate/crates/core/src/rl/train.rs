//! Policy evaluation and improvement by martingale orthogonality with the
//! test process ∂v^ξ/∂ξ.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::approx::{Points, ValueApproximator};
use super::env::Environment;
use super::optim::{Optimizer, Schedule};
use crate::error::{Error, Result};
use crate::field::ValueFunction;
use crate::intensity::{entropy_of_rates, optimal_rates_into};
use crate::model::SwitchingModel;
use crate::sim::{
    martingale_increments, path_rng, sample_transition, simulate_map, value_policy, SimConfig,
    Start,
};

/// Parameters above this norm abort training.
pub const DIVERGENCE_NORM: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateMode {
    /// One update per batch of whole episodes.
    #[default]
    Offline,
    /// One update per time step, averaged over the batch.
    Online,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "offline" => Ok(Self::Offline),
            "online" => Ok(Self::Online),
            _ => Err(Error::InvalidConfig(format!(
                "mode must be offline or online, got '{s}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Number of parameter updates of the outer loop (episode batches).
    pub episodes: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub mode: UpdateMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 1000,
            batch: 64,
            schedule: Schedule::default(),
            mode: UpdateMode::Offline,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        self.schedule.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub episode: usize,
    /// |Ψ̄|² of the update.
    pub loss: f64,
    /// |ξ| after the update.
    pub param_norm: f64,
    /// Wall time since the start of training.
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<LogRecord>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over episodes lo..hi (clipped to the log).
    pub fn mean_loss(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.records.len());
        let lo = lo.min(hi);
        if hi == lo {
            return f64::NAN;
        }
        self.records[lo..hi].iter().map(|r| r.loss).sum::<f64>() / (hi - lo) as f64
    }

    /// Columns: episode, loss, param_norm, seconds.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Trains `approx` in place. The model supplies only g, λ and the exponent
/// cap; states and rewards come from `env`. `sim` fixes T and Δt.
pub fn train(
    model: &SwitchingModel,
    sim: &SimConfig,
    cfg: &TrainConfig,
    env: &dyn Environment,
    approx: &mut dyn ValueApproximator,
) -> Result<TrainingLog> {
    train_with(model, sim, cfg, env, approx, &mut |_, _| {})
}

/// As [`train`], calling `observe(record, params)` after every update.
pub fn train_with(
    model: &SwitchingModel,
    sim: &SimConfig,
    cfg: &TrainConfig,
    env: &dyn Environment,
    approx: &mut dyn ValueApproximator,
    observe: &mut dyn FnMut(&LogRecord, &[f64]),
) -> Result<TrainingLog> {
    cfg.validate()?;
    let m = model.regimes();
    if env.regimes() != m || approx.regimes() != m || env.state_dim() != approx.state_dim() {
        return Err(Error::InvalidConfig(format!(
            "regime or state counts disagree: model {m}, environment {}x{}, approximator {}x{}",
            env.regimes(),
            env.state_dim(),
            approx.regimes(),
            approx.state_dim()
        )));
    }
    if (sim.horizon - approx.horizon()).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "simulation horizon {} differs from approximator horizon {}",
            sim.horizon,
            approx.horizon()
        )));
    }
    let mut opt = Optimizer::new(cfg.schedule, approx.params().len());
    let mut run = Rollout::new(model, sim, cfg.batch, env.state_dim());
    let clock = Instant::now();
    let mut log = TrainingLog::default();
    for e in 0..cfg.episodes {
        run.reset(env, cfg.seed, e);
        let loss = match cfg.mode {
            UpdateMode::Offline => run.offline(env, approx, &mut opt, e + 1)?,
            UpdateMode::Online => run.online(env, approx, &mut opt, e + 1)?,
        };
        let norm = approx.param_norm();
        if loss.is_nan() {
            return Err(Error::Divergence {
                episode: e,
                reason: "loss is NaN".into(),
            });
        }
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::Divergence {
                episode: e,
                reason: format!("parameter norm {norm:e} exceeds {DIVERGENCE_NORM:e}"),
            });
        }
        let rec = LogRecord {
            episode: e,
            loss,
            param_norm: norm,
            seconds: clock.elapsed().as_secs_f64(),
        };
        observe(&rec, approx.params());
        log.records.push(rec);
    }
    Ok(log)
}

/// Lockstep state of one batch of episodes.
struct Rollout<'a> {
    model: &'a SwitchingModel,
    sim: &'a SimConfig,
    batch: usize,
    n: usize,
    x: Vec<f64>,
    x_next: Vec<f64>,
    regime: Vec<usize>,
    rngs: Vec<ChaCha8Rng>,
    all: Points,
    vals: Vec<f64>,
    row: Vec<f64>,
}

/// What one lockstep step produced for one episode.
struct Moved {
    v: f64,
    from: usize,
    to: usize,
    /// (f + λR) Δt − g.
    flow: f64,
}

impl<'a> Rollout<'a> {
    fn new(model: &'a SwitchingModel, sim: &'a SimConfig, batch: usize, n: usize) -> Self {
        let m = model.regimes();
        Self {
            model,
            sim,
            batch,
            n,
            x: vec![0.0; batch * n],
            x_next: vec![0.0; batch * n],
            regime: vec![0; batch],
            rngs: Vec::with_capacity(batch),
            all: Points::with_capacity(n, batch * m),
            vals: vec![0.0; batch * m],
            row: vec![0.0; m],
        }
    }

    fn reset(&mut self, env: &dyn Environment, seed: u64, episode: usize) {
        self.rngs.clear();
        for b in 0..self.batch {
            let mut rng = path_rng(seed, (episode * self.batch + b) as u64);
            self.regime[b] = env.reset(&mut rng, &mut self.x[b * self.n..(b + 1) * self.n]);
            self.rngs.push(rng);
        }
    }

    /// Evaluates every regime at the current states, draws the switches,
    /// steps the environment and leaves X_{k+1} in `x_next`.
    fn advance(
        &mut self,
        env: &dyn Environment,
        approx: &dyn ValueApproximator,
        k: usize,
    ) -> Result<Vec<Moved>> {
        let m = self.model.regimes();
        let (n, dt, t) = (self.n, self.sim.dt(), self.sim.time(k));
        let lambda = self.model.temperature();
        self.all.clear();
        for b in 0..self.batch {
            for j in 0..m {
                self.all.push(t, &self.x[b * n..(b + 1) * n], j);
            }
        }
        approx.evaluate(&self.all, &mut self.vals);
        let mut moved = Vec::with_capacity(self.batch);
        for b in 0..self.batch {
            let i = self.regime[b];
            let vals = &self.vals[b * m..(b + 1) * m];
            optimal_rates_into(
                vals,
                i,
                self.model.costs(),
                lambda,
                self.model.exponent_cap(),
                &mut self.row,
            )?;
            let rng = &mut self.rngs[b];
            let (j, _) = sample_transition(&self.row, i, dt, rng.random());
            let r = applied_entropy(&mut self.row, i, dt);
            let f = env.step(
                t,
                &self.x[b * n..(b + 1) * n],
                i,
                dt,
                rng,
                &mut self.x_next[b * n..(b + 1) * n],
            );
            let g = if i == j { 0.0 } else { self.model.cost(i, j) };
            moved.push(Moved {
                v: vals[i],
                from: i,
                to: j,
                flow: (f + lambda * r) * dt - g,
            });
        }
        Ok(moved)
    }

    /// Ψ̄ = (1/B) Σ_b Σ_k ∂v(t_k, X_k, I_k)/∂ξ Δξ_{b,k} at fixed ξ, then one update.
    fn offline(
        &mut self,
        env: &dyn Environment,
        approx: &mut dyn ValueApproximator,
        opt: &mut Optimizer,
        episode: usize,
    ) -> Result<f64> {
        let (bsz, n, kk) = (self.batch, self.n, self.sim.steps);
        let mut pts = Points::with_capacity(n, bsz * kk);
        let mut delta = vec![0.0; bsz * kk];
        for k in 0..kk {
            let t = self.sim.time(k);
            let moved = self.advance(env, &*approx, k)?;
            for (b, mv) in moved.iter().enumerate() {
                if k > 0 {
                    delta[(k - 1) * bsz + b] += mv.v;
                }
                delta[k * bsz + b] = mv.flow - mv.v;
                pts.push(t, &self.x[b * n..(b + 1) * n], mv.from);
                self.regime[b] = mv.to;
            }
            std::mem::swap(&mut self.x, &mut self.x_next);
        }
        if kk > 0 {
            for b in 0..bsz {
                delta[(kk - 1) * bsz + b] += approx.terminal(&self.x[b * n..(b + 1) * n]);
            }
        }
        let w: Vec<f64> = delta.iter().map(|d| d / bsz as f64).collect();
        let mut psi = vec![0.0; approx.params().len()];
        approx.accumulate_gradient(&pts, &w, &mut psi);
        opt.apply(approx.params_mut(), &psi, episode);
        Ok(psi.iter().map(|p| p * p).sum())
    }

    /// Updates after every step with the batch mean of ∂v/∂ξ Δξ_k; returns
    /// |Σ_k ψ_k|².
    fn online(
        &mut self,
        env: &dyn Environment,
        approx: &mut dyn ValueApproximator,
        opt: &mut Optimizer,
        episode: usize,
    ) -> Result<f64> {
        let (bsz, n, kk) = (self.batch, self.n, self.sim.steps);
        let len = approx.params().len();
        let mut total = vec![0.0; len];
        let mut here = Points::with_capacity(n, bsz);
        let mut next = Points::with_capacity(n, bsz);
        let mut v_next = vec![0.0; bsz];
        let mut w = vec![0.0; bsz];
        let mut psi = vec![0.0; len];
        for k in 0..kk {
            let (t, t1) = (self.sim.time(k), self.sim.time(k + 1));
            let moved = self.advance(env, &*approx, k)?;
            here.clear();
            next.clear();
            for (b, mv) in moved.iter().enumerate() {
                here.push(t, &self.x[b * n..(b + 1) * n], mv.from);
                next.push(t1, &self.x_next[b * n..(b + 1) * n], mv.to);
            }
            approx.evaluate(&next, &mut v_next);
            for (b, mv) in moved.iter().enumerate() {
                w[b] = (v_next[b] - mv.v + mv.flow) / bsz as f64;
                self.regime[b] = mv.to;
            }
            psi.iter_mut().for_each(|p| *p = 0.0);
            approx.accumulate_gradient(&here, &w, &mut psi);
            opt.apply(approx.params_mut(), &psi, episode);
            for (a, p) in total.iter_mut().zip(&psi) {
                *a += p;
            }
            std::mem::swap(&mut self.x, &mut self.x_next);
        }
        Ok(total.iter().map(|p| p * p).sum())
    }
}

/// R of the rates the kernel actually applies: a row with exit
/// probability Σ π_ij Δt > 1 is rescaled to exit probability 1 first.
/// Without this the entropy penalty of a clamped row grows like −π log π
/// while the switching gain stays capped, and training runs away.
fn applied_entropy(row: &mut [f64], i: usize, dt: f64) -> f64 {
    let exit = -row[i] * dt;
    if exit > 1.0 {
        for (j, r) in row.iter_mut().enumerate() {
            if j != i {
                *r /= exit;
            }
        }
    }
    entropy_of_rates(row, i)
}

/// Per-episode statistics Ψ_l = Σ_k φ_l(t_k, X_k, I_k) ΔM_k and their mean.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateSample {
    pub per_episode: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl UpdateSample {
    pub fn from_episodes(per_episode: Vec<Vec<f64>>) -> Result<Self> {
        let dim = per_episode.first().map_or(0, Vec::len);
        if per_episode.iter().any(|p| p.len() != dim) {
            return Err(Error::InvalidConfig(
                "episode statistics differ in length".into(),
            ));
        }
        if per_episode.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "episode statistic is not finite".into(),
            ));
        }
        let b = per_episode.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for p in &per_episode {
            for (m, v) in mean.iter_mut().zip(p) {
                *m += v / b;
            }
        }
        Ok(Self { per_episode, mean })
    }

    /// Standard error of each mean component.
    pub fn stderr(&self) -> Vec<f64> {
        let b = self.per_episode.len();
        if b < 2 {
            return vec![f64::NAN; self.mean.len()];
        }
        (0..self.mean.len())
            .map(|l| {
                let var = self
                    .per_episode
                    .iter()
                    .map(|p| (p[l] - self.mean[l]).powi(2))
                    .sum::<f64>()
                    / (b - 1) as f64;
                (var / b as f64).sqrt()
            })
            .collect()
    }

    /// Largest |mean| / stderr over the components.
    pub fn max_z(&self) -> f64 {
        self.mean
            .iter()
            .zip(self.stderr())
            .map(|(m, s)| m.abs() / s)
            .fold(0.0, f64::max)
    }
}

/// Test function φ(t, x, i) standing in for a component of ∂v/∂ξ.
pub type TestFunction<'a> = &'a (dyn Fn(f64, &[f64], usize) -> f64 + Sync);

/// Orthogonality statistics of a frozen value function, rolled out under its
/// own exponential policy with the first-order simulator.
pub fn orthogonality_sample(
    model: &SwitchingModel,
    sim: &SimConfig,
    start: &Start,
    value: std::sync::Arc<dyn ValueFunction>,
    tests: &[TestFunction<'_>],
) -> Result<UpdateSample> {
    let policy = value_policy(value.clone(), model);
    let per = simulate_map(model, &policy, sim, start, |_, path| {
        let inc = martingale_increments(path, value.as_ref(), model);
        tests
            .iter()
            .map(|phi| {
                inc.iter()
                    .enumerate()
                    .map(|(k, d)| phi(path.times[k], path.state(k), path.regimes[k]) * d)
                    .sum()
            })
            .collect::<Vec<f64>>()
    })?;
    UpdateSample::from_episodes(per)
}
