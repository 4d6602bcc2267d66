//! Forward simulation of the regime-modulated diffusion with a controlled
//! regime chain.
//!
//! One step from (t, x, i): the next regime is drawn from the first-order
//! kernel P(i → j) = π_ij Δt (rescaled to sum 1 when the exit probability
//! would exceed 1, which is counted as a clamp), then the state takes an
//! Euler–Maruyama step with the coefficients of the current regime. The
//! reward is f(t, x, i) at the start of the step.
//!
//! Every path owns a ChaCha8 stream keyed by (seed, path index), so
//! batches are reproducible bit for bit regardless of scheduling.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ValueFunction;
use crate::intensity::entropy_of_rates;
use crate::model::SwitchingModel;
use crate::policy::GeneratorPolicy;

/// Transition law of the regime over one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionKernel {
    /// P(i → j) = π_ij Δt with clamping.
    #[default]
    FirstOrder,
    /// Row i of exp(Q Δt) with Q assembled from all regimes' rows at (t, x).
    /// Diagnostics only.
    MatrixExponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    #[serde(default)]
    pub kernel: TransitionKernel,
}

impl SimConfig {
    pub fn new(horizon: f64, steps: usize, batch: usize, seed: u64) -> Result<Self> {
        if !(horizon > 0.0) || steps == 0 {
            return Err(Error::InvalidConfig(
                "simulation needs a positive horizon and at least one step".into(),
            ));
        }
        Ok(Self {
            horizon,
            steps,
            batch,
            seed,
            kernel: TransitionKernel::FirstOrder,
        })
    }

    /// Step count from Δt; rejects Δt that do not divide the horizon.
    pub fn with_dt(horizon: f64, dt: f64, batch: usize, seed: u64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "Δt must be positive, got {dt}"
            )));
        }
        let steps = (horizon / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - horizon).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "Δt = {dt} does not divide the horizon {horizon}"
            )));
        }
        Self::new(horizon, steps, batch, seed)
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn with_kernel(mut self, kernel: TransitionKernel) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }
}

/// RNG of path `index` under master seed `seed`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Initial (x, i) of each path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Start {
    Fixed {
        x: Vec<f64>,
        regime: usize,
    },
    /// x uniform on the box, regime uniform on 0..m.
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
}

impl Start {
    pub fn fixed(x: Vec<f64>, regime: usize) -> Self {
        Self::Fixed { x, regime }
    }

    /// Draws a start; consumes randomness only for the box variant.
    pub fn sample<R: Rng>(&self, regimes: usize, rng: &mut R, x: &mut [f64]) -> usize {
        match self {
            Self::Fixed { x: x0, regime } => {
                x.copy_from_slice(x0);
                *regime
            }
            Self::UniformBox { lo, hi } => {
                for d in 0..x.len() {
                    x[d] = lo[d] + (hi[d] - lo[d]) * rng.random::<f64>();
                }
                rng.random_range(0..regimes)
            }
        }
    }

    pub(crate) fn validate(&self, model: &SwitchingModel) -> Result<()> {
        let n = model.state_dim();
        let ok = match self {
            Self::Fixed { x, regime } => x.len() == n && *regime < model.regimes(),
            Self::UniformBox { lo, hi } => {
                lo.len() == n && hi.len() == n && lo.iter().zip(hi).all(|(a, b)| a <= b)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "start {self:?} does not fit the model"
            )))
        }
    }
}

/// A regime switch observed between step `k` and `k + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub step: usize,
    /// Grid time at which the new regime is first observed.
    pub time: f64,
    pub from: usize,
    pub to: usize,
}

/// One trajectory on the uniform time grid.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpisodePath {
    pub dt: f64,
    pub state_dim: usize,
    pub noise_dim: usize,
    /// t_0..t_K.
    pub times: Vec<f64>,
    /// X_{t_k}, flattened (K + 1) × n.
    pub states: Vec<f64>,
    /// I_{t_k}, length K + 1.
    pub regimes: Vec<usize>,
    /// f(t_k, X_k, I_k), length K.
    pub rewards: Vec<f64>,
    /// R(π, I_k) of the row used at step k, length K.
    pub entropy: Vec<f64>,
    pub jumps: Vec<Jump>,
    /// Brownian increments ΔW_k, flattened K × d.
    pub noise: Vec<f64>,
    /// Steps where the first-order kernel had to be rescaled.
    pub clamps: usize,
}

impl EpisodePath {
    pub fn steps(&self) -> usize {
        self.rewards.len()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    /// Σ_k (f + λR) Δt − Σ switch costs + h(X_T).
    pub fn payoff(&self, model: &SwitchingModel) -> f64 {
        let lambda = model.temperature();
        let running: f64 = self
            .rewards
            .iter()
            .zip(&self.entropy)
            .map(|(f, r)| f + lambda * r)
            .sum::<f64>()
            * self.dt;
        let costs: f64 = self.jumps.iter().map(|j| model.cost(j.from, j.to)).sum();
        running - costs + model.terminal_reward(self.state(self.steps()))
    }

    fn reset(&mut self, sim: &SimConfig, n: usize, d: usize) {
        let k = sim.steps;
        self.dt = sim.dt();
        self.state_dim = n;
        self.noise_dim = d;
        self.times.clear();
        self.times.extend((0..=k).map(|j| sim.time(j)));
        self.states.clear();
        self.states.resize((k + 1) * n, 0.0);
        self.regimes.clear();
        self.regimes.resize(k + 1, 0);
        self.rewards.clear();
        self.rewards.resize(k, 0.0);
        self.entropy.clear();
        self.entropy.resize(k, 0.0);
        self.noise.clear();
        self.noise.resize(k * d, 0.0);
        self.jumps.clear();
        self.clamps = 0;
    }
}

/// Draws the next regime from a generator row given a uniform `u`.
/// Returns the regime and whether the probabilities were rescaled.
pub fn sample_transition(row: &[f64], i: usize, dt: f64, u: f64) -> (usize, bool) {
    let exit: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, r)| r * dt)
        .sum();
    let (scale, clamped) = if exit > 1.0 {
        (1.0 / exit, true)
    } else {
        (1.0, false)
    };
    let mut cum = 0.0;
    let mut last = i;
    for (j, r) in row.iter().enumerate() {
        if j == i || *r <= 0.0 {
            continue;
        }
        cum += r * dt * scale;
        last = j;
        if u < cum {
            return (j, clamped);
        }
    }
    // rounding can leave cum slightly below 1 after rescaling
    if clamped {
        (last, true)
    } else {
        (i, false)
    }
}

/// Draws from an explicit probability vector.
fn sample_categorical(p: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (j, q) in p.iter().enumerate() {
        cum += q;
        if u < cum {
            return j;
        }
    }
    p.iter().rposition(|q| *q > 0.0).unwrap_or(p.len() - 1)
}

/// Result of one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub regime: usize,
    pub reward: f64,
    pub clamped: bool,
}

/// One step from (t, x, i) under the generator row `row`: regime draw,
/// Euler–Maruyama move with the pre-jump coefficients into `x_next`, and
/// the reward f(t, x, i). `noise` receives ΔW (length d).
#[allow(clippy::too_many_arguments)]
pub fn step<R: Rng>(
    t: f64,
    x: &[f64],
    i: usize,
    row: &[f64],
    model: &SwitchingModel,
    dt: f64,
    rng: &mut R,
    x_next: &mut [f64],
    noise: &mut [f64],
) -> StepOutcome {
    let u: f64 = rng.random();
    let (j, clamped) = sample_transition(row, i, dt, u);
    let reward = euler_step(model, t, x, i, dt, rng, x_next, noise);
    StepOutcome {
        regime: j,
        reward,
        clamped,
    }
}

/// Euler–Maruyama under regime `i`; returns f(t, x, i).
#[allow(clippy::too_many_arguments)]
pub(crate) fn euler_step<R: Rng>(
    model: &SwitchingModel,
    t: f64,
    x: &[f64],
    i: usize,
    dt: f64,
    rng: &mut R,
    x_next: &mut [f64],
    noise: &mut [f64],
) -> f64 {
    let n = model.state_dim();
    let d = model.noise_dim();
    let sq = dt.sqrt();
    for w in noise.iter_mut() {
        *w = sq * rng.sample::<f64, _>(StandardNormal);
    }
    let mut mu = [0.0; 8];
    let mut sig = [0.0; 64];
    model.drift_into(t, x, i, &mut mu[..n]);
    model.vol_into(t, x, i, &mut sig[..n * d]);
    for a in 0..n {
        let mut dx = mu[a] * dt;
        for b in 0..d {
            dx += sig[a * d + b] * noise[b];
        }
        x_next[a] = x[a] + dx;
    }
    model.running_reward(t, x, i)
}

/// Row i of exp(Q Δt) by scaling and squaring.
fn exponential_row(q: &[f64], m: usize, dt: f64, i: usize, out: &mut [f64]) {
    let norm = (0..m)
        .map(|r| (0..m).map(|c| (q[r * m + c] * dt).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let h = dt / 2f64.powi(s);
    let mul = |a: &[f64], b: &[f64]| -> Vec<f64> {
        let mut c = vec![0.0; m * m];
        for r in 0..m {
            for k in 0..m {
                let x = a[r * m + k];
                for col in 0..m {
                    c[r * m + col] += x * b[k * m + col];
                }
            }
        }
        c
    };
    let a: Vec<f64> = q.iter().map(|v| v * h).collect();
    let mut p = vec![0.0; m * m];
    let mut term = vec![0.0; m * m];
    for r in 0..m {
        p[r * m + r] = 1.0;
        term[r * m + r] = 1.0;
    }
    for k in 1..=16 {
        term = mul(&term, &a).into_iter().map(|v| v / k as f64).collect();
        for (pv, tv) in p.iter_mut().zip(&term) {
            *pv += tv;
        }
    }
    for _ in 0..s {
        p = mul(&p, &p);
    }
    for c in 0..m {
        out[c] = p[i * m + c].max(0.0);
    }
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
}

/// Per-path scratch carried between steps.
struct Walker {
    rng: ChaCha8Rng,
    regime: usize,
    row: Vec<f64>,
    q: Vec<f64>,
    probs: Vec<f64>,
}

impl Walker {
    fn start(
        model: &SwitchingModel,
        sim: &SimConfig,
        start: &Start,
        index: usize,
        path: &mut EpisodePath,
    ) -> Self {
        let n = model.state_dim();
        let m = model.regimes();
        path.reset(sim, n, model.noise_dim());
        let mut rng = path_rng(sim.seed, index as u64);
        let regime = start.sample(m, &mut rng, &mut path.states[..n]);
        path.regimes[0] = regime;
        Self {
            rng,
            regime,
            row: vec![0.0; m],
            q: vec![0.0; m * m],
            probs: vec![0.0; m],
        }
    }

    /// Regime draw and Euler move from (t, x) into `x_next`.
    #[allow(clippy::too_many_arguments)]
    fn draw(
        &mut self,
        model: &SwitchingModel,
        policy: &GeneratorPolicy,
        sim: &SimConfig,
        t: f64,
        x: &[f64],
        x_next: &mut [f64],
        noise: &mut [f64],
    ) -> Result<Draw> {
        let m = model.regimes();
        let dt = sim.dt();
        let i = self.regime;
        policy.row_into(t, x, i, &mut self.row)?;
        let entropy = entropy_of_rates(&self.row, i);
        let u: f64 = self.rng.random();
        let (regime, clamped) = match sim.kernel {
            TransitionKernel::FirstOrder => sample_transition(&self.row, i, dt, u),
            TransitionKernel::MatrixExponential => {
                for r in 0..m {
                    policy.row_into(t, x, r, &mut self.q[r * m..(r + 1) * m])?;
                }
                exponential_row(&self.q, m, dt, i, &mut self.probs);
                (sample_categorical(&self.probs, u), false)
            }
        };
        let reward = euler_step(model, t, x, i, dt, &mut self.rng, x_next, noise);
        self.regime = regime;
        Ok(Draw {
            regime,
            reward,
            entropy,
            clamped,
        })
    }

    /// Step k → k + 1 of `path`.
    fn advance(
        &mut self,
        model: &SwitchingModel,
        policy: &GeneratorPolicy,
        sim: &SimConfig,
        k: usize,
        path: &mut EpisodePath,
    ) -> Result<()> {
        let n = model.state_dim();
        let d = model.noise_dim();
        let i = self.regime;
        let t = path.times[k];
        let (head, tail) = path.states.split_at_mut((k + 1) * n);
        let noise = &mut path.noise[k * d..(k + 1) * d];
        let s = self.draw(model, policy, sim, t, &head[k * n..], &mut tail[..n], noise)?;
        path.entropy[k] = s.entropy;
        path.rewards[k] = s.reward;
        path.clamps += s.clamped as usize;
        if s.regime != i {
            path.jumps.push(Jump {
                step: k,
                time: path.times[k + 1],
                from: i,
                to: s.regime,
            });
        }
        path.regimes[k + 1] = s.regime;
        Ok(())
    }
}

struct Draw {
    regime: usize,
    reward: f64,
    entropy: f64,
    clamped: bool,
}

/// Payoffs and clamp counts of paths `lo..hi` without recording them,
/// advanced in lockstep; agrees bit for bit with [`EpisodePath::payoff`].
fn stream_payoffs(
    model: &SwitchingModel,
    policy: &GeneratorPolicy,
    sim: &SimConfig,
    start: &Start,
    lo: usize,
    hi: usize,
) -> Result<Vec<(f64, usize)>> {
    struct Lane {
        walker: Walker,
        x: [f64; 8],
        running: f64,
        costs: f64,
        clamps: usize,
    }
    let n = model.state_dim();
    let d = model.noise_dim();
    let m = model.regimes();
    let lambda = model.temperature();
    let mut lanes: Vec<Lane> = (lo..hi)
        .map(|index| {
            let mut x = [0.0; 8];
            let mut rng = path_rng(sim.seed, index as u64);
            let regime = start.sample(m, &mut rng, &mut x[..n]);
            Lane {
                walker: Walker {
                    rng,
                    regime,
                    row: vec![0.0; m],
                    q: vec![0.0; m * m],
                    probs: vec![0.0; m],
                },
                x,
                running: -0.0,
                costs: -0.0,
                clamps: 0,
            }
        })
        .collect();
    let mut x_next = [0.0; 8];
    let mut noise = [0.0; 8];
    for k in 0..sim.steps {
        let t = sim.time(k);
        for lane in lanes.iter_mut() {
            let i = lane.walker.regime;
            let s = lane.walker.draw(
                model,
                policy,
                sim,
                t,
                &lane.x[..n],
                &mut x_next[..n],
                &mut noise[..d],
            )?;
            lane.running += s.reward + lambda * s.entropy;
            if s.regime != i {
                lane.costs += model.cost(i, s.regime);
            }
            lane.clamps += s.clamped as usize;
            lane.x = x_next;
        }
    }
    let dt = sim.dt();
    Ok(lanes
        .iter()
        .map(|l| {
            (
                l.running * dt - l.costs + model.terminal_reward(&l.x[..n]),
                l.clamps,
            )
        })
        .collect())
}

// Paths advance in lockstep within a chunk so that tabulated policies are
// read one time slice at a time.
const CHUNK: usize = 1024;

fn check_inputs(
    model: &SwitchingModel,
    policy: &GeneratorPolicy,
    sim: &SimConfig,
    start: &Start,
) -> Result<()> {
    if policy.regimes() != model.regimes() {
        return Err(Error::InvalidConfig(
            "policy and model disagree on the regime count".into(),
        ));
    }
    if (sim.horizon - model.horizon()).abs() > 1e-12 {
        return Err(Error::InvalidConfig(format!(
            "simulation horizon {} differs from model horizon {}",
            sim.horizon,
            model.horizon()
        )));
    }
    if model.state_dim() > 8 || model.noise_dim() > 8 {
        return Err(Error::InvalidConfig(
            "simulator supports state and noise dimensions ≤ 8".into(),
        ));
    }
    start.validate(model)
}

/// Simulates `sim.batch` independent paths and keeps them all.
pub fn simulate_batch(
    model: &SwitchingModel,
    policy: &GeneratorPolicy,
    sim: &SimConfig,
    start: &Start,
) -> Result<Vec<EpisodePath>> {
    simulate_map(model, policy, sim, start, |_, p| p.clone())
}

/// Simulates every path and maps it through `f(index, path)` without
/// keeping the paths; results are in path order.
pub fn simulate_map<T, F>(
    model: &SwitchingModel,
    policy: &GeneratorPolicy,
    sim: &SimConfig,
    start: &Start,
    f: F,
) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &EpisodePath) -> T + Sync,
{
    check_inputs(model, policy, sim, start)?;
    let chunks = sim.batch.div_ceil(CHUNK);
    let nested: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map_init(Vec::new, |paths: &mut Vec<EpisodePath>, c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(sim.batch);
            paths.resize_with(hi - lo, EpisodePath::default);
            let mut walkers: Vec<Walker> = paths
                .iter_mut()
                .enumerate()
                .map(|(o, p)| Walker::start(model, sim, start, lo + o, p))
                .collect();
            for k in 0..sim.steps {
                for (w, p) in walkers.iter_mut().zip(paths.iter_mut()) {
                    w.advance(model, policy, sim, k, p)?;
                }
            }
            Ok(paths
                .iter()
                .enumerate()
                .map(|(o, p)| f(lo + o, p))
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
}

impl MeanEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self::default();
        }
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for (k, x) in xs.iter().enumerate() {
            let delta = x - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (x - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        Self {
            n,
            mean,
            std: var.sqrt(),
            stderr: (var / n as f64).sqrt(),
        }
    }

    /// |mean − target| in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target).abs() / self.stderr
    }
}

/// Payoff statistics of a batch together with clamp counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PayoffSummary {
    pub payoff: MeanEstimate,
    pub clamped_steps: usize,
    pub total_steps: usize,
}

impl PayoffSummary {
    pub fn clamp_rate(&self) -> f64 {
        self.clamped_steps as f64 / self.total_steps.max(1) as f64
    }
}

/// Streams the batch and summarises the per-path payoff.
pub fn payoff_statistics(
    model: &SwitchingModel,
    policy: &GeneratorPolicy,
    sim: &SimConfig,
    start: &Start,
) -> Result<PayoffSummary> {
    check_inputs(model, policy, sim, start)?;
    let nested: Vec<Vec<(f64, usize)>> = (0..sim.batch.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            stream_payoffs(
                model,
                policy,
                sim,
                start,
                c * CHUNK,
                ((c + 1) * CHUNK).min(sim.batch),
            )
        })
        .collect::<Result<_>>()?;
    let per_path: Vec<(f64, usize)> = nested.into_iter().flatten().collect();
    let payoffs: Vec<f64> = per_path.iter().map(|p| p.0).collect();
    Ok(PayoffSummary {
        payoff: MeanEstimate::from_samples(&payoffs),
        clamped_steps: per_path.iter().map(|p| p.1).sum(),
        total_steps: sim.batch * sim.steps,
    })
}

/// ΔM_k = v(t_{k+1}, X_{k+1}, I_{k+1}) − v(t_k, X_k, I_k) + (f + λR) Δt − g_{I_k I_{k+1}}.
pub fn martingale_increments(
    path: &EpisodePath,
    value: &dyn ValueFunction,
    model: &SwitchingModel,
) -> Vec<f64> {
    let lambda = model.temperature();
    let mut out = Vec::with_capacity(path.steps());
    let mut v_prev = value.value(path.times[0], path.state(0), path.regimes[0]);
    for k in 0..path.steps() {
        let (i, j) = (path.regimes[k], path.regimes[k + 1]);
        let v_next = value.value(path.times[k + 1], path.state(k + 1), j);
        let g = if i == j { 0.0 } else { model.cost(i, j) };
        out.push(v_next - v_prev + (path.rewards[k] + lambda * path.entropy[k]) * path.dt - g);
        v_prev = v_next;
    }
    out
}

/// Run manifest written next to exported paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub config: SimConfig,
    pub start: Start,
    pub model_hash: String,
    pub clamped_steps: usize,
    pub total_steps: usize,
    pub columns: Vec<String>,
}

/// Writes `path, k, t, x0.., regime, reward` rows (the final state has an
/// empty reward) and a JSON manifest.
pub fn export_paths(
    paths: &[EpisodePath],
    model: &SwitchingModel,
    sim: &SimConfig,
    start: &Start,
    csv_path: &Path,
    manifest_path: &Path,
) -> Result<()> {
    let n = model.state_dim();
    let mut columns = vec!["path".to_string(), "k".into(), "t".into()];
    columns.extend((0..n).map(|d| format!("x{d}")));
    columns.push("regime".into());
    columns.push("reward".into());
    let mut w = csv::Writer::from_writer(BufWriter::new(
        File::create(csv_path).map_err(|e| Error::io(csv_path, e))?,
    ));
    w.write_record(&columns)?;
    for (p, path) in paths.iter().enumerate() {
        for k in 0..=path.steps() {
            let mut rec = vec![p.to_string(), k.to_string(), path.times[k].to_string()];
            rec.extend(path.state(k).iter().map(|v| v.to_string()));
            rec.push(path.regimes[k].to_string());
            rec.push(
                path.rewards
                    .get(k)
                    .map(|r| r.to_string())
                    .unwrap_or_default(),
            );
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;
    let manifest = SimManifest {
        config: sim.clone(),
        start: start.clone(),
        model_hash: model.hash(),
        clamped_steps: paths.iter().map(|p| p.clamps).sum(),
        total_steps: paths.len() * sim.steps,
        columns,
    };
    let mut f = File::create(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    f.write_all(serde_json::to_string_pretty(&manifest)?.as_bytes())
        .map_err(|e| Error::io(manifest_path, e))
}

/// A policy evaluated through any value function (for example a network).
pub fn value_policy(value: Arc<dyn ValueFunction>, model: &SwitchingModel) -> GeneratorPolicy {
    GeneratorPolicy::from_value(value, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FnValue;
    use crate::model::regulator;

    fn toy(m: usize) -> SwitchingModel {
        SwitchingModel::builder(m, 1, 1)
            .drift(|_, _, i, o| o[0] = 0.5 - i as f64)
            .vol(|_, _, _, o| o[0] = 0.3)
            .running_reward(|_, x, _| x[0])
            .terminal_reward(|x| x[0] * x[0])
            .uniform_cost(0.25)
            .temperature(0.1)
            .reward_bound(10.0)
            .build()
            .unwrap()
    }

    #[test]
    fn streamed_payoff_matches_recorded_paths() {
        let model = toy(3);
        let policy = GeneratorPolicy::custom(3, |_, x, i, out| {
            for (j, r) in out.iter_mut().enumerate() {
                *r = if j == i { 0.0 } else { 2.0 + x[0].abs() };
            }
            out[i] = -out.iter().sum::<f64>();
        });
        let sim = SimConfig::new(1.0, 40, 50, 3).unwrap();
        let start = Start::UniformBox {
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        let paths = simulate_batch(&model, &policy, &sim, &start).unwrap();
        let streamed = stream_payoffs(&model, &policy, &sim, &start, 0, 50).unwrap();
        for (p, &(payoff, clamps)) in paths.iter().zip(&streamed) {
            assert_eq!(payoff.to_bits(), p.payoff(&model).to_bits());
            assert_eq!(clamps, p.clamps);
        }
        assert!(paths.iter().any(|p| !p.jumps.is_empty()));
    }

    #[test]
    fn zero_intensity_is_pure_euler_maruyama() {
        let model = toy(2);
        let sim = SimConfig::new(1.0, 20, 3, 7).unwrap();
        let paths = simulate_batch(
            &model,
            &GeneratorPolicy::zero(2),
            &sim,
            &Start::fixed(vec![0.1], 1),
        )
        .unwrap();
        for (idx, p) in paths.iter().enumerate() {
            assert!(p.regimes.iter().all(|&i| i == 1));
            assert!(p.jumps.is_empty());
            assert!(p.entropy.iter().all(|&r| r == 0.0));
            // replay the stream by hand
            let mut rng = path_rng(7, idx as u64);
            let mut x = 0.1;
            for k in 0..20 {
                let _u: f64 = rng.random();
                let w = 0.05_f64.sqrt() * rng.sample::<f64, _>(StandardNormal);
                x += -0.5 * 0.05 + 0.3 * w;
                assert_eq!(p.state(k + 1)[0], x);
            }
        }
        // λR contributes nothing under the zero policy
        let p = &paths[0];
        let manual: f64 = p.rewards.iter().sum::<f64>() * p.dt + p.state(20)[0].powi(2);
        assert!((p.payoff(&model) - manual).abs() < 1e-14);
    }

    #[test]
    fn unit_probability_switches_deterministically() {
        let (j, clamped) = sample_transition(&[-100.0, 100.0, 0.0], 0, 0.01, 0.999_999);
        assert_eq!((j, clamped), (1, false));
        let model = toy(3);
        let policy = GeneratorPolicy::custom(3, |_, _, i, out| {
            out.fill(0.0);
            let j = (i + 1) % 3;
            out[j] = 100.0;
            out[i] = -100.0;
        });
        let sim = SimConfig::new(1.0, 100, 4, 1).unwrap();
        let paths = simulate_batch(&model, &policy, &sim, &Start::fixed(vec![0.0], 0)).unwrap();
        for p in &paths {
            for k in 0..100 {
                assert_eq!(p.regimes[k + 1], (p.regimes[k] + 1) % 3);
            }
            assert_eq!(p.jumps.len(), 100);
            assert_eq!(p.clamps, 0);
        }
    }

    #[test]
    fn clamping_is_counted() {
        let (j, clamped) = sample_transition(&[-300.0, 200.0, 100.0], 0, 0.01, 0.5);
        assert!(clamped);
        assert_eq!(j, 1);
        let (j, _) = sample_transition(&[-300.0, 200.0, 100.0], 0, 0.01, 0.9);
        assert_eq!(j, 2);
    }

    #[test]
    fn determinism_and_seed_dependence() {
        let model = regulator();
        let policy = GeneratorPolicy::custom(2, |_, x, i, out| {
            let r = (x[0] * (1.0 - 2.0 * i as f64)).exp();
            out.fill(r);
            out[i] = -r;
        });
        let sim = SimConfig::new(1.0, 50, 16, 99).unwrap();
        let start = Start::UniformBox {
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        let a = simulate_batch(&model, &policy, &sim, &start).unwrap();
        let b = simulate_batch(&model, &policy, &sim, &start).unwrap();
        assert_eq!(a, b);
        let c = simulate_batch(&model, &policy, &sim.clone().with_seed(100), &start).unwrap();
        assert_ne!(a, c);
        for p in &a {
            for k in 0..50 {
                let jumped = p.regimes[k] != p.regimes[k + 1];
                assert_eq!(jumped, p.jumps.iter().any(|j| j.step == k));
            }
        }
    }

    #[test]
    fn dt_must_divide_horizon() {
        assert!(SimConfig::with_dt(1.0, 0.01, 1, 0).is_ok());
        assert_eq!(SimConfig::with_dt(1.0, 0.02, 1, 0).unwrap().steps, 50);
        assert!(SimConfig::with_dt(1.0, 0.03, 1, 0).is_err());
    }

    #[test]
    fn trivial_martingale_increments() {
        let model = SwitchingModel::builder(2, 1, 1)
            .vol(|_, _, _, o| o[0] = 1.0)
            .uniform_cost(0.5)
            .temperature(1e-300)
            .reward_bound(0.0)
            .build()
            .unwrap();
        let sim = SimConfig::new(1.0, 10, 2, 3).unwrap();
        let paths = simulate_batch(
            &model,
            &GeneratorPolicy::zero(2),
            &sim,
            &Start::fixed(vec![0.0], 0),
        )
        .unwrap();
        let zero = FnValue(|_: f64, _: &[f64], _: usize| 0.0);
        for p in &paths {
            assert!(martingale_increments(p, &zero, &model)
                .iter()
                .all(|d| *d == 0.0));
        }
        // a forced switch with nothing else going on costs exactly g
        let forced = GeneratorPolicy::custom(2, |_, _, i, out| {
            out.fill(10.0);
            out[i] = -10.0;
        });
        let sim = SimConfig::new(1.0, 10, 1, 3).unwrap();
        let p = &simulate_batch(&model, &forced, &sim, &Start::fixed(vec![0.0], 0)).unwrap()[0];
        let inc = martingale_increments(p, &zero, &model);
        for k in 0..10 {
            // λ ≈ 0 so the entropy term vanishes
            assert!((inc[k] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_kernel_rows_are_distributions() {
        let q = [-2.0, 1.5, 0.5, 0.2, -0.2, 0.0, 3.0, 1.0, -4.0];
        let mut out = [0.0; 3];
        exponential_row(&q, 3, 0.1, 0, &mut out);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        // first-order agreement for small Δt
        exponential_row(&q, 3, 1e-4, 2, &mut out);
        assert!((out[0] - 3e-4).abs() < 1e-6);
        let model = toy(3);
        let policy = GeneratorPolicy::custom(3, |_, _, i, out| {
            out.fill(1.0);
            out[i] = -2.0;
        });
        let sim = SimConfig::new(1.0, 10, 8, 5)
            .unwrap()
            .with_kernel(TransitionKernel::MatrixExponential);
        let paths = simulate_batch(&model, &policy, &sim, &Start::fixed(vec![0.0], 2)).unwrap();
        assert!(paths.iter().any(|p| !p.jumps.is_empty()));
    }

    #[test]
    fn export_writes_csv_and_manifest() {
        let model = toy(2);
        let sim = SimConfig::new(1.0, 4, 2, 1).unwrap();
        let start = Start::fixed(vec![0.0], 0);
        let paths = simulate_batch(&model, &GeneratorPolicy::zero(2), &sim, &start).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (c, m) = (dir.path().join("p.csv"), dir.path().join("p.json"));
        export_paths(&paths, &model, &sim, &start, &c, &m).unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert!(text.starts_with("path,k,t,x0,regime,reward\n"));
        assert_eq!(text.lines().count(), 1 + 2 * 5);
        let man: SimManifest = serde_json::from_str(&std::fs::read_to_string(&m).unwrap()).unwrap();
        assert_eq!(man.config, sim);
        assert_eq!(man.model_hash, model.hash());
    }

    #[test]
    fn stratified_uniforms_reproduce_the_kernel() {
        let row = [0.7, -3.2, 2.5];
        let n = 100_000;
        let mut counts = [0usize; 3];
        for k in 0..n {
            counts[sample_transition(&row, 1, 0.1, (k as f64 + 0.5) / n as f64).0] += 1;
        }
        let expected = [0.07, 0.68, 0.25];
        for j in 0..3 {
            assert!((counts[j] as f64 / n as f64 - expected[j]).abs() <= 1.0 / n as f64);
        }
    }

    #[test]
    fn single_step_frequencies_match_the_kernel() {
        // random rows, some of them forcing the clamp; fixed seeds
        let mut gen = path_rng(2024, 0);
        let draws = 40_000;
        for case in 0..8 {
            let i = case % 3;
            let mut row: Vec<f64> = (0..3).map(|_| 40.0 * gen.random::<f64>()).collect();
            row[i] = 0.0;
            let s: f64 = row.iter().sum();
            row[i] = -s;
            let dt = 0.02;
            let mut rng = path_rng(77, case as u64);
            let mut counts = [0usize; 3];
            for _ in 0..draws {
                counts[sample_transition(&row, i, dt, rng.random()).0] += 1;
            }
            let scale = if s * dt > 1.0 { 1.0 / (s * dt) } else { 1.0 };
            for j in 0..3 {
                let p = if j == i {
                    (1.0 - s * dt).max(0.0)
                } else {
                    row[j] * dt * scale
                };
                let sd = (p * (1.0 - p) / draws as f64).sqrt();
                let freq = counts[j] as f64 / draws as f64;
                assert!(
                    (freq - p).abs() <= 3.0 * sd + 1e-12,
                    "case {case} j {j} freq {freq} p {p}"
                );
            }
        }
    }
}
