//! The learner's only view of the dynamics.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::model::SwitchingModel;
use crate::sim::{euler_step, Start};

/// One-step black box Environment_Δt.
///
/// Contract for any implementation, in-process or served by an external
/// process:
/// - `reset` draws the initial (x, i) of an episode, writing x and returning i;
/// - `step(t, x, i, dt)` moves the state over [t, t + Δt] with regime `i`
///   held fixed (the regime chosen by the learner at the end of the step
///   takes effect from the next step), writes X_{t+Δt} into `x_next` and
///   returns the running reward f(t, x, i) observed at the start of the step;
/// - all randomness comes from `rng`, so a fixed seed replays an episode.
///
/// Drift, volatility and f are never exposed to the learner.
pub trait Environment: Sync {
    fn regimes(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn reset(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) -> usize;
    fn step(
        &self,
        t: f64,
        x: &[f64],
        i: usize,
        dt: f64,
        rng: &mut ChaCha8Rng,
        x_next: &mut [f64],
    ) -> f64;
}

/// Euler–Maruyama environment backed by a [`SwitchingModel`].
#[derive(Clone, Debug)]
pub struct ModelEnvironment<'a> {
    model: &'a SwitchingModel,
    start: Start,
}

impl<'a> ModelEnvironment<'a> {
    pub fn new(model: &'a SwitchingModel, start: Start) -> Result<Self> {
        start.validate(model)?;
        Ok(Self { model, start })
    }

    pub fn start(&self) -> &Start {
        &self.start
    }
}

impl Environment for ModelEnvironment<'_> {
    fn regimes(&self) -> usize {
        self.model.regimes()
    }

    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn reset(&self, rng: &mut ChaCha8Rng, x: &mut [f64]) -> usize {
        self.start.sample(self.model.regimes(), rng, x)
    }

    fn step(
        &self,
        t: f64,
        x: &[f64],
        i: usize,
        dt: f64,
        rng: &mut ChaCha8Rng,
        x_next: &mut [f64],
    ) -> f64 {
        let mut noise = [0.0; 8];
        let d = self.model.noise_dim();
        euler_step(self.model, t, x, i, dt, rng, x_next, &mut noise[..d])
    }
}
