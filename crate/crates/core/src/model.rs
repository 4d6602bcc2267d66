//! Switching problem description: regime-modulated dynamics, rewards,
//! switching costs, temperature and horizon.
//!
//! Model functions are plain callbacks so that arbitrary problems can be
//! assembled in code. The two built-in families (a two-regime bounded
//! regulator and a three-regime put-option selection problem) can also be
//! created from a small JSON descriptor.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `drift(t, x, i, out)` writes μ(t, x, i) into `out` (length n).
pub type DriftFn = Arc<dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync>;
/// `vol(t, x, i, out)` writes σ(t, x, i) row-major into `out` (n × d).
pub type VolFn = Arc<dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync>;
/// `f(t, x, i)`.
pub type RunningRewardFn = Arc<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;
/// `h(x)`.
pub type TerminalRewardFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Default cap on `(V_j - g_ij - V_i) / λ` before an intensity is declared
/// an overflow.
pub const DEFAULT_EXPONENT_CAP: f64 = 700.0;

#[derive(Clone)]
pub struct SwitchingModel {
    regimes: usize,
    state_dim: usize,
    noise_dim: usize,
    drift: DriftFn,
    vol: VolFn,
    running_reward: RunningRewardFn,
    terminal_reward: TerminalRewardFn,
    costs: Vec<f64>,
    temperature: f64,
    horizon: f64,
    reward_bound: f64,
    exponent_cap: f64,
    descriptor: Option<ModelDescriptor>,
    label: String,
}

impl fmt::Debug for SwitchingModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SwitchingModel")
            .field("label", &self.label)
            .field("regimes", &self.regimes)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("costs", &self.costs)
            .field("temperature", &self.temperature)
            .field("horizon", &self.horizon)
            .field("reward_bound", &self.reward_bound)
            .finish()
    }
}

/// Builder for models assembled from callbacks.
pub struct ModelBuilder {
    regimes: usize,
    state_dim: usize,
    noise_dim: usize,
    drift: Option<DriftFn>,
    vol: Option<VolFn>,
    running_reward: Option<RunningRewardFn>,
    terminal_reward: Option<TerminalRewardFn>,
    costs: Option<Vec<f64>>,
    temperature: f64,
    horizon: f64,
    reward_bound: Option<f64>,
    label: String,
}

impl ModelBuilder {
    pub fn drift(
        mut self,
        f: impl Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn vol(
        mut self,
        f: impl Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.vol = Some(Arc::new(f));
        self
    }

    pub fn running_reward(
        mut self,
        f: impl Fn(f64, &[f64], usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.running_reward = Some(Arc::new(f));
        self
    }

    pub fn terminal_reward(mut self, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        self.terminal_reward = Some(Arc::new(f));
        self
    }

    /// Row-major m × m matrix.
    pub fn costs(mut self, costs: Vec<f64>) -> Self {
        self.costs = Some(costs);
        self
    }

    /// Same cost `g` for every switch.
    pub fn uniform_cost(mut self, g: f64) -> Self {
        let m = self.regimes;
        let mut c = vec![g; m * m];
        for i in 0..m {
            c[i * m + i] = 0.0;
        }
        self.costs = Some(c);
        self
    }

    pub fn temperature(mut self, lambda: f64) -> Self {
        self.temperature = lambda;
        self
    }

    pub fn horizon(mut self, t: f64) -> Self {
        self.horizon = t;
        self
    }

    /// Declared K_{f,h} with |f| + |h| <= K_{f,h}.
    pub fn reward_bound(mut self, k: f64) -> Self {
        self.reward_bound = Some(k);
        self
    }

    pub fn label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn build(self) -> Result<SwitchingModel> {
        let n = self.state_dim;
        let zero_drift: DriftFn = Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0));
        let model = SwitchingModel {
            regimes: self.regimes,
            state_dim: n,
            noise_dim: self.noise_dim,
            drift: self.drift.unwrap_or(zero_drift),
            vol: self
                .vol
                .ok_or_else(|| Error::InvalidModel("volatility callback is required".into()))?,
            running_reward: self
                .running_reward
                .unwrap_or_else(|| Arc::new(|_, _, _| 0.0)),
            terminal_reward: self.terminal_reward.unwrap_or_else(|| Arc::new(|_| 0.0)),
            costs: self
                .costs
                .ok_or_else(|| Error::InvalidModel("switching costs are required".into()))?,
            temperature: self.temperature,
            horizon: self.horizon,
            reward_bound: self
                .reward_bound
                .ok_or_else(|| Error::InvalidModel("reward bound K_fh must be declared".into()))?,
            exponent_cap: DEFAULT_EXPONENT_CAP,
            descriptor: None,
            label: self.label,
        };
        model.validate()?;
        Ok(model)
    }
}

impl SwitchingModel {
    /// Starts a builder for `regimes` regimes, state dimension `state_dim`
    /// and Brownian dimension `noise_dim`.
    pub fn builder(regimes: usize, state_dim: usize, noise_dim: usize) -> ModelBuilder {
        ModelBuilder {
            regimes,
            state_dim,
            noise_dim,
            drift: None,
            vol: None,
            running_reward: None,
            terminal_reward: None,
            costs: None,
            temperature: 1.0,
            horizon: 1.0,
            reward_bound: None,
            label: "custom".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let m = self.regimes;
        if m < 2 {
            return Err(Error::InvalidModel(format!(
                "switching needs at least 2 regimes, got {m}"
            )));
        }
        if self.state_dim == 0 || self.noise_dim == 0 {
            return Err(Error::InvalidModel(
                "state and noise dimensions must be positive".into(),
            ));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::InvalidModel(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidModel(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(self.reward_bound >= 0.0) || !self.reward_bound.is_finite() {
            return Err(Error::InvalidModel(format!(
                "reward bound must be finite and non-negative, got {}",
                self.reward_bound
            )));
        }
        validate_costs(&self.costs, m)
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn reward_bound(&self) -> f64 {
        self.reward_bound
    }

    pub fn exponent_cap(&self) -> f64 {
        self.exponent_cap
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// g_ij.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.regimes + j]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], i: usize, out: &mut [f64]) {
        (self.drift)(t, x, i, out)
    }

    #[inline]
    pub fn vol_into(&self, t: f64, x: &[f64], i: usize, out: &mut [f64]) {
        (self.vol)(t, x, i, out)
    }

    #[inline]
    pub fn running_reward(&self, t: f64, x: &[f64], i: usize) -> f64 {
        (self.running_reward)(t, x, i)
    }

    #[inline]
    pub fn terminal_reward(&self, x: &[f64]) -> f64 {
        (self.terminal_reward)(x)
    }

    pub fn terminal_reward_fn(&self) -> TerminalRewardFn {
        self.terminal_reward.clone()
    }

    pub fn descriptor(&self) -> Option<&ModelDescriptor> {
        self.descriptor.as_ref()
    }

    /// Copy with a different temperature.
    pub fn with_temperature(&self, lambda: f64) -> Result<Self> {
        let mut m = self.clone();
        m.temperature = lambda;
        if let Some(d) = m.descriptor.as_mut() {
            d.lambda = Some(lambda);
        }
        m.validate()?;
        Ok(m)
    }

    /// Copy with every switching cost multiplied by `factor`.
    pub fn with_scaled_costs(&self, factor: f64) -> Result<Self> {
        let mut m = self.clone();
        m.costs.iter_mut().for_each(|c| *c *= factor);
        if let Some(d) = m.descriptor.as_mut() {
            d.costs = Some(cost_rows(&m.costs, m.regimes));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn with_running_reward(
        &self,
        f: impl Fn(f64, &[f64], usize) -> f64 + Send + Sync + 'static,
    ) -> Self {
        let mut m = self.clone();
        m.running_reward = Arc::new(f);
        m.descriptor = None;
        m.label = format!("{}+custom-reward", m.label);
        m
    }

    pub fn with_exponent_cap(&self, cap: f64) -> Self {
        let mut m = self.clone();
        m.exponent_cap = cap;
        m
    }

    /// K = K_{f,h} + λ · max_i Σ_{j≠i} exp(-g_ij / λ).
    pub fn bound_constant(&self) -> f64 {
        let lambda = self.temperature;
        let m = self.regimes;
        let sup = (0..m)
            .map(|i| {
                (0..m)
                    .filter(|&j| j != i)
                    .map(|j| (-self.cost(i, j) / lambda).exp())
                    .sum::<f64>()
            })
            .fold(0.0_f64, f64::max);
        self.reward_bound + lambda * sup
    }

    /// A-priori bound K (T - t) + K_{f,h} on |V_i(t, x)|.
    pub fn value_bound(&self, t: f64) -> f64 {
        self.bound_constant() * (self.horizon - t) + self.reward_bound
    }

    /// Dense scan of sup |f| + |h| over a box, used to check the declared
    /// reward bound.
    pub fn scan_reward_bound(
        &self,
        lo: &[f64],
        hi: &[f64],
        per_dim: usize,
        time_samples: usize,
    ) -> f64 {
        let n = self.state_dim;
        assert_eq!(lo.len(), n);
        assert_eq!(hi.len(), n);
        let per_dim = per_dim.max(2);
        let total = per_dim.pow(n as u32);
        let mut x = vec![0.0; n];
        let mut sup = 0.0_f64;
        for flat in 0..total {
            let mut rem = flat;
            for d in 0..n {
                let j = rem % per_dim;
                rem /= per_dim;
                x[d] = lo[d] + (hi[d] - lo[d]) * j as f64 / (per_dim - 1) as f64;
            }
            let h = self.terminal_reward(&x).abs();
            for s in 0..time_samples.max(1) {
                let t = self.horizon * s as f64 / time_samples.max(2).saturating_sub(1) as f64;
                for i in 0..self.regimes {
                    sup = sup.max(self.running_reward(t.min(self.horizon), &x, i).abs() + h);
                }
            }
        }
        sup
    }

    /// Stable identifier of the model: SHA-256 of the resolved JSON
    /// descriptor for built-in families, otherwise of the label and the
    /// numeric parameters.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        match &self.descriptor {
            Some(d) => hasher.update(serde_json::to_string(d).expect("descriptor serializes")),
            None => {
                hasher.update(self.label.as_bytes());
                hasher.update((self.regimes as u64).to_le_bytes());
                hasher.update((self.state_dim as u64).to_le_bytes());
                for c in &self.costs {
                    hasher.update(c.to_le_bytes());
                }
                hasher.update(self.temperature.to_le_bytes());
                hasher.update(self.horizon.to_le_bytes());
                hasher.update(self.reward_bound.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

pub(crate) fn validate_costs(costs: &[f64], m: usize) -> Result<()> {
    if costs.len() != m * m {
        return Err(Error::InvalidModel(format!(
            "cost matrix must be {m}x{m}, got {} entries",
            costs.len()
        )));
    }
    let g = |i: usize, j: usize| costs[i * m + j];
    for i in 0..m {
        if g(i, i) != 0.0 {
            return Err(Error::InvalidModel(format!(
                "g[{i}][{i}] must be 0, got {}",
                g(i, i)
            )));
        }
        for j in 0..m {
            if j != i && !(g(i, j) > 0.0 && g(i, j).is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "g[{i}][{j}] must be positive and finite, got {}",
                    g(i, j)
                )));
            }
        }
    }
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                if i != j && j != k && i != k && !(g(i, k) < g(i, j) + g(j, k)) {
                    return Err(Error::InvalidModel(format!(
                        "triangle condition fails: g[{i}][{k}] = {} >= g[{i}][{j}] + g[{j}][{k}] = {}",
                        g(i, k),
                        g(i, j) + g(j, k)
                    )));
                }
            }
        }
    }
    Ok(())
}

fn cost_rows(costs: &[f64], m: usize) -> Vec<Vec<f64>> {
    costs.chunks(m).map(|r| r.to_vec()).collect()
}

// ---------------------------------------------------------------------------
// Built-in families
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Regulator,
    PutOptions,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Regulator => write!(f, "regulator"),
            Family::PutOptions => write!(f, "put-options"),
        }
    }
}

/// JSON model descriptor. Missing fields take the family defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDescriptor {
    pub model: Family,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default)]
    pub costs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
}

/// Regulator: dX = μ_i dt + σ dW, f = A exp(-w x²) - c, h = A exp(-w x²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegulatorParams {
    pub drift: Vec<f64>,
    pub sigma: f64,
    pub amplitude: f64,
    pub width: f64,
    pub running_offset: f64,
}

impl Default for RegulatorParams {
    fn default() -> Self {
        Self {
            drift: vec![-2.0, 2.0],
            sigma: 0.5,
            amplitude: 2.0,
            width: 2.0,
            running_offset: 0.1,
        }
    }
}

/// Put-option selection: two GBM stocks, regimes {put on A, put on B, savings}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PutOptionParams {
    pub mu_a: f64,
    pub sigma_a: f64,
    pub mu_b: f64,
    pub sigma_b: f64,
    pub rate: f64,
    pub strike: f64,
    /// Correlation of the two Brownian drivers.
    pub rho: f64,
}

impl Default for PutOptionParams {
    fn default() -> Self {
        Self {
            mu_a: 0.1,
            sigma_a: 0.2,
            mu_b: 0.05,
            sigma_b: 0.1,
            rate: 0.05,
            strike: 1.0,
            rho: 1.0,
        }
    }
}

impl Family {
    pub fn default_costs(self) -> Vec<Vec<f64>> {
        match self {
            Family::Regulator => vec![vec![0.0, 0.5], vec![0.5, 0.0]],
            Family::PutOptions => vec![
                vec![0.0, 0.02, 0.01],
                vec![0.02, 0.0, 0.01],
                vec![0.02, 0.02, 0.0],
            ],
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            Family::Regulator => 0.2,
            Family::PutOptions => 0.1,
        }
    }

    pub fn descriptor(self) -> ModelDescriptor {
        ModelDescriptor {
            model: self,
            params: serde_json::Value::Null,
            costs: None,
            lambda: None,
            horizon: None,
        }
    }
}

impl ModelDescriptor {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Fills every defaulted field so that the hash is canonical.
    pub fn resolved(&self) -> Result<ModelDescriptor> {
        let params = match self.model {
            Family::Regulator => serde_json::to_value(self.regulator_params()?)?,
            Family::PutOptions => serde_json::to_value(self.put_params()?)?,
        };
        Ok(ModelDescriptor {
            model: self.model,
            params,
            costs: Some(
                self.costs
                    .clone()
                    .unwrap_or_else(|| self.model.default_costs()),
            ),
            lambda: Some(self.lambda.unwrap_or_else(|| self.model.default_lambda())),
            horizon: Some(self.horizon.unwrap_or(1.0)),
        })
    }

    fn regulator_params(&self) -> Result<RegulatorParams> {
        if self.params.is_null() {
            return Ok(RegulatorParams::default());
        }
        Ok(serde_json::from_value(self.params.clone())?)
    }

    fn put_params(&self) -> Result<PutOptionParams> {
        if self.params.is_null() {
            return Ok(PutOptionParams::default());
        }
        Ok(serde_json::from_value(self.params.clone())?)
    }

    pub fn build(&self) -> Result<SwitchingModel> {
        let d = self.resolved()?;
        let costs_rows = d.costs.clone().expect("resolved");
        let lambda = d.lambda.expect("resolved");
        let horizon = d.horizon.expect("resolved");
        let m = costs_rows.len();
        if costs_rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidModel("cost matrix must be square".into()));
        }
        let costs: Vec<f64> = costs_rows.iter().flatten().copied().collect();
        let mut model = match d.model {
            Family::Regulator => {
                let p = d.regulator_params()?;
                if p.drift.len() != m {
                    return Err(Error::InvalidModel(format!(
                        "regulator has {} drift entries but a {m}x{m} cost matrix",
                        p.drift.len()
                    )));
                }
                regulator_model(&p, costs, lambda, horizon)?
            }
            Family::PutOptions => {
                if m != 3 {
                    return Err(Error::InvalidModel(
                        "put-options needs a 3x3 cost matrix".into(),
                    ));
                }
                put_option_model(&d.put_params()?, costs, lambda, horizon)?
            }
        };
        model.descriptor = Some(d);
        Ok(model)
    }
}

fn regulator_model(
    p: &RegulatorParams,
    costs: Vec<f64>,
    lambda: f64,
    horizon: f64,
) -> Result<SwitchingModel> {
    if !(p.sigma > 0.0) || !(p.width > 0.0) {
        return Err(Error::InvalidModel(
            "regulator sigma and width must be positive".into(),
        ));
    }
    let drift = p.drift.clone();
    let sigma = p.sigma;
    let (a, w, c) = (p.amplitude, p.width, p.running_offset);
    // sup_x |f| + |h| with e = exp(-w x²) in (0, 1] is attained at e = 1 or e -> 0.
    let k_fh = (a.abs() + (a - c).abs()).max(c.abs());
    let m = drift.len();
    let model = SwitchingModel::builder(m, 1, 1)
        .drift(move |_, _, i, out| out[0] = drift[i])
        .vol(move |_, _, _, out| out[0] = sigma)
        .running_reward(move |_, x, _| a * (-w * x[0] * x[0]).exp() - c)
        .terminal_reward(move |x| a * (-w * x[0] * x[0]).exp())
        .costs(costs)
        .temperature(lambda)
        .horizon(horizon)
        .reward_bound(k_fh)
        .label("regulator")
        .build()?;
    debug_assert!(model.scan_reward_bound(&[-5.0], &[5.0], 2001, 1) <= k_fh + 1e-12);
    Ok(model)
}

fn put_option_model(
    p: &PutOptionParams,
    costs: Vec<f64>,
    lambda: f64,
    horizon: f64,
) -> Result<SwitchingModel> {
    if !(-1.0..=1.0).contains(&p.rho) {
        return Err(Error::InvalidModel(format!(
            "rho must lie in [-1, 1], got {}",
            p.rho
        )));
    }
    let p = p.clone();
    let q = p.clone();
    let r = p.clone();
    let rho_perp = (1.0 - p.rho * p.rho).max(0.0).sqrt();
    // States are prices, so s >= 0 and sup |f| = max(strike, r * strike).
    let k_fh = p.strike.abs().max((p.rate * p.strike).abs());
    let model = SwitchingModel::builder(3, 2, 2)
        .drift(move |_, x, _, out| {
            out[0] = p.mu_a * x[0];
            out[1] = p.mu_b * x[1];
        })
        .vol(move |_, x, _, out| {
            out[0] = q.sigma_a * x[0];
            out[1] = 0.0;
            out[2] = q.sigma_b * x[1] * q.rho;
            out[3] = q.sigma_b * x[1] * rho_perp;
        })
        .running_reward(move |_, x, i| match i {
            0 => (r.strike - x[0]).max(0.0),
            1 => (r.strike - x[1]).max(0.0),
            _ => r.rate * r.strike,
        })
        .terminal_reward(|_| 0.0)
        .costs(costs)
        .temperature(lambda)
        .horizon(horizon)
        .reward_bound(k_fh)
        .label("put-options")
        .build()?;
    debug_assert!(model.scan_reward_bound(&[0.0, 0.0], &[3.0, 3.0], 61, 1) <= k_fh + 1e-12);
    Ok(model)
}

/// The two-regime bounded regulator with its default parameters.
pub fn regulator() -> SwitchingModel {
    Family::Regulator
        .descriptor()
        .build()
        .expect("default regulator is valid")
}

/// The three-regime put-option selection problem with its default parameters.
pub fn put_options() -> SwitchingModel {
    Family::PutOptions
        .descriptor()
        .build()
        .expect("default put-options model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regulator_bound_constant() {
        let m = regulator();
        // dense scan of sup |f| + |h| (not the closed form used by the builder)
        let scanned = m.scan_reward_bound(&[-4.0], &[4.0], 80_001, 1);
        assert!((scanned - 3.9).abs() < 1e-9, "scanned {scanned}");
        let expected = scanned + 0.2 * (-2.5_f64).exp();
        assert!((m.bound_constant() - expected).abs() < 1e-9);
        assert!((m.bound_constant() - 3.916417).abs() < 1e-6);
    }

    #[test]
    fn bound_constant_large_temperature_asymptote() {
        let m = regulator().with_temperature(1e3).unwrap();
        let asym = m.reward_bound() + 1e3 * (m.regimes() - 1) as f64;
        assert!((m.bound_constant() - asym).abs() / asym < 0.01);
    }

    #[test]
    fn bound_constant_huge_costs() {
        let m = regulator().with_scaled_costs(2e4).unwrap(); // g = 1e4
        assert!((m.cost(0, 1) - 1e4).abs() < 1e-9);
        assert!((m.bound_constant() - m.reward_bound()).abs() < 1e-12);
    }

    #[test]
    fn value_bound_at_terminal_is_reward_bound() {
        let m = regulator();
        assert_eq!(m.value_bound(m.horizon()), m.reward_bound());
    }

    #[test]
    fn rejects_bad_costs() {
        let base = || {
            SwitchingModel::builder(3, 1, 1)
                .vol(|_, _, _, o| o[0] = 1.0)
                .reward_bound(1.0)
        };
        // diagonal
        let mut c = vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        c[4] = 0.1;
        assert!(base().costs(c).build().is_err());
        // off-diagonal zero
        let c = vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert!(base().costs(c).build().is_err());
        // triangle: g02 = 3 >= g01 + g12 = 2
        let c = vec![0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert!(base().costs(c).build().is_err());
        let c = vec![0.0, 1.0, 1.5, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0];
        assert!(base().costs(c).build().is_ok());
    }

    #[test]
    fn rejects_single_regime_and_bad_scalars() {
        let one = SwitchingModel::builder(1, 1, 1)
            .vol(|_, _, _, o| o[0] = 1.0)
            .costs(vec![0.0])
            .reward_bound(1.0)
            .build();
        assert!(matches!(one, Err(Error::InvalidModel(_))));
        assert!(regulator().with_temperature(0.0).is_err());
        assert!(regulator().with_temperature(-1.0).is_err());
        let t = SwitchingModel::builder(2, 1, 1)
            .vol(|_, _, _, o| o[0] = 1.0)
            .uniform_cost(0.5)
            .reward_bound(1.0)
            .horizon(0.0)
            .build();
        assert!(t.is_err());
    }

    #[test]
    fn descriptor_round_trip_and_hash() {
        let json = r#"{"model":"regulator","params":{"sigma":0.5},"lambda":0.2,"horizon":1.0}"#;
        let d = ModelDescriptor::from_json(json).unwrap();
        let m = d.build().unwrap();
        assert_eq!(m.hash(), regulator().hash());
        let other = regulator().with_temperature(0.1).unwrap();
        assert_ne!(other.hash(), m.hash());
        let bad = r#"{"model":"regulator","params":{"sigmaa":0.5}}"#;
        assert!(ModelDescriptor::from_json(bad).unwrap().build().is_err());
        let unknown = r#"{"model":"regulator","extra":1}"#;
        assert!(ModelDescriptor::from_json(unknown).is_err());
    }

    #[test]
    fn put_model_defaults() {
        let m = put_options();
        assert_eq!(m.regimes(), 3);
        assert_eq!(m.state_dim(), 2);
        assert_eq!(m.cost(2, 0), 0.02);
        assert_eq!(m.cost(0, 2), 0.01);
        assert_eq!(m.temperature(), 0.1);
        let x = [0.5, 1.2];
        assert!((m.running_reward(0.0, &x, 0) - 0.5).abs() < 1e-15);
        assert_eq!(m.running_reward(0.0, &x, 1), 0.0);
        assert!((m.running_reward(0.0, &x, 2) - 0.05).abs() < 1e-15);
        let mut vol = [0.0; 4];
        m.vol_into(0.0, &x, 0, &mut vol);
        // perfectly correlated drivers by default
        assert!((vol[0] - 0.1).abs() < 1e-15 && vol[1] == 0.0);
        assert!((vol[2] - 0.12).abs() < 1e-15 && vol[3] == 0.0);
    }
}
