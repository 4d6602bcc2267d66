//! Parameterized value families v^ξ(t, x, i) = h(x) + (T − t) N_ξ(t, x, i),
//! which meet the terminal condition for every ξ.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Architecture, NetworkParams};
use crate::error::{Error, Result};
use crate::field::ValueFunction;
use crate::intensity::{entropy_of_rates, optimal_rates_into};
use crate::model::{SwitchingModel, TerminalRewardFn};
use crate::sim::EpisodePath;

/// Evaluation points (t_s, x_s, i_s) with states flattened row-major.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Points {
    pub state_dim: usize,
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub regime: Vec<usize>,
}

impl Points {
    pub fn new(state_dim: usize) -> Self {
        Self {
            state_dim,
            ..Self::default()
        }
    }

    pub fn with_capacity(state_dim: usize, cap: usize) -> Self {
        Self {
            state_dim,
            t: Vec::with_capacity(cap),
            x: Vec::with_capacity(cap * state_dim),
            regime: Vec::with_capacity(cap),
        }
    }

    pub fn push(&mut self, t: f64, x: &[f64], regime: usize) {
        debug_assert_eq!(x.len(), self.state_dim);
        self.t.push(t);
        self.x.extend_from_slice(x);
        self.regime.push(regime);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn clear(&mut self) {
        self.t.clear();
        self.x.clear();
        self.regime.clear();
    }

    pub fn state(&self, s: usize) -> &[f64] {
        &self.x[s * self.state_dim..(s + 1) * self.state_dim]
    }
}

/// A differentiable family v^ξ with the terminal condition built in.
pub trait ValueApproximator: Send + Sync {
    fn regimes(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn terminal(&self, x: &[f64]) -> f64;
    /// v^ξ at every point.
    fn evaluate(&self, pts: &Points, out: &mut [f64]);
    /// Adds Σ_s w_s ∂v^ξ(t_s, x_s, i_s)/∂ξ to `grad`.
    fn accumulate_gradient(&self, pts: &Points, weights: &[f64], grad: &mut [f64]);

    fn param_norm(&self) -> f64 {
        self.params().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// How the regime enters the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegimeEncoding {
    /// Inputs (t, x, onehot(i)), one output.
    #[default]
    OneHot,
    /// Inputs (t, x), one output per regime.
    Heads,
}

/// Neural value family.
#[derive(Clone)]
pub struct NeuralValue {
    params: NetworkParams,
    encoding: RegimeEncoding,
    regimes: usize,
    state_dim: usize,
    horizon: f64,
    terminal: TerminalRewardFn,
}

impl std::fmt::Debug for NeuralValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NeuralValue")
            .field("architecture", &self.params.architecture().describe())
            .field("encoding", &self.encoding)
            .field("regimes", &self.regimes)
            .finish()
    }
}

impl NeuralValue {
    pub fn new(
        params: NetworkParams,
        encoding: RegimeEncoding,
        regimes: usize,
        state_dim: usize,
        horizon: f64,
        terminal: TerminalRewardFn,
    ) -> Result<Self> {
        let arch = params.architecture();
        let (inputs, outputs) = Self::io(encoding, regimes, state_dim);
        if arch.inputs != inputs || arch.outputs() != outputs {
            return Err(Error::InvalidConfig(format!(
                "architecture {arch} does not fit {regimes} regimes and state dimension {state_dim} \
                 ({encoding:?} needs {inputs} inputs and {outputs} outputs)"
            )));
        }
        Ok(Self {
            params,
            encoding,
            regimes,
            state_dim,
            horizon,
            terminal,
        })
    }

    fn io(encoding: RegimeEncoding, regimes: usize, state_dim: usize) -> (usize, usize) {
        match encoding {
            RegimeEncoding::OneHot => (1 + state_dim + regimes, 1),
            RegimeEncoding::Heads => (1 + state_dim, regimes),
        }
    }

    /// Architecture with the given hidden layers sized for `model`.
    pub fn architecture_for(
        model: &SwitchingModel,
        hidden: &[(usize, Activation)],
        encoding: RegimeEncoding,
    ) -> Result<Architecture> {
        let (inputs, outputs) = Self::io(encoding, model.regimes(), model.state_dim());
        Architecture::mlp(inputs, hidden, outputs)
    }

    /// Freshly initialized network for `model`.
    pub fn for_model(
        model: &SwitchingModel,
        hidden: &[(usize, Activation)],
        encoding: RegimeEncoding,
        seed: u64,
    ) -> Result<Self> {
        let arch = Self::architecture_for(model, hidden, encoding)?;
        Self::from_params(NetworkParams::init(arch, seed), encoding, model)
    }

    pub fn from_params(
        params: NetworkParams,
        encoding: RegimeEncoding,
        model: &SwitchingModel,
    ) -> Result<Self> {
        Self::new(
            params,
            encoding,
            model.regimes(),
            model.state_dim(),
            model.horizon(),
            model.terminal_reward_fn(),
        )
    }

    pub fn network(&self) -> &NetworkParams {
        &self.params
    }

    pub fn encoding(&self) -> RegimeEncoding {
        self.encoding
    }

    fn features(&self, pts: &Points) -> Array2<f64> {
        let (inputs, _) = Self::io(self.encoding, self.regimes, self.state_dim);
        let n = self.state_dim;
        let mut a = Array2::zeros((pts.len(), inputs));
        for (s, mut row) in a.rows_mut().into_iter().enumerate() {
            row[0] = pts.t[s];
            for d in 0..n {
                row[1 + d] = pts.x[s * n + d];
            }
            if self.encoding == RegimeEncoding::OneHot {
                row[1 + n + pts.regime[s]] = 1.0;
            }
        }
        a
    }

    fn head(&self, regime: usize) -> usize {
        match self.encoding {
            RegimeEncoding::OneHot => 0,
            RegimeEncoding::Heads => regime,
        }
    }
}

impl ValueApproximator for NeuralValue {
    fn regimes(&self) -> usize {
        self.regimes
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn params(&self) -> &[f64] {
        self.params.xi()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.params.xi_mut()
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    fn evaluate(&self, pts: &Points, out: &mut [f64]) {
        if pts.is_empty() {
            return;
        }
        let net = self.params.forward(self.features(pts).view());
        for s in 0..pts.len() {
            let tau = self.horizon - pts.t[s];
            out[s] = (self.terminal)(pts.state(s)) + tau * net[[s, self.head(pts.regime[s])]];
        }
    }

    fn accumulate_gradient(&self, pts: &Points, weights: &[f64], grad: &mut [f64]) {
        if pts.is_empty() {
            return;
        }
        let tape = self.params.forward_tape(self.features(pts).view());
        let mut seed = Array2::zeros((pts.len(), self.params.architecture().outputs()));
        for s in 0..pts.len() {
            seed[[s, self.head(pts.regime[s])]] = weights[s] * (self.horizon - pts.t[s]);
        }
        self.params.backward(&tape, seed.view(), grad);
    }
}

/// v^ξ = h(x) + (T − t)(ξ_0 + Σ_a ξ_{1+a} x_a), shared by all regimes.
#[derive(Clone)]
pub struct LinearValue {
    xi: Vec<f64>,
    regimes: usize,
    horizon: f64,
    terminal: TerminalRewardFn,
}

impl LinearValue {
    pub fn new(
        xi: Vec<f64>,
        regimes: usize,
        horizon: f64,
        terminal: TerminalRewardFn,
    ) -> Result<Self> {
        if xi.len() < 2 {
            return Err(Error::ParamMismatch {
                expected: 2,
                actual: xi.len(),
            });
        }
        Ok(Self {
            xi,
            regimes,
            horizon,
            terminal,
        })
    }

    pub fn for_model(model: &SwitchingModel, xi: Vec<f64>) -> Result<Self> {
        if xi.len() != 1 + model.state_dim() {
            return Err(Error::ParamMismatch {
                expected: 1 + model.state_dim(),
                actual: xi.len(),
            });
        }
        Self::new(
            xi,
            model.regimes(),
            model.horizon(),
            model.terminal_reward_fn(),
        )
    }
}

impl ValueApproximator for LinearValue {
    fn regimes(&self) -> usize {
        self.regimes
    }

    fn state_dim(&self) -> usize {
        self.xi.len() - 1
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn params(&self) -> &[f64] {
        &self.xi
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.xi
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    fn evaluate(&self, pts: &Points, out: &mut [f64]) {
        for (s, o) in out.iter_mut().enumerate().take(pts.len()) {
            let x = pts.state(s);
            let lin = self.xi[0] + x.iter().zip(&self.xi[1..]).map(|(a, b)| a * b).sum::<f64>();
            *o = (self.terminal)(x) + (self.horizon - pts.t[s]) * lin;
        }
    }

    fn accumulate_gradient(&self, pts: &Points, weights: &[f64], grad: &mut [f64]) {
        for s in 0..pts.len() {
            let w = weights[s] * (self.horizon - pts.t[s]);
            grad[0] += w;
            for (g, x) in grad[1..].iter_mut().zip(pts.state(s)) {
                *g += w * x;
            }
        }
    }
}

macro_rules! value_function_via_approximator {
    ($t:ty) => {
        impl ValueFunction for $t {
            fn value(&self, t: f64, x: &[f64], i: usize) -> f64 {
                let mut pts = Points::with_capacity(x.len(), 1);
                pts.push(t, x, i);
                let mut out = [0.0];
                self.evaluate(&pts, &mut out);
                out[0]
            }
        }
    };
}

value_function_via_approximator!(NeuralValue);
value_function_via_approximator!(LinearValue);

/// v^ξ(t, x, i) and ∂v^ξ/∂ξ at a single point.
pub fn value_and_gradient(
    approx: &dyn ValueApproximator,
    t: f64,
    x: &[f64],
    i: usize,
) -> (f64, Vec<f64>) {
    let mut pts = Points::with_capacity(x.len(), 1);
    pts.push(t, x, i);
    let mut v = [0.0];
    approx.evaluate(&pts, &mut v);
    let mut grad = vec![0.0; approx.params().len()];
    approx.accumulate_gradient(&pts, &[1.0], &mut grad);
    (v[0], grad)
}

/// v^ξ(t, x, j) for every regime j.
pub fn regime_values(approx: &dyn ValueApproximator, t: f64, x: &[f64]) -> Vec<f64> {
    let m = approx.regimes();
    let mut pts = Points::with_capacity(x.len(), m);
    for j in 0..m {
        pts.push(t, x, j);
    }
    let mut out = vec![0.0; m];
    approx.evaluate(&pts, &mut out);
    out
}

/// Full m × m generator π^ξ(t, x), row-major, from the exponential formula
/// applied to v^ξ(t, x, ·).
pub fn policy_matrix(
    approx: &dyn ValueApproximator,
    model: &SwitchingModel,
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let m = approx.regimes();
    let v = regime_values(approx, t, x);
    let mut q = vec![0.0; m * m];
    for i in 0..m {
        optimal_rates_into(
            &v,
            i,
            model.costs(),
            model.temperature(),
            model.exponent_cap(),
            &mut q[i * m..(i + 1) * m],
        )?;
    }
    Ok(q)
}

/// Δξ_k = v^ξ(t_{k+1}, X_{k+1}, I_{k+1}) − v^ξ(t_k, X_k, I_k)
/// + (f_k + λ R(π^ξ(t_k, X_k), I_k)) Δt − g_{I_k I_{k+1}}.
pub fn delta_xi(
    approx: &dyn ValueApproximator,
    path: &EpisodePath,
    k: usize,
    model: &SwitchingModel,
) -> Result<f64> {
    let (t0, t1) = (path.times[k], path.times[k + 1]);
    let (i0, i1) = (path.regimes[k], path.regimes[k + 1]);
    let v = regime_values(approx, t0, path.state(k));
    let mut row = vec![0.0; v.len()];
    optimal_rates_into(
        &v,
        i0,
        model.costs(),
        model.temperature(),
        model.exponent_cap(),
        &mut row,
    )?;
    let next = approx.value(t1, path.state(k + 1), i1);
    let r = entropy_of_rates(&row, i0);
    Ok(next - v[i0] + (path.rewards[k] + model.temperature() * r) * path.dt - model.cost(i0, i1))
}

impl ValueFunction for dyn ValueApproximator + '_ {
    fn value(&self, t: f64, x: &[f64], i: usize) -> f64 {
        let mut pts = Points::with_capacity(x.len(), 1);
        pts.push(t, x, i);
        let mut out = [0.0];
        self.evaluate(&pts, &mut out);
        out[0]
    }
}
