//! Finite-difference solver for the coupled parabolic systems.
//!
//! Backward Euler in time. Per regime the diffusion/drift operator is
//! implicit (central differences, upwinded where the cell Péclet number
//! exceeds the threshold). The inter-regime coupling is handled by a
//! fixed-point sub-iteration within each step: with `V^s` the current
//! iterate, regime `i` solves
//!
//! ```text
//! (1 + Δt q_i − Δt L_i) V_i = V_i(t_{k+1}) + Δt (f_i + Σ_{j≠i} π_ij (V_j^s − g_ij) + λ R_i)
//! ```
//!
//! where `q_i` is the exit rate. For the exploratory system the rates are
//! recomputed from `V^s` on every sweep. Two-dimensional problems use Lie
//! splitting: the first sweep carries coupling and sources, the second is
//! pure diffusion along the other axis, and the mixed derivative is taken
//! explicitly from the previous time level.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::ValueField;
use crate::grid::SpaceTimeGrid;
use crate::intensity::{entropy_of_rates, optimal_rates_into};
use crate::model::SwitchingModel;
use crate::policy::GeneratorPolicy;
use crate::tridiag::solve_in_place;

/// `b(t, x, i)`.
pub type BoundaryFn = Arc<dyn Fn(f64, &[f64], usize) -> f64 + Send + Sync>;

/// Values imposed on the boundary of the truncated box.
#[derive(Clone, Default)]
pub enum BoundaryRule {
    /// Dirichlet data K (T − t) + h(x), the a-priori upper bound.
    #[default]
    Truncation,
    /// Homogeneous Neumann condition.
    ZeroGradient,
    /// User-supplied Dirichlet data.
    Custom(BoundaryFn),
}

impl fmt::Debug for BoundaryRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Truncation => write!(f, "Truncation"),
            Self::ZeroGradient => write!(f, "ZeroGradient"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl BoundaryRule {
    pub fn custom(f: impl Fn(f64, &[f64], usize) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom(Arc::new(f))
    }

    fn is_dirichlet(&self) -> bool {
        !matches!(self, Self::ZeroGradient)
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Stop the coupling sub-iteration once the sup-norm change drops below this.
    pub sub_tolerance: f64,
    pub max_sub_iterations: usize,
    pub boundary: BoundaryRule,
    /// Drift is upwinded where |μ| Δx / a exceeds this.
    pub peclet_threshold: f64,
    /// Exploratory solves abort when |V| exceeds the a-priori bound by more
    /// than this. `None` disables the check.
    pub bound_tolerance: Option<f64>,
    /// Reject the problem when the smallest eigenvalue of σσᵀ on the grid is
    /// below this. `None` only records it.
    pub min_ellipticity: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            sub_tolerance: 1e-10,
            max_sub_iterations: 50,
            boundary: BoundaryRule::Truncation,
            peclet_threshold: 2.0,
            bound_tolerance: Some(1e-6),
            min_ellipticity: None,
        }
    }
}

impl SolverOptions {
    pub fn with_boundary(mut self, boundary: BoundaryRule) -> Self {
        self.boundary = boundary;
        self
    }
}

/// Which coupling the solver uses.
#[derive(Clone, Copy, Debug)]
pub enum Coupling<'a> {
    /// Linear system under a fixed feedback policy.
    Policy(&'a GeneratorPolicy),
    /// The reduced exploratory system (rates chosen optimally).
    Optimal,
}

/// Sub-iteration counters of one solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub total_sweeps: usize,
    pub max_sweeps: usize,
}

/// Value of a fixed feedback policy.
pub fn solve_fixed_policy(
    model: &SwitchingModel,
    policy: &GeneratorPolicy,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<ValueField> {
    solve(model, grid, Coupling::Policy(policy), opts).map(|(v, _)| v)
}

/// Exploratory value functions V^λ.
pub fn solve_exploratory_hjb(
    model: &SwitchingModel,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<ValueField> {
    solve(model, grid, Coupling::Optimal, opts).map(|(v, _)| v)
}

/// Backward solve with either coupling, returning sub-iteration counters.
pub fn solve(
    model: &SwitchingModel,
    grid: &SpaceTimeGrid,
    coupling: Coupling<'_>,
    opts: &SolverOptions,
) -> Result<(ValueField, SolveStats)> {
    let mut st = Stepper::new(model, grid, coupling, opts)?;
    let m = model.regimes();
    let n = grid.node_count();
    let kk = grid.time_steps();
    let mut field = ValueField::zeros(grid.clone(), m);
    {
        let last = field.time_slice_mut(kk);
        for i in 0..m {
            for node in 0..n {
                last[i * n + node] = model.terminal_reward(st.x(node));
            }
        }
    }
    let check_bound = matches!(coupling, Coupling::Optimal)
        .then_some(opts.bound_tolerance)
        .flatten();
    let mut stats = SolveStats::default();
    let mut prev = vec![0.0; m * n];
    let mut cur = vec![0.0; m * n];
    let mut next = vec![0.0; m * n];
    for k in (0..kk).rev() {
        prev.copy_from_slice(field.time_slice(k + 1));
        st.prepare(k, &prev)?;
        cur.copy_from_slice(&prev);
        let mut sweeps = 0;
        loop {
            st.sweep(&prev, &cur, &mut next)?;
            sweeps += 1;
            let change = sup_diff(&cur, &next);
            std::mem::swap(&mut cur, &mut next);
            if !change.is_finite() {
                return Err(non_finite(k, &cur, n));
            }
            if change < opts.sub_tolerance {
                break;
            }
            if sweeps >= opts.max_sub_iterations {
                return Err(Error::SubIteration {
                    time_index: k,
                    residual: change,
                    iterations: sweeps,
                });
            }
        }
        stats.total_sweeps += sweeps;
        stats.max_sweeps = stats.max_sweeps.max(sweeps);
        if let Some(tol) = check_bound {
            let bound = model.value_bound(grid.time(k));
            if let Some(idx) = cur.iter().position(|v| v.abs() > bound + tol) {
                return Err(Error::BoundViolation {
                    time_index: k,
                    regime: idx / n,
                    node: idx % n,
                    value: cur[idx].abs(),
                    bound,
                });
            }
        }
        field.time_slice_mut(k).copy_from_slice(&cur);
    }
    Ok((field, stats))
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0_f64;
    for (x, y) in a.iter().zip(b) {
        let d = (x - y).abs();
        if d.is_nan() {
            return f64::NAN;
        }
        s = s.max(d);
    }
    s
}

fn non_finite(k: usize, v: &[f64], n: usize) -> Error {
    let idx = v.iter().position(|x| !x.is_finite()).unwrap_or(0);
    Error::NonFinite {
        time_index: k,
        regime: idx / n,
        node: idx % n,
    }
}

/// Parts of the discrete residual of a field.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Residual {
    /// sup |Φ(V) − V| over interior nodes, Φ being one coupling sweep of
    /// the scheme with V itself as the iterate.
    pub interior: f64,
    /// Same over boundary nodes (mismatch with the boundary rule).
    pub boundary: f64,
    /// sup |V(T, x) − h(x)|.
    pub terminal: f64,
}

impl Residual {
    pub fn total(&self) -> f64 {
        self.interior.max(self.boundary).max(self.terminal)
    }
}

/// Residual of `field` in the discrete scheme for the given coupling.
pub fn residual_norm(
    field: &ValueField,
    model: &SwitchingModel,
    coupling: Coupling<'_>,
    opts: &SolverOptions,
) -> Result<Residual> {
    let grid = field.grid();
    let mut st = Stepper::new(model, grid, coupling, opts)?;
    let m = model.regimes();
    let n = grid.node_count();
    let kk = grid.time_steps();
    let mut res = Residual {
        terminal: field.terminal_error(model),
        ..Residual::default()
    };
    let mut out = vec![0.0; m * n];
    for k in 0..kk {
        let prev = field.time_slice(k + 1);
        let cur = field.time_slice(k);
        st.prepare(k, prev)?;
        st.sweep(prev, cur, &mut out)?;
        for idx in 0..m * n {
            let d = (out[idx] - cur[idx]).abs();
            if st.boundary[idx % n] {
                res.boundary = res.boundary.max(d);
            } else {
                res.interior = res.interior.max(d);
            }
        }
    }
    Ok(res)
}

/// Smallest eigenvalue of σσᵀ over the grid and where it occurs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EllipticityReport {
    pub min_eigenvalue: f64,
    pub regime: usize,
    pub node: usize,
    pub time_index: usize,
}

/// Scans σσᵀ at the first and last time level of every node.
pub fn ellipticity_preflight(model: &SwitchingModel, grid: &SpaceTimeGrid) -> EllipticityReport {
    let n = model.state_dim();
    let d = model.noise_dim();
    let mut sig = vec![0.0; n * d];
    let mut x = vec![0.0; grid.dim()];
    let mut rep = EllipticityReport {
        min_eigenvalue: f64::INFINITY,
        regime: 0,
        node: 0,
        time_index: 0,
    };
    for k in [0, grid.time_steps()] {
        let t = grid.time(k);
        for node in 0..grid.node_count() {
            grid.coords_into(node, &mut x);
            for i in 0..model.regimes() {
                model.vol_into(t, &x, i, &mut sig);
                let e = min_eig_sst(&sig, n, d);
                if e < rep.min_eigenvalue {
                    rep = EllipticityReport {
                        min_eigenvalue: e,
                        regime: i,
                        node,
                        time_index: k,
                    };
                }
            }
        }
    }
    rep
}

fn min_eig_sst(sig: &[f64], n: usize, d: usize) -> f64 {
    let s = |r: usize, c: usize| -> f64 { (0..d).map(|l| sig[r * d + l] * sig[c * d + l]).sum() };
    if n == 1 {
        return s(0, 0);
    }
    let (a, b, c) = (s(0, 0), s(0, 1), s(1, 1));
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    mean - rad
}

/// Outcome of re-solving on a box twice as wide.
#[derive(Clone, Debug)]
pub struct BoxCheck {
    pub widened: SpaceTimeGrid,
    /// sup over regimes, time levels and the checked nodes of the change.
    pub sup_change: f64,
}

/// Solves on `grid` and on the box doubled about its centre (same
/// spacing) and compares at nodes of the original grid at least `layers`
/// nodes from its boundary.
pub fn box_doubling_check(
    model: &SwitchingModel,
    grid: &SpaceTimeGrid,
    coupling: Coupling<'_>,
    opts: &SolverOptions,
    layers: usize,
) -> Result<BoxCheck> {
    let (base, _) = solve(model, grid, coupling, opts)?;
    let widened = grid.widened(2.0)?;
    let (wide, _) = solve(model, &widened, coupling, opts)?;
    let mut sup = 0.0_f64;
    let mut x = vec![0.0; grid.dim()];
    for k in 0..=grid.time_steps() {
        for node in (0..grid.node_count()).filter(|&nd| grid.is_interior(nd, layers)) {
            grid.coords_into(node, &mut x);
            for i in 0..model.regimes() {
                let d = (base.get(k, i, node) - wide.interpolate_at_time(k, &x, i)).abs();
                sup = sup.max(d);
            }
        }
    }
    Ok(BoxCheck {
        widened,
        sup_change: sup,
    })
}

/// Per-step assembly state.
pub(crate) struct Stepper<'a> {
    model: &'a SwitchingModel,
    grid: &'a SpaceTimeGrid,
    coupling: Coupling<'a>,
    opts: &'a SolverOptions,
    m: usize,
    n: usize,
    dim: usize,
    dt: f64,
    coords: Vec<f64>,
    pub(crate) boundary: Vec<bool>,
    /// Slope K of the truncation boundary data.
    pub(crate) truncation_constant: f64,
    /// −Δt c₋ and −Δt c₊ per (regime, axis, node).
    lo: Vec<f64>,
    up: Vec<f64>,
    /// f plus the explicit mixed-derivative term, per (regime, node).
    src: Vec<f64>,
    /// Dirichlet data per (regime, node).
    bval: Vec<f64>,
    /// Generator rows per (regime, node).
    rates: Vec<f64>,
    exit: Vec<f64>,
    entropy: Vec<f64>,
    mid: Vec<f64>,
    line: LineBuf,
    mu: Vec<f64>,
    sig: Vec<f64>,
}

#[derive(Default)]
struct LineBuf {
    lo: Vec<f64>,
    di: Vec<f64>,
    up: Vec<f64>,
    rhs: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub(crate) fn new(
        model: &'a SwitchingModel,
        grid: &'a SpaceTimeGrid,
        coupling: Coupling<'a>,
        opts: &'a SolverOptions,
    ) -> Result<Self> {
        if model.state_dim() != grid.dim() {
            return Err(Error::InvalidGrid(format!(
                "model state dimension {} does not match grid dimension {}",
                model.state_dim(),
                grid.dim()
            )));
        }
        if (model.horizon() - grid.horizon()).abs() > 1e-12 * model.horizon() {
            return Err(Error::InvalidGrid(format!(
                "grid horizon {} differs from model horizon {}",
                grid.horizon(),
                model.horizon()
            )));
        }
        if let Coupling::Policy(p) = coupling {
            if p.regimes() != model.regimes() {
                return Err(Error::InvalidConfig(format!(
                    "policy has {} regimes, model has {}",
                    p.regimes(),
                    model.regimes()
                )));
            }
        }
        if !(opts.sub_tolerance > 0.0) || opts.max_sub_iterations == 0 {
            return Err(Error::InvalidConfig(
                "sub-iteration tolerance and cap must be positive".into(),
            ));
        }
        if let Some(floor) = opts.min_ellipticity {
            let e = ellipticity_preflight(model, grid);
            if e.min_eigenvalue < floor {
                return Err(Error::InvalidModel(format!(
                    "ellipticity preflight: smallest eigenvalue of σσᵀ is {:.3e} < {floor:.3e} (regime {}, node {})",
                    e.min_eigenvalue, e.regime, e.node
                )));
            }
        }
        let m = model.regimes();
        let n = grid.node_count();
        let dim = grid.dim();
        let mut coords = vec![0.0; n * dim];
        for node in 0..n {
            grid.coords_into(node, &mut coords[node * dim..(node + 1) * dim]);
        }
        let longest = grid.axes().iter().map(|a| a.nodes).max().unwrap_or(0);
        let line = LineBuf {
            lo: vec![0.0; longest],
            di: vec![0.0; longest],
            up: vec![0.0; longest],
            rhs: vec![0.0; longest],
            scratch: vec![0.0; longest],
        };
        Ok(Self {
            model,
            grid,
            coupling,
            opts,
            m,
            n,
            dim,
            dt: grid.dt(),
            coords,
            boundary: (0..n).map(|nd| grid.is_boundary(nd)).collect(),
            truncation_constant: model.bound_constant(),
            lo: vec![0.0; m * dim * n],
            up: vec![0.0; m * dim * n],
            src: vec![0.0; m * n],
            bval: vec![0.0; m * n],
            rates: vec![0.0; m * n * m],
            exit: vec![0.0; m * n],
            entropy: vec![0.0; m * n],
            mid: vec![0.0; m * n],
            line,
            mu: vec![0.0; model.state_dim()],
            sig: vec![0.0; model.state_dim() * model.noise_dim()],
        })
    }

    #[inline]
    pub(crate) fn x(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    /// Coefficients, sources and boundary data at time index `k`.
    pub(crate) fn prepare(&mut self, k: usize, prev: &[f64]) -> Result<()> {
        let (m, n, dim, dt) = (self.m, self.n, self.dim, self.dt);
        let t = self.grid.time(k);
        let nd = self.model.noise_dim();
        let h: Vec<f64> = self.grid.axes().iter().map(|a| a.spacing()).collect();
        let k_bound = self.truncation_constant;
        for i in 0..m {
            for node in 0..n {
                let x = &self.coords[node * dim..(node + 1) * dim];
                self.model.drift_into(t, x, i, &mut self.mu);
                self.model.vol_into(t, x, i, &mut self.sig);
                let a = |r: usize, c: usize| -> f64 {
                    0.5 * (0..nd)
                        .map(|l| self.sig[r * nd + l] * self.sig[c * nd + l])
                        .sum::<f64>()
                };
                for d in 0..dim {
                    let add = a(d, d);
                    let hd = h[d];
                    let diff = add / (hd * hd);
                    let mu = self.mu[d];
                    let (cm, cp) = if add <= 0.0 || mu.abs() * hd > self.opts.peclet_threshold * add
                    {
                        (diff + (-mu).max(0.0) / hd, diff + mu.max(0.0) / hd)
                    } else {
                        (diff - 0.5 * mu / hd, diff + 0.5 * mu / hd)
                    };
                    let o = (i * dim + d) * n + node;
                    self.lo[o] = -dt * cm;
                    self.up[o] = -dt * cp;
                }
                let mut s = self.model.running_reward(t, x, i);
                if dim == 2 && !self.boundary[node] {
                    let n1 = self.grid.axis(1).nodes;
                    let p = &prev[i * n..(i + 1) * n];
                    let vxy = (p[node + n1 + 1] - p[node + n1 - 1] - p[node - n1 + 1]
                        + p[node - n1 - 1])
                        / (4.0 * h[0] * h[1]);
                    s += 2.0 * a(0, 1) * vxy;
                }
                self.src[i * n + node] = s;
                if self.boundary[node] {
                    self.bval[i * n + node] = match &self.opts.boundary {
                        BoundaryRule::Truncation => {
                            k_bound * (self.model.horizon() - t) + self.model.terminal_reward(x)
                        }
                        BoundaryRule::Custom(b) => b(t, x, i),
                        BoundaryRule::ZeroGradient => 0.0,
                    };
                }
            }
        }
        if let Coupling::Policy(policy) = self.coupling {
            for i in 0..m {
                for node in 0..n {
                    let o = (i * n + node) * m;
                    let x = &self.coords[node * dim..(node + 1) * dim];
                    policy.row_at_node(self.grid, k, node, x, i, &mut self.rates[o..o + m])?;
                    let row = &self.rates[o..o + m];
                    self.exit[i * n + node] = -row[i];
                    self.entropy[i * n + node] = entropy_of_rates(row, i);
                }
            }
        }
        Ok(())
    }

    /// One coupling sweep: `out = Φ(cur)` given the previous time level.
    pub(crate) fn sweep(&mut self, prev: &[f64], cur: &[f64], out: &mut [f64]) -> Result<()> {
        let (m, n, dim, dt) = (self.m, self.n, self.dim, self.dt);
        let lambda = self.model.temperature();
        let costs = self.model.costs();
        if let Coupling::Optimal = self.coupling {
            let mut v = [0.0; 16];
            for node in 0..n {
                for j in 0..m {
                    v[j] = cur[j * n + node];
                }
                for i in 0..m {
                    let o = (i * n + node) * m;
                    optimal_rates_into(
                        &v[..m],
                        i,
                        costs,
                        lambda,
                        self.model.exponent_cap(),
                        &mut self.rates[o..o + m],
                    )?;
                    let row = &self.rates[o..o + m];
                    self.exit[i * n + node] = -row[i];
                    self.entropy[i * n + node] = entropy_of_rates(row, i);
                }
            }
        }
        // right-hand sides of the coupled sweep
        for i in 0..m {
            for node in 0..n {
                let o = (i * n + node) * m;
                let mut c = 0.0;
                for j in 0..m {
                    if j != i {
                        c += self.rates[o + j] * (cur[j * n + node] - costs[i * m + j]);
                    }
                }
                let e = if self.entropy[i * n + node] == 0.0 {
                    0.0
                } else {
                    lambda * self.entropy[i * n + node]
                };
                self.mid[i * n + node] = prev[i * n + node] + dt * (self.src[i * n + node] + c + e);
            }
        }
        let dirichlet = self.opts.boundary.is_dirichlet();
        for i in 0..m {
            let rhs = self.mid[i * n..(i + 1) * n].to_vec();
            if dim == 1 {
                self.solve_line(i, 0, 0, 1, &rhs, &mut out[i * n..(i + 1) * n], true);
            } else {
                let n0 = self.grid.axis(0).nodes;
                let n1 = self.grid.axis(1).nodes;
                let mut half = cur[i * n..(i + 1) * n].to_vec();
                for j1 in 1..n1 - 1 {
                    self.solve_line(i, 0, j1, n1, &rhs, &mut half, true);
                }
                let o = &mut out[i * n..(i + 1) * n];
                o.copy_from_slice(&half);
                let rows = if dirichlet { 1..n0 - 1 } else { 0..n0 };
                for j0 in rows {
                    self.solve_line(i, 1, j0 * n1, 1, &half, o, false);
                }
            }
            if dirichlet {
                for node in 0..n {
                    if self.boundary[node] {
                        out[i * n + node] = self.bval[i * n + node];
                    }
                }
            }
        }
        Ok(())
    }

    /// Solves one grid line along axis `d` starting at `start` with node
    /// stride `stride`. `with_exit` adds the Δt q_i term to the diagonal.
    #[allow(clippy::too_many_arguments)]
    fn solve_line(
        &mut self,
        i: usize,
        d: usize,
        start: usize,
        stride: usize,
        rhs: &[f64],
        out: &mut [f64],
        with_exit: bool,
    ) {
        let len = self.grid.axis(d).nodes;
        let n = self.n;
        let dirichlet = self.opts.boundary.is_dirichlet();
        let lb = &mut self.line;
        for p in 0..len {
            let node = start + p * stride;
            if p == 0 || p + 1 == len {
                lb.lo[p] = 0.0;
                lb.up[p] = 0.0;
                lb.di[p] = 1.0;
                if dirichlet {
                    lb.rhs[p] = self.bval[i * n + node];
                } else {
                    lb.rhs[p] = 0.0;
                    if p == 0 {
                        lb.up[p] = -1.0;
                    } else {
                        lb.lo[p] = -1.0;
                    }
                }
                continue;
            }
            let o = (i * self.dim + d) * n + node;
            let (l, u) = (self.lo[o], self.up[o]);
            lb.lo[p] = l;
            lb.up[p] = u;
            let q = if with_exit {
                self.dt * self.exit[i * n + node]
            } else {
                0.0
            };
            lb.di[p] = 1.0 - l - u + q;
            lb.rhs[p] = rhs[node];
        }
        solve_in_place(
            &lb.lo[..len],
            &lb.di[..len],
            &lb.up[..len],
            &mut lb.rhs[..len],
            &mut lb.scratch[..len],
        );
        for p in 0..len {
            out[start + p * stride] = lb.rhs[p];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::regulator;

    fn symmetric(m: usize, g: f64, lambda: f64) -> SwitchingModel {
        SwitchingModel::builder(m, 1, 1)
            .drift(|_, x, i, o| o[0] = 0.3 * (i as f64 - 0.5) - 0.2 * x[0])
            .vol(|_, _, _, o| o[0] = 0.5)
            .uniform_cost(g)
            .temperature(lambda)
            .reward_bound(0.0)
            .build()
            .unwrap()
    }

    #[test]
    fn symmetric_case_closed_form() {
        let model = symmetric(2, 0.5, 0.2);
        let grid = SpaceTimeGrid::uniform_1d(1.0, 200, -3.0, 3.0, 121).unwrap();
        let v = solve_exploratory_hjb(&model, &grid, &SolverOptions::default()).unwrap();
        let c = 0.2 * (-2.5_f64).exp();
        let mut err = 0.0_f64;
        for k in 0..=200 {
            for i in 0..2 {
                for node in 0..121 {
                    err = err.max((v.get(k, i, node) - c * (1.0 - grid.time(k))).abs());
                }
            }
        }
        assert!(err < 1e-9, "err {err}");
        assert!((v.get(0, 0, 60) - 0.016417).abs() < 1e-6);

        // the three-regime version picks up the factor m − 1
        let model = symmetric(3, 0.5, 0.2);
        let v = solve_exploratory_hjb(&model, &grid, &SolverOptions::default()).unwrap();
        assert!((v.get(0, 2, 30) - 2.0 * c).abs() < 1e-9);
    }

    #[test]
    fn zero_policy_keeps_harmonic_data() {
        let model = SwitchingModel::builder(2, 1, 1)
            .vol(|_, _, _, o| o[0] = 0.7)
            .terminal_reward(|x| x[0])
            .uniform_cost(0.5)
            .reward_bound(3.0)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 50, -3.0, 3.0, 61).unwrap();
        let opts = SolverOptions::default().with_boundary(BoundaryRule::custom(|_, x, _| x[0]));
        let v = solve_fixed_policy(&model, &GeneratorPolicy::zero(2), &grid, &opts).unwrap();
        for k in 0..=50 {
            for node in 0..61 {
                let x = grid.coords(node)[0];
                assert!((v.get(k, 1, node) - x).abs() < 1e-12);
            }
        }
    }

    /// V = e^{−σ²(T−t)/2} cos x + λ(m−1)e^{−g/λ}(T−t) for driftless symmetric dynamics.
    fn manufactured(nodes: usize, steps: usize) -> f64 {
        let sigma = 1.0;
        let (lambda, g) = (0.2_f64, 0.5_f64);
        let c = lambda * (-g / lambda).exp();
        let exact = move |t: f64, x: &[f64]| {
            (-(0.5 * sigma * sigma) * (1.0 - t)).exp() * x[0].cos() + c * (1.0 - t)
        };
        let model = SwitchingModel::builder(2, 1, 1)
            .vol(move |_, _, _, o| o[0] = sigma)
            .terminal_reward(|x| x[0].cos())
            .uniform_cost(g)
            .temperature(lambda)
            .reward_bound(1.0)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::uniform_1d(1.0, steps, -2.0, 2.0, nodes).unwrap();
        let opts = SolverOptions::default()
            .with_boundary(BoundaryRule::custom(move |t, x, _| exact(t, x)));
        let v = solve_exploratory_hjb(&model, &grid, &opts).unwrap();
        let mut err = 0.0_f64;
        for node in 0..nodes {
            err = err.max((v.get(0, 0, node) - exact(0.0, &grid.coords(node))).abs());
        }
        err
    }

    #[test]
    fn refinement_halves_the_error() {
        let e1 = manufactured(21, 10);
        let e2 = manufactured(41, 20);
        let e3 = manufactured(81, 40);
        assert!(e1 / e2 >= 1.8, "{e1} {e2}");
        assert!(e2 / e3 >= 1.8, "{e2} {e3}");
    }

    #[test]
    fn comparison_in_running_reward() {
        let base = regulator();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 100, -3.0, 3.0, 121).unwrap();
        let lower = base.with_running_reward(|_, x, _| 2.0 * (-2.0 * x[0] * x[0]).exp() - 0.3);
        let opts = SolverOptions::default();
        let v1 = solve_exploratory_hjb(&lower, &grid, &opts).unwrap();
        let v2 = solve_exploratory_hjb(&base, &grid, &opts).unwrap();
        assert!(v2.min_difference(&v1) >= -1e-8);
    }

    #[test]
    fn regulator_solution_properties() {
        let model = regulator();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 200, -3.0, 3.0, 121).unwrap();
        let opts = SolverOptions::default();
        let v = solve_exploratory_hjb(&model, &grid, &opts).unwrap();
        assert_eq!(v.terminal_error(&model), 0.0);
        assert!(v.bound_excess(&model) <= 1e-6);
        let r = residual_norm(&v, &model, Coupling::Optimal, &opts).unwrap();
        assert!(r.total() < 1e-8, "{r:?}");

        let mut shifted = v.clone();
        for k in 0..200 {
            shifted.time_slice_mut(k).iter_mut().for_each(|x| *x += 0.1);
        }
        let r = residual_norm(&shifted, &model, Coupling::Optimal, &opts).unwrap();
        assert!(r.interior > 0.0);
        assert_eq!(r.terminal, 0.0);
    }

    #[test]
    fn fixed_policy_reproduces_exploratory_solution() {
        let model = regulator();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 100, -3.0, 3.0, 121).unwrap();
        let opts = SolverOptions::default();
        let v = solve_exploratory_hjb(&model, &grid, &opts).unwrap();
        let p = GeneratorPolicy::derived(v.clone(), &model);
        let w = solve_fixed_policy(&model, &p, &grid, &opts).unwrap();
        assert!(w.sup_distance(&v) < 1e-6);
        let r = residual_norm(&v, &model, Coupling::Policy(&p), &opts).unwrap();
        assert!(r.total() < 1e-8);
    }

    #[test]
    fn sub_iteration_cap_is_reported() {
        let model = regulator();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 10, -3.0, 3.0, 61).unwrap();
        let opts = SolverOptions {
            max_sub_iterations: 1,
            ..SolverOptions::default()
        };
        match solve_exploratory_hjb(&model, &grid, &opts) {
            Err(Error::SubIteration { time_index, .. }) => assert_eq!(time_index, 9),
            other => panic!("expected sub-iteration error, got {other:?}"),
        }
    }

    #[test]
    fn bound_violation_is_detected() {
        // a declared reward bound that is far too small
        let model = SwitchingModel::builder(2, 1, 1)
            .vol(|_, _, _, o| o[0] = 0.5)
            .running_reward(|_, _, _| 5.0)
            .uniform_cost(0.5)
            .temperature(0.2)
            .reward_bound(0.1)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 20, -1.0, 1.0, 21).unwrap();
        let opts = SolverOptions::default().with_boundary(BoundaryRule::ZeroGradient);
        assert!(matches!(
            solve_exploratory_hjb(&model, &grid, &opts),
            Err(Error::BoundViolation { .. })
        ));
    }

    #[test]
    fn nan_is_located() {
        let model = SwitchingModel::builder(2, 1, 1)
            .vol(|_, _, _, o| o[0] = 0.5)
            .running_reward(|t, x, _| {
                if t < 0.5 && x[0].abs() < 0.05 {
                    f64::NAN
                } else {
                    0.0
                }
            })
            .uniform_cost(0.5)
            .reward_bound(1.0)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 10, -1.0, 1.0, 21).unwrap();
        match solve_fixed_policy(
            &model,
            &GeneratorPolicy::zero(2),
            &grid,
            &SolverOptions::default(),
        ) {
            Err(Error::NonFinite { time_index, .. }) => assert_eq!(time_index, 4),
            other => panic!("expected NaN error, got {other:?}"),
        }
    }

    #[test]
    fn ellipticity_preflight_finds_degenerate_points() {
        let model = crate::model::put_options();
        let grid = SpaceTimeGrid::uniform_2d(1.0, 5, 0.0, 3.0, 11).unwrap();
        let e = ellipticity_preflight(&model, &grid);
        assert!(e.min_eigenvalue.abs() < 1e-12);
        let opts = SolverOptions {
            min_ellipticity: Some(1e-3),
            ..SolverOptions::default()
        };
        assert!(solve_exploratory_hjb(&model, &grid, &opts).is_err());
        let r = ellipticity_preflight(
            &regulator(),
            &SpaceTimeGrid::uniform_1d(1.0, 5, -1.0, 1.0, 5).unwrap(),
        );
        assert!((r.min_eigenvalue - 0.25).abs() < 1e-15);
    }

    #[test]
    fn two_dimensional_heat_with_symmetric_coupling() {
        // isotropic driftless diffusion, V = e^{−σ²(T−t)} cos x cos y + c (T − t)
        let sigma = 0.8;
        let (lambda, g) = (0.2_f64, 0.5_f64);
        let c = lambda * (-g / lambda).exp();
        let exact = move |t: f64, x: &[f64]| {
            (-(sigma * sigma) * (1.0 - t)).exp() * x[0].cos() * x[1].cos() + c * (1.0 - t)
        };
        let model = SwitchingModel::builder(2, 2, 2)
            .vol(move |_, _, _, o| {
                o.fill(0.0);
                o[0] = sigma;
                o[3] = sigma;
            })
            .terminal_reward(|x| x[0].cos() * x[1].cos())
            .uniform_cost(g)
            .temperature(lambda)
            .reward_bound(1.0)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::uniform_2d(1.0, 40, -1.5, 1.5, 31).unwrap();
        let opts = SolverOptions::default()
            .with_boundary(BoundaryRule::custom(move |t, x, _| exact(t, x)));
        let v = solve_exploratory_hjb(&model, &grid, &opts).unwrap();
        let node = grid.flat(&[15, 15]);
        assert!((v.get(0, 1, node) - exact(0.0, &[0.0, 0.0])).abs() < 1e-2);
    }
}
