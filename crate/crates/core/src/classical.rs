//! Classical (λ = 0) switching problem: the variational-inequality system
//! `min{−∂_t V_i − L V_i − f_i, V_i − max_{j≠i}(V_j − g_ij)} = 0`, solved by
//! an implicit diffusion step followed by obstacle projection.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ValueField;
use crate::grid::SpaceTimeGrid;
use crate::model::SwitchingModel;
use crate::pde::{solve_exploratory_hjb, Coupling, SolverOptions, Stepper};
use crate::policy::GeneratorPolicy;

const PROJECTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ProjectionStats {
    /// Node updates where the obstacle was active.
    pub projected: usize,
    pub max_sweeps: usize,
}

/// Solves the classical system; the model's temperature is ignored. The
/// truncation boundary uses K_{f,h} (T − t) + h.
pub fn solve_variational_inequality(
    model: &SwitchingModel,
    grid: &SpaceTimeGrid,
    opts: &SolverOptions,
) -> Result<(ValueField, ProjectionStats)> {
    let zero = GeneratorPolicy::zero(model.regimes());
    let mut st = Stepper::new(model, grid, Coupling::Policy(&zero), opts)?;
    st.truncation_constant = model.reward_bound();
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
    let mut stats = ProjectionStats::default();
    let mut prev = vec![0.0; m * n];
    let mut cur = vec![0.0; m * n];
    for k in (0..kk).rev() {
        prev.copy_from_slice(field.time_slice(k + 1));
        st.prepare(k, &prev)?;
        st.sweep(&prev, &prev, &mut cur)?;
        let free = cur.clone();
        let (sweeps, projected) = project(&mut cur, &free, model, n, k)?;
        stats.projected += projected;
        stats.max_sweeps = stats.max_sweeps.max(sweeps);
        if let Some(idx) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                time_index: k,
                regime: idx / n,
                node: idx % n,
            });
        }
        field.time_slice_mut(k).copy_from_slice(&cur);
    }
    Ok((field, stats))
}

/// Jacobi projection V_i ← max(Ṽ_i, max_{j≠i}(V_j − g_ij)), at most m sweeps.
fn project(
    v: &mut [f64],
    free: &[f64],
    model: &SwitchingModel,
    n: usize,
    k: usize,
) -> Result<(usize, usize)> {
    let m = model.regimes();
    let mut projected = 0;
    let mut next = v.to_vec();
    for sweep in 1..=m {
        let mut change = 0.0_f64;
        let mut active = 0;
        for node in 0..n {
            for i in 0..m {
                let mut obstacle = f64::NEG_INFINITY;
                for j in 0..m {
                    if j != i {
                        obstacle = obstacle.max(v[j * n + node] - model.cost(i, j));
                    }
                }
                let f = free[i * n + node];
                let new = if obstacle > f {
                    active += 1;
                    obstacle
                } else {
                    f
                };
                change = change.max((new - v[i * n + node]).abs());
                next[i * n + node] = new;
            }
        }
        v.copy_from_slice(&next);
        if sweep == 1 {
            projected = active;
        }
        if change < PROJECTION_TOL {
            return Ok((sweep, projected));
        }
        if change.is_nan() {
            break;
        }
        if sweep == m {
            return Err(Error::Projection {
                time_index: k,
                residual: change,
            });
        }
    }
    Ok((m, projected))
}

/// Obstacle consistency and complementarity of a classical solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ViDiagnostics {
    /// max over nodes of max_{j≠i}(V_j − g_ij) − V_i; should be ≤ 0.
    pub obstacle_excess: f64,
    /// max |V − Ṽ| / Δt where the obstacle slack exceeds `slack`, Ṽ being
    /// the unprojected implicit step from the next time level.
    pub inactive_residual: f64,
    pub slack: f64,
}

pub fn vi_diagnostics(
    field: &ValueField,
    model: &SwitchingModel,
    opts: &SolverOptions,
    slack: f64,
) -> Result<ViDiagnostics> {
    let grid = field.grid();
    let zero = GeneratorPolicy::zero(model.regimes());
    let mut st = Stepper::new(model, grid, Coupling::Policy(&zero), opts)?;
    st.truncation_constant = model.reward_bound();
    let m = model.regimes();
    let n = grid.node_count();
    let mut out = vec![0.0; m * n];
    let mut d = ViDiagnostics {
        obstacle_excess: f64::NEG_INFINITY,
        inactive_residual: 0.0,
        slack,
    };
    for k in 0..=grid.time_steps() {
        let cur = field.time_slice(k);
        let step = k < grid.time_steps();
        if step {
            let prev = field.time_slice(k + 1);
            st.prepare(k, prev)?;
            st.sweep(prev, prev, &mut out)?;
        }
        for node in 0..n {
            for i in 0..m {
                let mut obstacle = f64::NEG_INFINITY;
                for j in 0..m {
                    if j != i {
                        obstacle = obstacle.max(cur[j * n + node] - model.cost(i, j));
                    }
                }
                let v = cur[i * n + node];
                d.obstacle_excess = d.obstacle_excess.max(obstacle - v);
                if step && !st.boundary[node] && v - obstacle > slack {
                    d.inactive_residual = d
                        .inactive_residual
                        .max((v - out[i * n + node]).abs() / grid.dt());
                }
            }
        }
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub sup_distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LambdaSweep {
    pub rows: Vec<SweepRow>,
}

impl LambdaSweep {
    pub fn distances(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sup_distance).collect()
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].sup_distance < w[0].sup_distance)
    }

    /// Columns: lambda, sup_distance.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// sup distance (over nodes at least `layers` from the boundary) between
/// V^λ and the classical solution for each λ in a strictly decreasing list.
pub fn lambda_sweep(
    model: &SwitchingModel,
    grid: &SpaceTimeGrid,
    lambdas: &[f64],
    opts: &SolverOptions,
    layers: usize,
) -> Result<(LambdaSweep, ValueField)> {
    if lambdas.is_empty() {
        return Err(Error::InvalidConfig("λ list is empty".into()));
    }
    if lambdas.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidConfig("every λ must be positive".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidConfig(
            "λ list must be strictly decreasing".into(),
        ));
    }
    let (classical, _) = solve_variational_inequality(model, grid, opts)?;
    let mut sweep = LambdaSweep::default();
    for &lambda in lambdas {
        let v = solve_exploratory_hjb(&model.with_temperature(lambda)?, grid, opts)?;
        sweep.rows.push(SweepRow {
            lambda,
            sup_distance: v.sup_distance_interior(&classical, layers),
        });
    }
    Ok((sweep, classical))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::regulator;
    use crate::pde::BoundaryRule;

    #[test]
    fn zero_data_is_never_projected() {
        let model = SwitchingModel::builder(3, 1, 1)
            .drift(|_, x, i, o| o[0] = i as f64 - x[0])
            .vol(|_, _, _, o| o[0] = 0.4)
            .uniform_cost(0.3)
            .reward_bound(0.0)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 50, -2.0, 2.0, 41).unwrap();
        let (v, stats) =
            solve_variational_inequality(&model, &grid, &SolverOptions::default()).unwrap();
        assert_eq!(stats.projected, 0);
        assert_eq!(v.max_abs(), 0.0);
    }

    #[test]
    fn regulator_obstacle_and_complementarity() {
        let model = regulator();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 200, -3.0, 3.0, 121).unwrap();
        let opts = SolverOptions::default();
        let (v, stats) = solve_variational_inequality(&model, &grid, &opts).unwrap();
        assert!(stats.projected > 0);
        assert!(stats.max_sweeps <= 2);
        let d = vi_diagnostics(&v, &model, &opts, 10.0 * grid.axis(0).spacing()).unwrap();
        assert!(d.obstacle_excess <= 1e-9, "{d:?}");
        assert!(d.inactive_residual < 1e-6, "{d:?}");
    }

    #[test]
    fn sweep_validation_and_single_row() {
        let model = regulator();
        let grid = SpaceTimeGrid::uniform_1d(1.0, 50, -3.0, 3.0, 61).unwrap();
        let opts = SolverOptions::default().with_boundary(BoundaryRule::ZeroGradient);
        assert!(lambda_sweep(&model, &grid, &[0.1, 0.2], &opts, 2).is_err());
        assert!(lambda_sweep(&model, &grid, &[0.1, 0.0], &opts, 2).is_err());
        let (s, _) = lambda_sweep(&model, &grid, &[0.1], &opts, 2).unwrap();
        assert_eq!(s.rows.len(), 1);
        assert!(s.rows[0].sup_distance > 0.0);
    }
}
