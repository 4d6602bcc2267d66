//! Model-based policy iteration: evaluate with the linear solver, improve
//! with the exponential formula.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::ValueField;
use crate::grid::SpaceTimeGrid;
use crate::model::SwitchingModel;
use crate::pde::{solve_exploratory_hjb, solve_fixed_policy, SolverOptions};
use crate::policy::GeneratorPolicy;

/// π^{n+1}_ij = exp((V^n_j − g_ij − V^n_i)/λ), evaluated lazily.
///
/// Overflow of the exponent surfaces when the policy is evaluated.
pub fn improve(field: impl Into<Arc<ValueField>>, model: &SwitchingModel) -> GeneratorPolicy {
    GeneratorPolicy::derived(field, model)
}

/// When to stop iterating.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// sup |V^{n+1} − V^n| < tol.
    #[default]
    ValueChange,
    /// sup |π^{n+1} − π^n| < tol over the grid nodes.
    PolicyChange,
}

#[derive(Clone, Debug)]
pub struct IterationConfig {
    pub max_iters: usize,
    pub tol: f64,
    pub stop: StopRule,
    /// Decreases of V^{n+1} below V^n beyond this are counted as violations.
    pub monotone_slack: f64,
    /// Reference for the gaps F^n. When absent the exploratory system is
    /// solved directly on the same grid.
    pub reference: Option<ValueField>,
    pub solver: SolverOptions,
}

impl Default for IterationConfig {
    fn default() -> Self {
        Self {
            max_iters: 12,
            tol: 1e-8,
            stop: StopRule::ValueChange,
            monotone_slack: 1e-8,
            reference: None,
            solver: SolverOptions::default(),
        }
    }
}

/// One row per evaluated iterate V^n, n ≥ 1.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// F^n = sup |V^n − V^λ|.
    pub gap: f64,
    /// sup |V^n − V^{n−1}|.
    pub change: f64,
    /// max (V^{n−1} − V^n), zero when the step improved everywhere. Not
    /// meaningful for n = 1 since V^0 is an arbitrary start.
    pub max_violation: f64,
    /// Nodes where V^n < V^{n−1} − slack.
    pub violations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IterationReport {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    /// Violations summed over n ≥ 2.
    pub monotonicity_violations: usize,
    pub wall_seconds: f64,
}

impl IterationReport {
    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.gap).collect()
    }

    /// Largest decrease V^{n} − V^{n+1} over n ≥ 1.
    pub fn worst_violation(&self) -> f64 {
        self.records
            .iter()
            .skip(1)
            .map(|r| r.max_violation)
            .fold(0.0, f64::max)
    }

    /// Columns: iteration, gap, change, max_violation, violations, seconds.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Alternates improvement and evaluation starting from `initial`.
pub fn iterate(
    model: &SwitchingModel,
    grid: &SpaceTimeGrid,
    initial: ValueField,
    cfg: &IterationConfig,
) -> Result<(ValueField, GeneratorPolicy, IterationReport)> {
    if initial.grid() != grid || initial.regimes() != model.regimes() {
        return Err(Error::InvalidConfig(
            "initial field does not match the grid and model".into(),
        ));
    }
    if cfg.max_iters == 0 {
        return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
    }
    let started = Instant::now();
    let reference = match &cfg.reference {
        Some(r) => {
            if r.grid() != grid {
                return Err(Error::InvalidConfig(
                    "reference field lives on a different grid".into(),
                ));
            }
            r.clone()
        }
        None => solve_exploratory_hjb(model, grid, &cfg.solver)?,
    };
    let mut report = IterationReport::default();
    let mut current = Arc::new(initial);
    let mut policy = improve(current.clone(), model);
    for n in 1..=cfg.max_iters {
        let t0 = Instant::now();
        let next = solve_fixed_policy(model, &policy, grid, &cfg.solver)?;
        let mut max_violation = f64::NEG_INFINITY;
        let mut violations = 0;
        for (a, b) in current.values().iter().zip(next.values()) {
            let d = a - b;
            max_violation = max_violation.max(d);
            if d > cfg.monotone_slack {
                violations += 1;
            }
        }
        let change = next.sup_distance(&current);
        let next = Arc::new(next);
        let next_policy = improve(next.clone(), model);
        let stop_metric = match cfg.stop {
            StopRule::ValueChange => change,
            StopRule::PolicyChange => next_policy.sup_distance(&policy, grid)?,
        };
        report.records.push(IterationRecord {
            iteration: n,
            gap: next.sup_distance(&reference),
            change,
            max_violation: max_violation.max(0.0),
            violations,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if n >= 2 {
            report.monotonicity_violations += violations;
        }
        if violations > 0 && n >= 2 {
            log::warn!(
                "policy iteration {n}: {violations} nodes decreased by up to {max_violation:.3e}"
            );
        }
        current = next;
        policy = next_policy;
        if stop_metric < cfg.tol {
            report.converged = true;
            break;
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    let field = Arc::try_unwrap(current).unwrap_or_else(|a| (*a).clone());
    let policy = improve(field.clone(), model);
    Ok((field, policy, report))
}

/// Least-squares fit of log F^n ≈ a + n log C₂ − log n!.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FactorialRateFit {
    /// log C₁.
    pub intercept: f64,
    /// log C₂.
    pub slope: f64,
    /// Coefficient of determination of the fitted log F^n.
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `(n, F^n)` pairs (positive gaps only) to the factorial rate.
pub fn fit_factorial_rate(points: &[(usize, f64)]) -> Option<FactorialRateFit> {
    let pts: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|(_, f)| *f > 0.0 && f.is_finite())
        .map(|&(n, f)| (n as f64, f.ln(), ln_factorial(n)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    // y + log n! = a + b n
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let mz = pts.iter().map(|p| p.1 + p.2).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxz: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 + p.2 - mz)).sum();
    let slope = sxz / sxx;
    let intercept = mz - slope * mx;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - (intercept + slope * p.0 - p.2)).powi(2))
        .sum();
    Some(FactorialRateFit {
        intercept,
        slope,
        r_squared: if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        },
        points: pts.len(),
    })
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|j| (j as f64).ln()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::regulator;
    use crate::pde::BoundaryRule;

    fn small() -> (SwitchingModel, SpaceTimeGrid) {
        (
            regulator(),
            SpaceTimeGrid::uniform_1d(1.0, 100, -3.0, 3.0, 121).unwrap(),
        )
    }

    #[test]
    fn improve_examples() {
        let model = regulator();
        let g = SpaceTimeGrid::uniform_1d(1.0, 2, -1.0, 1.0, 5).unwrap();
        let flat = ValueField::from_fn(g.clone(), 2, |_, _, _| 0.3);
        let p = improve(flat, &model);
        let r = p.row(0.5, &[0.2], 1).unwrap();
        assert!((r.rate(0) - (-2.5_f64).exp()).abs() < 1e-15);
        let step = ValueField::from_fn(g, 2, |_, _, i| 0.7 * i as f64);
        let p = improve(step, &model);
        assert!((p.row(0.0, &[0.0], 0).unwrap().rate(1) - 1.0_f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn converges_monotonically_to_the_direct_solve() {
        let (model, grid) = small();
        let init = ValueField::terminal_extension(grid.clone(), &model);
        let (v, _, rep) = iterate(&model, &grid, init, &IterationConfig::default()).unwrap();
        assert!(rep.converged, "{rep:?}");
        assert!(rep.records.len() <= 12);
        assert_eq!(rep.monotonicity_violations, 0);
        assert!(rep.worst_violation() <= 1e-8);
        let direct = solve_exploratory_hjb(&model, &grid, &SolverOptions::default()).unwrap();
        assert!(v.sup_distance(&direct) < 1e-6);
        // every iterate stays below the exploratory value
        assert!(rep.records.iter().all(|r| r.gap >= 0.0));
    }

    #[test]
    fn fixed_point_start_stops_after_one_iteration() {
        let (model, grid) = small();
        let cfg = IterationConfig {
            solver: SolverOptions::default().with_boundary(BoundaryRule::ZeroGradient),
            ..IterationConfig::default()
        };
        let direct = solve_exploratory_hjb(&model, &grid, &cfg.solver).unwrap();
        let (_, _, rep) = iterate(&model, &grid, direct, &cfg).unwrap();
        assert_eq!(rep.records.len(), 1);
        assert!(rep.records[0].change < 1e-8);
    }

    #[test]
    fn policy_stop_rule() {
        let (model, grid) = small();
        let cfg = IterationConfig {
            stop: StopRule::PolicyChange,
            tol: 1e-6,
            ..IterationConfig::default()
        };
        let init = ValueField::terminal_extension(grid.clone(), &model);
        let (_, _, rep) = iterate(&model, &grid, init, &cfg).unwrap();
        assert!(rep.converged);
    }

    #[test]
    fn factorial_fit_recovers_constants() {
        let pts: Vec<(usize, f64)> = (2..=8)
            .map(|n| {
                (
                    n,
                    3.0 * 2.5_f64.powi(n as i32) / (1..=n).product::<usize>() as f64,
                )
            })
            .collect();
        let fit = fit_factorial_rate(&pts).unwrap();
        assert!((fit.slope - 2.5_f64.ln()).abs() < 1e-12);
        assert!((fit.intercept - 3.0_f64.ln()).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_factorial_rate(&pts[..2]).is_none());
    }

    #[test]
    fn report_csv_schema() {
        let rep = IterationReport {
            records: vec![IterationRecord {
                iteration: 1,
                gap: 0.5,
                change: 0.5,
                max_violation: 0.0,
                violations: 0,
                seconds: 0.1,
            }],
            ..IterationReport::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        rep.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("iteration,gap,change,max_violation,violations,seconds\n"));
    }
}
