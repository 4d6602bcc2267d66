//! Feedback switching intensities π_ij(t, x).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{ValueField, ValueFunction};
use crate::grid::SpaceTimeGrid;
use crate::intensity::{check_row, optimal_rates_into, RegimeIntensityRow};
use crate::model::SwitchingModel;

/// `rates(t, x, i, out)` writes a full generator row for regime `i`.
pub type RateFn = Arc<dyn Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync>;

/// A feedback generator. Every variant yields rows with non-negative
/// off-diagonal entries summing to zero.
#[derive(Clone)]
pub enum GeneratorPolicy {
    /// No switching at all.
    Zero { regimes: usize },
    /// Rates stored at grid nodes, interpolated in between.
    Tabulated(TabulatedPolicy),
    /// Rates computed on demand from a value function by the exponential
    /// formula.
    Derived(DerivedPolicy),
    /// Arbitrary closure; rows are validated on every evaluation.
    Custom { regimes: usize, rates: RateFn },
}

impl fmt::Debug for GeneratorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero { regimes } => write!(f, "Zero({regimes})"),
            Self::Tabulated(t) => write!(f, "Tabulated({} regimes, {:?})", t.regimes, t.grid),
            Self::Derived(d) => write!(
                f,
                "Derived(λ = {}, tabulated = {})",
                d.lambda,
                d.field.is_some()
            ),
            Self::Custom { regimes, .. } => write!(f, "Custom({regimes})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TabulatedPolicy {
    grid: SpaceTimeGrid,
    regimes: usize,
    /// Layout `(k, i, node, j)`.
    rates: Vec<f64>,
}

impl TabulatedPolicy {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    #[inline]
    fn offset(&self, k: usize, i: usize, node: usize) -> usize {
        let m = self.regimes;
        ((k * m + i) * self.grid.node_count() + node) * m
    }
}

#[derive(Clone)]
pub struct DerivedPolicy {
    value: Arc<dyn ValueFunction>,
    /// Present when the value is a grid field, enabling node lookups.
    field: Option<Arc<ValueField>>,
    regimes: usize,
    costs: Vec<f64>,
    lambda: f64,
    cap: f64,
}

impl DerivedPolicy {
    pub fn field(&self) -> Option<&ValueField> {
        self.field.as_deref()
    }
}

impl GeneratorPolicy {
    pub fn zero(regimes: usize) -> Self {
        Self::Zero { regimes }
    }

    /// Rates at every node of `grid`, laid out `(k, i, node, j)`.
    pub fn tabulated(grid: SpaceTimeGrid, regimes: usize, rates: Vec<f64>) -> Result<Self> {
        let expected = (grid.time_steps() + 1) * regimes * grid.node_count() * regimes;
        if rates.len() != expected {
            return Err(Error::InvalidConfig(format!(
                "tabulated policy needs {expected} rates, got {}",
                rates.len()
            )));
        }
        for (r, row) in rates.chunks(regimes).enumerate() {
            let i = (r / grid.node_count()) % regimes;
            check_row(i, row)?;
        }
        Ok(Self::Tabulated(TabulatedPolicy {
            grid,
            regimes,
            rates,
        }))
    }

    /// π_ij = exp((V_j − g_ij − V_i)/λ) from a tabulated field.
    pub fn derived(field: impl Into<Arc<ValueField>>, model: &SwitchingModel) -> Self {
        let field: Arc<ValueField> = field.into();
        Self::Derived(DerivedPolicy {
            value: field.clone(),
            field: Some(field),
            regimes: model.regimes(),
            costs: model.costs().to_vec(),
            lambda: model.temperature(),
            cap: model.exponent_cap(),
        })
    }

    /// Same as [`derived`](Self::derived) for any evaluable value function.
    pub fn from_value(value: Arc<dyn ValueFunction>, model: &SwitchingModel) -> Self {
        Self::Derived(DerivedPolicy {
            value,
            field: None,
            regimes: model.regimes(),
            costs: model.costs().to_vec(),
            lambda: model.temperature(),
            cap: model.exponent_cap(),
        })
    }

    pub fn custom(
        regimes: usize,
        f: impl Fn(f64, &[f64], usize, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self::Custom {
            regimes,
            rates: Arc::new(f),
        }
    }

    pub fn regimes(&self) -> usize {
        match self {
            Self::Zero { regimes } | Self::Custom { regimes, .. } => *regimes,
            Self::Tabulated(t) => t.regimes,
            Self::Derived(d) => d.regimes,
        }
    }

    /// Writes the generator row of regime `i` at (t, x) into `out`.
    pub fn row_into(&self, t: f64, x: &[f64], i: usize, out: &mut [f64]) -> Result<()> {
        match self {
            Self::Zero { .. } => out.fill(0.0),
            Self::Tabulated(tab) => {
                out.fill(0.0);
                let g = &tab.grid;
                let (k, wt) = g.locate_time(t);
                let mut add = |k: usize, w: f64| {
                    if w == 0.0 {
                        return;
                    }
                    for_each_corner(g, x, |node, ws| {
                        let o = tab.offset(k, i, node);
                        for (j, r) in out.iter_mut().enumerate() {
                            *r += w * ws * tab.rates[o + j];
                        }
                    });
                };
                add(k, 1.0 - wt);
                add(k + 1, wt);
            }
            Self::Derived(d) => {
                let mut buf = [0.0; 16];
                let v = match &d.field {
                    Some(f) => {
                        f.interpolate_regimes(t, x, &mut buf[..d.regimes]);
                        &buf[..d.regimes]
                    }
                    None => fill_values(&mut buf, d.regimes, |j| d.value.value(t, x, j)),
                };
                optimal_rates_into(v, i, &d.costs, d.lambda, d.cap, out)?;
                check_finite(i, out)?;
            }
            Self::Custom { rates, .. } => {
                rates(t, x, i, out);
                check_row(i, out)?;
            }
        }
        Ok(())
    }

    pub fn row(&self, t: f64, x: &[f64], i: usize) -> Result<RegimeIntensityRow> {
        let mut r = vec![0.0; self.regimes()];
        self.row_into(t, x, i, &mut r)?;
        RegimeIntensityRow::new(i, r)
    }

    /// Row at grid node (`k`, `node`); exact table lookup when the policy
    /// lives on the same grid, otherwise a pointwise evaluation.
    pub fn row_at_node(
        &self,
        grid: &SpaceTimeGrid,
        k: usize,
        node: usize,
        x: &[f64],
        i: usize,
        out: &mut [f64],
    ) -> Result<()> {
        match self {
            Self::Tabulated(tab) if tab.grid == *grid => {
                let o = tab.offset(k, i, node);
                out.copy_from_slice(&tab.rates[o..o + tab.regimes]);
                Ok(())
            }
            Self::Derived(d) if d.field.as_ref().is_some_and(|f| f.grid() == grid) => {
                let f = d.field.as_ref().expect("checked");
                let mut v = [0.0; 16];
                let v = fill_values(&mut v, d.regimes, |j| f.get(k, j, node));
                optimal_rates_into(v, i, &d.costs, d.lambda, d.cap, out)?;
                check_finite(i, out)
            }
            _ => self.row_into(grid.time(k), x, i, out),
        }
    }

    /// Samples the policy at every node of `grid`.
    pub fn tabulate(&self, grid: &SpaceTimeGrid) -> Result<Self> {
        let m = self.regimes();
        let n = grid.node_count();
        let mut rates = vec![0.0; (grid.time_steps() + 1) * m * n * m];
        let mut x = vec![0.0; grid.dim()];
        for k in 0..=grid.time_steps() {
            for i in 0..m {
                for node in 0..n {
                    grid.coords_into(node, &mut x);
                    let o = ((k * m + i) * n + node) * m;
                    self.row_at_node(grid, k, node, &x, i, &mut rates[o..o + m])?;
                }
            }
        }
        Ok(Self::Tabulated(TabulatedPolicy {
            grid: grid.clone(),
            regimes: m,
            rates,
        }))
    }

    /// sup over grid nodes, regimes and targets of |π_ij − π'_ij|.
    pub fn sup_distance(&self, other: &GeneratorPolicy, grid: &SpaceTimeGrid) -> Result<f64> {
        let m = self.regimes();
        let (mut a, mut b) = (vec![0.0; m], vec![0.0; m]);
        let mut x = vec![0.0; grid.dim()];
        let mut sup = 0.0_f64;
        for k in 0..=grid.time_steps() {
            for node in 0..grid.node_count() {
                grid.coords_into(node, &mut x);
                for i in 0..m {
                    self.row_at_node(grid, k, node, &x, i, &mut a)?;
                    other.row_at_node(grid, k, node, &x, i, &mut b)?;
                    for j in 0..m {
                        sup = sup.max((a[j] - b[j]).abs());
                    }
                }
            }
        }
        Ok(sup)
    }
}

fn fill_values(buf: &mut [f64; 16], m: usize, f: impl Fn(usize) -> f64) -> &[f64] {
    assert!(m <= 16, "at most 16 regimes are supported");
    for (j, v) in buf.iter_mut().take(m).enumerate() {
        *v = f(j);
    }
    &buf[..m]
}

fn check_finite(i: usize, rates: &[f64]) -> Result<()> {
    if let Some(j) = rates.iter().position(|r| !r.is_finite()) {
        return Err(Error::InvalidRow {
            source_regime: i,
            reason: format!("rate to {j} is not finite"),
        });
    }
    Ok(())
}

/// Calls `f(node, weight)` for the corners of the cell containing `x`.
fn for_each_corner(grid: &SpaceTimeGrid, x: &[f64], mut f: impl FnMut(usize, f64)) {
    match grid.dim() {
        1 => {
            let (j, w) = grid.axis(0).locate(x[0]);
            f(j, 1.0 - w);
            if w > 0.0 {
                f(j + 1, w);
            }
        }
        _ => {
            let (j0, w0) = grid.axis(0).locate(x[0]);
            let (j1, w1) = grid.axis(1).locate(x[1]);
            for (a, wa) in [(j0, 1.0 - w0), (j0 + 1, w0)] {
                for (b, wb) in [(j1, 1.0 - w1), (j1 + 1, w1)] {
                    if wa * wb > 0.0 {
                        f(grid.flat(&[a, b]), wa * wb);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::regulator;

    #[test]
    fn derived_matches_formula_and_tabulation() {
        let model = regulator();
        let g = SpaceTimeGrid::uniform_1d(1.0, 4, -1.0, 1.0, 11).unwrap();
        let field = ValueField::from_fn(g.clone(), 2, |t, x, i| t * x[0] + 0.3 * i as f64);
        let p = GeneratorPolicy::derived(field, &model);
        let row = p.row(0.5, &[0.4], 0).unwrap();
        let expected = ((0.3 - 0.5) / 0.2_f64).exp();
        assert!((row.rate(1) - expected).abs() < 1e-12);
        let tab = p.tabulate(&g).unwrap();
        assert!(tab.sup_distance(&p, &g).unwrap() == 0.0);
        // off-node evaluation of the table interpolates the node rates
        let r = tab.row(0.5, &[0.45], 1).unwrap();
        let direct = p.row(0.5, &[0.45], 1).unwrap();
        assert!((r.rate(0) - direct.rate(0)).abs() < 1e-6);
    }

    #[test]
    fn custom_rows_are_validated() {
        let bad = GeneratorPolicy::custom(2, |_, _, _, out| {
            out[0] = 1.0;
            out[1] = 1.0;
        });
        assert!(bad.row(0.0, &[0.0], 0).is_err());
        let good = GeneratorPolicy::custom(2, |_, _, i, out| {
            out.fill(0.5);
            out[i] = -0.5;
        });
        assert_eq!(good.row(0.0, &[0.0], 1).unwrap().rate(0), 0.5);
    }

    #[test]
    fn tabulated_rejects_negative_rates() {
        let g = SpaceTimeGrid::uniform_1d(1.0, 1, 0.0, 1.0, 3).unwrap();
        let mut rates = vec![0.0; 2 * 2 * 3 * 2];
        rates[1] = -1.0;
        rates[0] = 1.0;
        assert!(GeneratorPolicy::tabulated(g, 2, rates).is_err());
    }
}
