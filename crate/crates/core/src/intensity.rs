//! Generator rows, the entropy regularizer and the closed-form optimal
//! intensity.

use crate::error::{Error, Result};
use crate::model::SwitchingModel;

const ROW_SUM_TOL: f64 = 1e-12;

/// One row π_i of a generator matrix: non-negative off-diagonal rates and
/// a diagonal equal to minus their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeIntensityRow {
    source: usize,
    rates: Vec<f64>,
}

impl RegimeIntensityRow {
    /// Validates a full row (diagonal included).
    pub fn new(source: usize, rates: Vec<f64>) -> Result<Self> {
        check_row(source, &rates)?;
        Ok(Self { source, rates })
    }

    /// Builds a row from its off-diagonal entries; `rates[source]` is
    /// ignored and overwritten with the negative row sum.
    pub fn from_off_diagonal(source: usize, mut rates: Vec<f64>) -> Result<Self> {
        if source >= rates.len() {
            return Err(Error::InvalidRow {
                source_regime: source,
                reason: format!("source outside 0..{}", rates.len()),
            });
        }
        rates[source] = 0.0;
        let s: f64 = rates.iter().sum();
        rates[source] = -s;
        Self::new(source, rates)
    }

    /// All off-diagonal rates zero.
    pub fn zero(source: usize, regimes: usize) -> Self {
        Self {
            source,
            rates: vec![0.0; regimes],
        }
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn rate(&self, j: usize) -> f64 {
        self.rates[j]
    }

    /// Total jump intensity out of the source regime.
    pub fn exit_rate(&self) -> f64 {
        -self.rates[self.source]
    }
}

pub(crate) fn check_row(source: usize, rates: &[f64]) -> Result<()> {
    let bad = |reason: String| Error::InvalidRow {
        source_regime: source,
        reason,
    };
    if source >= rates.len() {
        return Err(bad(format!("source outside 0..{}", rates.len())));
    }
    let mut sum = 0.0;
    let mut scale = 0.0_f64;
    for (j, &r) in rates.iter().enumerate() {
        if !r.is_finite() {
            return Err(bad(format!("rate to {j} is not finite")));
        }
        if j != source && r < 0.0 {
            return Err(bad(format!("negative off-diagonal rate {r} to {j}")));
        }
        sum += r;
        scale += r.abs();
    }
    if sum.abs() > ROW_SUM_TOL * scale.max(1.0) {
        return Err(bad(format!("row sums to {sum:e}")));
    }
    Ok(())
}

#[inline]
fn xlogx(p: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * p.ln()
    }
}

/// R(π, i) = Σ_{j≠i} (π_ij − π_ij log π_ij), with 0 log 0 = 0.
pub fn entropy_regularizer(row: &RegimeIntensityRow) -> f64 {
    entropy_of_rates(row.rates(), row.source())
}

/// Same as [`entropy_regularizer`] on a raw full row.
#[inline]
pub fn entropy_of_rates(rates: &[f64], source: usize) -> f64 {
    rates
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != source)
        .map(|(_, &p)| p - xlogx(p))
        .sum()
}

/// Writes π*_ij = exp((V_j − g_ij − V_i)/λ) for j ≠ i and the negative row
/// sum on the diagonal into `out`.
#[inline]
pub fn optimal_rates_into(
    values: &[f64],
    i: usize,
    costs: &[f64],
    lambda: f64,
    cap: f64,
    out: &mut [f64],
) -> Result<()> {
    let m = values.len();
    let mut sum = 0.0;
    for j in 0..m {
        if j == i {
            continue;
        }
        let arg = (values[j] - costs[i * m + j] - values[i]) / lambda;
        if !(arg <= cap) {
            return Err(Error::IntensityOverflow {
                from: i,
                to: j,
                argument: arg,
                cap,
            });
        }
        let r = arg.exp();
        out[j] = r;
        sum += r;
    }
    out[i] = -sum;
    Ok(())
}

/// The maximiser of the Hamiltonian for regime `i` given the value vector
/// at one point.
pub fn optimal_intensity(
    values: &[f64],
    i: usize,
    model: &SwitchingModel,
) -> Result<RegimeIntensityRow> {
    let m = model.regimes();
    if values.len() != m {
        return Err(Error::InvalidConfig(format!(
            "value vector has {} entries, model has {m} regimes",
            values.len()
        )));
    }
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "value for regime {j} is not finite"
        )));
    }
    let mut rates = vec![0.0; m];
    optimal_rates_into(
        values,
        i,
        model.costs(),
        model.temperature(),
        model.exponent_cap(),
        &mut rates,
    )?;
    Ok(RegimeIntensityRow { source: i, rates })
}

/// H_i(π_i, v) = Σ_{j≠i} π_ij (v_j − g_ij − v_i) + λ R(π, i).
pub fn hamiltonian(row: &RegimeIntensityRow, values: &[f64], model: &SwitchingModel) -> f64 {
    hamiltonian_of_rates(
        row.rates(),
        row.source(),
        values,
        model.costs(),
        model.temperature(),
    )
}

#[inline]
pub(crate) fn hamiltonian_of_rates(
    rates: &[f64],
    i: usize,
    values: &[f64],
    costs: &[f64],
    lambda: f64,
) -> f64 {
    let m = values.len();
    let mut h = 0.0;
    for j in 0..m {
        if j != i {
            h += rates[j] * (values[j] - costs[i * m + j] - values[i]);
        }
    }
    h + lambda * entropy_of_rates(rates, i)
}

/// λ Σ_{j≠i} exp((v_j − g_ij − v_i)/λ): the Hamiltonian at its maximiser.
pub fn optimal_hamiltonian(values: &[f64], i: usize, model: &SwitchingModel) -> f64 {
    let m = values.len();
    let lambda = model.temperature();
    (0..m)
        .filter(|&j| j != i)
        .map(|j| lambda * ((values[j] - model.cost(i, j) - values[i]) / lambda).exp())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{regulator, SwitchingModel};
    use proptest::prelude::*;

    fn model(m: usize, g: f64, lambda: f64) -> SwitchingModel {
        SwitchingModel::builder(m, 1, 1)
            .vol(|_, _, _, o| o[0] = 1.0)
            .uniform_cost(g)
            .temperature(lambda)
            .reward_bound(1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn entropy_examples() {
        let one = RegimeIntensityRow::from_off_diagonal(0, vec![0.0, 1.0]).unwrap();
        assert_eq!(entropy_regularizer(&one), 1.0);
        let zero = RegimeIntensityRow::zero(1, 3);
        assert_eq!(entropy_regularizer(&zero), 0.0);
        let e = std::f64::consts::E;
        let row = RegimeIntensityRow::from_off_diagonal(1, vec![e, 0.0, e]).unwrap();
        assert!(entropy_regularizer(&row).abs() < 1e-14);
    }

    #[test]
    fn row_validation() {
        assert!(RegimeIntensityRow::new(0, vec![-1.0, 1.0]).is_ok());
        assert!(RegimeIntensityRow::new(0, vec![-1.0, 1.5]).is_err());
        assert!(RegimeIntensityRow::new(0, vec![1.0, -1.0]).is_err());
        assert!(RegimeIntensityRow::new(2, vec![0.0, 0.0]).is_err());
        assert!(RegimeIntensityRow::new(0, vec![-f64::INFINITY, f64::INFINITY]).is_err());
    }

    #[test]
    fn optimal_intensity_examples() {
        let m = model(3, 0.5, 0.2);
        let row = optimal_intensity(&[0.0, 0.5, 0.5], 0, &m).unwrap();
        assert!((row.rate(1) - 1.0).abs() < 1e-15);
        assert!((row.rate(2) - 1.0).abs() < 1e-15);
        assert!((row.rate(0) + 2.0).abs() < 1e-15);

        let m = SwitchingModel::builder(2, 1, 1)
            .vol(|_, _, _, o| o[0] = 1.0)
            .costs(vec![0.0, 1e-300, 1e-300, 0.0])
            .temperature(1.0)
            .reward_bound(1.0)
            .build()
            .unwrap();
        let row = optimal_intensity(&[0.0, -1.0], 0, &m).unwrap();
        assert!((row.rate(1) - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn overflow_names_pair() {
        let m = model(2, 0.5, 0.001);
        match optimal_intensity(&[0.0, 2.0], 0, &m) {
            Err(Error::IntensityOverflow { from, to, .. }) => assert_eq!((from, to), (0, 1)),
            other => panic!("expected overflow, got {other:?}"),
        }
        // a lower cap trips earlier
        let capped = model(2, 0.5, 0.2).with_exponent_cap(1.0);
        assert!(optimal_intensity(&[0.0, 1.0], 0, &capped).is_err());
        assert!(optimal_intensity(&[0.0, 0.6], 0, &capped).is_ok());
    }

    #[test]
    fn regulator_rates_are_rows() {
        let m = regulator();
        let row = optimal_intensity(&[1.0, 0.3], 1, &m).unwrap();
        assert!(RegimeIntensityRow::new(1, row.rates().to_vec()).is_ok());
        assert!((row.rate(0) - ((1.0 - 0.5 - 0.3) / 0.2_f64).exp()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn shift_invariance(v in prop::collection::vec(-3.0..3.0f64, 3), c in -50.0..50.0f64, i in 0usize..3) {
            let m = model(3, 0.4, 0.3);
            let a = optimal_intensity(&v, i, &m).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = optimal_intensity(&shifted, i, &m).unwrap();
            for j in 0..3 {
                prop_assert!((a.rate(j) - b.rate(j)).abs() <= 1e-12 * a.rate(j).abs().max(1.0));
            }
        }

        #[test]
        fn entropy_midpoint_concavity(a in prop::collection::vec(0.0..20.0f64, 3), b in prop::collection::vec(0.0..20.0f64, 3)) {
            let ra = RegimeIntensityRow::from_off_diagonal(0, a.clone()).unwrap();
            let rb = RegimeIntensityRow::from_off_diagonal(0, b.clone()).unwrap();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            let rm = RegimeIntensityRow::from_off_diagonal(0, mid).unwrap();
            let lhs = entropy_regularizer(&rm);
            let rhs = 0.5 * (entropy_regularizer(&ra) + entropy_regularizer(&rb));
            prop_assert!(lhs >= rhs - 1e-12 * rhs.abs().max(1.0));
        }

        #[test]
        fn hamiltonian_at_optimum(v in prop::collection::vec(-2.0..2.0f64, 3), i in 0usize..3) {
            let m = model(3, 0.3, 0.25);
            let row = optimal_intensity(&v, i, &m).unwrap();
            let h = hamiltonian(&row, &v, &m);
            let reduced = optimal_hamiltonian(&v, i, &m);
            prop_assert!((h - reduced).abs() < 1e-10 * reduced.abs().max(1.0));
        }

        #[test]
        fn optimum_dominates_other_rows(v in prop::collection::vec(-2.0..2.0f64, 3), p in prop::collection::vec(0.0..5.0f64, 3)) {
            let m = model(3, 0.3, 0.25);
            let best = optimal_intensity(&v, 0, &m).unwrap();
            let other = RegimeIntensityRow::from_off_diagonal(0, p).unwrap();
            prop_assert!(hamiltonian(&best, &v, &m) >= hamiltonian(&other, &v, &m) - 1e-12);
        }
    }
}
