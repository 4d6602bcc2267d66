use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform mesh of one spatial coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "axis bounds must satisfy lo < hi, got [{lo}, {hi}]"
            )));
        }
        if nodes < 3 {
            return Err(Error::InvalidGrid(format!(
                "an axis needs at least 3 nodes, got {nodes}"
            )));
        }
        Ok(Self { lo, hi, nodes })
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.nodes - 1) as f64
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        if j + 1 == self.nodes {
            self.hi
        } else {
            self.lo + j as f64 * self.spacing()
        }
    }

    /// Cell index and weight for linear interpolation; clamps outside.
    #[inline]
    pub(crate) fn locate(&self, x: f64) -> (usize, f64) {
        if x <= self.lo {
            return (0, 0.0);
        }
        if x >= self.hi {
            return (self.nodes - 2, 1.0);
        }
        let s = (x - self.lo) / self.spacing();
        // s > 0 here, so the cast truncates like floor
        let j = (s as usize).min(self.nodes - 2);
        (j, (s - j as f64).clamp(0.0, 1.0))
    }
}

/// Uniform time mesh 0 = t_0 < … < t_K = T times a tensor spatial mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeGrid {
    horizon: f64,
    time_steps: usize,
    axes: Vec<Axis>,
}

impl SpaceTimeGrid {
    pub fn new(horizon: f64, time_steps: usize, axes: Vec<Axis>) -> Result<Self> {
        if !(horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if time_steps == 0 {
            return Err(Error::InvalidGrid("need at least one time step".into()));
        }
        if axes.is_empty() || axes.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "1 or 2 spatial dimensions are supported, got {}",
                axes.len()
            )));
        }
        Ok(Self {
            horizon,
            time_steps,
            axes,
        })
    }

    /// One-dimensional grid on [lo, hi].
    pub fn uniform_1d(
        horizon: f64,
        time_steps: usize,
        lo: f64,
        hi: f64,
        nodes: usize,
    ) -> Result<Self> {
        Self::new(horizon, time_steps, vec![Axis::new(lo, hi, nodes)?])
    }

    /// Square two-dimensional grid on [lo, hi]².
    pub fn uniform_2d(
        horizon: f64,
        time_steps: usize,
        lo: f64,
        hi: f64,
        nodes: usize,
    ) -> Result<Self> {
        let a = Axis::new(lo, hi, nodes)?;
        Self::new(horizon, time_steps, vec![a.clone(), a])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn time_steps(&self) -> usize {
        self.time_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.time_steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        if k == self.time_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, d: usize) -> &Axis {
        &self.axes[d]
    }

    /// Number of spatial nodes.
    pub fn node_count(&self) -> usize {
        self.axes.iter().map(|a| a.nodes).product()
    }

    /// Flat node index; the last axis varies fastest.
    #[inline]
    pub fn flat(&self, idx: &[usize]) -> usize {
        match idx.len() {
            1 => idx[0],
            _ => idx[0] * self.axes[1].nodes + idx[1],
        }
    }

    #[inline]
    pub fn unflat(&self, node: usize) -> [usize; 2] {
        match self.axes.len() {
            1 => [node, 0],
            _ => [node / self.axes[1].nodes, node % self.axes[1].nodes],
        }
    }

    /// Coordinates of a flat node written into `out` (length = dim).
    #[inline]
    pub fn coords_into(&self, node: usize, out: &mut [f64]) {
        let idx = self.unflat(node);
        for (d, a) in self.axes.iter().enumerate() {
            out[d] = a.coord(idx[d]);
        }
    }

    pub fn coords(&self, node: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.dim()];
        self.coords_into(node, &mut c);
        c
    }

    /// Whether `node` lies on the boundary of the spatial box.
    #[inline]
    pub fn is_boundary(&self, node: usize) -> bool {
        let idx = self.unflat(node);
        self.axes
            .iter()
            .enumerate()
            .any(|(d, a)| idx[d] == 0 || idx[d] + 1 == a.nodes)
    }

    /// Whether `node` is at least `layers` nodes away from the boundary.
    pub fn is_interior(&self, node: usize, layers: usize) -> bool {
        let idx = self.unflat(node);
        self.axes
            .iter()
            .enumerate()
            .all(|(d, a)| idx[d] >= layers && idx[d] + layers < a.nodes)
    }

    /// Same mesh with the box scaled by `factor` about its centre and the
    /// node count adjusted to keep the spacing.
    pub fn widened(&self, factor: f64) -> Result<Self> {
        let axes = self
            .axes
            .iter()
            .map(|a| {
                let c = 0.5 * (a.lo + a.hi);
                let half = 0.5 * (a.hi - a.lo) * factor;
                let cells = ((a.nodes - 1) as f64 * factor).round() as usize;
                Axis::new(c - half, c + half, cells + 1)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.horizon, self.time_steps, axes)
    }

    /// Same box with `factor` times as many cells per axis and time steps.
    pub fn refined(&self, factor: usize) -> Result<Self> {
        let axes = self
            .axes
            .iter()
            .map(|a| Axis::new(a.lo, a.hi, (a.nodes - 1) * factor + 1))
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.horizon, self.time_steps * factor, axes)
    }

    /// Locates a time for interpolation.
    #[inline]
    pub(crate) fn locate_time(&self, t: f64) -> (usize, f64) {
        if t <= 0.0 {
            return (0, 0.0);
        }
        if t >= self.horizon {
            return (self.time_steps - 1, 1.0);
        }
        let s = t / self.dt();
        let k = (s as usize).min(self.time_steps - 1);
        (k, (s - k as f64).clamp(0.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_is_exact_at_the_ends() {
        let g = SpaceTimeGrid::uniform_1d(1.0, 2000, -3.0, 3.0, 601).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(2000), 1.0);
        assert_eq!(g.dt(), 1.0 / 2000.0);
        assert_eq!(g.axis(0).coord(600), 3.0);
        assert!((g.axis(0).coord(300)).abs() < 1e-15);
        for k in 1..=2000 {
            assert!(g.time(k) > g.time(k - 1));
        }
    }

    #[test]
    fn two_d_indexing() {
        let g = SpaceTimeGrid::uniform_2d(1.0, 10, 0.0, 3.0, 7).unwrap();
        assert_eq!(g.node_count(), 49);
        let n = g.flat(&[2, 5]);
        assert_eq!(g.unflat(n), [2, 5]);
        assert_eq!(g.coords(n), vec![1.0, 2.5]);
        assert!(g.is_boundary(g.flat(&[0, 3])));
        assert!(!g.is_boundary(g.flat(&[1, 3])));
        assert!(g.is_interior(g.flat(&[2, 2]), 2));
        assert!(!g.is_interior(g.flat(&[1, 3]), 2));
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(SpaceTimeGrid::uniform_1d(1.0, 0, 0.0, 1.0, 5).is_err());
        assert!(SpaceTimeGrid::uniform_1d(1.0, 5, 1.0, 0.0, 5).is_err());
        assert!(SpaceTimeGrid::uniform_1d(-1.0, 5, 0.0, 1.0, 5).is_err());
        let a = Axis::new(0.0, 1.0, 5).unwrap();
        assert!(SpaceTimeGrid::new(1.0, 5, vec![a.clone(), a.clone(), a]).is_err());
    }

    #[test]
    fn widening_keeps_spacing() {
        let g = SpaceTimeGrid::uniform_1d(1.0, 10, -3.0, 3.0, 61).unwrap();
        let w = g.widened(2.0).unwrap();
        assert_eq!(w.axis(0).lo, -6.0);
        assert_eq!(w.axis(0).nodes, 121);
        assert!((w.axis(0).spacing() - g.axis(0).spacing()).abs() < 1e-15);
    }
}
