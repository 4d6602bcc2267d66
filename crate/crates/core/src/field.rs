//! Value-function tuples sampled on a space-time grid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::SpaceTimeGrid;
use crate::model::SwitchingModel;

/// Anything that can be evaluated as v(t, x, i).
pub trait ValueFunction: Send + Sync {
    fn value(&self, t: f64, x: &[f64], i: usize) -> f64;
}

/// Adapts a closure to [`ValueFunction`].
pub struct FnValue<F>(pub F);

impl<F> ValueFunction for FnValue<F>
where
    F: Fn(f64, &[f64], usize) -> f64 + Send + Sync,
{
    fn value(&self, t: f64, x: &[f64], i: usize) -> f64 {
        (self.0)(t, x, i)
    }
}

/// m scalar fields over the grid, stored time-major as `(k, regime, node)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    grid: SpaceTimeGrid,
    regimes: usize,
    values: Vec<f64>,
}

impl ValueField {
    pub fn zeros(grid: SpaceTimeGrid, regimes: usize) -> Self {
        let len = (grid.time_steps() + 1) * regimes * grid.node_count();
        Self {
            grid,
            regimes,
            values: vec![0.0; len],
        }
    }

    /// Samples `f(t, x, i)` at every node.
    pub fn from_fn(
        grid: SpaceTimeGrid,
        regimes: usize,
        f: impl Fn(f64, &[f64], usize) -> f64,
    ) -> Self {
        let mut field = Self::zeros(grid, regimes);
        let n = field.grid.node_count();
        let mut x = vec![0.0; field.grid.dim()];
        for k in 0..=field.grid.time_steps() {
            let t = field.grid.time(k);
            for i in 0..regimes {
                for node in 0..n {
                    field.grid.coords_into(node, &mut x);
                    let idx = field.index(k, i, node);
                    field.values[idx] = f(t, &x, i);
                }
            }
        }
        field
    }

    /// The default policy-iteration start: h(x) in every regime at every time.
    pub fn terminal_extension(grid: SpaceTimeGrid, model: &SwitchingModel) -> Self {
        Self::from_fn(grid, model.regimes(), |_, x, _| model.terminal_reward(x))
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn regimes(&self) -> usize {
        self.regimes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn index(&self, k: usize, i: usize, node: usize) -> usize {
        (k * self.regimes + i) * self.grid.node_count() + node
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, node: usize) -> f64 {
        self.values[self.index(k, i, node)]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, node: usize, v: f64) {
        let idx = self.index(k, i, node);
        self.values[idx] = v;
    }

    /// Values of regime `i` at time index `k`.
    pub fn slice(&self, k: usize, i: usize) -> &[f64] {
        let n = self.grid.node_count();
        let start = self.index(k, i, 0);
        &self.values[start..start + n]
    }

    pub fn slice_mut(&mut self, k: usize, i: usize) -> &mut [f64] {
        let n = self.grid.node_count();
        let start = self.index(k, i, 0);
        &mut self.values[start..start + n]
    }

    /// All regimes at time index `k`, laid out `(regime, node)`.
    pub fn time_slice(&self, k: usize) -> &[f64] {
        let len = self.regimes * self.grid.node_count();
        &self.values[k * len..(k + 1) * len]
    }

    pub fn time_slice_mut(&mut self, k: usize) -> &mut [f64] {
        let len = self.regimes * self.grid.node_count();
        &mut self.values[k * len..(k + 1) * len]
    }

    /// The vector (V_1, …, V_m) at one grid node.
    pub fn point(&self, k: usize, node: usize) -> Vec<f64> {
        (0..self.regimes).map(|i| self.get(k, i, node)).collect()
    }

    /// Multilinear interpolation in (t, x); clamps to the grid box.
    pub fn interpolate(&self, t: f64, x: &[f64], i: usize) -> f64 {
        let (k, wt) = self.grid.locate_time(t);
        let a = self.interpolate_at_time(k, x, i);
        if wt == 0.0 {
            return a;
        }
        let b = self.interpolate_at_time(k + 1, x, i);
        a + wt * (b - a)
    }

    /// Interpolated values of every regime at (t, x), sharing one lookup.
    /// Agrees exactly with [`ValueField::interpolate`].
    pub fn interpolate_regimes(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let (k, wt) = self.grid.locate_time(t);
        let n = self.grid.node_count();
        let m = self.regimes;
        if self.grid.dim() == 1 {
            let (j, w) = self.grid.axis(0).locate(x[0]);
            let lerp = |b: usize| {
                let pair = &self.values[b + j..b + j + 2];
                if w == 0.0 {
                    pair[0]
                } else {
                    pair[0] + w * (pair[1] - pair[0])
                }
            };
            for (i, o) in out[..m].iter_mut().enumerate() {
                let a = lerp((k * m + i) * n);
                *o = if wt == 0.0 {
                    a
                } else {
                    a + wt * (lerp(((k + 1) * m + i) * n) - a)
                };
            }
            return;
        }
        let loc0 = self.grid.axis(0).locate(x[0]);
        let loc1 = if self.grid.dim() > 1 {
            self.grid.axis(1).locate(x[1])
        } else {
            (0, 0.0)
        };
        for (i, o) in out.iter_mut().enumerate().take(self.regimes) {
            let at = |k: usize| {
                spatial(
                    &self.values[(k * self.regimes + i) * n..][..n],
                    &self.grid,
                    loc0,
                    loc1,
                )
            };
            let a = at(k);
            *o = if wt == 0.0 {
                a
            } else {
                a + wt * (at(k + 1) - a)
            };
        }
    }

    /// Spatial interpolation at time index `k`.
    pub fn interpolate_at_time(&self, k: usize, x: &[f64], i: usize) -> f64 {
        let loc0 = self.grid.axis(0).locate(x[0]);
        let loc1 = if self.grid.dim() > 1 {
            self.grid.axis(1).locate(x[1])
        } else {
            (0, 0.0)
        };
        spatial(self.slice(k, i), &self.grid, loc0, loc1)
    }

    /// sup over all entries of |self − other|.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// sup of |self − other| over nodes at least `layers` away from the
    /// spatial boundary.
    pub fn sup_distance_interior(&self, other: &ValueField, layers: usize) -> f64 {
        assert_eq!(self.grid, other.grid);
        let n = self.grid.node_count();
        let interior: Vec<usize> = (0..n)
            .filter(|&j| self.grid.is_interior(j, layers))
            .collect();
        let mut sup = 0.0_f64;
        for k in 0..=self.grid.time_steps() {
            for i in 0..self.regimes {
                let (a, b) = (self.slice(k, i), other.slice(k, i));
                for &j in &interior {
                    sup = sup.max((a[j] - b[j]).abs());
                }
            }
        }
        sup
    }

    /// min over all entries of self − other.
    pub fn min_difference(&self, other: &ValueField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .fold(f64::INFINITY, f64::min)
    }

    /// sup |V_i(T, x) − h(x)|.
    pub fn terminal_error(&self, model: &SwitchingModel) -> f64 {
        let k = self.grid.time_steps();
        let mut x = vec![0.0; self.grid.dim()];
        let mut sup = 0.0_f64;
        for i in 0..self.regimes {
            for node in 0..self.grid.node_count() {
                self.grid.coords_into(node, &mut x);
                sup = sup.max((self.get(k, i, node) - model.terminal_reward(&x)).abs());
            }
        }
        sup
    }

    /// Largest amount by which |V| exceeds K (T − t) + K_{f,h}.
    pub fn bound_excess(&self, model: &SwitchingModel) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for k in 0..=self.grid.time_steps() {
            let bound = model.value_bound(self.grid.time(k));
            for v in self.time_slice(k) {
                worst = worst.max(v.abs() - bound);
            }
        }
        worst
    }

    /// Node-wise equality of the tabulated values (same grid required).
    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    fn header(&self, model_hash: &str, encoding: &str) -> FieldHeader {
        FieldHeader {
            format: FIELD_FORMAT.into(),
            version: FIELD_VERSION,
            regimes: self.regimes,
            grid: self.grid.clone(),
            model_hash: model_hash.into(),
            layout: "time-major (time_index, regime, node); last spatial axis fastest".into(),
            encoding: encoding.into(),
        }
    }

    /// CSV of node coordinates and values plus a `<path>.json` header.
    /// Columns: `t, x0[, x1], regime, value`.
    pub fn write_csv(&self, path: &Path, model_hash: &str) -> Result<PathBuf> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut head = vec!["t".to_string()];
        head.extend((0..self.grid.dim()).map(|d| format!("x{d}")));
        head.push("regime".into());
        head.push("value".into());
        w.write_record(&head)?;
        let mut x = vec![0.0; self.grid.dim()];
        for k in 0..=self.grid.time_steps() {
            let t = self.grid.time(k);
            for i in 0..self.regimes {
                for node in 0..self.grid.node_count() {
                    self.grid.coords_into(node, &mut x);
                    let mut rec = vec![t.to_string()];
                    rec.extend(x.iter().map(|v| v.to_string()));
                    rec.push(i.to_string());
                    rec.push(self.get(k, i, node).to_string());
                    w.write_record(&rec)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let header_path = sidecar(path);
        let header = serde_json::to_string_pretty(&self.header(model_hash, "csv"))?;
        std::fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;
        Ok(header_path)
    }

    /// Binary form: magic, u32 header length, JSON header, then the values
    /// as little-endian f64 in storage order.
    pub fn write_binary(&self, path: &Path, model_hash: &str) -> Result<()> {
        let header = serde_json::to_vec(&self.header(model_hash, "f64-le"))?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(BINARY_MAGIC).map_err(io)?;
        w.write_all(&(header.len() as u32).to_le_bytes())
            .map_err(io)?;
        w.write_all(&header).map_err(io)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    /// Reads a binary field, returning it with its recorded model hash.
    pub fn read_binary(path: &Path) -> Result<(Self, String)> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::InvalidConfig(format!(
                "{} is not a value-field file",
                path.display()
            )));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len).map_err(io)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut header).map_err(io)?;
        let header: FieldHeader = serde_json::from_slice(&header)?;
        if header.version != FIELD_VERSION {
            return Err(Error::InvalidConfig(format!(
                "value-field version {} is not supported",
                header.version
            )));
        }
        let mut field = ValueField::zeros(header.grid, header.regimes);
        let mut buf = [0u8; 8];
        for v in field.values.iter_mut() {
            r.read_exact(&mut buf).map_err(io)?;
            *v = f64::from_le_bytes(buf);
        }
        Ok((field, header.model_hash))
    }
}

impl ValueFunction for ValueField {
    fn value(&self, t: f64, x: &[f64], i: usize) -> f64 {
        self.interpolate(t, x, i)
    }
}

const FIELD_FORMAT: &str = "exswitch-value-field";
const FIELD_VERSION: u32 = 1;
const BINARY_MAGIC: &[u8; 4] = b"EXVF";

/// JSON header stored next to (CSV) or inside (binary) a value field.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FieldHeader {
    pub format: String,
    pub version: u32,
    pub regimes: usize,
    pub grid: SpaceTimeGrid,
    pub model_hash: String,
    pub layout: String,
    pub encoding: String,
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

#[inline]
fn spatial(s: &[f64], grid: &SpaceTimeGrid, (j0, w0): (usize, f64), (j1, w1): (usize, f64)) -> f64 {
    if grid.dim() == 1 {
        return if w0 == 0.0 {
            s[j0]
        } else {
            s[j0] + w0 * (s[j0 + 1] - s[j0])
        };
    }
    let n1 = grid.axis(1).nodes;
    let v = |a: usize, b: usize| s[a * n1 + b];
    let lo = v(j0, j1) + w1 * (v(j0, j1 + 1) - v(j0, j1));
    let hi = v(j0 + 1, j1) + w1 * (v(j0 + 1, j1 + 1) - v(j0 + 1, j1));
    lo + w0 * (hi - lo)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_exact_on_affine_data() {
        let g = SpaceTimeGrid::uniform_1d(1.0, 10, -1.0, 1.0, 21).unwrap();
        let f = ValueField::from_fn(g, 2, |t, x, i| 1.0 + 2.0 * t - 3.0 * x[0] + i as f64);
        for &(t, x) in &[(0.0, -1.0), (0.33, 0.123), (1.0, 1.0), (0.5, 0.0)] {
            for i in 0..2 {
                let exact = 1.0 + 2.0 * t - 3.0 * x + i as f64;
                assert!((f.interpolate(t, &[x], i) - exact).abs() < 1e-12);
            }
        }
        let g2 = SpaceTimeGrid::uniform_2d(1.0, 4, 0.0, 3.0, 11).unwrap();
        let f2 = ValueField::from_fn(g2, 1, |t, x, _| t + x[0] - 2.0 * x[1]);
        assert!((f2.interpolate(0.4, &[1.234, 2.71], 0) - (0.4 + 1.234 - 5.42)).abs() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let g = SpaceTimeGrid::uniform_1d(1.0, 3, -1.0, 1.0, 5).unwrap();
        let f = ValueField::from_fn(g, 2, |t, x, i| (t * 7.0 + x[0]).sin() / (i + 1) as f64);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.bin");
        f.write_binary(&p, "abc").unwrap();
        let (back, hash) = ValueField::read_binary(&p).unwrap();
        assert_eq!(hash, "abc");
        assert_eq!(back, f);
        let c = dir.path().join("v.csv");
        let header = f.write_csv(&c, "abc").unwrap();
        let text = std::fs::read_to_string(&c).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 2 * 5);
        assert!(text.starts_with("t,x0,regime,value"));
        let h: FieldHeader =
            serde_json::from_str(&std::fs::read_to_string(header).unwrap()).unwrap();
        assert_eq!(h.grid, *f.grid());
    }
}
