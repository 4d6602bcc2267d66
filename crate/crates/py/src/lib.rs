//! Python bindings. The extension module is named `exswitch`.

use std::path::PathBuf;
use std::sync::Arc;

use exswitch::acceptance::{run_criterion as run_one, AcceptanceOptions};
use exswitch::field::{ValueField as CoreField, ValueFunction};
use exswitch::grid::SpaceTimeGrid;
use exswitch::iteration::{iterate, IterationConfig};
use exswitch::model::{Family, ModelDescriptor, SwitchingModel};
use exswitch::pde::{solve_exploratory_hjb, BoundaryRule, SolverOptions};
use exswitch::policy::GeneratorPolicy;
use exswitch::rl::{
    checkpoint_load, checkpoint_save, policy_matrix, train, Activation, ModelEnvironment,
    NeuralValue, RegimeEncoding, Schedule, SeedLineage, TrainConfig, UpdateMode,
};
use exswitch::sim::{payoff_statistics, SimConfig, Start};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(exswitch, ExswitchError, PyException);

fn err(e: exswitch::Error) -> PyErr {
    ExswitchError::new_err(e.to_string())
}

fn boundary(name: &str) -> PyResult<BoundaryRule> {
    match name {
        "truncation" => Ok(BoundaryRule::Truncation),
        "zero-gradient" => Ok(BoundaryRule::ZeroGradient),
        other => Err(PyValueError::new_err(format!(
            "boundary must be 'truncation' or 'zero-gradient', got '{other}'"
        ))),
    }
}

/// A switching problem from one of the built-in families.
#[pyclass(name = "Model", frozen, skip_from_py_object, module = "exswitch")]
#[derive(Clone)]
pub struct PyModel {
    inner: SwitchingModel,
}

fn family_model(family: Family, lambda: Option<f64>) -> PyResult<PyModel> {
    let mut d = family.descriptor();
    d.lambda = lambda;
    Ok(PyModel {
        inner: d.build().map_err(err)?,
    })
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    #[pyo3(signature = (lambda_ = None))]
    fn regulator(lambda_: Option<f64>) -> PyResult<Self> {
        family_model(Family::Regulator, lambda_)
    }

    #[staticmethod]
    #[pyo3(signature = (lambda_ = None))]
    fn put_options(lambda_: Option<f64>) -> PyResult<Self> {
        family_model(Family::PutOptions, lambda_)
    }

    /// Builds a model from a JSON descriptor such as
    /// `{"model": "regulator", "lambda": 0.1}`.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let d = ModelDescriptor::from_json(text).map_err(err)?;
        Ok(Self {
            inner: d.build().map_err(err)?,
        })
    }

    #[getter]
    fn regimes(&self) -> usize {
        self.inner.regimes()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn cost(&self, i: usize, j: usize) -> PyResult<f64> {
        let m = self.inner.regimes();
        if i >= m || j >= m {
            return Err(PyValueError::new_err(format!("regime out of range 0..{m}")));
        }
        Ok(self.inner.cost(i, j))
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, regimes={}, lambda={})",
            self.inner.label(),
            self.inner.regimes(),
            self.inner.temperature()
        )
    }
}

#[pyclass(name = "Grid", frozen, skip_from_py_object, module = "exswitch")]
#[derive(Clone)]
pub struct PyGrid {
    inner: SpaceTimeGrid,
}

#[pymethods]
impl PyGrid {
    #[staticmethod]
    fn uniform_1d(horizon: f64, steps: usize, lo: f64, hi: f64, nodes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SpaceTimeGrid::uniform_1d(horizon, steps, lo, hi, nodes).map_err(err)?,
        })
    }

    #[staticmethod]
    fn uniform_2d(horizon: f64, steps: usize, lo: f64, hi: f64, nodes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: SpaceTimeGrid::uniform_2d(horizon, steps, lo, hi, nodes).map_err(err)?,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn time_steps(&self) -> usize {
        self.inner.time_steps()
    }
}

/// Tabulated V(t, x, i) on a grid.
#[pyclass(name = "ValueField", frozen, module = "exswitch")]
pub struct PyField {
    inner: Arc<CoreField>,
}

#[pymethods]
impl PyField {
    /// Multilinear interpolation in x, linear in t.
    fn value(&self, t: f64, x: Vec<f64>, i: usize) -> PyResult<f64> {
        check_point(&x, self.inner.grid().dim(), i, self.inner.regimes())?;
        Ok(self.inner.interpolate(t, &x, i))
    }

    #[getter]
    fn regimes(&self) -> usize {
        self.inner.regimes()
    }

    fn sup_distance(&self, other: &PyField) -> PyResult<f64> {
        if self.inner.grid() != other.inner.grid() || self.inner.regimes() != other.inner.regimes()
        {
            return Err(PyValueError::new_err("fields live on different grids"));
        }
        Ok(self.inner.sup_distance(&other.inner))
    }

    /// Values at grid time index `k` for regime `i`, in node order.
    fn slice(&self, k: usize, i: usize) -> PyResult<Vec<f64>> {
        if k > self.inner.grid().time_steps() || i >= self.inner.regimes() {
            return Err(PyValueError::new_err("time index or regime out of range"));
        }
        Ok(self.inner.slice(k, i).to_vec())
    }
}

fn check_point(x: &[f64], dim: usize, i: usize, regimes: usize) -> PyResult<()> {
    if x.len() != dim {
        return Err(PyValueError::new_err(format!(
            "x has {} entries, expected {dim}",
            x.len()
        )));
    }
    if i >= regimes {
        return Err(PyValueError::new_err(format!(
            "regime {i} out of range 0..{regimes}"
        )));
    }
    Ok(())
}

/// Solves the exploratory HJB system backward from T.
#[pyfunction]
#[pyo3(signature = (model, grid, boundary = "truncation"))]
fn solve_hjb(py: Python<'_>, model: &PyModel, grid: &PyGrid, boundary: &str) -> PyResult<PyField> {
    let opts = SolverOptions::default().with_boundary(self::boundary(boundary)?);
    let field = py
        .detach(|| solve_exploratory_hjb(&model.inner, &grid.inner, &opts))
        .map_err(err)?;
    Ok(PyField {
        inner: Arc::new(field),
    })
}

/// Policy iteration from V⁰ = h. Returns the last iterate and a report dict
/// with keys `gaps`, `converged`, `monotonicity_violations`.
#[pyfunction]
#[pyo3(signature = (model, grid, max_iters = 12, tol = 1e-8))]
fn policy_iteration<'py>(
    py: Python<'py>,
    model: &PyModel,
    grid: &PyGrid,
    max_iters: usize,
    tol: f64,
) -> PyResult<(PyField, Bound<'py, PyDict>)> {
    let cfg = IterationConfig {
        max_iters,
        tol,
        ..Default::default()
    };
    let init = CoreField::terminal_extension(grid.inner.clone(), &model.inner);
    let (field, _, rep) = py
        .detach(|| iterate(&model.inner, &grid.inner, init, &cfg))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("gaps", rep.gaps())?;
    d.set_item("converged", rep.converged)?;
    d.set_item("monotonicity_violations", rep.monotonicity_violations)?;
    Ok((
        PyField {
            inner: Arc::new(field),
        },
        d,
    ))
}

/// Mean discounted payoff of the policy derived from `field`, started at
/// (x0, i0). Returns (mean, standard error).
#[pyfunction]
#[pyo3(signature = (model, field, x0, i0, steps, paths, seed = 0))]
fn simulate_payoff(
    py: Python<'_>,
    model: &PyModel,
    field: &PyField,
    x0: Vec<f64>,
    i0: usize,
    steps: usize,
    paths: usize,
    seed: u64,
) -> PyResult<(f64, f64)> {
    check_point(&x0, model.inner.state_dim(), i0, model.inner.regimes())?;
    let policy = GeneratorPolicy::derived(field.inner.clone(), &model.inner);
    let sim = SimConfig::new(model.inner.horizon(), steps, paths, seed).map_err(err)?;
    let s = py
        .detach(|| payoff_statistics(&model.inner, &policy, &sim, &Start::fixed(x0, i0)))
        .map_err(err)?;
    Ok((s.payoff.mean, s.payoff.stderr))
}

/// v(t, x, i) = h(x) + (T − t) N(t, x, i) with a fully connected N.
#[pyclass(name = "ValueNet", module = "exswitch")]
pub struct PyValueNet {
    inner: NeuralValue,
    model: SwitchingModel,
    lineage: SeedLineage,
}

fn parse_hidden(hidden: Vec<(usize, String)>) -> PyResult<Vec<(usize, Activation)>> {
    hidden
        .into_iter()
        .map(|(w, a)| Ok((w, Activation::parse(&a).map_err(err)?)))
        .collect()
}

fn parse_encoding(s: &str) -> PyResult<RegimeEncoding> {
    match s {
        "one-hot" => Ok(RegimeEncoding::OneHot),
        "heads" => Ok(RegimeEncoding::Heads),
        other => Err(PyValueError::new_err(format!(
            "encoding must be 'one-hot' or 'heads', got '{other}'"
        ))),
    }
}

#[pymethods]
impl PyValueNet {
    #[new]
    #[pyo3(signature = (model, hidden = vec![(128, "relu".to_string()), (128, "tanh".to_string())], encoding = "one-hot", seed = 0))]
    fn new(
        model: &PyModel,
        hidden: Vec<(usize, String)>,
        encoding: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let hidden = parse_hidden(hidden)?;
        let inner = NeuralValue::for_model(&model.inner, &hidden, parse_encoding(encoding)?, seed)
            .map_err(err)?;
        Ok(Self {
            inner,
            model: model.inner.clone(),
            lineage: SeedLineage {
                init_seed: seed,
                ..Default::default()
            },
        })
    }

    /// Loads a checkpoint written by `save` or by the command-line trainer.
    #[staticmethod]
    fn load(path: PathBuf, model: &PyModel) -> PyResult<Self> {
        let ck = checkpoint_load(&path, None, Some(&model.inner.hash())).map_err(err)?;
        Ok(Self {
            inner: NeuralValue::from_params(ck.params, ck.encoding, &model.inner).map_err(err)?,
            model: model.inner.clone(),
            lineage: SeedLineage {
                parent: Some(ck.digest),
                ..ck.lineage
            },
        })
    }

    /// Writes a checkpoint and returns its digest.
    fn save(&self, path: PathBuf) -> PyResult<String> {
        checkpoint_save(
            &path,
            self.inner.network(),
            self.inner.encoding(),
            &self.model.hash(),
            &self.lineage,
        )
        .map_err(err)
    }

    fn value(&self, t: f64, x: Vec<f64>, i: usize) -> PyResult<f64> {
        check_point(&x, self.model.state_dim(), i, self.model.regimes())?;
        Ok(ValueFunction::value(&self.inner, t, &x, i))
    }

    /// Row-major m × m generator of the derived policy at (t, x).
    fn policy(&self, t: f64, x: Vec<f64>) -> PyResult<Vec<f64>> {
        check_point(&x, self.model.state_dim(), 0, self.model.regimes())?;
        policy_matrix(&self.inner, &self.model, t, &x).map_err(err)
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.network().xi().to_vec()
    }

    /// Runs the learner against the built-in simulator with starts uniform
    /// on [lo, hi]; returns the per-episode losses.
    #[pyo3(signature = (episodes, lo, hi, batch = 64, steps = 100, schedule = "adam", mode = "online", seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        py: Python<'_>,
        episodes: usize,
        lo: Vec<f64>,
        hi: Vec<f64>,
        batch: usize,
        steps: usize,
        schedule: &str,
        mode: &str,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = TrainConfig {
            episodes,
            batch,
            schedule: Schedule::parse(schedule).map_err(err)?,
            mode: mode.parse::<UpdateMode>().map_err(err)?,
            seed,
        };
        let model = &self.model;
        let env = ModelEnvironment::new(model, Start::UniformBox { lo, hi }).map_err(err)?;
        let sim = SimConfig::new(model.horizon(), steps, 1, seed).map_err(err)?;
        let net = &mut self.inner;
        let log = py
            .detach(|| train(model, &sim, &cfg, &env, net))
            .map_err(err)?;
        if episodes > 0 {
            self.lineage.train_seed = Some(seed);
            self.lineage.episodes += episodes;
        }
        Ok(log.losses())
    }
}

/// Runs one acceptance criterion; returns a dict with `id`, `name`,
/// `passed`, `observed`, `tolerance`, `seconds`.
#[pyfunction]
#[pyo3(signature = (id, seed = 0, coarse = false, mc_scale = 1.0))]
fn run_criterion<'py>(
    py: Python<'py>,
    id: usize,
    seed: u64,
    coarse: bool,
    mc_scale: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = AcceptanceOptions {
        seed,
        coarse,
        mc_scale,
    };
    let r = py.detach(|| run_one(id, &opts));
    let d = PyDict::new(py);
    d.set_item("id", r.id)?;
    d.set_item("name", r.name)?;
    d.set_item("passed", r.passed)?;
    d.set_item("observed", r.observed)?;
    d.set_item("tolerance", r.tolerance)?;
    d.set_item("seconds", r.seconds)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "exswitch")]
fn exswitch_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ExswitchError", m.py().get_type::<ExswitchError>())?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyValueNet>()?;
    m.add_function(wrap_pyfunction!(solve_hjb, m)?)?;
    m.add_function(wrap_pyfunction!(policy_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_payoff, m)?)?;
    m.add_function(wrap_pyfunction!(run_criterion, m)?)?;
    Ok(())
}
