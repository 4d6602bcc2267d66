//! Experiment configuration: family defaults, then the JSON file, then flags.

use std::path::{Path, PathBuf};

use exswitch::grid::SpaceTimeGrid;
use exswitch::model::{Family, ModelDescriptor, SwitchingModel};
use exswitch::pde::{BoundaryRule, SolverOptions};
use exswitch::rl::{Activation, LayerSpec, RegimeEncoding, Schedule, TrainConfig, UpdateMode};
use exswitch::sim::Start;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "EXSWITCH_OUTPUT_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyTag {
    Regulator,
    PutOptions,
    /// A model descriptor read from `model_file`.
    CustomJson,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    #[default]
    Truncation,
    ZeroGradient,
}

/// Space-time grid on the cube [lo, hi]^n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    pub steps: usize,
}

/// Slices at fixed times: each axis in turn swept over [lo, hi] with the
/// other coordinates held at `anchor`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceSpec {
    pub times: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: f64,
    pub anchor: Vec<f64>,
}

impl SliceSpec {
    /// (axis, point) pairs in output order.
    pub fn points(&self) -> Vec<(usize, Vec<f64>)> {
        let mut out = Vec::new();
        for a in 0..self.anchor.len() {
            let n = ((self.hi[a] - self.lo[a]) / self.step + 1e-9).floor() as usize;
            for k in 0..=n {
                let mut x = self.anchor.clone();
                x[a] = self.lo[a] + k as f64 * self.step;
                out.push((a, x));
            }
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub episodes: Option<usize>,
    pub batch: Option<usize>,
    pub schedule: Option<Schedule>,
    pub mode: Option<UpdateMode>,
    /// Time steps K per episode.
    pub steps: Option<usize>,
    pub hidden: Option<Vec<LayerSpec>>,
    pub encoding: Option<RegimeEncoding>,
    pub start: Option<Start>,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySpec {
    pub coarse: Option<bool>,
    pub only: Option<Vec<usize>>,
    pub mc_scale: Option<f64>,
}

/// Everything a run can be told. Unset fields fall back to the family
/// defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Option<FamilyTag>,
    pub model_file: Option<PathBuf>,
    /// Inline descriptor; takes the place of `family` and `model_file`.
    pub model: Option<ModelDescriptor>,
    pub lambda: Option<f64>,
    pub lambda_sweep: Option<Vec<f64>>,
    pub grid: Option<GridSpec>,
    pub boundary: Option<Boundary>,
    /// Run policy iteration next to the direct solve.
    pub iterate: Option<bool>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub slices: Option<SliceSpec>,
    pub train: TrainSpec,
    pub verify: VerifySpec,
}

impl ExperimentConfig {
    /// Reads a config file, or the config snapshot inside a run manifest.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        if let Ok(m) = serde_json::from_str::<crate::manifest::ManifestConfig>(&text) {
            if m.format == crate::manifest::MANIFEST_FORMAT {
                return Ok(m.config);
            }
        }
        serde_json::from_str(&text).map_err(|e| {
            CliError::Config(format!(
                "{}:{}:{}: {e}",
                path.display(),
                e.line(),
                e.column()
            ))
        })
    }

    /// `other` wins wherever it sets a field.
    pub fn overlay(mut self, other: ExperimentConfig) -> Self {
        macro_rules! take {
            ($($f:ident).+) => {
                if other.$($f).+.is_some() {
                    self.$($f).+ = other.$($f).+;
                }
            };
        }
        // a family chosen later replaces an inline model chosen earlier
        if other.family.is_some() && other.model.is_none() {
            self.model = None;
        }
        take!(family);
        take!(model_file);
        take!(model);
        take!(lambda);
        take!(lambda_sweep);
        take!(grid);
        take!(boundary);
        take!(iterate);
        take!(seed);
        take!(out);
        take!(slices);
        take!(train.episodes);
        take!(train.batch);
        take!(train.schedule);
        take!(train.mode);
        take!(train.steps);
        take!(train.hidden);
        take!(train.encoding);
        take!(train.start);
        take!(train.resume);
        take!(verify.coarse);
        take!(verify.only);
        take!(verify.mc_scale);
        self
    }

    /// Fills the defaults and checks every field. Touches nothing on disk
    /// except reading `model_file`.
    pub fn resolve(&self, command: &str) -> Result<Resolved, CliError> {
        let family = self.family.unwrap_or(FamilyTag::Regulator);
        let mut descriptor = match family {
            _ if self.model.is_some() => self.model.clone().expect("checked"),
            FamilyTag::Regulator => Family::Regulator.descriptor(),
            FamilyTag::PutOptions => Family::PutOptions.descriptor(),
            FamilyTag::CustomJson => {
                let path = self.model_file.as_ref().ok_or_else(|| {
                    CliError::Config("family custom-json needs model_file".into())
                })?;
                let text = std::fs::read_to_string(path).map_err(|e| {
                    CliError::Config(format!("cannot read model file {}: {e}", path.display()))
                })?;
                ModelDescriptor::from_json(&text)
                    .map_err(|e| CliError::Config(format!("model file {}: {e}", path.display())))?
            }
        };
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(CliError::Config(format!(
                    "lambda must be positive, got {l}"
                )));
            }
            descriptor.lambda = Some(l);
        }
        let descriptor = descriptor.resolved().map_err(config_err("model"))?;
        let model = descriptor.build().map_err(config_err("model"))?;
        let put = descriptor.model == Family::PutOptions;

        let grid = self.grid.clone().unwrap_or(if put {
            GridSpec {
                lo: 0.0,
                hi: 3.0,
                nodes: 201,
                steps: 50,
            }
        } else {
            GridSpec {
                lo: -3.0,
                hi: 3.0,
                nodes: 601,
                steps: 2000,
            }
        });
        build_grid(&grid, model.state_dim(), model.horizon())?;

        if let Some(s) = &self.lambda_sweep {
            if s.is_empty() || s.iter().any(|l| !(*l > 0.0)) || s.windows(2).any(|w| !(w[1] < w[0]))
            {
                return Err(CliError::Config(
                    "lambda_sweep must be a non-empty, strictly decreasing list of positive values"
                        .into(),
                ));
            }
        }

        let n = model.state_dim();
        let slices = self.slices.clone().unwrap_or(if put {
            SliceSpec {
                times: vec![0.5],
                lo: vec![0.6, 0.6],
                hi: vec![1.4, 1.4],
                step: 0.05,
                anchor: vec![1.0, 1.0],
            }
        } else {
            SliceSpec {
                times: vec![0.5],
                lo: vec![-2.0; n],
                hi: vec![2.0; n],
                step: 0.05,
                anchor: vec![0.0; n],
            }
        });
        if slices.lo.len() != n || slices.hi.len() != n || slices.anchor.len() != n {
            return Err(CliError::Config(format!(
                "slices: lo, hi and anchor need {n} entries"
            )));
        }
        if !(slices.step > 0.0) || slices.lo.iter().zip(&slices.hi).any(|(a, b)| !(a <= b)) {
            return Err(CliError::Config(
                "slices: step must be positive and lo ≤ hi".into(),
            ));
        }
        if slices
            .times
            .iter()
            .any(|t| !(0.0..=model.horizon()).contains(t))
        {
            return Err(CliError::Config("slices: times must lie in [0, T]".into()));
        }

        let seed = self.seed.unwrap_or(0);
        let t = &self.train;
        let train = ResolvedTrain {
            episodes: t.episodes.unwrap_or(1000),
            batch: t.batch.unwrap_or(if put { 512 } else { 64 }),
            schedule: t
                .schedule
                .unwrap_or(Schedule::adam(if put { 1e-4 } else { 1e-3 })),
            mode: t.mode.unwrap_or(UpdateMode::Online),
            steps: t.steps.unwrap_or(if put { 50 } else { 100 }),
            hidden: t.hidden.clone().unwrap_or_else(|| {
                let (a, b) = if put {
                    (Activation::Tanh, Activation::Tanh)
                } else {
                    (Activation::Relu, Activation::Tanh)
                };
                vec![
                    LayerSpec {
                        width: 128,
                        activation: a,
                    },
                    LayerSpec {
                        width: 128,
                        activation: b,
                    },
                ]
            }),
            encoding: t.encoding.unwrap_or_default(),
            start: t.start.clone().unwrap_or(if put {
                Start::UniformBox {
                    lo: vec![0.5, 0.5],
                    hi: vec![1.5, 1.5],
                }
            } else {
                Start::UniformBox {
                    lo: vec![-4.0; n],
                    hi: vec![4.0; n],
                }
            }),
            resume: t.resume.clone(),
        };
        train.config(seed).validate().map_err(config_err("train"))?;
        if train.steps == 0 {
            return Err(CliError::Config("train.steps must be positive".into()));
        }
        if train.hidden.iter().any(|l| l.width == 0) {
            return Err(CliError::Config(
                "train.hidden widths must be positive".into(),
            ));
        }
        exswitch::rl::ModelEnvironment::new(&model, train.start.clone())
            .map_err(config_err("train.start"))?;
        if let Some(p) = &train.resume {
            if !p.is_file() {
                return Err(CliError::Config(format!(
                    "resume checkpoint {} does not exist",
                    p.display()
                )));
            }
        }

        let v = &self.verify;
        let verify = ResolvedVerify {
            coarse: v.coarse.unwrap_or(false),
            only: v.only.clone().unwrap_or_default(),
            mc_scale: v.mc_scale.unwrap_or(1.0),
        };
        if let Some(bad) = verify
            .only
            .iter()
            .find(|i| !(1..=exswitch::acceptance::CRITERIA).contains(*i))
        {
            return Err(CliError::Config(format!("verify.only: no criterion {bad}")));
        }
        if !(verify.mc_scale > 0.0 && verify.mc_scale <= 1.0) {
            return Err(CliError::Config(
                "verify.mc_scale must lie in (0, 1]".into(),
            ));
        }

        let out = match &self.out {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_ENV)
                    .map_or_else(|| PathBuf::from("runs"), PathBuf::from);
                root.join(format!("{command}-{}-seed{seed}", descriptor.model))
            }
        };

        Ok(Resolved {
            family,
            model: descriptor,
            lambda_sweep: self.lambda_sweep.clone(),
            grid,
            boundary: self.boundary.unwrap_or_default(),
            iterate: self.iterate.unwrap_or(!put),
            seed,
            out,
            slices,
            train,
            verify,
        })
    }
}

fn config_err(field: &'static str) -> impl Fn(exswitch::Error) -> CliError {
    move |e| CliError::Config(format!("{field}: {e}"))
}

pub fn build_grid(g: &GridSpec, dim: usize, horizon: f64) -> Result<SpaceTimeGrid, CliError> {
    match dim {
        1 => SpaceTimeGrid::uniform_1d(horizon, g.steps, g.lo, g.hi, g.nodes),
        2 => SpaceTimeGrid::uniform_2d(horizon, g.steps, g.lo, g.hi, g.nodes),
        d => {
            return Err(CliError::Config(format!(
                "grids are supported in 1 or 2 dimensions, model has {d}"
            )))
        }
    }
    .map_err(config_err("grid"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedTrain {
    pub episodes: usize,
    pub batch: usize,
    pub schedule: Schedule,
    pub mode: UpdateMode,
    pub steps: usize,
    pub hidden: Vec<LayerSpec>,
    pub encoding: RegimeEncoding,
    pub start: Start,
    pub resume: Option<PathBuf>,
}

impl ResolvedTrain {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            episodes: self.episodes,
            batch: self.batch,
            schedule: self.schedule,
            mode: self.mode,
            seed,
        }
    }

    pub fn hidden_pairs(&self) -> Vec<(usize, Activation)> {
        self.hidden
            .iter()
            .map(|l| (l.width, l.activation))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedVerify {
    pub coarse: bool,
    pub only: Vec<usize>,
    pub mc_scale: f64,
}

/// A fully specified run. Serializes to a valid config file, so a manifest's
/// snapshot can be fed back with `--config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub family: FamilyTag,
    pub model: ModelDescriptor,
    pub lambda_sweep: Option<Vec<f64>>,
    pub grid: GridSpec,
    pub boundary: Boundary,
    pub iterate: bool,
    pub seed: u64,
    pub out: PathBuf,
    pub slices: SliceSpec,
    pub train: ResolvedTrain,
    pub verify: ResolvedVerify,
}

impl Resolved {
    pub fn build_model(&self) -> Result<SwitchingModel, CliError> {
        self.model.build().map_err(config_err("model"))
    }

    pub fn build_grid(&self, model: &SwitchingModel) -> Result<SpaceTimeGrid, CliError> {
        build_grid(&self.grid, model.state_dim(), model.horizon())
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions::default().with_boundary(match self.boundary {
            Boundary::Truncation => BoundaryRule::Truncation,
            Boundary::ZeroGradient => BoundaryRule::ZeroGradient,
        })
    }
}
