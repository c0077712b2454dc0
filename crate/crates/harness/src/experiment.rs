//! Builds models and schemes from a [`RunConfig`] and drives them.

use std::path::PathBuf;
use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resav_core::integrators::{
    run_steps, step_count, GradientState, MesavState, MultiState, Resav1Bdf, Resav1CnMulti, Resav2Bdf,
    Rmesav1Cn, RunRecord, SavOptions, TimeScheme,
};
use resav_core::manufactured::{exact_profile, four_spheres, gradient_flow_forcing, star_shape};
use resav_core::models::{GradientFlow, ModelSpec, MultiComponentModel, Pfvm};
use resav_core::navier_stokes::{
    manufactured_forcing, manufactured_velocity, shear_layer_init, FlowState, NavierStokes, Projection,
};
use resav_core::spectral::{leray_project, Field, Grid};

use crate::config::{ConfigError, InitKind, ModelId, Pressure, RunConfig, SchemeId};
use crate::snapshot::write_components;
use crate::HarnessError;

/// What a finished run leaves behind.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub record: RunRecord<f64>,
    /// Final phase field(s) or velocity components.
    pub fields: Vec<Field<f64>>,
    pub snapshots: Vec<PathBuf>,
    /// Energy scale `C` used by the SAV.
    pub scale: f64,
}

trait Fields {
    fn fields(&self) -> Vec<Field<f64>>;
}

impl Fields for GradientState<f64> {
    fn fields(&self) -> Vec<Field<f64>> {
        vec![self.phi.clone()]
    }
}

impl Fields for MultiState<f64> {
    fn fields(&self) -> Vec<Field<f64>> {
        self.phi.clone()
    }
}

impl Fields for MesavState<f64> {
    fn fields(&self) -> Vec<Field<f64>> {
        vec![self.phi.clone()]
    }
}

impl Fields for FlowState<f64> {
    fn fields(&self) -> Vec<Field<f64>> {
        self.u.clone()
    }
}

fn incompatible(key: &'static str, reason: impl Into<String>) -> HarnessError {
    ConfigError::Incompatible { key, reason: reason.into() }.into()
}

pub fn build_grid(cfg: &RunConfig) -> Result<Arc<Grid<f64>>, HarnessError> {
    Grid::with_origin(&cfg.extents, &cfg.lengths, &cfg.origin)
        .map_err(|e| ConfigError::Invalid { key: "n".into(), reason: e.to_string() }.into())
}

/// Uniform samples on `[-1, 1]` with the mean removed, then shifted to
/// `init_mean` and scaled by `init_amplitude`.
pub fn random_field(grid: &Arc<Grid<f64>>, rng: &mut ChaCha8Rng, mean: f64, amplitude: f64) -> Field<f64> {
    let dist = Uniform::new_inclusive(-1.0, 1.0).expect("valid range");
    let raw: Vec<f64> = (0..grid.len()).map(|_| dist.sample(rng)).collect();
    let m = raw.iter().sum::<f64>() / raw.len() as f64;
    let values = raw.into_iter().map(|v| mean + amplitude * (v - m)).collect();
    Field::from_values(grid, values).expect("length matches grid")
}

fn scalar_init(cfg: &RunConfig, grid: &Arc<Grid<f64>>, rng: &mut ChaCha8Rng) -> Result<Field<f64>, HarnessError> {
    let p = &cfg.params;
    Ok(match cfg.init {
        InitKind::Exact => exact_profile(grid, 0.0),
        InitKind::Random => random_field(grid, rng, p.init_mean, p.init_amplitude),
        InitKind::Constant => Field::from_fn(grid, |_| p.init_mean),
        InitKind::Star if grid.dim() == 2 => star_shape(grid, p.alpha),
        InitKind::FourSpheres if grid.dim() == 3 => four_spheres(grid, p.epsilon),
        InitKind::Star => return Err(incompatible("init", "`star` needs a 2D grid")),
        InitKind::FourSpheres => return Err(incompatible("init", "`four-spheres` needs a 3D grid")),
        InitKind::ShearLayer => return Err(incompatible("init", "`shear-layer` is a velocity field")),
    })
}

fn flow_init(cfg: &RunConfig, grid: &Arc<Grid<f64>>, rng: &mut ChaCha8Rng) -> Result<Vec<Field<f64>>, HarnessError> {
    let p = &cfg.params;
    match cfg.init {
        InitKind::Exact => Ok(manufactured_velocity(grid, 0.0)),
        InitKind::ShearLayer => Ok(shear_layer_init(grid, p.shear_sigma, p.shear_eps)?),
        InitKind::Constant => Ok(vec![Field::from_fn(grid, |_| p.init_mean); grid.dim()]),
        InitKind::Random => {
            let u: Vec<_> = (0..grid.dim())
                .map(|_| random_field(grid, rng, p.init_mean, p.init_amplitude).forward())
                .collect();
            Ok(leray_project(&u).iter().map(|f| f.backward()).collect())
        }
        _ => Err(incompatible("init", "velocity runs start from `shear-layer`, `random`, `constant` or `exact`")),
    }
}

fn options(cfg: &RunConfig) -> SavOptions<f64> {
    SavOptions { relaxed: cfg.relaxed, gamma: cfg.gamma, scale: cfg.scale_c, strict: cfg.strict }
}

/// Step indices at which snapshots are due.
fn snapshot_steps(cfg: &RunConfig, steps: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = cfg
        .snapshot_times
        .iter()
        .map(|&t| ((t / cfg.dt).round() as usize).min(steps))
        .collect();
    idx.dedup();
    idx
}

fn drive<S>(cfg: &RunConfig, scheme: &S, init: S::State, stem: &str, scale: f64, write: bool) -> Result<RunOutcome, HarnessError>
where
    S: TimeScheme<f64>,
    S::State: Fields,
{
    let steps = step_count(cfg.dt, cfg.t_final);
    let due = if write { snapshot_steps(cfg, steps) } else { Vec::new() };
    if !due.is_empty() {
        std::fs::create_dir_all(&cfg.output).map_err(|source| HarnessError::Io { path: cfg.output.clone(), source })?;
    }
    let mut snapshots = Vec::new();
    let mut io_error = None;
    let (last, record) = run_steps(scheme, init, cfg.dt, 0.0, steps, |i, t, state| {
        if io_error.is_some() {
            return;
        }
        if let Some(k) = due.iter().position(|&d| d == i) {
            match write_components(&cfg.output, &format!("{stem}_{k:04}"), &state.fields(), t) {
                Ok(paths) => snapshots.extend(paths),
                Err(e) => io_error = Some(e),
            }
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    Ok(RunOutcome { record, fields: last.fields(), snapshots, scale })
}

fn gradient_model(cfg: &RunConfig, grid: &Arc<Grid<f64>>) -> Result<Arc<dyn GradientFlow<f64>>, HarnessError> {
    let p = &cfg.params;
    let m = match cfg.model {
        ModelId::AllenCahn => ModelSpec::allen_cahn(grid, p.sigma0, p.mobility)?,
        ModelId::CahnHilliard => ModelSpec::cahn_hilliard(grid, p.sigma0, p.mobility, p.epsilon)?,
        ModelId::PhaseFieldCrystal => ModelSpec::phase_field_crystal(grid, p.zeta, p.epsilon, p.mobility)?,
        other => unreachable!("{} is not a single-field gradient flow", other.name()),
    };
    Ok(Arc::new(m))
}

/// Runs `cfg` to `T`. With `write` set, snapshots are written to the output
/// directory at the configured times.
pub fn execute(cfg: &RunConfig, write: bool) -> Result<RunOutcome, HarnessError> {
    let grid = build_grid(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let opts = options(cfg);
    let p = &cfg.params;
    match cfg.scheme {
        SchemeId::Resav1Bdf(k) | SchemeId::Resav2Bdf(k) => {
            let model = gradient_model(cfg, &grid)?;
            let phi0 = scalar_init(cfg, &grid, &mut rng)?;
            let forcing = cfg.manufactured.then(|| gradient_flow_forcing(Arc::clone(&model)));
            if matches!(cfg.scheme, SchemeId::Resav1Bdf(_)) {
                let s = Resav1Bdf::new(model, k, opts, &phi0, forcing)?;
                let init = s.initial_state(phi0);
                drive(cfg, &s, init, "phi", s.scale(), write)
            } else {
                let s = Resav2Bdf::new(model, k, opts, &phi0, forcing)?;
                let init = s.initial_state(phi0);
                drive(cfg, &s, init, "phi", s.scale(), write)
            }
        }
        SchemeId::Resav1Cn => {
            let model = MultiComponentModel::new(&grid, p.coupling.clone(), p.sigma0, p.mobility, p.h_minus_one, p.well)?;
            let phi0: Vec<Field<f64>> = (0..model.components())
                .map(|_| scalar_init(cfg, &grid, &mut rng))
                .collect::<Result<_, _>>()?;
            let s = Resav1CnMulti::new(Arc::new(model), opts, &phi0);
            let init = s.initial_state(phi0);
            drive(cfg, &s, init, "phi", s.scale(), write)
        }
        SchemeId::Rmesav1Cn => {
            let phi0 = scalar_init(cfg, &grid, &mut rng)?;
            let model = Pfvm::new(&grid, p.epsilon, p.sigma1, p.sigma2, p.mobility, &phi0)?;
            let s = Rmesav1Cn::new(Arc::new(model), opts, &phi0);
            let init = s.initial_state(phi0);
            drive(cfg, &s, init, "phi", s.scale(), write)
        }
        SchemeId::Flow(pressure, k) => {
            let u0 = flow_init(cfg, &grid, &mut rng)?;
            let projection = match pressure {
                Pressure::Correction => Projection::PressureCorrection,
                Pressure::Poisson => Projection::PressurePoisson,
            };
            let forcing = cfg.manufactured.then(|| manufactured_forcing(&grid, p.nu, cfg.dealias));
            let s = NavierStokes::new(&grid, projection, k, p.nu, opts, cfg.dealias, forcing, &u0)?;
            let init = s.initial_state(u0, 0.0);
            drive(cfg, &s, init, "u", s.scale(), write)
        }
    }
}

/// Exact solution at `t` when the run uses manufactured forcing.
pub fn exact_solution(cfg: &RunConfig, t: f64) -> Result<Vec<Field<f64>>, HarnessError> {
    if !cfg.manufactured {
        return Err(incompatible("reference", "`exact` needs forcing = manufactured"));
    }
    let grid = build_grid(cfg)?;
    Ok(match cfg.model {
        ModelId::NavierStokes => manufactured_velocity(&grid, t),
        _ => vec![exact_profile(&grid, t)],
    })
}

/// `sqrt(sum_i ||a_i - b_i||^2)` with the grid quadrature.
pub fn l2_error(a: &[Field<f64>], b: &[Field<f64>]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sq()).sum::<f64>().sqrt()
}
