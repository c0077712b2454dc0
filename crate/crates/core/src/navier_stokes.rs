//! Incompressible Navier–Stokes on periodic boxes with R-ESAV-2/BDFk time
//! stepping: a pressure-correction scheme and a velocity/pressure-Poisson
//! scheme with projected advection.

use std::sync::Arc;

use num_complex::Complex;
use thiserror::Error;

use crate::integrators::{check_history, ensure_le, SavOptions, StepError, StepReport, TimeScheme};
use crate::savkernel::{bdf_tableau, blend_log, esav2_r_update, relax_esav2, v_poly, LogSav, SavError};
use crate::scalar::Real;
use crate::spectral::{divergence, leray_project, Field, Grid, SpectralField};

/// Body force `f(t)`, one field per velocity component.
pub type VectorForcing<T> = Arc<dyn Fn(T) -> Vec<Field<T>> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("velocity needs {expected} components, got {actual}")]
    Components { expected: usize, actual: usize },
    #[error("viscosity must be positive, got {0}")]
    Viscosity(f64),
    #[error("{0} requires a two-dimensional grid")]
    NeedsPlane(&'static str),
    #[error(transparent)]
    Sav(#[from] SavError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// Momentum solve with the extrapolated pressure, then a projection step
    /// that corrects velocity and pressure.
    PressureCorrection,
    /// Momentum solve with projected advection and forcing; the pressure is
    /// recovered afterwards from its Poisson equation.
    PressurePoisson,
}

/// The energy tracked by the SAV.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowEnergy {
    /// `1/2 ||u||^2`, dissipation `nu ||grad u||^2`.
    Kinetic,
    /// `1/2 ||grad u||^2`, dissipation `nu ||Lap u||^2`; only an energy law
    /// for unforced planar flow.
    Enstrophy,
}

#[derive(Clone, Debug)]
pub struct FlowState<T: Real> {
    pub u: Vec<Field<T>>,
    /// Zero-mean pressure.
    pub p: Field<T>,
    pub log_r: T,
}

pub struct NavierStokes<T: Real> {
    grid: Arc<Grid<T>>,
    projection: Projection,
    order: usize,
    nu: T,
    energy: FlowEnergy,
    opts: SavOptions<T>,
    scale: T,
    dealias: bool,
    forcing: Option<VectorForcing<T>>,
}

fn spectral<T: Real>(u: &[Field<T>]) -> Vec<SpectralField<T>> {
    u.iter().map(|f| f.forward()).collect()
}

fn physical<T: Real>(u: &[SpectralField<T>]) -> Vec<Field<T>> {
    u.iter().map(|f| f.backward()).collect()
}

impl<T: Real> NavierStokes<T> {
    /// The SAV tracks enstrophy for unforced planar flow under
    /// [`Projection::PressurePoisson`] and kinetic energy otherwise.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: &Arc<Grid<T>>,
        projection: Projection,
        order: usize,
        nu: T,
        opts: SavOptions<T>,
        dealias: bool,
        forcing: Option<VectorForcing<T>>,
        u0: &[Field<T>],
    ) -> Result<Self, FlowError> {
        bdf_tableau::<T>(order)?;
        if !(nu > T::zero() && nu.is_finite()) {
            return Err(FlowError::Viscosity(nu.to_f64_lossy()));
        }
        if u0.len() != grid.dim() {
            return Err(FlowError::Components { expected: grid.dim(), actual: u0.len() });
        }
        let energy = if projection == Projection::PressurePoisson && forcing.is_none() && grid.dim() == 2 {
            FlowEnergy::Enstrophy
        } else {
            FlowEnergy::Kinetic
        };
        let mut ns = Self {
            grid: Arc::clone(grid),
            projection,
            order,
            nu,
            energy,
            opts,
            scale: T::one(),
            dealias,
            forcing,
        };
        ns.scale = opts.scale.unwrap_or_else(|| LogSav::default_scale(ns.energy_of(&spectral(u0))));
        Ok(ns)
    }

    pub fn energy_kind(&self) -> FlowEnergy {
        self.energy
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn energy_of(&self, u_hat: &[SpectralField<T>]) -> T {
        let half = T::lit(0.5);
        match self.energy {
            FlowEnergy::Kinetic => half * u_hat.iter().map(|c| c.norm_sq()).sum::<T>(),
            FlowEnergy::Enstrophy => {
                let k2 = self.grid.k_squared_deriv();
                half * u_hat.iter().map(|c| c.weighted_norm_sq(&k2)).sum::<T>()
            }
        }
    }

    /// Unscaled dissipation rate of the tracked energy.
    pub fn dissipation_of(&self, u_hat: &[SpectralField<T>]) -> T {
        let sym: Vec<T> = match self.energy {
            FlowEnergy::Kinetic => self.grid.k_squared_deriv(),
            FlowEnergy::Enstrophy => self.grid.k_squared().iter().map(|&k| k * k).collect(),
        };
        self.nu * u_hat.iter().map(|c| c.weighted_norm_sq(&sym)).sum::<T>()
    }

    /// `(u . grad) u`, evaluated pseudo-spectrally.
    pub fn advection(&self, u_hat: &[SpectralField<T>]) -> Vec<SpectralField<T>> {
        advection(u_hat, self.dealias)
    }

    /// Initial state with the pressure that is consistent with `u0`.
    pub fn initial_state(&self, u0: Vec<Field<T>>, t0: T) -> FlowState<T> {
        let u_hat = spectral(&u0);
        let f = self.forcing.as_ref().map(|f| spectral(&f(t0)));
        let p = self.poisson_pressure(&u_hat, f.as_deref());
        let log_r = self.energy_of(&u_hat) / self.scale;
        FlowState { u: u0, p, log_r }
    }

    /// Solves `Lap p = div(f - (u . grad) u)` with zero mean.
    fn poisson_pressure(&self, u_hat: &[SpectralField<T>], f_hat: Option<&[SpectralField<T>]>) -> Field<T> {
        let mut rhs_vec = self.advection(u_hat);
        for c in rhs_vec.iter_mut() {
            c.scale(-T::one());
        }
        if let Some(f) = f_hat {
            for (r, fc) in rhs_vec.iter_mut().zip(f) {
                r.axpy(T::one(), fc);
            }
        }
        let div = divergence(&rhs_vec);
        inverse_laplacian(&div).backward()
    }

    fn mass(u: &[Field<T>]) -> T {
        u.iter().map(|f| f.values().iter().copied().sum::<T>() * f.grid().cell_volume()).sum()
    }

    fn report(&self, t: T, u_hat: &[SpectralField<T>], u: &[Field<T>], log_r: T, xi: T, theta0: T, gamma: T) -> StepReport<T> {
        StepReport {
            t,
            e_original: self.energy_of(u_hat),
            e_modified: self.scale * log_r,
            log_r,
            log_r2: T::zero(),
            xi,
            theta0,
            gamma,
            dissipation: self.dissipation_of(u_hat),
            mass: Self::mass(u),
            divergence_max: divergence(u_hat).backward().max_abs(),
        }
    }
}

/// `(u . grad) u` with optional 2/3-rule truncation of inputs and output.
pub fn advection<T: Real>(u_hat: &[SpectralField<T>], dealias: bool) -> Vec<SpectralField<T>> {
    let src: Vec<SpectralField<T>> = u_hat
        .iter()
        .map(|c| {
            let mut c = c.clone();
            if dealias {
                c.dealias();
            }
            c
        })
        .collect();
    let u = physical(&src);
    src.iter()
        .map(|ci| {
            let mut acc = Field::zeros(ci.grid());
            for (j, uj) in u.iter().enumerate() {
                let d = ci.derivative(j).backward();
                for ((a, &x), &y) in acc.values_mut().iter_mut().zip(uj.values()).zip(d.values()) {
                    *a = *a + x * y;
                }
            }
            let mut out = acc.forward();
            if dealias {
                out.dealias();
            }
            out
        })
        .collect()
}

/// Mean-free solution of `Lap p = rhs` using the derivative wavenumbers, so
/// that `Lap = div grad` holds exactly at the discrete level.
fn inverse_laplacian<T: Real>(rhs: &SpectralField<T>) -> SpectralField<T> {
    let k2 = rhs.grid().k_squared_deriv();
    let mut out = rhs.clone();
    for (c, &k) in out.coeffs_mut().iter_mut().zip(&k2) {
        *c = if k == T::zero() { Complex::new(T::zero(), T::zero()) } else { *c / (-k) };
    }
    out
}

fn gradient<T: Real>(p_hat: &SpectralField<T>) -> Vec<SpectralField<T>> {
    (0..p_hat.grid().dim()).map(|a| p_hat.derivative(a)).collect()
}

impl<T: Real> TimeScheme<T> for NavierStokes<T> {
    type State = FlowState<T>;

    fn order(&self) -> usize {
        self.order
    }

    fn step(
        &self,
        hist: &[FlowState<T>],
        order: usize,
        dt: T,
        t_new: T,
    ) -> Result<(FlowState<T>, StepReport<T>), StepError> {
        check_history(hist, order)?;
        let tab = bdf_tableau::<T>(order)?;
        let d = self.grid.dim();
        let c = self.scale;
        let inv_dt = T::one() / dt;

        let hats: Vec<Vec<SpectralField<T>>> = hist[..order].iter().map(|s| spectral(&s.u)).collect();
        let combine = |w: &[T], i: usize| {
            let terms: Vec<(T, &SpectralField<T>)> = w.iter().copied().zip(hats.iter().map(|h| &h[i])).collect();
            SpectralField::linear_combination(&terms)
        };
        let u_star: Vec<SpectralField<T>> = (0..d).map(|i| combine(&tab.b_weights, i)).collect();
        let a_u: Vec<SpectralField<T>> = (0..d).map(|i| combine(&tab.a_weights, i)).collect();

        let f_hat = self.forcing.as_ref().map(|f| spectral(&f(t_new)));
        let k_extrap = self.dissipation_of(&u_star) / c;
        let work = match (&f_hat, self.energy) {
            (Some(f), FlowEnergy::Kinetic) => f.iter().zip(&u_star).map(|(a, b)| a.inner_product(b)).sum::<T>() / c,
            _ => T::zero(),
        };
        let log_r_tilde = esav2_r_update(hist[0].log_r, k_extrap, work, dt)?;
        let xi = (log_r_tilde - self.energy_of(&u_star) / c).exp();
        let v = v_poly(order, xi)?;

        let mut nonlinear = self.advection(&u_star);
        let mut body = f_hat.clone();
        if self.projection == Projection::PressurePoisson {
            nonlinear = leray_project(&nonlinear);
            body = body.map(|f| leray_project(&f));
        }
        let k2 = self.grid.k_squared();
        let sym: Vec<T> = k2.iter().map(|&k| tab.alpha * inv_dt + self.nu * k).collect();

        let p_extrap = if self.projection == Projection::PressureCorrection {
            let ps: Vec<&Field<T>> = hist[..tab.p_weights.len()].iter().map(|s| &s.p).collect();
            let terms: Vec<(T, &Field<T>)> = tab.p_weights.iter().copied().zip(ps).collect();
            Some(Field::linear_combination(&terms).forward())
        } else {
            None
        };
        let grad_p = p_extrap.as_ref().map(gradient);

        let mut solved = Vec::with_capacity(d);
        for i in 0..d {
            let mut rhs = a_u[i].clone();
            rhs.scale(inv_dt);
            rhs.axpy(-v, &nonlinear[i]);
            if let Some(g) = &grad_p {
                rhs.axpy(-T::one(), &g[i]);
            }
            if let Some(f) = &body {
                rhs.axpy(T::one(), &f[i]);
            }
            solved.push(rhs.solve_diagonal(&sym)?);
        }

        let (u_hat, p) = match self.projection {
            Projection::PressureCorrection => {
                // alpha (u - u_tilde)/dt + grad psi = 0, div u = 0
                let mut psi = inverse_laplacian(&divergence(&solved));
                psi.scale(tab.alpha * inv_dt);
                let u_hat = leray_project(&solved);
                let mut p_hat = p_extrap.expect("pressure extrapolation");
                p_hat.axpy(T::one(), &psi);
                p_hat.coeffs_mut()[0] = Complex::new(T::zero(), T::zero());
                (u_hat, p_hat.backward())
            }
            Projection::PressurePoisson => {
                let p = self.poisson_pressure(&solved, f_hat.as_deref());
                // exact arithmetic keeps `solved` solenoidal; projecting
                // stops round-off divergence from accumulating over long runs
                (leray_project(&solved), p)
            }
        };
        let u = physical(&u_hat);
        if u.iter().any(|f| !f.is_finite()) || !p.is_finite() {
            return Err(StepError::NonFinite("velocity"));
        }

        let e_new = self.energy_of(&u_hat);
        let e_scaled = e_new / c;
        let k_new = self.dissipation_of(&u_hat) / c;
        let (theta0, gamma, log_r) = if self.opts.relaxed {
            let out = relax_esav2(log_r_tilde, e_scaled, k_new, k_extrap, dt)?;
            (out.theta0, out.gamma, blend_log(out.theta0, log_r_tilde, e_scaled))
        } else {
            (T::one(), T::zero(), log_r_tilde)
        };
        if !log_r.is_finite() {
            return Err(StepError::NonFinite("log_r"));
        }
        let report = self.report(t_new, &u_hat, &u, log_r, xi, theta0, gamma);

        if self.opts.strict {
            let norm = u_hat.iter().map(|c| c.norm_sq()).sum::<T>().sqrt();
            ensure_le("divergence", report.divergence_max, T::lit(1e-10) * norm + T::min_positive_value())?;
            if self.opts.relaxed {
                ensure_le("log_R - E/C", log_r - e_scaled, T::lit(1e-10))?;
            }
            if self.forcing.is_none() {
                let prev = hist[0].log_r;
                ensure_le("ln R increase", log_r - prev, T::lit(1e-10) * (T::one() + prev.abs()))?;
            }
        }
        Ok((FlowState { u, p, log_r }, report))
    }

    fn report_initial(&self, s: &FlowState<T>, t: T) -> StepReport<T> {
        let u_hat = spectral(&s.u);
        StepReport { theta0: T::zero(), ..self.report(t, &u_hat, &s.u, s.log_r, T::one(), T::zero(), T::zero()) }
    }
}

/// Double shear layer on `[0,2]^2`: `u1 = tanh(sigma (y - 1/4))` for
/// `y <= 1/2`, `tanh(sigma (3/4 - y))` above, and `u2 = eps sin(2 pi x)`,
/// projected onto divergence-free fields.
pub fn shear_layer_init<T: Real>(grid: &Arc<Grid<T>>, sigma: T, eps: T) -> Result<Vec<Field<T>>, FlowError> {
    if grid.dim() != 2 {
        return Err(FlowError::NeedsPlane("shear layer"));
    }
    let half = T::lit(0.5);
    let u1 = Field::from_fn(grid, |x| {
        let y = x[1];
        if y <= half {
            (sigma * (y - T::lit(0.25))).tanh()
        } else {
            (sigma * (T::lit(0.75) - y)).tanh()
        }
    });
    let u2 = Field::from_fn(grid, |x| eps * (T::lit(2.0) * T::PI() * x[0]).sin());
    Ok(physical(&leray_project(&[u1.forward(), u2.forward()])))
}

/// `d u2/dx - d u1/dy`.
pub fn vorticity<T: Real>(u: &[Field<T>]) -> Result<Field<T>, FlowError> {
    if u.len() != 2 || u[0].grid().dim() != 2 {
        return Err(FlowError::NeedsPlane("vorticity"));
    }
    let w = SpectralField::linear_combination(&[
        (T::one(), &u[1].forward().derivative(0)),
        (-T::one(), &u[0].forward().derivative(1)),
    ]);
    Ok(w.backward())
}

/// Divergence-free exact solution on `(-1,1)^2`:
/// `u1 = e^t sin^2(pi x) sin(2 pi y)`, `u2 = -e^t sin(2 pi x) sin^2(pi y)`,
/// `p = e^t sin(pi y)`.
pub fn manufactured_velocity<T: Real>(grid: &Arc<Grid<T>>, t: T) -> Vec<Field<T>> {
    let pi = T::PI();
    let two = T::lit(2.0);
    let e = t.exp();
    vec![
        Field::from_fn(grid, |x| e * (pi * x[0]).sin().powi(2) * (two * pi * x[1]).sin()),
        Field::from_fn(grid, |x| -e * (two * pi * x[0]).sin() * (pi * x[1]).sin().powi(2)),
    ]
}

pub fn manufactured_pressure<T: Real>(grid: &Arc<Grid<T>>, t: T) -> Field<T> {
    let e = t.exp();
    Field::from_fn(grid, |x| e * (T::PI() * x[1]).sin())
}

/// `f = u_t + (u . grad) u - nu Lap u + grad p` for the manufactured
/// solution, with spatial operators applied spectrally. The linear terms scale
/// with `e^t` and advection with `e^{2t}`, so the spatial parts are built once.
pub fn manufactured_forcing<T: Real>(grid: &Arc<Grid<T>>, nu: T, dealias: bool) -> VectorForcing<T> {
    let u_hat = spectral(&manufactured_velocity(grid, T::zero()));
    let adv = physical(&advection(&u_hat, dealias));
    let grad_p = gradient(&manufactured_pressure(grid, T::zero()).forward());
    let lap = grid.laplacian_symbol();
    let linear: Vec<Field<T>> = u_hat
        .iter()
        .zip(&grad_p)
        .map(|(c, gp)| {
            let mut f = c.clone();
            f.axpy(-nu, &c.apply_symbol(&lap));
            f.axpy(T::one(), gp);
            f.backward()
        })
        .collect();
    Arc::new(move |t| {
        let (e1, e2) = (t.exp(), (t + t).exp());
        linear
            .iter()
            .zip(&adv)
            .map(|(l, a)| Field::linear_combination(&[(e1, l), (e2, a)]))
            .collect()
    })
}
