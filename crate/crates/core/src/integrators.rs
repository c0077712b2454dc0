//! Time integrators for gradient flows, the bootstrap of multistep histories
//! and the generic run driver.
//!
//! Histories are passed newest first: `hist[0]` is the state at step `n`.

use std::sync::Arc;

use thiserror::Error;

use crate::models::{cholesky, GradientFlow, MultiComponentModel, Pfvm};
use crate::savkernel::{
    bdf_tableau, blend_log, esav2_r_update, relax_esav1, relax_esav2, relax_mesav, v_poly,
    LogSav, SavError,
};
use crate::scalar::Real;
use crate::spectral::{Field, SpectralError, SpectralField};

/// Time-dependent source term added to the right-hand side of a scalar flow.
pub type Forcing<T> = Arc<dyn Fn(T) -> Field<T> + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StepError {
    #[error(transparent)]
    Sav(#[from] SavError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("non-finite {0} after the step")]
    NonFinite(&'static str),
    #[error("invariant violated: {quantity} = {value:e} exceeds bound {bound:e}")]
    Invariant { quantity: &'static str, value: f64, bound: f64 },
    #[error("history holds {got} states, order {order} needs {order}")]
    ShortHistory { got: usize, order: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("step {step} (t = {t}): {source}")]
pub struct RunError {
    pub step: usize,
    pub t: f64,
    #[source]
    pub source: StepError,
}

/// Scheme-independent SAV options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SavOptions<T> {
    /// When false the relaxation factor is pinned to 1 (plain ESAV schemes).
    pub relaxed: bool,
    /// Dissipation-rate parameter of R-ESAV-1 schemes.
    pub gamma: T,
    /// Energy scale `C`; `None` picks `max(1, |E(phi0)|)`.
    pub scale: Option<T>,
    /// Check the discrete invariants after every step.
    pub strict: bool,
}

impl<T: Real> Default for SavOptions<T> {
    fn default() -> Self {
        Self { relaxed: true, gamma: T::one(), scale: None, strict: true }
    }
}

/// One row of a run record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport<T> {
    pub t: T,
    pub e_original: T,
    pub e_modified: T,
    pub log_r: T,
    /// Second SAV for two-SAV schemes, 0 otherwise.
    pub log_r2: T,
    pub xi: T,
    pub theta0: T,
    pub gamma: T,
    pub dissipation: T,
    /// Integral of the phase field, or of the summed velocity components.
    pub mass: T,
    /// Largest pointwise divergence for flows, 0 otherwise.
    pub divergence_max: T,
}

impl<T: Real> StepReport<T> {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.e_original,
            self.e_modified,
            self.log_r,
            self.log_r2,
            self.xi,
            self.theta0,
            self.gamma,
            self.dissipation,
            self.mass,
            self.divergence_max,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A time-stepping scheme over some state type.
pub trait TimeScheme<T: Real>: Send + Sync {
    type State: Clone + Send;

    /// Number of history levels used at full order.
    fn order(&self) -> usize;

    /// Advances `hist[0]` to `t_new` using the formula of the given order
    /// (`order <= self.order()`); lower orders are used while starting up.
    fn step(
        &self,
        hist: &[Self::State],
        order: usize,
        dt: T,
        t_new: T,
    ) -> Result<(Self::State, StepReport<T>), StepError>;

    /// Row describing the initial state.
    fn report_initial(&self, state: &Self::State, t: T) -> StepReport<T>;
}

pub(crate) fn combine<T: Real>(weights: &[T], fields: &[&Field<T>]) -> Field<T> {
    let terms: Vec<(T, &Field<T>)> = weights.iter().copied().zip(fields.iter().copied()).collect();
    Field::linear_combination(&terms)
}

pub(crate) fn ensure_le<T: Real>(quantity: &'static str, value: T, bound: T) -> Result<(), StepError> {
    if value <= bound {
        Ok(())
    } else {
        Err(StepError::Invariant { quantity, value: value.to_f64_lossy(), bound: bound.to_f64_lossy() })
    }
}

pub(crate) fn check_history<S>(hist: &[S], order: usize) -> Result<(), StepError> {
    if hist.len() < order {
        Err(StepError::ShortHistory { got: hist.len(), order })
    } else {
        Ok(())
    }
}

fn slack<T: Real>(e: T) -> T {
    T::lit(1e-10) * (T::one() + e.abs())
}

fn mass<T: Real>(phi: &Field<T>) -> T {
    phi.values().iter().copied().sum::<T>() * phi.grid().cell_volume()
}

/// State of a single-field gradient flow with one SAV.
#[derive(Clone, Debug)]
pub struct GradientState<T: Real> {
    pub phi: Field<T>,
    pub log_r: T,
}

fn resolve_scale<T: Real>(opts: &SavOptions<T>, energy: T) -> T {
    opts.scale.unwrap_or_else(|| LogSav::default_scale(energy))
}

fn check_mean<T: Real>(old: &Field<T>, new: &Field<T>) -> Result<(), StepError> {
    let drift = (new.mean() - old.mean()).abs();
    ensure_le("mean drift", drift, T::lit(1e-13) * (old.mean().abs() + old.max_abs()))
}

/// R-ESAV-1/BDFk (k = 1, 2) for `phi_t = -G mu`.
pub struct Resav1Bdf<T: Real> {
    model: Arc<dyn GradientFlow<T>>,
    order: usize,
    opts: SavOptions<T>,
    scale: T,
    forcing: Option<Forcing<T>>,
}

impl<T: Real> Resav1Bdf<T> {
    pub fn new(
        model: Arc<dyn GradientFlow<T>>,
        order: usize,
        opts: SavOptions<T>,
        phi0: &Field<T>,
        forcing: Option<Forcing<T>>,
    ) -> Result<Self, SavError> {
        if !(1..=2).contains(&order) {
            return Err(SavError::UnsupportedOrder(order));
        }
        let scale = resolve_scale(&opts, model.nonlinear_energy(phi0));
        Ok(Self { model, order, opts, scale, forcing })
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// `ln r0 = E1(phi0) / C`.
    pub fn initial_state(&self, phi0: Field<T>) -> GradientState<T> {
        let log_r = self.model.nonlinear_energy(&phi0) / self.scale;
        GradientState { phi: phi0, log_r }
    }

    fn modified_energy(&self, order: usize, new: &SpectralField<T>, prev: Option<&SpectralField<T>>, lr: T, lr_prev: T) -> T {
        let l = self.model.linear_symbol();
        let c = self.scale;
        match (order, prev) {
            (2, Some(prev)) => {
                let mut two = new.clone();
                two.scale(T::lit(2.0));
                two.axpy(-T::one(), prev);
                T::lit(0.25) * (new.weighted_norm_sq(l) + two.weighted_norm_sq(l))
                    + c * T::lit(0.5) * (T::lit(3.0) * lr - lr_prev)
            }
            _ => T::lit(0.5) * new.weighted_norm_sq(l) + c * lr,
        }
    }
}

impl<T: Real> TimeScheme<T> for Resav1Bdf<T> {
    type State = GradientState<T>;

    fn order(&self) -> usize {
        self.order
    }

    fn step(
        &self,
        hist: &[GradientState<T>],
        order: usize,
        dt: T,
        t_new: T,
    ) -> Result<(GradientState<T>, StepReport<T>), StepError> {
        check_history(hist, order)?;
        let tab = bdf_tableau::<T>(order)?;
        let m = &*self.model;
        let (lin, mob) = (m.linear_symbol(), m.mobility_symbol());
        let c = self.scale;
        let phis: Vec<&Field<T>> = hist[..order].iter().map(|s| &s.phi).collect();
        let lrs: Vec<T> = hist[..order].iter().map(|s| s.log_r).collect();

        let phi_star = combine(&tab.b_weights, &phis);
        let a_phi = combine(&tab.a_weights, &phis);
        let xi = (tab.b_scalar(&lrs) - m.nonlinear_energy(&phi_star) / c).exp();
        let u = &m.nonlinear_gradient(&phi_star) * xi;
        let u_hat = u.forward();

        let inv_dt = T::one() / dt;
        let mut rhs = a_phi.forward();
        rhs.scale(inv_dt);
        rhs.axpy(-T::one(), &u_hat.apply_symbol(mob));
        if let Some(f) = &self.forcing {
            rhs.axpy(T::one(), &f(t_new).forward());
        }
        let sym: Vec<T> = lin.iter().zip(mob).map(|(&l, &g)| tab.alpha * inv_dt + g * l).collect();
        let phi_hat = rhs.solve_diagonal(&sym)?;
        let phi = phi_hat.backward();
        if !phi.is_finite() {
            return Err(StepError::NonFinite("phi"));
        }

        let mut mu_hat = phi_hat.apply_symbol(lin);
        mu_hat.axpy(T::one(), &u_hat);
        let dissipation = mu_hat.weighted_norm_sq(mob);
        let increment = Field::linear_combination(&[(tab.alpha, &phi), (-T::one(), &a_phi)]);
        let log_r_tilde = (tab.a_scalar(&lrs) + u.inner_product(&increment)? / c) / tab.alpha;

        let e1 = m.nonlinear_energy(&phi);
        let e1_scaled = e1 / c;
        let order_factor = if order == 2 { T::lit(2.0 / 3.0) } else { T::one() };
        let (theta0, log_r) = if self.opts.relaxed {
            let out = relax_esav1(log_r_tilde, e1_scaled, dissipation / c, dt, self.opts.gamma, order_factor)?;
            (out.theta0, blend_log(out.theta0, log_r_tilde, e1_scaled))
        } else {
            (T::one(), log_r_tilde)
        };
        if !log_r.is_finite() {
            return Err(StepError::NonFinite("log_r"));
        }

        let prev_hat = if order == 2 { Some(hist[0].phi.forward()) } else { None };
        let e_modified = self.modified_energy(order, &phi_hat, prev_hat.as_ref(), log_r, lrs[0]);
        let e_original = m.quadratic_energy_spectral(&phi_hat) + e1;

        if self.opts.strict {
            if self.opts.relaxed {
                ensure_le("log_r - E1/C", log_r - e1_scaled, T::lit(1e-10))?;
            }
            if self.forcing.is_none() {
                let prev = if order == 2 {
                    let older = hist[1].phi.forward();
                    self.modified_energy(2, prev_hat.as_ref().unwrap(), Some(&older), lrs[0], lrs[1])
                } else {
                    self.modified_energy(1, &hist[0].phi.forward(), None, lrs[0], lrs[0])
                };
                let bound = -dt * (T::one() - self.opts.gamma) * dissipation + slack(prev);
                ensure_le("modified energy change", e_modified - prev, bound)?;
                if m.conserves_mean() {
                    check_mean(&hist[0].phi, &phi)?;
                }
            }
        }

        let report = StepReport {
            t: t_new,
            e_original,
            e_modified,
            log_r,
            log_r2: T::zero(),
            xi,
            theta0,
            gamma: self.opts.gamma,
            dissipation,
            mass: mass(&phi),
            divergence_max: T::zero(),
        };
        Ok((GradientState { phi, log_r }, report))
    }

    fn report_initial(&self, s: &GradientState<T>, t: T) -> StepReport<T> {
        let m = &*self.model;
        let e = m.energy(&s.phi);
        StepReport {
            t,
            e_original: e,
            e_modified: m.quadratic_energy(&s.phi) + self.scale * s.log_r,
            log_r: s.log_r,
            log_r2: T::zero(),
            xi: T::one(),
            theta0: T::zero(),
            gamma: self.opts.gamma,
            dissipation: m.dissipation(&m.chemical_potential(&s.phi)),
            mass: mass(&s.phi),
            divergence_max: T::zero(),
        }
    }
}

/// R-ESAV-2/BDFk (k = 1..4) with `R = exp(E / C)` tracking the total energy.
pub struct Resav2Bdf<T: Real> {
    model: Arc<dyn GradientFlow<T>>,
    order: usize,
    opts: SavOptions<T>,
    scale: T,
    forcing: Option<Forcing<T>>,
}

impl<T: Real> Resav2Bdf<T> {
    pub fn new(
        model: Arc<dyn GradientFlow<T>>,
        order: usize,
        opts: SavOptions<T>,
        phi0: &Field<T>,
        forcing: Option<Forcing<T>>,
    ) -> Result<Self, SavError> {
        bdf_tableau::<T>(order)?;
        let scale = resolve_scale(&opts, model.energy(phi0));
        Ok(Self { model, order, opts, scale, forcing })
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    /// `ln R0 = E(phi0) / C`.
    pub fn initial_state(&self, phi0: Field<T>) -> GradientState<T> {
        let log_r = self.model.energy(&phi0) / self.scale;
        GradientState { phi: phi0, log_r }
    }
}

impl<T: Real> TimeScheme<T> for Resav2Bdf<T> {
    type State = GradientState<T>;

    fn order(&self) -> usize {
        self.order
    }

    fn step(
        &self,
        hist: &[GradientState<T>],
        order: usize,
        dt: T,
        t_new: T,
    ) -> Result<(GradientState<T>, StepReport<T>), StepError> {
        check_history(hist, order)?;
        let tab = bdf_tableau::<T>(order)?;
        let m = &*self.model;
        let (lin, mob) = (m.linear_symbol(), m.mobility_symbol());
        let c = self.scale;
        let phis: Vec<&Field<T>> = hist[..order].iter().map(|s| &s.phi).collect();

        let phi_star = combine(&tab.b_weights, &phis);
        let a_phi = combine(&tab.a_weights, &phis);
        let star_hat = phi_star.forward();
        let grad_star = m.nonlinear_gradient(&phi_star);
        let grad_star_hat = grad_star.forward();
        let mut mu_star = star_hat.apply_symbol(lin);
        mu_star.axpy(T::one(), &grad_star_hat);
        let k_extrap = mu_star.weighted_norm_sq(mob) / c;
        let e_star = m.quadratic_energy_spectral(&star_hat) + m.nonlinear_energy(&phi_star);

        // a source adds (f, mu) to the energy rate
        let f_hat = self.forcing.as_ref().map(|f| f(t_new).forward());
        let work = f_hat.as_ref().map_or(T::zero(), |f| f.inner_product(&mu_star) / c);
        let log_r_tilde = esav2_r_update(hist[0].log_r, k_extrap, work, dt)?;
        let xi = (log_r_tilde - e_star / c).exp();
        let v = v_poly(order, xi)?;

        let inv_dt = T::one() / dt;
        let mut rhs = a_phi.forward();
        rhs.scale(inv_dt);
        rhs.axpy(-v, &grad_star_hat.apply_symbol(mob));
        if let Some(f) = &f_hat {
            rhs.axpy(T::one(), f);
        }
        let sym: Vec<T> = lin.iter().zip(mob).map(|(&l, &g)| tab.alpha * inv_dt + g * l).collect();
        let phi_hat = rhs.solve_diagonal(&sym)?;
        let phi = phi_hat.backward();
        if !phi.is_finite() {
            return Err(StepError::NonFinite("phi"));
        }

        let mut mu_new = phi_hat.apply_symbol(lin);
        mu_new.axpy(T::one(), &m.nonlinear_gradient(&phi).forward());
        let dissipation = mu_new.weighted_norm_sq(mob);
        let k_new = dissipation / c;
        let e_new = m.quadratic_energy_spectral(&phi_hat) + m.nonlinear_energy(&phi);
        let e_scaled = e_new / c;

        let (theta0, gamma, log_r) = if self.opts.relaxed {
            let out = relax_esav2(log_r_tilde, e_scaled, k_new, k_extrap, dt)?;
            (out.theta0, out.gamma, blend_log(out.theta0, log_r_tilde, e_scaled))
        } else {
            (T::one(), T::zero(), log_r_tilde)
        };
        if !log_r.is_finite() {
            return Err(StepError::NonFinite("log_r"));
        }

        if self.opts.strict {
            if self.opts.relaxed {
                ensure_le("log_R - E/C", log_r - e_scaled, T::lit(1e-10))?;
                let lhs = (log_r - log_r_tilde).exp_m1();
                let rhs = dt * (k_extrap - gamma * k_new);
                ensure_le(
                    "relaxation equality residual",
                    (lhs - rhs).abs(),
                    T::lit(1e-10) * (T::one() + lhs.abs().max(rhs.abs())),
                )?;
            }
            if self.forcing.is_none() {
                let prev = hist[0].log_r;
                ensure_le("ln R increase", log_r - prev, T::lit(1e-10) * (T::one() + prev.abs()))?;
                if m.conserves_mean() {
                    check_mean(&hist[0].phi, &phi)?;
                }
            }
        }

        let report = StepReport {
            t: t_new,
            e_original: e_new,
            e_modified: c * log_r,
            log_r,
            log_r2: T::zero(),
            xi,
            theta0,
            gamma,
            dissipation,
            mass: mass(&phi),
            divergence_max: T::zero(),
        };
        Ok((GradientState { phi, log_r }, report))
    }

    fn report_initial(&self, s: &GradientState<T>, t: T) -> StepReport<T> {
        let m = &*self.model;
        StepReport {
            t,
            e_original: m.energy(&s.phi),
            e_modified: self.scale * s.log_r,
            log_r: s.log_r,
            log_r2: T::zero(),
            xi: T::one(),
            theta0: T::zero(),
            gamma: T::zero(),
            dissipation: m.dissipation(&m.chemical_potential(&s.phi)),
            mass: mass(&s.phi),
            divergence_max: T::zero(),
        }
    }
}

/// State of a multi-component flow.
#[derive(Clone, Debug)]
pub struct MultiState<T: Real> {
    pub phi: Vec<Field<T>>,
    pub log_r: T,
}

/// R-ESAV-1/CN for multi-component gradient flows.
pub struct Resav1CnMulti<T: Real> {
    model: Arc<MultiComponentModel<T>>,
    opts: SavOptions<T>,
    scale: T,
}

impl<T: Real> Resav1CnMulti<T> {
    pub fn new(model: Arc<MultiComponentModel<T>>, opts: SavOptions<T>, phi0: &[Field<T>]) -> Self {
        let scale = resolve_scale(&opts, model.nonlinear_energy(phi0));
        Self { model, opts, scale }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn initial_state(&self, phi0: Vec<Field<T>>) -> MultiState<T> {
        let log_r = self.model.nonlinear_energy(&phi0) / self.scale;
        MultiState { phi: phi0, log_r }
    }

    fn modified_energy(&self, hats: &[SpectralField<T>], log_r: T) -> T {
        self.model.quadratic_energy_spectral(hats) + self.scale * log_r
    }
}

/// Solves `(I + s D) x = b` for every mode, where `s` varies per mode and
/// `b` is complex.
fn block_solve<T: Real>(
    coupling: &[Vec<T>],
    mode_scale: &[T],
    rhs: &[SpectralField<T>],
) -> Result<Vec<SpectralField<T>>, StepError> {
    let m = coupling.len();
    let mut out: Vec<SpectralField<T>> = rhs.to_vec();
    let mut mat = vec![vec![T::zero(); m]; m];
    for (mode, &s) in mode_scale.iter().enumerate() {
        for i in 0..m {
            for j in 0..m {
                mat[i][j] = s * coupling[i][j] + if i == j { T::one() } else { T::zero() };
            }
        }
        let l = cholesky(&mat).ok_or(StepError::NonFinite("block matrix factor"))?;
        // forward then backward substitution, complex right-hand side
        let mut y: Vec<num_complex::Complex<T>> = (0..m).map(|i| rhs[i].coeffs()[mode]).collect();
        for i in 0..m {
            for p in 0..i {
                let lp = l[i][p];
                y[i] = y[i] - y[p] * lp;
            }
            y[i] = y[i] / l[i][i];
        }
        for i in (0..m).rev() {
            for p in i + 1..m {
                let lp = l[p][i];
                y[i] = y[i] - y[p] * lp;
            }
            y[i] = y[i] / l[i][i];
        }
        for i in 0..m {
            out[i].coeffs_mut()[mode] = y[i];
        }
    }
    Ok(out)
}

impl<T: Real> TimeScheme<T> for Resav1CnMulti<T> {
    type State = MultiState<T>;

    fn order(&self) -> usize {
        2
    }

    fn step(
        &self,
        hist: &[MultiState<T>],
        order: usize,
        dt: T,
        t_new: T,
    ) -> Result<(MultiState<T>, StepReport<T>), StepError> {
        check_history(hist, order)?;
        let md = &*self.model;
        let (lin, mob) = (md.linear_symbol(), md.mobility_symbol());
        let d = md.coupling();
        let nc = md.components();
        let c = self.scale;
        let half = T::lit(0.5);

        let (phi_star, lr_star): (Vec<Field<T>>, T) = if order >= 2 {
            let w = [T::lit(1.5), -half];
            (
                (0..nc).map(|i| combine(&w, &[&hist[0].phi[i], &hist[1].phi[i]])).collect(),
                w[0] * hist[0].log_r + w[1] * hist[1].log_r,
            )
        } else {
            (hist[0].phi.clone(), hist[0].log_r)
        };
        let xi = (lr_star - md.nonlinear_energy(&phi_star) / c).exp();
        let u: Vec<Field<T>> = md.nonlinear_gradient(&phi_star).iter().map(|g| g * xi).collect();
        let u_hat: Vec<SpectralField<T>> = u.iter().map(|f| f.forward()).collect();
        let old_hat: Vec<SpectralField<T>> = hist[0].phi.iter().map(|f| f.forward()).collect();

        // explicit half: (I - dt/2 G L D) phi^n - dt G U
        let gl: Vec<T> = lin.iter().zip(mob).map(|(&l, &g)| g * l).collect();
        let mut rhs = Vec::with_capacity(nc);
        for i in 0..nc {
            let mut r = old_hat[i].clone();
            for j in 0..nc {
                let mut coup = old_hat[j].apply_symbol(&gl);
                coup.scale(-half * dt * d[i][j]);
                r.axpy(T::one(), &coup);
            }
            r.axpy(-dt, &u_hat[i].apply_symbol(mob));
            rhs.push(r);
        }
        let mode_scale: Vec<T> = gl.iter().map(|&v| half * dt * v).collect();
        let new_hat = block_solve(d, &mode_scale, &rhs)?;
        let phi: Vec<Field<T>> = new_hat.iter().map(|h| h.backward()).collect();
        if phi.iter().any(|f| !f.is_finite()) {
            return Err(StepError::NonFinite("phi"));
        }

        // mu_i^{n+1/2} = sum_j d_ij L (phi_j^{n+1} + phi_j^n)/2 + U_i
        let mut dissipation = T::zero();
        for i in 0..nc {
            let mut mu = u_hat[i].clone();
            for j in 0..nc {
                let mut avg = new_hat[j].clone();
                avg.axpy(T::one(), &old_hat[j]);
                mu.axpy(half * d[i][j], &avg.apply_symbol(lin));
            }
            dissipation = dissipation + mu.weighted_norm_sq(mob);
        }
        let mut work = T::zero();
        for i in 0..nc {
            work = work + u[i].inner_product(&(&phi[i] - &hist[0].phi[i]))?;
        }
        let log_r_tilde = hist[0].log_r + work / c;

        let e1 = md.nonlinear_energy(&phi);
        let e1_scaled = e1 / c;
        let (theta0, log_r) = if self.opts.relaxed {
            let out = relax_esav1(log_r_tilde, e1_scaled, dissipation / c, dt, self.opts.gamma, T::one())?;
            (out.theta0, blend_log(out.theta0, log_r_tilde, e1_scaled))
        } else {
            (T::one(), log_r_tilde)
        };
        if !log_r.is_finite() {
            return Err(StepError::NonFinite("log_r"));
        }
        let e_modified = self.modified_energy(&new_hat, log_r);

        if self.opts.strict {
            if self.opts.relaxed {
                ensure_le("log_r - E1/C", log_r - e1_scaled, T::lit(1e-10))?;
            }
            let prev = self.modified_energy(&old_hat, hist[0].log_r);
            let bound = -dt * (T::one() - self.opts.gamma) * dissipation + slack(prev);
            ensure_le("modified energy change", e_modified - prev, bound)?;
        }

        let report = StepReport {
            t: t_new,
            e_original: md.quadratic_energy_spectral(&new_hat) + e1,
            e_modified,
            log_r,
            log_r2: T::zero(),
            xi,
            theta0,
            gamma: self.opts.gamma,
            dissipation,
            mass: phi.iter().map(mass).sum(),
            divergence_max: T::zero(),
        };
        Ok((MultiState { phi, log_r }, report))
    }

    fn report_initial(&self, s: &MultiState<T>, t: T) -> StepReport<T> {
        let md = &*self.model;
        let mu: Vec<Field<T>> = {
            let hats: Vec<SpectralField<T>> = s.phi.iter().map(|f| f.forward()).collect();
            let grads = md.nonlinear_gradient(&s.phi);
            (0..md.components())
                .map(|i| {
                    let mut acc = grads[i].forward();
                    for (j, h) in hats.iter().enumerate() {
                        acc.axpy(md.coupling()[i][j], &h.apply_symbol(md.linear_symbol()));
                    }
                    acc.backward()
                })
                .collect()
        };
        StepReport {
            t,
            e_original: md.energy(&s.phi),
            e_modified: md.quadratic_energy(&s.phi) + self.scale * s.log_r,
            log_r: s.log_r,
            log_r2: T::zero(),
            xi: T::one(),
            theta0: T::zero(),
            gamma: self.opts.gamma,
            dissipation: md.dissipation(&mu),
            mass: s.phi.iter().map(mass).sum(),
            divergence_max: T::zero(),
        }
    }
}

/// State of the two-SAV vesicle scheme.
#[derive(Clone, Debug)]
pub struct MesavState<T: Real> {
    pub phi: Field<T>,
    pub log_r: [T; 2],
}

/// R-MESAV-1/CN for the vesicle membrane model. Both SAVs share one scale.
pub struct Rmesav1Cn<T: Real> {
    model: Arc<Pfvm<T>>,
    opts: SavOptions<T>,
    scale: T,
}

impl<T: Real> Rmesav1Cn<T> {
    pub fn new(model: Arc<Pfvm<T>>, opts: SavOptions<T>, phi0: &Field<T>) -> Self {
        let t = model.terms(phi0);
        let scale = opts
            .scale
            .unwrap_or_else(|| T::one().max(t.e1.abs()).max(t.e2.abs()));
        Self { model, opts, scale }
    }

    pub fn scale(&self) -> T {
        self.scale
    }

    pub fn initial_state(&self, phi0: Field<T>) -> MesavState<T> {
        let t = self.model.terms(&phi0);
        MesavState { phi: phi0, log_r: [t.e1 / self.scale, t.e2 / self.scale] }
    }

    fn modified_energy(&self, hat: &SpectralField<T>, log_r: [T; 2]) -> T {
        self.model.quadratic_energy_spectral(hat) + self.scale * (log_r[0] + log_r[1])
    }
}

impl<T: Real> TimeScheme<T> for Rmesav1Cn<T> {
    type State = MesavState<T>;

    fn order(&self) -> usize {
        2
    }

    fn step(
        &self,
        hist: &[MesavState<T>],
        order: usize,
        dt: T,
        t_new: T,
    ) -> Result<(MesavState<T>, StepReport<T>), StepError> {
        check_history(hist, order)?;
        let md = &*self.model;
        let (lin, mob) = (md.linear_symbol(), md.mobility_symbol());
        let c = self.scale;
        let half = T::lit(0.5);

        let (phi_star, lr_star) = if order >= 2 {
            let w = [T::lit(1.5), -half];
            (
                combine(&w, &[&hist[0].phi, &hist[1].phi]),
                [
                    w[0] * hist[0].log_r[0] + w[1] * hist[1].log_r[0],
                    w[0] * hist[0].log_r[1] + w[1] * hist[1].log_r[1],
                ],
            )
        } else {
            (hist[0].phi.clone(), hist[0].log_r)
        };
        let star = md.terms(&phi_star);
        let xi = [(lr_star[0] - star.e1 / c).exp(), (lr_star[1] - star.e2 / c).exp()];
        let u1 = &star.mu_e1_part * xi[0];
        let u2 = &star.mu_e2_part * xi[1];
        let u = &u1 + &u2;
        let u_hat = u.forward();
        let old_hat = hist[0].phi.forward();

        let gl: Vec<T> = lin.iter().zip(mob).map(|(&l, &g)| g * l).collect();
        let explicit: Vec<T> = gl.iter().map(|&v| T::one() - half * dt * v).collect();
        let implicit: Vec<T> = gl.iter().map(|&v| T::one() + half * dt * v).collect();
        let mut rhs = old_hat.apply_symbol(&explicit);
        rhs.axpy(-dt, &u_hat.apply_symbol(mob));
        let new_hat = rhs.solve_diagonal(&implicit)?;
        let phi = new_hat.backward();
        if !phi.is_finite() {
            return Err(StepError::NonFinite("phi"));
        }

        let mut mu = new_hat.clone();
        mu.axpy(T::one(), &old_hat);
        let mut mu = mu.apply_symbol(&lin.iter().map(|&l| half * l).collect::<Vec<_>>());
        mu.axpy(T::one(), &u_hat);
        let dissipation = mu.weighted_norm_sq(mob);

        let delta = &phi - &hist[0].phi;
        let lrt = [
            hist[0].log_r[0] + u1.inner_product(&delta)? / c,
            hist[0].log_r[1] + u2.inner_product(&delta)? / c,
        ];
        let new_terms = md.terms(&phi);
        let e = [new_terms.e1 / c, new_terms.e2 / c];
        let (theta0, log_r) = if self.opts.relaxed {
            let a1 = (lrt[0] - e[0]).exp_m1();
            let a2 = (lrt[1] - e[1]).exp_m1();
            let budget = dt * self.opts.gamma * dissipation / c + lrt[0] + lrt[1];
            let c_hat = (budget - e[0] - e[1]).exp();
            let out = relax_mesav(a1, a2, c_hat)?;
            let blended = [blend_log(out.theta0, lrt[0], e[0]), blend_log(out.theta0, lrt[1], e[1])];
            // When E_i sits far above ln r~_i the blend multiplies rounding in
            // 1 - theta by exp(E_i - ln r~_i); theta = 1 is always admissible.
            if blended[0] + blended[1] > budget + T::lit(1e-12) * (T::one() + budget.abs()) {
                (T::one(), lrt)
            } else {
                (out.theta0, blended)
            }
        } else {
            (T::one(), lrt)
        };
        if !(log_r[0].is_finite() && log_r[1].is_finite()) {
            return Err(StepError::NonFinite("log_r"));
        }
        let e_modified = self.modified_energy(&new_hat, log_r);

        if self.opts.strict {
            let prev = self.modified_energy(&old_hat, hist[0].log_r);
            let bound = -dt * (T::one() - self.opts.gamma) * dissipation + slack(prev);
            ensure_le("modified energy change", e_modified - prev, bound)?;
        }

        let report = StepReport {
            t: t_new,
            e_original: md.quadratic_energy_spectral(&new_hat) + new_terms.e1 + new_terms.e2,
            e_modified,
            log_r: log_r[0],
            log_r2: log_r[1],
            xi: xi[0],
            theta0,
            gamma: self.opts.gamma,
            dissipation,
            mass: mass(&phi),
            divergence_max: T::zero(),
        };
        Ok((MesavState { phi, log_r }, report))
    }

    fn report_initial(&self, s: &MesavState<T>, t: T) -> StepReport<T> {
        let md = &*self.model;
        StepReport {
            t,
            e_original: md.energy(&s.phi),
            e_modified: self.modified_energy(&s.phi.forward(), s.log_r),
            log_r: s.log_r[0],
            log_r2: s.log_r[1],
            xi: T::one(),
            theta0: T::zero(),
            gamma: self.opts.gamma,
            dissipation: md.dissipation(&md.chemical_potential(&s.phi)),
            mass: mass(&s.phi),
            divergence_max: T::zero(),
        }
    }
}

/// Target starting error relative to `dt^order`.
pub const START_ACCURACY: f64 = 1e-2;

/// Floor on the starting error in units of machine epsilon; tighter targets
/// only cost substeps once rounding dominates.
pub const START_FLOOR_ULPS: f64 = 1e3;

/// Starting states (newest first) and the reports of the non-initial ones.
pub type StartHistory<T, S> = (Vec<S>, Vec<StepReport<T>>);

/// Builds the `order`-level starting history (newest first) for a multistep
/// scheme. Level `j` is produced by order-`(j-1)` steps on a substep small
/// enough that the starting error is `O(dt^order)`; the lower levels are
/// started the same way, recursively.
///
/// Returns the history together with the reports of the states at
/// `t0 + dt, ..., t0 + (order-1) dt`, oldest first.
pub fn start_history<T: Real, S: TimeScheme<T>>(
    scheme: &S,
    init: S::State,
    order: usize,
    dt: T,
    t0: T,
) -> Result<StartHistory<T, S::State>, RunError> {
    let eps = (dt.powi(order as i32) * T::lit(START_ACCURACY)).max(T::epsilon() * T::lit(START_FLOOR_ULPS));
    build_levels(scheme, init, order, dt, t0, eps)
}

fn build_levels<T: Real, S: TimeScheme<T>>(
    scheme: &S,
    init: S::State,
    levels: usize,
    h: T,
    t0: T,
    eps: T,
) -> Result<StartHistory<T, S::State>, RunError> {
    if levels <= 1 {
        return Ok((vec![init], Vec::new()));
    }
    let inner = levels - 1;
    let ratio = (h.powi(levels as i32) / eps).powf(T::one() / T::from_count(inner));
    let m = ratio.ceil().to_f64_lossy().clamp(1.0, 1e7) as usize;
    let s = h / T::from_count(m);

    let (mut hist, inner_reports) = build_levels(scheme, init.clone(), inner, s, t0, eps)?;
    let mut samples = vec![init];
    let mut reports = Vec::new();
    // states already in `hist` sit at substep indices 0..inner-1
    for (idx, rep) in inner_reports.into_iter().enumerate() {
        let idx = idx + 1;
        if idx.is_multiple_of(m) && idx / m < levels {
            samples.push(hist[inner - 1 - idx].clone());
            reports.push(rep);
        }
    }
    let mut idx = inner - 1;
    while idx < (levels - 1) * m {
        idx += 1;
        let t_new = t0 + T::from_count(idx) * s;
        let (next, rep) = scheme.step(&hist, inner, s, t_new).map_err(|source| RunError {
            step: idx,
            t: t_new.to_f64_lossy(),
            source,
        })?;
        hist.insert(0, next);
        hist.truncate(inner);
        if idx.is_multiple_of(m) {
            samples.push(hist[0].clone());
            reports.push(StepReport { t: t0 + T::from_count(idx / m) * h, ..rep });
        }
    }
    samples.reverse();
    Ok((samples, reports))
}

/// Per-step time series of a run.
#[derive(Clone, Debug, Default)]
pub struct RunRecord<T> {
    pub rows: Vec<StepReport<T>>,
}

/// Number of steps of size `dt` needed to reach `t_final`.
pub fn step_count<T: Real>(dt: T, t_final: T) -> usize {
    (t_final / dt).round().to_f64_lossy().max(0.0) as usize
}

/// Advances `init` from `t0` through `steps` steps of size `dt`, calling
/// `observe(step_index, t, state)` for the initial state and every new one.
pub fn run_steps<T: Real, S: TimeScheme<T>>(
    scheme: &S,
    init: S::State,
    dt: T,
    t0: T,
    steps: usize,
    mut observe: impl FnMut(usize, T, &S::State),
) -> Result<(S::State, RunRecord<T>), RunError> {
    let mut record = RunRecord { rows: vec![scheme.report_initial(&init, t0)] };
    observe(0, t0, &init);
    let order = scheme.order().min(steps + 1).max(1);
    let (mut hist, boot_reports) = start_history(scheme, init, order, dt, t0)?;
    // `hist` is newest first; replay the starting states in time order
    for (i, rep) in boot_reports.into_iter().enumerate() {
        let state = &hist[order - 2 - i];
        observe(i + 1, rep.t, state);
        record.rows.push(rep);
    }
    let full = scheme.order();
    let mut n = order - 1;
    while n < steps {
        let t_new = t0 + T::from_count(n + 1) * dt;
        let o = full.min(hist.len());
        let (next, rep) = scheme.step(&hist, o, dt, t_new).map_err(|source| RunError {
            step: n + 1,
            t: t_new.to_f64_lossy(),
            source,
        })?;
        n += 1;
        observe(n, t_new, &next);
        record.rows.push(rep);
        hist.insert(0, next);
        hist.truncate(full);
    }
    Ok((hist.swap_remove(0), record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ModelSpec;
    use crate::spectral::Grid;
    use std::f64::consts::PI;

    fn ac(n: usize) -> (Arc<Grid<f64>>, Arc<dyn GradientFlow<f64>>) {
        let g = Grid::new(&[n, n], &[2.0, 2.0]).unwrap();
        let m: Arc<dyn GradientFlow<f64>> = Arc::new(ModelSpec::allen_cahn(&g, 0.01, 1.0).unwrap());
        (g, m)
    }

    fn bump(g: &Arc<Grid<f64>>) -> Field<f64> {
        Field::from_fn(g, |x| 0.5 * (PI * x[0]).sin() * (PI * x[1]).cos() + 0.1)
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let (g, m) = ac(8);
        let one = Field::constant(&g, 1.0);
        for k in 1..=2 {
            let s = Resav1Bdf::new(m.clone(), k, SavOptions::default(), &one, None).unwrap();
            let init = s.initial_state(one.clone());
            let (next, rep) = s.step(&vec![init.clone(); k], k, 0.1, 0.1).unwrap();
            assert!((&next.phi - &one).max_abs() < 1e-12);
            assert_eq!(rep.theta0, 0.0);
        }
        for k in 1..=4 {
            let s = Resav2Bdf::new(m.clone(), k, SavOptions::default(), &one, None).unwrap();
            let init = s.initial_state(one.clone());
            let (next, rep) = s.step(&vec![init.clone(); k], k, 0.1, 0.1).unwrap();
            assert!((&next.phi - &one).max_abs() < 1e-12);
            assert!((rep.xi - 1.0).abs() < 1e-12);
        }
    }

    /// Straight-line evaluation of one R-ESAV-1/BDF1 step with dense loops.
    #[test]
    fn resav1_bdf1_matches_dense_rederivation() {
        let n = 8;
        let (g, m) = ac(n);
        let phi0 = bump(&g);
        let opts = SavOptions { relaxed: false, ..SavOptions::default() };
        let s = Resav1Bdf::new(m.clone(), 1, opts, &phi0, None).unwrap();
        let init = s.initial_state(phi0.clone());
        let dt = 0.05;
        let (next, _) = s.step(&[init.clone()], 1, dt, dt).unwrap();

        // dense oracle: Fourier matrix on 8x8 via explicit DFT sums
        let sigma0 = 0.01;
        let c = s.scale();
        let h = 2.0 / n as f64;
        let vals = phi0.values();
        let e1: f64 = vals.iter().map(|&v| 0.25 * (1.0 - v * v).powi(2)).sum::<f64>() * h * h;
        let xi = (init.log_r - e1 / c).exp();
        let rhs: Vec<f64> = vals.iter().map(|&v| v / dt - xi * (v * v * v - v)).collect();
        let kk = |i: usize| {
            let m = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
            PI * m
        };
        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let (mut re, mut im) = (0.0, 0.0);
                for p in 0..n {
                    for q in 0..n {
                        let ang = -2.0 * PI * ((a * p) as f64 + (b * q) as f64) / n as f64;
                        re += rhs[p * n + q] * ang.cos();
                        im += rhs[p * n + q] * ang.sin();
                    }
                }
                let sym = 1.0 / dt + sigma0 * (kk(a).powi(2) + kk(b).powi(2));
                let (re, im) = (re / sym, im / sym);
                for p in 0..n {
                    for q in 0..n {
                        let ang = 2.0 * PI * ((a * p) as f64 + (b * q) as f64) / n as f64;
                        out[p * n + q] += (re * ang.cos() - im * ang.sin()) / (n * n) as f64;
                    }
                }
            }
        }
        let max = out.iter().zip(next.phi.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-12, "max deviation {max}");
    }

    #[test]
    fn unrelaxed_resav2_keeps_log_r_tilde() {
        let (g, m) = ac(16);
        let phi0 = bump(&g);
        let opts = SavOptions { relaxed: false, ..SavOptions::default() };
        let s = Resav2Bdf::new(m, 1, opts, &phi0, None).unwrap();
        let init = s.initial_state(phi0);
        let (next, rep) = s.step(&[init.clone()], 1, 0.01, 0.01).unwrap();
        assert_eq!(rep.theta0, 1.0);
        assert!(next.log_r <= init.log_r);
    }

    #[test]
    fn zero_steps_gives_single_row() {
        let (g, m) = ac(8);
        let phi0 = bump(&g);
        let s = Resav2Bdf::new(m, 2, SavOptions::default(), &phi0, None).unwrap();
        let init = s.initial_state(phi0);
        let (_, rec) = run_steps(&s, init, 0.1, 0.0, 0, |_, _, _| {}).unwrap();
        assert_eq!(rec.rows.len(), 1);
    }

    #[test]
    fn run_produces_one_row_per_step_and_monotone_energy() {
        let (g, m) = ac(16);
        let phi0 = bump(&g);
        for k in 1..=4 {
            let s = Resav2Bdf::new(m.clone(), k, SavOptions::default(), &phi0, None).unwrap();
            let init = s.initial_state(phi0.clone());
            let mut seen = Vec::new();
            let (_, rec) = run_steps(&s, init, 0.05, 0.0, 20, |i, t, _| seen.push((i, t))).unwrap();
            assert_eq!(rec.rows.len(), 21);
            assert_eq!(seen.len(), 21);
            for (i, (idx, t)) in seen.iter().enumerate() {
                assert_eq!(*idx, i);
                assert!((t - 0.05 * i as f64).abs() < 1e-12);
                assert!((rec.rows[i].t - t).abs() < 1e-12);
            }
            for w in rec.rows.windows(2) {
                assert!(w[1].log_r <= w[0].log_r + 1e-10);
            }
        }
    }

    #[test]
    fn bootstrap_k1_is_initial_state() {
        let (g, m) = ac(8);
        let phi0 = bump(&g);
        let s = Resav1Bdf::new(m, 1, SavOptions::default(), &phi0, None).unwrap();
        let init = s.initial_state(phi0.clone());
        let (h, reps) = start_history(&s, init.clone(), 1, 0.1, 0.0).unwrap();
        assert_eq!(h.len(), 1);
        assert!(reps.is_empty());
        assert_eq!(h[0].phi.values(), phi0.values());
        let e1 = ModelSpec::allen_cahn(&g, 0.01, 1.0).unwrap().nonlinear_energy(&phi0);
        assert_eq!(init.log_r, e1 / s.scale());
    }

    #[test]
    fn cn_single_component_matches_scalar_oracle() {
        let g = Grid::new(&[16, 16], &[2.0, 2.0]).unwrap();
        let sigma0 = 0.01;
        let mm = Arc::new(MultiComponentModel::new(&g, vec![vec![1.0]], sigma0, 1.0, false, 1.0).unwrap());
        let phi0 = bump(&g);
        let opts = SavOptions { relaxed: false, ..SavOptions::default() };
        let s = Resav1CnMulti::new(mm, opts, &[phi0.clone()]);
        let init = s.initial_state(vec![phi0.clone()]);
        let dt = 0.02;
        let (next, _) = s.step(&[init.clone()], 1, dt, dt).unwrap();

        // oracle: scalar CN with explicit U at phi^n
        let ac = ModelSpec::allen_cahn(&g, sigma0, 1.0).unwrap();
        let xi = (init.log_r - ac.nonlinear_energy(&phi0) / s.scale()).exp();
        let u = &ac.nonlinear_gradient(&phi0) * xi;
        let lin = ac.linear_symbol();
        let mut rhs = phi0.forward().apply_symbol(&lin.iter().map(|&l| 1.0 - 0.5 * dt * l).collect::<Vec<_>>());
        rhs.axpy(-dt, &u.forward());
        let expect = rhs.solve_diagonal(&lin.iter().map(|&l| 1.0 + 0.5 * dt * l).collect::<Vec<_>>()).unwrap().backward();
        assert!((&next.phi[0] - &expect).max_abs() < 1e-12);
    }

    #[test]
    fn cn_block_decoupling() {
        let g = Grid::new(&[16, 16], &[2.0, 2.0]).unwrap();
        let d = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        let mm = Arc::new(MultiComponentModel::new(&g, d, 0.01, 1.0, false, 1.0).unwrap());
        let single = Arc::new(MultiComponentModel::new(&g, vec![vec![1.0]], 0.01, 1.0, false, 1.0).unwrap());
        let phi0 = bump(&g);
        let one = Field::constant(&g, 1.0);
        let opts = SavOptions { scale: Some(1.0), ..SavOptions::default() };
        let two = Resav1CnMulti::new(mm, opts, &[phi0.clone(), one.clone()]);
        let one_c = Resav1CnMulti::new(single, opts, &[phi0.clone()]);
        let (a, _) = run_steps(&two, two.initial_state(vec![phi0.clone(), one.clone()]), 0.01, 0.0, 10, |_, _, _| {}).unwrap();
        let (b, _) = run_steps(&one_c, one_c.initial_state(vec![phi0.clone()]), 0.01, 0.0, 10, |_, _, _| {}).unwrap();
        assert!((&a.phi[0] - &b.phi[0]).max_abs() < 1e-12);
        assert!((&a.phi[1] - &one).max_abs() < 1e-12);
    }

    #[test]
    fn cn_coupled_energy_decreases() {
        let g = Grid::new(&[16, 16], &[2.0, 2.0]).unwrap();
        let d = vec![vec![2.0, 0.7], vec![0.7, 1.0]];
        let mm = Arc::new(MultiComponentModel::new(&g, d, 0.01, 1.0, true, 1.0).unwrap());
        let p1 = bump(&g);
        let p2 = Field::from_fn(&g, |x| 0.3 * (PI * x[1]).sin());
        let s = Resav1CnMulti::new(mm, SavOptions::default(), &[p1.clone(), p2.clone()]);
        let (_, rec) = run_steps(&s, s.initial_state(vec![p1, p2]), 0.01, 0.0, 100, |_, _, _| {}).unwrap();
        for w in rec.rows.windows(2).skip(1) {
            assert!(w[1].e_modified <= w[0].e_modified + 1e-10 * (1.0 + w[0].e_modified.abs()));
        }
    }

    #[test]
    fn mesav_equilibrium_is_fixed() {
        let g = Grid::new(&[8, 8, 8], &[2.0 * PI; 3]).unwrap();
        let one = Field::constant(&g, 1.0);
        let m = Arc::new(Pfvm::new(&g, 0.5, 0.01, 0.01, 1.0, &one).unwrap());
        let s = Rmesav1Cn::new(m, SavOptions::default(), &one);
        let init = s.initial_state(one.clone());
        let (next, rep) = s.step(&[init.clone(), init], 2, 1e-3, 1e-3).unwrap();
        assert_eq!(rep.theta0, 0.0);
        assert!((&next.phi - &one).max_abs() < 1e-10);
    }
}
