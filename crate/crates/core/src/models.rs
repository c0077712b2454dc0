//! Gradient-flow models: linear and mobility symbols, nonlinear energies and
//! their variational derivatives.

use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Real;
use crate::spectral::{Field, Grid, SpectralField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("parameter {name} = {value} must be {requirement}")]
    BadParameter { name: &'static str, value: f64, requirement: &'static str },
    #[error("coupling matrix must be {0}")]
    BadCoupling(&'static str),
}

fn positive<T: Real>(name: &'static str, v: T) -> Result<T, ModelError> {
    if v > T::zero() && v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::BadParameter { name, value: v.to_f64_lossy(), requirement: "positive" })
    }
}

fn finite<T: Real>(name: &'static str, v: T) -> Result<T, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::BadParameter { name, value: v.to_f64_lossy(), requirement: "finite" })
    }
}

/// A gradient flow `phi_t = -G mu`, `mu = L phi + F'(phi)`, on a periodic grid,
/// with energy `1/2 (L phi, phi) + E1(phi)`.
pub trait GradientFlow<T: Real>: Send + Sync {
    fn grid(&self) -> &Arc<Grid<T>>;
    /// Per-mode symbol of the self-adjoint linear part `L`.
    fn linear_symbol(&self) -> &[T];
    /// Per-mode symbol of the mobility operator `G`.
    fn mobility_symbol(&self) -> &[T];
    /// Nonlinear energy `E1(phi)`.
    fn nonlinear_energy(&self, phi: &Field<T>) -> T;
    /// Variational derivative of `E1`.
    fn nonlinear_gradient(&self, phi: &Field<T>) -> Field<T>;

    fn quadratic_energy(&self, phi: &Field<T>) -> T {
        self.quadratic_energy_spectral(&phi.forward())
    }

    fn quadratic_energy_spectral(&self, phi_hat: &SpectralField<T>) -> T {
        T::lit(0.5) * phi_hat.weighted_norm_sq(self.linear_symbol())
    }

    fn energy(&self, phi: &Field<T>) -> T {
        self.quadratic_energy(phi) + self.nonlinear_energy(phi)
    }

    fn chemical_potential(&self, phi: &Field<T>) -> Field<T> {
        let lin = phi.forward().apply_symbol(self.linear_symbol()).backward();
        &lin + &self.nonlinear_gradient(phi)
    }

    /// `(G mu, mu)`.
    fn dissipation(&self, mu: &Field<T>) -> T {
        mu.forward().weighted_norm_sq(self.mobility_symbol())
    }

    /// True when the mean mode is not moved by the flow.
    fn conserves_mean(&self) -> bool {
        self.mobility_symbol()[0] == T::zero()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    AllenCahn,
    CahnHilliard,
    PhaseFieldCrystal,
}

/// Allen–Cahn, Cahn–Hilliard and phase-field crystal models.
#[derive(Clone, Debug)]
pub struct ModelSpec<T: Real> {
    kind: ModelKind,
    grid: Arc<Grid<T>>,
    linear: Vec<T>,
    mobility: Vec<T>,
    /// Double-well prefactor (AC/CH) or the PFC `epsilon`.
    well: T,
}

impl<T: Real> ModelSpec<T> {
    /// `phi_t = -M (-sigma0 Lap phi + phi^3 - phi)`.
    pub fn allen_cahn(grid: &Arc<Grid<T>>, sigma0: T, mobility: T) -> Result<Self, ModelError> {
        let sigma0 = positive("sigma0", sigma0)?;
        let m = positive("mobility", mobility)?;
        Ok(Self {
            kind: ModelKind::AllenCahn,
            grid: Arc::clone(grid),
            linear: grid.k_squared().iter().map(|&k| sigma0 * k).collect(),
            mobility: vec![m; grid.len()],
            well: T::one(),
        })
    }

    /// `phi_t = M Lap(-sigma0 Lap phi + (phi^3 - phi) / epsilon^2)`.
    pub fn cahn_hilliard(
        grid: &Arc<Grid<T>>,
        sigma0: T,
        mobility: T,
        epsilon: T,
    ) -> Result<Self, ModelError> {
        let sigma0 = positive("sigma0", sigma0)?;
        let m = positive("mobility", mobility)?;
        let eps = positive("epsilon", epsilon)?;
        Ok(Self {
            kind: ModelKind::CahnHilliard,
            grid: Arc::clone(grid),
            linear: grid.k_squared().iter().map(|&k| sigma0 * k).collect(),
            mobility: grid.k_squared().iter().map(|&k| m * k).collect(),
            well: T::one() / (eps * eps),
        })
    }

    /// `phi_t = M Lap((Lap + zeta)^2 phi + phi^3 - epsilon phi)`.
    pub fn phase_field_crystal(
        grid: &Arc<Grid<T>>,
        zeta: T,
        epsilon: T,
        mobility: T,
    ) -> Result<Self, ModelError> {
        let zeta = finite("zeta", zeta)?;
        let eps = finite("epsilon", epsilon)?;
        let m = positive("mobility", mobility)?;
        Ok(Self {
            kind: ModelKind::PhaseFieldCrystal,
            grid: Arc::clone(grid),
            linear: grid.k_squared().iter().map(|&k| (zeta - k) * (zeta - k)).collect(),
            mobility: grid.k_squared().iter().map(|&k| m * k).collect(),
            well: eps,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    /// Pointwise nonlinear density `F(phi)`.
    pub fn density(&self, v: T) -> T {
        match self.kind {
            ModelKind::AllenCahn | ModelKind::CahnHilliard => {
                let s = T::one() - v * v;
                self.well * T::lit(0.25) * s * s
            }
            ModelKind::PhaseFieldCrystal => {
                let v2 = v * v;
                T::lit(0.25) * v2 * v2 - T::lit(0.5) * self.well * v2
            }
        }
    }

    /// Pointwise `F'(phi)`.
    pub fn density_derivative(&self, v: T) -> T {
        match self.kind {
            ModelKind::AllenCahn | ModelKind::CahnHilliard => self.well * (v * v * v - v),
            ModelKind::PhaseFieldCrystal => v * v * v - self.well * v,
        }
    }
}

impl<T: Real> GradientFlow<T> for ModelSpec<T> {
    fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    fn linear_symbol(&self) -> &[T] {
        &self.linear
    }

    fn mobility_symbol(&self) -> &[T] {
        &self.mobility
    }

    fn nonlinear_energy(&self, phi: &Field<T>) -> T {
        phi.values().iter().map(|&v| self.density(v)).sum::<T>() * self.grid.cell_volume()
    }

    fn nonlinear_gradient(&self, phi: &Field<T>) -> Field<T> {
        phi.map(|v| self.density_derivative(v))
    }
}

/// Multi-component flow with `mu_i = sum_j d_ij L phi_j + F'(phi_i)` and a
/// common mobility, `F` the double well scaled by `well`.
#[derive(Clone, Debug)]
pub struct MultiComponentModel<T: Real> {
    grid: Arc<Grid<T>>,
    coupling: Vec<Vec<T>>,
    linear: Vec<T>,
    mobility: Vec<T>,
    well: T,
}

impl<T: Real> MultiComponentModel<T> {
    /// `L = sigma0 |k|^2`; `mobility_h_minus_one` selects `G = M |k|^2`
    /// instead of `G = M`.
    pub fn new(
        grid: &Arc<Grid<T>>,
        coupling: Vec<Vec<T>>,
        sigma0: T,
        mobility: T,
        mobility_h_minus_one: bool,
        well: T,
    ) -> Result<Self, ModelError> {
        let m = coupling.len();
        if m == 0 || coupling.iter().any(|row| row.len() != m) {
            return Err(ModelError::BadCoupling("square and non-empty"));
        }
        for i in 0..m {
            for j in 0..i {
                if (coupling[i][j] - coupling[j][i]).abs()
                    > T::lit(1e-14) * (T::one() + coupling[i][j].abs())
                {
                    return Err(ModelError::BadCoupling("symmetric"));
                }
            }
        }
        if cholesky(&coupling).is_none() {
            return Err(ModelError::BadCoupling("positive definite"));
        }
        let sigma0 = positive("sigma0", sigma0)?;
        let mob = positive("mobility", mobility)?;
        let well = positive("well", well)?;
        Ok(Self {
            grid: Arc::clone(grid),
            coupling,
            linear: grid.k_squared().iter().map(|&k| sigma0 * k).collect(),
            mobility: grid
                .k_squared()
                .iter()
                .map(|&k| if mobility_h_minus_one { mob * k } else { mob })
                .collect(),
            well,
        })
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.coupling.len()
    }

    pub fn coupling(&self) -> &[Vec<T>] {
        &self.coupling
    }

    pub fn linear_symbol(&self) -> &[T] {
        &self.linear
    }

    pub fn mobility_symbol(&self) -> &[T] {
        &self.mobility
    }

    pub fn nonlinear_energy(&self, phi: &[Field<T>]) -> T {
        let q = T::lit(0.25) * self.well;
        phi.iter()
            .map(|f| f.values().iter().map(|&v| { let s = T::one() - v * v; q * s * s }).sum::<T>())
            .sum::<T>()
            * self.grid.cell_volume()
    }

    pub fn nonlinear_gradient(&self, phi: &[Field<T>]) -> Vec<Field<T>> {
        phi.iter().map(|f| f.map(|v| self.well * (v * v * v - v))).collect()
    }

    /// `1/2 sum_ij d_ij (L phi_j, phi_i)`.
    pub fn quadratic_energy(&self, phi: &[Field<T>]) -> T {
        let hats: Vec<SpectralField<T>> = phi.iter().map(|f| f.forward()).collect();
        self.quadratic_energy_spectral(&hats)
    }

    pub fn quadratic_energy_spectral(&self, hats: &[SpectralField<T>]) -> T {
        let mut e = T::zero();
        for (i, hi) in hats.iter().enumerate() {
            let lhi = hi.apply_symbol(&self.linear);
            for (j, hj) in hats.iter().enumerate() {
                e = e + self.coupling[i][j] * lhi.inner_product(hj);
            }
        }
        T::lit(0.5) * e
    }

    pub fn energy(&self, phi: &[Field<T>]) -> T {
        self.quadratic_energy(phi) + self.nonlinear_energy(phi)
    }

    /// `sum_i (G mu_i, mu_i)`.
    pub fn dissipation(&self, mu: &[Field<T>]) -> T {
        mu.iter().map(|m| m.forward().weighted_norm_sq(&self.mobility)).sum()
    }
}

/// Lower Cholesky factor of a small dense SPD matrix, `None` if not SPD.
pub fn cholesky<T: Real>(a: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    let n = a.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s = (0..j).fold(a[i][j], |acc, p| acc - l[i][p] * l[j][p]);
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Parameters of the phase-field vesicle membrane model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PfvmSpec<T> {
    pub epsilon: T,
    pub sigma1: T,
    pub sigma2: T,
    pub mobility: T,
    /// Reference volume, captured from the initial state.
    pub v0: T,
    /// Reference surface area, captured from the initial state.
    pub s0: T,
}

/// Derived quantities of the vesicle energy at one state.
#[derive(Clone, Debug)]
pub struct PfvmTerms<T: Real> {
    pub h: Field<T>,
    pub bending: T,
    pub volume: T,
    pub surface: T,
    /// `E1 = E_b - eps/2 ||Lap phi||^2 + ((V - v0)^2 - (int phi)^2) / (2 sigma1)`,
    /// i.e. the energy minus its quadratic part `1/2 (L phi, phi)`.
    pub e1: T,
    /// `E2 = (S - s0)^2 / (2 sigma2)`.
    pub e2: T,
    pub mu_e1_part: Field<T>,
    pub mu_e2_part: Field<T>,
}

/// Vesicle membrane flow `phi_t = -M mu`. `L` holds `eps Lap^2` and the
/// quadratic part of the volume penalty; the rest of the energy is split into
/// a bending/volume part and a surface part.
#[derive(Clone, Debug)]
pub struct Pfvm<T: Real> {
    grid: Arc<Grid<T>>,
    spec: PfvmSpec<T>,
    linear: Vec<T>,
    mobility: Vec<T>,
}

impl<T: Real> Pfvm<T> {
    /// Builds the model and records `v0`, `s0` from `phi0`.
    pub fn new(
        grid: &Arc<Grid<T>>,
        epsilon: T,
        sigma1: T,
        sigma2: T,
        mobility: T,
        phi0: &Field<T>,
    ) -> Result<Self, ModelError> {
        let mut spec = PfvmSpec {
            epsilon: positive("epsilon", epsilon)?,
            sigma1: positive("sigma1", sigma1)?,
            sigma2: positive("sigma2", sigma2)?,
            mobility: positive("mobility", mobility)?,
            v0: T::zero(),
            s0: T::zero(),
        };
        let mut model = Self {
            grid: Arc::clone(grid),
            spec,
            linear: pfvm_linear(grid, epsilon, sigma1),
            mobility: vec![spec.mobility; grid.len()],
        };
        spec.v0 = model.volume(phi0);
        spec.s0 = model.surface(&phi0.forward(), phi0);
        model.spec = spec;
        Ok(model)
    }

    pub fn spec(&self) -> &PfvmSpec<T> {
        &self.spec
    }

    /// `V = int (phi + 1)`.
    pub fn volume(&self, phi: &Field<T>) -> T {
        phi.values().iter().map(|&v| v + T::one()).sum::<T>() * self.grid.cell_volume()
    }

    /// `S = int (eps/2 |grad phi|^2 + F(phi)/eps)`, with `|grad phi|^2`
    /// integrated as `(-Lap phi, phi)`.
    fn surface(&self, phi_hat: &SpectralField<T>, phi: &Field<T>) -> T {
        let eps = self.spec.epsilon;
        let grad = phi_hat.weighted_norm_sq(self.grid.k_squared());
        let f: T = phi.values().iter().map(|&v| well(v)).sum::<T>() * self.grid.cell_volume();
        T::lit(0.5) * eps * grad + f / eps
    }

    pub fn terms(&self, phi: &Field<T>) -> PfvmTerms<T> {
        let PfvmSpec { epsilon: eps, sigma1, sigma2, v0, s0, .. } = self.spec;
        let vol = self.grid.cell_volume();
        let lap = self.grid.laplacian_symbol();
        let phi_hat = phi.forward();
        let lap_phi = phi_hat.apply_symbol(&lap).backward();
        let g = phi.map(well_prime);
        let inv_eps2 = T::one() / (eps * eps);
        let h = lap_phi.zip_map(&g, |l, gv| -l + gv * inv_eps2);
        let bending = T::lit(0.5) * eps * h.values().iter().map(|&v| v * v).sum::<T>() * vol;
        let lap_sq = phi_hat.weighted_norm_sq(
            &self.grid.k_squared().iter().map(|&k| k * k).collect::<Vec<_>>(),
        );
        let volume = self.volume(phi);
        let surface = self.surface(&phi_hat, phi);
        let dv = volume - v0;
        let ds = surface - s0;
        let mass = phi.values().iter().copied().sum::<T>() * vol;
        let e1 = bending - T::lit(0.5) * eps * lap_sq + (dv * dv - mass * mass) / (sigma1 + sigma1);
        let e2 = ds * ds / (sigma2 + sigma2);

        let lap_g = g.forward().apply_symbol(&lap).backward();
        let inv_eps = T::one() / eps;
        let shift = (dv - mass) / sigma1;
        let mut mu1 = Field::zeros(&self.grid);
        for (((m, &lg), &p), &hv) in mu1
            .values_mut()
            .iter_mut()
            .zip(lap_g.values())
            .zip(phi.values())
            .zip(h.values())
        {
            *m = -inv_eps * lg + inv_eps * well_second(p) * hv + shift;
        }
        let pref = ds / sigma2;
        let mu2 = lap_phi.zip_map(phi, |l, p| pref * (-eps * l + inv_eps * well_prime(p)));
        PfvmTerms { h, bending, volume, surface, e1, e2, mu_e1_part: mu1, mu_e2_part: mu2 }
    }
}

/// `eps |k|^4`, plus `|Omega| / sigma1` on the mean mode: the quadratic part
/// of the volume penalty is stiff (rate `|Omega| / sigma1`) and is treated
/// implicitly with the bending term.
fn pfvm_linear<T: Real>(grid: &Arc<Grid<T>>, epsilon: T, sigma1: T) -> Vec<T> {
    let mut l: Vec<T> = grid.k_squared().iter().map(|&k| epsilon * k * k).collect();
    l[0] = grid.volume() / sigma1;
    l
}

fn well<T: Real>(v: T) -> T {
    let s = v * v - T::one();
    T::lit(0.25) * s * s
}

fn well_prime<T: Real>(v: T) -> T {
    v * v * v - v
}

fn well_second<T: Real>(v: T) -> T {
    T::lit(3.0) * v * v - T::one()
}

impl<T: Real> GradientFlow<T> for Pfvm<T> {
    fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    fn linear_symbol(&self) -> &[T] {
        &self.linear
    }

    fn mobility_symbol(&self) -> &[T] {
        &self.mobility
    }

    fn nonlinear_energy(&self, phi: &Field<T>) -> T {
        let t = self.terms(phi);
        t.e1 + t.e2
    }

    fn nonlinear_gradient(&self, phi: &Field<T>) -> Field<T> {
        let t = self.terms(phi);
        &t.mu_e1_part + &t.mu_e2_part
    }
}
