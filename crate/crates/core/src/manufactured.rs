//! Initial data and manufactured solutions used by the examples and tests.

use std::sync::Arc;

use crate::integrators::Forcing;
use crate::models::GradientFlow;
use crate::scalar::Real;
use crate::spectral::{Field, Grid};

/// `exp(sin(pi x) sin(pi y)) sin(t)`, the spatial profile taken from the first
/// two coordinates.
pub fn exact_profile<T: Real>(grid: &Arc<Grid<T>>, t: T) -> Field<T> {
    let pi = T::PI();
    let s = t.sin();
    Field::from_fn(grid, |x| ((pi * x[0]).sin() * (pi * x[1]).sin()).exp() * s)
}

/// Source term making [`exact_profile`] an exact solution of `phi_t = -G mu`.
/// The spatial operators are applied spectrally, so the only remaining error
/// in a run is the time discretization error.
pub fn gradient_flow_source<T: Real>(model: &dyn GradientFlow<T>, t: T) -> Field<T> {
    let grid = model.grid();
    let phi = exact_profile(grid, t);
    let dphi = Field::from_fn(grid, |x| {
        let pi = T::PI();
        ((pi * x[0]).sin() * (pi * x[1]).sin()).exp() * t.cos()
    });
    let mu = model.chemical_potential(&phi);
    let g_mu = mu.forward().apply_symbol(model.mobility_symbol()).backward();
    &dphi + &g_mu
}

/// [`gradient_flow_source`] packaged as a forcing closure.
pub fn gradient_flow_forcing<T: Real>(model: Arc<dyn GradientFlow<T>>) -> Forcing<T> {
    Arc::new(move |t| gradient_flow_source(&*model, t))
}

/// Star-shaped interface on `[0,1]^2` centred at (1/2, 1/2):
/// `tanh((1.5 + 1.2 cos(6 lambda) - 2 pi rho) / sqrt(2 alpha))`.
pub fn star_shape<T: Real>(grid: &Arc<Grid<T>>, alpha: T) -> Field<T> {
    let half = T::lit(0.5);
    let width = (T::lit(2.0) * alpha).sqrt();
    Field::from_fn(grid, |x| {
        let (dx, dy) = (x[0] - half, x[1] - half);
        let lambda = dy.atan2(dx);
        let rho = dx.hypot(dy);
        let r = T::lit(1.5) + T::lit(1.2) * (T::lit(6.0) * lambda).cos() - T::lit(2.0) * T::PI() * rho;
        (r / width).tanh()
    })
}

/// Sum of tanh spheres plus `count - 1`, so the field is `+1` inside any
/// sphere and `-1` outside all of them.
pub fn spheres<T: Real>(grid: &Arc<Grid<T>>, centres: &[[T; 3]], radius: T, epsilon: T) -> Field<T> {
    let width = T::SQRT_2() * epsilon;
    let shift = T::from_count(centres.len()) - T::one();
    Field::from_fn(grid, |x| {
        centres
            .iter()
            .map(|c| {
                let d = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt();
                ((radius - d) / width).tanh()
            })
            .sum::<T>()
            + shift
    })
}

/// Four spheres of radius pi/6 along the y axis of `(-pi, pi)^3`.
pub fn four_spheres<T: Real>(grid: &Arc<Grid<T>>, epsilon: T) -> Field<T> {
    let pi = T::PI();
    let q = pi / T::lit(4.0);
    let centres = [
        [T::zero(), -q, T::zero()],
        [T::zero(), q, T::zero()],
        [T::zero(), -T::lit(3.0) * q, T::zero()],
        [T::zero(), T::lit(3.0) * q, T::zero()],
    ];
    spheres(grid, &centres, pi / T::lit(6.0), epsilon)
}
