//! Periodic uniform grids, Fourier transforms and diagonal spectral operators.
//!
//! Fields are stored row-major with the last axis fastest. Transforms use
//! full complex storage: the forward transform is unnormalized and the
//! backward transform divides by the number of nodes, so a round trip is the
//! identity up to rounding.
//!
//! Odd derivatives use wavenumbers with the Nyquist mode zeroed so that the
//! derivative of a real field stays real. The Leray projection and the
//! divergence operator share those wavenumbers, which makes the projected
//! field divergence-free to rounding.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_complex::Complex;
use num_traits::Zero;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("non-finite value at node {index}")]
    NonFinite { index: usize },
    #[error("singular diagonal solve: zero symbol with nonzero right-hand side at mode {mode}")]
    SingularSolve { mode: usize },
}

/// Periodic uniform grid on a box `[o_1, o_1 + L_1) x ... x [o_d, o_d + L_d)`.
pub struct Grid<T: Real> {
    extents: Vec<usize>,
    lengths: Vec<T>,
    origin: Vec<T>,
    modes: Vec<Vec<i64>>,
    wavenumbers: Vec<Vec<T>>,
    k_sq: Vec<T>,
    k_deriv: Vec<Vec<T>>,
    forward: Vec<Arc<dyn Fft<T>>>,
    inverse: Vec<Arc<dyn Fft<T>>>,
}

impl<T: Real> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("extents", &self.extents)
            .field("lengths", &self.lengths)
            .field("origin", &self.origin)
            .finish()
    }
}

impl<T: Real> Grid<T> {
    pub fn new(extents: &[usize], lengths: &[T]) -> Result<Arc<Self>, SpectralError> {
        let origin = vec![T::zero(); extents.len()];
        Self::with_origin(extents, lengths, &origin)
    }

    pub fn with_origin(
        extents: &[usize],
        lengths: &[T],
        origin: &[T],
    ) -> Result<Arc<Self>, SpectralError> {
        let d = extents.len();
        if !(1..=3).contains(&d) {
            return Err(SpectralError::InvalidGrid(format!(
                "dimension must be 1, 2 or 3, got {d}"
            )));
        }
        if lengths.len() != d || origin.len() != d {
            return Err(SpectralError::InvalidGrid(
                "extents, lengths and origin must have the same rank".into(),
            ));
        }
        for (&n, &l) in extents.iter().zip(lengths) {
            if n < 4 || n % 2 != 0 {
                return Err(SpectralError::InvalidGrid(format!(
                    "extent {n} must be even and at least 4"
                )));
            }
            if !(l > T::zero()) || !l.is_finite() {
                return Err(SpectralError::InvalidGrid(format!(
                    "box length {l} must be positive and finite"
                )));
            }
        }

        let two_pi = T::PI() + T::PI();
        let modes: Vec<Vec<i64>> = extents
            .iter()
            .map(|&n| {
                let half = (n / 2) as i64;
                (0..n as i64).map(|i| if i < half { i } else { i - n as i64 }).collect()
            })
            .collect();
        let wavenumbers: Vec<Vec<T>> = modes
            .iter()
            .zip(lengths)
            .map(|(m, &l)| m.iter().map(|&mi| two_pi * T::lit(mi as f64) / l).collect())
            .collect();

        let total: usize = extents.iter().product();
        let mut k_sq = vec![T::zero(); total];
        let mut k_deriv = vec![vec![T::zero(); total]; d];
        let mut idx = vec![0usize; d];
        for flat in 0..total {
            let mut s = T::zero();
            for a in 0..d {
                let k = wavenumbers[a][idx[a]];
                s = s + k * k;
                k_deriv[a][flat] = if idx[a] == extents[a] / 2 { T::zero() } else { k };
            }
            k_sq[flat] = s;
            advance_index(&mut idx, extents);
        }

        let mut planner = FftPlanner::<T>::new();
        let forward = extents.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = extents.iter().map(|&n| planner.plan_fft_inverse(n)).collect();

        Ok(Arc::new(Self {
            extents: extents.to_vec(),
            lengths: lengths.to_vec(),
            origin: origin.to_vec(),
            modes,
            wavenumbers,
            k_sq,
            k_deriv,
            forward,
            inverse,
        }))
    }

    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    pub fn lengths(&self) -> &[T] {
        &self.lengths
    }

    pub fn origin(&self) -> &[T] {
        &self.origin
    }

    /// Number of grid nodes (and of Fourier modes).
    pub fn len(&self) -> usize {
        self.k_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_sq.is_empty()
    }

    pub fn spacing(&self, axis: usize) -> T {
        self.lengths[axis] / T::from_count(self.extents[axis])
    }

    /// Quadrature weight `h_1 * ... * h_d`.
    pub fn cell_volume(&self) -> T {
        (0..self.dim()).map(|a| self.spacing(a)).fold(T::one(), |acc, h| acc * h)
    }

    /// Measure of the periodic box.
    pub fn volume(&self) -> T {
        self.lengths.iter().fold(T::one(), |acc, &l| acc * l)
    }

    /// Wavenumbers `2 pi m / L` of one axis in FFT order.
    pub fn wavenumbers(&self, axis: usize) -> &[T] {
        &self.wavenumbers[axis]
    }

    /// `|k|^2` for every mode, flat row-major.
    pub fn k_squared(&self) -> &[T] {
        &self.k_sq
    }

    /// Per-mode derivative wavenumber along `axis`, Nyquist mode zeroed.
    pub fn derivative_wavenumbers(&self, axis: usize) -> &[T] {
        &self.k_deriv[axis]
    }

    /// `|k|^2` built from the derivative wavenumbers, i.e. the symbol of
    /// `-div grad` as realised by first-derivative operators.
    pub fn k_squared_deriv(&self) -> Vec<T> {
        (0..self.len())
            .map(|i| self.k_deriv.iter().fold(T::zero(), |acc, k| acc + k[i] * k[i]))
            .collect()
    }

    /// Symbol of the Laplacian, `-|k|^2`.
    pub fn laplacian_symbol(&self) -> Vec<T> {
        self.k_sq.iter().map(|&k| -k).collect()
    }

    /// Node coordinates along one axis.
    pub fn coordinates(&self, axis: usize) -> Vec<T> {
        let h = self.spacing(axis);
        (0..self.extents[axis]).map(|i| self.origin[axis] + T::from_count(i) * h).collect()
    }

    /// 2/3-rule mask: `true` for modes kept.
    pub fn dealias_mask(&self) -> Vec<bool> {
        let d = self.dim();
        let mut mask = vec![true; self.len()];
        let mut idx = vec![0usize; d];
        for keep in mask.iter_mut() {
            *keep = (0..d).all(|a| 3 * self.modes[a][idx[a]].unsigned_abs() as usize <= self.extents[a]);
            advance_index(&mut idx, &self.extents);
        }
        mask
    }

    /// Structural equality: same extents, lengths and origin.
    pub fn same_as(&self, other: &Grid<T>) -> bool {
        std::ptr::eq(self, other)
            || (self.extents == other.extents
                && self.lengths == other.lengths
                && self.origin == other.origin)
    }

    fn fft_in_place(&self, data: &mut [Complex<T>], inverse: bool) {
        let total = data.len();
        for axis in 0..self.dim() {
            let n = self.extents[axis];
            let plan = if inverse { &self.inverse[axis] } else { &self.forward[axis] };
            let stride: usize = self.extents[axis + 1..].iter().product();
            if stride == 1 {
                process_lines(plan.as_ref(), data, n);
                continue;
            }
            let block = n * stride;
            let mut lines = vec![Complex::zero(); total];
            lines
                .par_chunks_mut(block)
                .zip(data.par_chunks(block))
                .for_each(|(dst, src)| {
                    for s in 0..stride {
                        for j in 0..n {
                            dst[s * n + j] = src[j * stride + s];
                        }
                    }
                });
            process_lines(plan.as_ref(), &mut lines, n);
            data.par_chunks_mut(block)
                .zip(lines.par_chunks(block))
                .for_each(|(dst, src)| {
                    for s in 0..stride {
                        for j in 0..n {
                            dst[j * stride + s] = src[s * n + j];
                        }
                    }
                });
        }
    }
}

fn process_lines<T: Real>(plan: &dyn Fft<T>, data: &mut [Complex<T>], n: usize) {
    const LINES_PER_TASK: usize = 16;
    let scratch_len = plan.get_inplace_scratch_len();
    data.par_chunks_mut(n * LINES_PER_TASK).for_each_init(
        || vec![Complex::zero(); scratch_len],
        |scratch, chunk| plan.process_with_scratch(chunk, scratch),
    );
}

/// Row-major multi-index increment (last axis fastest).
pub(crate) fn advance_index(idx: &mut [usize], extents: &[usize]) {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < extents[a] {
            return;
        }
        idx[a] = 0;
    }
}

/// Real grid function on a periodic grid.
#[derive(Clone, Debug)]
pub struct Field<T: Real> {
    grid: Arc<Grid<T>>,
    values: Vec<T>,
}

impl<T: Real> Field<T> {
    pub fn zeros(grid: &Arc<Grid<T>>) -> Self {
        Self::constant(grid, T::zero())
    }

    pub fn constant(grid: &Arc<Grid<T>>, c: T) -> Self {
        Self { grid: Arc::clone(grid), values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Arc<Grid<T>>, values: Vec<T>) -> Result<Self, SpectralError> {
        if values.len() != grid.len() {
            return Err(SpectralError::DimensionMismatch {
                expected: grid.len(),
                actual: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(SpectralError::NonFinite { index });
        }
        Ok(Self { grid: Arc::clone(grid), values })
    }

    /// Samples `f` at every node; `f` receives the node coordinates.
    pub fn from_fn(grid: &Arc<Grid<T>>, f: impl Fn(&[T]) -> T) -> Self {
        let coords: Vec<Vec<T>> = (0..grid.dim()).map(|a| grid.coordinates(a)).collect();
        let mut idx = vec![0usize; grid.dim()];
        let mut x = vec![T::zero(); grid.dim()];
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            for a in 0..grid.dim() {
                x[a] = coords[a][idx[a]];
            }
            values.push(f(&x));
            advance_index(&mut idx, grid.extents());
        }
        Self { grid: Arc::clone(grid), values }
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn mean(&self) -> T {
        self.values.iter().copied().sum::<T>() / T::from_count(self.values.len())
    }

    pub fn max_abs(&self) -> T {
        self.values.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { grid: Arc::clone(&self.grid), values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Field<T>, f: impl Fn(T, T) -> T) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        Self {
            grid: Arc::clone(&self.grid),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scale(&mut self, c: T) {
        self.values.iter_mut().for_each(|v| *v = *v * c);
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &Field<T>) {
        debug_assert!(self.grid.same_as(&x.grid));
        self.values.iter_mut().zip(&x.values).for_each(|(y, &xv)| *y = *y + a * xv);
    }

    /// `sum_i c_i f_i` over a non-empty list of fields on one grid.
    pub fn linear_combination(terms: &[(T, &Field<T>)]) -> Self {
        let (c0, f0) = terms[0];
        let mut out = f0.clone();
        out.scale(c0);
        for &(c, f) in &terms[1..] {
            out.axpy(c, f);
        }
        out
    }

    /// Unnormalized forward transform.
    pub fn forward(&self) -> SpectralField<T> {
        let mut coeffs: Vec<Complex<T>> =
            self.values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        self.grid.fft_in_place(&mut coeffs, false);
        SpectralField { grid: Arc::clone(&self.grid), coeffs }
    }

    /// Collocation quadrature `h_1...h_d * sum f g`.
    pub fn inner_product(&self, other: &Field<T>) -> Result<T, SpectralError> {
        if !self.grid.same_as(&other.grid) {
            return Err(SpectralError::GridMismatch);
        }
        let s: T = self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn norm_sq(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> T {
        self.norm_sq().sqrt()
    }
}

impl<T: Real> Add for &Field<T> {
    type Output = Field<T>;
    fn add(self, rhs: &Field<T>) -> Field<T> {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl<T: Real> Sub for &Field<T> {
    type Output = Field<T>;
    fn sub(self, rhs: &Field<T>) -> Field<T> {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl<T: Real> Mul<T> for &Field<T> {
    type Output = Field<T>;
    fn mul(self, rhs: T) -> Field<T> {
        self.map(|a| a * rhs)
    }
}

impl<T: Real> Neg for &Field<T> {
    type Output = Field<T>;
    fn neg(self) -> Field<T> {
        self.map(|a| -a)
    }
}

/// Fourier coefficients of a real grid function.
#[derive(Clone, Debug)]
pub struct SpectralField<T: Real> {
    grid: Arc<Grid<T>>,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> SpectralField<T> {
    pub fn zeros(grid: &Arc<Grid<T>>) -> Self {
        Self { grid: Arc::clone(grid), coeffs: vec![Complex::zero(); grid.len()] }
    }

    pub fn from_coeffs(
        grid: &Arc<Grid<T>>,
        coeffs: Vec<Complex<T>>,
    ) -> Result<Self, SpectralError> {
        if coeffs.len() != grid.len() {
            return Err(SpectralError::DimensionMismatch {
                expected: grid.len(),
                actual: coeffs.len(),
            });
        }
        Ok(Self { grid: Arc::clone(grid), coeffs })
    }

    pub fn grid(&self) -> &Arc<Grid<T>> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.coeffs
    }

    /// Normalized backward transform; the imaginary residue is dropped.
    pub fn backward(&self) -> Field<T> {
        let mut data = self.coeffs.clone();
        self.grid.fft_in_place(&mut data, true);
        let inv_n = T::one() / T::from_count(data.len());
        Field { grid: Arc::clone(&self.grid), values: data.iter().map(|c| c.re * inv_n).collect() }
    }

    /// Coefficient-wise multiplication by a real per-mode symbol.
    pub fn apply_symbol(&self, symbol: &[T]) -> Self {
        debug_assert_eq!(symbol.len(), self.coeffs.len());
        Self {
            grid: Arc::clone(&self.grid),
            coeffs: self.coeffs.iter().zip(symbol).map(|(&c, &s)| c * s).collect(),
        }
    }

    pub fn apply_symbol_in_place(&mut self, symbol: &[T]) {
        self.coeffs.iter_mut().zip(symbol).for_each(|(c, &s)| *c = *c * s);
    }

    /// Divides by `symbol` mode by mode. Modes where both the symbol and the
    /// right-hand side vanish are left at zero.
    pub fn solve_diagonal(&self, symbol: &[T]) -> Result<Self, SpectralError> {
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (mode, (&c, &s)) in self.coeffs.iter().zip(symbol).enumerate() {
            if s == T::zero() {
                if c != Complex::zero() {
                    return Err(SpectralError::SingularSolve { mode });
                }
                coeffs.push(Complex::zero());
            } else {
                coeffs.push(c / s);
            }
        }
        Ok(Self { grid: Arc::clone(&self.grid), coeffs })
    }

    /// Diagonal solve with the mean-free convention: the output mean mode is
    /// set to zero and every other mode must have a nonzero symbol.
    pub fn solve_diagonal_mean_free(&self, symbol: &[T]) -> Result<Self, SpectralError> {
        let mut rhs = self.clone();
        rhs.coeffs[0] = Complex::zero();
        let mut sym = symbol.to_vec();
        sym[0] = T::one();
        let mut out = rhs.solve_diagonal(&sym)?;
        out.coeffs[0] = Complex::zero();
        Ok(out)
    }

    /// Spectral derivative along `axis`.
    pub fn derivative(&self, axis: usize) -> Self {
        let k = self.grid.derivative_wavenumbers(axis);
        Self {
            grid: Arc::clone(&self.grid),
            coeffs: self
                .coeffs
                .iter()
                .zip(k)
                .map(|(&c, &kk)| Complex::new(-c.im * kk, c.re * kk))
                .collect(),
        }
    }

    /// Zeroes every mode outside the 2/3-rule band.
    pub fn dealias(&mut self) {
        let mask = self.grid.dealias_mask();
        self.coeffs.iter_mut().zip(mask).for_each(|(c, keep)| {
            if !keep {
                *c = Complex::zero();
            }
        });
    }

    pub fn scale(&mut self, a: T) {
        self.coeffs.iter_mut().for_each(|c| *c = *c * a);
    }

    /// `self += a * x`
    pub fn axpy(&mut self, a: T, x: &SpectralField<T>) {
        self.coeffs.iter_mut().zip(&x.coeffs).for_each(|(y, &xv)| *y = *y + xv * a);
    }

    /// `sum_i c_i f_i` over a non-empty list of spectral fields on one grid.
    pub fn linear_combination(terms: &[(T, &SpectralField<T>)]) -> Self {
        let (c0, f0) = terms[0];
        let mut out = f0.clone();
        out.scale(c0);
        for &(c, f) in &terms[1..] {
            out.axpy(c, f);
        }
        out
    }

    /// Inner product of the underlying real fields via Parseval,
    /// `|Omega| / N^2 * sum Re(f conj g)`.
    pub fn inner_product(&self, other: &SpectralField<T>) -> T {
        let s: T = self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        s * self.parseval_weight()
    }

    /// `(S f, f)` for a real symbol `S`, via Parseval.
    pub fn weighted_norm_sq(&self, symbol: &[T]) -> T {
        let s: T = self.coeffs.iter().zip(symbol).map(|(c, &w)| c.norm_sqr() * w).sum();
        s * self.parseval_weight()
    }

    pub fn norm_sq(&self) -> T {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<T>() * self.parseval_weight()
    }

    fn parseval_weight(&self) -> T {
        let n = T::from_count(self.coeffs.len());
        self.grid.volume() / (n * n)
    }
}

/// `sum_i ||d f / d x_i||^2` with spectral derivatives.
pub fn grad_norm_sq<T: Real>(f: &Field<T>) -> T {
    grad_norm_sq_spectral(&f.forward())
}

pub fn grad_norm_sq_spectral<T: Real>(f: &SpectralField<T>) -> T {
    f.weighted_norm_sq(&f.grid().k_squared_deriv())
}

/// `||Delta f||^2`.
pub fn laplacian_norm_sq_spectral<T: Real>(f: &SpectralField<T>) -> T {
    let k4: Vec<T> = f.grid().k_squared().iter().map(|&k| k * k).collect();
    f.weighted_norm_sq(&k4)
}

/// Spectral divergence of a vector field.
pub fn divergence<T: Real>(u: &[SpectralField<T>]) -> SpectralField<T> {
    let mut out = u[0].derivative(0);
    for (axis, comp) in u.iter().enumerate().skip(1) {
        out.axpy(T::one(), &comp.derivative(axis));
    }
    out
}

/// Orthogonal projection onto divergence-free fields,
/// `u - k (k . u) / |k|^2`; modes with `k = 0` pass through unchanged.
pub fn leray_project<T: Real>(u: &[SpectralField<T>]) -> Vec<SpectralField<T>> {
    let grid = u[0].grid();
    let d = grid.dim();
    assert_eq!(u.len(), d, "velocity must have one component per axis");
    let kd: Vec<&[T]> = (0..d).map(|a| grid.derivative_wavenumbers(a)).collect();
    let mut out: Vec<SpectralField<T>> = u.to_vec();
    for mode in 0..grid.len() {
        let k2 = kd.iter().fold(T::zero(), |acc, k| acc + k[mode] * k[mode]);
        if k2 == T::zero() {
            continue;
        }
        let mut dot = Complex::zero();
        for a in 0..d {
            dot = dot + u[a].coeffs[mode] * kd[a][mode];
        }
        let dot = dot / k2;
        for a in 0..d {
            out[a].coeffs[mode] = u[a].coeffs[mode] - dot * kd[a][mode];
        }
    }
    out
}
