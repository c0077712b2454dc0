//! Log-space exponential SAV bookkeeping: BDF tableaux, stabilizer
//! polynomials and the relaxation selectors.
//!
//! Energies passed to this module are already divided by the scaling
//! constant `C`, so every exponent is `O(1)`. Dissipation rates likewise
//! arrive divided by `C`.

use num_rational::Ratio;
use num_traits::ToPrimitive;
use thiserror::Error;

use crate::scalar::Real;

/// Slack used when clamping selector outputs into their ranges.
pub const CLAMP_SLACK: f64 = 1e-12;

/// Tolerance for the `f(1) <= 0` precondition of [`relax_mesav`], relative to
/// `max(1, c_hat)`.
pub const MESAV_FEASIBILITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SavError {
    #[error("BDF order {0} is not supported (expected 1..=4)")]
    UnsupportedOrder(usize),
    #[error("non-finite input {name} = {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("{name} = {value} lies outside [{lo}, {hi}] beyond roundoff slack")]
    OutOfRange { name: &'static str, value: f64, lo: f64, hi: f64 },
    #[error("inconsistent relaxation coefficients: f(1) = {f_one} > 0")]
    InconsistentCoefficients { f_one: f64 },
    #[error("zero dissipation at the new state while the extrapolated dissipation is {k_extrap}")]
    DegenerateDissipation { k_extrap: f64 },
    #[error("time step too large for the SAV update: 1 + dt*(K - forcing) = {denominator}")]
    StepSize { denominator: f64 },
}

fn check_finite<T: Real>(name: &'static str, v: T) -> Result<(), SavError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(SavError::NonFinite { name, value: v.to_f64_lossy() })
    }
}

fn clamp_with_slack<T: Real>(name: &'static str, v: T, lo: T, hi: T) -> Result<T, SavError> {
    let slack = T::lit(CLAMP_SLACK);
    if v < lo - slack || v > hi + slack {
        return Err(SavError::OutOfRange {
            name,
            value: v.to_f64_lossy(),
            lo: lo.to_f64_lossy(),
            hi: hi.to_f64_lossy(),
        });
    }
    Ok(v.max(lo).min(hi))
}

/// The auxiliary variable stored as `ln r` together with its scale `C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSav<T> {
    pub log_r: T,
    pub scale_c: T,
}

impl<T: Real> LogSav<T> {
    /// Exact initialization `ln r = E / C`.
    pub fn from_energy(energy: T, scale_c: T) -> Self {
        Self { log_r: energy / scale_c, scale_c }
    }

    /// Default scale `max(1, |E|)`.
    pub fn default_scale(energy: T) -> T {
        T::one().max(energy.abs())
    }

    /// `C ln r`, the energy-like quantity that enters modified energies.
    pub fn energy_units(&self) -> T {
        self.scale_c * self.log_r
    }
}

/// Exact coefficients of a BDF formula.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalTableau {
    pub order: usize,
    pub alpha: Ratio<i64>,
    pub a_weights: Vec<Ratio<i64>>,
    pub b_weights: Vec<Ratio<i64>>,
    pub p_weights: Vec<Ratio<i64>>,
}

fn ratios(v: &[(i64, i64)]) -> Vec<Ratio<i64>> {
    v.iter().map(|&(n, d)| Ratio::new(n, d)).collect()
}

pub fn bdf_tableau_exact(k: usize) -> Result<RationalTableau, SavError> {
    let (alpha, a, b) = match k {
        1 => ((1, 1), ratios(&[(1, 1)]), ratios(&[(1, 1)])),
        2 => ((3, 2), ratios(&[(2, 1), (-1, 2)]), ratios(&[(2, 1), (-1, 1)])),
        3 => (
            (11, 6),
            ratios(&[(3, 1), (-3, 2), (1, 3)]),
            ratios(&[(3, 1), (-3, 1), (1, 1)]),
        ),
        4 => (
            (25, 12),
            ratios(&[(4, 1), (-3, 1), (4, 3), (-1, 4)]),
            ratios(&[(4, 1), (-6, 1), (4, 1), (-1, 1)]),
        ),
        _ => return Err(SavError::UnsupportedOrder(k)),
    };
    let p = if k == 1 { b.clone() } else { bdf_tableau_exact(k - 1)?.b_weights };
    Ok(RationalTableau {
        order: k,
        alpha: Ratio::new(alpha.0, alpha.1),
        a_weights: a,
        b_weights: b,
        p_weights: p,
    })
}

/// BDF coefficients in working precision. Histories are passed newest first:
/// `hist[0]` is step `n`, `hist[1]` is `n - 1`, and so on.
#[derive(Clone, Debug, PartialEq)]
pub struct BdfTableau<T> {
    pub order: usize,
    pub alpha: T,
    pub a_weights: Vec<T>,
    pub b_weights: Vec<T>,
    pub p_weights: Vec<T>,
}

fn to_real<T: Real>(r: &Ratio<i64>) -> T {
    T::lit(r.to_f64().expect("small rational"))
}

pub fn bdf_tableau<T: Real>(k: usize) -> Result<BdfTableau<T>, SavError> {
    let exact = bdf_tableau_exact(k)?;
    Ok(BdfTableau {
        order: k,
        alpha: to_real(&exact.alpha),
        a_weights: exact.a_weights.iter().map(to_real).collect(),
        b_weights: exact.b_weights.iter().map(to_real).collect(),
        p_weights: exact.p_weights.iter().map(to_real).collect(),
    })
}

impl<T: Real> BdfTableau<T> {
    /// `A_k` applied to a scalar history.
    pub fn a_scalar(&self, hist: &[T]) -> T {
        dot(&self.a_weights, hist)
    }

    /// `B_k` applied to a scalar history.
    pub fn b_scalar(&self, hist: &[T]) -> T {
        dot(&self.b_weights, hist)
    }

    /// Pressure extrapolation applied to a scalar history.
    pub fn p_scalar(&self, hist: &[T]) -> T {
        dot(&self.p_weights, hist)
    }
}

fn dot<T: Real>(w: &[T], hist: &[T]) -> T {
    assert!(hist.len() >= w.len(), "history shorter than tableau");
    w.iter().zip(hist).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

/// Stabilizer `V_k(xi)` multiplying the explicit nonlinearity.
pub fn v_poly<T: Real>(k: usize, xi: T) -> Result<T, SavError> {
    let two = T::lit(2.0);
    let three = T::lit(3.0);
    Ok(match k {
        1 => xi,
        2 => xi * (two - xi),
        3 => xi * (three - three * xi + xi * xi),
        4 => xi * (two - xi) * (two - two * xi + xi * xi),
        _ => return Err(SavError::UnsupportedOrder(k)),
    })
}

/// Result of a relaxation selector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelaxOutcome<T> {
    pub theta0: T,
    /// Dissipation-rate multiplier. For the R-ESAV-1 selectors this echoes the
    /// user parameter.
    pub gamma: T,
    /// Which case of the selector fired (1-based).
    pub case_id: u8,
}

/// Selector for gradient-flow R-ESAV-1 schemes.
///
/// `order_factor` is 1 for BDF1 and Crank–Nicolson, 2/3 for BDF2.
pub fn relax_esav1<T: Real>(
    log_r_tilde: T,
    e1_new: T,
    dissipation: T,
    dt: T,
    gamma: T,
    order_factor: T,
) -> Result<RelaxOutcome<T>, SavError> {
    check_finite("log_r_tilde", log_r_tilde)?;
    check_finite("e1_new", e1_new)?;
    check_finite("dissipation", dissipation)?;
    check_finite("dt", dt)?;
    check_finite("gamma", gamma)?;
    let dissipation = clamp_with_slack("dissipation", dissipation, T::zero(), T::infinity())?;

    let log_s = order_factor * dt * gamma * dissipation + log_r_tilde;
    let d = log_r_tilde - e1_new;
    let (theta0, case_id) = if d == T::zero() {
        (T::zero(), 1)
    } else if d > T::zero() {
        (T::zero(), 2)
    } else if log_s >= e1_new {
        (T::zero(), 3)
    } else {
        let theta = (log_s - e1_new).exp_m1() / d.exp_m1();
        (clamp_with_slack("theta0", theta, T::zero(), T::one())?, 4)
    };
    Ok(RelaxOutcome { theta0, gamma, case_id })
}

/// Two-SAV selector: smallest `theta` in `[0, 1]` with
/// `a1 a2 theta^2 + (a1 + a2) theta + 1 - c <= 0`.
///
/// Inputs are the hatted coefficients `a_i = expm1(ln r~_i - E_i)` and
/// `c = exp(dt gamma D + ln r~_1 + ln r~_2 - E_1 - E_2)`.
pub fn relax_mesav<T: Real>(a_hat1: T, a_hat2: T, c_hat: T) -> Result<RelaxOutcome<T>, SavError> {
    check_finite("a_hat1", a_hat1)?;
    check_finite("a_hat2", a_hat2)?;
    check_finite("c_hat", c_hat)?;
    let one = T::one();
    let zero = T::zero();
    let f_one = (one + a_hat1) * (one + a_hat2) - c_hat;
    if f_one > T::lit(MESAV_FEASIBILITY_TOL) * one.max(c_hat) {
        return Err(SavError::InconsistentCoefficients { f_one: f_one.to_f64_lossy() });
    }

    let a = a_hat1 * a_hat2;
    let b = a_hat1 + a_hat2;
    let c0 = one - c_hat;
    // Smaller-magnitude-cancellation form of the `-sqrt` root.
    let root = || {
        let disc = (b * b - T::lit(4.0) * a * c0).max(zero);
        let den = -b + disc.sqrt();
        if den == zero {
            zero
        } else {
            (c0 + c0) / den
        }
    };

    let (theta, case_id) = if a_hat1 == zero && a_hat2 == zero {
        (zero, 1)
    } else if a_hat1 > zero && a_hat2 > zero {
        (zero, 2)
    } else if a_hat1 < zero && a_hat2 < zero {
        (root().max(zero), 3)
    } else if a < zero && c0 <= zero {
        (zero, 4)
    } else if a < zero {
        (root(), 5)
    } else if b > zero {
        (zero, 6)
    } else {
        ((-c0 / b).max(zero), 7)
    };
    // f(1) passed the feasibility test, so theta = 1 is always admissible
    let theta0 = clamp_with_slack("theta0", theta.min(one), zero, one)?;
    Ok(RelaxOutcome { theta0, gamma: one, case_id })
}

/// Selector for R-ESAV-2 schemes; returns `theta0` and `gamma`.
///
/// `k_new` and `k_extrap` are dissipation rates divided by `C`.
pub fn relax_esav2<T: Real>(
    log_r_tilde: T,
    e_new: T,
    k_new: T,
    k_extrap: T,
    dt: T,
) -> Result<RelaxOutcome<T>, SavError> {
    check_finite("log_r_tilde", log_r_tilde)?;
    check_finite("e_new", e_new)?;
    check_finite("k_new", k_new)?;
    check_finite("k_extrap", k_extrap)?;
    check_finite("dt", dt)?;
    let zero = T::zero();
    let one = T::one();
    let k_new = clamp_with_slack("k_new", k_new, zero, T::infinity())?;
    let k_extrap = clamp_with_slack("k_extrap", k_extrap, zero, T::infinity())?;

    let d = log_r_tilde - e_new;
    let rho = d.exp();
    // rho - 1 + dt rho K_extrap, divided by rho
    let case4_test = -(-d).exp_m1() + dt * k_extrap;
    let case_id = if d == zero {
        1
    } else if d > zero {
        2
    } else if case4_test >= zero {
        3
    } else {
        4
    };

    if case_id == 4 {
        let theta = one - dt * rho * k_extrap / (-d.exp_m1());
        let theta0 = clamp_with_slack("theta0", theta, zero, one)?;
        return Ok(RelaxOutcome { theta0, gamma: zero, case_id });
    }

    if k_new == zero {
        if k_extrap == zero && d <= zero {
            return Ok(RelaxOutcome { theta0: zero, gamma: zero, case_id });
        }
        return Err(SavError::DegenerateDissipation { k_extrap: k_extrap.to_f64_lossy() });
    }
    let gamma = if case_id == 1 {
        k_extrap / k_new
    } else {
        -(-d).exp_m1() / (dt * k_new) + k_extrap / k_new
    };
    let gamma = clamp_with_slack("gamma", gamma, zero, T::infinity())?;
    Ok(RelaxOutcome { theta0: zero, gamma, case_id })
}

/// `ln(theta exp(log_r_tilde) + (1 - theta) exp(e_new))` without overflow.
pub fn blend_log<T: Real>(theta0: T, log_r_tilde: T, e_new: T) -> T {
    if theta0 == T::zero() {
        return e_new;
    }
    if theta0 == T::one() {
        return log_r_tilde;
    }
    let m = log_r_tilde.max(e_new);
    m + (theta0 * (log_r_tilde - m).exp() + (T::one() - theta0) * (e_new - m).exp()).ln()
}

/// Log of the explicit R-ESAV-2 update `R~ = R / (1 + dt (K - forcing))`.
pub fn esav2_r_update<T: Real>(
    log_r_prev: T,
    k_extrap: T,
    forcing_term: T,
    dt: T,
) -> Result<T, SavError> {
    check_finite("log_r_prev", log_r_prev)?;
    check_finite("k_extrap", k_extrap)?;
    check_finite("forcing_term", forcing_term)?;
    let x = dt * (k_extrap - forcing_term);
    if !(T::one() + x > T::zero()) {
        return Err(SavError::StepSize { denominator: (T::one() + x).to_f64_lossy() });
    }
    Ok(log_r_prev - x.ln_1p())
}
