//! Single qubit dephased by the transitions of a driven fluorescent
//! two-level environment. Everything about this model is known in closed
//! form, which makes it the workhorse oracle of the crate.
//!
//! The environment is a two-level system with Rabi drive `omega` and decay
//! rate `gamma`; each decay transition kicks the system with the sigma_z
//! conjugation. System populations are untouched while the coherence at
//! time t is scaled by the decay function f(t|0).

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{c64, qubit, C64, CVector, DensityMatrix, Operator, SuperOperator};
use crate::model::ModelSpec;
use crate::models::RateSample;
use crate::structure::{BystanderCoupling, CpMap};

#[derive(Clone, Debug)]
pub struct FluorParams {
    pub gamma: f64,
    pub omega: f64,
    pub rho0_e: DensityMatrix,
}

impl FluorParams {
    pub fn new(gamma: f64, omega: f64, rho0_e: DensityMatrix) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidCoupling("decay rate must be positive".into()));
        }
        if omega < 0.0 {
            return Err(Error::InvalidCoupling("Rabi frequency must be nonnegative".into()));
        }
        if rho0_e.dim() != 2 {
            return Err(Error::DimensionMismatch("environment must be a qubit".into()));
        }
        Ok(Self { gamma, omega, rho0_e })
    }

    /// Parameters with the environment prepared in its stationary state.
    pub fn stationary(gamma: f64, omega: f64) -> Result<Self> {
        let rho = stationary_env(gamma, omega);
        Self::new(gamma, omega, rho)
    }

    /// Parameters with the environment prepared in its ground state.
    pub fn ground(gamma: f64, omega: f64) -> Result<Self> {
        Self::new(gamma, omega, DensityMatrix::from_pure(&qubit::ket_dn()))
    }
}

/// Stationary environment state
/// (Omega^2, -i gamma Omega; +i gamma Omega, gamma^2 + Omega^2) / (gamma^2 + 2 Omega^2).
pub fn stationary_env(gamma: f64, omega: f64) -> DensityMatrix {
    let d = gamma * gamma + 2.0 * omega * omega;
    DensityMatrix::new(Operator::from_rows(
        2,
        &[
            c64(omega * omega / d, 0.),
            c64(0., -gamma * omega / d),
            c64(0., gamma * omega / d),
            c64((gamma * gamma + omega * omega) / d, 0.),
        ],
    ))
    .expect("stationary state is a valid density matrix")
}

/// The system collision map: conjugation by sigma_z.
pub fn collision_map() -> CpMap {
    CpMap::conjugation(&qubit::sigma_z()).expect("sigma_z conjugation is trace preserving")
}

/// The composition-closed system map group {identity, sigma_z conjugation}.
pub fn collision_group() -> Vec<SuperOperator> {
    vec![SuperOperator::identity(&[2]), collision_map().superoperator()]
}

/// Full scenario with the given initial system state.
pub fn model(p: &FluorParams, rho0_s: DensityMatrix) -> Result<ModelSpec> {
    let coupling =
        BystanderCoupling::diagonal(vec![(p.gamma, qubit::lowering(), collision_map())])?;
    ModelSpec::new(
        SuperOperator::zero(&[2]),
        env_drive(p.omega),
        coupling,
        rho0_s,
        p.rho0_e.clone(),
    )
}

fn env_drive(omega: f64) -> SuperOperator {
    SuperOperator::commutator(&qubit::sigma_x().scale(c64(omega / 2.0, 0.)))
}

/// Signed environment generators: the `+` sign gives the marginal
/// propagator of the environment, the `-` sign flips the jump term and its
/// trace yields the system coherence decay.
pub fn signed_env_generators(p: &FluorParams) -> (SuperOperator, SuperOperator) {
    let drive = env_drive(p.omega);
    let jump = SuperOperator::sandwich(&qubit::lowering(), &qubit::raising())
        .scaled(c64(p.gamma, 0.));
    let n_op = &qubit::raising() * &qubit::lowering();
    let anti = (&SuperOperator::left_mult(&n_op) + &SuperOperator::right_mult(&n_op))
        .scaled(c64(0.5 * p.gamma, 0.));
    let plus = &(&drive + &jump) - &anti;
    let minus = &(&drive - &jump) - &anti;
    (plus, minus)
}

/// Bloch expectations of the propagated environment state.
fn env_expectations(p: &FluorParams, t: f64) -> (f64, f64) {
    let (plus, _) = signed_env_generators(p);
    let rho_t = plus.exp(t).apply(p.rho0_e.operator());
    let sy = (qubit::sigma_y().matrix() * rho_t.matrix()).trace();
    let sz = (qubit::sigma_z().matrix() * rho_t.matrix()).trace();
    (sy.re, sz.re)
}

/// Decay-function coefficients (a_t, b_t, c_t) built from the environment
/// Bloch expectations at time t.
pub fn coherence_coefficients(p: &FluorParams, t: f64) -> (f64, f64, f64) {
    let (sy, sz) = env_expectations(p, t);
    let (g, om) = (p.gamma, p.omega);
    let d = g * g + 2.0 * om * om;
    let num = 2.0 * g * om * sy - sz * g * g;
    let a = 1.0 - num / d;
    let b = num / d;
    let c = -(6.0 * g * om * sy + sz * (g * g + 8.0 * om * om)) / (4.0 * d);
    (a, b, c)
}

fn delta(p: &FluorParams) -> C64 {
    Complex::new((p.gamma / 4.0).powi(2) - p.omega * p.omega, 0.0).sqrt()
}

/// sinh(z)/z, stable near z = 0.
fn sinhc(z: C64) -> C64 {
    if z.norm() < 1e-6 {
        let z2 = z * z;
        Complex::new(1.0, 0.0) + z2 / 6.0 + z2 * z2 / 120.0
    } else {
        z.sinh() / z
    }
}

fn coherence_from_coefficients(p: &FluorParams, tau: f64, coeffs: (f64, f64, f64)) -> f64 {
    let (a, b, c) = coeffs;
    let g = p.gamma;
    let dl = delta(p);
    let z = dl * tau;
    let val = Complex::new((-g * tau).exp() * a, 0.0)
        + Complex::new((-g * tau / 4.0).exp(), 0.0)
            * (z.cosh() * b + sinhc(z) * c64(c * tau, 0.));
    debug_assert!(val.im.abs() < 1e-12, "decay function must be real, got {val}");
    val.re
}

/// Coherence decay function f(tau|t): the factor multiplying the system
/// coherence accumulated between t and t + tau, conditioned on the
/// environment marginal at time t.
pub fn coherence(p: &FluorParams, tau: f64, t: f64) -> f64 {
    coherence_from_coefficients(p, tau, coherence_coefficients(p, t))
}

/// Time-local dephasing rate -(d/dt) ln f(t|0) by analytic differentiation;
/// divergent at zeros of f.
pub fn canonical_rate(p: &FluorParams, t: f64) -> RateSample {
    let (a, b, c) = coherence_coefficients(p, 0.0);
    let g = p.gamma;
    let dl = delta(p);
    let z = dl * t;
    let osc = z.cosh() * b + sinhc(z) * c64(c * t, 0.);
    let osc_prime = dl * z.sinh() * b + z.cosh() * c;
    let f = Complex::new((-g * t).exp() * a, 0.0) + Complex::new((-g * t / 4.0).exp(), 0.0) * osc;
    let fp = Complex::new(-g * (-g * t).exp() * a, 0.0)
        + Complex::new((-g * t / 4.0).exp(), 0.0) * (osc_prime - osc * (g / 4.0));
    debug_assert!(f.im.abs() < 1e-12 && fp.im.abs() < 1e-12);
    if f.re.abs() < 1e-12 {
        RateSample::Divergent
    } else {
        RateSample::Finite(-fp.re / f.re)
    }
}

/// Rate series on a grid. A point is marked divergent when f vanishes there
/// or changes sign before the next grid point, signalling a divergence
/// inside the interval.
pub fn rate_series(p: &FluorParams, times: &[f64]) -> Vec<RateSample> {
    let f: Vec<f64> = times.iter().map(|&t| coherence(p, t, 0.0)).collect();
    times
        .iter()
        .enumerate()
        .map(|(k, _)| {
            if f[k].abs() < 1e-10 || (k + 1 < f.len() && f[k] * f[k + 1] < 0.0) {
                RateSample::Divergent
            } else {
                canonical_rate(p, times[k])
            }
        })
        .collect()
}

/// Zeros of f(t|0) on [0, t_max], located by scan plus bisection. These are
/// the times at which the canonical rate diverges.
pub fn coherence_zeros(p: &FluorParams, t_max: f64) -> Vec<f64> {
    let coeffs = coherence_coefficients(p, 0.0);
    let f = |t: f64| coherence_from_coefficients(p, t, coeffs);
    // scan fine enough to separate zeros of the oscillatory part
    let osc = (p.omega * p.omega - (p.gamma / 4.0).powi(2)).max(0.0).sqrt();
    let max_step = if osc > 0.0 { 0.25 * std::f64::consts::PI / osc } else { t_max / 512.0 };
    let n = ((t_max / max_step).ceil() as usize).max(512);
    let mut zeros = Vec::new();
    let mut prev_t = 0.0;
    let mut prev_f = f(0.0);
    for k in 1..=n {
        let t = t_max * k as f64 / n as f64;
        let ft = f(t);
        if prev_f == 0.0 {
            zeros.push(prev_t);
        } else if prev_f * ft < 0.0 {
            let (mut lo, mut hi) = (prev_t, t);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            zeros.push(0.5 * (lo + hi));
        }
        prev_t = t;
        prev_f = ft;
    }
    zeros
}

/// Conditional past-future correlation for three x-direction measurements
/// in the deterministic scheme:
/// (1 - <x>^2) / (4 P^2) [f(t+tau|0) - f(tau|t) f(t|0)], with the outcome
/// probability P = [1 + y <x> f(t|0)] / 2 of the intermediate result y.
pub fn cpf_closed_form(p: &FluorParams, t: f64, tau: f64, y: f64, x_avg: f64) -> f64 {
    let ft = coherence(p, t, 0.0);
    let ftau_t = coherence(p, tau, t);
    let fsum = coherence(p, t + tau, 0.0);
    let py = 0.5 * (1.0 + y * x_avg * ft);
    (1.0 - x_avg * x_avg) / (4.0 * py * py) * (fsum - ftau_t * ft)
}

/// Eigenvectors of sigma_x with outcome labels +1, -1.
pub fn x_basis() -> Vec<(f64, CVector)> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    vec![
        (1.0, CVector::from_column_slice(&[c64(s, 0.), c64(s, 0.)])),
        (-1.0, CVector::from_column_slice(&[c64(s, 0.), c64(-s, 0.)])),
    ]
}
