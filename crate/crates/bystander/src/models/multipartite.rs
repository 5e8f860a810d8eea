//! N qubits collectively dephased by a driven two-level environment with
//! decay rate `gamma` and thermally induced excitation rate `phi`. Decay
//! transitions kick the register with one Pauli-string conjugation,
//! excitations with another; the closed forms below hold for phi = gamma
//! with the environment prepared in its stationary (maximally mixed) state.

use crate::error::{Error, Result};
use crate::linalg::{c64, qubit, CVector, DensityMatrix, Operator, SuperOperator};
use crate::model::ModelSpec;
use crate::models::pauli::{Pauli, PauliString};
use crate::models::RateSample;
use crate::structure::{BystanderCoupling, CpMap};

#[derive(Clone, Debug)]
pub struct MultipartiteParams {
    pub n_qubits: usize,
    pub gamma: f64,
    pub phi: f64,
    pub omega: f64,
    pub string_a: PauliString,
    pub string_b: PauliString,
    pub rho0_e: DensityMatrix,
}

impl MultipartiteParams {
    pub fn new(
        gamma: f64,
        phi: f64,
        omega: f64,
        string_a: PauliString,
        string_b: PauliString,
        rho0_e: DensityMatrix,
    ) -> Result<Self> {
        if !(gamma > 0.0) {
            return Err(Error::InvalidCoupling("decay rate must be positive".into()));
        }
        if phi < 0.0 || omega < 0.0 {
            return Err(Error::InvalidCoupling("rates must be nonnegative".into()));
        }
        if string_a.len() != string_b.len() {
            return Err(Error::DimensionMismatch("Pauli strings differ in length".into()));
        }
        if rho0_e.dim() != 2 {
            return Err(Error::DimensionMismatch("environment must be a qubit".into()));
        }
        Ok(Self { n_qubits: string_a.len(), gamma, phi, omega, string_a, string_b, rho0_e })
    }

    /// Balanced rates (phi = gamma) with the environment in its stationary
    /// maximally mixed state; this is the regime with closed-form weights,
    /// rates and correlations.
    pub fn balanced(
        gamma: f64,
        omega: f64,
        string_a: PauliString,
        string_b: PauliString,
    ) -> Result<Self> {
        Self::new(gamma, gamma, omega, string_a, string_b, DensityMatrix::maximally_mixed(&[2]))
    }

    pub fn sys_dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn chi(&self) -> f64 {
        (self.gamma * self.gamma + self.omega * self.omega).sqrt()
    }

    fn require_balanced(&self) -> Result<()> {
        if (self.phi - self.gamma).abs() > 1e-12 {
            return Err(Error::IllPosed(
                "closed forms hold only for equal decay and excitation rates".into(),
            ));
        }
        Ok(())
    }
}

/// Full scenario with the given initial register state.
pub fn model(p: &MultipartiteParams, rho0_s: DensityMatrix) -> Result<ModelSpec> {
    let sa = CpMap::conjugation(&p.string_a.operator())?;
    let sb = CpMap::conjugation(&p.string_b.operator())?;
    let coupling = BystanderCoupling::diagonal(vec![
        (p.gamma, qubit::lowering(), sa),
        (p.phi, qubit::raising(), sb),
    ])?;
    ModelSpec::new(
        SuperOperator::zero(&[p.sys_dim()]),
        SuperOperator::commutator(&qubit::sigma_x().scale(c64(p.omega / 2.0, 0.))),
        coupling,
        rho0_s,
        p.rho0_e.clone(),
    )
}

/// The composition-closed register map group {identity, S_a, S_b, S_c} with
/// S_c the conjugation by the product string. For degenerate string choices
/// the four maps need not be distinct.
pub fn collision_group(p: &MultipartiteParams) -> Vec<SuperOperator> {
    let sa = p.string_a.operator();
    let sb = p.string_b.operator();
    let sc = &sb * &sa;
    vec![
        SuperOperator::identity(&[p.sys_dim()]),
        SuperOperator::conjugation(&sa),
        SuperOperator::conjugation(&sb),
        SuperOperator::conjugation(&sc),
    ]
}

/// The four-dimensional Hadamard matrix relating the parity-resolved
/// environment propagators to the decomposition blocks.
pub fn hadamard4() -> [[f64; 4]; 4] {
    [
        [1., 1., 1., 1.],
        [1., 1., -1., -1.],
        [1., -1., 1., -1.],
        [1., -1., -1., 1.],
    ]
}

/// Environment generators resolved by jump parity: the (u, v) signs flip the
/// decay and excitation jump terms. (+, +) is the marginal propagator
/// generator.
pub fn parity_generator(p: &MultipartiteParams, u: f64, v: f64) -> SuperOperator {
    let drive = SuperOperator::commutator(&qubit::sigma_x().scale(c64(p.omega / 2.0, 0.)));
    let low = qubit::lowering();
    let rai = qubit::raising();
    let n_dn = &rai * &low;
    let n_up = &low * &rai;
    let anti = &(&SuperOperator::left_mult(&n_dn) + &SuperOperator::right_mult(&n_dn))
        .scaled(c64(0.5 * p.gamma, 0.))
        + &(&SuperOperator::left_mult(&n_up) + &SuperOperator::right_mult(&n_up))
            .scaled(c64(0.5 * p.phi, 0.));
    let jumps = &SuperOperator::sandwich(&low, &rai).scaled(c64(u * p.gamma, 0.))
        + &SuperOperator::sandwich(&rai, &low).scaled(c64(v * p.phi, 0.));
    &(&drive + &jumps) - &anti
}

/// The four propagators exp(t M^{uv}) in the order (++, +-, -+, --).
pub fn parity_propagators(p: &MultipartiteParams, t: f64) -> [SuperOperator; 4] {
    let signs = [(1., 1.), (1., -1.), (-1., 1.), (-1., -1.)];
    signs.map(|(u, v)| parity_generator(p, u, v).exp(t))
}

/// Environment decomposition blocks F = (1/4) H . (G^{++}, G^{+-}, G^{-+}, G^{--}),
/// ordered (0, a, b, c) by the net register map they accompany.
pub fn decomposition_blocks(p: &MultipartiteParams, t: f64) -> [SuperOperator; 4] {
    let g = parity_propagators(p, t);
    let h = hadamard4();
    [0, 1, 2, 3].map(|alpha| {
        let mut f = SuperOperator::zero(&[2]);
        for (k, gk) in g.iter().enumerate() {
            f = &f + &gk.scaled(c64(0.25 * h[alpha][k], 0.));
        }
        f
    })
}

/// Closed-form weights (p0, pa, pb, pc) of the register state as a mixture
/// over net collision maps; balanced rates, stationary environment.
pub fn weights(p: &MultipartiteParams, t: f64) -> Result<[f64; 4]> {
    p.require_balanced()?;
    let g = p.gamma;
    let chi = p.chi();
    let chi2 = chi * chi;
    let e = (-g * t).exp();
    let p0 = 0.5 * e * ((g * t).cosh() + g * g / chi2 * (chi * t).cos() + p.omega * p.omega / chi2);
    let pa = 0.25 * (1.0 - (-2.0 * g * t).exp());
    let pc = 0.5 * e * ((g * t).cosh() - g * g / chi2 * (chi * t).cos() - p.omega * p.omega / chi2);
    Ok([p0, pa, pa, pc])
}

/// Closed-form time-local rates (rate_a, rate_b, rate_c) of the register
/// master equation; rate_c oscillates and diverges whenever
/// (omega/gamma)^2 + cos(chi t) crosses zero, which happens iff
/// omega < gamma.
pub fn rates(p: &MultipartiteParams, t: f64) -> Result<(f64, f64, RateSample)> {
    p.require_balanced()?;
    let g = p.gamma;
    let chi = p.chi();
    let denom = (p.omega / g).powi(2) + (chi * t).cos();
    let rc = if denom.abs() < 1e-12 {
        RateSample::Divergent
    } else {
        RateSample::Finite(0.5 * chi * (chi * t).sin() / denom)
    };
    Ok((0.5 * g, 0.5 * g, rc))
}

/// Conditional past-future correlation for three measurements of the
/// string observable (string_a or string_b) in the deterministic scheme, as
/// a function of the intermediate outcome label y and the first-measurement
/// bias <x>; balanced rates, stationary environment, anticommuting strings,
/// first measurement uniform within each outcome sector.
pub fn cpf_closed_form(
    p: &MultipartiteParams,
    t: f64,
    tau: f64,
    y: f64,
    x_avg: f64,
) -> Result<f64> {
    p.require_balanced()?;
    if !p.string_a.anticommutes_with(&p.string_b) {
        return Err(Error::IllPosed(
            "the correlation closed form needs anticommuting strings".into(),
        ));
    }
    let g = p.gamma;
    let n = p.n_qubits as i32;
    let chi = p.chi();
    let chi2 = chi * chi;
    let py = 2f64.powi(-n)
        * (1.0 + y * x_avg * (-g * t).exp() * (p.omega * p.omega + g * g * (t * chi).cos()) / chi2);
    let bracket = g * g / chi2 * (t * chi).sin() * (tau * chi).sin()
        - 4.0 * g * g * p.omega * p.omega / (chi2 * chi2)
            * (t * chi / 2.0).sin().powi(2)
            * (tau * chi / 2.0).sin().powi(2);
    Ok(-(1.0 - x_avg * x_avg) / (2f64.powi(n) * py).powi(2) * (-(t + tau) * g / 2.0).exp() * bracket)
}

/// Probability of the intermediate outcome label y in the same setting.
pub fn cpf_outcome_probability(p: &MultipartiteParams, t: f64, y: f64, x_avg: f64) -> Result<f64> {
    p.require_balanced()?;
    let g = p.gamma;
    let chi2 = p.chi().powi(2);
    Ok(2f64.powi(-(p.n_qubits as i32))
        * (1.0 + y * x_avg * (-g * t).exp() * (p.omega * p.omega + g * g * (t * chi2.sqrt()).cos()) / chi2))
}

/// Product eigenbasis of a Pauli string: one (label, vector) pair per
/// register basis vector, label = the string eigenvalue on that vector.
/// Identity letters contribute label +1 with the computational basis.
pub fn product_eigenbasis(s: &PauliString) -> Vec<(f64, CVector)> {
    let single = |p: Pauli| -> Vec<(f64, CVector)> {
        let sq = std::f64::consts::FRAC_1_SQRT_2;
        match p {
            Pauli::I => vec![
                (1.0, CVector::from_column_slice(&[c64(1., 0.), c64(0., 0.)])),
                (1.0, CVector::from_column_slice(&[c64(0., 0.), c64(1., 0.)])),
            ],
            Pauli::X => vec![
                (1.0, CVector::from_column_slice(&[c64(sq, 0.), c64(sq, 0.)])),
                (-1.0, CVector::from_column_slice(&[c64(sq, 0.), c64(-sq, 0.)])),
            ],
            Pauli::Y => vec![
                (1.0, CVector::from_column_slice(&[c64(sq, 0.), c64(0., sq)])),
                (-1.0, CVector::from_column_slice(&[c64(sq, 0.), c64(0., -sq)])),
            ],
            Pauli::Z => vec![
                (1.0, CVector::from_column_slice(&[c64(1., 0.), c64(0., 0.)])),
                (-1.0, CVector::from_column_slice(&[c64(0., 0.), c64(1., 0.)])),
            ],
        }
    };
    let mut outs: Vec<(f64, CVector)> = vec![(1.0, CVector::from_column_slice(&[c64(1., 0.)]))];
    for p in s.paulis() {
        let mut next = Vec::with_capacity(outs.len() * 2);
        for (l, v) in &outs {
            for (l2, v2) in single(*p) {
                next.push((l * l2, kron_vec(v, &v2)));
            }
        }
        outs = next;
    }
    outs
}

fn kron_vec(a: &CVector, b: &CVector) -> CVector {
    let mut out = CVector::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}

/// Register state at time t as a mixture of collision maps applied to the
/// initial state, using the closed-form weights.
pub fn state_from_weights(
    p: &MultipartiteParams,
    rho0_s: &DensityMatrix,
    t: f64,
) -> Result<Operator> {
    let w = weights(p, t)?;
    let group = collision_group(p);
    let mut out = Operator::zeros(&[p.sys_dim()]);
    for (alpha, s) in group.iter().enumerate() {
        out = &out + &s.apply(rho0_s.operator()).scale(c64(w[alpha], 0.));
    }
    Ok(out)
}
