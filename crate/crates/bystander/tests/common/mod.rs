//! Shared helpers for the integration suites: seeded random operators,
//! states, and structurally valid couplings.

#![allow(dead_code)]

use bystander::linalg::{c64, CMatrix, CVector, DensityMatrix, Operator, SuperOperator};
use bystander::structure::{BystanderCoupling, CpMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn rand_complex_matrix(d: usize, rng: &mut ChaCha12Rng) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
}

pub fn rand_hermitian(d: usize, rng: &mut ChaCha12Rng) -> Operator {
    let m = rand_complex_matrix(d, rng);
    Operator::from_matrix((&m + m.adjoint()).scale(0.5))
}

pub fn rand_density(d: usize, rng: &mut ChaCha12Rng) -> DensityMatrix {
    let a = rand_complex_matrix(d, rng);
    let h = &a * a.adjoint() + CMatrix::identity(d, d) * c64(1e-3, 0.);
    let tr = h.trace();
    DensityMatrix::new(Operator::from_matrix(h / tr)).expect("construction is positive")
}

pub fn rand_unit_vector(d: usize, rng: &mut ChaCha12Rng) -> CVector {
    let v = CVector::from_fn(d, |_, _| c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
    let n = v.norm();
    v / c64(n, 0.)
}

/// Random unitary from the QR decomposition of a Gaussian-ish matrix.
pub fn rand_unitary(d: usize, rng: &mut ChaCha12Rng) -> Operator {
    let m = rand_complex_matrix(d, rng);
    let qr = m.qr();
    Operator::from_matrix(qr.q())
}

/// Random positive semidefinite matrix with unit-scale entries.
pub fn rand_psd(n: usize, rng: &mut ChaCha12Rng) -> CMatrix {
    let a = rand_complex_matrix(n, rng);
    &a * a.adjoint()
}

/// A random trace-preserving channel with two Kraus operators, built from
/// the thin QR factor of a tall random matrix.
pub fn rand_channel(d: usize, rng: &mut ChaCha12Rng) -> CpMap {
    let tall = nalgebra::DMatrix::from_fn(2 * d, d, |_, _| {
        c64(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    });
    let q = tall.qr().q();
    let k1 = Operator::from_matrix(q.rows(0, d).into_owned());
    let k2 = Operator::from_matrix(q.rows(d, d).into_owned());
    CpMap::new(vec![k1, k2]).expect("isometry columns give a trace-preserving map")
}

/// A structurally valid coupling: Hermitian positive rates, arbitrary
/// environment operators, and a map matrix satisfying the adjoint symmetry
/// (for Kraus-form maps the off-diagonal pairs must be equal).
pub fn rand_coupling(ds: usize, de: usize, n: usize, rng: &mut ChaCha12Rng) -> BystanderCoupling {
    let gamma = {
        let g = rand_psd(n, rng);
        // keep rates at unit scale
        let tr = g.trace().re;
        g * c64(n as f64 / tr, 0.)
    };
    let env_ops: Vec<Operator> = (0..n).map(|_| Operator::from_matrix(rand_complex_matrix(de, rng))).collect();
    let mut sys_maps: Vec<Vec<CpMap>> = vec![vec![CpMap::identity(&[ds]); n]; n];
    for a in 0..n {
        sys_maps[a][a] = rand_channel(ds, rng);
        for b in (a + 1)..n {
            let shared = rand_channel(ds, rng);
            sys_maps[a][b] = shared.clone();
            sys_maps[b][a] = shared;
        }
    }
    BystanderCoupling::new(gamma, env_ops, sys_maps).expect("construction satisfies invariants")
}

/// Random Lindblad generator on a d-dimensional space.
pub fn rand_lindbladian(d: usize, rng: &mut ChaCha12Rng) -> SuperOperator {
    let h = rand_hermitian(d, rng);
    let j = Operator::from_matrix(rand_complex_matrix(d, rng));
    let rate = 0.2 + rng.random::<f64>();
    &SuperOperator::commutator(&h) + &SuperOperator::dissipator(&j, rate)
}
