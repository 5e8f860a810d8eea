//! Exact two-time operator correlations through the bipartite propagator,
//! compared against predictions that use only the system propagator. The
//! latter reproduce the former in the stationary regime when the bipartite
//! stationary state is a product.

use crate::error::{Error, Result};
use crate::linalg::{
    partial_trace, vectorize, CMatrix, DensityMatrix, Operator, SuperOperator, C64,
};

/// A two-time correlation request: the left operator O at time t against a
/// vector of operators A at time t + tau, all on the system factor.
#[derive(Clone, Debug)]
pub struct CorrelationRequest {
    pub left_op: Operator,
    pub right_ops: Vec<Operator>,
    pub t: f64,
    pub tau: f64,
}

impl CorrelationRequest {
    pub fn new(left_op: Operator, right_ops: Vec<Operator>, t: f64, tau: f64) -> Result<Self> {
        if t < 0.0 || tau < 0.0 {
            return Err(Error::IllPosed("times must be nonnegative".into()));
        }
        let d = left_op.dim();
        if right_ops.iter().any(|a| a.dim() != d) {
            return Err(Error::DimensionMismatch("operators differ in dimension".into()));
        }
        Ok(Self { left_op, right_ops, t, tau })
    }
}

fn split_dims(l_total: &SuperOperator) -> Result<(usize, usize)> {
    let dims = l_total.dims();
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch("need a bipartite generator".into()));
    }
    Ok((dims[0], dims[1]))
}

/// Single-time expectation values Tr_se(G_tau[rho0] (A (x) I)).
pub fn expectation(
    l_total: &SuperOperator,
    rho0_se: &DensityMatrix,
    ops: &[Operator],
    tau: f64,
) -> Result<Vec<C64>> {
    let (ds, de) = split_dims(l_total)?;
    if rho0_se.dim() != ds * de {
        return Err(Error::DimensionMismatch("state does not match the bipartition".into()));
    }
    let rho_tau = l_total.exp(tau).apply(rho0_se.operator());
    let id_e = Operator::identity(&[de]);
    ops.iter()
        .map(|a| {
            if a.dim() != ds {
                return Err(Error::DimensionMismatch("operator is not on the system".into()));
            }
            Ok((rho_tau.matrix() * a.flattened().kron(&id_e).matrix()).trace())
        })
        .collect()
}

/// Exact correlations <O(t) A(t+tau)> = Tr_se((A (x) I) G_tau[rho_t (O (x) I)]).
pub fn exact_correlation(
    l_total: &SuperOperator,
    rho0_se: &DensityMatrix,
    req: &CorrelationRequest,
) -> Result<Vec<C64>> {
    let (ds, de) = split_dims(l_total)?;
    if req.left_op.dim() != ds {
        return Err(Error::DimensionMismatch("left operator is not on the system".into()));
    }
    let id_e = Operator::identity(&[de]);
    let rho_t = l_total.exp(req.t).apply(rho0_se.operator());
    let seeded = &rho_t * &req.left_op.flattened().kron(&id_e);
    let evolved = l_total.exp(req.tau).apply(&seeded);
    req.right_ops
        .iter()
        .map(|a| {
            if a.dim() != ds {
                return Err(Error::DimensionMismatch("operator is not on the system".into()));
            }
            Ok((a.flattened().kron(&id_e).matrix() * evolved.matrix()).trace())
        })
        .collect()
}

/// System propagator G^s_tau[X] = Tr_e(G_tau[X (x) rho_ref]) built by
/// propagating a complete system-operator basis against a reference
/// environment state.
pub fn system_propagator(
    l_total: &SuperOperator,
    env_ref: &DensityMatrix,
    tau: f64,
) -> Result<SuperOperator> {
    Ok(system_propagator_family(l_total, env_ref, &[0.0, tau.max(f64::MIN_POSITIVE)])?
        .pop()
        .expect("family has two entries"))
}

/// System propagators along a grid, sharing the bipartite family.
pub fn system_propagator_family(
    l_total: &SuperOperator,
    env_ref: &DensityMatrix,
    times: &[f64],
) -> Result<Vec<SuperOperator>> {
    let (ds, de) = split_dims(l_total)?;
    if env_ref.dim() != de {
        return Err(Error::DimensionMismatch("reference state is not on the environment".into()));
    }
    let fam = crate::lindblad::PropagatorFamily::generate(l_total, times)?;
    let mut out = Vec::with_capacity(times.len());
    for g in &fam.maps {
        let mut m = CMatrix::zeros(ds * ds, ds * ds);
        for col in 0..ds * ds {
            let (r, c) = (col % ds, col / ds);
            let mut e = CMatrix::zeros(ds, ds);
            e[(r, c)] = crate::linalg::ONE;
            let probe = Operator::from_matrix(e).kron(env_ref.operator());
            let traced = partial_trace(&g.apply(&probe), 0)?;
            let v = vectorize(traced.matrix());
            for row in 0..ds * ds {
                m[(row, col)] = v[row];
            }
        }
        let mut s = SuperOperator::new(m, vec![ds])?;
        s.set_trace_preserving(true);
        out.push(s);
    }
    Ok(out)
}

/// Regression-theorem prediction: apply the system propagator (referenced to
/// the initial environment state) to the equal-time correlation,
/// Tr_s(A G^s_tau[rho_t^s O]).
pub fn qrt_prediction(
    l_total: &SuperOperator,
    rho0_se: &DensityMatrix,
    env_ref: &DensityMatrix,
    req: &CorrelationRequest,
) -> Result<Vec<C64>> {
    let (ds, _) = split_dims(l_total)?;
    let rho_t = l_total.exp(req.t).apply(rho0_se.operator());
    let rho_t_s = partial_trace(&rho_t, 0)?;
    let seeded = &rho_t_s * &req.left_op.flattened();
    let gs = system_propagator(l_total, env_ref, req.tau)?;
    let evolved = gs.apply(&seeded);
    req.right_ops
        .iter()
        .map(|a| {
            if a.dim() != ds {
                return Err(Error::DimensionMismatch("operator is not on the system".into()));
            }
            Ok((a.matrix() * evolved.matrix()).trace())
        })
        .collect()
}

/// Max-norm distance between the exact correlation vector and the
/// regression prediction.
pub fn qrt_deviation(
    l_total: &SuperOperator,
    rho0_se: &DensityMatrix,
    env_ref: &DensityMatrix,
    req: &CorrelationRequest,
) -> Result<f64> {
    let exact = exact_correlation(l_total, rho0_se, req)?;
    let predicted = qrt_prediction(l_total, rho0_se, env_ref, req)?;
    Ok(exact
        .iter()
        .zip(&predicted)
        .map(|(e, p)| (e - p).norm())
        .fold(0.0, f64::max))
}
