//! A complete simulation scenario: isolated generators, coupling, and
//! initial states on a declared system/environment bipartition.

use crate::error::{Error, Result};
use crate::linalg::{herm_eig_mat, max_abs, unvectorize, DensityMatrix, SuperOperator};
use crate::structure::{bipartite_generator, env_marginal_generator, BystanderCoupling};
use crate::tol;

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub l_s: SuperOperator,
    pub l_e: SuperOperator,
    pub coupling: BystanderCoupling,
    pub rho0_s: DensityMatrix,
    pub rho0_e: DensityMatrix,
}

impl ModelSpec {
    pub fn new(
        l_s: SuperOperator,
        l_e: SuperOperator,
        coupling: BystanderCoupling,
        rho0_s: DensityMatrix,
        rho0_e: DensityMatrix,
    ) -> Result<Self> {
        let ds = coupling.sys_dim();
        let de = coupling.env_dim();
        if l_s.dim() != ds || rho0_s.dim() != ds {
            return Err(Error::DimensionMismatch("system parts disagree on dimension".into()));
        }
        if l_e.dim() != de || rho0_e.dim() != de {
            return Err(Error::DimensionMismatch("environment parts disagree on dimension".into()));
        }
        Ok(Self { l_s, l_e, coupling, rho0_s, rho0_e })
    }

    pub fn sys_dim(&self) -> usize {
        self.coupling.sys_dim()
    }

    pub fn env_dim(&self) -> usize {
        self.coupling.env_dim()
    }

    /// Full bipartite generator (system factor first).
    pub fn total_generator(&self) -> Result<SuperOperator> {
        bipartite_generator(&self.l_s, &self.l_e, &self.coupling)
    }

    /// Autonomous generator of the environment marginal.
    pub fn env_generator(&self) -> Result<SuperOperator> {
        env_marginal_generator(&self.coupling, &self.l_e)
    }

    /// Product initial state on the bipartition.
    pub fn initial_state(&self) -> DensityMatrix {
        self.rho0_s.kron(&self.rho0_e)
    }

    pub fn with_initial_system(&self, rho0_s: DensityMatrix) -> Result<Self> {
        Self::new(self.l_s.clone(), self.l_e.clone(), self.coupling.clone(), rho0_s, self.rho0_e.clone())
    }

    pub fn with_initial_env(&self, rho0_e: DensityMatrix) -> Result<Self> {
        Self::new(self.l_s.clone(), self.l_e.clone(), self.coupling.clone(), self.rho0_s.clone(), rho0_e)
    }
}

/// Stationary state of a generator as the kernel direction of its matrix,
/// found from the eigendecomposition of L^dag L. Uniqueness is asserted by a
/// spectral-gap check on the second-smallest singular value.
pub fn stationary_state(l: &SuperOperator) -> Result<DensityMatrix> {
    let d = l.dim();
    let m = l.matrix();
    let gram = m.adjoint() * m;
    let eig = herm_eig_mat(&gram)?;
    let scale = eig.values.last().copied().unwrap_or(1.0).max(1e-300);
    let sigma2 = eig.values.get(1).copied().unwrap_or(f64::INFINITY).max(0.0).sqrt();
    if eig.values[0] > 1e-12 * scale {
        return Err(Error::Numerical(format!(
            "no stationary state: smallest squared singular value {:.3e} at scale {scale:.3e}",
            eig.values[0]
        )));
    }
    if sigma2 <= 1e-10 {
        return Err(Error::Numerical(format!(
            "stationary state is not unique: spectral gap {sigma2:.3e}"
        )));
    }
    let kernel = eig.vector(0);
    let raw = unvectorize(&kernel, d);
    // normalize trace (this also removes the arbitrary global phase) and
    // symmetrize away the numerical skew
    let tr = raw.trace();
    if tr.norm() < 1e-12 {
        return Err(Error::Numerical("kernel direction is traceless".into()));
    }
    let raw = raw / tr;
    let herm = (&raw + raw.adjoint()) * crate::linalg::c64(0.5, 0.);
    let dev = max_abs(&(&herm - &raw));
    if dev > tol::NUM {
        return Err(Error::Numerical(format!("stationary state not Hermitian ({dev:.3e})")));
    }
    DensityMatrix::with_tol(
        crate::linalg::Operator::new(herm, vec![d])?,
        tol::NUM,
    )
}
