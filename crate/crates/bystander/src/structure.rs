//! The general coupling that leaves the environment untouched by the system:
//! generator assembly, structural verifiers, the separable decomposition of
//! the bipartite state, and the conditional-rate balance identities.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{
    c64, herm_eig, herm_eig_mat, lift_env, lift_system, max_abs, partial_trace, sandwich_second,
    vectorize, CMatrix, CVector, DensityMatrix, Operator, SuperOperator, ONE,
};
use crate::tol;

/// A completely positive trace-preserving map in Kraus form.
#[derive(Clone, Debug)]
pub struct CpMap {
    kraus: Vec<Operator>,
}

impl CpMap {
    pub fn new(kraus: Vec<Operator>) -> Result<Self> {
        if kraus.is_empty() {
            return Err(Error::InvalidCoupling("empty Kraus list".into()));
        }
        let d = kraus[0].dim();
        let mut sum = CMatrix::zeros(d, d);
        for v in &kraus {
            if v.dim() != d {
                return Err(Error::DimensionMismatch("Kraus operators differ in dimension".into()));
            }
            sum += v.matrix().adjoint() * v.matrix();
        }
        let dev = max_abs(&(sum - CMatrix::identity(d, d)));
        if dev > tol::STRUCT {
            return Err(Error::NotTracePreserving { deviation: dev });
        }
        Ok(Self { kraus })
    }

    pub fn identity(dims: &[usize]) -> Self {
        Self { kraus: vec![Operator::identity(dims)] }
    }

    /// Map rho -> u rho u^dag for unitary (or Hermitian involutive) u.
    pub fn conjugation(u: &Operator) -> Result<Self> {
        Self::new(vec![u.clone()])
    }

    pub fn kraus(&self) -> &[Operator] {
        &self.kraus
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].dim()
    }

    pub fn superoperator(&self) -> SuperOperator {
        let mut s = SuperOperator::zero(self.kraus[0].dims());
        for v in &self.kraus {
            s = &s + &SuperOperator::conjugation(v);
        }
        s.set_trace_preserving(true);
        s
    }

    pub fn apply(&self, rho: &Operator) -> Operator {
        let mut out = Operator::zeros(rho.dims());
        for v in &self.kraus {
            out = &out + &(&(v * rho) * &v.dag());
        }
        out
    }
}

/// The data of the general dissipative coupling: a Hermitian positive rate
/// matrix, environment operators, and a matrix of trace-preserving system
/// maps applied on each environment transition.
#[derive(Clone, Debug)]
pub struct BystanderCoupling {
    gamma: CMatrix,
    env_ops: Vec<Operator>,
    sys_maps: Vec<Vec<CpMap>>,
}

impl BystanderCoupling {
    pub fn new(gamma: CMatrix, env_ops: Vec<Operator>, sys_maps: Vec<Vec<CpMap>>) -> Result<Self> {
        let n = env_ops.len();
        if gamma.nrows() != n || gamma.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "rate matrix is {}x{} for {} environment operators",
                gamma.nrows(),
                gamma.ncols(),
                n
            )));
        }
        let dev = max_abs(&(&gamma - gamma.adjoint()));
        if dev > tol::STRUCT {
            return Err(Error::NotHermitian { deviation: dev });
        }
        if n > 0 {
            let eig = herm_eig_mat(&gamma)?;
            if eig.values[0] < -tol::STRUCT {
                return Err(Error::NotPositive { min_eigenvalue: eig.values[0] });
            }
        }
        if sys_maps.len() != n || sys_maps.iter().any(|row| row.len() != n) {
            return Err(Error::DimensionMismatch("system map matrix is not n x n".into()));
        }
        let de = env_ops.first().map(|b| b.dim()).unwrap_or(0);
        for b in &env_ops {
            if b.dim() != de {
                return Err(Error::DimensionMismatch(
                    "environment operators differ in dimension".into(),
                ));
            }
        }
        // adjoint symmetry: the Hermiticity conjugate of S_{ab} must equal
        // S_{ba}, otherwise the bipartite generator does not preserve
        // Hermiticity; for Kraus-form maps this reduces to S_{ab} = S_{ba}
        for a in 0..n {
            for b in 0..=a {
                let conj = sys_maps[a][b].superoperator().conj_adjoint();
                let other = sys_maps[b][a].superoperator();
                let dev = max_abs(&(conj.matrix() - other.matrix()));
                if dev > tol::STRUCT {
                    return Err(Error::InvalidCoupling(format!(
                        "system maps break the adjoint symmetry at ({a},{b}), deviation {dev:.3e}"
                    )));
                }
            }
        }
        Ok(Self { gamma, env_ops, sys_maps })
    }

    /// Coupling with a diagonal rate matrix: one (rate, B, S) triple per
    /// channel. Each diagonal S must be self-adjoint as a superoperator;
    /// off-diagonal maps are unused and filled with the identity.
    pub fn diagonal(channels: Vec<(f64, Operator, CpMap)>) -> Result<Self> {
        let n = channels.len();
        let ds = channels.first().map(|(_, _, s)| s.dim()).unwrap_or(1);
        let mut gamma = CMatrix::zeros(n, n);
        let mut env_ops = Vec::with_capacity(n);
        let mut sys_maps: Vec<Vec<CpMap>> =
            vec![vec![CpMap::identity(&[ds]); n]; n];
        for (k, (rate, b, s)) in channels.into_iter().enumerate() {
            gamma[(k, k)] = c64(rate, 0.);
            env_ops.push(b);
            sys_maps[k][k] = s;
        }
        Self::new(gamma, env_ops, sys_maps)
    }

    pub fn n_channels(&self) -> usize {
        self.env_ops.len()
    }

    pub fn gamma(&self) -> &CMatrix {
        &self.gamma
    }

    pub fn env_ops(&self) -> &[Operator] {
        &self.env_ops
    }

    pub fn sys_map(&self, a: usize, b: usize) -> &CpMap {
        &self.sys_maps[a][b]
    }

    pub fn env_dim(&self) -> usize {
        self.env_ops.first().map(|b| b.dim()).unwrap_or(0)
    }

    pub fn sys_dim(&self) -> usize {
        self.sys_maps.first().and_then(|r| r.first()).map(|m| m.dim()).unwrap_or(0)
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.n_channels();
        (0..n).all(|a| (0..n).all(|b| a == b || self.gamma[(a, b)].norm() <= tol::STRUCT))
    }

    /// Diagonal channels (rate, B, S); errors when the rate matrix has
    /// off-diagonal entries.
    pub fn channels(&self) -> Result<Vec<(f64, Operator, CpMap)>> {
        if !self.is_diagonal() {
            return Err(Error::InvalidCoupling(
                "operation requires a diagonal rate matrix".into(),
            ));
        }
        Ok((0..self.n_channels())
            .map(|k| (self.gamma[(k, k)].re, self.env_ops[k].clone(), self.sys_maps[k][k].clone()))
            .collect())
    }
}

/// Bipartite generator: lifted system and environment parts plus the
/// coupling dissipator
/// sum_{ab} Gamma_ab (B_a S_ab[.] B_b^dag - 1/2 {B_b^dag B_a, .}).
pub fn bipartite_generator(
    l_s: &SuperOperator,
    l_e: &SuperOperator,
    coupling: &BystanderCoupling,
) -> Result<SuperOperator> {
    let ds = coupling.sys_dim();
    let de = coupling.env_dim();
    if l_s.dim() != ds || l_e.dim() != de {
        return Err(Error::DimensionMismatch(
            "isolated generators do not match coupling dimensions".into(),
        ));
    }
    let mut total = &lift_system(l_s, &[de]) + &lift_env(l_e, &[ds]);
    let n = coupling.n_channels();
    let id_s = Operator::identity(&[ds]);
    for a in 0..n {
        for b in 0..n {
            let g = coupling.gamma[(a, b)];
            if g.norm() == 0.0 {
                continue;
            }
            let ba = &coupling.env_ops[a];
            let bb_dag = coupling.env_ops[b].dag();
            // jump part: sum_k (V_k (x) B_a) rho (V_k^dag (x) B_b^dag)
            for v in coupling.sys_maps[a][b].kraus() {
                let left = v.flattened().kron(ba);
                let right = v.dag().flattened().kron(&bb_dag);
                total = &total + &SuperOperator::sandwich(&left, &right).scaled(g);
            }
            // anticommutator part on the environment factor
            let anti = id_s.kron(&(&bb_dag * ba));
            total = &total
                - &(&SuperOperator::left_mult(&anti) + &SuperOperator::right_mult(&anti))
                    .scaled(g * c64(0.5, 0.));
        }
    }
    total.set_trace_preserving(true);
    Ok(total)
}

/// Environment marginal generator
/// L_e + sum_{ab} Gamma_ab (B_a . B_b^dag - 1/2 {B_b^dag B_a, .}).
pub fn env_marginal_generator(
    coupling: &BystanderCoupling,
    l_e: &SuperOperator,
) -> Result<SuperOperator> {
    let de = coupling.env_dim();
    if l_e.dim() != de {
        return Err(Error::DimensionMismatch("environment generator dimension mismatch".into()));
    }
    let mut total = l_e.clone();
    let n = coupling.n_channels();
    for a in 0..n {
        for b in 0..n {
            let g = coupling.gamma[(a, b)];
            if g.norm() == 0.0 {
                continue;
            }
            let ba = &coupling.env_ops[a];
            let bb_dag = coupling.env_ops[b].dag();
            let anti = &bb_dag * ba;
            let term = &SuperOperator::sandwich(ba, &bb_dag)
                - &(&SuperOperator::left_mult(&anti) + &SuperOperator::right_mult(&anti))
                    .scaled(c64(0.5, 0.));
            total = &total + &term.scaled(g);
        }
    }
    total.set_trace_preserving(true);
    Ok(total)
}

/// Outcome of checking whether a bipartite generator leaves the environment
/// marginal autonomous: Tr_s(L[X (x) Y]) = Tr(X) A[Y] for all X, Y.
#[derive(Clone, Debug)]
pub struct BystanderCheck {
    pub holds: bool,
    /// Max norm of the worst violation over a Hermitian product basis.
    pub violation: f64,
    /// The extracted marginal generator A; meaningful when `holds`.
    pub env_generator: SuperOperator,
}

pub fn verify_bystander_condition(l_se: &SuperOperator, tolerance: f64) -> Result<BystanderCheck> {
    let dims = l_se.dims();
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch(
            "bystander check needs a superoperator on exactly two factors".into(),
        ));
    }
    let (ds, de) = (dims[0], dims[1]);
    // extract A from X = I_s: A[E_rc] = Tr_s(L[I (x) E_rc]) / d_s
    let id_s = Operator::identity(&[ds]);
    let mut a_mat = CMatrix::zeros(de * de, de * de);
    for col in 0..de * de {
        let (r, c) = (col % de, col / de);
        let mut e = CMatrix::zeros(de, de);
        e[(r, c)] = ONE;
        let probe = id_s.kron(&Operator::from_matrix(e));
        let out = partial_trace(&l_se.apply(&probe), 1)?;
        let v = vectorize(&(out.matrix() / c64(ds as f64, 0.)));
        for row in 0..de * de {
            a_mat[(row, col)] = v[row];
        }
    }
    let env_generator = SuperOperator::new(a_mat, vec![de])?;
    // violation over the Hermitian product basis
    let sys_basis = crate::linalg::hermitian_basis(ds);
    let env_basis = crate::linalg::hermitian_basis(de);
    let mut violation: f64 = 0.0;
    for x in &sys_basis {
        let trx = x.trace();
        for y in &env_basis {
            let lhs = partial_trace(&l_se.apply(&x.kron(y)), 1)?;
            let rhs = env_generator.apply(y).scale(trx);
            violation = violation.max(max_abs(&(lhs.matrix() - rhs.matrix())));
        }
    }
    Ok(BystanderCheck { holds: violation <= tolerance, violation, env_generator })
}

/// Outcome of the Hamiltonian factorization test: a unitary coupling leaves
/// the environment autonomous only when H = I_s (x) Q_e, i.e. when system
/// and environment do not interact at all.
#[derive(Clone, Debug)]
pub struct UnitaryCouplingCheck {
    pub is_bystander: bool,
    pub deviation: f64,
    pub q_env: Option<Operator>,
}

pub fn unitary_coupling_check(h_se: &Operator, tolerance: f64) -> Result<UnitaryCouplingCheck> {
    let dev = h_se.hermiticity_deviation();
    if dev > tol::STRUCT {
        return Err(Error::NotHermitian { deviation: dev });
    }
    let dims = h_se.dims();
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch("need an operator on exactly two factors".into()));
    }
    let (ds, de) = (dims[0], dims[1]);
    let m = h_se.matrix();
    // mean diagonal block
    let mut q = CMatrix::zeros(de, de);
    for s in 0..ds {
        for a in 0..de {
            for b in 0..de {
                q[(a, b)] += m[(s * de + a, s * de + b)] / c64(ds as f64, 0.);
            }
        }
    }
    let mut deviation: f64 = 0.0;
    for s in 0..ds {
        for sp in 0..ds {
            for a in 0..de {
                for b in 0..de {
                    let expect = if s == sp { q[(a, b)] } else { c64(0., 0.) };
                    deviation = deviation.max((m[(s * de + a, sp * de + b)] - expect).norm());
                }
            }
        }
    }
    let is_bystander = deviation <= tolerance;
    Ok(UnitaryCouplingCheck {
        is_bystander,
        deviation,
        q_env: is_bystander.then(|| Operator::from_matrix(q)),
    })
}

/// A bipartite Lindblad specification in factorized form: jump operators
/// T_{k,a} = V_k (x) B_a with rates indexed by the flattened pair (k, a)
/// (k major, a minor).
#[derive(Clone, Debug)]
pub struct FactorizedLindblad {
    pub sys_ops: Vec<Operator>,
    pub env_ops: Vec<Operator>,
    /// (n_sys * n_env) square Hermitian PSD rate matrix gamma_{ka,lb}.
    pub rates: CMatrix,
}

/// Outcome of the rate-factorization constraint: the coupling leaves the
/// environment autonomous iff D_ab = sum_kl gamma_{ka,lb} V_l^dag V_k is
/// proportional to the system identity for every (a, b).
#[derive(Clone, Debug)]
pub struct RateFactorization {
    pub holds: bool,
    pub max_deviation: f64,
    /// Extracted coefficients Gamma_ab = Tr(D_ab)/d_s.
    pub gamma: CMatrix,
}

pub fn rate_factorization_check(
    spec: &FactorizedLindblad,
    tolerance: f64,
) -> Result<RateFactorization> {
    let nk = spec.sys_ops.len();
    let na = spec.env_ops.len();
    let n = nk * na;
    if spec.rates.nrows() != n || spec.rates.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "rate matrix is {}x{} for {} factorized channels",
            spec.rates.nrows(),
            spec.rates.ncols(),
            n
        )));
    }
    let ds = spec.sys_ops.first().map(|v| v.dim()).unwrap_or(0);
    let mut gamma = CMatrix::zeros(na, na);
    let mut max_dev: f64 = 0.0;
    for a in 0..na {
        for b in 0..na {
            let mut d_ab = CMatrix::zeros(ds, ds);
            for k in 0..nk {
                for l in 0..nk {
                    let g = spec.rates[(k * na + a, l * na + b)];
                    if g.norm() == 0.0 {
                        continue;
                    }
                    d_ab += spec.sys_ops[l].matrix().adjoint() * spec.sys_ops[k].matrix() * g;
                }
            }
            let coeff = d_ab.trace() / c64(ds as f64, 0.);
            gamma[(a, b)] = coeff;
            let dev = max_abs(&(d_ab - CMatrix::identity(ds, ds) * coeff));
            max_dev = max_dev.max(dev);
        }
    }
    let herm_dev = max_abs(&(&gamma - gamma.adjoint()));
    Ok(RateFactorization { holds: max_dev <= tolerance && herm_dev <= tolerance, max_deviation: max_dev, gamma })
}

/// The separable block decomposition of a bipartite state in the eigenbasis
/// of its environment marginal.
#[derive(Clone, Debug)]
pub struct SeparableDecomposition {
    /// Environment eigenvalues p_c, ascending.
    pub weights: Vec<f64>,
    /// Environment eigenvectors as matrix columns, same order as `weights`.
    pub env_basis: CMatrix,
    /// Subnormalized conditional system states, Tr rho_c = p_c.
    pub cond_states: Vec<Operator>,
    /// Max norm of the off-block coherences <c| rho_se |c'>; a small value
    /// certifies that the state is separable with a classically correlated
    /// environment.
    pub residual: f64,
}

pub fn separability_decompose(rho_se: &DensityMatrix) -> Result<SeparableDecomposition> {
    let dims = rho_se.dims();
    if dims.len() != 2 {
        return Err(Error::DimensionMismatch("need a state on exactly two factors".into()));
    }
    let rho_e = partial_trace(rho_se.operator(), 1)?;
    let eig = herm_eig(&rho_e)?;
    let de = rho_e.dim();
    let mut cond_states = Vec::with_capacity(de);
    let mut residual: f64 = 0.0;
    for c in 0..de {
        let vc = eig.vector(c);
        cond_states.push(sandwich_second(rho_se.operator(), &vc, &vc));
        for cp in 0..de {
            if cp != c {
                let off = sandwich_second(rho_se.operator(), &vc, &eig.vector(cp));
                residual = residual.max(off.max_abs());
            }
        }
    }
    Ok(SeparableDecomposition {
        weights: eig.values,
        env_basis: eig.vectors,
        cond_states,
        residual,
    })
}

/// Conditional transition rates in a given environment basis. Matrices are
/// indexed (destination c, source c~): `gamma[(c, ct)]` is the rate of the
/// environment transition c~ -> c, and `weighted_maps[c][ct]` is the
/// rate-weighted system map applied on that transition.
#[derive(Clone, Debug)]
pub struct ConditionalRates {
    pub phi: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    /// gamma_{c<-c~} * S_{c<-c~} as superoperators (numerator form, safe at
    /// zero rate).
    pub weighted_maps: Vec<Vec<SuperOperator>>,
}

impl ConditionalRates {
    /// The normalized trace-preserving map on the transition c~ -> c, or
    /// None when its rate vanishes and the map is undefined.
    pub fn map(&self, c: usize, ct: usize) -> Option<SuperOperator> {
        let g = self.gamma[(c, ct)];
        if g.abs() <= 1e-14 {
            None
        } else {
            Some(self.weighted_maps[c][ct].scaled(c64(1.0 / g, 0.)))
        }
    }
}

pub fn conditional_rates(
    coupling: &BystanderCoupling,
    l_e: &SuperOperator,
    env_basis: &CMatrix,
) -> Result<ConditionalRates> {
    let de = coupling.env_dim();
    if env_basis.nrows() != de || env_basis.ncols() != de {
        return Err(Error::DimensionMismatch("environment basis has wrong shape".into()));
    }
    let gram = env_basis.adjoint() * env_basis;
    if max_abs(&(gram - CMatrix::identity(de, de))) > 1e-8 {
        return Err(Error::IllPosed("environment basis is not orthonormal".into()));
    }
    let ds = coupling.sys_dim();
    let n = coupling.n_channels();
    let mut phi = DMatrix::zeros(de, de);
    let mut gamma = DMatrix::zeros(de, de);
    let mut weighted_maps = vec![vec![SuperOperator::zero(&[ds]); de]; de];
    // precompute matrix elements <c|B_a|ct>
    let mut belem = vec![CMatrix::zeros(de, de); n];
    for (a, b_op) in coupling.env_ops.iter().enumerate() {
        for c in 0..de {
            for ct in 0..de {
                let vc = env_basis.column(c);
                let vct = env_basis.column(ct);
                belem[a][(c, ct)] = (vc.adjoint() * b_op.matrix() * vct)[(0, 0)];
            }
        }
    }
    let smaps: Vec<Vec<SuperOperator>> = (0..n)
        .map(|a| (0..n).map(|b| coupling.sys_map(a, b).superoperator()).collect())
        .collect();
    for c in 0..de {
        let vc: CVector = env_basis.column(c).into_owned();
        for ct in 0..de {
            let vct: CVector = env_basis.column(ct).into_owned();
            // phi_{c, c~} = <c| L_e[|c~><c~|] |c>
            let proj = Operator::from_matrix(&vct * vct.adjoint());
            let le_proj = l_e.apply(&proj);
            let val = (vc.adjoint() * le_proj.matrix() * &vc)[(0, 0)];
            phi[(c, ct)] = val.re;
            // gamma_{c, c~} = sum_ab Gamma_ab <c|B_a|c~> <c~|B_b^dag|c>
            let mut rate = c64(0., 0.);
            let mut wmap = SuperOperator::zero(&[ds]);
            for a in 0..n {
                for b in 0..n {
                    let w = coupling.gamma[(a, b)] * belem[a][(c, ct)] * belem[b][(c, ct)].conj();
                    if w.norm() == 0.0 {
                        continue;
                    }
                    rate += w;
                    wmap = &wmap + &smaps[a][b].scaled(w);
                }
            }
            gamma[(c, ct)] = rate.re;
            weighted_maps[c][ct] = wmap;
        }
    }
    Ok(ConditionalRates { phi, gamma, weighted_maps })
}

/// Environment eigenbases tracked continuously along a trajectory, plus the
/// decomposition weights and conditional states at every grid point.
#[derive(Clone, Debug)]
pub struct TrackedDecomposition {
    pub times: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub bases: Vec<CMatrix>,
    pub cond_states: Vec<Vec<Operator>>,
    /// Grid points at which eigenvalue crossings make branch tracking
    /// ambiguous (min gap below 1e-8); residuals there are unreliable.
    pub unreliable: Vec<bool>,
}

/// Decompose every state of a trajectory, matching eigenbranches between
/// consecutive grid points by maximal overlap and fixing each phase so the
/// largest-magnitude component is real positive.
pub fn track_decomposition(
    times: &[f64],
    trajectory: &[DensityMatrix],
) -> Result<TrackedDecomposition> {
    if times.len() != trajectory.len() || times.is_empty() {
        return Err(Error::DimensionMismatch("trajectory and grid lengths differ".into()));
    }
    let mut weights = Vec::with_capacity(times.len());
    let mut bases: Vec<CMatrix> = Vec::with_capacity(times.len());
    let mut cond_states = Vec::with_capacity(times.len());
    let mut unreliable = Vec::with_capacity(times.len());
    for (k, rho_se) in trajectory.iter().enumerate() {
        let rho_e = partial_trace(rho_se.operator(), 1)?;
        let eig = herm_eig(&rho_e)?;
        let de = rho_e.dim();
        let min_gap = eig
            .values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(f64::INFINITY, f64::min);
        unreliable.push(min_gap < 1e-8);
        let (vals, vecs) = if k == 0 {
            (eig.values.clone(), fix_phases(&eig.vectors))
        } else {
            reorder_to_previous(&bases[k - 1], &eig.values, &eig.vectors)
        };
        let mut states = Vec::with_capacity(de);
        for c in 0..de {
            let vc: CVector = vecs.column(c).into_owned();
            states.push(sandwich_second(rho_se.operator(), &vc, &vc));
        }
        weights.push(vals);
        bases.push(vecs);
        cond_states.push(states);
    }
    Ok(TrackedDecomposition {
        times: times.to_vec(),
        weights,
        bases,
        cond_states,
        unreliable,
    })
}

fn fix_phases(vectors: &CMatrix) -> CMatrix {
    let mut out = vectors.clone();
    for c in 0..out.ncols() {
        let col = out.column(c).into_owned();
        let mut kmax = 0;
        for k in 0..col.len() {
            if col[k].norm() > col[kmax].norm() {
                kmax = k;
            }
        }
        let z = col[kmax];
        if z.norm() > 0.0 {
            let phase = z.conj() / c64(z.norm(), 0.);
            out.set_column(c, &(col * phase));
        }
    }
    out
}

fn reorder_to_previous(prev: &CMatrix, values: &[f64], vectors: &CMatrix) -> (Vec<f64>, CMatrix) {
    let d = prev.ncols();
    let mut used = vec![false; d];
    let mut order = vec![0usize; d];
    for i in 0..d {
        let pi = prev.column(i);
        let mut best = 0.0;
        let mut best_j = usize::MAX;
        for (j, &u) in used.iter().enumerate() {
            if u {
                continue;
            }
            let ov = (pi.adjoint() * vectors.column(j))[(0, 0)].norm();
            if ov > best || best_j == usize::MAX {
                best = ov;
                best_j = j;
            }
        }
        used[best_j] = true;
        order[i] = best_j;
    }
    let mut vals = vec![0.0; d];
    let mut vecs = CMatrix::zeros(vectors.nrows(), d);
    for i in 0..d {
        vals[i] = values[order[i]];
        vecs.set_column(i, &vectors.column(order[i]));
    }
    (vals, fix_phases(&vecs))
}

/// Residuals of the conditional balance identities along a trajectory,
/// evaluated with centered finite differences on the grid interior.
#[derive(Clone, Debug)]
pub struct BalanceResiduals {
    /// Max residual of the weight (probability) balance. This identity is
    /// exact: the weights are eigenvalues of the autonomous environment
    /// marginal, so their motion is fixed by first-order perturbation
    /// theory regardless of the bipartite block structure.
    pub weight_residual: f64,
    /// Max residual of the conditional-state balance. Exact for incoherent
    /// environments (fixed eigenbasis); for driven environments the
    /// conditional states develop off-block coherences that feed back into
    /// this balance, so the residual grows with them.
    pub state_residual: f64,
    /// Interior points skipped because of eigenvalue crossings.
    pub skipped: usize,
}

/// Verify the conditional weight and state balance equations as
/// finite-difference residual identities along an exact trajectory. The
/// trajectory is propagated elsewhere; these equations are never used to
/// propagate.
pub fn conditional_balance_residuals(
    times: &[f64],
    trajectory: &[DensityMatrix],
    coupling: &BystanderCoupling,
    l_s: &SuperOperator,
    l_e: &SuperOperator,
) -> Result<BalanceResiduals> {
    let n = times.len();
    if n < 3 {
        return Err(Error::IllPosed("need at least three grid points".into()));
    }
    let tracked = track_decomposition(times, trajectory)?;
    let de = coupling.env_dim();
    let mut weight_residual: f64 = 0.0;
    let mut state_residual: f64 = 0.0;
    let mut skipped = 0usize;
    let mut evaluated = 0usize;
    for k in 1..n - 1 {
        if tracked.unreliable[k - 1] || tracked.unreliable[k] || tracked.unreliable[k + 1] {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        let h2 = times[k + 1] - times[k - 1];
        let rates = conditional_rates(coupling, l_e, &tracked.bases[k])?;
        for c in 0..de {
            // total derivative: centered difference plus basis-motion term
            let mut dpc = (tracked.weights[k + 1][c] - tracked.weights[k - 1][c]) / h2;
            let mut drc = (&tracked.cond_states[k + 1][c] - &tracked.cond_states[k - 1][c])
                .scale(c64(1.0 / h2, 0.));
            let vc: CVector = tracked.bases[k].column(c).into_owned();
            for ct in 0..de {
                let vp: CVector = tracked.bases[k + 1].column(ct).into_owned();
                let vm: CVector = tracked.bases[k - 1].column(ct).into_owned();
                let proj_p = &vp * vp.adjoint();
                let proj_m = &vm * vm.adjoint();
                let dproj = (proj_p - proj_m) / c64(h2, 0.);
                let coeff = (vc.adjoint() * dproj * &vc)[(0, 0)];
                dpc += coeff.re * tracked.weights[k][ct];
                drc = &drc + &tracked.cond_states[k][ct].scale(coeff);
            }
            // gain minus loss on both tiers
            let mut rhs_w = 0.0;
            let mut rhs_s = l_s.apply(&tracked.cond_states[k][c]);
            for ct in 0..de {
                rhs_w += rates.phi[(c, ct)] * tracked.weights[k][ct]
                    - rates.phi[(ct, c)] * tracked.weights[k][c];
                rhs_w += rates.gamma[(c, ct)] * tracked.weights[k][ct]
                    - rates.gamma[(ct, c)] * tracked.weights[k][c];
                let phi_gain = tracked.cond_states[k][ct].scale(c64(rates.phi[(c, ct)], 0.));
                let phi_loss = tracked.cond_states[k][c].scale(c64(rates.phi[(ct, c)], 0.));
                let g_gain = rates.weighted_maps[c][ct].apply(&tracked.cond_states[k][ct]);
                let g_loss = tracked.cond_states[k][c].scale(c64(rates.gamma[(ct, c)], 0.));
                rhs_s = &(&(&rhs_s + &phi_gain) - &phi_loss) + &(&g_gain - &g_loss);
            }
            weight_residual = weight_residual.max((dpc - rhs_w).abs());
            state_residual = state_residual.max((&drc - &rhs_s).max_abs());
        }
    }
    if evaluated == 0 {
        return Err(Error::IllPosed(
            "every interior point sits at an eigenvalue crossing; refine the grid".into(),
        ));
    }
    Ok(BalanceResiduals { weight_residual, state_residual, skipped })
}
