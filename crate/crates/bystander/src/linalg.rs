//! Dense complex linear algebra over small multipartite Hilbert spaces.
//!
//! Operators carry their subsystem dimensions so tensor products and partial
//! traces can be taken without external bookkeeping. Superoperators act on
//! column-vectorized operators; with column stacking the map `rho -> A rho B`
//! has matrix `B^T (x) A`, which is the convention used everywhere in this
//! crate and pinned by a round-trip test below.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::tol;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ONE: C64 = Complex::new(1.0, 0.0);
pub const I: C64 = Complex::new(0.0, 1.0);

pub fn c64(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// Column-stack a matrix into a vector.
pub fn vectorize(m: &CMatrix) -> CVector {
    CVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`] for a square matrix of dimension `d`.
pub fn unvectorize(v: &CVector, d: usize) -> CMatrix {
    assert_eq!(v.len(), d * d, "vector length does not match dimension");
    CMatrix::from_column_slice(d, d, v.as_slice())
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// A dense operator together with the ordered subsystem dimensions of the
/// Hilbert space it acts on. The first factor is the slow index.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    mat: CMatrix,
    dims: Vec<usize>,
}

impl Operator {
    pub fn new(mat: CMatrix, dims: Vec<usize>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "matrix is {}x{} but subsystem dims {:?} give {}",
                mat.nrows(),
                mat.ncols(),
                dims,
                d
            )));
        }
        if dims.is_empty() || dims.iter().any(|&x| x == 0) {
            return Err(Error::DimensionMismatch("empty or zero subsystem".into()));
        }
        Ok(Self { mat, dims })
    }

    /// Single-subsystem operator from a square matrix.
    pub fn from_matrix(mat: CMatrix) -> Self {
        let d = mat.nrows();
        assert_eq!(d, mat.ncols(), "operator matrix must be square");
        Self { mat, dims: vec![d] }
    }

    pub fn from_rows(d: usize, rows: &[C64]) -> Self {
        Self::from_matrix(CMatrix::from_row_slice(d, d, rows))
    }

    pub fn identity(dims: &[usize]) -> Self {
        let d = dims.iter().product();
        Self { mat: CMatrix::identity(d, d), dims: dims.to_vec() }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        let d = dims.iter().product();
        Self { mat: CMatrix::zeros(d, d), dims: dims.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    /// Reinterpret the factor structure without touching entries.
    pub fn with_dims(&self, dims: &[usize]) -> Result<Self> {
        Self::new(self.mat.clone(), dims.to_vec())
    }

    /// Collapse all factors into one.
    pub fn flattened(&self) -> Self {
        Self { mat: self.mat.clone(), dims: vec![self.dim()] }
    }

    pub fn dag(&self) -> Self {
        Self { mat: self.mat.adjoint(), dims: self.dims.clone() }
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn scale(&self, z: C64) -> Self {
        Self { mat: &self.mat * z, dims: self.dims.clone() }
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        max_abs(&(&self.mat - self.mat.adjoint()))
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_deviation() <= tol
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.mat)
    }

    /// Tensor product; subsystem dims are concatenated, first factor slow.
    pub fn kron(&self, other: &Operator) -> Operator {
        let mat = self.mat.kronecker(&other.mat);
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        Operator { mat, dims }
    }
}

impl std::ops::Add for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dims, rhs.dims, "operator dims differ");
        Operator { mat: &self.mat + &rhs.mat, dims: self.dims.clone() }
    }
}

impl std::ops::Sub for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dims, rhs.dims, "operator dims differ");
        Operator { mat: &self.mat - &rhs.mat, dims: self.dims.clone() }
    }
}

impl std::ops::Mul for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        assert_eq!(self.dim(), rhs.dim(), "operator dims differ");
        Operator { mat: &self.mat * &rhs.mat, dims: self.dims.clone() }
    }
}

/// Qubit primitives in the basis (|up>, |dn>), up = index 0.
pub mod qubit {
    use super::*;

    pub fn sigma_x() -> Operator {
        Operator::from_rows(2, &[c64(0., 0.), ONE, ONE, c64(0., 0.)])
    }

    pub fn sigma_y() -> Operator {
        Operator::from_rows(2, &[c64(0., 0.), c64(0., -1.), I, c64(0., 0.)])
    }

    pub fn sigma_z() -> Operator {
        Operator::from_rows(2, &[ONE, c64(0., 0.), c64(0., 0.), c64(-1., 0.)])
    }

    /// Lowering operator |dn><up|.
    pub fn lowering() -> Operator {
        Operator::from_rows(2, &[c64(0., 0.), c64(0., 0.), ONE, c64(0., 0.)])
    }

    /// Raising operator |up><dn|.
    pub fn raising() -> Operator {
        lowering().dag()
    }

    pub fn ket_up() -> CVector {
        CVector::from_column_slice(&[ONE, c64(0., 0.)])
    }

    pub fn ket_dn() -> CVector {
        CVector::from_column_slice(&[c64(0., 0.), ONE])
    }

    pub fn projector_up() -> Operator {
        Operator::from_rows(2, &[ONE, c64(0., 0.), c64(0., 0.), c64(0., 0.)])
    }

    pub fn projector_dn() -> Operator {
        Operator::from_rows(2, &[c64(0., 0.), c64(0., 0.), c64(0., 0.), ONE])
    }
}

/// Projector |v><v| on the span of a (not necessarily normalized) vector.
pub fn projector(v: &CVector) -> Operator {
    let n = v.norm();
    let v = v / c64(n, 0.);
    Operator::from_matrix(&v * v.adjoint())
}

/// A validated density matrix: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    op: Operator,
}

impl DensityMatrix {
    pub fn new(op: Operator) -> Result<Self> {
        Self::with_tol(op, tol::STRUCT)
    }

    pub fn with_tol(op: Operator, tol: f64) -> Result<Self> {
        let dev = op.hermiticity_deviation();
        if dev > tol {
            return Err(Error::NotHermitian { deviation: dev });
        }
        let tr = op.trace();
        if (tr - ONE).norm() > tol {
            return Err(Error::InvalidState(format!("trace {} is not 1", tr)));
        }
        let eig = herm_eig(&op)?;
        let min = eig.values[0];
        if min < -tol {
            return Err(Error::NotPositive { min_eigenvalue: min });
        }
        Ok(Self { op })
    }

    pub fn from_pure(v: &CVector) -> Self {
        Self { op: projector(v) }
    }

    pub fn maximally_mixed(dims: &[usize]) -> Self {
        let d: usize = dims.iter().product();
        Self { op: Operator::identity(dims).scale(c64(1.0 / d as f64, 0.0)) }
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn matrix(&self) -> &CMatrix {
        self.op.matrix()
    }

    pub fn dims(&self) -> &[usize] {
        self.op.dims()
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    pub fn kron(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix { op: self.op.kron(&other.op) }
    }

    pub fn with_dims(&self, dims: &[usize]) -> Result<DensityMatrix> {
        Ok(DensityMatrix { op: self.op.with_dims(dims)? })
    }
}

/// Marginal of `x` on the `keep`-th subsystem; all others are traced out.
pub fn partial_trace(x: &Operator, keep: usize) -> Result<Operator> {
    let dims = x.dims();
    if dims.len() < 2 {
        return Err(Error::InvalidSubsystem { index: keep, count: dims.len() });
    }
    if keep >= dims.len() {
        return Err(Error::InvalidSubsystem { index: keep, count: dims.len() });
    }
    let dk = dims[keep];
    // strides: left block (slower than keep), right block (faster than keep)
    let dl: usize = dims[..keep].iter().product();
    let dr: usize = dims[keep + 1..].iter().product();
    let mut out = CMatrix::zeros(dk, dk);
    let m = x.matrix();
    for i in 0..dk {
        for j in 0..dk {
            let mut acc = c64(0., 0.);
            for l in 0..dl {
                for r in 0..dr {
                    let row = (l * dk + i) * dr + r;
                    let col = (l * dk + j) * dr + r;
                    acc += m[(row, col)];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Ok(Operator { mat: out, dims: vec![dk] })
}

/// Result of a Hermitian eigendecomposition, eigenvalues ascending.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors as matrix columns, ordered like `values`.
    pub vectors: CMatrix,
}

impl HermEig {
    pub fn vector(&self, k: usize) -> CVector {
        self.vectors.column(k).into_owned()
    }
}

/// Eigendecomposition of a Hermitian operator. Degenerate eigenvalues come
/// back in ascending order with an arbitrary orthonormal basis inside each
/// degenerate subspace.
pub fn herm_eig(h: &Operator) -> Result<HermEig> {
    herm_eig_mat(h.matrix())
}

pub fn herm_eig_mat(m: &CMatrix) -> Result<HermEig> {
    let dev = max_abs(&(m - m.adjoint()));
    if dev > tol::STRUCT {
        return Err(Error::NotHermitian { deviation: dev });
    }
    // symmetrize so the decomposition sees an exactly Hermitian input
    let sym = (m + m.adjoint()).scale(0.5);
    let eig = SymmetricEigen::new(sym);
    let d = m.nrows();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(d, d);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(HermEig { values, vectors })
}

/// Trace distance (1/2)||rho1 - rho2||_1 between two states of equal dims.
pub fn trace_distance(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    trace_distance_ops(rho1.operator(), rho2.operator())
}

pub fn trace_distance_ops(a: &Operator, b: &Operator) -> f64 {
    assert_eq!(a.dim(), b.dim(), "trace distance needs equal dims");
    let diff = Operator::from_matrix(a.matrix() - b.matrix());
    let eig = herm_eig(&diff).expect("difference of Hermitian operators is Hermitian");
    0.5 * eig.values.iter().map(|v| v.abs()).sum::<f64>()
}

/// Devectorized exp(t L) vec(X) for a nonnegative time.
pub fn expm_apply(l: &SuperOperator, x: &Operator, t: f64) -> Result<Operator> {
    if t < 0.0 {
        return Err(Error::IllPosed("time must be nonnegative".into()));
    }
    if l.dim() != x.dim() {
        return Err(Error::DimensionMismatch(format!(
            "superoperator dimension {} does not match operator dimension {}",
            l.dim(),
            x.dim()
        )));
    }
    Ok(l.exp(t).apply(x))
}

/// Partial transpose over the `which`-th subsystem.
pub fn partial_transpose(x: &Operator, which: usize) -> Result<Operator> {
    let dims = x.dims();
    if which >= dims.len() {
        return Err(Error::InvalidSubsystem { index: which, count: dims.len() });
    }
    let dk = dims[which];
    let dl: usize = dims[..which].iter().product();
    let dr: usize = dims[which + 1..].iter().product();
    let m = x.matrix();
    let mut out = CMatrix::zeros(x.dim(), x.dim());
    for l in 0..dl {
        for lp in 0..dl {
            for i in 0..dk {
                for j in 0..dk {
                    for r in 0..dr {
                        for rp in 0..dr {
                            let row = (l * dk + i) * dr + r;
                            let col = (lp * dk + j) * dr + rp;
                            let row_t = (l * dk + j) * dr + r;
                            let col_t = (lp * dk + i) * dr + rp;
                            out[(row_t, col_t)] = m[(row, col)];
                        }
                    }
                }
            }
        }
    }
    Operator::new(out, dims.to_vec())
}

/// A linear map on operators stored as a matrix acting on column-vectorized
/// operators.
#[derive(Clone, Debug)]
pub struct SuperOperator {
    mat: CMatrix,
    dims: Vec<usize>,
    trace_preserving: bool,
}

impl SuperOperator {
    pub fn new(mat: CMatrix, dims: Vec<usize>) -> Result<Self> {
        let d: usize = dims.iter().product();
        if mat.nrows() != d * d || mat.ncols() != d * d {
            return Err(Error::DimensionMismatch(format!(
                "superoperator matrix is {}x{} but dims {:?} give Liouville dimension {}",
                mat.nrows(),
                mat.ncols(),
                dims,
                d * d
            )));
        }
        Ok(Self { mat, dims, trace_preserving: false })
    }

    pub fn identity(dims: &[usize]) -> Self {
        let d: usize = dims.iter().product();
        Self {
            mat: CMatrix::identity(d * d, d * d),
            dims: dims.to_vec(),
            trace_preserving: true,
        }
    }

    pub fn zero(dims: &[usize]) -> Self {
        let d: usize = dims.iter().product();
        Self { mat: CMatrix::zeros(d * d, d * d), dims: dims.to_vec(), trace_preserving: false }
    }

    /// rho -> a rho
    pub fn left_mult(a: &Operator) -> Self {
        let d = a.dim();
        let id = CMatrix::identity(d, d);
        Self { mat: id.kronecker(a.matrix()), dims: a.dims().to_vec(), trace_preserving: false }
    }

    /// rho -> rho b
    pub fn right_mult(b: &Operator) -> Self {
        let d = b.dim();
        let id = CMatrix::identity(d, d);
        Self {
            mat: b.matrix().transpose().kronecker(&id),
            dims: b.dims().to_vec(),
            trace_preserving: false,
        }
    }

    /// rho -> a rho b, with matrix b^T (x) a under column stacking.
    pub fn sandwich(a: &Operator, b: &Operator) -> Self {
        assert_eq!(a.dim(), b.dim(), "sandwich factors need equal dims");
        Self {
            mat: b.matrix().transpose().kronecker(a.matrix()),
            dims: a.dims().to_vec(),
            trace_preserving: false,
        }
    }

    /// Kraus conjugation rho -> v rho v^dag.
    pub fn conjugation(v: &Operator) -> Self {
        Self::sandwich(v, &v.dag())
    }

    /// -i[h, rho]
    pub fn commutator(h: &Operator) -> Self {
        let mut s = &Self::left_mult(h) - &Self::right_mult(h);
        s.mat *= -I;
        s.trace_preserving = true;
        s
    }

    /// rate * (j rho j^dag - (1/2){j^dag j, rho})
    pub fn dissipator(j: &Operator, rate: f64) -> Self {
        let jd = j.dag();
        let jdj = &jd * j;
        let mut s = &Self::conjugation(j)
            - &(&Self::left_mult(&jdj) + &Self::right_mult(&jdj)).scaled(c64(0.5, 0.));
        s.mat *= c64(rate, 0.);
        s.trace_preserving = false;
        s
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.mat
    }

    pub fn is_flagged_trace_preserving(&self) -> bool {
        self.trace_preserving
    }

    pub fn set_trace_preserving(&mut self, tp: bool) {
        self.trace_preserving = tp;
    }

    /// Deviation of (row-vectorized identity) . M from the row-vectorized
    /// identity; zero for trace-preserving maps.
    pub fn trace_preservation_deviation(&self) -> f64 {
        let d = self.dim();
        let id = vectorize(&CMatrix::identity(d, d));
        let row = self.mat.transpose() * &id;
        max_abs(&CMatrix::from_column_slice(d * d, 1, (row - id).as_slice()))
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        self.trace_preservation_deviation() <= tol
    }

    /// Deviation from annihilating the trace, zero for generators.
    pub fn trace_annihilation_deviation(&self) -> f64 {
        let d = self.dim();
        let id = vectorize(&CMatrix::identity(d, d));
        let row = self.mat.transpose() * &id;
        row.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn apply(&self, x: &Operator) -> Operator {
        assert_eq!(self.dim(), x.dim(), "superoperator and operator dims differ");
        let v = &self.mat * vectorize(x.matrix());
        Operator { mat: unvectorize(&v, x.dim()), dims: self.dims.clone() }
    }

    pub fn apply_matrix(&self, m: &CMatrix) -> CMatrix {
        unvectorize(&(&self.mat * vectorize(m)), m.nrows())
    }

    /// exp(t L) by scaling-and-squaring (dense Pade approximant).
    pub fn exp(&self, t: f64) -> SuperOperator {
        let m = (&self.mat * c64(t, 0.)).exp();
        SuperOperator { mat: m, dims: self.dims.clone(), trace_preserving: self.trace_preserving }
    }

    /// Hilbert-Schmidt adjoint: Tr(O . S[rho]) = Tr(S^#[O] . rho).
    pub fn dual(&self) -> SuperOperator {
        SuperOperator { mat: self.mat.adjoint(), dims: self.dims.clone(), trace_preserving: false }
    }

    /// Hermiticity conjugate S'[X] = (S[X^dag])^dag. A map preserves
    /// Hermiticity iff it equals its own conjugate; Kraus maps always do.
    pub fn conj_adjoint(&self) -> SuperOperator {
        let d = self.dim();
        let idx = |row: usize, col: usize| col * d + row;
        let mut out = CMatrix::zeros(d * d, d * d);
        for rp in 0..d {
            for cp in 0..d {
                for r in 0..d {
                    for c in 0..d {
                        out[(idx(rp, cp), idx(r, c))] =
                            self.mat[(idx(cp, rp), idx(c, r))].conj();
                    }
                }
            }
        }
        SuperOperator { mat: out, dims: self.dims.clone(), trace_preserving: false }
    }

    pub fn scaled(&self, z: C64) -> SuperOperator {
        SuperOperator { mat: &self.mat * z, dims: self.dims.clone(), trace_preserving: false }
    }

    /// Composition self . other (apply `other` first).
    pub fn compose(&self, other: &SuperOperator) -> SuperOperator {
        assert_eq!(self.dim(), other.dim(), "superoperator dims differ");
        SuperOperator {
            mat: &self.mat * &other.mat,
            dims: self.dims.clone(),
            trace_preserving: self.trace_preserving && other.trace_preserving,
        }
    }

    pub fn max_abs(&self) -> f64 {
        max_abs(&self.mat)
    }
}

impl std::ops::Add for &SuperOperator {
    type Output = SuperOperator;
    fn add(self, rhs: &SuperOperator) -> SuperOperator {
        assert_eq!(self.dims, rhs.dims, "superoperator dims differ");
        SuperOperator {
            mat: &self.mat + &rhs.mat,
            dims: self.dims.clone(),
            trace_preserving: false,
        }
    }
}

impl std::ops::Sub for &SuperOperator {
    type Output = SuperOperator;
    fn sub(self, rhs: &SuperOperator) -> SuperOperator {
        assert_eq!(self.dims, rhs.dims, "superoperator dims differ");
        SuperOperator {
            mat: &self.mat - &rhs.mat,
            dims: self.dims.clone(),
            trace_preserving: false,
        }
    }
}

/// Tensor product of superoperators: (A (x) B)[x (x) y] = A[x] (x) B[y].
///
/// Entry bookkeeping under column stacking: with row index i*db + a and
/// column index j*db + b of the joint space, the joint matrix element at
/// (vec(i',a',j',b'), vec(i,a,j,b)) is A[(i',j'),(i,j)] * B[(a',b'),(a,b)].
pub fn superop_tensor(a: &SuperOperator, b: &SuperOperator) -> SuperOperator {
    let da = a.dim();
    let db = b.dim();
    let d = da * db;
    let am = a.matrix();
    let bm = b.matrix();
    let mut out = CMatrix::zeros(d * d, d * d);
    let vjoint = |row: usize, col: usize| col * d + row;
    let vsub = |row: usize, col: usize, dd: usize| col * dd + row;
    for ip in 0..da {
        for jp in 0..da {
            for i in 0..da {
                for j in 0..da {
                    let aval = am[(vsub(ip, jp, da), vsub(i, j, da))];
                    if aval == c64(0., 0.) {
                        continue;
                    }
                    for ap in 0..db {
                        for bp in 0..db {
                            for av in 0..db {
                                for bv in 0..db {
                                    let bval = bm[(vsub(ap, bp, db), vsub(av, bv, db))];
                                    if bval == c64(0., 0.) {
                                        continue;
                                    }
                                    let r = vjoint(ip * db + ap, jp * db + bp);
                                    let c = vjoint(i * db + av, j * db + bv);
                                    out[(r, c)] = aval * bval;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut dims = a.dims.clone();
    dims.extend_from_slice(&b.dims);
    SuperOperator {
        mat: out,
        dims,
        trace_preserving: a.trace_preserving && b.trace_preserving,
    }
}

/// Lift a system superoperator to the bipartite space (system first).
pub fn lift_system(s: &SuperOperator, env_dims: &[usize]) -> SuperOperator {
    superop_tensor(s, &SuperOperator::identity(env_dims))
}

/// Lift an environment superoperator to the bipartite space (system first).
pub fn lift_env(e: &SuperOperator, sys_dims: &[usize]) -> SuperOperator {
    superop_tensor(&SuperOperator::identity(sys_dims), e)
}

/// Hermitian operator basis of a d-dimensional space: the normalized identity
/// followed by generalized Gell-Mann matrices (symmetric, antisymmetric,
/// diagonal), all with unit Hilbert-Schmidt norm.
pub fn hermitian_basis(d: usize) -> Vec<Operator> {
    let mut basis = Vec::with_capacity(d * d);
    let norm = 1.0 / (d as f64).sqrt();
    basis.push(Operator::from_matrix(CMatrix::identity(d, d) * c64(norm, 0.)));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    for j in 0..d {
        for k in (j + 1)..d {
            let mut sym = CMatrix::zeros(d, d);
            sym[(j, k)] = c64(s, 0.);
            sym[(k, j)] = c64(s, 0.);
            basis.push(Operator::from_matrix(sym));
            let mut asym = CMatrix::zeros(d, d);
            asym[(j, k)] = c64(0., -s);
            asym[(k, j)] = c64(0., s);
            basis.push(Operator::from_matrix(asym));
        }
    }
    for l in 1..d {
        let norm = 1.0 / ((l * (l + 1)) as f64).sqrt();
        let mut diag = CMatrix::zeros(d, d);
        for j in 0..l {
            diag[(j, j)] = c64(norm, 0.);
        }
        diag[(l, l)] = c64(-(l as f64) * norm, 0.);
        basis.push(Operator::from_matrix(diag));
    }
    basis
}

/// <bra| x |ket> taken over the SECOND factor of a bipartite operator,
/// leaving an operator on the first factor.
pub fn sandwich_second(x: &Operator, bra: &CVector, ket: &CVector) -> Operator {
    let dims = x.dims();
    assert!(dims.len() >= 2, "need a bipartite operator");
    let d2 = *dims.last().unwrap();
    let d1: usize = dims[..dims.len() - 1].iter().product();
    assert_eq!(bra.len(), d2);
    assert_eq!(ket.len(), d2);
    let m = x.matrix();
    let mut out = CMatrix::zeros(d1, d1);
    for i in 0..d1 {
        for j in 0..d1 {
            let mut acc = c64(0., 0.);
            for a in 0..d2 {
                for b in 0..d2 {
                    acc += bra[a].conj() * m[(i * d2 + a, j * d2 + b)] * ket[b];
                }
            }
            out[(i, j)] = acc;
        }
    }
    Operator { mat: out, dims: vec![d1] }
}

/// <bra| x |ket> taken over the FIRST factor, leaving an operator on the rest.
pub fn sandwich_first(x: &Operator, bra: &CVector, ket: &CVector) -> Operator {
    let dims = x.dims();
    assert!(dims.len() >= 2, "need a bipartite operator");
    let d1 = dims[0];
    let d2: usize = dims[1..].iter().product();
    assert_eq!(bra.len(), d1);
    assert_eq!(ket.len(), d1);
    let m = x.matrix();
    let mut out = CMatrix::zeros(d2, d2);
    for a in 0..d2 {
        for b in 0..d2 {
            let mut acc = c64(0., 0.);
            for i in 0..d1 {
                for j in 0..d1 {
                    acc += bra[i].conj() * m[(i * d2 + a, j * d2 + b)] * ket[j];
                }
            }
            out[(a, b)] = acc;
        }
    }
    Operator { mat: out, dims: dims[1..].to_vec() }
}
