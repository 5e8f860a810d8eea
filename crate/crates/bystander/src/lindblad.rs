//! Assembly and propagation of Lindblad generators, extraction of time-local
//! generators from propagator families, and the trace-distance memory witness.

use crate::error::{Error, Result};
use crate::linalg::{
    c64, herm_eig_mat, max_abs, trace_distance, CMatrix, DensityMatrix, Operator, SuperOperator,
};
use crate::tol;

/// A generator in GKSL form: Hamiltonian, jump operators and a Hermitian
/// positive semidefinite rate matrix, possibly non-diagonal.
#[derive(Clone, Debug)]
pub struct LindbladSpec {
    pub hamiltonian: Operator,
    pub jump_ops: Vec<Operator>,
    pub rate_matrix: CMatrix,
}

impl LindbladSpec {
    pub fn new(hamiltonian: Operator, jump_ops: Vec<Operator>, rate_matrix: CMatrix) -> Result<Self> {
        let s = Self { hamiltonian, jump_ops, rate_matrix };
        s.validate()?;
        Ok(s)
    }

    /// Convenience constructor for diagonal rates.
    pub fn diagonal(hamiltonian: Operator, channels: &[(Operator, f64)]) -> Result<Self> {
        let n = channels.len();
        let mut rates = CMatrix::zeros(n, n);
        for (k, (_, r)) in channels.iter().enumerate() {
            rates[(k, k)] = c64(*r, 0.);
        }
        Self::new(hamiltonian, channels.iter().map(|(j, _)| j.clone()).collect(), rates)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.jump_ops.len();
        if self.rate_matrix.nrows() != n || self.rate_matrix.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "rate matrix is {}x{} for {} jump operators",
                self.rate_matrix.nrows(),
                self.rate_matrix.ncols(),
                n
            )));
        }
        let dev = max_abs(&(&self.rate_matrix - self.rate_matrix.adjoint()));
        if dev > tol::STRUCT {
            return Err(Error::NotHermitian { deviation: dev });
        }
        if n > 0 {
            let eig = herm_eig_mat(&self.rate_matrix)?;
            if eig.values[0] < -tol::STRUCT {
                return Err(Error::NotPositive { min_eigenvalue: eig.values[0] });
            }
        }
        let d = self.hamiltonian.dim();
        for j in &self.jump_ops {
            if j.dim() != d {
                return Err(Error::DimensionMismatch(
                    "jump operator dimension differs from Hamiltonian".into(),
                ));
            }
        }
        Ok(())
    }
}

/// L[rho] = -i[H, rho] + sum_ij gamma_ij (T_i rho T_j^dag - 1/2 {T_j^dag T_i, rho}).
pub fn assemble_lindbladian(spec: &LindbladSpec) -> Result<SuperOperator> {
    spec.validate()?;
    let mut l = SuperOperator::commutator(&spec.hamiltonian);
    let n = spec.jump_ops.len();
    for i in 0..n {
        for j in 0..n {
            let g = spec.rate_matrix[(i, j)];
            if g.norm() == 0.0 {
                continue;
            }
            let ti = &spec.jump_ops[i];
            let tj_dag = spec.jump_ops[j].dag();
            let anti = &tj_dag * ti;
            let term = &SuperOperator::sandwich(ti, &tj_dag)
                - &(&SuperOperator::left_mult(&anti) + &SuperOperator::right_mult(&anti))
                    .scaled(c64(0.5, 0.));
            l = &l + &term.scaled(g);
        }
    }
    l.set_trace_preserving(true);
    Ok(l)
}

/// Rotate the jump operators so the rate matrix becomes diagonal with
/// nonnegative rates; the assembled generator is unchanged.
pub fn diagonalize_rate_matrix(spec: &LindbladSpec) -> Result<LindbladSpec> {
    spec.validate()?;
    let n = spec.jump_ops.len();
    if n == 0 {
        return Ok(spec.clone());
    }
    let eig = herm_eig_mat(&spec.rate_matrix)?;
    let mut channels = Vec::new();
    for (k, &rate) in eig.values.iter().enumerate() {
        if rate < -tol::STRUCT {
            return Err(Error::NotPositive { min_eigenvalue: rate });
        }
        if rate <= tol::STRUCT {
            continue;
        }
        // T'_k = sum_i U_{ik} T_i
        let mut t = Operator::zeros(spec.jump_ops[0].dims());
        for i in 0..n {
            t = &t + &spec.jump_ops[i].scale(eig.vectors[(i, k)]);
        }
        channels.push((t, rate));
    }
    LindbladSpec::diagonal(spec.hamiltonian.clone(), &channels)
}

/// Propagators G_{t,0} on a time grid starting at 0.
#[derive(Clone, Debug)]
pub struct PropagatorFamily {
    pub times: Vec<f64>,
    pub maps: Vec<SuperOperator>,
}

impl PropagatorFamily {
    /// Build exp(t L) along the grid by accumulating per-step exponentials.
    pub fn generate(l: &SuperOperator, times: &[f64]) -> Result<Self> {
        validate_grid(times)?;
        let mut maps = Vec::with_capacity(times.len());
        let mut current = SuperOperator::identity(l.dims());
        maps.push(current.clone());
        for k in 1..times.len() {
            let step = l.exp(times[k] - times[k - 1]);
            current = step.compose(&current);
            maps.push(current.clone());
        }
        Ok(Self { times: times.to_vec(), maps })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

fn validate_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::DimensionMismatch("empty time grid".into()));
    }
    if times[0] != 0.0 {
        return Err(Error::DimensionMismatch("time grid must start at 0".into()));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::DimensionMismatch("time grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Propagate a state along a grid; returns the propagator family and the
/// state trajectory, validated as density matrices at the propagation
/// tolerance.
pub fn propagate(
    l: &SuperOperator,
    rho0: &DensityMatrix,
    times: &[f64],
) -> Result<(PropagatorFamily, Vec<DensityMatrix>)> {
    let fam = PropagatorFamily::generate(l, times)?;
    let mut states = Vec::with_capacity(times.len());
    for g in &fam.maps {
        let op = g.apply(rho0.operator());
        states.push(DensityMatrix::with_tol(op, tol::NUM)?);
    }
    Ok((fam, states))
}

/// One grid point of an extracted time-local generator.
#[derive(Clone, Debug)]
pub enum GeneratorPoint {
    Value(SuperOperator),
    /// The propagator was singular (or numerically near-singular) here; the
    /// canonical rates diverge at such points.
    Divergent,
}

impl GeneratorPoint {
    pub fn value(&self) -> Option<&SuperOperator> {
        match self {
            GeneratorPoint::Value(s) => Some(s),
            GeneratorPoint::Divergent => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, GeneratorPoint::Divergent)
    }
}

/// Extracted generators plus the observed finite-difference step quality.
#[derive(Clone, Debug)]
pub struct TimeLocalGenerators {
    pub times: Vec<f64>,
    pub points: Vec<GeneratorPoint>,
    /// max over finite points of h * ||L(t)||_max; should stay below 0.1 for
    /// the centered stencil to be trustworthy.
    pub max_step_times_norm: f64,
}

impl TimeLocalGenerators {
    pub fn step_bound_satisfied(&self) -> bool {
        self.max_step_times_norm <= 0.1
    }
}

/// L(t) ~ (dG/dt) G^{-1} by centered differences (one-sided at the ends).
pub fn time_local_generator(fam: &PropagatorFamily) -> Result<TimeLocalGenerators> {
    let n = fam.len();
    if n < 2 {
        return Err(Error::IllPosed("need at least two grid points".into()));
    }
    let dims = fam.maps[0].dims().to_vec();
    let mut points = Vec::with_capacity(n);
    let mut max_h_norm: f64 = 0.0;
    for k in 0..n {
        let (dg, h) = if k == 0 {
            (fam.maps[1].matrix() - fam.maps[0].matrix(), fam.times[1] - fam.times[0])
        } else if k == n - 1 {
            (fam.maps[n - 1].matrix() - fam.maps[n - 2].matrix(), fam.times[n - 1] - fam.times[n - 2])
        } else {
            (fam.maps[k + 1].matrix() - fam.maps[k - 1].matrix(), fam.times[k + 1] - fam.times[k - 1])
        };
        let h_local = if k == 0 {
            fam.times[1] - fam.times[0]
        } else if k == n - 1 {
            fam.times[n - 1] - fam.times[n - 2]
        } else {
            0.5 * (fam.times[k + 1] - fam.times[k - 1])
        };
        let inv = fam.maps[k].matrix().clone().lu().try_inverse();
        match inv {
            Some(ginv) if max_abs(&ginv) <= tol::DIVERGENCE => {
                let lmat = (dg / c64(h, 0.)) * ginv;
                let norm = max_abs(&lmat);
                // a generator norm above 0.5/h means the inverse blows up
                // within one grid step: the point straddles a singularity
                // and no finite value is trustworthy there
                if h_local * norm > 0.5 {
                    points.push(GeneratorPoint::Divergent);
                } else {
                    max_h_norm = max_h_norm.max(h_local * norm);
                    points.push(GeneratorPoint::Value(SuperOperator::new(lmat, dims.clone())?));
                }
            }
            _ => points.push(GeneratorPoint::Divergent),
        }
    }
    Ok(TimeLocalGenerators { times: fam.times.clone(), points, max_step_times_norm: max_h_norm })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessVerdict {
    Markovian,
    NonMarkovian,
}

/// Trace-distance series between two propagated states, with a verdict:
/// any increase beyond the numerical tolerance witnesses memory.
#[derive(Clone, Debug)]
pub struct TraceDistanceWitness {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub max_increase: f64,
    pub verdict: WitnessVerdict,
}

pub fn trace_distance_witness(
    l: &SuperOperator,
    rho_a: &DensityMatrix,
    rho_b: &DensityMatrix,
    times: &[f64],
) -> Result<TraceDistanceWitness> {
    if rho_a.dim() != rho_b.dim() {
        return Err(Error::DimensionMismatch("witness states differ in dimension".into()));
    }
    let (_, traj_a) = propagate(l, rho_a, times)?;
    let (_, traj_b) = propagate(l, rho_b, times)?;
    let distances: Vec<f64> =
        traj_a.iter().zip(&traj_b).map(|(a, b)| trace_distance(a, b)).collect();
    let max_increase = distances
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0);
    let verdict = if max_increase > tol::NUM {
        WitnessVerdict::NonMarkovian
    } else {
        WitnessVerdict::Markovian
    };
    Ok(TraceDistanceWitness { times: times.to_vec(), distances, max_increase, verdict })
}
