//! Scenario configuration: JSON document with a versioned schema.
//!
//! Complex scalars are `[re, im]` pairs; matrices are row-major nested
//! arrays of such pairs. See `examples/` configs in the repository root and
//! the README for the full schema.

use serde::{Deserialize, Serialize};

use bystander::linalg::{c64, CMatrix, DensityMatrix, Operator, SuperOperator};
use bystander::models::fluor::{self, FluorParams};
use bystander::models::multipartite::{self, MultipartiteParams};
use bystander::models::pauli::PauliString;
use bystander::structure::{BystanderCoupling, CpMap};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    pub model: ModelConfig,
    pub grid: GridConfig,
    pub task: TaskConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Fluor {
        gamma: f64,
        omega: f64,
        #[serde(default = "StateSpec::stationary")]
        env_initial: StateSpec,
        #[serde(default = "StateSpec::plus_x")]
        system_initial: StateSpec,
    },
    Multipartite {
        gamma: f64,
        phi: f64,
        omega: f64,
        string_a: String,
        string_b: String,
        #[serde(default = "StateSpec::stationary")]
        env_initial: StateSpec,
        #[serde(default = "StateSpec::maximally_mixed")]
        system_initial: StateSpec,
    },
    Custom {
        system_dim: usize,
        env_dim: usize,
        #[serde(default)]
        l_s: Option<GeneratorSpec>,
        #[serde(default)]
        l_e: Option<GeneratorSpec>,
        coupling: CouplingSpec,
        system_initial: StateSpec,
        env_initial: StateSpec,
    },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum StateSpec {
    Named(String),
    Matrix { matrix: Vec<Vec<[f64; 2]>> },
}

impl StateSpec {
    fn stationary() -> Self {
        StateSpec::Named("stationary".into())
    }

    fn plus_x() -> Self {
        StateSpec::Named("plus_x".into())
    }

    fn maximally_mixed() -> Self {
        StateSpec::Named("maximally_mixed".into())
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    #[serde(default)]
    pub hamiltonian: Option<Vec<Vec<[f64; 2]>>>,
    #[serde(default)]
    pub jumps: Vec<JumpSpec>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct JumpSpec {
    pub operator: Vec<Vec<[f64; 2]>>,
    pub rate: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    /// Hermitian positive rate matrix, one row per channel.
    pub gamma: Vec<Vec<[f64; 2]>>,
    pub env_ops: Vec<Vec<Vec<[f64; 2]>>>,
    /// Kraus lists, one per (channel, channel) pair, row major.
    pub sys_maps: Vec<Vec<KrausSpec>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct KrausSpec {
    pub kraus: Vec<Vec<Vec<[f64; 2]>>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t_max: f64,
    pub points: usize,
}

impl GridConfig {
    pub fn times(&self) -> Vec<f64> {
        (0..=self.points)
            .map(|k| self.t_max * k as f64 / self.points as f64)
            .collect()
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskConfig {
    Verify,
    Evolve,
    Witness,
    Cpf {
        scheme: String,
        #[serde(default)]
        observable: Option<ObservableSpec>,
        /// Fixed second interval; the first runs over the grid. Equal
        /// intervals when omitted.
        #[serde(default)]
        tau: Option<f64>,
        #[serde(default)]
        redraw: Option<RedrawSpec>,
    },
    Qrt {
        left: ObservableSpec,
        right: Vec<ObservableSpec>,
        #[serde(default)]
        tau: Option<f64>,
    },
    Trajectories {
        count: usize,
        #[serde(default)]
        max_jumps: Option<usize>,
        #[serde(default = "default_bins")]
        histogram_bins: usize,
    },
}

fn default_bins() -> usize {
    40
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ObservableSpec {
    /// "x" | "y" | "z" on a qubit, or a Pauli string like "XZ".
    Named(String),
    Matrix { matrix: Vec<Vec<[f64; 2]>> },
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum RedrawSpec {
    Named(String),
    Matrix { matrix: Vec<Vec<f64>> },
}

/// Errors carrying the exit-code split: malformed or inconsistent
/// configuration (exit 2) versus numerical/structural failures during the
/// run (exit 3).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<bystander::Error> for CliError {
    fn from(e: bystander::Error) -> Self {
        CliError::Numerical(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn parse_matrix(raw: &[Vec<[f64; 2]>]) -> CliResult<CMatrix> {
    let n = raw.len();
    if n == 0 || raw.iter().any(|row| row.len() != n) {
        return Err(CliError::Config("matrix must be square and non-empty".into()));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| c64(raw[i][j][0], raw[i][j][1])))
}

fn parse_state(spec: &StateSpec, dim: usize, stationary: Option<&DensityMatrix>) -> CliResult<DensityMatrix> {
    match spec {
        StateSpec::Named(name) => match name.as_str() {
            "stationary" => stationary.cloned().ok_or_else(|| {
                CliError::Config("no stationary state is defined for this slot".into())
            }),
            "maximally_mixed" => Ok(DensityMatrix::maximally_mixed(&[dim])),
            "ground" => {
                let mut v = bystander::linalg::CVector::zeros(dim);
                v[dim - 1] = c64(1., 0.);
                Ok(DensityMatrix::from_pure(&v))
            }
            "excited" => {
                let mut v = bystander::linalg::CVector::zeros(dim);
                v[0] = c64(1., 0.);
                Ok(DensityMatrix::from_pure(&v))
            }
            "plus_x" => {
                if dim != 2 {
                    return Err(CliError::Config("plus_x needs a qubit".into()));
                }
                let s = std::f64::consts::FRAC_1_SQRT_2;
                Ok(DensityMatrix::from_pure(&bystander::linalg::CVector::from_column_slice(&[
                    c64(s, 0.),
                    c64(s, 0.),
                ])))
            }
            other => Err(CliError::Config(format!("unknown state '{other}'"))),
        },
        StateSpec::Matrix { matrix } => {
            let m = parse_matrix(matrix)?;
            if m.nrows() != dim {
                return Err(CliError::Config(format!(
                    "state dimension {} does not match {}",
                    m.nrows(),
                    dim
                )));
            }
            DensityMatrix::new(Operator::from_matrix(m)).map_err(CliError::from)
        }
    }
}

fn parse_generator(spec: Option<&GeneratorSpec>, dim: usize) -> CliResult<SuperOperator> {
    let Some(spec) = spec else {
        return Ok(SuperOperator::zero(&[dim]));
    };
    let h = match &spec.hamiltonian {
        Some(m) => {
            let m = parse_matrix(m)?;
            if m.nrows() != dim {
                return Err(CliError::Config("Hamiltonian dimension mismatch".into()));
            }
            Operator::from_matrix(m)
        }
        None => Operator::zeros(&[dim]),
    };
    let mut channels = Vec::new();
    for j in &spec.jumps {
        let m = parse_matrix(&j.operator)?;
        if m.nrows() != dim {
            return Err(CliError::Config("jump operator dimension mismatch".into()));
        }
        channels.push((Operator::from_matrix(m), j.rate));
    }
    let spec = bystander::lindblad::LindbladSpec::diagonal(h, &channels)?;
    Ok(bystander::lindblad::assemble_lindbladian(&spec)?)
}

/// A fully materialized scenario plus the model-specific extras the tasks
/// need (collision group, closed-form handles, time-unit label).
pub struct Scenario {
    pub model: bystander::model::ModelSpec,
    pub collision_group: Vec<SuperOperator>,
    pub fluor: Option<FluorParams>,
    pub multipartite: Option<MultipartiteParams>,
    /// Header label of the time column; "t*gamma" when the model declares a
    /// decay rate gamma as its unit, plain "time" otherwise.
    pub time_label: String,
    pub time_scale: f64,
}

pub fn build_scenario(cfg: &Config) -> CliResult<Scenario> {
    if cfg.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            cfg.schema_version
        )));
    }
    if cfg.grid.points < 2 || !(cfg.grid.t_max > 0.0) {
        return Err(CliError::Config("grid needs t_max > 0 and at least 2 points".into()));
    }
    match &cfg.model {
        ModelConfig::Fluor { gamma, omega, env_initial, system_initial } => {
            if !(*gamma > 0.0) || *omega < 0.0 {
                return Err(CliError::Config("need gamma > 0 and omega >= 0".into()));
            }
            let stationary = fluor::stationary_env(*gamma, *omega);
            let rho0_e = parse_state(env_initial, 2, Some(&stationary))?;
            let rho0_s = parse_state(system_initial, 2, None)?;
            let p = FluorParams::new(*gamma, *omega, rho0_e)?;
            let model = fluor::model(&p, rho0_s)?;
            Ok(Scenario {
                model,
                collision_group: fluor::collision_group(),
                fluor: Some(p),
                multipartite: None,
                time_label: "t*gamma".into(),
                time_scale: *gamma,
            })
        }
        ModelConfig::Multipartite {
            gamma,
            phi,
            omega,
            string_a,
            string_b,
            env_initial,
            system_initial,
        } => {
            let sa: PauliString =
                string_a.parse().map_err(|e: bystander::Error| CliError::Config(e.to_string()))?;
            let sb: PauliString =
                string_b.parse().map_err(|e: bystander::Error| CliError::Config(e.to_string()))?;
            let ds = 1usize << sa.len();
            // build a provisional parameter set to locate the stationary state
            let provisional = MultipartiteParams::new(
                *gamma,
                *phi,
                *omega,
                sa.clone(),
                sb.clone(),
                DensityMatrix::maximally_mixed(&[2]),
            )?;
            let stationary = {
                let m = multipartite::model(&provisional, DensityMatrix::maximally_mixed(&[ds]))?;
                bystander::model::stationary_state(&m.env_generator()?)?
            };
            let rho0_e = parse_state(env_initial, 2, Some(&stationary))?;
            let rho0_s = parse_state(system_initial, ds, None)?;
            let p = MultipartiteParams::new(*gamma, *phi, *omega, sa, sb, rho0_e)?;
            let model = multipartite::model(&p, rho0_s)?;
            Ok(Scenario {
                model,
                collision_group: multipartite::collision_group(&p),
                fluor: None,
                multipartite: Some(p),
                time_label: "t*gamma".into(),
                time_scale: *gamma,
            })
        }
        ModelConfig::Custom { system_dim, env_dim, l_s, l_e, coupling, system_initial, env_initial } => {
            let ds = *system_dim;
            let de = *env_dim;
            if ds < 2 || de < 2 {
                return Err(CliError::Config("dimensions must be at least 2".into()));
            }
            let gamma = parse_matrix(&coupling.gamma)?;
            let n = gamma.nrows();
            if coupling.env_ops.len() != n || coupling.sys_maps.len() != n {
                return Err(CliError::Config(
                    "coupling blocks must match the rate-matrix size".into(),
                ));
            }
            let env_ops: Vec<Operator> = coupling
                .env_ops
                .iter()
                .map(|m| {
                    let m = parse_matrix(m)?;
                    if m.nrows() != de {
                        return Err(CliError::Config("environment operator dimension".into()));
                    }
                    Ok(Operator::from_matrix(m))
                })
                .collect::<CliResult<_>>()?;
            let sys_maps: Vec<Vec<CpMap>> = coupling
                .sys_maps
                .iter()
                .map(|row| {
                    if row.len() != n {
                        return Err(CliError::Config("system map matrix is not square".into()));
                    }
                    row.iter()
                        .map(|k| {
                            let kraus: Vec<Operator> = k
                                .kraus
                                .iter()
                                .map(|m| {
                                    let m = parse_matrix(m)?;
                                    if m.nrows() != ds {
                                        return Err(CliError::Config(
                                            "Kraus operator dimension".into(),
                                        ));
                                    }
                                    Ok(Operator::from_matrix(m))
                                })
                                .collect::<CliResult<_>>()?;
                            CpMap::new(kraus).map_err(CliError::from)
                        })
                        .collect::<CliResult<Vec<_>>>()
                })
                .collect::<CliResult<_>>()?;
            let coupling = BystanderCoupling::new(gamma, env_ops, sys_maps)?;
            let model = bystander::model::ModelSpec::new(
                parse_generator(l_s.as_ref(), ds)?,
                parse_generator(l_e.as_ref(), de)?,
                coupling,
                parse_state(system_initial, ds, None)?,
                parse_state(env_initial, de, None)?,
            )?;
            Ok(Scenario {
                model,
                collision_group: Vec::new(),
                fluor: None,
                multipartite: None,
                time_label: "time".into(),
                time_scale: 1.0,
            })
        }
    }
}

pub fn parse_observable(
    spec: &ObservableSpec,
    dim: usize,
) -> CliResult<bystander::cpf::MeasuredObservable> {
    use bystander::cpf::MeasuredObservable;
    use bystander::linalg::qubit;
    match spec {
        ObservableSpec::Named(name) => match name.as_str() {
            "x" if dim == 2 => {
                Ok(MeasuredObservable::from_outcomes(fluor::x_basis())?)
            }
            "y" if dim == 2 => Ok(MeasuredObservable::from_operator(&qubit::sigma_y())?),
            "z" if dim == 2 => Ok(MeasuredObservable::from_operator(&qubit::sigma_z())?),
            s => {
                let string: PauliString =
                    s.parse().map_err(|e: bystander::Error| CliError::Config(e.to_string()))?;
                if (1usize << string.len()) != dim {
                    return Err(CliError::Config(format!(
                        "observable '{s}' does not act on dimension {dim}"
                    )));
                }
                Ok(MeasuredObservable::from_outcomes(multipartite::product_eigenbasis(&string))?)
            }
        },
        ObservableSpec::Matrix { matrix } => {
            let m = parse_matrix(matrix)?;
            if m.nrows() != dim {
                return Err(CliError::Config("observable dimension mismatch".into()));
            }
            Ok(MeasuredObservable::from_operator(&Operator::from_matrix(m))?)
        }
    }
}
