//! Multi-qubit Pauli strings.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{qubit, Operator};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn operator(self) -> Operator {
        match self {
            Pauli::I => Operator::identity(&[2]),
            Pauli::X => qubit::sigma_x(),
            Pauli::Y => qubit::sigma_y(),
            Pauli::Z => qubit::sigma_z(),
        }
    }

    fn anticommutes(self, other: Pauli) -> bool {
        self != Pauli::I && other != Pauli::I && self != other
    }
}

/// A tensor product of single-qubit Pauli operators; involutive and unitary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PauliString(Vec<Pauli>);

impl PauliString {
    pub fn new(paulis: Vec<Pauli>) -> Result<Self> {
        if paulis.is_empty() {
            return Err(Error::DimensionMismatch("empty Pauli string".into()));
        }
        Ok(Self(paulis))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn paulis(&self) -> &[Pauli] {
        &self.0
    }

    /// Dense operator on the flattened 2^n-dimensional register.
    pub fn operator(&self) -> Operator {
        let mut out = self.0[0].operator();
        for p in &self.0[1..] {
            out = out.kron(&p.operator());
        }
        out.flattened()
    }

    /// Two Pauli strings either commute or anticommute; they anticommute
    /// when the number of positions with distinct non-identity letters is odd.
    pub fn anticommutes_with(&self, other: &PauliString) -> bool {
        assert_eq!(self.len(), other.len(), "string lengths differ");
        self.0
            .iter()
            .zip(&other.0)
            .filter(|(a, b)| a.anticommutes(**b))
            .count()
            % 2
            == 1
    }
}

impl FromStr for PauliString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let paulis = s
            .chars()
            .map(|c| match c {
                'I' | 'i' => Ok(Pauli::I),
                'X' | 'x' => Ok(Pauli::X),
                'Y' | 'y' => Ok(Pauli::Y),
                'Z' | 'z' => Ok(Pauli::Z),
                other => Err(Error::DimensionMismatch(format!("invalid Pauli letter '{other}'"))),
            })
            .collect::<Result<Vec<_>>>()?;
        PauliString::new(paulis)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.0 {
            write!(f, "{:?}", p)?;
        }
        Ok(())
    }
}
