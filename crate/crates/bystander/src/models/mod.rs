//! The two analytically solved qubit models. Their closed forms are the
//! oracle tier against which the generic engines are tested.

pub mod fluor;
pub mod multipartite;
pub mod pauli;

/// A pointwise rate sample: either a finite value or a divergence marker at
/// a zero of the underlying decay function.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RateSample {
    Finite(f64),
    Divergent,
}

impl RateSample {
    pub fn finite(&self) -> Option<f64> {
        match self {
            RateSample::Finite(v) => Some(*v),
            RateSample::Divergent => None,
        }
    }

    pub fn is_divergent(&self) -> bool {
        matches!(self, RateSample::Divergent)
    }
}
