//! Numerical tolerances used across the crate.
//!
//! Two tiers: structural assertions on inputs (Hermiticity, trace
//! normalization, Kraus sums) are held to [`STRUCT`], while quantities that
//! pass through matrix exponentials or finite differences are compared at
//! [`NUM`]. Double precision with dense exponentials on Liouville spaces of
//! dimension <= 1024 meets both comfortably.

/// Tolerance for structural assertions on exact algebraic identities.
pub const STRUCT: f64 = 1e-10;

/// Tolerance for propagated quantities and cross-route comparisons.
pub const NUM: f64 = 1e-8;

/// Threshold on the max norm of an inverse propagator above which a
/// time-local generator is reported as divergent rather than as a value.
pub const DIVERGENCE: f64 = 1e12;
