//! Numerical laboratory for nonholonomic mechanical systems with affine
//! velocity constraints.
//!
//! The crate models mechanical Lagrangians `L = ½ q̇ᵀM q̇ + b·q̇ − V` together
//! with affine constraints `S(q,t) q̇ + s(q,t) = 0`, computes the unique
//! d'Alembert-consistent dynamics via a saddle-point multiplier solve, and
//! provides the machinery to construct and verify *moving energies*: modified
//! energy functions that stay conserved even when the plain energy does not.
//!
//! Modules:
//! - [`dynamics`]: states, Lagrangians, constraints, the multiplier solve.
//! - [`frames`]: time-dependent coordinate maps, pullbacks, moving energies,
//!   and hypothesis checkers for the conservation theorems.
//! - [`systems`]: concrete presets (sphere on a turntable, sphere rolling
//!   inside a rotating surface of revolution) and their rotating-frame twins.
//! - [`integrate`]: fixed RK4 and adaptive Dormand–Prince 5(4) integration
//!   with constraint-drift projection and attitude reconstruction.
//! - [`analysis`]: drift reports, energy-rate identities, reaction-annihilator
//!   membership, period detection and reconstruction frequencies.

// Numeric validity guards deliberately use negated comparisons (`!(x > 0.0)`)
// so that NaN inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod frames;
pub mod integrate;
pub mod linalg;
pub mod systems;

pub use dynamics::{
    AffineConstraint, ChartMeta, DynamicsOptions, DynamicsOutput, MechanicalLagrangian,
    NonholonomicSystem, ScalarField, VelocityState,
};
pub use error::{CoreError, Result};
pub use frames::{GroupGenerator, HypothesisReport, SampleSpec, TimeDependentMap};
pub use integrate::{IntegratorOptions, Method, Projection, Trajectory};
