//! Effective-force recursion, contraction maps and Taylor maps.

pub mod contract;
pub mod expected;
pub mod pathwise;
pub mod taylor;

pub use contract::{contract_a, contract_b, delta_density, propagator_norm, DenseKernel};
pub use pathwise::{effective_force, expand_pathwise, semigroup_residual, stationary_residual, PathwiseExpansion};
pub use taylor::{taylor_decompose, TaylorCheck};
pub use expected::{flow_expected, tadpole_oracle, CounterTermEntry, CounterTermResult, EffectiveCoefficients, FlowConfig, Provenance};
