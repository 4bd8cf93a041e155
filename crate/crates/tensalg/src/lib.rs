//! Named-index tensor algebra over ordered vector spaces.
//!
//! Tensors in this crate carry typed indices (space, coordinate-system frame,
//! variance) instead of bare axis positions. All spaces live in a single
//! ordered registry, which gives every index of a product result a unique
//! position and makes the tensor product commutative — the foundation for
//! cost-based contraction planning, structured (separable) operators that are
//! never materialized, and the matrix-free tensor solvers built on top.

pub mod alloc_track;
pub mod demo;
pub mod io;
pub mod notation;
pub mod planner;
pub mod registry;
pub mod separable;
pub mod solvers;
pub mod tensor;

pub use notation::{IndexSpec, NotationError, TensorIndex, Variance};
pub use planner::{
    cost_report, execute, execute_with_stats, left_to_right_plan, plan, plan_with_limits,
    ContractionPlan, CostReport, FactorSignature, PlanError, PlanNode, PlannerLimits,
};
pub use registry::{RegistryError, SpaceId, SpaceRegistry};
pub use separable::{
    apply_passes, convolution_1d, dft_1d, finite_difference_1d, identity_operator, laplacian,
    resample_1d, shear_rotation_2d, FdVariant, Resample, SeparableError, SeparableOperator, Term,
};
pub use solvers::{
    conjugate_gradients, direct_solve, direct_solve_with_cap, invert, invert_with_cap, jacobi,
    multigrid::{build_hierarchy, build_hierarchy_from_map, tmg_solve, tmg_vcycle, Levels, MultigridHierarchy},
    LinearMap, SolveError, SolveReport, DIRECT_SOLVE_CAP,
};
pub use tensor::{
    derivative_of_linear_map, groups_of, inner_product, make_delta, product_pair,
    product_pair_in_context, tensor_product, DeltaPair, DenseTensor, TensorError,
};
