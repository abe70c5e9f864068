//! Optimal transport between uniform empirical measures and the
//! measure-valued form of consensus-based optimization.

mod assignment;
mod barycenter;
mod dynamics;

pub use assignment::{solve_assignment, w2_empirical, Assignment};
pub use barycenter::{
    barycenter, barycenter_from, ensemble_variance, first_order_residual, Barycenter, BarycenterOptions,
    MeasureEnsemble,
};
pub use dynamics::{ot_cbo_iteration, ot_cbo_step};
