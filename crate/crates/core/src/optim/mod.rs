//! Numerical engines: equality-constrained Gauss-Newton, a small dense LP
//! solver with duals, a dense interior point QP and the robust minimax loop.

mod lp;
mod qp;
mod robust;
mod wls;

pub use lp::{solve_small_lp, DenseLp, LpSolution, LpStatus};
pub use qp::{solve_dense_qp, DenseQp, QpSolution};
pub use robust::{
    ambiguity_lp, sample_costs, solve_pseudo_wls, solve_robust_nlp, worst_case, RobustData,
    RobustError, RobustNlpState, RobustOptions, SplitModel, WorstCase,
};
pub use wls::{solve_eq_wls, WlsError, WlsModel, WlsOptions, WlsReport};
