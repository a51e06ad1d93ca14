//! Parameter estimation on top of the forward smoother: score functionals,
//! recursive maximum likelihood, batch and online EM, and step schedules.

mod em;
mod online;
mod schedule;

pub use em::{
    batch_em_iteration, batch_em_iteration_exact, smc_estep, LgssmPhiLambda, MaximizationMap, SvLambda, SvSuffStats,
};
pub use online::{
    load_checkpoint, save_checkpoint, write_estimation_rows, OnlineEmState, OnlineSettings, RmlState, ScoreFunctional,
    ESTIMATION_CSV_HEADER,
};
pub use schedule::{
    discount_coefficients, step_discount_sum, step_discount_sum_with, step_discount_sums, StepSchedule,
};
