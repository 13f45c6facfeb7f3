//! Training (Adam + cosine annealing), gradient-descent refinement of
//! configurations, and evaluation statistics.

mod adam;
mod evaluate;
mod gd;
mod schedule;
mod train;

pub use adam::AdamState;
pub use evaluate::{
    mean,
    evaluate_gd, evaluate_model, one_sided_p_less, t_sigma_half_width, MethodEval, ResultsRow,
    ResultsTable,
};
pub use gd::{gd_refine, GdConfig, GdResult};
pub use schedule::cosine_lr;
pub use train::{train, EpochMetrics, TrainConfig, TrainError};
