mod fit;
pub mod gradcheck;
pub mod loss;
pub mod optim;
mod trainer;

pub use fit::fit_kan_layer;
pub use gradcheck::{gradient_check, gradient_check_head, GradCheckReport, GradCheckScale};
pub use loss::{bce_loss, LossValue};
pub use optim::{optimizer_step, OptimizerState};
pub use trainer::{predict, train, write_trace_csv, EpochRecord, TrainConfig, TrainOutcome};
