//! Optimization: BPR triple sampling, the three-part training objective
//! with exact analytic gradients, Adam, and the epoch loop.

mod adam;
mod fit;
mod loss;
mod sampler;

pub use adam::{adam_step, AdamState};
pub use fit::{fit, FitResult, LossRecord};
pub use loss::{bpr_loss, mutual_loss, softened_distribution, total_loss, LossParts};
pub use sampler::{sample_batch, Batch, Triple};
