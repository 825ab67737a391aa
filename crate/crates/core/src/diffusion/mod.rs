//! Forward noising, the noise-prediction loss, Tweedie estimates and the
//! unguided reverse samplers.

mod loss;
mod model;
mod sampler;
mod schedule;
mod train;

pub use loss::{training_loss, training_loss_with, LossWeighting};
pub use model::{EpsModel, GaussianOracle, NoisePredictor};
pub use sampler::{
    ancestral_step, ancestral_step_between, deterministic_step, deterministic_step_with, evenly_spaced, run_chain,
    sample, SamplerConfig, SamplerKind, StepHook,
};
pub use schedule::{posterior_params, q_sample, q_sample_rows, q_sample_with, tweedie_x0, tweedie_x0_with, NoiseSchedule};
pub use train::{cosine_lr, train_eps_model, DiffusionTrainConfig};
