//! The manifold-evaluation pair: an embedder `F` trained on a rate-reduction
//! objective and a relation network `g` supervised by prior relations.
//! `H = g ∘ F` turns a batch into its relation matrix.

mod diagnostics;
mod encoder;
mod model;
mod objective;
mod relation;
mod train;

pub use diagnostics::{subspace_diagnostics, ModeSpectrum, SubspaceReport, RANK_THRESHOLD};
pub use encoder::{fit_prior_encoder, PriorEncoder};
pub use model::{relation_loss, EmbedCache, EmbedderF, ManifoldModel, RelationCache, RelationNetG};
pub use objective::{compactness, lm_objective, max_precision_eps_sq, LmConfig, Membership, ObjectiveForm};
pub use relation::{
    kernel_backward, kernel_relations, kmeans, kmeans_relations, median_sq_distance, median_temperature,
    prior_relations, KMeansResult, RelationMatrix, KMEANS_MAX_ITER,
};
pub use train::{
    train_embedder_with_labels, train_manifold, ManifoldLogEntry, ManifoldTrainConfig, ManifoldTrainLog, Optimizer,
    RelationSource,
};
