//! Training-free speech-token pruning.
//!
//! Given speech embeddings, a text query and a model's first-layer query/key
//! weights, the pruner keeps the speech tokens most relevant to the query
//! before the expensive prefill. The crate also carries the random baselines,
//! a synthetic needle-retrieval harness and a prefill FLOPs model.

pub mod bundle;
pub mod cost;
pub mod harness;
pub mod pruner;
pub mod tensor;

pub use bundle::{read_bundle, write_bundle, BundleError, EmbeddingBundle, NeedleSpan};
pub use pruner::{prune, speechprune, Method, Mode, PruneConfig, PruneError, PruneResult};
pub use tensor::Matrix;
