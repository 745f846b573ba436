//! Policy-conditioned gradient boosting over scene features, profile
//! embeddings and policy vectors.

mod features;
mod gbdt;

pub use features::{featurize, FeatureLayout, FeatureVector};
pub use gbdt::{log_loss, predict, sigmoid, train, BoostedModel, BoostingConfig, Dataset, Node, Tree};
