//! Deep-unfolded window equalizer: each layer mimics one projected gradient
//! step on `||R̃ - A_cut Z_cut||^2` in the real-lifted domain.

mod io;
mod lift;
mod network;
mod train;

pub use io::{load_model, load_model_for, loss_history_csv, model_to_string, parse_model, save_model};
pub use lift::{lift_matrix, lift_vector, unlift_vector};
pub use network::{layer_weights, loss, psi, FeatureMode, Features, LossWeighting, ModelShape, UnfoldedEqualizerModel};
pub use train::{batch_gradient, smoothed_ratio, train, train_with, Adam, AdamConfig, TrainConfig, TrainingSet};
