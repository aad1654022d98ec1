//! Configuration, image IO, datasets and the training loops.

pub mod config;
pub mod dataset;
pub mod io;
pub mod train;

pub use config::{DnChoice, OptimizerKind, TrainConfig};
pub use dataset::{Dataset, GroundTruth};
pub use io::{list_images, load_image, load_resized, save_png};
pub use train::{dataset_loss, run, train_dn, train_ia, train_ia_from, Adam, Optimizer, Sgd, Trained};
