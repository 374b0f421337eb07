//! Topic-assisted coarse-to-fine feature matching.
//!
//! The pipeline extracts multi-scale features from an image pair, infers a
//! bank of latent topics over coarse cells, restricts attention-based feature
//! augmentation to the topics visible in both images, matches cells with a
//! dual-softmax, and refines matches to sub-pixel accuracy. Training and
//! evaluation run against synthetically warped image pairs with exact
//! homography ground truth.

pub mod autograd;
pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod coarse;
pub mod config;
pub mod error;
pub mod fine;
pub mod geometry;
pub mod imageio;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod report;
pub mod rng;
pub mod synth;
pub mod topics;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
