//! Skipping recurrent networks (S-RNN) for learning storylines from photo
//! albums.
//!
//! An Elman network is trained by stochastic EM over latent ordered
//! subsets of each album: the E-step samples which images the story
//! visits, the M-step fits the network to that subset with a softmax loss
//! over the album's remaining images.

pub mod baselines;
pub mod data;
pub mod eval;
pub mod numerics;
pub mod rnn;
pub mod srnn;
pub mod story;

pub use data::{Album, Dataset};
pub use numerics::{Matrix, RngStream};
pub use rnn::{RnnParams, TrainConfig};
pub use srnn::{Mode, SrnnModel, StorySample, ZPrior};
pub use story::StoryIndices;
