#![no_std]
#![warn(missing_debug_implementations)]

//! Joint first/third-person embedding learning for egocentric 3D pose.
//!
//! A two-stream network is trained to tell whether a first-person clip and a
//! third-person clip of the same wearer are synchronized. The 64-D embeddings
//! it learns are then reused as extra input features for a supervised pose
//! regressor that only ever sees the egocentric stream.
//!
//! This crate holds the algorithmic pieces and does no IO:
//!
//! * [`skeleton`]: the 17-joint body model, canonical alignment and the error metric.
//! * [`data`]: clip records, pair mining, the curriculum schedule and a synthetic
//!   paired-view generator.
//! * [`flow`]: RGB + optical-flow frame stacks and flow providers.
//! * [`net`], [`loss`], [`train`]: the semi-Siamese network, contrastive loss and
//!   the SGD training loop.
//! * [`transfer`]: embedding extraction, pose vocabularies and the regressor.
//! * [`analysis`]: PCA / t-SNE projection, CCA and latent transversals.
//!
//! File formats, the pipeline and the command-line tool live in the `egosync`
//! crate.

extern crate alloc;

pub mod analysis;
pub mod data;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod loss;
pub mod math;
pub mod net;
pub mod skeleton;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
