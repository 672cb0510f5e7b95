//! Domain-adaptive anchor-free object detection.
//!
//! The crate trains a small fully-convolutional detector on a labeled source
//! domain plus unlabeled target images, aligning the two domains with
//! adversarial discriminators at pixel, instance, and category granularity.

pub mod autodiff;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detect;
pub mod discriminator;
pub mod evaluation;
pub mod fusion;
pub mod geometry;
pub mod lossops;
pub mod model;
pub mod params;
pub mod training;
