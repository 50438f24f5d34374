//! Counterfactual explanations for image classifiers by searching directions
//! in the latent space of a conditional style generator.
//!
//! The crate contains everything needed to reproduce the pipeline on a
//! laptop: procedurally rendered phantoms with measurable features
//! ([`phantom`]), a small dense-network kernel ([`nn`]), the
//! classifier/generator/encoder stack ([`models`]) and its training
//! ([`training`]), the closed-form factorization of the style space
//! ([`stylespace`]) and the two greedy searches ([`search`]).

pub mod cli;
pub mod image;
pub mod models;
pub mod nn;
pub mod pgm;
pub mod phantom;
pub mod search;
pub mod stylespace;
pub mod training;

pub use image::{Image, IMAGE_PIXELS, IMAGE_SIDE};
