#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arr;
pub mod backbone;
pub mod chanstats;
pub mod cli;
pub mod encoders;
pub mod error;
pub mod evalharness;
pub mod fusion;
pub mod geometry;
pub mod heads;
pub mod model;
pub mod nn;
pub mod prompt;
pub mod scenegen;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/scenes.md")]
mod book_scenes {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/channel-statistics.md")]
mod book_channel_statistics {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
