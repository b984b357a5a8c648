// SPDX-License-Identifier: Apache-2.0

pub mod boxes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod io;
pub mod layout;
pub mod litho;
pub mod loss;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod raster;
pub mod tensor;
pub mod verify;

pub use error::{Error, Result};
