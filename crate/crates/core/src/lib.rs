#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquire;
pub mod blur;
pub mod error;
pub mod feasible;
pub mod fft;
pub mod image;
pub mod io;
pub mod kl;
pub mod objective;
pub mod ops;
pub mod sgp;
pub mod testbed;
pub mod trace;
pub mod tv;

pub use error::{Error, Result};
pub use image::Image;
