//! Toolkit for local motion deblurring data and evaluation.
//!
//! The crate covers the whole paired-capture workflow: a beam-splitter
//! capture simulator that produces blurred/sharp pairs with known
//! degradations, the post-processing chain that undoes them (color
//! correction, photometric gain, RAW-to-RGB processing, geometric
//! alignment), background-subtraction mask generation, synthetic local
//! blur, blur-aware patch sampling, the gated-output losses and the
//! evaluation metrics.

pub mod calib;
pub mod capture_sim;
pub mod error;
mod fft2;
pub mod geoalign;
pub mod image;
pub mod io;
pub mod isp;
pub mod lbfmg;
pub mod losses;
pub mod metrics;
pub mod pipeline;
pub mod sampler;
pub mod synthblur;

pub use error::{Error, Result};
pub use image::{
    downsample2, pyramid, shift, BayerImage, BayerPattern, BlurMask, FlowField, Frame, Image, Rect,
    Shifted,
};
