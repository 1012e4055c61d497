//! Visible + thermal hand identification.
//!
//! Modules follow the processing chain: [`image`] primitives, VIS-guided
//! thermal [`segmentation`], hand [`regions`], DCT [`features`], the
//! dispersion matcher in [`bdm`], score [`fusion`], and the synthetic
//! data and evaluation [`harness`].

pub mod bdm;
pub mod features;
pub mod fusion;
pub mod harness;
pub mod image;
pub mod par;
pub mod regions;
pub mod segmentation;

pub use image::{BinaryMask, BitDepth, GrayImage, ImageError};
pub use par::Execution;
