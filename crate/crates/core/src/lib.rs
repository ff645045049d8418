//! Outlier filtering of sparse image correspondences by overlapping planar
//! homographies, midpoint homography pairs and NCC keypoint refinement,
//! together with ground-truth evaluation metrics and a synthetic scene
//! generator.

pub mod eval;
pub mod geometry;
pub mod miho;
pub mod mop;
pub mod ncc;
pub mod synth;

pub use geometry::{Homography, HomographyModel, Match, Point2};
pub use miho::{fix_rotation, mop_miho_filter, MihoModel, MihoPair};
pub use mop::{mop_filter, FilterResult, MopConfig, MopError, Plane, PlaneModel};
pub use ncc::{refine_match, refine_matches, GrayImage, RefinedMatch, WarpPair};
