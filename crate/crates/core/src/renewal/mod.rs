//! Renewal functions on a uniform grid and the inequalities they satisfy.

pub mod build;
pub mod checks;
pub mod grid;

pub use build::{build_g, build_u, build_v, build_vj, centering, Centering, Ladder, UMethod};
pub use grid::{convolve_stieltjes, GridFunction};
