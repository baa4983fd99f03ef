//! Free-boundary conformal parameterization of disk-type point clouds.

pub mod delaunay;
pub mod error;
pub mod io;
pub mod kdtree;
pub mod laplacian;
pub mod meshing;
pub mod metrics;
pub mod model;
pub mod neighborhood;
pub mod solver;
pub mod synth;
pub mod welding;

pub use error::{Error, ErrorKind, Result};
