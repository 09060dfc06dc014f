//! Finite-scale laboratory for coarse geometry and uniform Roe algebra
//! experiments: metric-space models, banded operators and approximability
//! diagnostics, vector-measure rounding, operator-norm localization, and
//! coarse-map extraction from spatially implemented isomorphisms.

pub mod error;
pub mod linalg;
pub mod localization;
pub mod operator;
pub mod report;
pub mod rigidity;
pub mod space;
pub mod vecmeasure;

pub use error::{Error, Result};
