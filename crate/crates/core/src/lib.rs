pub mod basis;
pub mod best_approx;
pub mod element;
pub mod error;
pub mod fields;
pub mod lagrange;
pub mod linsolve;
pub mod local_solve;
pub mod mesh;
pub mod model_problems;
pub mod poly;
pub mod projections;
pub mod projector;
pub mod space;
pub mod quadrature;

pub use error::{Error, Result};
