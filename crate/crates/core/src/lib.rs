//! Dense geometric correspondence estimation, end to end: a differentiable
//! tensor graph, exact geometric transforms with synthetic pair generation,
//! a coarse-to-fine correspondence network with an optional matchability
//! head, evaluation metrics, and relative camera pose recovery from dense
//! matches.

pub mod geometry;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod pose;
pub mod tensor;
