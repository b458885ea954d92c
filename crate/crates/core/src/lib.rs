//! Differentiable hardware modeling, simulation and design-space optimization
//! for DNN accelerators.

pub mod dgen;
pub mod expr;
pub mod hwmodel;
pub mod report;
pub mod workload;
pub mod mapper;
pub mod dsim;
pub mod dopt;
pub mod par;
pub mod sweep;
