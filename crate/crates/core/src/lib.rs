//! Distributed estimation and control for truss robots.
//!
//! Every node of a truss robot keeps its own copy of a global decision vector
//! and runs consensus ADMM rounds with its physical neighbours. The same engine
//! ([`admm`]) solves two problems:
//!
//! * shape reconstruction from local measurements ([`estimation`]), where the
//!   decision vector is the stacked node positions, and
//! * motion coordination ([`control`]), where the decision vector is the
//!   stacked node velocities and constraints may be known to a single node.
//!
//! [`framework`] holds the graph/geometry kernel (edge lengths, the scaled
//! rigidity matrix, rigidity tests) and [`isoperimetric`] adds the tube,
//! roller and module kinematics of constant-perimeter robots.

pub mod admm;
pub mod control;
pub mod error;
pub mod estimation;
pub mod framework;
pub mod isoperimetric;
pub mod linalg;
pub mod robots;

pub use error::{Error, Result};
pub use framework::{Configuration, EdgeLengthVector, FrameworkGraph};
