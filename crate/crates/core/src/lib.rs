//! Scene-driven simulation of engineering objects.
//!
//! The crate is organized around a small set of cooperating modules:
//!
//! - [`formula`]: a polymorphic expression language with broadcasting,
//!   matrix algebra, function composition and Dirac impulse terms;
//! - [`math`]: fixed-size vectors, matrices and unit quaternions;
//! - [`frames`]: a forest of relative 6D reference frames;
//! - [`dynamics`]: fixed-step ODE and rigid-body integration, including
//!   impulse handling and CSV trajectory output;
//! - [`geometry`]: triangle mesh generation and formula-driven deformation;
//! - [`render`]: a deterministic software rasterizer with scalar-field
//!   coloring, view warping and PPM output;
//! - [`stars`]: star catalogue loading, filtering and photometry;
//! - [`graph`]: the component scene graph with typed links and a
//!   deterministic execution engine;
//! - [`scene`]: the JSON scene format tying everything together.

pub mod dynamics;
pub mod formula;
pub mod frames;
pub mod geometry;
pub mod graph;
pub mod scene;
pub mod math;
pub mod render;
pub mod stars;

pub use formula::{Env, Expr, FormulaError, TypeTag, Value};
pub use frames::{FrameForest, Pose6D};
pub use geometry::Mesh;
pub use math::{Mat3, Quat, Vec3};
