//! Certified numerics for finite-dimensional matrix-normed spaces.

pub mod amalgam;
pub mod bound;
pub mod chain;
pub mod concretize;
pub mod ctx;
pub mod derived;
pub mod error;
pub mod json;
pub mod linalg;
pub mod maps;
pub mod metric;
pub mod onesum;
pub mod sdp;
pub mod space;

pub use bound::{Certificate, NormBound, Witness};
pub use ctx::{Budget, EvalCtx};
pub use derived::Space;
pub use error::{OpError, Result};
pub use maps::LinearMap;
pub use space::{AmbientSignature, ConcreteSpace, SpaceElement};
