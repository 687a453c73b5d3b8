//! Simulation and numerical analysis of integer-valued gradient models on
//! regular trees.
//!
//! The crate is organized around one object: the height offset of a
//! tree-indexed gradient field — the limit of spherical averages of heights
//! seen from a pinned root.  It provides
//!
//! * [`transfer`]: transfer operators `Q(j) = e^{-beta U(j)}` for built-in
//!   and custom interactions, their normalized increment laws, transforms,
//!   cumulants, and the even/odd parity split behind hidden two-class
//!   states;
//! * [`tree`]: finite balls of Cayley and d-ary trees, vertex addressing,
//!   split-vertex classification of pair paths, and a flat breadth-first
//!   index for bulk work;
//! * [`sampler`]: counter-based deterministic samplers for the free measure
//!   and for two-class (parity-layered) states, boundary-law solving,
//!   pinning, and finite-volume consistency checks;
//! * [`height_offset`]: spherical averages, exact second-moment formulas,
//!   martingale checks, past/future decompositions at the root, batch
//!   collection, and the empirical translation/Markov pathology tests;
//! * [`transforms`]: infinite-product moment-generating and characteristic
//!   functions, tree cumulants, certified decay bounds, Fourier-inversion
//!   densities, and exponential tail bounds;
//! * [`numeric`]: small shared numerical helpers.
//!
//! Everything downstream of a seed is deterministic: samplers draw from
//! counter-mode streams keyed by `(seed, domain, replica)`, so any vertex of
//! any replica can be regenerated independently and in parallel.

/// Crate version, re-exported for run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod error;
pub mod height_offset;
pub mod numeric;
pub mod sampler;
pub mod transfer;
pub mod transforms;
pub mod tree;

pub use error::{CoreError, Result};
pub use transfer::{
    make_model, DecayRadius, EdgeDistribution, FuzzyOperator, ModelKind, Parity, TransferOperator,
};
pub use tree::{OrientedEdge, TreeIndex, TreeKind, TreeSpec, VertexId};
