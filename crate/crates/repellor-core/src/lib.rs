//! Numerics for multivalued inverse iteration on hyperbolic repellors:
//! region-pruned preimage trees, inverse-iterate empirical measures,
//! separated-set pressure, QR Lyapunov spectra with the inverse Pesin
//! identity, and correlation decay — on a catalogue of toral endomorphisms
//! and a perturbed skew product.

pub mod branches;
pub mod correlations;
pub mod error;
pub mod exponents;
pub mod geom;
pub mod intmat;
pub mod linalg;
pub mod measure;
pub mod par;
pub mod rng;
pub mod system;
pub mod thermo;

pub use error::{DynError, Result};
pub use geom::{AmbientPoint, Point, TorusPoint};
pub use intmat::IntMatrix;
pub use system::{SystemSpec, Variant};
