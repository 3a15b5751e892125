#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod greens;
pub mod io;
pub mod lattice;
pub mod mass;
pub mod numeric;
pub mod rng;
pub mod samplers;
pub mod spectral;

pub use error::{Error, Result};
pub use lattice::{SiteIndex, TorusLattice};
