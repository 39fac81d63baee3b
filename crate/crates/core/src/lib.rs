//! Disordered Lindblad dynamics of a single lattice particle.

pub mod appendix;
pub mod diffusion;
pub mod disorder;
pub mod error;
pub mod evolution;
pub mod kernel;
pub mod lattice;
pub mod linalg;
pub mod momentum;
pub mod state;

pub use error::{Error, Result};
pub use disorder::{DisorderField, Distribution};
pub use evolution::{apply_generator, evolve, EvolveOptions, Generator, GeneratorParams, Trajectory};
pub use lattice::{Boundary, Coord, LatticeBox, Window};
pub use state::DensityState;
