//! Shared fixtures for the benchmarks in `benches/`.

use lindiff_core::kernel::{build_kernel, presets, GainKernel};
use lindiff_core::{DensityState, DisorderField, Distribution, GeneratorParams, LatticeBox};

/// A disordered problem of the size used in the diffusion runs.
pub struct Workload {
    pub state: DensityState,
    pub params: GeneratorParams,
    pub field: DisorderField,
    pub kernel: GainKernel,
}

/// Point state on a box of radius `l` in `dim` dimensions with coherence window `band`.
pub fn workload(dim: usize, l: usize, band: usize) -> Workload {
    let lattice = LatticeBox::truncated(dim, l).expect("valid box");
    Workload {
        state: DensityState::point_state_banded(lattice, Some(band)),
        params: GeneratorParams::new(1.0, 3.0, 0.5).expect("valid parameters"),
        field: DisorderField::sample(lattice, &Distribution::default(), 7).expect("valid field"),
        kernel: cosine_kernel(dim),
    }
}

pub fn cosine_kernel(dim: usize) -> GainKernel {
    build_kernel(&presets::cosine(dim, 16), 2).expect("cosine preset builds")
}
