//! Dense Liouvillian assembly and exact propagation for small boxes.
//!
//! The matrix is assembled directly from the commutator with the lattice
//! Hamiltonian and a brute-force sweep over all pairs of matrix elements, so it
//! shares no code with the compiled [`super::Generator`].

use crate::disorder::DisorderField;
use crate::error::{Error, Result};
use crate::kernel::GainKernel;
use crate::lattice::{self, LatticeBox};
use crate::linalg::{CMatrix, CVector, C64};
use crate::state::DensityState;

use super::GeneratorParams;

/// Largest Liouville-space dimension accepted by the dense path.
pub const MAX_DENSE_DIM: usize = 4000;

/// The lattice Hamiltonian `u·(nearest-neighbour adjacency) + λ·diag(ω)` in site order.
pub fn hamiltonian(lattice: &LatticeBox, params: &GeneratorParams, field: &DisorderField) -> CMatrix {
    let n = lattice.n_sites();
    CMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (lattice.site(i), lattice.site(j));
        if i == j {
            C64::new(params.lambda * field.value(a), 0.0)
        } else if lattice::l1_norm(lattice::sub(a, b)) == 1 {
            C64::new(params.u, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// The full generator acting on `vec(ρ)` with index `i·n + j` for `⟨x_i|ρ|x_j⟩`.
pub fn liouvillian(lattice: &LatticeBox, params: &GeneratorParams, field: &DisorderField, kernel: &GainKernel) -> Result<CMatrix> {
    let n = lattice.n_sites();
    if n * n > MAX_DENSE_DIM {
        return Err(Error::Precondition(format!("dense Liouvillian of dimension {} exceeds {MAX_DENSE_DIM}", n * n)));
    }
    if field.lattice() != lattice {
        return Err(Error::BoxMismatch);
    }
    let h = hamiltonian(lattice, params, field);
    let mut l = CMatrix::zeros(n * n, n * n);
    let minus_i = C64::new(0.0, -1.0);
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            for k in 0..n {
                l[(row, k * n + j)] += minus_i * h[(i, k)];
                l[(row, i * n + k)] -= minus_i * h[(k, j)];
            }
        }
    }
    let sites: Vec<_> = lattice.sites().collect();
    let origin = [0; lattice::MAX_DIM];
    for i in 0..n {
        for j in 0..n {
            let center = lattice::add(sites[i], sites[j]);
            let xi = lattice::sub(sites[i], sites[j]);
            for k in 0..n {
                for m in 0..n {
                    if lattice::add(sites[k], sites[m]) != center {
                        continue;
                    }
                    let eta = lattice::sub(sites[k], sites[m]);
                    let v = kernel.r(xi, eta) - kernel.r(origin, lattice::sub(eta, xi));
                    l[(i * n + j, k * n + m)] += v * params.g;
                }
            }
        }
    }
    Ok(l)
}

/// `vec(ρ)` in the ordering used by [`liouvillian`].
pub fn vectorize(state: &DensityState) -> CVector {
    let m = state.to_matrix();
    let n = m.nrows();
    CVector::from_fn(n * n, |k, _| m[(k / n, k % n)])
}

/// Inverse of [`vectorize`], producing a full-band state.
pub fn devectorize(lattice: LatticeBox, v: &CVector) -> Result<DensityState> {
    let n = lattice.n_sites();
    let m = CMatrix::from_fn(n, n, |i, j| v[i * n + j]);
    DensityState::from_matrix(lattice, &m)
}

/// `exp(t·𝓛) ρ` via the dense matrix exponential.
pub fn propagate(generator: &CMatrix, state: &DensityState, t: f64) -> Result<DensityState> {
    let prop = (generator * C64::new(t, 0.0)).exp();
    devectorize(*state.lattice(), &(prop * vectorize(state)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::Distribution;
    use crate::evolution::Generator;
    use crate::kernel::{build_kernel, presets};

    #[test]
    fn dense_matches_compiled_generator() {
        let b = LatticeBox::truncated(1, 3).unwrap();
        let f = DisorderField::sample(b, &Distribution::default(), 4).unwrap();
        let k = build_kernel(&presets::boson(&Default::default()), 6).unwrap();
        let p = GeneratorParams::new(0.8, 1.3, 0.6).unwrap();
        let dense = liouvillian(&b, &p, &f, &k).unwrap();
        let gen = Generator::new(b, None, &p, &f, &k).unwrap();
        let n = b.n_sites();
        for col in 0..n * n {
            let mut e = CVector::zeros(n * n);
            e[col] = C64::new(1.0, 0.0);
            let s = devectorize(b, &e).unwrap();
            let out = vectorize(&gen.apply(&s).unwrap());
            let expect = dense.column(col);
            assert!((out - expect).norm() < 1e-12, "column {col}");
        }
    }

    #[test]
    fn too_large_is_rejected() {
        let b = LatticeBox::truncated(2, 4).unwrap();
        let f = DisorderField::zero(b);
        let k = build_kernel(&presets::cosine(2, 16), 2).unwrap();
        assert!(liouvillian(&b, &GeneratorParams::new(1.0, 0.0, 0.0).unwrap(), &f, &k).is_err());
    }
}
