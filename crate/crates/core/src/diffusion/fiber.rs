//! Translation-fiber representation of the disorder-averaged dynamics.
//!
//! A single periodic disorder configuration `ω` on a box of side `N` generates
//! the finite orbit `{ω_a = ω(· + a)}`; averaging over that orbit stands in for
//! the disorder expectation. Functions on the fiber are indexed by a relative
//! coordinate `ξ` (restricted to a window) and an orbit label `a`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{mean_stderr, Bounds, DiffusionEstimate, Echo, Method};
use crate::disorder::{DisorderField, Distribution};
use crate::error::{Error, Result};
use crate::evolution::GeneratorParams;
use crate::kernel::{default_grid, spectral_gap, GainKernel};
use crate::lattice::{self, unit_vectors, Boundary, Coord, LatticeBox, Window, MAX_DIM};
use crate::linalg::{extrapolate_to_zero, hermitian_eigenvalues, hermitian_part, dense_spectral_norm, solve_many, symmetric_spectral_radius, CMatrix, CVector, C64};

/// Default radius of the `ξ` window.
pub const DEFAULT_FIBER_BAND: usize = 4;

/// Tolerance on `‖𝓛̂(δ₀⊗1)‖` relative to the kernel scale.
const STATIONARY_TOL: f64 = 1e-12;

/// Singular values below this multiple of `‖T̂₀‖` count as zero.
const RANK_TOL: f64 = 1e-10;

/// Solve residual above which a Lindbladian is declared singular.
const SOLVE_TOL: f64 = 1e-8;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Finite matrices of the `k = 0` fiber generator.
#[derive(Clone, Debug)]
pub struct FiberSpace {
    sites: LatticeBox,
    band: Window,
    params: GeneratorParams,
    gap: f64,
    hop: DMatrix<f64>,
    potential: Vec<f64>,
    dissipator: CMatrix,
}

impl FiberSpace {
    /// Assembles hopping, potential and dissipator on `band × sites`.
    ///
    /// Basis vector `(ξ, a)` sits at index `a · |band| + ξ`.
    pub fn build(sites: LatticeBox, params: &GeneratorParams, kernel: &GainKernel, field: &DisorderField, band_radius: usize) -> Result<Self> {
        params.check()?;
        if sites.boundary() != Boundary::Periodic {
            return Err(Error::Precondition("fiber space needs a periodic box".into()));
        }
        if *field.lattice() != sites || kernel.dim() != sites.dim() {
            return Err(Error::BoxMismatch);
        }
        let dim = sites.dim();
        let band = Window::new(dim, band_radius);
        let nb = band.len();
        let n = nb * sites.n_sites();
        let at = |xi: usize, a: usize| a * nb + xi;
        let label = |x: Coord| sites.index(x).expect("periodic boxes wrap every site");

        let mut hop = DMatrix::<f64>::zeros(n, n);
        let mut potential = vec![0.0; n];
        let mut dissipator = CMatrix::zeros(n, n);
        let steps = unit_vectors(dim);
        let origin = [0; MAX_DIM];

        // Nonzero kernel couplings `ξ → η` with their coefficient r(ξ,η) − r(0,η−ξ).
        let mut couplings = Vec::new();
        for (i, xi) in band.iter().enumerate() {
            for (j, eta) in band.iter().enumerate() {
                let diff = lattice::sub(eta, xi);
                if !lattice::is_even(diff) {
                    continue;
                }
                let c = kernel.r(xi, eta) - kernel.r(origin, diff);
                if c != ZERO {
                    couplings.push((i, j, lattice::half(diff), c));
                }
            }
        }

        for a_idx in 0..sites.n_sites() {
            let a = sites.site(a_idx);
            for (i, xi) in band.iter().enumerate() {
                let row = at(i, a_idx);
                for &e in &steps {
                    let target = lattice::add(xi, e);
                    if let Some(j) = band.index(target) {
                        hop[(row, at(j, a_idx))] += 1.0;
                        // τ_e shifts the orbit label by −e.
                        hop[(row, at(j, label(lattice::sub(a, e))))] -= 1.0;
                    }
                }
                potential[row] = field.value(sites.wrap(lattice::add(xi, a))) - field.value(a);
            }
            for &(i, j, half, c) in &couplings {
                dissipator[(at(i, a_idx), at(j, label(lattice::sub(a, half))))] += c;
            }
        }

        let gap = spectral_gap(kernel, default_grid(dim))?.conservative();
        let fs = Self { sites, band, params: *params, gap, hop, potential, dissipator };
        let residual = (&fs.dissipator * fs.stationary()).iter().map(|v| v.norm()).fold(0.0, f64::max);
        let scale = kernel.values().iter().map(|v| v.norm()).fold(1.0, f64::max);
        if residual > STATIONARY_TOL * scale {
            return Err(Error::KernelConstraintViolated { residual });
        }
        Ok(fs)
    }

    pub fn dim(&self) -> usize {
        self.sites.dim()
    }

    pub fn sites(&self) -> &LatticeBox {
        &self.sites
    }

    pub fn band(&self) -> &Window {
        &self.band
    }

    pub fn params(&self) -> &GeneratorParams {
        &self.params
    }

    /// Spectral gap of the kernel on the default momentum grid.
    pub fn gap(&self) -> f64 {
        self.gap
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    /// The hopping matrix `T̂₀`.
    pub fn hopping(&self) -> &DMatrix<f64> {
        &self.hop
    }

    /// Diagonal of `V̂`: `ω(ξ + a) − ω(a)`.
    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    /// `𝓛̂₀`, the gain-minus-loss operator (negative semidefinite part of the dynamics).
    pub fn dissipator(&self) -> &CMatrix {
        &self.dissipator
    }

    /// `𝓐₀ = u T̂₀ + λ V̂`.
    pub fn hamiltonian_part(&self) -> DMatrix<f64> {
        let mut a = &self.hop * self.params.u;
        for (k, v) in self.potential.iter().enumerate() {
            a[(k, k)] += self.params.lambda * v;
        }
        a
    }

    /// `𝓖₀ = i𝓐₀ − g𝓛̂₀`, so that the fiber state obeys `∂ₜf = −𝓖₀ f`.
    pub fn generator(&self) -> CMatrix {
        let a = self.hamiltonian_part();
        CMatrix::from_fn(self.len(), self.len(), |r, c| C64::new(0.0, a[(r, c)]) - self.dissipator[(r, c)] * self.params.g)
    }

    fn index(&self, xi: Coord, a_idx: usize) -> Option<usize> {
        self.band.index(xi).map(|i| a_idx * self.band.len() + i)
    }

    /// `δ₀ ⊗ 1`.
    pub fn stationary(&self) -> CVector {
        let mut v = CVector::zeros(self.len());
        for a in 0..self.sites.n_sites() {
            v[self.index([0; MAX_DIM], a).expect("origin is in the band")] = ONE;
        }
        v
    }

    /// `(δ_{e} − δ_{−e}) ⊗ 1` along `axis`.
    pub fn current(&self, axis: usize) -> CVector {
        let mut e = [0; MAX_DIM];
        e[axis] = 1;
        let mut v = CVector::zeros(self.len());
        for a in 0..self.sites.n_sites() {
            if let Some(k) = self.index(e, a) {
                v[k] = ONE;
            }
            if let Some(k) = self.index(lattice::neg(e), a) {
                v[k] = -ONE;
            }
        }
        v
    }

    /// Inner product with the orbit average as the disorder measure.
    pub fn inner(&self, f: &CVector, h: &CVector) -> C64 {
        f.dotc(h) / self.sites.n_sites() as f64
    }

    /// `‖𝓖₀(δ₀⊗1)‖` and `‖𝓖₀†(δ₀⊗1)‖` in the orbit-averaged norm.
    pub fn stationary_defect(&self) -> (f64, f64) {
        let g = self.generator();
        let s = self.stationary();
        let norm = |v: CVector| self.inner(&v, &v).re.sqrt();
        (norm(&g * &s), norm(g.adjoint() * &s))
    }

    /// Spectral norm of `𝓖₀`.
    pub fn generator_norm(&self) -> f64 {
        dense_spectral_norm(&self.generator())
    }

    /// Spectral norm of the real symmetric `𝓐₀`.
    pub fn hamiltonian_norm(&self) -> f64 {
        symmetric_spectral_radius(&self.hamiltonian_part())
    }
}

/// Outcome of the `η → 0` resolvent computation on one fiber space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventReport {
    /// The projected-operator value, with the Richardson gap as its uncertainty.
    pub estimate: DiffusionEstimate,
    pub etas: Vec<f64>,
    /// `2u²⟨φ₁, (η + 𝓖₀)⁻¹ φ₁⟩` as `[re, im]` for each `η`.
    pub values: Vec<[f64; 2]>,
    /// Polynomial extrapolation of the last three `η` values.
    pub richardson: f64,
    /// `2u²⟨φ₁, (Π𝓖₀Π)⁻¹ φ₁⟩`.
    pub projected: f64,
    /// Whether successive differences shrink over the last three `η`.
    pub stabilizing: bool,
    /// Smallest eigenvalue of `Re(Π𝓖₀Π)` on the range of `Π`.
    pub min_dissipation: f64,
    pub generator_norm: f64,
    pub hamiltonian_norm: f64,
    /// Dimension of the range of `Π`.
    pub projector_rank: usize,
    /// `‖(1 − Π)φ₁‖`, zero when the current lies in the range of `Π`.
    pub current_leak: f64,
}

/// Resolvent diffusion matrix `D_ij = 2u²⟨φ_i, (η + 𝓖₀)⁻¹ φ_j⟩` in the limit `η → 0`.
///
/// The limit is taken twice: by extrapolating a decreasing `η` sequence, and
/// directly through the projected operator `Π𝓖₀Π` with `Π` the projector onto
/// the kernel of the `ξ ≠ 0 → ξ = 0` hopping block.
pub fn resolvent_diffusion(fs: &FiberSpace, etas: &[f64]) -> Result<ResolventReport> {
    if etas.len() < 3 || etas.windows(2).any(|w| !(w[1] < w[0])) || etas.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::Precondition("eta list must hold at least three decreasing positive values".into()));
    }
    if etas[0] / etas[etas.len() - 1] < 100.0 {
        return Err(Error::Precondition("eta list must span two decades".into()));
    }
    let dim = fs.dim();
    let n = fs.len();
    let u2 = 2.0 * fs.params.u * fs.params.u;
    let g = fs.generator();
    let phis: Vec<CVector> = (0..dim).map(|i| fs.current(i)).collect();
    let rhs = CMatrix::from_fn(n, dim, |r, c| phis[c][r]);

    let mut per_eta: Vec<Vec<Vec<C64>>> = Vec::with_capacity(etas.len());
    let mut worst_residual: f64 = 0.0;
    for &eta in etas {
        let mut m = g.clone();
        for k in 0..n {
            m[(k, k)] += eta;
        }
        let (x, residual) = solve_many(&m, &rhs)?;
        worst_residual = worst_residual.max(residual);
        per_eta.push(
            (0..dim)
                .map(|i| (0..dim).map(|j| fs.inner(&phis[i], &x.column(j).into_owned()) * u2).collect())
                .collect(),
        );
    }
    let last: Vec<f64> = etas[etas.len() - 3..].to_vec();
    let rich = |i: usize, j: usize| {
        let ys: Vec<C64> = per_eta[per_eta.len() - 3..].iter().map(|v| v[i][j]).collect();
        extrapolate_to_zero(&last, &ys)
    };
    let tail: Vec<C64> = per_eta[per_eta.len() - 3..].iter().map(|v| v[0][0]).collect();
    let stabilizing = (tail[2] - tail[1]).norm() <= (tail[1] - tail[0]).norm();

    let gnorm = fs.generator_norm();
    let projected = projected_resolvent(fs, &g, &phis, gnorm)?;
    let c = fs.gap;
    let gg = fs.params.g;
    let mut est = DiffusionEstimate::new(Method::Resolvent, dim, Echo { eta: Some(etas[etas.len() - 1]), ..Echo::of(&fs.params) });
    let mut max_imag: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let p = projected.values[i][j];
            est.matrix[i][j] = p.re;
            est.stderr[i][j] = (rich(i, j) - p).norm().max(worst_residual.max(projected.residual) * p.norm());
            max_imag = max_imag.max(p.im.abs());
        }
    }
    est.residual = Some(worst_residual.max(projected.residual));
    // Coercivity gives ⟨φ, (g𝓚)⁻¹φ⟩ ≤ ‖φ‖²/(cg), and each current vector has
    // ‖φ‖² = 2; the disorder-free closed form attains this value.
    let phi_sq = 2.0;
    est.bounds = Some(Bounds { lower: 4.0 * gg * fs.params.u.powi(2) * c / (gnorm * gnorm), upper: phi_sq * u2 / (c * gg) });
    est.diagnostics.insert("imag".into(), max_imag);
    est.diagnostics.insert("richardson".into(), rich(0, 0).re);
    est.diagnostics.insert("gap".into(), c);
    est.diagnostics.insert("min_dissipation".into(), projected.min_dissipation);

    Ok(ResolventReport {
        richardson: rich(0, 0).re,
        projected: projected.values[0][0].re,
        values: per_eta.iter().map(|v| [v[0][0].re, v[0][0].im]).collect(),
        etas: etas.to_vec(),
        stabilizing,
        min_dissipation: projected.min_dissipation,
        generator_norm: gnorm,
        hamiltonian_norm: fs.hamiltonian_norm(),
        projector_rank: projected.rank,
        current_leak: projected.leak,
        estimate: est,
    })
}

struct Projected {
    values: Vec<Vec<C64>>,
    residual: f64,
    min_dissipation: f64,
    rank: usize,
    leak: f64,
}

/// `2u²⟨φ_i, (Π𝓖₀Π)⁻¹ φ_j⟩` on the subspace `ξ ≠ 0`.
fn projected_resolvent(fs: &FiberSpace, g: &CMatrix, phis: &[CVector], gnorm: f64) -> Result<Projected> {
    let nb = fs.band.len();
    let origin = fs.band.index([0; MAX_DIM]).expect("origin is in the band");
    let n = fs.len();
    let outer: Vec<usize> = (0..n).filter(|k| k % nb != origin).collect();
    let inner: Vec<usize> = (0..n).filter(|k| k % nb == origin).collect();
    let m = outer.len();

    // Block of T̂₀ mapping ξ ≠ 0 into ξ = 0; its row space is the complement of ran Π.
    let block = DMatrix::<f64>::from_fn(inner.len(), m, |r, c| fs.hop[(inner[r], outer[c])]);
    let hop_norm = symmetric_spectral_radius(&fs.hop);
    let svd = block.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&k| svd.singular_values[k] > RANK_TOL * hop_norm).collect();
    let w = DMatrix::<f64>::from_fn(m, keep.len(), |r, c| v_t[(keep[c], r)]).map(|v| C64::new(v, 0.0));
    let wt = w.adjoint();

    let gq = CMatrix::from_fn(m, m, |r, c| g[(outer[r], outer[c])]);
    // Π𝓖Π with Π = 1 − WW†, expanded to avoid dense m×m projector products.
    let gw = &gq * &w;
    let wtg = &wt * &gq;
    let wtgw = &wt * &gw;
    let pgp = &gq - &w * &wtg - &gw * &wt + &w * (&wtgw * &wt);
    let complement = &w * &wt;

    let rank = m - keep.len();
    let shift = gnorm + 1.0;
    let herm = hermitian_part(&pgp) + &complement * C64::new(shift, 0.0);
    let min_dissipation = hermitian_eigenvalues(&herm).into_iter().fold(f64::INFINITY, f64::min);
    let bound = 0.5 * fs.gap * fs.params.g;
    if rank > 0 && min_dissipation < bound {
        return Err(Error::IllConditioned { min_eig: min_dissipation, bound });
    }

    let system = &pgp + &complement;
    let u2 = 2.0 * fs.params.u * fs.params.u;
    let restricted: Vec<CVector> = phis.iter().map(|p| CVector::from_iterator(m, outer.iter().map(|&k| p[k]))).collect();
    let leak = restricted.iter().map(|p| (&wt * p).norm()).fold(0.0, f64::max) / (fs.sites.n_sites() as f64).sqrt();
    let rhs = CMatrix::from_fn(m, restricted.len(), |r, c| restricted[c][r]);
    let (sol, residual) = solve_many(&system, &rhs)?;
    let xs: Vec<CVector> = (0..restricted.len()).map(|j| sol.column(j).into_owned()).collect();
    let scale = 1.0 / fs.sites.n_sites() as f64;
    let values = restricted
        .iter()
        .map(|pi| xs.iter().map(|xj| pi.dotc(xj) * scale * u2).collect())
        .collect();
    Ok(Projected { values, residual, min_dissipation, rank, leak })
}

/// Resolvent estimate averaged over independent periodic disorder configurations.
///
/// The error bar is the configuration-to-configuration spread, combined with the
/// largest per-configuration solver uncertainty.
pub fn resolvent_over_configs(
    sites: LatticeBox,
    params: &GeneratorParams,
    kernel: &GainKernel,
    dist: &Distribution,
    seeds: &[u64],
    band_radius: usize,
    etas: &[f64],
) -> Result<(DiffusionEstimate, Vec<ResolventReport>)> {
    use rayon::prelude::*;
    if seeds.is_empty() {
        return Err(Error::Precondition("no seeds given".into()));
    }
    let reports = seeds
        .par_iter()
        .map(|&seed| {
            let field = DisorderField::sample(sites, dist, seed)?;
            let fs = FiberSpace::build(sites, params, kernel, &field, band_radius)?;
            resolvent_diffusion(&fs, etas)
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = sites.dim();
    let mut est = reports[0].estimate.clone();
    for i in 0..dim {
        for j in 0..dim {
            let vals: Vec<f64> = reports.iter().map(|r| r.estimate.matrix[i][j]).collect();
            let (m, se) = mean_stderr(&vals);
            let solver = reports.iter().map(|r| r.estimate.stderr[i][j]).fold(0.0, f64::max);
            est.matrix[i][j] = m;
            est.stderr[i][j] = (se * se + solver * solver).sqrt();
        }
    }
    let lower = reports.iter().filter_map(|r| r.estimate.bounds.map(|b| b.lower)).fold(f64::INFINITY, f64::min);
    let upper = reports[0].estimate.bounds.map_or(f64::INFINITY, |b| b.upper);
    est.bounds = Some(Bounds { lower, upper });
    est.diagnostics.insert("configurations".into(), seeds.len() as f64);
    Ok((est, reports))
}

/// Disorder-free diffusion `D = 2u²⟨φ, (g𝓚)⁻¹ φ⟩` with `𝓚 = −𝓛̂` on `ξ ≠ 0`.
///
/// Without disorder the orbit is a single point, so only the `ξ` window of
/// radius `band_radius` enters.
pub fn closed_form_ballistic(kernel: &GainKernel, u: f64, g: f64, band_radius: usize) -> Result<DiffusionEstimate> {
    if !(g > 0.0) {
        return Err(Error::Precondition("closed form needs g > 0".into()));
    }
    let dim = kernel.dim();
    let window = Window::new(dim, band_radius);
    let origin = [0; MAX_DIM];
    let offsets: Vec<Coord> = window.iter().filter(|&x| x != origin).collect();
    let m = offsets.len();
    let k = CMatrix::from_fn(m, m, |r, c| {
        let (xi, eta) = (offsets[r], offsets[c]);
        (kernel.r(origin, lattice::sub(eta, xi)) - kernel.r(xi, eta)) * g
    });
    let phis: Vec<CVector> = (0..dim)
        .map(|axis| {
            CVector::from_iterator(
                m,
                offsets.iter().map(|x| {
                    let mut e = [0; MAX_DIM];
                    e[axis] = 1;
                    if *x == e {
                        ONE
                    } else if *x == lattice::neg(e) {
                        -ONE
                    } else {
                        ZERO
                    }
                }),
            )
        })
        .collect();
    let mut est = DiffusionEstimate::new(Method::ClosedForm, dim, Echo { u, g, ..Echo::default() });
    let mut residual: f64 = 0.0;
    let mut imag: f64 = 0.0;
    let mut xs = Vec::with_capacity(dim);
    for p in &phis {
        let (x, r) = crate::linalg::solve(&k, p).map_err(|_| Error::SingularLindbladian { residual: f64::INFINITY })?;
        if r > SOLVE_TOL {
            return Err(Error::SingularLindbladian { residual: r });
        }
        residual = residual.max(r);
        xs.push(x);
    }
    for i in 0..dim {
        for j in 0..dim {
            let v = phis[i].dotc(&xs[j]) * (2.0 * u * u);
            est.matrix[i][j] = v.re;
            imag = imag.max(v.im.abs());
        }
    }
    let c = spectral_gap(kernel, default_grid(dim))?.conservative();
    est.residual = Some(residual);
    est.bounds = Some(Bounds { lower: 0.0, upper: 4.0 * u * u / (c * g) });
    est.diagnostics.insert("imag".into(), imag);
    est.diagnostics.insert("gap".into(), c);
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{abel_integral, single_run, MsdSetup};
    use crate::evolution::EvolveOptions;
    use crate::kernel::{build_kernel, presets};

    fn cosine(dim: usize) -> GainKernel {
        build_kernel(&presets::cosine(dim, 16), 2).unwrap()
    }

    fn space(dim: usize, radius: usize, params: GeneratorParams, band: usize, seed: u64) -> FiberSpace {
        let sites = LatticeBox::periodic(dim, radius).unwrap();
        let field = DisorderField::sample(sites, &Distribution::default(), seed).unwrap();
        FiberSpace::build(sites, &params, &cosine(dim), &field, band).unwrap()
    }

    #[test]
    fn structural_identities() {
        let fs = space(1, 3, GeneratorParams::new(1.0, 2.0, 0.4).unwrap(), 4, 7);
        let a = fs.hamiltonian_part();
        assert!((&a - a.transpose()).amax() < 1e-12);
        let (fwd, adj) = fs.stationary_defect();
        assert!(fwd < 1e-12 && adj < 1e-12, "{fwd} {adj}");
        let h = fs.current(0);
        assert!((fs.inner(&h, &h).re - 2.0).abs() < 1e-12);
    }

    #[test]
    fn no_disorder_means_no_potential() {
        let fs = space(2, 2, GeneratorParams::new(1.0, 0.0, 0.4).unwrap(), 2, 1);
        assert!(fs.hamiltonian_part().iter().zip(fs.hopping().iter()).all(|(a, t)| a == t));
        let v: Vec<f64> = fs.potential().iter().map(|v| v * fs.params().lambda).collect();
        assert!(v.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn defective_kernel_is_rejected() {
        let sites = LatticeBox::periodic(1, 2).unwrap();
        let field = DisorderField::zero(sites);
        // A gain term at ξ = 0 with no matching loss breaks the sum rule.
        let bad = GainKernel::from_fn(1, 2, |xi, eta| if xi[0] == 2 && eta[0] == 0 { C64::new(0.3, 0.0) } else { ZERO });
        let err = FiberSpace::build(sites, &GeneratorParams::new(1.0, 0.0, 0.2).unwrap(), &bad, &field, 3).unwrap_err();
        assert!(matches!(err, Error::KernelConstraintViolated { .. }), "{err}");
    }

    /// The orbit-averaged spreading computed in real space must match the fiber
    /// formula `M(t) = 2u² ∫₀ᵗ (t − r) ⟨φ, e^{−r𝓖₀} φ⟩ dr`.
    #[test]
    fn fiber_reproduces_translation_averaged_spreading() {
        let params = GeneratorParams::new(1.0, 1.5, 0.5).unwrap();
        let period = LatticeBox::periodic(1, 2).unwrap();
        let omega = DisorderField::sample(period, &Distribution::default(), 11).unwrap();
        let fs = FiberSpace::build(period, &params, &cosine(1), &omega, 12).unwrap();
        let t = 1.5;

        // Augmented exponential: the top-right block of exp(t·[[−G, I, 0], [0, 0, I], [0, 0, 0]]).
        let n = fs.len();
        let g = fs.generator();
        let mut big = CMatrix::zeros(3 * n, 3 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&(-&g));
        for k in 0..n {
            big[(k, n + k)] = ONE;
            big[(n + k, 2 * n + k)] = ONE;
        }
        let e = (big * C64::new(t, 0.0)).exp();
        let block = e.view((0, 2 * n), (n, n)).into_owned();
        let phi = fs.current(0);
        let fiber = (fs.inner(&phi, &(block * &phi)) * 2.0).re;

        let lattice = LatticeBox::truncated(1, 16).unwrap();
        let kernel = cosine(1);
        let setup = MsdSetup { lattice, coherence: None, evolve: EvolveOptions { tol: 1e-11, ..Default::default() } };
        let side = period.side() as i64;
        let mut total = 0.0;
        for a in 0..side {
            let values = lattice.sites().map(|x| omega.value(period.wrap([x[0] + a, 0]))).collect();
            let field = DisorderField::from_values(lattice, values).unwrap();
            let curve = single_run(&params, &kernel, &field, &[0.0, t], &setup).unwrap();
            total += curve[1][0][0];
        }
        let real_space = total / side as f64;
        assert!((fiber - real_space).abs() < 1e-6 * real_space, "fiber {fiber} vs real space {real_space}");
    }

    #[test]
    fn laplace_identity_on_the_fiber() {
        // η²∫e^{−ηt}M(t)dt computed from fiber trajectories equals the resolvent value.
        let params = GeneratorParams::new(1.0, 1.0, 0.8).unwrap();
        let fs = space(1, 2, params, 6, 3);
        let eta = 1.0;
        let g = fs.generator();
        let phi = fs.current(0);
        let (x, _) = crate::linalg::solve(&(g.clone() + CMatrix::identity(fs.len(), fs.len()) * C64::new(eta, 0.0)), &phi).unwrap();
        let resolvent = (fs.inner(&phi, &x) * 2.0).re;
        // M(t) from the same augmented exponential as above, sampled on a grid.
        let n = fs.len();
        let mut big = CMatrix::zeros(3 * n, 3 * n);
        big.view_mut((0, 0), (n, n)).copy_from(&(-&g));
        for k in 0..n {
            big[(k, n + k)] = ONE;
            big[(n + k, 2 * n + k)] = ONE;
        }
        let step = (big * C64::new(0.02, 0.0)).exp();
        let mut prop = CMatrix::identity(3 * n, 3 * n);
        let mut times = Vec::new();
        let mut m = Vec::new();
        for k in 0..=1500 {
            times.push(0.02 * k as f64);
            let block = prop.view((0, 2 * n), (n, n)).into_owned();
            m.push((fs.inner(&phi, &(block * &phi)) * 2.0).re);
            prop = &prop * &step;
        }
        let (abel, _) = abel_integral(&times, &m, eta);
        assert!((abel - resolvent).abs() < 1e-4 * resolvent, "{abel} vs {resolvent}");
    }

    #[test]
    fn ballistic_constant_cosine() {
        for g in [0.1, 1.0, 10.0] {
            let d = closed_form_ballistic(&cosine(1), 1.0, g, 8).unwrap();
            assert!((d.value() * g - 8.0).abs() < 1e-12, "{}", d.value() * g);
            assert!(d.diagnostics["imag"] < 1e-12);
        }
    }

    #[test]
    fn ballistic_constant_uniform() {
        let k = build_kernel(&presets::uniform(1, 16), 3).unwrap();
        let d = closed_form_ballistic(&k, 1.3, 0.5, 8).unwrap();
        assert!((d.value() - 4.0 * 1.3 * 1.3 / 0.5).abs() < 1e-10);
    }

    #[test]
    fn ballistic_boson_converges_in_window() {
        let k = build_kernel(&presets::boson(&Default::default()), 6).unwrap();
        let a = closed_form_ballistic(&k, 1.0, 1.0, 12).unwrap().value();
        let b = closed_form_ballistic(&k, 1.0, 1.0, 20).unwrap().value();
        assert!((a - b).abs() < 1e-6 * b, "{a} {b}");
        let c = spectral_gap(&k, 64).unwrap().value;
        assert!(b > 0.0 && b <= 4.0 / c * (1.0 + 1e-12));
    }

    #[test]
    fn resolvent_without_disorder_matches_closed_form() {
        let params = GeneratorParams::new(1.0, 0.0, 0.7).unwrap();
        let fs = space(1, 3, params, 6, 2);
        let etas: Vec<f64> = (0..8).map(|k| 0.5 * 0.5f64.powi(k)).collect();
        let rep = resolvent_diffusion(&fs, &etas).unwrap();
        let closed = closed_form_ballistic(&cosine(1), 1.0, 0.7, 6).unwrap().value();
        assert!((rep.projected - closed).abs() < 1e-8 * closed, "{} vs {closed}", rep.projected);
        assert!(rep.current_leak < 1e-10);
    }

    #[test]
    fn resolvent_with_disorder_is_consistent() {
        let params = GeneratorParams::new(1.0, 2.0, 0.5).unwrap();
        let fs = space(1, 4, params, 5, 9);
        let etas: Vec<f64> = (0..10).map(|k| 0.2 * 0.5f64.powi(k)).collect();
        let rep = resolvent_diffusion(&fs, &etas).unwrap();
        let b = rep.estimate.bounds.unwrap();
        assert!(rep.projected > b.lower && rep.projected < b.upper, "{} not in {:?}", rep.projected, b);
        assert!((rep.richardson - rep.projected).abs() < 1e-6 * rep.projected, "{} vs {}", rep.richardson, rep.projected);
        assert!(rep.stabilizing);
        assert!(rep.estimate.diagnostics["imag"] < 1e-10);
        assert!(rep.min_dissipation >= 0.5 * fs.gap() * 0.5);
    }

    #[test]
    fn resolvent_rejects_bad_eta_lists() {
        let fs = space(1, 2, GeneratorParams::new(1.0, 1.0, 0.5).unwrap(), 3, 1);
        assert!(resolvent_diffusion(&fs, &[0.1, 0.05]).is_err());
        assert!(resolvent_diffusion(&fs, &[0.1, 0.05, 0.02]).is_err());
        assert!(resolvent_diffusion(&fs, &[0.1, 0.2, 0.0001]).is_err());
    }
}
