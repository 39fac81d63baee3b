//! Time evolution under hopping, disorder and the gain/loss dissipator.

pub mod dense;
mod integrator;
mod velocity;

pub use integrator::{integrate, IntegratorStats, StepControl};
pub use velocity::{group_velocity_check, growth_rate, CheckResult};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::DisorderField;
use crate::error::{Error, Result};
use crate::kernel::GainKernel;
use crate::lattice::{self, Boundary, Coord, LatticeBox, Window, MAX_DIM};
use crate::linalg::C64;
use crate::state::DensityState;

/// Hopping amplitude `u`, disorder strength `λ` and bath coupling `g`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub u: f64,
    pub lambda: f64,
    pub g: f64,
}

impl GeneratorParams {
    pub fn new(u: f64, lambda: f64, g: f64) -> Result<Self> {
        let p = Self { u, lambda, g };
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.u.is_finite() && self.lambda.is_finite() && self.g.is_finite()) {
            return Err(Error::Precondition("generator parameters must be finite".into()));
        }
        if self.lambda < 0.0 || self.g < 0.0 {
            return Err(Error::Precondition("lambda and g must be non-negative".into()));
        }
        Ok(())
    }
}

/// Largest `h · (spectral radius bound)` allowed per integration step.
pub const STABLE_STEP: f64 = 0.9;

/// Entries below this modulus are dropped when compiling the kernel.
const KERNEL_CUTOFF: f64 = 1e-14;

#[derive(Clone, Copy, Debug)]
struct Term {
    shift: Coord,
    flat: isize,
    target: usize,
    coeff: C64,
}

/// The right-hand side of the master equation compiled for one state layout.
#[derive(Clone, Debug)]
pub struct Generator {
    lattice: LatticeBox,
    band: Window,
    params: GeneratorParams,
    sites: Vec<Coord>,
    /// `−iλ(ω(x) − ω(y))` per stored entry, or `None` when `y` is outside the box.
    diagonal: Vec<Option<C64>>,
    terms: Vec<Vec<Term>>,
}

impl Generator {
    /// Compiles the generator for states on `lattice` with coherence band radius `coherence`.
    pub fn new(lattice: LatticeBox, coherence: Option<usize>, params: &GeneratorParams, field: &DisorderField, kernel: &GainKernel) -> Result<Self> {
        params.check()?;
        if field.lattice() != &lattice {
            return Err(Error::BoxMismatch);
        }
        if lattice.boundary() != Boundary::Truncated {
            return Err(Error::PeriodicEvolution);
        }
        if kernel.dim() != lattice.dim() {
            return Err(Error::BoxMismatch);
        }
        let band = DensityState::zeros(lattice, coherence).band().to_owned();
        let dim = lattice.dim();
        let side = lattice.side() as isize;
        let flat = |s: Coord| -> isize {
            let mut f = 0isize;
            for &c in s.iter().take(dim) {
                f = f * side + c as isize;
            }
            f
        };
        let sites: Vec<Coord> = lattice.sites().collect();

        let mut diagonal = Vec::with_capacity(sites.len() * band.len());
        for &x in &sites {
            for w in 0..band.len() {
                let y = lattice::sub(x, band.coord(w));
                diagonal.push(
                    lattice
                        .index(y)
                        .map(|_| C64::new(0.0, -params.lambda * (field.value(x) - field.value(y)))),
                );
            }
        }

        let origin = [0; MAX_DIM];
        let gain = kernel.nonzero_entries(KERNEL_CUTOFF);
        let loss: Vec<(Coord, C64)> = kernel
            .window()
            .iter()
            .filter_map(|z| {
                let v = kernel.r(origin, z);
                (v.norm() > KERNEL_CUTOFF && lattice::is_even(z)).then_some((z, v))
            })
            .collect();
        let units = lattice::unit_vectors(dim);
        let mut terms = Vec::with_capacity(band.len());
        for w in 0..band.len() {
            let xi = band.coord(w);
            let mut list: Vec<Term> = Vec::new();
            let mut push = |shift: Coord, rel: Coord, coeff: C64| {
                if coeff == C64::new(0.0, 0.0) {
                    return;
                }
                if let Some(target) = band.index(rel) {
                    if let Some(t) = list.iter_mut().find(|t| t.shift == shift && t.target == target) {
                        t.coeff += coeff;
                    } else {
                        list.push(Term { shift, flat: flat(shift), target, coeff });
                    }
                }
            };
            for &e in &units {
                push(e, lattice::add(xi, e), C64::new(0.0, -params.u));
                push(origin, lattice::sub(xi, e), C64::new(0.0, params.u));
            }
            if params.g != 0.0 {
                for &(a, eta, v) in &gain {
                    if a == xi {
                        let d = lattice::sub(eta, xi);
                        if lattice::is_even(d) {
                            push(lattice::half(d), eta, v * params.g);
                        }
                    }
                }
                for &(z, v) in &loss {
                    push(lattice::half(z), lattice::add(xi, z), -v * params.g);
                }
            }
            list.retain(|t| t.coeff != C64::new(0.0, 0.0));
            terms.push(list);
        }
        Ok(Self { lattice, band, params: *params, sites, diagonal, terms })
    }

    /// Compiles the generator for the layout of `state`.
    pub fn for_state(state: &DensityState, params: &GeneratorParams, field: &DisorderField, kernel: &GainKernel) -> Result<Self> {
        Self::new(*state.lattice(), Some(state.coherence()), params, field, kernel)
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn band(&self) -> &Window {
        &self.band
    }

    pub fn params(&self) -> &GeneratorParams {
        &self.params
    }

    /// Length of the raw state vector.
    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    /// Writes the time derivative of `input` into `out` (raw storage layout).
    /// Gershgorin bound on the spectral radius of the compiled operator.
    pub fn spectral_radius_bound(&self) -> f64 {
        let diag = self.diagonal.iter().flatten().map(|d| d.norm()).fold(0.0, f64::max);
        let off = self.terms.iter().map(|ts| ts.iter().map(|t| t.coeff.norm()).sum::<f64>()).fold(0.0, f64::max);
        diag + off
    }

    pub fn apply_into(&self, input: &[C64], out: &mut [C64]) {
        let bl = self.band.len();
        let r = self.lattice.radius() as i64;
        let dim = self.lattice.dim();
        let row = |(xi, out_row): (usize, &mut [C64])| {
            let x = self.sites[xi];
            for (w, o) in out_row.iter_mut().enumerate() {
                let k = xi * bl + w;
                let Some(diag) = self.diagonal[k] else {
                    *o = C64::new(0.0, 0.0);
                    continue;
                };
                let mut acc = diag * input[k];
                for t in &self.terms[w] {
                    let inside = (0..dim).all(|a| (x[a] + t.shift[a]).abs() <= r);
                    if inside {
                        let src = (xi as isize + t.flat) as usize * bl + t.target;
                        acc += t.coeff * input[src];
                    }
                }
                *o = acc;
            }
        };
        if out.len() >= 1 << 16 {
            out.par_chunks_mut(bl).enumerate().for_each(row);
        } else {
            out.chunks_mut(bl).enumerate().for_each(row);
        }
    }

    /// The time derivative of `state`.
    pub fn apply(&self, state: &DensityState) -> Result<DensityState> {
        if state.lattice() != &self.lattice || state.band() != &self.band {
            return Err(Error::BoxMismatch);
        }
        let mut out = vec![C64::new(0.0, 0.0); state.data().len()];
        self.apply_into(state.data(), &mut out);
        Ok(state.with_data(out))
    }
}

/// Evaluates the master-equation right-hand side at `state`.
pub fn apply_generator(state: &DensityState, params: &GeneratorParams, field: &DisorderField, kernel: &GainKernel) -> Result<DensityState> {
    Generator::for_state(state, params, field, kernel)?.apply(state)
}

/// Settings for [`evolve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveOptions {
    /// Local error bound per step.
    pub tol: f64,
    /// Largest tolerated `Σ|ρ|²` near the box faces.
    pub boundary_tol: f64,
    /// Thickness of the face shell used for the boundary check.
    pub boundary_depth: usize,
    /// Largest tolerated `Σ|ρ|²` on the outermost retained coherence shell.
    ///
    /// Position moments only see distant coherences through long hopping
    /// chains, so they typically converge in the band well before this mass
    /// is small. Loosen it only together with a band-convergence check.
    pub coherence_tol: f64,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        Self { tol: 1e-9, boundary_tol: 1e-8, boundary_depth: 3, coherence_tol: 1e-8 }
    }
}

/// States recorded on a time grid.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityState>,
    pub stats: IntegratorStats,
}

/// Checks that truncation has not become visible in `state`.
pub fn check_truncation(state: &DensityState, t: f64, opts: &EvolveOptions) -> Result<()> {
    let mass = state.boundary_mass(opts.boundary_depth);
    if mass > opts.boundary_tol {
        return Err(Error::BoundaryMassExceeded { mass, tol: opts.boundary_tol, t });
    }
    let edge = state.band_edge_mass();
    if edge > opts.coherence_tol {
        return Err(Error::CoherenceWindowExceeded { mass: edge, tol: opts.coherence_tol, t });
    }
    Ok(())
}

/// Integrates from `state0`, handing each grid state to `observe` instead of storing it.
pub fn evolve_observed(
    generator: &Generator,
    state0: &DensityState,
    times: &[f64],
    opts: &EvolveOptions,
    mut observe: impl FnMut(usize, f64, &DensityState) -> Result<()>,
) -> Result<IntegratorStats> {
    if state0.lattice() != generator.lattice() || state0.band() != generator.band() {
        return Err(Error::BoxMismatch);
    }
    if times.first() != Some(&0.0) {
        return Err(Error::Precondition("time grid must start at 0".into()));
    }
    // Dormand–Prince amplifies purely oscillatory modes once h·|μ| exceeds
    // about 1. The error control only notices after round-off has grown to
    // the tolerance, so the step is capped below that limit up front.
    let bound = generator.spectral_radius_bound();
    let h_max = if bound > 0.0 { STABLE_STEP / bound } else { f64::INFINITY };
    let ctl = StepControl { tol: opts.tol, h_max, ..StepControl::default() };
    let template = state0.clone();
    integrate(|y, dy| generator.apply_into(y, dy), state0.data().to_vec(), times, &ctl, |k, t, y| {
        let s = template.with_data(y.to_vec());
        check_truncation(&s, t, opts)?;
        observe(k, t, &s)
    })
}

/// Integrates the master equation and records the state at every grid time.
pub fn evolve(
    state0: &DensityState,
    params: &GeneratorParams,
    field: &DisorderField,
    kernel: &GainKernel,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let generator = Generator::for_state(state0, params, field, kernel)?;
    let mut states = Vec::with_capacity(times.len());
    let stats = evolve_observed(&generator, state0, times, opts, |_, _, s| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(Trajectory { times: times.to_vec(), states, stats })
}

/// Box radius that keeps a point state's spread inside the box for time `t_max`.
///
/// Uses the propagation speed `4d·u + g` plus a fixed margin.
pub fn auto_radius(dim: usize, params: &GeneratorParams, t_max: f64, margin: usize) -> usize {
    let v = 4.0 * dim as f64 * params.u.abs() + params.g;
    (v * t_max).ceil() as usize + margin
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::Distribution;
    use crate::kernel::{build_kernel, presets};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn cosine(dim: usize) -> GainKernel {
        build_kernel(&presets::cosine(dim, 16), 6).unwrap()
    }

    fn random_state(lattice: LatticeBox, coherence: Option<usize>, seed: u64, hermitian: bool) -> DensityState {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = DensityState::zeros(lattice, coherence);
        let pairs: Vec<(Coord, Coord)> = s.entries().map(|(x, y, _)| (x, y)).collect();
        for (x, y) in pairs {
            let v = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            s.set(x, y, v).unwrap();
        }
        if hermitian {
            let pairs: Vec<(Coord, Coord, C64)> = s.entries().collect();
            for (x, y, v) in pairs {
                if lattice::linf_norm(lattice::sub(x, y)) <= s.coherence() as i64 {
                    let avg = 0.5 * (v + s.get(y, x).conj());
                    s.set(x, y, avg).unwrap();
                    s.set(y, x, avg.conj()).unwrap();
                }
            }
        }
        s
    }

    #[test]
    fn zero_parameters_give_zero() {
        let b = LatticeBox::truncated(1, 3).unwrap();
        let s = random_state(b, None, 1, true);
        let f = DisorderField::sample(b, &Distribution::default(), 1).unwrap();
        let out = apply_generator(&s, &GeneratorParams::new(0.0, 0.0, 0.0).unwrap(), &f, &cosine(1)).unwrap();
        assert!(out.data().iter().all(|v| *v == C64::new(0.0, 0.0)));
    }

    #[test]
    fn hopping_from_point_state() {
        let b = LatticeBox::truncated(1, 3).unwrap();
        let s = DensityState::new_point_state(b);
        let f = DisorderField::zero(b);
        let out = apply_generator(&s, &GeneratorParams::new(1.0, 0.0, 0.0).unwrap(), &f, &cosine(1)).unwrap();
        // ρ̇(x, y) = −i[ρ(x+e, y) − ρ(x, y+e)] summed over e: only (±1, 0) and (0, ±1) are hit.
        for (x, y, v) in out.entries() {
            let expect = match (x[0], y[0]) {
                (1, 0) | (-1, 0) => C64::new(0.0, -1.0),
                (0, 1) | (0, -1) => C64::new(0.0, 1.0),
                _ => C64::new(0.0, 0.0),
            };
            assert_eq!(v, expect, "({x:?},{y:?})");
        }
        // In centre/relative coordinates these are X = ±e with ξ = ±e.
        assert_eq!(out.get_center([1, 0], [1, 0]), C64::new(0.0, -1.0));
        assert_eq!(out.get_center([1, 0], [-1, 0]), C64::new(0.0, 1.0));
    }

    #[test]
    fn box_mismatch() {
        let b = LatticeBox::truncated(1, 3).unwrap();
        let f = DisorderField::zero(LatticeBox::truncated(1, 4).unwrap());
        let s = DensityState::new_point_state(b);
        assert!(matches!(apply_generator(&s, &GeneratorParams::new(1.0, 0.0, 0.0).unwrap(), &f, &cosine(1)), Err(Error::BoxMismatch)));
    }

    #[test]
    fn pure_dephasing_keeps_moduli() {
        let b = LatticeBox::truncated(1, 4).unwrap();
        let s = random_state(b, None, 5, true);
        let f = DisorderField::sample(b, &Distribution::default(), 3).unwrap();
        let p = GeneratorParams::new(0.0, 2.0, 0.0).unwrap();
        let traj = evolve(&s, &p, &f, &cosine(1), &[0.0, 1.0, 2.0], &EvolveOptions { boundary_tol: f64::INFINITY, coherence_tol: f64::INFINITY, ..Default::default() }).unwrap();
        for st in &traj.states {
            for ((_, _, a), (_, _, b)) in st.entries().zip(s.entries()) {
                assert!((a.norm() - b.norm()).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dissipation_contracts_fibers() {
        let b = LatticeBox::truncated(1, 4).unwrap();
        let s = random_state(b, None, 8, true);
        let f = DisorderField::zero(b);
        let p = GeneratorParams::new(0.0, 0.0, 0.7).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.3).collect();
        let traj = evolve(&s, &p, &f, &cosine(1), &times, &EvolveOptions { boundary_tol: f64::INFINITY, coherence_tol: f64::INFINITY, ..Default::default() }).unwrap();
        let norms: Vec<Vec<f64>> = traj.states.iter().map(|st| st.fiber_norms_sq().1).collect();
        for w in norms.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                assert!(*b <= *a + 1e-12);
            }
        }
    }

    #[test]
    fn boundary_mass_is_enforced() {
        let b = LatticeBox::truncated(1, 3).unwrap();
        let s = DensityState::new_point_state(b);
        let f = DisorderField::zero(b);
        let p = GeneratorParams::new(1.0, 0.0, 0.0).unwrap();
        let r = evolve(&s, &p, &f, &cosine(1), &[0.0, 3.0], &EvolveOptions::default());
        assert!(matches!(r, Err(Error::BoundaryMassExceeded { .. })));
    }

    #[test]
    fn narrow_band_is_enforced() {
        let b = LatticeBox::truncated(1, 8).unwrap();
        let s = DensityState::point_state_banded(b, Some(1));
        let f = DisorderField::zero(b);
        let p = GeneratorParams::new(1.0, 0.0, 0.0).unwrap();
        let r = evolve(&s, &p, &f, &cosine(1), &[0.0, 1.0], &EvolveOptions::default());
        assert!(matches!(r, Err(Error::CoherenceWindowExceeded { .. })));
        // The band check has its own tolerance, independent of the face check.
        let loose = EvolveOptions { coherence_tol: 1.0, ..EvolveOptions::default() };
        assert!(evolve(&s, &p, &f, &cosine(1), &[0.0, 1.0], &loose).is_ok());
    }

    #[test]
    fn periodic_boxes_are_rejected() {
        let b = LatticeBox::periodic(1, 3).unwrap();
        let f = DisorderField::zero(b);
        let r = Generator::new(b, None, &GeneratorParams::new(1.0, 0.0, 0.0).unwrap(), &f, &cosine(1));
        assert!(matches!(r, Err(Error::PeriodicEvolution)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn linear_and_trace_free(seed in 0u64..10_000, u in 0.0f64..2.0, lambda in 0.0f64..3.0, g in 0.0f64..2.0, dim in 1usize..=2) {
            let b = LatticeBox::truncated(dim, 2).unwrap();
            let f = DisorderField::sample(b, &Distribution::default(), seed).unwrap();
            let p = GeneratorParams::new(u, lambda, g).unwrap();
            let k = cosine(dim);
            let gen = Generator::new(b, None, &p, &f, &k).unwrap();
            let s1 = random_state(b, None, seed, true);
            let s2 = random_state(b, None, seed + 1, false);
            let (a, c) = (C64::new(0.3, -1.1), C64::new(-0.7, 0.2));
            let combo: Vec<C64> = s1.data().iter().zip(s2.data()).map(|(x, y)| a * x + c * y).collect();
            let lhs = gen.apply(&s1.with_data(combo)).unwrap();
            let r1 = gen.apply(&s1).unwrap();
            let r2 = gen.apply(&s2).unwrap();
            for ((l, x), y) in lhs.data().iter().zip(r1.data()).zip(r2.data()) {
                prop_assert!((l - (a * x + c * y)).norm() < 1e-12);
            }
            let tr: C64 = r1.entries().filter(|(x, y, _)| x == y).map(|e| e.2).sum();
            prop_assert!(tr.norm() < 1e-12);
            prop_assert!(r1.hermiticity_defect() < 1e-12);
        }
    }
}
