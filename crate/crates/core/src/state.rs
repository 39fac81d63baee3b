//! Density matrices stored in center/relative coordinates.
//!
//! An entry `⟨x|ρ|y⟩` is addressed either by the pair `(x, y)` or by
//! `X = x + y` and `ξ = x − y`. Storage is banded: for each site `x` the
//! offsets `ξ` in a cube of radius `coherence` are kept, so that a band
//! covering `2L` holds the complete matrix while a narrower band stores only
//! the coherences that survive dephasing.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::{self, Coord, LatticeBox, Window, MAX_DIM};

pub type C64 = Complex64;

/// Imaginary part tolerated in the trace.
pub const TRACE_IMAG_TOL: f64 = 1e-12;
/// Imaginary part tolerated in position moments, relative to their magnitude.
pub const MOMENT_IMAG_TOL: f64 = 1e-10;

/// A density matrix `ρ(X, ξ)` on a finite box.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    lattice: LatticeBox,
    band: Window,
    data: Vec<C64>,
}

impl DensityState {
    /// The zero state with coherences kept up to `|ξ|_∞ ≤ coherence`.
    ///
    /// `None` (or any value above `2L`) stores the full matrix.
    pub fn zeros(lattice: LatticeBox, coherence: Option<usize>) -> Self {
        let full = 2 * lattice.radius();
        let radius = coherence.map_or(full, |c| c.min(full));
        let band = Window::new(lattice.dim(), radius);
        let data = vec![C64::new(0.0, 0.0); lattice.n_sites() * band.len()];
        Self { lattice, band, data }
    }

    /// The pure state `|0⟩⟨0|` with full coherence storage.
    pub fn new_point_state(lattice: LatticeBox) -> Self {
        Self::point_state_banded(lattice, None)
    }

    /// The pure state `|0⟩⟨0|` with a limited coherence band.
    pub fn point_state_banded(lattice: LatticeBox, coherence: Option<usize>) -> Self {
        let mut s = Self::zeros(lattice, coherence);
        s.set([0; MAX_DIM], [0; MAX_DIM], C64::new(1.0, 0.0))
            .expect("origin is always stored");
        s
    }

    /// Builds a full-band state from the matrix `⟨x|ρ|y⟩` indexed by site order.
    pub fn from_matrix(lattice: LatticeBox, m: &DMatrix<C64>) -> Result<Self> {
        let n = lattice.n_sites();
        if m.nrows() != n || m.ncols() != n {
            return Err(Error::InvalidBox(format!(
                "matrix is {}x{}, box has {n} sites",
                m.nrows(),
                m.ncols()
            )));
        }
        let mut s = Self::zeros(lattice, None);
        for i in 0..n {
            for j in 0..n {
                s.set(lattice.site(i), lattice.site(j), m[(i, j)])?;
            }
        }
        Ok(s)
    }

    /// The matrix `⟨x|ρ|y⟩` in site order; entries outside the band are zero.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let n = self.lattice.n_sites();
        DMatrix::from_fn(n, n, |i, j| self.get(self.lattice.site(i), self.lattice.site(j)))
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    /// The window of stored relative offsets `ξ`.
    pub fn band(&self) -> &Window {
        &self.band
    }

    /// Radius of the stored coherence band.
    pub fn coherence(&self) -> usize {
        self.band.radius()
    }

    /// Raw storage, laid out as `data[site_index(x) * band.len() + band.index(x − y)]`.
    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    /// Wraps raw storage produced by [`DensityState::data`] on the same layout.
    pub fn with_data(&self, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), self.data.len());
        Self { lattice: self.lattice, band: self.band, data }
    }

    fn slot(&self, x: Coord, y: Coord) -> Option<usize> {
        let xi = self.lattice.index(x)?;
        self.lattice.index(y)?;
        let w = self.band.index(lattice::sub(x, y))?;
        Some(xi * self.band.len() + w)
    }

    /// `⟨x|ρ|y⟩`, zero outside the box or band.
    pub fn get(&self, x: Coord, y: Coord) -> C64 {
        self.slot(x, y).map_or(C64::new(0.0, 0.0), |k| self.data[k])
    }

    /// `ρ(X, ξ)`, zero when `X ± ξ` is odd.
    pub fn get_center(&self, center: Coord, rel: Coord) -> C64 {
        let plus = lattice::add(center, rel);
        let minus = lattice::sub(center, rel);
        if !lattice::is_even(plus) || !lattice::is_even(minus) {
            return C64::new(0.0, 0.0);
        }
        self.get(lattice::half(plus), lattice::half(minus))
    }

    pub fn set(&mut self, x: Coord, y: Coord, v: C64) -> Result<()> {
        match self.slot(x, y) {
            Some(k) => {
                self.data[k] = v;
                Ok(())
            }
            None => Err(Error::OutsideWindow { x, y }),
        }
    }

    /// Iterates over stored entries `(x, y, value)` whose `y` lies in the box.
    pub fn entries(&self) -> impl Iterator<Item = (Coord, Coord, C64)> + '_ {
        let bl = self.band.len();
        self.data.iter().enumerate().filter_map(move |(k, &v)| {
            let x = self.lattice.site(k / bl);
            let y = lattice::sub(x, self.band.coord(k % bl));
            self.lattice.index(y).map(|_| (x, y, v))
        })
    }

    /// Multiplies every entry by `s`.
    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    fn diagonal_sum(&self, weight: impl Fn(Coord) -> f64) -> C64 {
        let bl = self.band.len();
        let w0 = self.band.index([0; MAX_DIM]).expect("band contains 0");
        (0..self.lattice.n_sites())
            .map(|i| self.data[i * bl + w0] * weight(self.lattice.site(i)))
            .sum()
    }

    /// `Σ_X ρ(X, 0)`.
    pub fn trace(&self) -> Result<f64> {
        let t = self.diagonal_sum(|_| 1.0);
        if t.im.abs() > TRACE_IMAG_TOL {
            return Err(Error::NonRealTrace { imag: t.im, tol: TRACE_IMAG_TOL });
        }
        Ok(t.re)
    }

    /// `Σ_x x_i x_j ⟨x|ρ|x⟩`, equal to `¼ Σ_X X_i X_j ρ(X, 0)`.
    pub fn position_moment(&self, i: usize, j: usize) -> Result<f64> {
        let dim = self.lattice.dim();
        for axis in [i, j] {
            if axis >= dim {
                return Err(Error::AxisOutOfRange { axis, dim });
            }
        }
        let m = self.diagonal_sum(|x| (x[i] * x[j]) as f64);
        let scale = self.diagonal_sum(|x| (x[i] * x[j]).abs() as f64).norm();
        let tol = MOMENT_IMAG_TOL * scale.max(1.0);
        if m.im.abs() > tol {
            return Err(Error::NonRealMoment { imag: m.im, tol });
        }
        Ok(m.re)
    }

    /// The Wigner transform `Σ_ξ e^{ip·ξ} ρ(X, ξ)` on the uniform grid
    /// `p = 2πk/n_q`, flattened row-major over the `d` momentum axes.
    pub fn wigner(&self, center: Coord, n_q: usize) -> Vec<C64> {
        let dim = self.lattice.dim();
        let n_points = n_q.pow(dim as u32);
        let mut out = vec![C64::new(0.0, 0.0); n_points];
        let full = Window::new(dim, 2 * self.lattice.radius());
        let step = std::f64::consts::TAU / n_q as f64;
        for rel in full.iter() {
            let v = self.get_center(center, rel);
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                let mut phase = 0.0;
                let mut rem = k;
                for axis in (0..dim).rev() {
                    phase += (rem % n_q) as f64 * step * rel[axis] as f64;
                    rem /= n_q;
                }
                *o += v * C64::from_polar(1.0, phase);
            }
        }
        out
    }

    /// Squared fiber norms `Σ_ξ |ρ(X, ξ)|²`, indexed by `X` in the window of radius `2L`.
    pub fn fiber_norms_sq(&self) -> (Window, Vec<f64>) {
        let centers = Window::new(self.lattice.dim(), 2 * self.lattice.radius());
        let mut acc = vec![0.0; centers.len()];
        for (x, y, v) in self.entries() {
            let c = centers.index(lattice::add(x, y)).expect("X = x + y lies within 2L");
            acc[c] += v.norm_sqr();
        }
        (centers, acc)
    }

    /// `sup_X e^{m|X|₁} (Σ_ξ |ρ(X, ξ)|²)^{1/2}`.
    pub fn weighted_norm(&self, m: f64) -> f64 {
        let (centers, acc) = self.fiber_norms_sq();
        acc.iter()
            .enumerate()
            .map(|(k, &s)| (m * lattice::l1_norm(centers.coord(k)) as f64).exp() * s.sqrt())
            .fold(0.0, f64::max)
    }

    /// `max |⟨x|ρ|y⟩ − conj⟨y|ρ|x⟩|` over stored entries.
    pub fn hermiticity_defect(&self) -> f64 {
        self.entries()
            .map(|(x, y, v)| (v - self.get(y, x).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// `Σ |ρ(x, y)|²` over entries with `x` or `y` in the outer shell of
    /// depth `depth` (sites with `|·|_∞ ≥ L − depth + 1`).
    pub fn boundary_mass(&self, depth: usize) -> f64 {
        let edge = self.lattice.radius() as i64 - depth as i64 + 1;
        self.entries()
            .filter(|(x, y, _)| lattice::linf_norm(*x) >= edge || lattice::linf_norm(*y) >= edge)
            .map(|(_, _, v)| v.norm_sqr())
            .sum()
    }

    /// `Σ |ρ(X, ξ)|²` over the outermost layer of the coherence band, or 0
    /// when the band holds the full matrix.
    pub fn band_edge_mass(&self) -> f64 {
        let r = self.band.radius() as i64;
        if r >= 2 * self.lattice.radius() as i64 {
            return 0.0;
        }
        self.entries()
            .filter(|(x, y, _)| lattice::linf_norm(lattice::sub(*x, *y)) == r)
            .map(|(_, _, v)| v.norm_sqr())
            .sum()
    }

    /// Writes nonzero entries as CSV rows `X_1[,X_2],xi_1[,xi_2],re,im`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.lattice.dim();
        let axes: Vec<String> = (1..=dim).map(|i| format!("X_{i}")).collect();
        let rels: Vec<String> = (1..=dim).map(|i| format!("xi_{i}")).collect();
        writeln!(w, "{},{},re,im", axes.join(","), rels.join(","))?;
        for (x, y, v) in self.entries() {
            if v == C64::new(0.0, 0.0) {
                continue;
            }
            let c = lattice::add(x, y);
            let r = lattice::sub(x, y);
            let cs: Vec<String> = c[..dim].iter().map(i64::to_string).collect();
            let rs: Vec<String> = r[..dim].iter().map(i64::to_string).collect();
            writeln!(w, "{},{},{:e},{:e}", cs.join(","), rs.join(","), v.re, v.im)?;
        }
        Ok(())
    }

    /// Largest entrywise modulus of `self − other` on a common layout.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        if self.band == other.band && self.lattice == other.lattice {
            return self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
        }
        let a = self.to_matrix();
        let b = other.to_matrix();
        (a - b).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn box1(l: usize) -> LatticeBox {
        LatticeBox::truncated(1, l).unwrap()
    }

    fn random_hermitian(lattice: LatticeBox, seed: u64) -> DensityState {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = lattice.n_sites();
        let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let h = &a * a.adjoint();
        let tr = h.trace();
        DensityState::from_matrix(lattice, &(h / tr)).unwrap()
    }

    #[test]
    fn point_state_has_single_entry() {
        let s = DensityState::new_point_state(box1(4));
        let nonzero: Vec<_> = s.entries().filter(|e| e.2 != C64::new(0.0, 0.0)).collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(nonzero[0].0, [0, 0]);
        assert_eq!(s.trace().unwrap(), 1.0);
        assert_eq!(s.position_moment(0, 0).unwrap(), 0.0);
        assert!(s.wigner([0, 0], 16).iter().all(|&v| (v - 1.0).norm() < 1e-15));
    }

    #[test]
    fn trace_is_linear() {
        let mut s = DensityState::new_point_state(box1(3));
        s.scale(0.5);
        assert_eq!(s.trace().unwrap(), 0.5);
    }

    #[test]
    fn non_real_trace_is_rejected() {
        let mut s = DensityState::new_point_state(box1(3));
        s.set([1, 0], [1, 0], C64::new(0.0, 1e-6)).unwrap();
        assert!(matches!(s.trace(), Err(Error::NonRealTrace { .. })));
    }

    #[test]
    fn moment_of_split_mass() {
        let mut s = DensityState::zeros(box1(3), None);
        s.set([1, 0], [1, 0], C64::new(0.5, 0.0)).unwrap();
        s.set([-1, 0], [-1, 0], C64::new(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(s.position_moment(0, 0).unwrap(), 1.0);
        assert!(s.position_moment(0, 1).is_err());
    }

    #[test]
    fn weighted_norm_examples() {
        let s = DensityState::new_point_state(box1(3));
        assert_abs_diff_eq!(s.weighted_norm(1.0), 1.0);
        let mut t = DensityState::zeros(box1(3), None);
        t.set([1, 0], [1, 0], C64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(t.weighted_norm(1.0), 2f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn wigner_inverse_identity() {
        let lattice = box1(3);
        let s = random_hermitian(lattice, 7);
        let n_q = 16;
        for c in -6..=6 {
            let w = s.wigner([c, 0], n_q);
            let mean: C64 = w.iter().sum::<C64>() / n_q as f64;
            assert!((mean - s.get_center([c, 0], [0, 0])).norm() < 1e-12);
        }
    }

    #[test]
    fn wigner_half_period_in_two_dimensions() {
        let lattice = LatticeBox::truncated(2, 2).unwrap();
        let s = random_hermitian(lattice, 3);
        let n_q = 8;
        for c in [[0, 0], [1, 2], [-1, 1]] {
            let w = s.wigner(c, n_q);
            for k0 in 0..n_q {
                for k1 in 0..n_q {
                    let a = w[k0 * n_q + k1];
                    let b = w[((k0 + n_q / 2) % n_q) * n_q + k1];
                    let sign = if c[0].rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                    assert!((b - a * sign).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn banded_storage_drops_far_coherences() {
        let lattice = box1(4);
        let mut s = DensityState::zeros(lattice, Some(2));
        assert!(s.set([2, 0], [-1, 0], C64::new(1.0, 0.0)).is_err());
        s.set([2, 0], [0, 0], C64::new(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(s.band_edge_mass(), 1.0);
        assert_eq!(s.get([3, 0], [-3, 0]), C64::new(0.0, 0.0));
    }

    #[test]
    fn boundary_mass_sees_outer_shell() {
        let lattice = box1(5);
        let mut s = DensityState::zeros(lattice, None);
        s.set([4, 0], [0, 0], C64::new(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(s.boundary_mass(2), 0.25);
        assert_abs_diff_eq!(s.boundary_mass(1), 0.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let s = DensityState::new_point_state(box1(2));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "X_1,xi_1,re,im");
        assert_eq!(text.lines().count(), 2);
    }

    proptest! {
        #[test]
        fn wigner_half_period(seed in 0u64..1000, c in -6i64..=6) {
            let s = random_hermitian(box1(3), seed);
            let n_q = 12;
            let w = s.wigner([c, 0], n_q);
            let sign = if c.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            for k in 0..n_q {
                prop_assert!((w[(k + n_q / 2) % n_q] - w[k] * sign).norm() < 1e-12);
            }
        }

        #[test]
        fn moments_are_symmetric(seed in 0u64..1000) {
            let s = random_hermitian(LatticeBox::truncated(2, 2).unwrap(), seed);
            let a = s.position_moment(0, 1).unwrap();
            let b = s.position_moment(1, 0).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert!(s.hermiticity_defect() < 1e-14);
        }

        #[test]
        fn matrix_round_trip(seed in 0u64..1000) {
            let lattice = box1(2);
            let s = random_hermitian(lattice, seed);
            let back = DensityState::from_matrix(lattice, &s.to_matrix()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
