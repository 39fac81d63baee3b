//! Gain kernels `r(ξ, η)` built from non-negative measures on the torus pair.
//!
//! A kernel is stored on the cube `|ξ|_∞, |η|_∞ ≤ R`. The dissipator it
//! induces on a fiber is `(𝓛f)(ξ) = Σ_η [r(ξ, η) − r(0, η − ξ)] f(η)`.

mod build;
mod grid;
pub mod presets;
mod validate;

pub use build::{build_kernel, build_kernel_with, BuildOptions};
pub use grid::{certify, jump_rate_bound, normalize, operator_norm, spectral_gap, Certificate, JumpBound, SpectralGap};
pub use validate::{default_grid, validate, validate_with, ItemResult, Requirement, ValidationReport, Witness};

use std::f64::consts::{PI, TAU};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, Coord, Window, MAX_DIM};
use crate::linalg::{CMatrix, C64};

/// Default truncation radius for `ξ, η`.
pub const DEFAULT_RADIUS: usize = 6;

/// A point mass `w · δ_p ⊗ δ_q` on `T^d × T^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Atom {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub w: f64,
}

/// A discrete measure together with the symmetrizations to apply to it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    /// Lattice dimension; inferred from the atoms when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    pub atoms: Vec<Atom>,
    #[serde(default)]
    pub symmetrize_pi: bool,
    #[serde(default)]
    pub symmetrize_lattice: bool,
}

impl MeasureSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// The lattice dimension, taken from `dim` or the first atom (default 1).
    pub fn dimension(&self) -> usize {
        self.dim.or_else(|| self.atoms.first().map(|a| a.p.len())).unwrap_or(1)
    }

    /// Atoms after the requested symmetrizations, with the original index of each.
    pub fn expanded_atoms(&self) -> Vec<(usize, Atom)> {
        let dim = self.dimension();
        let mut atoms: Vec<(usize, Atom)> = self.atoms.iter().cloned().enumerate().collect();
        if self.symmetrize_pi {
            let copies = 1usize << dim;
            atoms = atoms
                .into_iter()
                .flat_map(|(k, a)| {
                    (0..copies).map(move |mask| {
                        let shift = |v: &[f64]| -> Vec<f64> {
                            v.iter()
                                .enumerate()
                                .map(|(i, &x)| if mask >> i & 1 == 1 { (x + PI).rem_euclid(TAU) } else { x })
                                .collect()
                        };
                        (k, Atom { p: shift(&a.p), q: shift(&a.q), w: a.w / copies as f64 })
                    })
                })
                .collect();
        }
        if self.symmetrize_lattice {
            let group = hyperoctahedral(dim);
            let order = group.len() as f64;
            atoms = atoms
                .into_iter()
                .flat_map(|(k, a)| {
                    group.iter().map(move |(perm, signs)| {
                        let act = |v: &[f64]| -> Vec<f64> {
                            (0..dim).map(|i| (signs[i] * v[perm[i]]).rem_euclid(TAU)).collect()
                        };
                        (k, Atom { p: act(&a.p), q: act(&a.q), w: a.w / order })
                    })
                })
                .collect();
        }
        atoms
    }
}

/// Signed permutations of the coordinate axes.
fn hyperoctahedral(dim: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let perms: Vec<Vec<usize>> = if dim == 1 { vec![vec![0]] } else { vec![vec![0, 1], vec![1, 0]] };
    let mut out = Vec::new();
    for perm in perms {
        for mask in 0..(1usize << dim) {
            let signs = (0..dim).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect();
            out.push((perm.clone(), signs));
        }
    }
    out
}

/// Bookkeeping for the cut to `|ξ|, |η| ≤ R`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    /// `Σ |r|` kept inside the window.
    pub retained: f64,
    /// `Σ |r|` found between the window and the extended radius.
    pub discarded: f64,
    pub extended_radius: usize,
}

/// A weight that failed the positivity requirement, kept for diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NegativeAtom {
    pub index: usize,
    pub atom: Atom,
}

/// The truncated kernel `r(ξ, η)` for `|ξ|_∞, |η|_∞ ≤ R`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainKernel {
    window: Window,
    values: CMatrix,
    negative_atoms: Vec<NegativeAtom>,
    truncation: TruncationReport,
    scale: f64,
}

impl GainKernel {
    /// Wraps explicit values indexed by `window` in both slots.
    pub fn from_values(window: Window, values: CMatrix) -> Self {
        assert_eq!(values.nrows(), window.len());
        assert_eq!(values.ncols(), window.len());
        Self { window, values, negative_atoms: Vec::new(), truncation: TruncationReport::default(), scale: 1.0 }
    }

    /// Builds a kernel from a function of `(ξ, η)`.
    pub fn from_fn(dim: usize, radius: usize, f: impl Fn(Coord, Coord) -> C64) -> Self {
        let window = Window::new(dim, radius);
        let values = CMatrix::from_fn(window.len(), window.len(), |i, j| f(window.coord(i), window.coord(j)));
        Self::from_values(window, values)
    }

    pub fn dim(&self) -> usize {
        self.window.dim()
    }

    pub fn radius(&self) -> usize {
        self.window.radius()
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    /// The matrix `r(ξ, η)` in window order.
    pub fn values(&self) -> &CMatrix {
        &self.values
    }

    pub fn negative_atoms(&self) -> &[NegativeAtom] {
        &self.negative_atoms
    }

    pub fn truncation(&self) -> &TruncationReport {
        &self.truncation
    }

    /// Product of the factors applied by [`normalize`].
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `r(ξ, η)`, zero outside the window.
    #[inline]
    pub fn r(&self, xi: Coord, eta: Coord) -> C64 {
        match (self.window.index(xi), self.window.index(eta)) {
            (Some(i), Some(j)) => self.values[(i, j)],
            _ => C64::new(0.0, 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == C64::new(0.0, 0.0))
    }

    /// The kernel multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut k = self.clone();
        k.values *= C64::new(s, 0.0);
        k.scale *= s;
        k
    }

    /// Nonzero `(ξ, η, r)` triples.
    pub fn nonzero_entries(&self, tol: f64) -> Vec<(Coord, Coord, C64)> {
        let n = self.window.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let v = self.values[(i, j)];
                if v.norm() > tol {
                    out.push((self.window.coord(i), self.window.coord(j), v));
                }
            }
        }
        out
    }

    /// Matrix of `𝓛` from the window of radius `cols` into the window of radius `rows`.
    pub fn lindblad_block(&self, rows: usize, cols: usize) -> CMatrix {
        let dim = self.dim();
        let wr = Window::new(dim, rows);
        let wc = Window::new(dim, cols);
        CMatrix::from_fn(wr.len(), wc.len(), |i, j| {
            let xi = wr.coord(i);
            let eta = wc.coord(j);
            self.r(xi, eta) - self.r([0; MAX_DIM], lattice::sub(eta, xi))
        })
    }

    /// Matrix of the gain part `G` on the kernel window.
    pub fn gain_matrix(&self) -> CMatrix {
        self.values.clone()
    }

    /// `r̂(p, q) = Σ r(ξ, η) e^{−iξ·p + iη·q}` on the uniform `n_q^d` grid.
    ///
    /// Returns the real part; the kernel of a real measure makes this real up to rounding.
    pub fn density_on_grid(&self, n_q: usize) -> DMatrix<f64> {
        let e = self.fourier_matrix(n_q);
        let full = &e * &self.values * e.adjoint();
        full.map(|v| v.re)
    }

    /// `E[p][ξ] = e^{−iξ·p}` for grid points `p` and window offsets `ξ`.
    fn fourier_matrix(&self, n_q: usize) -> CMatrix {
        let dim = self.dim();
        let pts = grid_points(dim, n_q);
        CMatrix::from_fn(pts.len(), self.window.len(), |k, j| {
            let xi = self.window.coord(j);
            let phase: f64 = (0..dim).map(|a| pts[k][a] * xi[a] as f64).sum();
            C64::from_polar(1.0, -phase)
        })
    }

    pub(crate) fn with_provenance(mut self, negative_atoms: Vec<NegativeAtom>, truncation: TruncationReport) -> Self {
        self.negative_atoms = negative_atoms;
        self.truncation = truncation;
        self
    }
}

/// Uniform grid points `2πk/n_q` on `T^d`, row-major.
pub fn grid_points(dim: usize, n_q: usize) -> Vec<[f64; MAX_DIM]> {
    let total = n_q.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            let mut p = [0.0; MAX_DIM];
            for a in (0..dim).rev() {
                p[a] = TAU * (k % n_q) as f64 / n_q as f64;
                k /= n_q;
            }
            p
        })
        .collect()
}

pub(crate) fn check_grid(n_q: usize) -> Result<()> {
    if n_q < 8 || n_q % 2 != 0 {
        return Err(Error::InvalidGrid(n_q));
    }
    Ok(())
}
