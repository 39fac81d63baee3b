use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Atom, GainKernel, MeasureSpec, NegativeAtom, TruncationReport, DEFAULT_RADIUS};
use crate::error::{Error, Result};
use crate::lattice::{Window, MAX_DIM};
use crate::linalg::{CMatrix, C64};

/// Knobs for [`build_kernel_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Truncation radius `R` for `ξ` and `η`.
    pub radius: usize,
    /// Radius up to which discarded entries are summed; defaults to `2R`.
    pub extended_radius: Option<usize>,
    /// Largest tolerated ratio of discarded to retained `Σ|r|`.
    pub max_discarded_fraction: f64,
    /// Keep negative weights instead of rejecting them (for validator diagnostics).
    pub allow_negative: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { radius: DEFAULT_RADIUS, extended_radius: None, max_discarded_fraction: 0.1, allow_negative: false }
    }
}

impl BuildOptions {
    pub fn with_radius(radius: usize) -> Self {
        Self { radius, ..Self::default() }
    }
}

/// Evaluates `r(ξ, η) = Σ w e^{iξ·p − iη·q}` on `|ξ|, |η| ≤ radius` with default options.
pub fn build_kernel(spec: &MeasureSpec, radius: usize) -> Result<GainKernel> {
    build_kernel_with(spec, &BuildOptions::with_radius(radius))
}

pub fn build_kernel_with(spec: &MeasureSpec, opts: &BuildOptions) -> Result<GainKernel> {
    let dim = spec.dimension();
    if !(1..=MAX_DIM).contains(&dim) {
        return Err(Error::InvalidBox(format!("kernel dimension {dim} unsupported")));
    }
    if opts.radius < 1 {
        return Err(Error::Precondition("kernel radius must be at least 1".into()));
    }
    let mut negative = Vec::new();
    for (index, a) in spec.atoms.iter().enumerate() {
        for found in [a.p.len(), a.q.len()] {
            if found != dim {
                return Err(Error::AtomDimension { index, found, expected: dim });
            }
        }
        if a.w < 0.0 || !a.w.is_finite() {
            if !opts.allow_negative {
                return Err(Error::NegativeWeight { index, weight: a.w });
            }
            negative.push(NegativeAtom { index, atom: a.clone() });
        }
    }

    let radius = opts.radius;
    let ext = opts.extended_radius.unwrap_or(2 * radius).max(radius);
    let atoms: Vec<Atom> = spec.expanded_atoms().into_iter().map(|(_, a)| a).collect();
    let big = Window::new(dim, ext);
    let full = evaluate(&atoms, dim, &big);

    let small = Window::new(dim, radius);
    let mut retained = 0.0;
    let mut discarded = 0.0;
    for i in 0..big.len() {
        for j in 0..big.len() {
            let v = full[(i, j)].norm();
            if small.contains(big.coord(i)) && small.contains(big.coord(j)) {
                retained += v;
            } else {
                discarded += v;
            }
        }
    }
    if discarded > opts.max_discarded_fraction * retained && discarded > 1e-12 {
        return Err(Error::TruncationTooLossy { discarded, retained });
    }
    let values = CMatrix::from_fn(small.len(), small.len(), |i, j| {
        full[(big.index(small.coord(i)).unwrap(), big.index(small.coord(j)).unwrap())]
    });
    let report = TruncationReport { retained, discarded, extended_radius: ext };
    Ok(GainKernel::from_values(small, values).with_provenance(negative, report))
}

/// Key identifying a torus point up to rounding.
fn point_key(v: &[f64]) -> [i64; MAX_DIM] {
    let mut k = [0i64; MAX_DIM];
    for (i, &x) in v.iter().enumerate() {
        let y = x.rem_euclid(std::f64::consts::TAU);
        k[i] = (y * 1e10).round() as i64 % (std::f64::consts::TAU * 1e10).round() as i64;
    }
    k
}

/// Fourier coefficients of the atom sum on a window.
///
/// Atoms on a product grid are handled by the factorization `r = A W B`
/// with `A[ξ][p] = e^{iξ·p}` and `B[q][η] = e^{−iη·q}`, which avoids
/// a per-atom outer product when there are many atoms.
fn evaluate(atoms: &[Atom], dim: usize, window: &Window) -> CMatrix {
    let n = window.len();
    let mut ps: HashMap<[i64; MAX_DIM], usize> = HashMap::new();
    let mut qs: HashMap<[i64; MAX_DIM], usize> = HashMap::new();
    let mut p_pts: Vec<&[f64]> = Vec::new();
    let mut q_pts: Vec<&[f64]> = Vec::new();
    let mut slots = Vec::with_capacity(atoms.len());
    for a in atoms {
        let ip = *ps.entry(point_key(&a.p)).or_insert_with(|| {
            p_pts.push(&a.p);
            p_pts.len() - 1
        });
        let iq = *qs.entry(point_key(&a.q)).or_insert_with(|| {
            q_pts.push(&a.q);
            q_pts.len() - 1
        });
        slots.push((ip, iq, a.w));
    }
    let phase = |xi: [i64; MAX_DIM], v: &[f64]| -> f64 { (0..dim).map(|k| xi[k] as f64 * v[k]).sum() };
    let direct_cost = atoms.len() * n * n;
    let factored_cost = n * p_pts.len() * q_pts.len() + n * n * q_pts.len();
    if direct_cost <= factored_cost {
        let mut out = CMatrix::zeros(n, n);
        for a in atoms {
            let left: Vec<C64> = (0..n).map(|i| C64::from_polar(a.w, phase(window.coord(i), &a.p))).collect();
            let right: Vec<C64> = (0..n).map(|j| C64::from_polar(1.0, -phase(window.coord(j), &a.q))).collect();
            for j in 0..n {
                for i in 0..n {
                    out[(i, j)] += left[i] * right[j];
                }
            }
        }
        return out;
    }
    let mut weights = CMatrix::zeros(p_pts.len(), q_pts.len());
    for (ip, iq, w) in slots {
        weights[(ip, iq)] += C64::new(w, 0.0);
    }
    let a = CMatrix::from_fn(n, p_pts.len(), |i, k| C64::from_polar(1.0, phase(window.coord(i), p_pts[k])));
    let b = CMatrix::from_fn(q_pts.len(), n, |k, j| C64::from_polar(1.0, -phase(window.coord(j), q_pts[k])));
    a * weights * b
}
