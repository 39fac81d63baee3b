//! Unitary localization length and the small-coupling slope of `D(g)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mean_stderr;
use crate::disorder::{DisorderField, Distribution};
use crate::error::{Error, Result};
use crate::lattice::{self, Coord, LatticeBox};
use crate::linalg::least_squares;

/// Largest relative growth of the running supremum over the last quarter of the run.
pub const PLATEAU_TOL: f64 = 0.05;

/// Largest tolerated probability within three sites of the box faces.
pub const EDGE_TOL: f64 = 1e-8;

/// Largest curvature, relative to the linear term, accepted in a small-`g` fit.
pub const CURVATURE_LIMIT: f64 = 0.2;

/// `ℓ² = sup_t Σ_x (|x|²/d) E|⟨x|e^{−iHt}|0⟩|²` with its ensemble error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationEstimate {
    pub ell_sq: f64,
    pub stderr: f64,
    pub sup_time: f64,
    /// Supremum over the first three quarters divided by the global supremum.
    pub plateau_ratio: f64,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr_curve: Vec<f64>,
}

impl LocalizationEstimate {
    pub fn relative_error(&self) -> f64 {
        if self.ell_sq == 0.0 {
            0.0
        } else {
            self.stderr / self.ell_sq
        }
    }
}

/// Tight-binding Hamiltonian `u·(nearest-neighbour hopping) + λω` on a truncated box.
pub fn anderson_hamiltonian(field: &DisorderField, u: f64, lambda: f64) -> DMatrix<f64> {
    let lattice = field.lattice();
    let n = lattice.n_sites();
    let mut h = DMatrix::zeros(n, n);
    let steps = lattice::unit_vectors(lattice.dim());
    for (i, x) in lattice.sites().enumerate() {
        h[(i, i)] = lambda * field.value(x);
        for &e in &steps {
            if let Some(j) = lattice.index(lattice::add(x, e)) {
                h[(i, j)] = u;
            }
        }
    }
    h
}

/// Second moment `Σ_x (|x − x₀|²/d)|ψ_t(x)|²` of `e^{−iHt}|x₀⟩`, averaged over
/// the launch sites `x₀`, at each time. One eigendecomposition serves all launches.
fn spreading(field: &DisorderField, u: f64, lambda: f64, launches: &[Coord], times: &[f64]) -> Result<Vec<f64>> {
    let lattice = *field.lattice();
    let dim = lattice.dim() as f64;
    let eig = anderson_hamiltonian(field, u, lambda).symmetric_eigen();
    let radius = lattice.radius() as i64;
    let sites: Vec<Coord> = lattice.sites().collect();
    let edge: Vec<bool> = sites.iter().map(|&x| lattice::linf_norm(x) > radius - 3).collect();
    let n = lattice.n_sites();
    let mut out = vec![0.0; times.len()];
    for &x0 in launches {
        let start = lattice.index(x0).ok_or_else(|| Error::Precondition(format!("launch site {x0:?} lies outside the box")))?;
        let overlap: DVector<f64> = eig.eigenvectors.row(start).transpose();
        let sq: Vec<f64> = sites.iter().map(|&x| lattice::sub(x, x0).iter().map(|c| (c * c) as f64).sum::<f64>() / dim).collect();
        for (k, &t) in times.iter().enumerate() {
            let re = DVector::from_fn(n, |j, _| overlap[j] * (eig.eigenvalues[j] * t).cos());
            let im = DVector::from_fn(n, |j, _| -overlap[j] * (eig.eigenvalues[j] * t).sin());
            let pr = &eig.eigenvectors * re;
            let pi = &eig.eigenvectors * im;
            let prob: Vec<f64> = (0..n).map(|i| pr[i] * pr[i] + pi[i] * pi[i]).collect();
            let mass: f64 = prob.iter().zip(&edge).filter(|(_, &e)| e).map(|(p, _)| p).sum();
            if mass > EDGE_TOL {
                return Err(Error::BoundaryMassExceeded { mass, tol: EDGE_TOL, t });
            }
            out[k] += prob.iter().zip(&sq).map(|(p, s)| p * s).sum::<f64>();
        }
    }
    let count = launches.len() as f64;
    out.iter_mut().for_each(|v| *v /= count);
    Ok(out)
}

/// Launch sites on a grid of the given spacing within `|x₀|∞ ≤ reach`, origin included.
pub fn launch_grid(dim: usize, reach: usize, spacing: usize) -> Vec<Coord> {
    let spacing = spacing.max(1) as i64;
    let k = reach as i64 / spacing;
    let line: Vec<i64> = (-k..=k).map(|j| j * spacing).collect();
    match dim {
        1 => line.iter().map(|&a| [a, 0]).collect(),
        _ => line.iter().flat_map(|&a| line.iter().map(move |&b| [a, b])).collect(),
    }
}

/// Ensemble `ℓ²` from `g = 0` evolution of `|0⟩` under independent disorder seeds.
///
/// The running supremum must have levelled off: its value at `3T/4` has to be
/// within [`PLATEAU_TOL`] of the final one, otherwise [`Error::NoPlateau`].
pub fn localization_length(lattice: LatticeBox, u: f64, lambda: f64, dist: &Distribution, seeds: &[u64], times: &[f64]) -> Result<LocalizationEstimate> {
    localization_length_from(lattice, u, lambda, dist, seeds, &[[0, 0]], times)
}

/// As [`localization_length`], launching from every site in `launches` on each
/// disorder sample.
///
/// The disorder law is translation invariant, so the displacement statistics
/// from any launch site match those from the origin. Averaging launches within
/// a sample reduces the spread between samples; the reported error still comes
/// from the seed-to-seed scatter of the per-sample averages, so correlations
/// between launches on the same sample cannot make it optimistic. Launch sites
/// must be far enough from the faces for the edge check to hold.
pub fn localization_length_from(
    lattice: LatticeBox,
    u: f64,
    lambda: f64,
    dist: &Distribution,
    seeds: &[u64],
    launches: &[Coord],
    times: &[f64],
) -> Result<LocalizationEstimate> {
    if seeds.is_empty() || times.is_empty() || launches.is_empty() {
        return Err(Error::Precondition("need seeds, launch sites and times".into()));
    }
    if lattice.boundary() != lattice::Boundary::Truncated {
        return Err(Error::Precondition("localization runs use a truncated box".into()));
    }
    let curves = seeds
        .par_iter()
        .map(|&s| spreading(&DisorderField::sample(lattice, dist, s)?, u, lambda, launches, times))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr_curve = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let (m, se) = mean_stderr(&curves.iter().map(|c| c[k]).collect::<Vec<_>>());
        mean.push(m);
        stderr_curve.push(se);
    }
    let (arg, &ell_sq) = mean.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("non-empty");
    let t_max = times[times.len() - 1];
    let early = times.iter().zip(&mean).filter(|(&t, _)| t <= 0.75 * t_max).map(|(_, &m)| m).fold(0.0, f64::max);
    let plateau_ratio = if ell_sq > 0.0 { early / ell_sq } else { 1.0 };
    if 1.0 - plateau_ratio > PLATEAU_TOL {
        return Err(Error::NoPlateau { growth: 1.0 - plateau_ratio });
    }
    Ok(LocalizationEstimate { ell_sq, stderr: stderr_curve[arg], sup_time: times[arg], plateau_ratio, times: times.to_vec(), mean, stderr_curve })
}

/// Through-origin slope `Δ` of `D(g)` and the inequality chain it must satisfy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub delta: f64,
    pub stderr: f64,
    /// `|β|·g_max/|Δ'|` from the fit `D = Δ'g + βg²`.
    pub curvature: f64,
    /// `(D₂/D₁)/(g₂/g₁)` for the two smallest couplings.
    pub linearity: f64,
    /// `4cu²/‖𝓐₀‖²`.
    pub lower: f64,
    /// `(1 + 1/c)·ℓ²`.
    pub upper: f64,
    /// Combined uncertainty used in the bound comparisons.
    pub combined_error: f64,
    pub positive: bool,
    pub below_upper: bool,
    pub above_lower: bool,
}

impl SlopeEstimate {
    pub fn passed(&self) -> bool {
        self.positive && self.below_upper && self.above_lower
    }
}

/// Fits `D(g) = Δg` through the origin from `(g, D, σ_D)` triples.
pub fn small_g_slope(points: &[(f64, f64, f64)], ell: &LocalizationEstimate, gap: f64, hamiltonian_norm: f64, u: f64) -> Result<SlopeEstimate> {
    if points.len() < 3 {
        return Err(Error::Precondition("need at least three couplings".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let weight = |s: f64| if s > 0.0 { 1.0 / (s * s) } else { 1.0 };
    let swgg: f64 = pts.iter().map(|p| weight(p.2) * p.0 * p.0).sum();
    let swgd: f64 = pts.iter().map(|p| weight(p.2) * p.0 * p.1).sum();
    let delta = swgd / swgg;
    let chi2: f64 = pts.iter().map(|p| weight(p.2) * (p.1 - delta * p.0).powi(2)).sum::<f64>() / (pts.len() - 1) as f64;
    let stderr = (1.0 / swgg).sqrt() * chi2.sqrt().max(1.0);

    let sw: Vec<f64> = pts.iter().map(|p| weight(p.2).sqrt()).collect();
    let design = DMatrix::from_fn(pts.len(), 2, |r, c| sw[r] * pts[r].0.powi(c as i32 + 1));
    let y: Vec<f64> = pts.iter().zip(&sw).map(|(p, w)| w * p.1).collect();
    let coef = least_squares(&design, &y).ok_or(Error::Singular)?;
    let g_max = pts[pts.len() - 1].0;
    let curvature = (coef[1] * g_max).abs() / coef[0].abs();
    if curvature > CURVATURE_LIMIT {
        return Err(Error::NonlinearRegime { ratio: curvature });
    }
    let linearity = (pts[1].1 / pts[0].1) / (pts[1].0 / pts[0].0);

    let upper = (1.0 + 1.0 / gap) * ell.ell_sq;
    let lower = 4.0 * gap * u * u / (hamiltonian_norm * hamiltonian_norm);
    let combined_error = (stderr.powi(2) + ((1.0 + 1.0 / gap) * ell.stderr).powi(2)).sqrt();
    Ok(SlopeEstimate {
        delta,
        stderr,
        curvature,
        linearity,
        lower,
        upper,
        combined_error,
        positive: delta > 0.0,
        below_upper: delta <= upper + combined_error,
        above_lower: delta > (lower - stderr).max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(t_max: f64, n: usize) -> Vec<f64> {
        (0..=n).map(|k| t_max * k as f64 / n as f64).collect()
    }

    #[test]
    fn free_motion_has_no_plateau() {
        let lattice = LatticeBox::truncated(1, 60).unwrap();
        let err = localization_length(lattice, 1.0, 0.0, &Distribution::default(), &[1, 2], &grid(10.0, 40)).unwrap_err();
        assert!(matches!(err, Error::NoPlateau { .. }), "{err}");
    }

    #[test]
    fn free_motion_matches_ballistic_law() {
        let field = DisorderField::zero(LatticeBox::truncated(1, 60).unwrap());
        let m = spreading(&field, 1.0, 0.0, &[[0, 0]], &[0.5, 2.0, 5.0]).unwrap();
        for (t, v) in [0.5, 2.0, 5.0].iter().zip(m) {
            assert!((v - 2.0 * t * t).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn no_hopping_is_frozen() {
        let lattice = LatticeBox::truncated(1, 5).unwrap();
        let est = localization_length(lattice, 0.0, 3.0, &Distribution::default(), &[1, 2, 3], &grid(50.0, 50)).unwrap();
        assert_eq!(est.ell_sq, 0.0);
    }

    #[test]
    fn strong_disorder_plateaus() {
        let lattice = LatticeBox::truncated(1, 30).unwrap();
        let seeds: Vec<u64> = (0..16).collect();
        let est = localization_length(lattice, 1.0, 8.0, &Distribution::default(), &seeds, &grid(100.0, 200)).unwrap();
        assert!(est.ell_sq > 0.0 && est.ell_sq < 3.0, "{}", est.ell_sq);
        assert!(est.plateau_ratio > 0.95);
    }

    #[test]
    fn escaping_wavefunction_is_reported() {
        let lattice = LatticeBox::truncated(1, 8).unwrap();
        let err = localization_length(lattice, 1.0, 0.0, &Distribution::default(), &[1], &grid(10.0, 10)).unwrap_err();
        assert!(matches!(err, Error::BoundaryMassExceeded { .. }));
    }

    #[test]
    fn free_motion_is_the_same_from_any_interior_launch() {
        let field = DisorderField::zero(LatticeBox::truncated(1, 60).unwrap());
        let m = spreading(&field, 1.0, 0.0, &[[-10, 0], [0, 0], [10, 0]], &[2.0, 5.0]).unwrap();
        for (t, v) in [2.0, 5.0].iter().zip(m) {
            assert!((v - 2.0 * t * t).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn launch_grid_shapes() {
        assert_eq!(launch_grid(1, 10, 5), vec![[-10, 0], [-5, 0], [0, 0], [5, 0], [10, 0]]);
        assert_eq!(launch_grid(2, 4, 4).len(), 9);
        assert_eq!(launch_grid(1, 0, 5), vec![[0, 0]]);
    }

    #[test]
    fn launches_shrink_the_error() {
        let lattice = LatticeBox::truncated(1, 40).unwrap();
        let seeds: Vec<u64> = (0..16).collect();
        let times = grid(200.0, 200);
        let one = localization_length(lattice, 1.0, 8.0, &Distribution::default(), &seeds, &times).unwrap();
        let many = localization_length_from(lattice, 1.0, 8.0, &Distribution::default(), &seeds, &launch_grid(1, 10, 5), &times).unwrap();
        assert!(many.stderr < one.stderr, "{} vs {}", many.stderr, one.stderr);
        assert!((many.ell_sq - one.ell_sq).abs() < 3.0 * (many.stderr.powi(2) + one.stderr.powi(2)).sqrt());
    }

    fn ell(v: f64, e: f64) -> LocalizationEstimate {
        LocalizationEstimate { ell_sq: v, stderr: e, sup_time: 0.0, plateau_ratio: 1.0, times: vec![], mean: vec![], stderr_curve: vec![] }
    }

    #[test]
    fn slope_of_exact_line() {
        let pts: Vec<(f64, f64, f64)> = [0.02, 0.05, 0.1, 0.2].iter().map(|&g| (g, 0.3 * g, 1e-4)).collect();
        let s = small_g_slope(&pts, &ell(0.2, 0.01), 0.5, 20.0, 1.0).unwrap();
        assert!((s.delta - 0.3).abs() < 1e-12);
        assert!(s.curvature < 1e-8);
        assert!((s.linearity - 1.0).abs() < 1e-12);
        assert!(s.passed());
    }

    #[test]
    fn slope_detects_curvature() {
        let pts: Vec<(f64, f64, f64)> = [0.02, 0.05, 0.1, 0.2].iter().map(|&g| (g, g + 3.0 * g * g, 1e-4)).collect();
        assert!(matches!(small_g_slope(&pts, &ell(1.0, 0.0), 0.5, 1.0, 1.0), Err(Error::NonlinearRegime { .. })));
    }

    #[test]
    fn slope_above_bound_fails() {
        let pts: Vec<(f64, f64, f64)> = [0.02, 0.05, 0.1].iter().map(|&g| (g, 2.0 * g, 1e-5)).collect();
        let s = small_g_slope(&pts, &ell(0.1, 0.001), 0.5, 1.0, 1.0).unwrap();
        assert!(!s.below_upper && !s.passed());
    }
}
