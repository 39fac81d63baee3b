//! Randomized checks of the large-coupling resolvent limit
//! `⟨φ, (λA + B)⁻¹ψ⟩ → ⟨Πφ, (ΠBΠ)⁻¹Πψ⟩` for normal accretive `A`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{extrapolate_to_zero, hermitian_part, null_space, solve, spectral_norm, CMatrix, CVector, C64};

/// Normality tolerance on `‖AA† − A†A‖`, relative to `max(1, ‖A‖²)`.
pub const NORMALITY_TOL: f64 = 1e-10;

/// Relative singular-value threshold for the kernel of `A`.
pub const KERNEL_TOL: f64 = 1e-10;

/// A normal `A` with `Re A ≥ 0`, a coercive `B`, and the two test vectors.
#[derive(Clone, Debug)]
pub struct ResolventProblem {
    a: CMatrix,
    b: CMatrix,
    phi: CVector,
    psi: CVector,
    lambdas: Vec<f64>,
    coercivity: f64,
}

impl ResolventProblem {
    /// Validates normality of `A` and the field-of-values conditions.
    pub fn new(a: CMatrix, b: CMatrix, phi: CVector, psi: CVector, lambdas: Vec<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.shape() != (n, n) || phi.len() != n || psi.len() != n {
            return Err(Error::Precondition("resolvent problem dimensions disagree".into()));
        }
        if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[1] > w[0])) || lambdas[0] <= 0.0 {
            return Err(Error::Precondition("coupling list must be increasing and positive".into()));
        }
        let an = spectral_norm(&a);
        let defect = (&a * a.adjoint() - a.adjoint() * &a).norm();
        if defect > NORMALITY_TOL * an.powi(2).max(1.0) {
            return Err(Error::NotNormal { defect });
        }
        let min_a = min_eigenvalue(&hermitian_part(&a));
        if min_a < -NORMALITY_TOL * an.max(1.0) {
            return Err(Error::NotAccretive { min_eig: min_a });
        }
        let coercivity = min_eigenvalue(&hermitian_part(&b));
        if coercivity <= 0.0 {
            return Err(Error::NotAccretive { min_eig: coercivity });
        }
        Ok(Self { a, b, phi, psi, lambdas, coercivity })
    }

    /// The constant `c` in `Re B ≥ c`.
    pub fn coercivity(&self) -> f64 {
        self.coercivity
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }
}

fn min_eigenvalue(h: &CMatrix) -> f64 {
    h.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Matrix elements along the coupling list and the projected reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitReport {
    pub lambdas: Vec<f64>,
    /// `⟨φ, (λA + B)⁻¹ψ⟩` as `[re, im]`.
    pub values: Vec<[f64; 2]>,
    /// Polynomial extrapolation in `1/λ` of the last three values.
    pub extrapolated: [f64; 2],
    pub reference: [f64; 2],
    pub kernel_dim: usize,
    /// Largest `‖(λA + B)⁻¹ψ‖ · c / ‖ψ‖`, at most one by coercivity.
    pub max_bound_ratio: f64,
    /// Coupling `‖B‖ / σ` beyond which `(λA + B)⁻¹` has a convergent expansion
    /// in `1/λ`, with `σ` the smallest nonzero singular value of `A`.
    pub asymptotic_onset: f64,
    /// Log-log slope of `|value − reference|` against `λ` over couplings past
    /// the onset (the last three when fewer qualify), when the errors are resolvable.
    pub decay_slope: Option<f64>,
}

impl LimitReport {
    /// `|value(λ_max) − reference|`.
    pub fn final_error(&self) -> f64 {
        let v = self.values[self.values.len() - 1];
        (C64::new(v[0], v[1]) - C64::new(self.reference[0], self.reference[1])).norm()
    }

    pub fn reference_modulus(&self) -> f64 {
        C64::new(self.reference[0], self.reference[1]).norm()
    }
}

fn pair(z: C64) -> [f64; 2] {
    [z.re, z.im]
}

/// Solves `(λA + B)x = ψ` along the coupling list and compares with `⟨Πφ, (ΠBΠ)⁻¹Πψ⟩`.
pub fn limit_resolvent(prob: &ResolventProblem) -> Result<LimitReport> {
    let psi_norm = prob.psi.norm();
    let mut values = Vec::with_capacity(prob.lambdas.len());
    let mut max_bound_ratio: f64 = 0.0;
    for &lam in &prob.lambdas {
        let m = &prob.a * C64::new(lam, 0.0) + &prob.b;
        let (x, _) = solve(&m, &prob.psi)?;
        max_bound_ratio = max_bound_ratio.max(x.norm() * prob.coercivity / psi_norm);
        values.push(prob.phi.dotc(&x));
    }

    let kernel = null_space(&prob.a, KERNEL_TOL);
    let reference = if kernel.ncols() == 0 {
        C64::new(0.0, 0.0)
    } else {
        let kb = kernel.adjoint() * &prob.b * &kernel;
        let (y, _) = solve(&kb, &(kernel.adjoint() * &prob.psi))?;
        (kernel.adjoint() * &prob.phi).dotc(&y)
    };

    let k = values.len();
    let extrapolated = if k >= 3 {
        let xs: Vec<f64> = prob.lambdas[k - 3..].iter().map(|l| 1.0 / l).collect();
        extrapolate_to_zero(&xs, &values[k - 3..])
    } else {
        values[k - 1]
    };

    let onset = asymptotic_onset(&prob.a, &prob.b);
    let first = prob.lambdas.iter().position(|&l| l >= onset).unwrap_or(k).min(k.saturating_sub(3));
    let scale = 1.0 + reference.norm();
    let pts: Vec<(f64, f64)> = prob.lambdas[first..]
        .iter()
        .zip(&values[first..])
        .map(|(&l, &v)| (l, (v - reference).norm()))
        .filter(|&(_, e)| e > 1e-11 * scale)
        .map(|(l, e)| (l.ln(), e.ln()))
        .collect();
    let decay_slope = (pts.len() >= 3).then(|| {
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        sxy / sxx
    });

    Ok(LimitReport {
        lambdas: prob.lambdas.clone(),
        values: values.iter().copied().map(pair).collect(),
        extrapolated: pair(extrapolated),
        reference: pair(reference),
        kernel_dim: kernel.ncols(),
        max_bound_ratio,
        asymptotic_onset: onset,
        decay_slope,
    })
}

// Below the onset the error is still dominated by `B` and the log-log curve
// has not reached its asymptotic slope, so fitting there understates the rate.
fn asymptotic_onset(a: &CMatrix, b: &CMatrix) -> f64 {
    let sv = a.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let range_min = sv.iter().copied().filter(|&s| s > KERNEL_TOL * smax).fold(f64::INFINITY, f64::min);
    if range_min.is_finite() {
        spectral_norm(b) / range_min
    } else {
        0.0
    }
}

fn random_complex(rng: &mut ChaCha8Rng) -> C64 {
    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn random_unitary(n: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(n, n, |_, _| random_complex(rng)).qr().q()
}

/// A random problem of size `n` whose `A` has a kernel of dimension `kernel_dim`.
///
/// `A = U diag(d) U†` with unitary `U` and eigenvalues in the closed right half
/// plane; `B = c + PP† + (S − S†)` has `Re B ≥ c`.
pub fn random_problem(n: usize, kernel_dim: usize, lambdas: Vec<f64>, seed: u64) -> Result<ResolventProblem> {
    if kernel_dim > n {
        return Err(Error::Precondition("kernel larger than the space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = random_unitary(n, &mut rng);
    let diag = CVector::from_fn(n, |i, _| {
        if i < kernel_dim {
            C64::new(0.0, 0.0)
        } else {
            C64::new(rng.random_range(0.2..2.0), rng.random_range(-2.0..2.0))
        }
    });
    let a = &u * CMatrix::from_diagonal(&diag) * u.adjoint();
    let p = CMatrix::from_fn(n, n, |_, _| random_complex(&mut rng));
    let s = CMatrix::from_fn(n, n, |_, _| random_complex(&mut rng));
    let c = rng.random_range(0.3..1.0);
    let b = CMatrix::identity(n, n) * C64::new(c, 0.0) + &p * p.adjoint() * C64::new(0.1, 0.0) + (&s - s.adjoint());
    let phi = CVector::from_fn(n, |_, _| random_complex(&mut rng));
    let psi = CVector::from_fn(n, |_, _| random_complex(&mut rng));
    ResolventProblem::new(a, b, phi, psi, lambdas)
}

/// Couplings `10⁰ … 10⁶`.
pub fn default_lambdas() -> Vec<f64> {
    (0..=6).map(|k| 10f64.powi(k)).collect()
}

/// Aggregate of a randomized batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub problems: usize,
    pub size: usize,
    pub kernel_dim: usize,
    /// Largest `|value(λ_max) − reference| / (1 + |reference|)`.
    pub worst_error: f64,
    /// Steepest-to-shallowest: the largest (least negative) fitted decay slope.
    pub worst_slope: Option<f64>,
    pub worst_bound_ratio: f64,
}

/// Runs `count` random problems with seeds `seed, seed + 1, …`.
pub fn run_batch(count: usize, size: usize, kernel_dim: usize, seed: u64) -> Result<BatchSummary> {
    let mut worst_error: f64 = 0.0;
    let mut worst_slope: Option<f64> = None;
    let mut worst_bound_ratio: f64 = 0.0;
    for k in 0..count {
        let prob = random_problem(size, kernel_dim, default_lambdas(), seed.wrapping_add(k as u64))?;
        let rep = limit_resolvent(&prob)?;
        worst_error = worst_error.max(rep.final_error() / (1.0 + rep.reference_modulus()));
        worst_bound_ratio = worst_bound_ratio.max(rep.max_bound_ratio);
        if let Some(s) = rep.decay_slope {
            worst_slope = Some(worst_slope.map_or(s, |w: f64| w.max(s)));
        }
    }
    Ok(BatchSummary { problems: count, size, kernel_dim, worst_error, worst_slope, worst_bound_ratio })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_example() {
        let a = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(0.0, 0.0), C64::new(0.0, 1.0), C64::new(2.0, 0.0)]));
        let b = CMatrix::identity(3, 3);
        let phi = CVector::from_vec(vec![C64::new(0.5, 1.0), C64::new(2.0, 0.0), C64::new(1.0, -1.0)]);
        let psi = CVector::from_vec(vec![C64::new(1.5, -0.5), C64::new(1.0, 1.0), C64::new(0.3, 0.0)]);
        let prob = ResolventProblem::new(a, b, phi.clone(), psi.clone(), default_lambdas()).unwrap();
        let rep = limit_resolvent(&prob).unwrap();
        let expect = phi[0].conj() * psi[0];
        assert_eq!(rep.kernel_dim, 1);
        assert!((C64::new(rep.reference[0], rep.reference[1]) - expect).norm() < 1e-12);
        assert!(rep.final_error() < 1e-5);
    }

    #[test]
    fn rejects_non_normal() {
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 1)] = C64::new(1.0, 0.0);
        let err = ResolventProblem::new(a, CMatrix::identity(2, 2), CVector::zeros(2), CVector::zeros(2), vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::NotNormal { .. }));
    }

    #[test]
    fn rejects_non_accretive() {
        let a = CMatrix::identity(2, 2) * C64::new(-1.0, 0.0);
        let err = ResolventProblem::new(a, CMatrix::identity(2, 2), CVector::zeros(2), CVector::zeros(2), vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::NotAccretive { .. }));
        let b = CMatrix::zeros(2, 2);
        let err = ResolventProblem::new(CMatrix::identity(2, 2), b, CVector::zeros(2), CVector::zeros(2), vec![1.0]).unwrap_err();
        assert!(matches!(err, Error::NotAccretive { .. }));
    }

    #[test]
    fn random_problem_is_valid() {
        let prob = random_problem(12, 3, default_lambdas(), 5).unwrap();
        assert!(prob.coercivity() > 0.0);
        let rep = limit_resolvent(&prob).unwrap();
        assert_eq!(rep.kernel_dim, 3);
        assert!(rep.max_bound_ratio <= 1.0 + 1e-9);
    }

    #[test]
    fn kernel_free_values_vanish() {
        let rep = limit_resolvent(&random_problem(10, 0, default_lambdas(), 8).unwrap()).unwrap();
        assert_eq!(rep.reference, [0.0, 0.0]);
        assert!(rep.decay_slope.unwrap() <= -0.9);
    }

    #[test]
    fn small_batch() {
        let s = run_batch(5, 8, 2, 100).unwrap();
        assert!(s.worst_error < 1e-4, "{s:?}");
        assert!(s.worst_slope.unwrap() <= -0.9);
    }
}
