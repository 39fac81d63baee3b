use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_grid, GainKernel};
use crate::error::{Error, Result};
use crate::linalg::spectral_norm;

/// Relative change of the gap under grid doubling that triggers [`Error::GridTooCoarse`].
pub const GRID_REFINEMENT_TOL: f64 = 0.05;

/// The momentum-space spectral gap with its grid-refinement uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralGap {
    /// Gap on the requested grid.
    pub value: f64,
    /// Gap on the grid of twice the resolution.
    pub refined: f64,
    pub uncertainty: f64,
    pub n_q: usize,
    /// Mean-zero eigenvector (on the requested grid) realizing the gap.
    #[serde(skip)]
    pub witness: Vec<f64>,
}

impl SpectralGap {
    /// The smaller of the two grid values; using it keeps every bound conservative.
    pub fn conservative(&self) -> f64 {
        self.value.min(self.refined)
    }
}

/// Exit-rate maxima `max_p ∫ r̂(q, p) dq` (column) and `max_p ∫ r̂(p, q) dq` (row).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpBound {
    pub column_max: f64,
    pub row_max: f64,
    /// Largest pointwise mismatch between row and column integrals.
    pub row_column_mismatch: f64,
    /// Same maxima computed with `|r̂|`.
    pub abs_column_max: f64,
    pub abs_row_max: f64,
}

impl JumpBound {
    /// The jump bound `M`.
    pub fn value(&self) -> f64 {
        self.column_max
    }
}

/// Certified constants attached to a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub gap: SpectralGap,
    pub jump: JumpBound,
    pub opnorm: f64,
}

/// Symmetrized jump generator on the grid and its gap on mean-zero functions.
fn gap_on_grid(kernel: &GainKernel, n_q: usize) -> (f64, Vec<f64>) {
    let rhat = kernel.density_on_grid(n_q);
    let n = rhat.nrows();
    let cell = 1.0 / n as f64;
    let mut gen = rhat.clone() * cell;
    for p in 0..n {
        let exit: f64 = rhat.row(p).sum() * cell;
        gen[(p, p)] -= exit;
    }
    let mut neg_sym = -(&gen + gen.transpose()) * 0.5;
    // Project onto mean-zero functions and push the constant mode far up.
    let proj = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, cell);
    neg_sym = &proj * neg_sym * &proj;
    let shift = 2.0 * neg_sym.abs().max() * n as f64 + 1.0;
    neg_sym += DMatrix::from_element(n, n, shift * cell);
    crate::linalg::symmetric_lowest(&neg_sym)
}

/// Smallest eigenvalue of `−(𝓛 + 𝓛†)/2` on mean-zero grid functions.
pub fn spectral_gap(kernel: &GainKernel, n_q: usize) -> Result<SpectralGap> {
    check_grid(n_q)?;
    let (value, witness) = gap_on_grid(kernel, n_q);
    let (refined, _) = gap_on_grid(kernel, 2 * n_q);
    let scale = value.abs().max(refined.abs());
    let uncertainty = (value - refined).abs();
    if scale > 1e-10 && uncertainty > GRID_REFINEMENT_TOL * scale {
        return Err(Error::GridTooCoarse { coarse: value, fine: refined });
    }
    Ok(SpectralGap { value, refined, uncertainty, n_q, witness })
}

/// Maximal exit rate of the momentum jump process on the grid.
pub fn jump_rate_bound(kernel: &GainKernel, n_q: usize) -> Result<JumpBound> {
    check_grid(n_q)?;
    let rhat = kernel.density_on_grid(n_q);
    let n = rhat.nrows();
    let cell = 1.0 / n as f64;
    let cols: Vec<f64> = (0..n).map(|p| rhat.column(p).sum() * cell).collect();
    let rows: Vec<f64> = (0..n).map(|p| rhat.row(p).sum() * cell).collect();
    let abs_cols = (0..n).map(|p| rhat.column(p).abs().sum() * cell);
    let abs_rows = (0..n).map(|p| rhat.row(p).abs().sum() * cell);
    let max = |v: &mut dyn Iterator<Item = f64>| v.fold(f64::NEG_INFINITY, f64::max);
    Ok(JumpBound {
        column_max: max(&mut cols.iter().copied()),
        row_max: max(&mut rows.iter().copied()),
        row_column_mismatch: max(&mut cols.iter().zip(&rows).map(|(a, b)| (a - b).abs())),
        abs_column_max: max(&mut abs_cols.into_iter()),
        abs_row_max: max(&mut abs_rows.into_iter()),
    })
}

/// Largest singular value of `𝓛` restricted to inputs `|η| ≤ R`.
///
/// Outputs are kept up to radius `2R` so that the loss convolution is not cut.
pub fn operator_norm(kernel: &GainKernel) -> f64 {
    let r = kernel.radius();
    spectral_norm(&kernel.lindblad_block(2 * r, r))
}

/// Rescales `r → r/s`, `g → g·s` so that `‖𝓛‖ ≤ 1`; kernels already within
/// the bound are returned unchanged.
pub fn normalize(kernel: &GainKernel, g: f64) -> Result<(GainKernel, f64)> {
    if kernel.is_zero() {
        return Err(Error::ZeroKernel);
    }
    if !(g > 0.0) {
        return Err(Error::Precondition(format!("coupling must be positive, got {g}")));
    }
    let s = operator_norm(kernel);
    if s <= 1.0 + 1e-12 {
        return Ok((kernel.clone(), g));
    }
    Ok((kernel.scaled(1.0 / s), g * s))
}

/// Computes the gap, jump bound and operator norm of `kernel`.
pub fn certify(kernel: &GainKernel, n_q: usize) -> Result<Certificate> {
    Ok(Certificate { gap: spectral_gap(kernel, n_q)?, jump: jump_rate_bound(kernel, n_q)?, opnorm: operator_norm(kernel) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, presets, GainKernel};
    use crate::linalg::C64;

    #[test]
    fn uniform_gap_is_one() {
        let k = build_kernel(&presets::uniform(1, 16), 6).unwrap();
        let g = spectral_gap(&k, 16).unwrap();
        assert!((g.value - 1.0).abs() < 1e-12);
        let m = jump_rate_bound(&k, 16).unwrap();
        assert!((m.value() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_gap_and_jump_bound() {
        let k = build_kernel(&presets::cosine(1, 16), 6).unwrap();
        let g64 = spectral_gap(&k, 64).unwrap();
        let g128 = spectral_gap(&k, 128).unwrap();
        assert!((g64.value - g128.value).abs() < 1e-6);
        assert!((g64.value - 0.5).abs() < 1e-10);
        let m = jump_rate_bound(&k, 64).unwrap();
        assert!((m.value() - 1.0).abs() < 1e-10);
        assert!((m.column_max - m.row_max).abs() < 1e-10);
    }

    #[test]
    fn zero_kernel_has_no_gap() {
        let k = build_kernel(&crate::kernel::MeasureSpec::default(), 3).unwrap();
        assert_eq!(spectral_gap(&k, 16).unwrap().value.abs() < 1e-12, true);
        assert!(matches!(normalize(&k, 1.0), Err(Error::ZeroKernel)));
    }

    #[test]
    fn rejects_odd_grid() {
        let k = build_kernel(&presets::uniform(1, 16), 6).unwrap();
        assert!(matches!(spectral_gap(&k, 9), Err(Error::InvalidGrid(9))));
    }

    #[test]
    fn normalization_halves_a_doubled_kernel() {
        let k = build_kernel(&presets::cosine(1, 16), 6).unwrap().scaled(2.0);
        assert!((operator_norm(&k) - 2.0).abs() < 1e-10);
        let (n, g) = normalize(&k, 0.1).unwrap();
        assert!((operator_norm(&n) - 1.0).abs() < 1e-10);
        assert!((g - 0.2).abs() < 1e-12);
        let diff = k.values() * C64::new(0.1, 0.0) - n.values() * C64::new(g, 0.0);
        assert!(diff.norm() < 1e-14);
        let (same, g2) = normalize(&n, g).unwrap();
        assert_eq!(same, n);
        assert_eq!(g2, g);
    }

    #[test]
    fn gap_detects_coarse_grid() {
        // On an 8-point grid the offsets 2 and -6 alias onto one mode.
        let k = GainKernel::from_fn(1, 6, |xi, eta| {
            let v = match (xi == eta, xi[0].abs()) {
                (true, 0) => 1.0,
                (true, 2) => 0.5,
                (true, 6) => 0.45,
                _ => 0.0,
            };
            C64::new(v, 0.0)
        });
        assert!(matches!(spectral_gap(&k, 8), Err(Error::GridTooCoarse { .. })));
        let fine = spectral_gap(&k, 16).unwrap();
        assert!((fine.value - 0.5).abs() < 1e-10);
    }
}
