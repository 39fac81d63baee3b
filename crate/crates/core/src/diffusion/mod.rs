//! Diffusion constants from mean-square displacement, Abel averaging and the
//! fiber-space resolvent.

mod fiber;
mod localization;

pub use fiber::{closed_form_ballistic, resolvent_diffusion, resolvent_over_configs, FiberSpace, ResolventReport, DEFAULT_FIBER_BAND};
pub use localization::{launch_grid, localization_length, localization_length_from, small_g_slope, LocalizationEstimate, SlopeEstimate};

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, Distribution};
use crate::error::{Error, Result};
use crate::evolution::{evolve_observed, EvolveOptions, Generator, GeneratorParams};
use crate::kernel::GainKernel;
use crate::lattice::{LatticeBox, MAX_DIM};
use crate::linalg::{least_squares, weighted_line_fit};
use crate::state::DensityState;

/// Second-moment matrix `M_ij` at one time (only the leading `dim × dim` block is used).
pub type Moments = [[f64; MAX_DIM]; MAX_DIM];

/// Largest Abel tail correction accepted, as a fraction of the integral.
pub const ABEL_TAIL_LIMIT: f64 = 0.1;

/// Smallest `η · T` for which the Abel integral is considered resolved.
pub const ABEL_MIN_HORIZON: f64 = 5.0;

/// Relative curvature above which a linear fit is flagged.
pub const CURVATURE_FLAG: f64 = 0.2;

/// Per-seed and ensemble second moments on a time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdSeries {
    pub dim: usize,
    pub params: GeneratorParams,
    pub times: Vec<f64>,
    pub seeds: Vec<u64>,
    /// `per_seed[s][k]` is the moment matrix of seed `s` at `times[k]`.
    pub per_seed: Vec<Vec<Moments>>,
    pub mean: Vec<Moments>,
    /// Standard error of the mean; zero when only one seed is present.
    pub stderr: Vec<Moments>,
}

impl MsdSeries {
    /// Assembles a series and its ensemble statistics from per-seed curves.
    pub fn from_runs(dim: usize, params: GeneratorParams, times: Vec<f64>, seeds: Vec<u64>, per_seed: Vec<Vec<Moments>>) -> Result<Self> {
        if per_seed.is_empty() || per_seed.len() != seeds.len() {
            return Err(Error::Precondition("need one moment curve per seed".into()));
        }
        if per_seed.iter().any(|c| c.len() != times.len()) {
            return Err(Error::Precondition("moment curve length differs from time grid".into()));
        }
        let mut mean = vec![[[0.0; MAX_DIM]; MAX_DIM]; times.len()];
        let mut stderr = mean.clone();
        for k in 0..times.len() {
            for i in 0..dim {
                for j in 0..dim {
                    let vals: Vec<f64> = per_seed.iter().map(|c| c[k][i][j]).collect();
                    let (m, se) = mean_stderr(&vals);
                    mean[k][i][j] = m;
                    stderr[k][i][j] = se;
                }
            }
        }
        Ok(Self { dim, params, times, seeds, per_seed, mean, stderr })
    }

    /// Mean curve of component `(i, j)`.
    pub fn component(&self, i: usize, j: usize) -> Vec<f64> {
        self.mean.iter().map(|m| m[i][j]).collect()
    }

    pub fn t_max(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Box, coherence band and integrator settings for an ensemble run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MsdSetup {
    pub lattice: LatticeBox,
    /// Retained `|x − y|∞`; `None` keeps every pair.
    pub coherence: Option<usize>,
    pub evolve: EvolveOptions,
}

/// Evolves `|0⟩⟨0|` for each seed and records `M_ij(t)`.
///
/// Seeds run in parallel; results are collected in the order given.
pub fn msd_ensemble(
    params: &GeneratorParams,
    kernel: &GainKernel,
    dist: &Distribution,
    seeds: &[u64],
    times: &[f64],
    setup: &MsdSetup,
) -> Result<MsdSeries> {
    params.check()?;
    if seeds.is_empty() {
        return Err(Error::Precondition("no seeds given".into()));
    }
    let dim = setup.lattice.dim();
    let per_seed = seeds
        .par_iter()
        .map(|&seed| {
            let field = DisorderField::sample(setup.lattice, dist, seed)?;
            single_run(params, kernel, &field, times, setup)
        })
        .collect::<Result<Vec<_>>>()?;
    MsdSeries::from_runs(dim, *params, times.to_vec(), seeds.to_vec(), per_seed)
}

/// Moment curve of one disorder realization.
pub fn single_run(params: &GeneratorParams, kernel: &GainKernel, field: &DisorderField, times: &[f64], setup: &MsdSetup) -> Result<Vec<Moments>> {
    let dim = setup.lattice.dim();
    let state = DensityState::point_state_banded(setup.lattice, setup.coherence);
    let generator = Generator::for_state(&state, params, field, kernel)?;
    let mut curve = Vec::with_capacity(times.len());
    evolve_observed(&generator, &state, times, &setup.evolve, |_, _, s| {
        let mut m = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..dim {
            for j in i..dim {
                m[i][j] = s.position_moment(i, j)?;
                m[j][i] = m[i][j];
            }
        }
        curve.push(m);
        Ok(())
    })?;
    Ok(curve)
}

/// How a diffusion estimate was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Fit,
    Abel,
    Resolvent,
    ClosedForm,
}

/// Model parameters and analysis knobs behind an estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Echo {
    pub u: f64,
    pub lambda: f64,
    pub g: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<[f64; 2]>,
}

impl Echo {
    fn of(p: &GeneratorParams) -> Self {
        Self { u: p.u, lambda: p.lambda, g: p.g, ..Self::default() }
    }
}

/// Analytic bracket for `D`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

/// A diffusion matrix with its uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionEstimate {
    pub method: Method,
    #[serde(rename = "D")]
    pub matrix: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    pub echo: Echo,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Bounds>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl DiffusionEstimate {
    fn new(method: Method, dim: usize, echo: Echo) -> Self {
        Self {
            method,
            matrix: vec![vec![0.0; dim]; dim],
            stderr: vec![vec![0.0; dim]; dim],
            residual: None,
            echo,
            bounds: None,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.len()
    }

    /// Isotropic value: the average of the diagonal.
    pub fn value(&self) -> f64 {
        (0..self.dim()).map(|i| self.matrix[i][i]).sum::<f64>() / self.dim() as f64
    }

    /// Uncertainty of [`value`](Self::value). Axes share seeds, so their errors
    /// are averaged rather than added in quadrature.
    pub fn value_stderr(&self) -> f64 {
        (0..self.dim()).map(|i| self.stderr[i][i]).sum::<f64>() / self.dim() as f64
    }
}

/// Least-squares slope of `M_ij(t)` over `window`.
///
/// The error combines the residual scatter of the mean curve with the spread
/// of per-seed slopes.
pub fn fit_diffusion(msd: &MsdSeries, window: [f64; 2]) -> Result<DiffusionEstimate> {
    let [t1, t2] = window;
    let eps = 1e-9 * t2.abs().max(1.0);
    let idx: Vec<usize> = (0..msd.times.len()).filter(|&k| msd.times[k] >= t1 - eps && msd.times[k] <= t2 + eps).collect();
    if t1 >= t2 || idx.len() < 3 {
        return Err(Error::WindowTooShort { t1, t2, points: idx.len() });
    }
    let x: Vec<f64> = idx.iter().map(|&k| msd.times[k]).collect();
    let ones = vec![1.0; x.len()];
    let dim = msd.dim;
    let mut est = DiffusionEstimate::new(Method::Fit, dim, Echo { window: Some(window), ..Echo::of(&msd.params) });
    let mut curvature: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let y: Vec<f64> = idx.iter().map(|&k| msd.mean[k][i][j]).collect();
            let fit = weighted_line_fit(&x, &y, &ones);
            let fit_err = fit.slope_stderr * fit.chi2_red.sqrt();
            let slopes: Vec<f64> = msd
                .per_seed
                .iter()
                .map(|c| weighted_line_fit(&x, &idx.iter().map(|&k| c[k][i][j]).collect::<Vec<_>>(), &ones).slope)
                .collect();
            let (_, ens_err) = mean_stderr(&slopes);
            est.matrix[i][j] = fit.slope;
            est.stderr[i][j] = (fit_err.powi(2) + ens_err.powi(2)).sqrt();
            if i == j {
                curvature = curvature.max(curvature_ratio(&x, &y, fit.slope));
            }
        }
    }
    est.diagnostics.insert("curvature".into(), curvature);
    est.diagnostics.insert("curvature_flag".into(), if curvature > CURVATURE_FLAG { 1.0 } else { 0.0 });
    est.diagnostics.insert("points".into(), idx.len() as f64);
    Ok(est)
}

/// `|c₂|·(t₂ − t₁) / |slope|` from a quadratic fit of `y(t)`.
fn curvature_ratio(x: &[f64], y: &[f64], slope: f64) -> f64 {
    if x.len() < 4 {
        return 0.0;
    }
    let mid = 0.5 * (x[0] + x[x.len() - 1]);
    let design = nalgebra::DMatrix::from_fn(x.len(), 3, |r, c| (x[r] - mid).powi(c as i32));
    let span = x[x.len() - 1] - x[0];
    match least_squares(&design, y) {
        Some(coef) if slope.abs() > 0.0 => (coef[2] * span).abs() / slope.abs(),
        Some(coef) if coef[2] != 0.0 => f64::INFINITY,
        _ => 0.0,
    }
}

/// `η² ∫₀^∞ e^{−ηt} f(t) dt` for the piecewise-linear interpolant of `f`, continued
/// past the grid along its last segment. Returns `(total, tail)`.
pub fn abel_integral(times: &[f64], f: &[f64], eta: f64) -> (f64, f64) {
    let mut body = 0.0;
    for k in 0..times.len() - 1 {
        let (t0, t1) = (times[k], times[k + 1]);
        let h = t1 - t0;
        let s = (f[k + 1] - f[k]) / h;
        let e0 = (-eta * t0).exp();
        let x = eta * h;
        // ∫ e^{−ηt} dt and ∫ (t − t0) e^{−ηt} dt over the segment.
        let i0 = e0 * -(-x).exp_m1() / eta;
        let i1 = e0 * (-(-x).exp_m1() - x * (-x).exp()) / (eta * eta);
        body += f[k] * i0 + s * i1;
    }
    let n = times.len();
    let t_end = times[n - 1];
    let slope = if n >= 2 { (f[n - 1] - f[n - 2]) / (t_end - times[n - 2]) } else { 0.0 };
    let e_end = (-eta * t_end).exp();
    let tail = f[n - 1] * e_end / eta + slope * e_end / (eta * eta);
    let scale = eta * eta;
    ((body + tail) * scale, tail * scale)
}

/// Abel-averaged diffusion `D(g, η) = η² ∫₀^∞ e^{−ηt} M_ii(t) dt`.
pub fn abel_diffusion(msd: &MsdSeries, eta: f64) -> Result<DiffusionEstimate> {
    if !(eta > 0.0) || eta * msd.t_max() < ABEL_MIN_HORIZON {
        return Err(Error::Precondition(format!("eta·T = {} is below {ABEL_MIN_HORIZON}", eta * msd.t_max())));
    }
    if msd.times.len() < 2 {
        return Err(Error::Precondition("Abel average needs at least two times".into()));
    }
    let dim = msd.dim;
    let mut est = DiffusionEstimate::new(Method::Abel, dim, Echo { eta: Some(eta), ..Echo::of(&msd.params) });
    let mut worst_tail: f64 = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let vals: Vec<f64> = msd
                .per_seed
                .iter()
                .map(|c| abel_integral(&msd.times, &c.iter().map(|m| m[i][j]).collect::<Vec<_>>(), eta).0)
                .collect();
            let (m, se) = mean_stderr(&vals);
            est.matrix[i][j] = m;
            est.stderr[i][j] = se;
            if i == j {
                let (total, tail) = abel_integral(&msd.times, &msd.component(i, i), eta);
                if total.abs() > 0.0 {
                    worst_tail = worst_tail.max((tail / total).abs());
                }
            }
        }
    }
    est.diagnostics.insert("tail_fraction".into(), worst_tail);
    if worst_tail > ABEL_TAIL_LIMIT {
        return Err(Error::TailDominates { fraction: worst_tail });
    }
    Ok(est)
}

/// Two-point Richardson combination `2·D(η/2) − D(η)`, removing the `O(η)` bias
/// that an initial offset in `M(t)` leaves in the Abel average.
pub fn abel_extrapolated(msd: &MsdSeries, eta: f64) -> Result<DiffusionEstimate> {
    let coarse = abel_diffusion(msd, eta)?;
    let fine = abel_diffusion(msd, 0.5 * eta)?;
    let dim = msd.dim;
    let mut est = fine.clone();
    for i in 0..dim {
        for j in 0..dim {
            let per_seed: Vec<f64> = msd
                .per_seed
                .iter()
                .map(|c| {
                    let f: Vec<f64> = c.iter().map(|m| m[i][j]).collect();
                    2.0 * abel_integral(&msd.times, &f, 0.5 * eta).0 - abel_integral(&msd.times, &f, eta).0
                })
                .collect();
            let (m, se) = mean_stderr(&per_seed);
            est.matrix[i][j] = m;
            est.stderr[i][j] = se;
        }
    }
    est.diagnostics.insert("eta_coarse".into(), eta);
    est.diagnostics.insert("value_coarse".into(), coarse.value());
    est.diagnostics.insert("value_fine".into(), fine.value());
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, presets};

    fn synthetic(f: impl Fn(f64, usize) -> f64, t_max: f64, dt: f64, seeds: usize) -> MsdSeries {
        let n = (t_max / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        let per_seed = (0..seeds)
            .map(|s| times.iter().map(|&t| [[f(t, s), 0.0], [0.0, 0.0]]).collect())
            .collect();
        MsdSeries::from_runs(1, GeneratorParams::default(), times, (0..seeds as u64).collect(), per_seed).unwrap()
    }

    #[test]
    fn abel_of_linear_growth_is_exact() {
        let msd = synthetic(|t, _| 2.5 * t, 60.0, 0.25, 1);
        for eta in [0.1, 0.3, 1.0] {
            let d = abel_diffusion(&msd, eta).unwrap();
            assert!((d.value() - 2.5).abs() < 1e-12, "{}", d.value());
        }
    }

    #[test]
    fn abel_of_ballistic_growth() {
        let msd = synthetic(|t, _| 0.7 * t * t, 80.0, 0.01, 1);
        let eta = 0.2;
        let d = abel_diffusion(&msd, eta).unwrap();
        // Quadratic tail beyond the grid is continued linearly, so only the tail term is approximate.
        assert!((d.value() - 2.0 * 0.7 / eta).abs() / (2.0 * 0.7 / eta) < 2e-5, "{}", d.value());
    }

    #[test]
    fn abel_rejects_short_horizon() {
        let msd = synthetic(|t, _| t, 10.0, 0.5, 1);
        assert!(matches!(abel_diffusion(&msd, 0.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn abel_tail_check() {
        let msd = synthetic(|t, _| t * t * t, 6.0, 0.1, 1);
        assert!(matches!(abel_diffusion(&msd, 1.0), Err(Error::TailDominates { .. })));
    }

    #[test]
    fn richardson_removes_offset() {
        let msd = synthetic(|t, _| 1.5 * t + 4.0 * (1.0 - (-t).exp()), 200.0, 0.1, 1);
        let plain = abel_diffusion(&msd, 0.1).unwrap().value();
        let rich = abel_extrapolated(&msd, 0.1).unwrap().value();
        assert!((plain - 1.5).abs() > 0.2);
        assert!((rich - 1.5).abs() < 0.02, "{rich}");
    }

    #[test]
    fn fit_recovers_noisy_line() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let noise: Vec<f64> = (0..=100).map(|_| 0.01 * (rng.random::<f64>() - 0.5) * 12f64.sqrt()).collect();
        let msd = synthetic(|t, _| 3.0 * t + noise[(t / 0.1).round() as usize], 10.0, 0.1, 1);
        let d = fit_diffusion(&msd, [1.0, 10.0]).unwrap();
        assert!((d.value() - 3.0).abs() < 4.0 * d.value_stderr(), "{} ± {}", d.value(), d.value_stderr());
        assert!(d.value_stderr() < 1e-2);
        assert_eq!(d.diagnostics["curvature_flag"], 0.0);
    }

    #[test]
    fn fit_flags_curvature() {
        let msd = synthetic(|t, _| t * t, 10.0, 0.1, 1);
        let d = fit_diffusion(&msd, [2.0, 10.0]).unwrap();
        assert_eq!(d.diagnostics["curvature_flag"], 1.0);
    }

    #[test]
    fn fit_window_checks() {
        let msd = synthetic(|t, _| t, 10.0, 1.0, 1);
        assert!(matches!(fit_diffusion(&msd, [3.0, 4.0]), Err(Error::WindowTooShort { points: 2, .. })));
        assert!(matches!(fit_diffusion(&msd, [5.0, 5.0]), Err(Error::WindowTooShort { .. })));
    }

    #[test]
    fn ensemble_error_from_seed_spread() {
        let msd = synthetic(|t, s| (1.0 + 0.1 * s as f64) * t, 10.0, 0.5, 4);
        let d = fit_diffusion(&msd, [1.0, 10.0]).unwrap();
        assert!((d.value() - 1.15).abs() < 1e-10);
        let (_, se) = mean_stderr(&[1.0, 1.1, 1.2, 1.3]);
        assert!((d.value_stderr() - se).abs() < 1e-9);
    }

    #[test]
    fn no_hopping_no_spreading() {
        let lattice = LatticeBox::truncated(1, 5).unwrap();
        let kernel = build_kernel(&presets::cosine(1, 16), 2).unwrap();
        let params = GeneratorParams::new(0.0, 2.0, 0.5).unwrap();
        let setup = MsdSetup { lattice, coherence: None, evolve: EvolveOptions::default() };
        let times: Vec<f64> = (0..=5).map(f64::from).collect();
        let msd = msd_ensemble(&params, &kernel, &Distribution::default(), &[1, 2], &times, &setup).unwrap();
        assert!(msd.mean.iter().all(|m| m[0][0] == 0.0));
    }

    #[test]
    fn free_particle_is_ballistic() {
        let lattice = LatticeBox::truncated(1, 20).unwrap();
        let kernel = build_kernel(&presets::cosine(1, 16), 2).unwrap();
        let params = GeneratorParams::new(1.0, 0.0, 0.0).unwrap();
        let setup = MsdSetup { lattice, coherence: None, evolve: EvolveOptions::default() };
        let times: Vec<f64> = (0..=8).map(|k| 0.25 * k as f64).collect();
        let msd = msd_ensemble(&params, &kernel, &Distribution::default(), &[0], &times, &setup).unwrap();
        for (t, m) in msd.times.iter().zip(&msd.mean) {
            assert!((m[0][0] - 2.0 * t * t).abs() < 1e-7, "t={t}: {}", m[0][0]);
        }
    }

    #[test]
    fn estimate_serializes_with_method_tag() {
        let msd = synthetic(|t, _| t, 10.0, 0.5, 2);
        let json = serde_json::to_string(&fit_diffusion(&msd, [1.0, 9.0]).unwrap()).unwrap();
        assert!(json.contains("\"method\":\"fit\""));
        assert!(json.contains("\"D\":[[1"));
    }
}
