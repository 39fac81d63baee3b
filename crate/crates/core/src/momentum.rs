//! The quasi-momentum jump process on a discretized torus.
//!
//! The dissipator acts on Wigner functions as the generator of a Markov jump
//! process: momentum `q` jumps to `p` at rate `r̂(p, q) dp`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::kernel::{grid_points, GainKernel};
use crate::lattice::MAX_DIM;

/// Rates on the `n_q^d` grid with Haar cell weight `1/n_q^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpProcessModel {
    dim: usize,
    n_q: usize,
    /// `rates[(p, q)] = r̂(p, q)`.
    rates: DMatrix<f64>,
    /// Exit rates `Λ(p) = ∫ r̂(q, p) dq` of the sampled (clipped) process.
    exit: Vec<f64>,
    /// Positive part of `rates`, used when drawing jump targets.
    sampling: DMatrix<f64>,
}

/// Largest negative ripple, relative to `max r̂`, accepted from a truncated kernel.
pub const RIPPLE_TOL: f64 = 0.05;

impl JumpProcessModel {
    /// Samples `r̂` from a kernel.
    ///
    /// A finite coherence window can leave a small negative ripple in `r̂`.
    /// Ripple down to `-RIPPLE_TOL · max r̂` is kept in the generator, so that
    /// spectral quantities agree with the kernel itself, and is dropped only
    /// when drawing jump targets. Anything more negative is rejected.
    pub fn from_kernel(kernel: &GainKernel, n_q: usize) -> Result<Self> {
        Self::from_rates(kernel.dim(), n_q, kernel.density_on_grid(n_q))
    }

    pub fn from_rates(dim: usize, n_q: usize, rates: DMatrix<f64>) -> Result<Self> {
        let n = n_q.pow(dim as u32);
        if rates.nrows() != n || rates.ncols() != n {
            return Err(Error::Precondition(format!("rate matrix must be {n}x{n}")));
        }
        let top = rates.iter().copied().fold(0.0, f64::max);
        let floor = -RIPPLE_TOL * top.max(f64::MIN_POSITIVE);
        if let Some(v) = rates.iter().find(|&&v| v < floor) {
            return Err(Error::Precondition(format!("negative jump rate {v:e}")));
        }
        let cell = 1.0 / n as f64;
        let sampling = rates.map(|v| v.max(0.0));
        let exit = (0..n).map(|p| sampling.column(p).sum() * cell).collect();
        Ok(Self { dim, n_q, rates, exit, sampling })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_q(&self) -> usize {
        self.n_q
    }

    pub fn n_states(&self) -> usize {
        self.exit.len()
    }

    pub fn rates(&self) -> &DMatrix<f64> {
        &self.rates
    }

    /// Total weight of the negative ripple removed for sampling, per unit exit rate.
    pub fn clipped_fraction(&self) -> f64 {
        let neg: f64 = self.rates.iter().filter(|&&v| v < 0.0).map(|v| -v).sum();
        neg / self.sampling.sum().max(f64::MIN_POSITIVE)
    }

    /// Exit rate `Λ(p)` of each grid state.
    pub fn exit_rates(&self) -> &[f64] {
        &self.exit
    }

    /// Torus coordinates of grid state `k`.
    pub fn point(&self, k: usize) -> [f64; MAX_DIM] {
        grid_points(self.dim, self.n_q)[k]
    }
}

/// A simulated trajectory: jump times with the state entered at each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    /// `(t, state)` pairs, starting with `(0, p0)`.
    pub events: Vec<(f64, usize)>,
    /// Whether the path stopped in a state with zero exit rate.
    pub absorbed: bool,
}

impl JumpPath {
    /// The state occupied at time `t`.
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.events.partition_point(|e| e.0 <= t);
        self.events[k.saturating_sub(1)].1
    }
}

fn sample_target(model: &JumpProcessModel, from: usize, rng: &mut ChaCha8Rng) -> usize {
    let col = model.sampling.column(from);
    let total: f64 = col.sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in col.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    col.iter().rposition(|&w| w > 0.0).unwrap_or(from)
}

/// Continuous-time path from `p0` up to time `horizon`.
pub fn simulate(model: &JumpProcessModel, p0: usize, horizon: f64, seed: u64) -> JumpPath {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = vec![(0.0, p0)];
    let (mut t, mut cur) = (0.0, p0);
    loop {
        let rate = model.exit[cur];
        if rate <= 0.0 {
            return JumpPath { events, absorbed: true };
        }
        t += -(1.0 - rng.random::<f64>()).ln() / rate;
        if t > horizon {
            return JumpPath { events, absorbed: false };
        }
        cur = sample_target(model, cur, &mut rng);
        events.push((t, cur));
    }
}

/// States of the embedded jump chain recorded every `stride` jumps.
pub fn sample_chain(model: &JumpProcessModel, p0: usize, samples: usize, stride: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cur = p0;
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples {
        for _ in 0..stride.max(1) {
            if model.exit[cur] <= 0.0 {
                return Err(Error::Precondition(format!("state {cur} is absorbing")));
            }
            cur = sample_target(model, cur, &mut rng);
        }
        out.push(cur);
    }
    Ok(out)
}

/// Dense generator `(𝓛f)(p) = ∫ r̂(p, q)[f(q) − f(p)] dq` on the grid.
pub fn generator_matrix(model: &JumpProcessModel) -> DMatrix<f64> {
    let n = model.n_states();
    let cell = 1.0 / n as f64;
    let mut a = &model.rates * cell;
    for p in 0..n {
        let row: f64 = a.row(p).sum();
        a[(p, p)] -= row;
    }
    a
}

/// Orthonormal basis (as columns) of the functions with zero mean.
fn mean_zero_basis(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::<f64>::identity(n, n);
    m.column_mut(0).fill(1.0);
    let q = m.qr().q();
    q.columns(1, n - 1).into_owned()
}

/// Gap of `−(𝓛 + 𝓛ᵀ)/2` on mean-zero functions.
pub fn mixing_rate(model: &JumpProcessModel) -> f64 {
    let a = generator_matrix(model);
    let sym = -(&a + a.transpose()) * 0.5;
    let q = mean_zero_basis(model.n_states());
    let reduced = q.transpose() * sym * &q;
    reduced.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Pearson statistic and upper-tail p-value of `counts` against the uniform law.
pub fn chi_square_uniform(counts: &[usize]) -> (f64, f64) {
    let total: usize = counts.iter().sum();
    let expect = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expect).powi(2) / expect).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).expect("at least two cells");
    (stat, 1.0 - dist.cdf(stat))
}

/// Total-variation distance to uniform of `n_paths` independent paths from `p0`, at each of `times`.
pub fn tv_to_uniform(model: &JumpProcessModel, p0: usize, times: &[f64], n_paths: usize, seed: u64) -> Vec<f64> {
    let horizon = times.iter().copied().fold(0.0, f64::max);
    let n = model.n_states();
    let counts = (0..n_paths)
        .into_par_iter()
        .fold(
            || vec![vec![0usize; n]; times.len()],
            |mut acc, i| {
                let path = simulate(model, p0, horizon, seed.wrapping_add(i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                for (k, &t) in times.iter().enumerate() {
                    acc[k][path.state_at(t)] += 1;
                }
                acc
            },
        )
        .reduce(
            || vec![vec![0usize; n]; times.len()],
            |mut a, b| {
                for (ra, rb) in a.iter_mut().zip(b) {
                    ra.iter_mut().zip(rb).for_each(|(x, y)| *x += y);
                }
                a
            },
        );
    counts
        .iter()
        .map(|c| 0.5 * c.iter().map(|&k| (k as f64 / n_paths as f64 - 1.0 / n as f64).abs()).sum::<f64>())
        .collect()
}

/// Exact law at time `t` from `p0`, via the matrix exponential of the forward generator.
pub fn exact_law(model: &JumpProcessModel, p0: usize, t: f64) -> DVector<f64> {
    let n = model.n_states();
    let cell = 1.0 / n as f64;
    // Forward equation: d/dt π(p) = Σ_q r̂(p, q) π(q) dq − Λ(p) π(p).
    let mut fwd = &model.rates * cell;
    for p in 0..n {
        fwd[(p, p)] -= model.rates.column(p).sum() * cell;
    }
    let mut init = DVector::zeros(n);
    init[p0] = 1.0;
    (fwd * t).exp() * init
}

/// Slope of `−ln(tv)` against time using points above `floor`.
pub fn fit_decay_rate(times: &[f64], tv: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = times.iter().zip(tv).filter(|(_, &v)| v > floor).map(|(&t, &v)| (t, v.ln())).collect();
    if pts.len() < 3 {
        return None;
    }
    let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let fit = crate::linalg::weighted_line_fit(&x, &y, &vec![1.0; x.len()]);
    Some(-fit.slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel, presets, spectral_gap, MeasureSpec};

    fn model(spec: &MeasureSpec, n_q: usize) -> JumpProcessModel {
        JumpProcessModel::from_kernel(&build_kernel(spec, 6).unwrap(), n_q).unwrap()
    }

    #[test]
    fn uniform_kernel_process() {
        let m = model(&presets::uniform(1, 16), 16);
        assert!(m.exit_rates().iter().all(|&r| (r - 1.0).abs() < 1e-12));
        let a = generator_matrix(&m);
        let n = m.n_states() as f64;
        for p in 0..m.n_states() {
            for q in 0..m.n_states() {
                let expect = 1.0 / n - if p == q { 1.0 } else { 0.0 };
                assert!((a[(p, q)] - expect).abs() < 1e-12);
            }
        }
        assert!((mixing_rate(&m) - 1.0).abs() < 1e-10);
        let path = simulate(&m, 0, 2000.0, 3);
        let holds: Vec<f64> = path.events.windows(2).map(|w| w[1].0 - w[0].0).collect();
        let mean = holds.iter().sum::<f64>() / holds.len() as f64;
        assert!((mean - 1.0).abs() < 4.0 / (holds.len() as f64).sqrt());
    }

    #[test]
    fn zero_kernel_absorbs() {
        let m = model(&MeasureSpec::default(), 8);
        let path = simulate(&m, 3, 100.0, 1);
        assert_eq!(path.events, vec![(0.0, 3)]);
        assert!(path.absorbed);
        assert!(mixing_rate(&m).abs() < 1e-12);
    }

    #[test]
    fn constants_are_annihilated() {
        let m = model(&presets::boson(&Default::default()), 32);
        let a = generator_matrix(&m);
        let ones = DVector::from_element(m.n_states(), 1.0);
        assert!((a * ones).amax() < 1e-13);
    }

    #[test]
    fn gap_matches_kernel_module() {
        for spec in [presets::cosine(1, 16), presets::boson(&Default::default())] {
            let k = build_kernel(&spec, 6).unwrap();
            let m = JumpProcessModel::from_kernel(&k, 64).unwrap();
            let g = spectral_gap(&k, 64).unwrap();
            assert!((mixing_rate(&m) - g.value).abs() < 1e-8);
        }
    }

    #[test]
    fn disconnected_kernel_does_not_mix() {
        let f = presets::violation_fixtures().into_iter().find(|f| f.name == "no-gap").unwrap();
        let m = model(&f.spec, 64);
        assert!(mixing_rate(&m).abs() < 1e-10);
    }

    #[test]
    fn symmetric_kernel_gives_self_adjoint_generator() {
        let m = model(&presets::boson(&Default::default()), 32);
        let a = generator_matrix(&m);
        assert!((&a - a.transpose()).amax() < 1e-12);
    }

    #[test]
    fn path_lookup() {
        let p = JumpPath { events: vec![(0.0, 1), (0.5, 2), (1.5, 3)], absorbed: false };
        assert_eq!(p.state_at(0.2), 1);
        assert_eq!(p.state_at(0.5), 2);
        assert_eq!(p.state_at(9.0), 3);
    }

    #[test]
    fn exact_law_relaxes() {
        let m = model(&presets::cosine(1, 16), 16);
        let law = exact_law(&m, 0, 30.0);
        assert!((law.sum() - 1.0).abs() < 1e-12);
        assert!(law.iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-6));
    }
}
