//! Ready-made measures: the uniform and cosine kernels, the mollified
//! infinite-temperature boson kernel, and fixtures that each break one
//! structural requirement.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{grid_points, Atom, MeasureSpec};
use super::validate::Requirement;

/// Grid resolution used for the shipped uniform and cosine measures.
pub const PRESET_GRID: usize = 16;
/// Grid resolution used for the shipped boson measure.
pub const BOSON_GRID: usize = 32;

/// Atoms `f(p, q) / n^{2d}` on the product grid, i.e. the density `f` sampled with Haar cell weights.
pub fn grid_density(dim: usize, n: usize, f: impl Fn(&[f64], &[f64]) -> f64) -> MeasureSpec {
    let pts = grid_points(dim, n);
    let cell = 1.0 / (pts.len() * pts.len()) as f64;
    let mut atoms = Vec::with_capacity(pts.len() * pts.len());
    for p in &pts {
        for q in &pts {
            let (p, q) = (&p[..dim], &q[..dim]);
            atoms.push(Atom { p: p.to_vec(), q: q.to_vec(), w: f(p, q) * cell });
        }
    }
    MeasureSpec { dim: Some(dim), atoms, symmetrize_pi: false, symmetrize_lattice: false }
}

/// `r̂ ≡ 1`: every momentum jumps to a uniformly random one at unit rate.
pub fn uniform(dim: usize, n: usize) -> MeasureSpec {
    grid_density(dim, n, |_, _| 1.0)
}

/// `r̂(p, q) = 1 + (1/d) Σ_i cos(p_i − q_i)`.
pub fn cosine(dim: usize, n: usize) -> MeasureSpec {
    grid_density(dim, n, |p, q| 1.0 + p.iter().zip(q).map(|(a, b)| (a - b).cos()).sum::<f64>() / dim as f64)
}

/// Trigonometric profile `c0 + c1 Σ_i cos(k_i)` used for the form factor and dispersion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CosineProfile {
    pub c0: f64,
    #[serde(default)]
    pub c1: f64,
}

impl CosineProfile {
    pub fn constant(c0: f64) -> Self {
        Self { c0, c1: 0.0 }
    }

    pub fn eval(&self, k: &[f64]) -> f64 {
        self.c0 + self.c1 * k.iter().map(|x| x.cos()).sum::<f64>()
    }
}

/// Parameters of the mollified infinite-temperature boson kernel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BosonParams {
    pub dim: usize,
    pub form_factor: CosineProfile,
    pub dispersion: CosineProfile,
    /// Width of the Gaussian replacing the energy delta.
    pub sigma: f64,
    pub u: f64,
    pub n_q: usize,
}

impl Default for BosonParams {
    fn default() -> Self {
        Self {
            dim: 1,
            form_factor: CosineProfile::constant(1.0),
            dispersion: CosineProfile::constant(0.0),
            sigma: 0.75,
            u: 1.0,
            n_q: BOSON_GRID,
        }
    }
}

/// Free-particle band energy `2u(d − Σ cos p_i)`.
pub fn band_energy(u: f64, p: &[f64]) -> f64 {
    2.0 * u * (p.len() as f64 - p.iter().map(|x| x.cos()).sum::<f64>())
}

fn gaussian(x: f64, sigma: f64) -> f64 {
    (-0.5 * (x / sigma).powi(2)).exp() / (sigma * TAU.sqrt())
}

/// Atoms `F(p−q)[φ_σ(ε(p)−ε(q)−ω(p−q)) + φ_σ(ε(p)−ε(q)+ω(p−q))]` times the grid cell measure.
///
/// `form` must be non-negative and even, `dispersion` even, `sigma > 0`.
pub fn boson_kernel_beta0(
    dim: usize,
    form: impl Fn(&[f64]) -> f64,
    dispersion: impl Fn(&[f64]) -> f64,
    sigma: f64,
    u: f64,
    n_q: usize,
) -> MeasureSpec {
    grid_density(dim, n_q, |p, q| {
        let k: Vec<f64> = p.iter().zip(q).map(|(a, b)| a - b).collect();
        let de = band_energy(u, p) - band_energy(u, q);
        let w = dispersion(&k);
        form(&k) * (gaussian(de - w, sigma) + gaussian(de + w, sigma))
    })
}

/// [`boson_kernel_beta0`] with cosine-profile form factor and dispersion.
pub fn boson(params: &BosonParams) -> MeasureSpec {
    let BosonParams { dim, form_factor, dispersion, sigma, u, n_q } = *params;
    boson_kernel_beta0(dim, |k| form_factor.eval(k), |k| dispersion.eval(k), sigma, u, n_q)
}

/// Names accepted by [`named`].
pub const PRESET_NAMES: [&str; 3] = ["uniform", "cosine", "boson-beta0"];

/// Looks up a shipped measure by name for dimension `dim`.
pub fn named(name: &str, dim: usize) -> Option<MeasureSpec> {
    match name {
        "uniform" => Some(uniform(dim, PRESET_GRID)),
        "cosine" => Some(cosine(dim, PRESET_GRID)),
        "boson-beta0" => Some(boson(&BosonParams { dim, ..BosonParams::default() })),
        _ => None,
    }
}

/// A measure built to violate exactly one requirement.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub name: &'static str,
    pub spec: MeasureSpec,
    pub breaks: Requirement,
}

/// The five shipped violation fixtures.
pub fn violation_fixtures() -> Vec<Fixture> {
    let n = PRESET_GRID;
    // Negating the light atom at (p, −p) with p = 7π/16 keeps the sum rule
    // and, after symmetrization, inversion symmetry intact.
    let fine = 2 * n;
    let mut negated = cosine(1, fine);
    negated.symmetrize_pi = true;
    negated.symmetrize_lattice = true;
    let (ip, iq) = (7, fine - 7);
    let light = ip * fine + iq;
    negated.atoms[light].w = -negated.atoms[light].w;
    vec![
        Fixture {
            name: "parity",
            spec: grid_density(1, n, |p, q| 1.0 + (p[0] - 2.0 * q[0]).cos()),
            breaks: Requirement::Parity,
        },
        Fixture { name: "negative-weight", spec: negated, breaks: Requirement::Positivity },
        Fixture {
            name: "sum-rule",
            spec: grid_density(1, n, |p, _| 1.0 + 0.5 * (2.0 * p[0]).cos()),
            breaks: Requirement::SumRule,
        },
        Fixture {
            name: "no-gap",
            // Momenta ±π/2 have zero exit rate, so the jump process is not mixing.
            spec: grid_density(1, n, |p, q| (1.0 + (2.0 * p[0]).cos()) * (1.0 + (2.0 * q[0]).cos())),
            breaks: Requirement::Gap,
        },
        Fixture {
            name: "permutation",
            spec: grid_density(2, n, |p, q| 1.0 + (p[0] - q[0]).cos()),
            breaks: Requirement::Permutation,
        },
    ]
}

/// A kernel that is not inversion symmetric.
pub fn inversion_fixture() -> Fixture {
    Fixture {
        name: "inversion",
        spec: grid_density(1, PRESET_GRID, |p, q| 1.0 + 0.5 * (p[0] - q[0]).sin()),
        breaks: Requirement::Inversion,
    }
}
