use serde::{Deserialize, Serialize};

use super::grid::{jump_rate_bound, operator_norm, spectral_gap, JumpBound, SpectralGap};
use super::{Atom, GainKernel};
use crate::lattice::{Coord, MAX_DIM};
use crate::linalg::spectral_norm;

/// Gap below which the spectral-gap requirement fails.
pub const GAP_TOL: f64 = 1e-8;
/// Slack allowed on the quadrature-based boundedness estimate.
pub const BOUND_SLACK: f64 = 1e-2;

/// One structural requirement on a gain kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Requirement {
    /// `r(ξ, η) = 0` unless `ξ + η` is even.
    Parity,
    /// The underlying measure is non-negative.
    Positivity,
    /// `r(ξ, 0) = r(0, −ξ)`.
    SumRule,
    /// The momentum jump process has a spectral gap.
    Gap,
    /// Gain and loss are bounded by the jump rates.
    Bounded,
    /// Invariance under reflecting one coordinate.
    Inversion,
    /// Invariance under permuting coordinates.
    Permutation,
}

impl Requirement {
    pub const ALL: [Requirement; 7] = [
        Requirement::Parity,
        Requirement::Positivity,
        Requirement::SumRule,
        Requirement::Gap,
        Requirement::Bounded,
        Requirement::Inversion,
        Requirement::Permutation,
    ];
}

/// Evidence attached to a failed requirement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Witness {
    Entry { xi: Vec<i64>, eta: Vec<i64> },
    Atom { index: usize, atom: Atom },
    Eigenvector { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub requirement: Requirement,
    pub passed: bool,
    /// The measured defect or constant.
    pub value: f64,
    pub detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub dim: usize,
    pub radius: usize,
    pub n_q: usize,
    pub items: Vec<ItemResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<SpectralGap>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jump: Option<JumpBound>,
    pub opnorm: f64,
    /// Whether `‖𝓛‖ ≤ 1` already holds.
    pub normalized: bool,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }

    pub fn failing(&self) -> Vec<Requirement> {
        self.items.iter().filter(|i| !i.passed).map(|i| i.requirement).collect()
    }

    pub fn item(&self, r: Requirement) -> &ItemResult {
        self.items.iter().find(|i| i.requirement == r).expect("every requirement is reported")
    }
}

fn slice(c: Coord, dim: usize) -> Vec<i64> {
    c[..dim].to_vec()
}

/// Largest `|f(ξ, η)|` over the window, with its location.
fn worst(kernel: &GainKernel, f: impl Fn(Coord, Coord) -> f64) -> (f64, Coord, Coord) {
    let w = kernel.window();
    let mut best = (0.0, [0; MAX_DIM], [0; MAX_DIM]);
    for xi in w.iter() {
        for eta in w.iter() {
            let v = f(xi, eta);
            if v > best.0 {
                best = (v, xi, eta);
            }
        }
    }
    best
}

fn entry_item(requirement: Requirement, kernel: &GainKernel, tol: f64, what: &str, f: impl Fn(Coord, Coord) -> f64) -> ItemResult {
    let dim = kernel.dim();
    let (v, xi, eta) = worst(kernel, f);
    let passed = v <= tol;
    ItemResult {
        requirement,
        passed,
        value: v,
        detail: format!("max {what} = {v:.3e} (tolerance {tol:.1e})"),
        witness: (!passed).then(|| Witness::Entry { xi: slice(xi, dim), eta: slice(eta, dim) }),
    }
}

/// Default momentum grid for a kernel dimension.
pub fn default_grid(dim: usize) -> usize {
    if dim == 1 {
        64
    } else {
        16
    }
}

/// Checks every requirement on the default grid.
pub fn validate(kernel: &GainKernel) -> ValidationReport {
    validate_with(kernel, default_grid(kernel.dim()))
}

/// Checks every requirement, evaluating momentum-space quantities on an `n_q^d` grid.
pub fn validate_with(kernel: &GainKernel, n_q: usize) -> ValidationReport {
    let dim = kernel.dim();
    let scale = kernel.values().iter().map(|v| v.norm()).fold(1.0, f64::max);
    let tol = 1e-10 * scale;
    let mut items = Vec::new();

    items.push(entry_item(Requirement::Parity, kernel, tol, "|r| at odd ξ+η", |xi, eta| {
        let s = [xi[0] + eta[0], xi[1] + eta[1]];
        if s.iter().all(|v| v.rem_euclid(2) == 0) {
            0.0
        } else {
            kernel.r(xi, eta).norm()
        }
    }));

    let neg = kernel.negative_atoms();
    items.push(ItemResult {
        requirement: Requirement::Positivity,
        passed: neg.is_empty(),
        value: neg.iter().map(|a| a.atom.w).fold(0.0, f64::min),
        detail: format!("{} atoms with negative weight", neg.len()),
        witness: neg.first().map(|a| Witness::Atom { index: a.index, atom: a.atom.clone() }),
    });

    items.push(entry_item(Requirement::SumRule, kernel, tol, "|r(ξ,0) − r(0,−ξ)|", |xi, eta| {
        if eta != [0; MAX_DIM] {
            return 0.0;
        }
        (kernel.r(xi, eta) - kernel.r(eta, [-xi[0], -xi[1]])).norm()
    }));

    let gap = spectral_gap(kernel, n_q);
    items.push(match &gap {
        Ok(g) => ItemResult {
            requirement: Requirement::Gap,
            passed: g.value > GAP_TOL,
            value: g.value,
            detail: format!("gap {:.6e} on N_q = {n_q}, {:.6e} on N_q = {}", g.value, g.refined, 2 * n_q),
            witness: (g.value <= GAP_TOL).then(|| Witness::Eigenvector { values: g.witness.clone() }),
        },
        Err(e) => ItemResult { requirement: Requirement::Gap, passed: false, value: f64::NAN, detail: e.to_string(), witness: None },
    });

    let opnorm = operator_norm(kernel);
    let jump = jump_rate_bound(kernel, n_q).ok();
    let gain_norm = spectral_norm(&kernel.gain_matrix());
    let loss_norm = spectral_norm(&(kernel.gain_matrix() - kernel.lindblad_block(kernel.radius(), kernel.radius())));
    let (bounded, detail, value) = match &jump {
        Some(j) => {
            let bound = (j.abs_row_max * j.abs_column_max).sqrt() * (1.0 + BOUND_SLACK) + tol;
            let ok = opnorm.is_finite() && gain_norm <= bound && loss_norm <= j.abs_column_max * (1.0 + BOUND_SLACK) + tol;
            (ok, format!("|G| = {gain_norm:.4e}, |L| = {loss_norm:.4e}, jump-rate bound {bound:.4e}"), gain_norm / bound)
        }
        None => (false, "jump rates unavailable".to_string(), f64::NAN),
    };
    items.push(ItemResult { requirement: Requirement::Bounded, passed: bounded, value, detail, witness: None });

    let mut inv = entry_item(Requirement::Inversion, kernel, tol, "|r(Rξ,Rη) − r(ξ,η)|", |xi, eta| {
        (0..dim)
            .map(|i| {
                let (mut a, mut b) = (xi, eta);
                a[i] = -a[i];
                b[i] = -b[i];
                (kernel.r(a, b) - kernel.r(xi, eta)).norm()
            })
            .fold(0.0, f64::max)
    });
    inv.detail = format!("{} over {dim} axes", inv.detail);
    items.push(inv);

    items.push(entry_item(Requirement::Permutation, kernel, tol, "|r(σξ,ση) − r(ξ,η)|", |xi, eta| {
        if dim < 2 {
            return 0.0;
        }
        (kernel.r([xi[1], xi[0]], [eta[1], eta[0]]) - kernel.r(xi, eta)).norm()
    }));

    ValidationReport {
        dim,
        radius: kernel.radius(),
        n_q,
        items,
        gap: gap.ok(),
        jump,
        opnorm,
        normalized: opnorm <= 1.0 + 1e-10,
    }
}
