//! Reproducible i.i.d. random potentials.
//!
//! Each site draws from its own ChaCha stream selected by the site's
//! coordinates, so a value never depends on which other sites were sampled
//! or in what order.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{self, Boundary, Coord, LatticeBox};

/// Single-site law of the potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Distribution {
    /// Uniform on `[low, high]`.
    Uniform { low: f64, high: f64 },
    /// `±1` with equal probability.
    Bernoulli,
    /// Finitely many values with the given (unnormalized) weights.
    Discrete { values: Vec<f64>, weights: Vec<f64> },
}

impl Default for Distribution {
    fn default() -> Self {
        Distribution::Uniform { low: -1.0, high: 1.0 }
    }
}

impl Distribution {
    /// Largest attainable `|ω(x)|`.
    pub fn bound(&self) -> f64 {
        match self {
            Distribution::Uniform { low, high } => low.abs().max(high.abs()),
            Distribution::Bernoulli => 1.0,
            Distribution::Discrete { values, .. } => values.iter().map(|v| v.abs()).fold(0.0, f64::max),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Distribution::Uniform { low, high } => 0.5 * (low + high),
            Distribution::Bernoulli => 0.0,
            Distribution::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                values.iter().zip(weights).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Distribution::Uniform { low, high } => (high - low).powi(2) / 12.0,
            Distribution::Bernoulli => 1.0,
            Distribution::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let m = self.mean();
                values.iter().zip(weights).map(|(v, w)| w * (v - m).powi(2)).sum::<f64>() / total
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::UnknownDistribution(msg.to_string()));
        match self {
            Distribution::Uniform { low, high } if !(low.is_finite() && high.is_finite() && low <= high) => {
                bad("uniform bounds must be finite and ordered")
            }
            Distribution::Discrete { values, weights }
                if values.is_empty()
                    || values.len() != weights.len()
                    || weights.iter().any(|w| !(*w >= 0.0))
                    || weights.iter().sum::<f64>() <= 0.0
                    || values.iter().any(|v| !v.is_finite()) =>
            {
                bad("discrete law needs matching finite values and non-negative weights")
            }
            _ => Ok(()),
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Distribution::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            Distribution::Bernoulli => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Distribution::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut t = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if t < *w {
                        return *v;
                    }
                    t -= w;
                }
                *values.last().expect("validated nonempty")
            }
        }
    }
}

/// Parses `uniform`, `uniform:a,b`, `bernoulli` or `discrete:v1,v2,...` (equal weights).
impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>> {
            args.split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|_| Error::UnknownDistribution(s.to_string())))
                .collect()
        };
        let dist = match (name.trim(), args.is_empty()) {
            ("uniform", true) => Distribution::default(),
            ("uniform", false) => match nums()?.as_slice() {
                [low, high] => Distribution::Uniform { low: *low, high: *high },
                _ => return Err(Error::UnknownDistribution(s.to_string())),
            },
            ("bernoulli", true) => Distribution::Bernoulli,
            ("discrete", false) => {
                let values = nums()?;
                let weights = vec![1.0; values.len()];
                Distribution::Discrete { values, weights }
            }
            _ => return Err(Error::UnknownDistribution(s.to_string())),
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Uniform { low, high } => write!(f, "uniform:{low},{high}"),
            Distribution::Bernoulli => write!(f, "bernoulli"),
            Distribution::Discrete { values, .. } => {
                let v: Vec<String> = values.iter().map(f64::to_string).collect();
                write!(f, "discrete:{}", v.join(","))
            }
        }
    }
}

/// Stream selector for a site: zigzag-encoded coordinates packed into 64 bits.
fn site_stream(x: Coord) -> u64 {
    let zz = |v: i64| ((v << 1) ^ (v >> 63)) as u64 & 0xffff_ffff;
    (zz(x[0]) << 32) | zz(x[1])
}

/// The value a seed assigns to a site, independent of any box.
pub fn site_value(dist: &Distribution, seed: u64, x: Coord) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site_stream(x));
    dist.draw(&mut rng)
}

/// A potential `ω(x)` on every site of a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderField {
    lattice: LatticeBox,
    values: Vec<f64>,
    seed: u64,
    dist: Distribution,
}

impl DisorderField {
    /// Samples i.i.d. values keyed by `(seed, site)`.
    pub fn sample(lattice: LatticeBox, dist: &Distribution, seed: u64) -> Result<Self> {
        dist.validate()?;
        let values = lattice.sites().map(|x| site_value(dist, seed, x)).collect();
        Ok(Self { lattice, values, seed, dist: dist.clone() })
    }

    /// The identically zero potential.
    pub fn zero(lattice: LatticeBox) -> Self {
        Self { lattice, values: vec![0.0; lattice.n_sites()], seed: 0, dist: Distribution::Discrete { values: vec![0.0], weights: vec![1.0] } }
    }

    /// A field with explicit values in site order.
    pub fn from_values(lattice: LatticeBox, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.n_sites() {
            return Err(Error::BoxMismatch);
        }
        let bound = values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let dist = Distribution::Uniform { low: -bound, high: bound };
        Ok(Self { lattice, values, seed: 0, dist })
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    /// `ω(x)`; periodic boxes wrap, truncated boxes read zero outside.
    #[inline]
    pub fn value(&self, x: Coord) -> f64 {
        self.lattice.index(x).map_or(0.0, |i| self.values[i])
    }

    /// The translated field `ω(x − a)` on a periodic box.
    pub fn shift(&self, a: Coord) -> Result<Self> {
        if self.lattice.boundary() != Boundary::Periodic {
            return Err(Error::TruncatedBoxShift);
        }
        let values = self.lattice.sites().map(|x| self.value(lattice::sub(x, a))).collect();
        Ok(Self { values, ..self.clone() })
    }

    /// A field with values mapped site-wise by `f`, keeping the sampling record.
    pub fn transformed(&self, f: impl Fn(Coord) -> Coord) -> Self {
        let values = self.lattice.sites().map(|x| self.value(f(x))).collect();
        Self { values, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn deterministic() {
        let b = LatticeBox::truncated(2, 3).unwrap();
        let d = Distribution::default();
        assert_eq!(DisorderField::sample(b, &d, 9).unwrap(), DisorderField::sample(b, &d, 9).unwrap());
        assert_ne!(DisorderField::sample(b, &d, 9).unwrap(), DisorderField::sample(b, &d, 10).unwrap());
    }

    #[test]
    fn uniform_moments() {
        let d = Distribution::default();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|k| site_value(&d, 42, [k as i64 - 50_000, 0])).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let sigma_mean = (1.0f64 / 3.0 / n as f64).sqrt();
        // Var of the sample variance for U[-1,1]: (μ4 − σ⁴)/n with μ4 = 1/5.
        let sigma_var = ((0.2 - 1.0 / 9.0) / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean);
        assert!((var - 1.0 / 3.0).abs() < 3.0 * sigma_var);
        assert!(xs.iter().all(|x| x.abs() <= 1.0));
    }

    #[test]
    fn bernoulli_values() {
        let b = LatticeBox::truncated(1, 50).unwrap();
        let f = DisorderField::sample(b, &Distribution::Bernoulli, 1).unwrap();
        assert!(f.values().iter().all(|&v| v == 1.0 || v == -1.0));
    }

    #[test]
    fn shift_rules() {
        let t = LatticeBox::truncated(1, 3).unwrap();
        let f = DisorderField::sample(t, &Distribution::default(), 1).unwrap();
        assert!(matches!(f.shift([1, 0]), Err(Error::TruncatedBoxShift)));

        let p = LatticeBox::periodic(1, 3).unwrap();
        let f = DisorderField::sample(p, &Distribution::default(), 1).unwrap();
        assert_eq!(f.shift([0, 0]).unwrap(), f);
        let mut g = f.clone();
        for _ in 0..7 {
            g = g.shift([1, 0]).unwrap();
        }
        assert_eq!(g, f);
        let s = f.shift([2, 0]).unwrap();
        for x in p.sites() {
            assert_eq!(s.value(x), f.value([x[0] - 2, 0]));
        }
    }

    #[test]
    fn pair_correlations_vanish() {
        let b = LatticeBox::truncated(1, 2).unwrap();
        let d = Distribution::default();
        let n = 1000;
        let fields: Vec<DisorderField> = (0..n).map(|s| DisorderField::sample(b, &d, s).unwrap()).collect();
        for i in 0..b.n_sites() {
            for j in 0..b.n_sites() {
                let prods: Vec<f64> = fields.iter().map(|f| f.values()[i] * f.values()[j]).collect();
                let m = prods.iter().sum::<f64>() / n as f64;
                let sd = (prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
                let expect = if i == j { 1.0 / 3.0 } else { 0.0 };
                assert!((m - expect).abs() <= 4.0 * sd / (n as f64).sqrt(), "({i},{j}) {m}");
            }
        }
    }

    #[test]
    fn parses_config_strings() {
        assert_eq!("uniform".parse::<Distribution>().unwrap(), Distribution::default());
        assert_eq!("uniform:-2,2".parse::<Distribution>().unwrap().bound(), 2.0);
        assert_eq!("bernoulli".parse::<Distribution>().unwrap(), Distribution::Bernoulli);
        assert!("gaussian".parse::<Distribution>().is_err());
        let d: Distribution = "discrete:-1,0,1".parse().unwrap();
        assert_eq!(d.to_string().parse::<Distribution>().unwrap(), d);
    }

    proptest! {
        #[test]
        fn order_independent(seed in any::<u64>(), x in -100i64..100, y in -100i64..100) {
            let d = Distribution::default();
            let b = LatticeBox::truncated(2, 3).unwrap();
            let f = DisorderField::sample(b, &d, seed).unwrap();
            if let Some(i) = b.index([x, y]) {
                prop_assert_eq!(f.values()[i], site_value(&d, seed, [x, y]));
            }
            prop_assert!(site_value(&d, seed, [x, y]).abs() <= 1.0);
        }
    }
}
