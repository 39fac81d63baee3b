//! Finite boxes in `Z^d` and symmetric offset windows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 2;

/// A lattice point or displacement. Components beyond the box dimension are zero.
pub type Coord = [i64; MAX_DIM];

/// Boundary treatment of a [`LatticeBox`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Amplitudes leaving the box are dropped.
    #[default]
    Truncated,
    /// Coordinates wrap modulo the box side.
    Periodic,
}

/// The cube `[-radius, radius]^dim` of offsets, enumerated in row-major order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    dim: usize,
    radius: usize,
}

impl Window {
    pub fn new(dim: usize, radius: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        Self { dim, radius }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of points per axis.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, c: Coord) -> bool {
        let r = self.radius as i64;
        (0..self.dim).all(|i| c[i].abs() <= r) && c[self.dim..].iter().all(|&v| v == 0)
    }

    /// Row-major index of `c`, or `None` when it lies outside the window.
    #[inline]
    pub fn index(&self, c: Coord) -> Option<usize> {
        let r = self.radius as i64;
        let side = self.side() as i64;
        let mut idx = 0i64;
        for &ci in c.iter().take(self.dim) {
            if ci < -r || ci > r {
                return None;
            }
            idx = idx * side + (ci + r);
        }
        Some(idx as usize)
    }

    /// Inverse of [`Window::index`].
    #[inline]
    pub fn coord(&self, mut idx: usize) -> Coord {
        let side = self.side();
        let mut c = [0i64; MAX_DIM];
        for i in (0..self.dim).rev() {
            c[i] = (idx % side) as i64 - self.radius as i64;
            idx /= side;
        }
        c
    }

    pub fn iter(&self) -> impl Iterator<Item = Coord> + '_ {
        (0..self.len()).map(move |i| self.coord(i))
    }
}

/// The set of sites `[-L, L]^d` on which a particle may live.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    dim: usize,
    radius: usize,
    boundary: Boundary,
}

impl LatticeBox {
    pub fn new(dim: usize, radius: usize, boundary: Boundary) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidBox(format!("dimension {dim} not in {{1, 2}}")));
        }
        if radius < 1 {
            return Err(Error::InvalidBox("radius must be at least 1".into()));
        }
        Ok(Self { dim, radius, boundary })
    }

    pub fn truncated(dim: usize, radius: usize) -> Result<Self> {
        Self::new(dim, radius, Boundary::Truncated)
    }

    pub fn periodic(dim: usize, radius: usize) -> Result<Self> {
        Self::new(dim, radius, Boundary::Periodic)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn n_sites(&self) -> usize {
        self.sites_window().len()
    }

    /// The sites viewed as an offset window around the origin.
    pub fn sites_window(&self) -> Window {
        Window::new(self.dim, self.radius)
    }

    /// Canonical representative of `x` in `[-L, L]^d` (periodic boxes only wrap).
    #[inline]
    pub fn wrap(&self, x: Coord) -> Coord {
        match self.boundary {
            Boundary::Truncated => x,
            Boundary::Periodic => {
                let side = self.side() as i64;
                let r = self.radius as i64;
                let mut out = [0i64; MAX_DIM];
                for i in 0..self.dim {
                    out[i] = (x[i] + r).rem_euclid(side) - r;
                }
                out
            }
        }
    }

    /// Site index of `x`. Truncated boxes return `None` outside the box.
    #[inline]
    pub fn index(&self, x: Coord) -> Option<usize> {
        self.sites_window().index(self.wrap(x))
    }

    pub fn site(&self, idx: usize) -> Coord {
        self.sites_window().coord(idx)
    }

    pub fn sites(&self) -> impl Iterator<Item = Coord> {
        let w = self.sites_window();
        (0..w.len()).map(move |i| w.coord(i))
    }
}

/// The `2d` nearest-neighbour displacements `±e_i`.
pub fn unit_vectors(dim: usize) -> Vec<Coord> {
    let mut out = Vec::with_capacity(2 * dim);
    for i in 0..dim {
        let mut e = [0i64; MAX_DIM];
        e[i] = 1;
        out.push(e);
        e[i] = -1;
        out.push(e);
    }
    out
}

#[inline]
pub fn add(a: Coord, b: Coord) -> Coord {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Coord, b: Coord) -> Coord {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn neg(a: Coord) -> Coord {
    [-a[0], -a[1]]
}

#[inline]
pub fn l1_norm(a: Coord) -> i64 {
    a[0].abs() + a[1].abs()
}

#[inline]
pub fn linf_norm(a: Coord) -> i64 {
    a[0].abs().max(a[1].abs())
}

/// True when every component is even.
#[inline]
pub fn is_even(a: Coord) -> bool {
    a.iter().all(|v| v.rem_euclid(2) == 0)
}

/// Half of an even displacement.
#[inline]
pub fn half(a: Coord) -> Coord {
    debug_assert!(is_even(a));
    [a[0] / 2, a[1] / 2]
}
