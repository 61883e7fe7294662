//! Uniform tensor grids on an axis-aligned box.
//!
//! Nodes are numbered lexicographically with the first axis varying slowest.
//! Boundary faces are numbered `2 * axis + side` where side 0 is the low face.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Spatial points are padded to three components; unused entries are zero.
pub type Point = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Face {
    pub axis: usize,
    pub high: bool,
}

impl Face {
    pub fn index(self) -> usize {
        2 * self.axis + self.high as usize
    }

    pub fn from_index(index: usize) -> Self {
        Face { axis: index / 2, high: index % 2 == 1 }
    }

    /// Outward unit normal.
    pub fn normal(self) -> Point {
        let mut nu = [0.0; 3];
        nu[self.axis] = if self.high { 1.0 } else { -1.0 };
        nu
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryNode {
    pub node: usize,
    /// Face that owns the normal (lowest-indexed incident face).
    pub face: Face,
    pub normal: Point,
    /// Total boundary quadrature weight.
    pub weight: f64,
    /// Trapezoid weight contributed by each incident face.
    pub face_weights: Vec<(Face, f64)>,
}

#[derive(Clone, Debug)]
pub struct Grid {
    dim: usize,
    n: usize,
    lower: Point,
    upper: Point,
    spacing: Point,
    x0: Point,
    boundary: Vec<BoundaryNode>,
    slot: Vec<usize>,
}

const INTERIOR: usize = usize::MAX;

/// Builds the grid with `n` nodes per axis on the box `extents`.
pub fn build_grid(dim: usize, n: usize, extents: &[(f64, f64)], x0: &[f64]) -> Result<Grid> {
    if dim != 2 && dim != 3 {
        return Err(Error::Config(format!("dimension must be 2 or 3, got {dim}")));
    }
    if n < 3 {
        return Err(Error::Config(format!("need at least 3 nodes per axis, got {n}")));
    }
    if extents.len() != dim || x0.len() != dim {
        return Err(Error::Config(format!(
            "extents and x0 must have {dim} entries (got {} and {})",
            extents.len(),
            x0.len()
        )));
    }
    let mut lower = [0.0; 3];
    let mut upper = [0.0; 3];
    let mut spacing = [0.0; 3];
    let mut p0 = [0.0; 3];
    for k in 0..dim {
        let (a, b) = extents[k];
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::Config(format!("axis {k}: invalid extent [{a}, {b}]")));
        }
        lower[k] = a;
        upper[k] = b;
        spacing[k] = (b - a) / (n - 1) as f64;
        p0[k] = x0[k];
    }
    let inside = (0..dim).all(|k| x0[k] >= lower[k] && x0[k] <= upper[k]);
    if inside {
        return Err(Error::Config(format!(
            "x0 = {:?} must lie strictly outside the closed box",
            x0
        )));
    }

    let mut grid = Grid {
        dim,
        n,
        lower,
        upper,
        spacing,
        x0: p0,
        boundary: Vec::new(),
        slot: vec![INTERIOR; n.pow(dim as u32)],
    };
    for node in 0..grid.len() {
        let idx = grid.multi_index(node);
        let mut faces = Vec::new();
        for k in 0..dim {
            if idx[k] == 0 {
                faces.push(Face { axis: k, high: false });
            }
            if idx[k] == n - 1 {
                faces.push(Face { axis: k, high: true });
            }
        }
        if faces.is_empty() {
            continue;
        }
        faces.sort_by_key(|f| f.index());
        let face_weights: Vec<(Face, f64)> = faces
            .iter()
            .map(|&f| {
                let w = (0..dim)
                    .filter(|&k| k != f.axis)
                    .map(|k| grid.axis_weight(idx[k], k))
                    .product::<f64>();
                (f, w)
            })
            .collect();
        grid.slot[node] = grid.boundary.len();
        grid.boundary.push(BoundaryNode {
            node,
            face: faces[0],
            normal: faces[0].normal(),
            weight: face_weights.iter().map(|(_, w)| w).sum(),
            face_weights,
        });
    }
    Ok(grid)
}

impl Grid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Nodes per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing[..self.dim]
    }

    pub fn h_min(&self) -> f64 {
        self.spacing().iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower[..self.dim]
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper[..self.dim]
    }

    pub fn extents(&self) -> Vec<(f64, f64)> {
        (0..self.dim).map(|k| (self.lower[k], self.upper[k])).collect()
    }

    pub fn side_lengths(&self) -> Vec<f64> {
        (0..self.dim).map(|k| self.upper[k] - self.lower[k]).collect()
    }

    pub fn volume(&self) -> f64 {
        self.side_lengths().iter().product()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0[..self.dim]
    }

    pub fn multi_index(&self, node: usize) -> [usize; 3] {
        let mut idx = [0; 3];
        let mut rest = node;
        for k in (0..self.dim).rev() {
            idx[k] = rest % self.n;
            rest /= self.n;
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        idx[..self.dim].iter().fold(0, |acc, &i| acc * self.n + i)
    }

    /// Flat-index step along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coords(&self, node: usize) -> Point {
        let idx = self.multi_index(node);
        let mut x = [0.0; 3];
        for k in 0..self.dim {
            x[k] = self.lower[k] + idx[k] as f64 * self.spacing[k];
        }
        x
    }

    fn axis_weight(&self, i: usize, axis: usize) -> f64 {
        let h = self.spacing[axis];
        if i == 0 || i == self.n - 1 {
            0.5 * h
        } else {
            h
        }
    }

    /// Trapezoid volume weight of a node.
    pub fn volume_weight(&self, node: usize) -> f64 {
        let idx = self.multi_index(node);
        (0..self.dim).map(|k| self.axis_weight(idx[k], k)).product()
    }

    pub fn volume_weights(&self) -> Vec<f64> {
        (0..self.len()).map(|a| self.volume_weight(a)).collect()
    }

    pub fn boundary(&self) -> &[BoundaryNode] {
        &self.boundary
    }

    pub fn boundary_len(&self) -> usize {
        self.boundary.len()
    }

    /// Position of `node` in the boundary enumeration.
    pub fn boundary_slot(&self, node: usize) -> Option<usize> {
        match self.slot[node] {
            INTERIOR => None,
            s => Some(s),
        }
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.slot[node] != INTERIOR
    }

    pub fn interior_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&a| !self.is_boundary(a))
    }

    /// Distance (in index units) from the nearest face.
    pub fn depth(&self, node: usize) -> usize {
        let idx = self.multi_index(node);
        (0..self.dim).map(|k| idx[k].min(self.n - 1 - idx[k])).min().unwrap()
    }

    /// Carleman weight gradient x - x0.
    pub fn grad_l(&self, node: usize) -> Point {
        let x = self.coords(node);
        let mut g = [0.0; 3];
        for k in 0..self.dim {
            g[k] = x[k] - self.x0[k];
        }
        g
    }

    /// Radius of the smallest origin-centred ball containing the box.
    pub fn enclosing_radius(&self) -> f64 {
        (0..self.dim)
            .map(|k| self.lower[k].abs().max(self.upper[k].abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn dot(a: &Point, b: &Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
