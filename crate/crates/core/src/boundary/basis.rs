//! Boundary source basis: node indicator × direction × time-shifted C² bump.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{BoundarySource, SpaceTimeBoundaryField, TimeGrid};
use crate::linalg::DenseMatrix;
use crate::mesh::Grid;

/// `(1 - s²)³` on |s| < 1: vanishes with two derivatives at both ends.
pub fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        let q = 1.0 - s * s;
        q * q * q
    }
}

/// Integer-step shifts of one bump, all supported in [dt, T].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemporalAtoms {
    pub count: usize,
    pub width: f64,
    /// Shift between consecutive atoms, in time steps.
    pub shift: usize,
    pub time: TimeGrid,
    /// Centre of the first atom.
    pub centre: f64,
}

impl TemporalAtoms {
    /// Spreads `count` bumps of the given width evenly over (0, T].
    pub fn new(time: TimeGrid, count: usize, width: f64) -> Result<Self> {
        if count == 0 || !(width > 0.0) {
            return Err(Error::Config("need at least one atom of positive width".into()));
        }
        let dt = time.dt;
        let free = time.horizon() - width - dt;
        if free < 0.0 || (count > 1 && free < (count - 1) as f64 * dt) {
            return Err(Error::Config(format!(
                "{count} atoms of width {width} do not fit in (0, {}]",
                time.horizon()
            )));
        }
        let shift = if count > 1 { (free / ((count - 1) as f64 * dt)).floor() as usize } else { 0 };
        Ok(TemporalAtoms { count, width, shift, time, centre: dt + 0.5 * width })
    }

    /// Value of atom `k` at step `n` (any `n >= 0`).
    pub fn value(&self, k: usize, n: usize) -> f64 {
        let m = n as isize - (k * self.shift) as isize;
        if m < 0 {
            return 0.0;
        }
        bump((m as f64 * self.time.dt - self.centre) / (0.5 * self.width))
    }

    /// Samples of atom `k` at steps `0..=steps`.
    pub fn samples(&self, k: usize, steps: usize) -> Vec<f64> {
        (0..=steps).map(|n| self.value(k, n)).collect()
    }

    /// Discrete L²(0,T) Gram matrix of the atoms.
    pub fn gram(&self) -> DenseMatrix {
        let s: Vec<Vec<f64>> = (0..self.count).map(|k| self.samples(k, self.time.steps)).collect();
        DenseMatrix::from_fn(self.count, self.count, |i, j| {
            (0..=self.time.steps).map(|n| self.time.weight(n) * s[i][n] * s[j][n]).sum()
        })
    }

    /// Gram matrix of the forward differences `(a[n+1] - a[n]) / dt`.
    pub fn derivative_gram(&self) -> DenseMatrix {
        let n = self.time.steps;
        let dt = self.time.dt;
        let s: Vec<Vec<f64>> = (0..self.count).map(|k| self.samples(k, n)).collect();
        DenseMatrix::from_fn(self.count, self.count, |i, j| {
            (0..n)
                .map(|m| (s[i][m + 1] - s[i][m]) * (s[j][m + 1] - s[j][m]) / dt)
                .sum()
        })
    }
}

#[derive(Clone, Debug)]
pub struct BoundaryBasis {
    dim: usize,
    weights: Vec<f64>,
    scales: Vec<f64>,
    atoms: TemporalAtoms,
}

impl BoundaryBasis {
    pub fn new(g: &Grid, atoms: TemporalAtoms) -> Self {
        let norm2: f64 = atoms.gram().get(0, 0);
        let weights: Vec<f64> = g.boundary().iter().map(|b| b.weight).collect();
        let scales = weights.iter().map(|w| 1.0 / (w * norm2).sqrt()).collect();
        BoundaryBasis { dim: g.dim(), weights, scales, atoms }
    }

    pub fn len(&self) -> usize {
        self.weights.len() * self.dim * self.atoms.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn boundary_nodes(&self) -> usize {
        self.weights.len()
    }

    /// Number of spatial sources (boundary node × direction).
    pub fn spatial_len(&self) -> usize {
        self.weights.len() * self.dim
    }

    pub fn atoms(&self) -> &TemporalAtoms {
        &self.atoms
    }

    pub fn time(&self) -> TimeGrid {
        self.atoms.time
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Coefficient scale of every element on boundary node `b`.
    pub fn scale(&self, b: usize) -> f64 {
        self.scales[b]
    }

    pub fn index(&self, b: usize, c: usize, k: usize) -> usize {
        (b * self.dim + c) * self.atoms.count + k
    }

    /// `(node, direction, atom)` of element `i`.
    pub fn split(&self, i: usize) -> (usize, usize, usize) {
        let k = i % self.atoms.count;
        let s = i / self.atoms.count;
        (s / self.dim, s % self.dim, k)
    }

    pub fn element(&self, i: usize) -> BasisElement<'_> {
        let (b, c, k) = self.split(i);
        BasisElement { basis: self, b, c, k, amplitude: self.scales[b] }
    }

    /// `Σ c_i f_i` sampled on (0,T).
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<SpaceTimeBoundaryField> {
        self.synthesize_on(coeffs, self.time())
    }

    pub fn synthesize_on(&self, coeffs: &[f64], time: TimeGrid) -> Result<SpaceTimeBoundaryField> {
        if coeffs.len() != self.len() {
            return Err(Error::Shape(format!("expected {} coefficients", self.len())));
        }
        let d = self.dim;
        let nodes = self.boundary_nodes();
        let mut values = vec![0.0; (time.steps + 1) * nodes * d];
        let samples: Vec<Vec<f64>> =
            (0..self.atoms.count).map(|k| self.atoms.samples(k, time.steps)).collect();
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            let (b, dir, k) = self.split(i);
            let a = c * self.scales[b];
            for (n, s) in samples[k].iter().enumerate() {
                values[(n * nodes + b) * d + dir] += a * s;
            }
        }
        Ok(SpaceTimeBoundaryField::from_parts(d, time, values, self.weights.clone()))
    }

    /// Moments `⟨f_i, g⟩` in L²((0,T)×∂Ω).
    pub fn moments(&self, g: &SpaceTimeBoundaryField) -> Result<Vec<f64>> {
        let time = g.time();
        if g.nodes() != self.boundary_nodes() || g.dim() != self.dim {
            return Err(Error::Shape("field and basis live on different boundaries".into()));
        }
        let samples: Vec<Vec<f64>> =
            (0..self.atoms.count).map(|k| self.atoms.samples(k, time.steps)).collect();
        let mut out = vec![0.0; self.len()];
        for (i, o) in out.iter_mut().enumerate() {
            let (b, c, k) = self.split(i);
            let mut acc = 0.0;
            for (n, s) in samples[k].iter().enumerate() {
                if *s != 0.0 {
                    acc += time.weight(n) * s * g.at(n, b)[c];
                }
            }
            *o = acc * self.weights[b] * self.scales[b];
        }
        Ok(out)
    }
}

/// One normalized basis function used as Dirichlet data.
pub struct BasisElement<'a> {
    basis: &'a BoundaryBasis,
    b: usize,
    c: usize,
    k: usize,
    amplitude: f64,
}

impl BasisElement<'_> {
    pub fn with_amplitude(mut self, a: f64) -> Self {
        self.amplitude = a;
        self
    }
}

impl BoundarySource for BasisElement<'_> {
    fn fill(&self, n: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[self.b * self.basis.dim + self.c] = self.amplitude * self.basis.atoms.value(self.k, n);
    }
}
