//! Leapfrog time stepping for the elastic wave equation with Dirichlet data.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::material::MaterialModel;
use crate::mesh::{BoundaryNode, Grid, Point};
use crate::stencil::Stiffness;

pub const DEFAULT_CFL: f64 = 0.5;

/// Uniform time samples `t_n = n dt`, `n = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    /// Largest step not exceeding `max_dt` that divides `horizon` evenly.
    pub fn fitted(horizon: f64, max_dt: f64) -> Self {
        let steps = ((horizon / max_dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        TimeGrid { dt: horizon / steps as f64, steps }
    }

    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !(horizon > 0.0 && dt > 0.0) {
            return Err(Error::Config(format!("horizon {horizon} and dt {dt} must be positive")));
        }
        let steps = (horizon / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - horizon).abs() > 1e-9 * horizon {
            return Err(Error::Config(format!("dt = {dt} does not divide the horizon {horizon}")));
        }
        Ok(TimeGrid { dt, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.dt * n as f64
    }

    pub fn doubled(&self) -> Self {
        TimeGrid { dt: self.dt, steps: 2 * self.steps }
    }

    /// Trapezoid weight of sample `n`.
    pub fn weight(&self, n: usize) -> f64 {
        if n == 0 || n == self.steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Anything that supplies Dirichlet values on the boundary enumeration.
pub trait BoundarySource: Sync {
    /// Writes the values at step `n` into `out` (length boundary nodes × d).
    fn fill(&self, n: usize, out: &mut [f64]);
}

/// Vector values on boundary nodes × time samples, with L²((0,T)×∂Ω) weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeBoundaryField {
    dim: usize,
    nodes: usize,
    time: TimeGrid,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl SpaceTimeBoundaryField {
    pub fn zeros(g: &Grid, time: TimeGrid) -> Self {
        let nodes = g.boundary_len();
        SpaceTimeBoundaryField {
            dim: g.dim(),
            nodes,
            time,
            values: vec![0.0; (time.steps + 1) * nodes * g.dim()],
            weights: g.boundary().iter().map(|b| b.weight).collect(),
        }
    }

    pub fn from_fn(
        g: &Grid,
        time: TimeGrid,
        f: impl Fn(f64, &Point, &BoundaryNode) -> [f64; 3],
    ) -> Self {
        let mut out = Self::zeros(g, time);
        let d = g.dim();
        for n in 0..=time.steps {
            let t = time.time(n);
            for (b, bn) in g.boundary().iter().enumerate() {
                let v = f(t, &g.coords(bn.node), bn);
                out.at_mut(n, b).copy_from_slice(&v[..d]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn spatial_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn at(&self, n: usize, b: usize) -> &[f64] {
        let i = (n * self.nodes + b) * self.dim;
        &self.values[i..i + self.dim]
    }

    pub fn at_mut(&mut self, n: usize, b: usize) -> &mut [f64] {
        let i = (n * self.nodes + b) * self.dim;
        &mut self.values[i..i + self.dim]
    }

    /// All boundary values at step `n`.
    pub fn step(&self, n: usize) -> &[f64] {
        let w = self.nodes * self.dim;
        &self.values[n * w..(n + 1) * w]
    }

    pub fn step_mut(&mut self, n: usize) -> &mut [f64] {
        let w = self.nodes * self.dim;
        &mut self.values[n * w..(n + 1) * w]
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.nodes != other.nodes || self.dim != other.dim || self.time != other.time {
            return Err(Error::Shape("space-time fields live on different grids".into()));
        }
        Ok(())
    }

    /// Weighted L² inner product (real, bilinear).
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let mut acc = 0.0;
        for n in 0..=self.time.steps {
            let wt = self.time.weight(n);
            let mut s = 0.0;
            for b in 0..self.nodes {
                let wb = self.weights[b];
                s += wb * self.at(n, b).iter().zip(other.at(n, b)).map(|(x, y)| x * y).sum::<f64>();
            }
            acc += wt * s;
        }
        Ok(acc)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).unwrap().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) -> Result<()> {
        self.check_compatible(other)?;
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
        Ok(())
    }

    /// Copy with every node outside `mask` set to zero.
    pub fn masked(&self, mask: &[bool]) -> Self {
        let mut out = self.clone();
        for n in 0..=self.time.steps {
            for (b, &keep) in mask.iter().enumerate() {
                if !keep {
                    out.at_mut(n, b).iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        out
    }

    pub(crate) fn from_parts(
        dim: usize,
        time: TimeGrid,
        values: Vec<f64>,
        weights: Vec<f64>,
    ) -> Self {
        let nodes = weights.len();
        debug_assert_eq!(values.len(), (time.steps + 1) * nodes * dim);
        SpaceTimeBoundaryField { dim, nodes, time, values, weights }
    }
}

impl BoundarySource for SpaceTimeBoundaryField {
    fn fill(&self, n: usize, out: &mut [f64]) {
        if n <= self.time.steps {
            out.copy_from_slice(self.step(n));
        } else {
            out.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Storage {
    All,
    BoundaryStencil,
    FinalTwo,
}

impl Storage {
    pub fn name(self) -> &'static str {
        match self {
            Storage::All => "all",
            Storage::BoundaryStencil => "boundary-stencil",
            Storage::FinalTwo => "final-two",
        }
    }
}

/// Nodes within two cells of a face: enough for one-sided second-order stencils.
#[derive(Debug)]
struct Layer {
    nodes: Vec<usize>,
    position: Vec<u32>,
}

impl Layer {
    fn new(g: &Grid) -> Self {
        let mut position = vec![u32::MAX; g.len()];
        let mut nodes = Vec::new();
        for a in 0..g.len() {
            if g.depth(a) <= 2 {
                position[a] = nodes.len() as u32;
                nodes.push(a);
            }
        }
        Layer { nodes, position }
    }
}

#[derive(Clone, Debug)]
pub struct DisplacementTrajectory {
    dim: usize,
    time: TimeGrid,
    storage: Storage,
    /// Physical step index of `snapshots[0]`.
    first: usize,
    snapshots: Vec<Vec<f64>>,
    layer: Option<Arc<Layer>>,
}

impl DisplacementTrajectory {
    pub fn time(&self) -> TimeGrid {
        self.time
    }

    pub fn dt(&self) -> f64 {
        self.time.dt
    }

    pub fn horizon(&self) -> f64 {
        self.time.horizon()
    }

    pub fn storage(&self) -> Storage {
        self.storage
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stored_steps(&self) -> std::ops::Range<usize> {
        self.first..self.first + self.snapshots.len()
    }

    /// Full nodal snapshot at step `n` (not available for boundary-stencil storage).
    pub fn snapshot(&self, n: usize) -> Result<&[f64]> {
        if self.storage == Storage::BoundaryStencil || !self.stored_steps().contains(&n) {
            return Err(Error::Storage(self.storage.name()));
        }
        Ok(&self.snapshots[n - self.first])
    }

    /// Displacement at `node` and step `n`, if stored.
    pub fn value(&self, n: usize, node: usize) -> Option<[f64; 3]> {
        if !self.stored_steps().contains(&n) {
            return None;
        }
        let snap = &self.snapshots[n - self.first];
        let pos = match &self.layer {
            Some(layer) => match layer.position[node] {
                u32::MAX => return None,
                p => p as usize,
            },
            None => node,
        };
        let mut out = [0.0; 3];
        out[..self.dim].copy_from_slice(&snap[pos * self.dim..(pos + 1) * self.dim]);
        Some(out)
    }

    pub fn final_state(&self) -> Result<&[f64]> {
        self.snapshot(self.time.steps)
    }

    /// Backward difference `(u^N - u^{N-1}) / dt` of the last two stored steps.
    pub fn final_velocity(&self) -> Result<Vec<f64>> {
        let n = self.time.steps;
        let a = self.snapshot(n)?;
        let b = self.snapshot(n - 1)?;
        Ok(a.iter().zip(b).map(|(x, y)| (x - y) / self.time.dt).collect())
    }

    /// Multiplies every stored value by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        for snap in &mut self.snapshots {
            snap.iter_mut().for_each(|v| *v *= s);
        }
        self
    }

    /// Nodes kept per snapshot; `None` when every node is stored.
    pub fn stored_nodes(&self) -> Option<&[usize]> {
        self.layer.as_ref().map(|l| l.nodes.as_slice())
    }

    /// Raw stored values at step `n`, laid out over [`Self::stored_nodes`].
    pub fn stored(&self, n: usize) -> Option<&[f64]> {
        self.stored_steps().contains(&n).then(|| self.snapshots[n - self.first].as_slice())
    }

    pub(crate) fn snapshots(&self) -> &[Vec<f64>] {
        &self.snapshots
    }

    #[cfg(test)]
    pub(crate) fn from_snapshots(dim: usize, time: TimeGrid, snapshots: Vec<Vec<f64>>) -> Self {
        DisplacementTrajectory { dim, time, storage: Storage::All, first: 0, snapshots, layer: None }
    }
}

struct Recorder {
    storage: Storage,
    steps: usize,
    first: usize,
    snapshots: Vec<Vec<f64>>,
    layer: Option<Arc<Layer>>,
    dim: usize,
}

impl Recorder {
    fn new(g: &Grid, storage: Storage, steps: usize) -> Self {
        let layer = (storage == Storage::BoundaryStencil).then(|| Arc::new(Layer::new(g)));
        let first = if storage == Storage::FinalTwo { steps.saturating_sub(1) } else { 0 };
        Recorder { storage, steps, first, snapshots: Vec::new(), layer, dim: g.dim() }
    }

    fn record(&mut self, n: usize, u: &[f64]) {
        match self.storage {
            Storage::All => self.snapshots.push(u.to_vec()),
            Storage::FinalTwo => {
                if n + 1 >= self.steps {
                    self.snapshots.push(u.to_vec());
                }
            }
            Storage::BoundaryStencil => {
                let d = self.dim;
                let layer = self.layer.as_ref().unwrap();
                let mut v = Vec::with_capacity(layer.nodes.len() * d);
                for &a in &layer.nodes {
                    v.extend_from_slice(&u[a * d..a * d + d]);
                }
                self.snapshots.push(v);
            }
        }
    }

    fn finish(self, time: TimeGrid) -> DisplacementTrajectory {
        DisplacementTrajectory {
            dim: self.dim,
            time,
            storage: self.storage,
            first: self.first,
            snapshots: self.snapshots,
            layer: self.layer,
        }
    }
}

/// Spatially discretized elastic operator with lumped mass.
#[derive(Clone, Debug)]
pub struct ElasticSolver {
    grid: Grid,
    material: MaterialModel,
    stiffness: Stiffness,
    mass: Vec<f64>,
    inv_mass: Vec<f64>,
    interior: Vec<usize>,
    cfl: f64,
}

impl ElasticSolver {
    pub fn new(m: &MaterialModel, g: &Grid) -> Result<Self> {
        m.check_shape(g)?;
        if let Some(a) = m.rho.iter().position(|&r| !(r > 0.0)) {
            return Err(Error::Config(format!("density must be positive (node {a})")));
        }
        let stiffness = Stiffness::assemble(g, &m.mu, &m.lambda);
        let mass: Vec<f64> = (0..g.len()).map(|a| m.rho[a] * g.volume_weight(a)).collect();
        Ok(ElasticSolver {
            grid: g.clone(),
            material: m.clone(),
            stiffness,
            inv_mass: mass.iter().map(|v| 1.0 / v).collect(),
            mass,
            interior: g.interior_nodes().collect(),
            cfl: DEFAULT_CFL,
        })
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn material(&self) -> &MaterialModel {
        &self.material
    }

    /// Lumped nodal masses `rho * volume weight`.
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn max_dt(&self) -> f64 {
        self.cfl * self.grid.h_min() / self.material.max_wave_speed()
    }

    pub fn time_grid(&self, horizon: f64) -> TimeGrid {
        TimeGrid::fitted(horizon, self.max_dt())
    }

    pub fn check_dt(&self, dt: f64) -> Result<()> {
        let max_dt = self.max_dt();
        if dt > max_dt * (1.0 + 1e-12) {
            return Err(Error::Cfl { dt, max_dt });
        }
        Ok(())
    }

    /// `K u` over all nodes.
    pub fn apply_stiffness(&self, u: &[f64], out: &mut [f64]) {
        self.stiffness.apply(u, out);
    }

    /// Potential energy `uᵀ K u`, the exact integral of the stress work for bilinear fields.
    pub fn potential(&self, u: &[f64]) -> f64 {
        self.stiffness.bilinear(u, u)
    }

    fn leapfrog(&self, prev: &[f64], curr: &[f64], next: &mut [f64], dt2: f64) {
        let d = self.grid.dim();
        let mut ku = [0.0; 3];
        for &a in &self.interior {
            self.stiffness.apply_interior(curr, a, &mut ku);
            let s = dt2 * self.inv_mass[a];
            for i in 0..d {
                let k = a * d + i;
                next[k] = 2.0 * curr[k] - prev[k] - s * ku[i];
            }
        }
    }

    fn set_boundary(&self, u: &mut [f64], values: &[f64]) {
        let d = self.grid.dim();
        for (b, bn) in self.grid.boundary().iter().enumerate() {
            u[bn.node * d..bn.node * d + d].copy_from_slice(&values[b * d..b * d + d]);
        }
    }

    /// Marches from `u^0`, `u^1` to step `steps`, calling `visit(n, u^n)` on every step.
    fn march(
        &self,
        time: TimeGrid,
        u0: Vec<f64>,
        u1: Vec<f64>,
        source: Option<&dyn BoundarySource>,
        mut visit: impl FnMut(usize, &[f64]),
    ) {
        let dt2 = time.dt * time.dt;
        let nb = self.grid.boundary_len() * self.grid.dim();
        let mut fbuf = vec![0.0; nb];
        let mut prev = u0;
        let mut curr = u1;
        let mut next = vec![0.0; prev.len()];
        visit(0, &prev);
        if time.steps == 0 {
            return;
        }
        visit(1, &curr);
        for n in 1..time.steps {
            self.leapfrog(&prev, &curr, &mut next, dt2);
            if let Some(src) = source {
                src.fill(n + 1, &mut fbuf);
                self.set_boundary(&mut next, &fbuf);
            }
            std::mem::swap(&mut prev, &mut curr);
            std::mem::swap(&mut curr, &mut next);
            visit(n + 1, &curr);
        }
    }

    fn initial_pair_from_source(&self, f: &dyn BoundarySource) -> Result<(Vec<f64>, Vec<f64>)> {
        let len = self.grid.len() * self.grid.dim();
        let mut fbuf = vec![0.0; self.grid.boundary_len() * self.grid.dim()];
        f.fill(0, &mut fbuf);
        let f0 = fbuf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if f0 != 0.0 {
            return Err(Error::Compatibility(f0));
        }
        let u0 = vec![0.0; len];
        let mut u1 = vec![0.0; len];
        f.fill(1, &mut fbuf);
        self.set_boundary(&mut u1, &fbuf);
        Ok((u0, u1))
    }

    /// Dirichlet problem with zero initial state.
    pub fn solve_ibvp(
        &self,
        f: &dyn BoundarySource,
        time: TimeGrid,
        storage: Storage,
    ) -> Result<DisplacementTrajectory> {
        self.check_dt(time.dt)?;
        let (u0, u1) = self.initial_pair_from_source(f)?;
        let mut rec = Recorder::new(&self.grid, storage, time.steps);
        self.march(time, u0, u1, Some(f), |n, u| rec.record(n, u));
        Ok(rec.finish(time))
    }

    /// Homogeneous Dirichlet problem with initial displacement and velocity.
    pub fn solve_initial_value(
        &self,
        u0: &[f64],
        v0: &[f64],
        time: TimeGrid,
        storage: Storage,
    ) -> Result<DisplacementTrajectory> {
        self.check_dt(time.dt)?;
        let d = self.grid.dim();
        let len = self.grid.len() * d;
        if u0.len() != len || v0.len() != len {
            return Err(Error::Shape(format!("initial data must have {len} entries")));
        }
        let mut start = u0.to_vec();
        let zeros = vec![0.0; self.grid.boundary_len() * d];
        self.set_boundary(&mut start, &zeros);
        let mut ku = vec![0.0; len];
        self.stiffness.apply(&start, &mut ku);
        let dt = time.dt;
        let mut u1 = vec![0.0; len];
        for &a in &self.interior {
            for i in 0..d {
                let k = a * d + i;
                u1[k] = start[k] + dt * v0[k] - 0.5 * dt * dt * self.inv_mass[a] * ku[k];
            }
        }
        let mut rec = Recorder::new(&self.grid, storage, time.steps);
        self.march(time, start, u1, None, |n, u| rec.record(n, u));
        Ok(rec.finish(time))
    }

    /// Homogeneous Dirichlet problem with `p(T) = 0`, `∂t p(T) = phi`, indexed by physical time.
    pub fn solve_dual(
        &self,
        phi: &[f64],
        time: TimeGrid,
        storage: Storage,
    ) -> Result<DisplacementTrajectory> {
        let d = self.grid.dim();
        if phi.len() != self.grid.len() * d {
            return Err(Error::Shape(format!("phi must have {} entries", self.grid.len() * d)));
        }
        for bn in self.grid.boundary() {
            if phi[bn.node * d..bn.node * d + d].iter().any(|v| *v != 0.0) {
                return Err(Error::Config(format!(
                    "terminal velocity must vanish on the boundary (node {})",
                    bn.node
                )));
            }
        }
        // q(s) = p(T - s) solves the forward problem with q(0) = 0, ∂s q(0) = -phi.
        let v0: Vec<f64> = phi.iter().map(|v| -v).collect();
        let zero = vec![0.0; phi.len()];
        let run_time = match storage {
            Storage::FinalTwo => TimeGrid { dt: time.dt, steps: 1 },
            _ => time,
        };
        let rec_storage = if storage == Storage::FinalTwo { Storage::All } else { storage };
        let mut fwd = self.solve_initial_value(&zero, &v0, run_time, rec_storage)?;
        fwd.snapshots.reverse();
        fwd.time = time;
        fwd.storage = storage;
        fwd.first = if storage == Storage::FinalTwo { time.steps - 1 } else { 0 };
        Ok(fwd)
    }

    /// Conservative boundary forces `M δ²f + K u` for every step `0..=steps`.
    ///
    /// Row `n` holds one d-vector per boundary node. Dividing by the boundary
    /// weight gives a traction density; with these forces the discrete Green
    /// identity holds without remainder.
    pub fn boundary_forces(&self, f: &dyn BoundarySource, time: TimeGrid) -> Result<Vec<f64>> {
        self.check_dt(time.dt)?;
        let d = self.grid.dim();
        let nb = self.grid.boundary_len() * d;
        let (u0, u1) = self.initial_pair_from_source(f)?;
        let inv_dt2 = 1.0 / (time.dt * time.dt);
        let mut out = vec![0.0; (time.steps + 1) * nb];
        // f^{n-1}, f^n, f^{n+1}
        let mut fm = vec![0.0; nb];
        let mut f0 = vec![0.0; nb];
        let mut fp = vec![0.0; nb];
        f.fill(0, &mut f0);
        let mut ku = [0.0; 3];
        self.march(time, u0, u1, Some(f), |n, u| {
            f.fill(n + 1, &mut fp);
            let row = &mut out[n * nb..(n + 1) * nb];
            for (b, bn) in self.grid.boundary().iter().enumerate() {
                self.stiffness.apply_checked(u, bn.node, &mut ku);
                let m = self.mass[bn.node];
                for i in 0..d {
                    let k = b * d + i;
                    row[k] = m * (fp[k] - 2.0 * f0[k] + fm[k]) * inv_dt2 + ku[i];
                }
            }
            std::mem::swap(&mut fm, &mut f0);
            std::mem::swap(&mut f0, &mut fp);
        });
        Ok(out)
    }

    /// Conservative traction density on the boundary.
    pub fn reaction_traction(
        &self,
        f: &dyn BoundarySource,
        time: TimeGrid,
    ) -> Result<SpaceTimeBoundaryField> {
        let d = self.grid.dim();
        let mut forces = self.boundary_forces(f, time)?;
        let w: Vec<f64> = self.grid.boundary().iter().map(|b| b.weight).collect();
        for row in forces.chunks_mut(w.len() * d) {
            for (b, wb) in w.iter().enumerate() {
                row[b * d..b * d + d].iter_mut().for_each(|v| *v /= wb);
            }
        }
        Ok(SpaceTimeBoundaryField::from_parts(d, time, forces, w))
    }
}

pub fn solve_ibvp(
    m: &MaterialModel,
    g: &Grid,
    f: &dyn BoundarySource,
    time: TimeGrid,
    storage: Storage,
) -> Result<DisplacementTrajectory> {
    ElasticSolver::new(m, g)?.solve_ibvp(f, time, storage)
}

pub fn solve_dual(
    m: &MaterialModel,
    g: &Grid,
    phi: &[f64],
    time: TimeGrid,
    storage: Storage,
) -> Result<DisplacementTrajectory> {
    ElasticSolver::new(m, g)?.solve_dual(phi, time, storage)
}

/// Traction at one boundary node from nodal values, by finite differences.
pub fn fd_traction_at(
    g: &Grid,
    mu: f64,
    lambda: f64,
    b: usize,
    lookup: &dyn Fn(usize) -> Option<[f64; 3]>,
) -> Option<[f64; 3]> {
    let d = g.dim();
    let bn = &g.boundary()[b];
    let a = bn.node;
    let idx = g.multi_index(a);
    let n = g.n();
    // grad[j][k] = ∂_k u_j
    let mut grad = [[0.0; 3]; 3];
    for k in 0..d {
        let s = g.stride(k);
        let h = g.spacing()[k];
        let i = idx[k];
        let (c, nodes): ([f64; 3], [usize; 3]) = if i == 0 {
            ([-1.5 / h, 2.0 / h, -0.5 / h], [a, a + s, a + 2 * s])
        } else if i == n - 1 {
            ([1.5 / h, -2.0 / h, 0.5 / h], [a, a - s, a - 2 * s])
        } else {
            ([0.5 / h, -0.5 / h, 0.0], [a + s, a - s, a])
        };
        for (ck, &node) in c.iter().zip(&nodes) {
            if *ck == 0.0 {
                continue;
            }
            let u = lookup(node)?;
            for j in 0..d {
                grad[j][k] += ck * u[j];
            }
        }
    }
    let nu = bn.normal;
    let div: f64 = (0..d).map(|i| grad[i][i]).sum();
    let mut t = [0.0; 3];
    for i in 0..d {
        let mut s = 0.0;
        for k in 0..d {
            s += (grad[i][k] + grad[k][i]) * nu[k];
        }
        t[i] = mu * s + lambda * div * nu[i];
    }
    Some(t)
}

/// Traction `mu ∂ν u + mu (∇u)ᵀν + lambda (∇·u) ν` on every boundary node and step.
///
/// Normal derivatives are one-sided second order; tangential ones are centred
/// except along face edges, where they are one-sided as well.
pub fn traction(
    traj: &DisplacementTrajectory,
    m: &MaterialModel,
    g: &Grid,
) -> Result<SpaceTimeBoundaryField> {
    m.check_shape(g)?;
    if traj.storage == Storage::FinalTwo {
        return Err(Error::Storage(traj.storage.name()));
    }
    let time = traj.time;
    let d = g.dim();
    let mut out = SpaceTimeBoundaryField::zeros(g, time);
    for n in 0..=time.steps {
        let lookup = |node: usize| traj.value(n, node);
        for (b, bn) in g.boundary().iter().enumerate() {
            let t = fd_traction_at(g, m.mu[bn.node], m.lambda[bn.node], b, &lookup)
                .ok_or(Error::Storage(traj.storage.name()))?;
            out.at_mut(n, b).copy_from_slice(&t[..d]);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergySeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl EnergySeries {
    /// max |E(t) - E(t_1)| / E(t_1); zero for an identically zero series.
    pub fn max_relative_drift(&self) -> f64 {
        let e0 = self.values[0];
        if e0 == 0.0 {
            return if self.values.iter().all(|&v| v == 0.0) { 0.0 } else { f64::INFINITY };
        }
        self.values.iter().map(|e| (e - e0).abs() / e0).fold(0.0, f64::max)
    }
}

/// Kinetic plus stored energy at steps `1..steps`, velocity by centred differences.
pub fn energy(traj: &DisplacementTrajectory, m: &MaterialModel, g: &Grid) -> Result<EnergySeries> {
    let solver = ElasticSolver::new(m, g)?;
    energy_with(&solver, traj)
}

pub fn energy_with(solver: &ElasticSolver, traj: &DisplacementTrajectory) -> Result<EnergySeries> {
    if traj.storage != Storage::All {
        return Err(Error::Storage(traj.storage.name()));
    }
    let snaps = traj.snapshots();
    if snaps.len() < 3 {
        return Err(Error::Storage("fewer than three snapshots"));
    }
    let d = solver.grid().dim();
    let dt = traj.time.dt;
    let mass = solver.mass();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for n in 1..snaps.len() - 1 {
        let (a, c) = (&snaps[n - 1], &snaps[n + 1]);
        let mut kin = 0.0;
        for (node, m) in mass.iter().enumerate() {
            for i in 0..d {
                let k = node * d + i;
                let v = (c[k] - a[k]) / (2.0 * dt);
                kin += m * v * v;
            }
        }
        times.push(traj.time.time(n));
        values.push(kin + solver.potential(&snaps[n]));
    }
    Ok(EnergySeries { times, values })
}

/// Interior residual `L u / rho`-free form `-(K u)_a / vol_a` at every node (zero on the boundary).
pub fn elastic_residual(solver: &ElasticSolver, u: &[f64]) -> Vec<f64> {
    let g = solver.grid();
    let d = g.dim();
    let mut ku = vec![0.0; u.len()];
    solver.apply_stiffness(u, &mut ku);
    for a in 0..g.len() {
        let s = if g.is_boundary(a) { 0.0 } else { -1.0 / g.volume_weight(a) };
        for i in 0..d {
            ku[a * d + i] *= s;
        }
    }
    ku
}

/// Sum over nodes of `M_a u_a · v_a`, the trapezoid rule for ∫ u·v rho dx.
pub fn mass_inner(solver: &ElasticSolver, u: &[f64], v: &[f64]) -> f64 {
    let d = solver.grid().dim();
    solver
        .mass()
        .iter()
        .enumerate()
        .map(|(a, m)| m * (0..d).map(|i| u[a * d + i] * v[a * d + i]).sum::<f64>())
        .sum()
}

/// Discrete ‖∇u‖ over the grid (centred differences, trapezoid weights).
pub fn gradient_norm(g: &Grid, u: &[f64]) -> f64 {
    let d = g.dim();
    let comps: Vec<Vec<f64>> = (0..d).map(|j| (0..g.len()).map(|a| u[a * d + j]).collect()).collect();
    let mut acc = 0.0;
    for a in 0..g.len() {
        let w = g.volume_weight(a);
        for c in &comps {
            let gr = fd::gradient_at(g, c, a);
            acc += w * gr[..d].iter().map(|v| v * v).sum::<f64>();
        }
    }
    acc.sqrt()
}

/// Discrete L² norm with trapezoid weights (unit density).
pub fn l2_norm(g: &Grid, u: &[f64]) -> f64 {
    let d = g.dim();
    (0..g.len())
        .map(|a| g.volume_weight(a) * (0..d).map(|i| u[a * d + i].powi(2)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    fn setup(n: usize) -> (Grid, MaterialModel) {
        let g = build_grid(2, n, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let m = MaterialModel::constant(&g, 1.0, 1.0, 0.5);
        (g, m)
    }

    #[test]
    fn zero_data_zero_solution() {
        let (g, m) = setup(10);
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = s.time_grid(0.5);
        let f = SpaceTimeBoundaryField::zeros(&g, time);
        let traj = s.solve_ibvp(&f, time, Storage::All).unwrap();
        assert!(traj.snapshots().iter().all(|u| u.iter().all(|v| *v == 0.0)));
        let t = traction(&traj, &m, &g).unwrap();
        assert_eq!(t.max_abs(), 0.0);
        let e = energy(&traj, &m, &g).unwrap();
        assert!(e.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cfl_violation_suggests_dt() {
        let (g, m) = setup(10);
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = TimeGrid { dt: 2.0 * s.max_dt(), steps: 4 };
        let f = SpaceTimeBoundaryField::zeros(&g, time);
        match s.solve_ibvp(&f, time, Storage::All) {
            Err(Error::Cfl { max_dt, .. }) => assert_eq!(max_dt, s.max_dt()),
            other => panic!("expected CFL error, got {other:?}"),
        }
    }

    #[test]
    fn incompatible_data_rejected() {
        let (g, m) = setup(8);
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = s.time_grid(0.2);
        let f = SpaceTimeBoundaryField::from_fn(&g, time, |_, _, _| [1.0, 0.0, 0.0]);
        assert!(matches!(s.solve_ibvp(&f, time, Storage::All), Err(Error::Compatibility(_))));
    }

    #[test]
    fn linear_field_traction_exact() {
        let (g, _) = setup(9);
        let m = MaterialModel::constant(&g, 1.0, 1.7, -0.3);
        let b = [[0.3, -1.2], [0.4, 0.9]];
        let d = 2;
        let mut u = vec![0.0; g.len() * d];
        for a in 0..g.len() {
            let x = g.coords(a);
            for i in 0..d {
                u[a * d + i] = b[i][0] * x[0] + b[i][1] * x[1];
            }
        }
        let time = TimeGrid { dt: 0.1, steps: 1 };
        let traj = DisplacementTrajectory::from_snapshots(d, time, vec![u.clone(), u]);
        let t = traction(&traj, &m, &g).unwrap();
        let tr = b[0][0] + b[1][1];
        for (bi, bn) in g.boundary().iter().enumerate() {
            let nu = bn.normal;
            for i in 0..d {
                let mut exact = -0.3 * tr * nu[i];
                for k in 0..d {
                    exact += 1.7 * (b[i][k] + b[k][i]) * nu[k];
                }
                assert!((t.at(0, bi)[i] - exact).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stencil_storage_traction_matches_full() {
        let (g, m) = setup(12);
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = s.time_grid(0.4);
        let f = SpaceTimeBoundaryField::from_fn(&g, time, |t, x, _| {
            [(t * 7.0).sin().powi(3) * x[1], 0.2 * (t * 5.0).sin().powi(3), 0.0]
        });
        let full = s.solve_ibvp(&f, time, Storage::All).unwrap();
        let thin = s.solve_ibvp(&f, time, Storage::BoundaryStencil).unwrap();
        let a = traction(&full, &m, &g).unwrap();
        let b = traction(&thin, &m, &g).unwrap();
        assert_eq!(a, b);
        let last = s.solve_ibvp(&f, time, Storage::FinalTwo).unwrap();
        assert_eq!(last.final_state().unwrap(), full.final_state().unwrap());
        assert!(matches!(traction(&last, &m, &g), Err(Error::Storage(_))));
    }

    #[test]
    fn energy_needs_three_snapshots() {
        let (g, m) = setup(8);
        let time = TimeGrid { dt: 0.01, steps: 1 };
        let z = vec![0.0; g.len() * 2];
        let traj = DisplacementTrajectory::from_snapshots(2, time, vec![z.clone(), z]);
        assert!(energy(&traj, &m, &g).is_err());
    }

    #[test]
    fn dual_of_zero_is_zero() {
        let (g, m) = setup(8);
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = s.time_grid(0.3);
        let p = s.solve_dual(&vec![0.0; g.len() * 2], time, Storage::All).unwrap();
        assert!(p.snapshots().iter().all(|u| u.iter().all(|v| *v == 0.0)));
    }
}
