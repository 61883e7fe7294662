//! Perturbation experiments: the DtN distance ℰ, Lipschitz and logarithmic
//! stability trends, and the Sobolev-class check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::boundary::{BoundaryBasis, TemporalAtoms};
use crate::error::{Error, Result};
use crate::forward::{ElasticSolver, TimeGrid};
use crate::linalg::{cholesky, solve_lower, solve_lower_t, sym_eigen, DenseMatrix};
use crate::material::{validate_material, MaterialModel};
use crate::mesh::{Face, Grid};
use crate::reconstruction::{
    frequency_lattice, max_lattice_radius, oracle_fourier, reconstruct_density, relative_l2, scalar_l2,
    BoundaryData, FourierSample, Regularization, TraceMode,
};

/// Stopping rule for power iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NormOptions {
    fn default() -> Self {
        NormOptions { max_iter: 50, tol: 1e-8 }
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite map.
pub fn power_iteration(n: usize, apply: impl Fn(&[f64]) -> Result<Vec<f64>>, opts: NormOptions) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64).collect();
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= nx);
    let mut est = 0.0;
    for _ in 0..opts.max_iter {
        let y = apply(&x)?;
        let ray: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ny == 0.0 {
            return Ok(0.0);
        }
        let done = (ray - est).abs() <= opts.tol * ray.abs();
        est = ray;
        if done {
            break;
        }
        x = y.into_iter().map(|v| v / ny).collect();
    }
    Ok(est)
}

/// Normalized temporal Gram `Ĝ` with `⟨f_i, f_j⟩ = δ_{s s'} Ĝ_{k k'}`.
fn temporal_gram(atoms: &TemporalAtoms) -> DenseMatrix {
    let g = atoms.gram();
    let a2 = g.get(0, 0);
    DenseMatrix::from_fn(g.rows, g.cols, |i, j| g.get(i, j) / a2)
}

fn inv_sqrt(m: &DenseMatrix) -> Result<DenseMatrix> {
    let e = sym_eigen(m)?;
    let n = m.rows;
    let floor = e.values.last().copied().unwrap_or(0.0) * 1e-14;
    Ok(DenseMatrix::from_fn(n, n, |i, j| {
        (0..n)
            .filter(|&k| e.values[k] > floor)
            .map(|k| e.vectors.get(i, k) * e.vectors.get(j, k) / e.values[k].sqrt())
            .sum()
    }))
}

/// L² Gram of the basis: block diagonal `I ⊗ Ĝ`.
pub fn source_gram_l2(basis: &BoundaryBasis) -> DenseMatrix {
    let gt = temporal_gram(basis.atoms());
    let na = gt.rows;
    DenseMatrix::from_fn(basis.len(), basis.len(), |i, j| {
        if i / na == j / na { gt.get(i % na, j % na) } else { 0.0 }
    })
}

/// Tangential difference form on boundary nodes: for every face and every pair of
/// nodes adjacent along one of its tangential axes, `ω (u_b - u_b')²` with
/// `ω = h_a⁻¹ · Π` (trapezoid widths along the remaining tangential axes).
pub fn tangential_form(g: &Grid) -> Vec<(usize, usize, f64)> {
    let d = g.dim();
    let n = g.n();
    let h = g.spacing().to_vec();
    let mut edges = Vec::new();
    for face in (0..2 * d).map(Face::from_index) {
        let fixed = if face.high { n - 1 } else { 0 };
        for (b, bn) in g.boundary().iter().enumerate() {
            let idx = g.multi_index(bn.node);
            if idx[face.axis] != fixed {
                continue;
            }
            for a in (0..d).filter(|&a| a != face.axis) {
                if idx[a] + 1 >= n {
                    continue;
                }
                let nb = g.boundary_slot(bn.node + g.stride(a)).expect("face neighbour is on the boundary");
                let mut w = 1.0 / h[a];
                for o in (0..d).filter(|&o| o != a && o != face.axis) {
                    w *= if idx[o] == 0 || idx[o] == n - 1 { 0.5 * h[o] } else { h[o] };
                }
                edges.push((b, nb, w));
            }
        }
    }
    edges
}

/// Discrete H¹((0,T)×∂Ω) Gram: L² part, time differences, tangential differences.
pub fn source_gram_h1(basis: &BoundaryBasis, g: &Grid) -> DenseMatrix {
    let atoms = basis.atoms();
    let gt = atoms.gram();
    let a2 = gt.get(0, 0);
    let gd = atoms.derivative_gram();
    let na = atoms.count;
    let d = basis.dim();
    let mut h = DenseMatrix::zeros(basis.len(), basis.len());
    for s in 0..basis.spatial_len() {
        for k in 0..na {
            for l in 0..na {
                h.set(s * na + k, s * na + l, (gt.get(k, l) + gd.get(k, l)) / a2);
            }
        }
    }
    for (b, c, w) in tangential_form(g) {
        let (sb, sc) = (basis.scale(b), basis.scale(c));
        for comp in 0..d {
            let (p, q) = ((b * d + comp) * na, (c * d + comp) * na);
            for k in 0..na {
                for l in 0..na {
                    let v = w * gt.get(k, l);
                    h.data[(p + k) * h.cols + p + l] += v * sb * sb;
                    h.data[(q + k) * h.cols + q + l] += v * sc * sc;
                    h.data[(p + k) * h.cols + q + l] -= v * sb * sc;
                    h.data[(q + k) * h.cols + p + l] -= v * sb * sc;
                }
            }
        }
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtnDistance {
    /// ‖𝒥̃ - 𝒥‖ on L²((0,T)×∂Ω).
    pub j_part: f64,
    /// ‖Λ̃_T - Λ_T‖ from H¹ sources to L² tractions.
    pub lambda_part: f64,
    pub total: f64,
}

/// Precomputed Gram factors shared by every distance on one basis.
pub struct DistanceNorms {
    l2_inv_sqrt: DenseMatrix,
    h1_chol: DenseMatrix,
    na: usize,
    pub options: NormOptions,
}

impl DistanceNorms {
    pub fn new(basis: &BoundaryBasis, g: &Grid, options: NormOptions) -> Result<Self> {
        let gt = temporal_gram(basis.atoms());
        Ok(DistanceNorms {
            l2_inv_sqrt: inv_sqrt(&gt)?,
            h1_chol: cholesky(&source_gram_h1(basis, g))?,
            na: gt.rows,
            options,
        })
    }

    fn blockwise(&self, x: &[f64]) -> Vec<f64> {
        let na = self.na;
        x.chunks(na).flat_map(|c| self.l2_inv_sqrt.matvec(c)).collect()
    }

    pub fn distance(&self, base: &BoundaryData, pert: &BoundaryData) -> Result<DtnDistance> {
        let (b0, b1) = (base.lambda_t.basis(), pert.lambda_t.basis());
        if b0.len() != b1.len() || b0.time() != b1.time() || b0.atoms() != b1.atoms() || b0.weights() != b1.weights() {
            return Err(Error::Shape("operator sets use different bases".into()));
        }
        let n = b0.len();
        let dj = pert.connecting.matrix().sub(base.connecting.matrix());
        // G^{-1/2} ΔJ G^{-1/2} is symmetric; square it for a PSD iteration
        let m = |x: &[f64]| self.blockwise(&dj.matvec(&self.blockwise(x)));
        let j2 = power_iteration(n, |x| Ok(m(&m(x))), self.options)?;
        let lam2 = power_iteration(
            n,
            |y| {
                let mut x = y.to_vec();
                solve_lower_t(&self.h1_chol, &mut x);
                let mut diff = pert.lambda_t.apply(&x)?;
                diff.axpy(-1.0, &base.lambda_t.apply(&x)?)?;
                let a = pert.lambda_t.adjoint_apply(&diff)?;
                let b = base.lambda_t.adjoint_apply(&diff)?;
                let mut z: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p - q).collect();
                solve_lower(&self.h1_chol, &mut z);
                Ok(z)
            },
            self.options,
        )?;
        let (j_part, lambda_part) = (j2.max(0.0).sqrt(), lam2.max(0.0).sqrt());
        Ok(DtnDistance { j_part, lambda_part, total: j_part + lambda_part })
    }
}

pub fn dtn_distance(base: &BoundaryData, pert: &BoundaryData, g: &Grid, options: NormOptions) -> Result<DtnDistance> {
    DistanceNorms::new(base.lambda_t.basis(), g, options)?.distance(base, pert)
}

/// `γ = -ln ℰ / (4R + 1)`.
pub fn gamma_cutoff(e: f64, r: f64) -> f64 {
    -e.ln() / (4.0 * r + 1.0)
}

/// The logarithmic estimate needs `ℰ < e^{-8R-2}`.
pub fn out_of_regime(e: f64, r: f64) -> bool {
    e >= (-8.0 * r - 2.0).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityConfig {
    pub horizon: f64,
    pub atoms: usize,
    pub width: f64,
    pub regularization: Regularization,
    pub trace_mode: TraceMode,
    /// Frequencies for the per-ξ Lipschitz table.
    pub xis: Vec<Vec<f64>>,
    pub norm: NormOptions,
}

#[derive(Clone, Debug)]
pub struct PerturbationExperiment {
    pub base: MaterialModel,
    /// δρ, zero within two cells of ∂Ω.
    pub direction: Vec<f64>,
    pub epsilons: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonRecord {
    pub epsilon: f64,
    pub distance: DtnDistance,
    /// `F̂(ρ̃) - F̂(ρ)` from the boundary data, per configured ξ.
    pub fourier_diff: Vec<FourierSample>,
    /// ‖ρ̃ - ρ‖_{L²(Ω)}.
    pub l2_diff: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PerturbationRun {
    pub radius: f64,
    pub time: TimeGrid,
    pub records: Vec<EpsilonRecord>,
}

impl PerturbationExperiment {
    pub fn check(&self, g: &Grid) -> Result<()> {
        self.base.check_shape(g)?;
        if self.direction.len() != g.len() {
            return Err(Error::Shape("perturbation direction does not match the grid".into()));
        }
        if let Some(a) = (0..g.len()).find(|&a| g.depth(a) <= 2 && self.direction[a] != 0.0) {
            return Err(Error::Config(format!("perturbation is nonzero at node {a}, inside the two-cell collar")));
        }
        if self.epsilons.is_empty() {
            return Err(Error::Config("empty epsilon schedule".into()));
        }
        Ok(())
    }

    pub fn perturbed(&self, eps: f64) -> MaterialModel {
        self.base.with_rho(self.base.rho.iter().zip(&self.direction).map(|(r, d)| r + eps * d).collect())
    }

    /// Assembles the base and every perturbed operator set on one shared time grid.
    pub fn run(&self, g: &Grid, cfg: &StabilityConfig) -> Result<PerturbationRun> {
        Ok(self.run_measured(g, cfg)?.0)
    }

    /// Like [`Self::run`], keeping the measured operators for later sampling.
    pub fn run_measured(&self, g: &Grid, cfg: &StabilityConfig) -> Result<(PerturbationRun, MeasuredSet)> {
        self.check(g)?;
        let mut models = vec![self.base.clone()];
        for &e in &self.epsilons {
            let m = self.perturbed(e);
            let report = validate_material(&m, g)?;
            if !report.is_admissible() {
                return Err(Error::Config(format!("perturbed density at epsilon = {e} is not admissible")));
            }
            models.push(m);
        }
        let solvers = models.iter().map(|m| ElasticSolver::new(m, g)).collect::<Result<Vec<_>>>()?;
        let max_dt = solvers.iter().map(|s| s.max_dt()).fold(f64::INFINITY, f64::min);
        let time = TimeGrid::fitted(cfg.horizon, max_dt);
        let basis = BoundaryBasis::new(g, TemporalAtoms::new(time, cfg.atoms, cfg.width)?);
        let data = solvers
            .par_iter()
            .map(|s| BoundaryData::measure(s, &basis, cfg.regularization))
            .collect::<Result<Vec<_>>>()?;
        let norms = DistanceNorms::new(&basis, g, cfg.norm)?;
        let set = MeasuredSet { lame: solvers.into_iter().next().unwrap(), data, trace_mode: cfg.trace_mode };
        let base_samples = set.samples(0, &cfg.xis)?;
        let mut records = Vec::with_capacity(self.epsilons.len());
        for (i, &epsilon) in self.epsilons.iter().enumerate() {
            let distance = norms.distance(&set.data[0], &set.data[i + 1])?;
            let fourier_diff = set
                .samples(i + 1, &cfg.xis)?
                .into_iter()
                .zip(&base_samples)
                .map(|(p, b)| {
                    let truth = oracle_fourier(g, &self.direction, &p.xi) * epsilon;
                    FourierSample { xi: p.xi, value: p.value - b.value, oracle: Some(truth) }
                })
                .collect();
            let diff: Vec<f64> = self.direction.iter().map(|d| epsilon * d).collect();
            let l2_diff = scalar_l2(g, &diff);
            records.push(EpsilonRecord { epsilon, distance, fourier_diff, l2_diff });
        }
        Ok((PerturbationRun { radius: g.enclosing_radius(), time, records }, set))
    }
}

/// Base (index 0) and perturbed boundary data of one experiment.
pub struct MeasuredSet {
    /// Solver on the base medium; supplies μ and λ for the probes.
    pub lame: ElasticSolver,
    pub data: Vec<BoundaryData>,
    pub trace_mode: TraceMode,
}

impl MeasuredSet {
    /// Fourier samples of medium `i` from its own boundary data.
    pub fn samples(&self, i: usize, xis: &[Vec<f64>]) -> Result<Vec<FourierSample>> {
        let d = self.data.get(i).ok_or_else(|| Error::Config(format!("no measured medium {i}")))?;
        d.sample_all(&self.lame, xis, &d.inverse, self.trace_mode, None)
    }

    /// `F̂(ρ̃) - F̂(ρ)` for medium `i`.
    pub fn sample_diff(&self, i: usize, xis: &[Vec<f64>]) -> Result<Vec<FourierSample>> {
        let base = self.samples(0, xis)?;
        Ok(self
            .samples(i, xis)?
            .into_iter()
            .zip(base)
            .map(|(p, b)| FourierSample { xi: p.xi, value: p.value - b.value, oracle: None })
            .collect())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzRow {
    pub xi: Vec<f64>,
    /// |ΔF̂(ξ)| / ℰ per ε.
    pub ratios: Vec<f64>,
    /// Least-squares slope of ln|ΔF̂| against ln ℰ.
    pub slope: f64,
    /// max ratio / e^{2R|ξ|}.
    pub constant: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub rows: Vec<LipschitzRow>,
    /// Decades of ε covered by the schedule.
    pub decades: f64,
}

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

pub fn lipschitz_report(run: &PerturbationRun) -> Result<LipschitzReport> {
    let recs = &run.records;
    for r in recs {
        if r.distance.total == 0.0 && r.l2_diff > 0.0 {
            return Err(Error::Degenerate(format!("zero distance at epsilon = {}", r.epsilon)));
        }
    }
    let nxi = recs.first().map_or(0, |r| r.fourier_diff.len());
    let le: Vec<f64> = recs.iter().map(|r| r.distance.total.ln()).collect();
    let rows = (0..nxi)
        .map(|k| {
            let xi = recs[0].fourier_diff[k].xi.clone();
            let mags: Vec<f64> = recs.iter().map(|r| r.fourier_diff[k].value.norm()).collect();
            let ratios: Vec<f64> = mags.iter().zip(recs).map(|(m, r)| m / r.distance.total).collect();
            let lm: Vec<f64> = mags.iter().map(|m| m.ln()).collect();
            let xn = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let constant = ratios.iter().fold(0.0f64, |a, b| a.max(*b)) / (2.0 * run.radius * xn).exp();
            LipschitzRow { xi, ratios, slope: ls_slope(&le, &lm), constant }
        })
        .collect();
    let (lo, hi) = recs.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r.epsilon), h.max(r.epsilon)));
    Ok(LipschitzReport { rows, decades: (hi / lo).log10() })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogStabilityRow {
    pub epsilon: f64,
    pub e: f64,
    pub gamma: f64,
    pub out_of_regime: bool,
    pub l2_diff: f64,
    /// (-ln ℰ)⁻².
    pub bound_term: f64,
    /// ‖band-limited reconstruction of ρ̃ - ρ‖ / ‖ρ̃ - ρ‖, when γ admits a lattice.
    pub reconstruction_l2: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogStabilityReport {
    pub rows: Vec<LogStabilityRow>,
    /// Both columns decrease with ε.
    pub monotone: bool,
}

/// Per-ε cutoff and band-limited reconstruction of the density difference,
/// from samples on the lattice of radius `min(γ, lattice bound)`.
pub fn log_stability_report(
    exp: &PerturbationExperiment,
    run: &PerturbationRun,
    g: &Grid,
    sample_diff: impl Fn(f64, &[Vec<f64>]) -> Result<Vec<FourierSample>>,
) -> Result<LogStabilityReport> {
    let r = run.radius;
    let cap = max_lattice_radius(g);
    let mut rows = Vec::with_capacity(run.records.len());
    for rec in &run.records {
        let e = rec.distance.total;
        let gamma = gamma_cutoff(e, r);
        let reconstruction_l2 = if gamma >= 0.0 {
            let gm = gamma.min(cap);
            let xis = frequency_lattice(g, gm)?;
            let samples = sample_diff(rec.epsilon, &xis)?;
            let rec_field = reconstruct_density(&samples, gm, g)?.rho_rec;
            let diff: Vec<f64> = exp.direction.iter().map(|d| rec.epsilon * d).collect();
            Some(relative_l2(g, &rec_field, &diff))
        } else {
            None
        };
        rows.push(LogStabilityRow {
            epsilon: rec.epsilon,
            e,
            gamma,
            out_of_regime: out_of_regime(e, r) || gamma <= 2.0,
            l2_diff: rec.l2_diff,
            bound_term: e.ln().powi(-2),
            reconstruction_l2,
        });
    }
    let mut order: Vec<&LogStabilityRow> = rows.iter().collect();
    order.sort_by(|a, b| a.epsilon.partial_cmp(&b.epsilon).unwrap());
    let monotone = order.windows(2).all(|w| w[0].l2_diff < w[1].l2_diff && w[0].bound_term < w[1].bound_term);
    Ok(LogStabilityReport { rows, monotone })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevReport {
    pub s: f64,
    pub norm: f64,
    pub bound: f64,
    pub passes: bool,
}

/// `‖ρ‖_{H^{s+2}}` from the periodic discrete transform over the box:
/// `(1/|Ω|) Σ (1 + |ξ_k|²)^{s+2} |F̂(ξ_k)|²`, square-rooted.
pub fn sobolev_norm(g: &Grid, field: &[f64], s: f64) -> Result<f64> {
    if field.len() != g.len() {
        return Err(Error::Shape("field does not match the grid".into()));
    }
    let d = g.dim();
    let n = g.n();
    let m = n - 1;
    let h = g.spacing().to_vec();
    let sides = g.side_lengths();
    // periodic samples: drop the last index on each axis
    let total = m.pow(d as u32);
    let mut data: Vec<Complex64> = (0..total)
        .map(|p| {
            let mut rest = p;
            let mut idx = [0usize; 3];
            for k in (0..d).rev() {
                idx[k] = rest % m;
                rest /= m;
            }
            Complex64::new(field[g.node_index(&idx)], 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for axis in 0..d {
        let stride = m.pow((d - 1 - axis) as u32);
        for start in 0..total {
            if (start / stride) % m != 0 {
                continue;
            }
            for j in 0..m {
                line[j] = data[start + j * stride];
            }
            fft.process(&mut line);
            for j in 0..m {
                data[start + j * stride] = line[j];
            }
        }
    }
    let cell: f64 = h.iter().product();
    let freq = |j: usize, l: f64| {
        let k = if j <= m / 2 { j as f64 } else { j as f64 - m as f64 };
        2.0 * PI * k / l
    };
    let mut acc = 0.0;
    for (p, z) in data.iter().enumerate() {
        let mut rest = p;
        let mut xi2 = 0.0;
        for k in (0..d).rev() {
            xi2 += freq(rest % m, sides[k]).powi(2);
            rest /= m;
        }
        acc += (1.0 + xi2).powf(s + 2.0) * (z.norm() * cell).powi(2);
    }
    Ok((acc / g.volume()).sqrt())
}

pub fn sobolev_class_check(g: &Grid, field: &[f64], s: f64, bound: f64) -> Result<SobolevReport> {
    let norm = sobolev_norm(g, field, s)?;
    Ok(SobolevReport { s, norm, bound, passes: norm <= bound })
}
