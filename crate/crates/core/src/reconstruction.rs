//! Pseudo-inverse of 𝒥, Fourier samples of ρ, and band-limited synthesis.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundary::{
    assemble_dtn, connecting_operator, BoundaryBasis, BoundaryOperator, ConnectingOperator,
    DtnOperator, Horizon, KOperator,
};
use crate::cgo::{make_probe, CgoProbe};
use crate::error::{Error, Result};
use crate::forward::ElasticSolver;
use crate::linalg::{sym_eigen, DenseMatrix};
use crate::mesh::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Regularization {
    /// Drop eigenvalues below `threshold · σ_max`.
    Truncated { threshold: f64 },
    /// `(𝒥 + αI)⁻¹`.
    Tikhonov { alpha: f64 },
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::Truncated { threshold: 1e-6 }
    }
}

/// Eigen-decomposition of a symmetrized 𝒥 with a regularized inverse spectrum.
///
/// Vectors are orthonormal in the operator's input weights; the stored
/// vectors are those of `W^{1/2} 𝒥 W^{-1/2}`.
#[derive(Clone, Debug)]
pub struct RegularizedInverse {
    pub values: Vec<f64>,
    vectors: DenseMatrix,
    inv: Vec<f64>,
    sqrt_w: Vec<f64>,
    pub method: Regularization,
    pub rank: usize,
    pub sigma_max: f64,
}

pub fn pseudo_inverse(j: &BoundaryOperator, method: Regularization) -> Result<RegularizedInverse> {
    let n = j.rows();
    if j.cols() != n || j.w_in.len() != n {
        return Err(Error::Shape("pseudo-inverse needs a square operator".into()));
    }
    if j.w_in != j.w_out {
        return Err(Error::Shape("input and output weights differ".into()));
    }
    if let Some(w) = j.w_in.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::Config(format!("weight {w} is not positive")));
    }
    let sqrt_w: Vec<f64> = j.w_in.iter().map(|w| w.sqrt()).collect();
    // weighted self-adjointness means W𝒥 is symmetric
    let a = DenseMatrix::from_fn(n, n, |r, c| {
        let x = j.w_in[r] * j.matrix.get(r, c) / (sqrt_w[r] * sqrt_w[c]);
        let y = j.w_in[c] * j.matrix.get(c, r) / (sqrt_w[r] * sqrt_w[c]);
        0.5 * (x + y)
    });
    let eig = sym_eigen(&a)?;
    let sigma_max = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(bad) = eig.values.iter().find(|&&v| v < -1e-6 * sigma_max) {
        return Err(Error::AssemblyQuality(format!(
            "eigenvalue {bad:e} is below -1e-6 sigma_max (sigma_max = {sigma_max:e})"
        )));
    }
    let inv: Vec<f64> = match method {
        Regularization::Truncated { threshold } => {
            if !(threshold >= 0.0) {
                return Err(Error::Config(format!("threshold {threshold} must be non-negative")));
            }
            eig.values
                .iter()
                .map(|&v| if v > threshold * sigma_max && v > 0.0 { 1.0 / v } else { 0.0 })
                .collect()
        }
        Regularization::Tikhonov { alpha } => {
            if !(alpha > 0.0) {
                return Err(Error::Config(format!("alpha {alpha} must be positive")));
            }
            eig.values.iter().map(|&v| 1.0 / (v.max(0.0) + alpha)).collect()
        }
    };
    let rank = match method {
        Regularization::Truncated { .. } => inv.iter().filter(|v| **v != 0.0).count(),
        Regularization::Tikhonov { .. } => n,
    };
    Ok(RegularizedInverse { values: eig.values, vectors: eig.vectors, inv, sqrt_w, method, rank, sigma_max })
}

impl RegularizedInverse {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn spectral_apply(&self, b: &[f64], f: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.len();
        let scaled: Vec<f64> = b.iter().zip(&self.sqrt_w).map(|(x, s)| x * s).collect();
        let mut coef = self.vectors.matvec_t(&scaled);
        for (k, c) in coef.iter_mut().enumerate() {
            *c *= f(k);
        }
        let y = self.vectors.matvec(&coef);
        (0..n).map(|i| y[i] / self.sqrt_w[i]).collect()
    }

    /// `𝒥† b`.
    pub fn apply(&self, b: &[f64]) -> Vec<f64> {
        self.spectral_apply(b, |k| self.inv[k])
    }

    pub fn apply_complex(&self, b: &[Complex64]) -> Vec<Complex64> {
        let re: Vec<f64> = b.iter().map(|z| z.re).collect();
        let im: Vec<f64> = b.iter().map(|z| z.im).collect();
        self.apply(&re).into_iter().zip(self.apply(&im)).map(|(a, c)| Complex64::new(a, c)).collect()
    }

    /// `𝒥 b` from the (symmetrized) decomposition.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        self.spectral_apply(b, |k| self.values[k])
    }

    /// Orthogonal projection onto the retained eigenspace.
    pub fn project(&self, b: &[f64]) -> Vec<f64> {
        self.spectral_apply(b, |k| if self.inv[k] != 0.0 { 1.0 } else { 0.0 })
    }

    /// Dense `W^{-1/2} V diag(f) Vᵀ W^{1/2}`.
    fn spectral_matrix(&self, f: impl Fn(usize) -> f64) -> DenseMatrix {
        let n = self.len();
        let left = DenseMatrix::from_fn(n, n, |i, k| self.vectors.get(i, k) * f(k) / self.sqrt_w[i]);
        let right = DenseMatrix::from_fn(n, n, |k, j| self.vectors.get(j, k) * self.sqrt_w[j]);
        left.matmul(&right)
    }

    /// Dense `𝒥†`.
    pub fn matrix(&self) -> DenseMatrix {
        self.spectral_matrix(|k| self.inv[k])
    }

    /// `‖𝒥𝒥†𝒥 - 𝒥P‖_F / ‖𝒥‖_F` with `P` the retained projector, `𝒥` the matrix
    /// the decomposition was computed from.
    pub fn projection_defect(&self, j: &DenseMatrix) -> f64 {
        let jjj = j.matmul(&self.matrix()).matmul(j);
        let jp = j.matmul(&self.spectral_matrix(|k| if self.inv[k] != 0.0 { 1.0 } else { 0.0 }));
        let num = jjj.sub(&jp).frobenius();
        let den = j.frobenius();
        if den > 0.0 { num / den } else { num }
    }
}

/// `|ι|⁻² ⟨𝒥† 𝒦φ, 𝒦ψ⟩` with the unconjugated bilinear pairing.
pub fn fourier_sample(
    jinv: &RegularizedInverse,
    k_phi: &[Complex64],
    k_psi: &[Complex64],
    iota: &[Complex64],
) -> Result<Complex64> {
    let n = jinv.len();
    if k_phi.len() != n || k_psi.len() != n {
        return Err(Error::Shape(format!(
            "moments have lengths ({}, {}), expected {n}",
            k_phi.len(),
            k_psi.len()
        )));
    }
    let i2: f64 = iota.iter().map(|z| z.norm_sqr()).sum();
    if !(i2 > 0.0) {
        return Err(Error::Config("probe amplitude iota is zero".into()));
    }
    let c = jinv.apply_complex(k_phi);
    let w = &jinv.sqrt_w;
    let pair: Complex64 = c.iter().zip(k_psi).zip(w).map(|((a, b), s)| a * b * (s * s)).sum();
    Ok(pair / i2)
}

/// Trapezoid quadrature of `∫_Ω e^{iξ·x} ρ(x) dx`.
pub fn oracle_fourier(g: &Grid, rho: &[f64], xi: &[f64]) -> Complex64 {
    let d = g.dim();
    (0..g.len())
        .map(|a| {
            let x = g.coords(a);
            let ph: f64 = (0..d).map(|k| xi[k] * x[k]).sum();
            Complex64::from_polar(g.volume_weight(a) * rho[a], ph)
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierSample {
    pub xi: Vec<f64>,
    pub value: Complex64,
    pub oracle: Option<Complex64>,
}

/// Largest |ξ| whose lattice fits under every axis' Nyquist index.
pub fn max_lattice_radius(g: &Grid) -> f64 {
    g.side_lengths()
        .iter()
        .map(|l| 2.0 * PI * ((g.n() - 1) / 2) as f64 / l)
        .fold(f64::INFINITY, f64::min)
}

/// Integer lattice indices `k` with `|2πk/L| ≤ γ`, lexicographic in `k`.
pub fn lattice_indices(g: &Grid, gamma: f64) -> Result<Vec<Vec<i64>>> {
    let max_xi = max_lattice_radius(g);
    if gamma > max_xi * (1.0 + 1e-12) {
        return Err(Error::Lattice { gamma, max_xi });
    }
    let sides = g.side_lengths();
    let d = g.dim();
    let bound: Vec<i64> = sides.iter().map(|l| (gamma * l / (2.0 * PI) + 1e-9).floor() as i64).collect();
    let mut out = Vec::new();
    let mut k: Vec<i64> = bound.iter().map(|b| -b).collect();
    loop {
        let r2: f64 = (0..d).map(|a| (2.0 * PI * k[a] as f64 / sides[a]).powi(2)).sum();
        if r2.sqrt() <= gamma * (1.0 + 1e-12) {
            out.push(k.clone());
        }
        let mut a = d;
        loop {
            if a == 0 {
                return Ok(out);
            }
            a -= 1;
            if k[a] < bound[a] {
                k[a] += 1;
                break;
            }
            k[a] = -bound[a];
        }
    }
}

pub fn frequency_lattice(g: &Grid, gamma: f64) -> Result<Vec<Vec<f64>>> {
    let sides = g.side_lengths();
    Ok(lattice_indices(g, gamma)?
        .into_iter()
        .map(|k| k.iter().zip(&sides).map(|(&i, l)| 2.0 * PI * i as f64 / l).collect())
        .collect())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    /// Relative L² error against the band-limited truth.
    pub l2_error: Option<f64>,
    /// Worst `|F̂ - oracle| / |oracle(0)|` over the samples.
    pub max_sample_error: Option<f64>,
    /// Largest imaginary part before the real cast, relative to the field.
    pub max_imag: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub samples: Vec<FourierSample>,
    pub gamma: f64,
    pub rho_rec: Vec<f64>,
    /// Set when some ξ lacked its partner -ξ.
    pub symmetrized: bool,
    pub metrics: ReconstructionMetrics,
}

fn lattice_key(g: &Grid, xi: &[f64]) -> Vec<i64> {
    xi.iter().zip(g.side_lengths()).map(|(x, l)| (x * l / (2.0 * PI)).round() as i64).collect()
}

/// Inverse transform over the ξ-lattice of radius `gamma`, with Hermitian averaging.
pub fn reconstruct_density(samples: &[FourierSample], gamma: f64, g: &Grid) -> Result<ReconstructionResult> {
    let lattice = lattice_indices(g, gamma)?;
    let d = g.dim();
    let sides = g.side_lengths();
    let mut table = std::collections::BTreeMap::new();
    for s in samples {
        if s.xi.len() != d {
            return Err(Error::Shape(format!("sample xi has {} components", s.xi.len())));
        }
        table.insert(lattice_key(g, &s.xi), s.value);
    }
    let mut symmetrized = false;
    let mut coeffs = Vec::with_capacity(lattice.len());
    for k in &lattice {
        let neg: Vec<i64> = k.iter().map(|v| -v).collect();
        let v = match (table.get(k), table.get(&neg)) {
            (Some(a), Some(b)) => 0.5 * (a + b.conj()),
            (Some(a), None) => {
                symmetrized = true;
                *a
            }
            (None, Some(b)) => {
                symmetrized = true;
                b.conj()
            }
            (None, None) => {
                return Err(Error::Shape(format!("no sample at lattice index {k:?}")));
            }
        };
        coeffs.push(v);
    }
    let vol = g.volume();
    let xis: Vec<Vec<f64>> = lattice
        .iter()
        .map(|k| k.iter().zip(&sides).map(|(&i, l)| 2.0 * PI * i as f64 / l).collect())
        .collect();
    let field: Vec<Complex64> = (0..g.len())
        .into_par_iter()
        .map(|a| {
            let x = g.coords(a);
            xis.iter()
                .zip(&coeffs)
                .map(|(xi, c)| {
                    let ph: f64 = (0..d).map(|k| xi[k] * x[k]).sum();
                    c * Complex64::from_polar(1.0, -ph)
                })
                .sum::<Complex64>()
                / vol
        })
        .collect();
    let peak = field.iter().fold(0.0f64, |m, z| m.max(z.norm()));
    let imag = field.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    let metrics = ReconstructionMetrics {
        max_imag: if peak > 0.0 { imag / peak } else { imag },
        max_sample_error: sample_error(samples, g),
        l2_error: None,
    };
    Ok(ReconstructionResult {
        samples: samples.to_vec(),
        gamma,
        rho_rec: field.iter().map(|z| z.re).collect(),
        symmetrized,
        metrics,
    })
}

fn sample_error(samples: &[FourierSample], g: &Grid) -> Option<f64> {
    let dc = samples.iter().find(|s| lattice_key(g, &s.xi).iter().all(|&k| k == 0))?.oracle?;
    let mut worst = 0.0f64;
    for s in samples {
        worst = worst.max((s.value - s.oracle?).norm() / dc.norm());
    }
    Some(worst)
}

/// Band-limited projection of a nodal field, from oracle samples.
pub fn band_limited(g: &Grid, rho: &[f64], gamma: f64) -> Result<Vec<f64>> {
    let samples: Vec<FourierSample> = frequency_lattice(g, gamma)?
        .into_iter()
        .map(|xi| {
            let v = oracle_fourier(g, rho, &xi);
            FourierSample { xi, value: v, oracle: Some(v) }
        })
        .collect();
    Ok(reconstruct_density(&samples, gamma, g)?.rho_rec)
}

/// Trapezoid L² norm of a scalar nodal field.
pub fn scalar_l2(g: &Grid, a: &[f64]) -> f64 {
    (0..g.len()).map(|i| g.volume_weight(i) * a[i] * a[i]).sum::<f64>().sqrt()
}

/// `‖a - b‖ / ‖b‖` in the trapezoid L² norm.
pub fn relative_l2(g: &Grid, a: &[f64], b: &[f64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.len() {
        let w = g.volume_weight(i);
        num += w * (a[i] - b[i]).powi(2);
        den += w * b[i] * b[i];
    }
    if den > 0.0 { (num / den).sqrt() } else { num.sqrt() }
}

impl ReconstructionResult {
    /// Fills `l2_error` against the band-limited projection of `truth`.
    pub fn compare_with(&mut self, g: &Grid, truth: &[f64]) -> Result<()> {
        let bl = band_limited(g, truth, self.gamma)?;
        self.metrics.l2_error = Some(relative_l2(g, &self.rho_rec, &bl));
        Ok(())
    }
}

/// How probe traction traces are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Closed-form traction of the exponential.
    Analytic,
    /// Reaction of the discrete static lift, matching what the DtN map measures.
    #[default]
    Consistent,
}

/// Everything measured at the boundary: `Λ_T`, `Λ_2T`, 𝒥 and its pseudo-inverse.
pub struct BoundaryData {
    pub lambda_t: DtnOperator,
    pub lambda_2t: DtnOperator,
    pub connecting: ConnectingOperator,
    pub inverse: RegularizedInverse,
    pub k: KOperator,
}

impl BoundaryData {
    /// One sweep of forward solves over `(0, 2T)`.
    pub fn measure(solver: &ElasticSolver, basis: &BoundaryBasis, method: Regularization) -> Result<Self> {
        let lambda_2t = assemble_dtn(solver, basis, Horizon::TwoT)?;
        Self::from_dtn(lambda_2t, method)
    }

    pub fn from_dtn(lambda_2t: DtnOperator, method: Regularization) -> Result<Self> {
        let lambda_t = lambda_2t.truncated(Horizon::T)?;
        let connecting = connecting_operator(&lambda_t, &lambda_2t)?;
        let inverse = pseudo_inverse(&connecting.op, method)?;
        let k = KOperator::new(&lambda_t);
        Ok(BoundaryData { lambda_t, lambda_2t, connecting, inverse, k })
    }

    pub fn with_regularization(&self, method: Regularization) -> Result<RegularizedInverse> {
        pseudo_inverse(&self.connecting.op, method)
    }

    /// `F̂(ξ)` from the boundary data and a probe built on the known (μ, λ).
    pub fn sample(&self, probe: &CgoProbe, inverse: &RegularizedInverse) -> Result<Complex64> {
        let kp = self.k.apply(&probe.traces_phi)?;
        let ks = self.k.apply(&probe.traces_psi)?;
        fourier_sample(inverse, &kp, &ks, &probe.iota)
    }

    /// Samples over a frequency list; `truth` fills the oracle column.
    /// Only μ and λ of `lame` are used.
    pub fn sample_all(
        &self,
        lame: &ElasticSolver,
        xis: &[Vec<f64>],
        inverse: &RegularizedInverse,
        mode: TraceMode,
        truth: Option<&[f64]>,
    ) -> Result<Vec<FourierSample>> {
        let g = lame.grid();
        xis.par_iter()
            .map(|xi| {
                let mut probe = make_probe(xi, g, lame.material())?;
                if mode == TraceMode::Consistent {
                    probe = probe.with_consistent_traces(lame)?;
                }
                let value = self.sample(&probe, inverse)?;
                Ok(FourierSample { xi: xi.clone(), value, oracle: truth.map(|r| oracle_fourier(g, r, xi)) })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn coeff_op(m: DenseMatrix) -> BoundaryOperator {
        let n = m.rows;
        BoundaryOperator::new(m, vec![1.0; n], vec![1.0; n], Horizon::Coefficients).unwrap()
    }

    #[test]
    fn identity_inverse() {
        let j = coeff_op(DenseMatrix::identity(4));
        for m in [Regularization::default(), Regularization::Tikhonov { alpha: 1e-14 }] {
            let inv = pseudo_inverse(&j, m).unwrap();
            let p = inv.matrix();
            assert!(p.sub(&DenseMatrix::identity(4)).max_abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_drops_tiny_mode() {
        let j = coeff_op(DenseMatrix::from_diagonal(&[1.0, 1e-12]));
        let inv = pseudo_inverse(&j, Regularization::default()).unwrap();
        assert_eq!(inv.rank, 1);
        let p = inv.matrix();
        assert!((p.get(0, 0) - 1.0).abs() < 1e-14 && p.get(1, 1).abs() < 1e-14);
    }

    #[test]
    fn negative_spectrum_rejected() {
        let j = coeff_op(DenseMatrix::from_diagonal(&[1.0, -1e-3]));
        assert!(matches!(pseudo_inverse(&j, Regularization::default()), Err(Error::AssemblyQuality(_))));
    }

    #[test]
    fn moore_penrose_on_random_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = DenseMatrix::from_fn(30, 20, |_, _| rng.gen_range(-1.0..1.0));
        let j = b.matmul(&b.transpose());
        let inv = pseudo_inverse(&coeff_op(j.clone()), Regularization::default()).unwrap();
        assert_eq!(inv.rank, 20);
        assert!(inv.projection_defect(&j) < 1e-8);
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let px = inv.project(&x);
        let back = j.matvec(&inv.apply(&px));
        let err: f64 = back.iter().zip(&px).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8 * crate::linalg::norm(&px));
    }

    #[test]
    fn weighted_inverse_is_self_adjoint() {
        let w = vec![0.5, 2.0, 1.0];
        // W𝒥 symmetric
        let s = DenseMatrix::from_fn(3, 3, |r, c| if r == c { 3.0 } else { 1.0 });
        let j = DenseMatrix::from_fn(3, 3, |r, c| s.get(r, c) / w[r]);
        let op = BoundaryOperator::new(j.clone(), w.clone(), w.clone(), Horizon::Coefficients).unwrap();
        let inv = pseudo_inverse(&op, Regularization::default()).unwrap();
        let p = inv.matrix();
        let id = j.matmul(&p);
        assert!(id.sub(&DenseMatrix::identity(3)).max_abs() < 1e-12);
        for r in 0..3 {
            for c in 0..3 {
                assert!((w[r] * p.get(r, c) - w[c] * p.get(c, r)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sample_rejects_zero_amplitude() {
        let inv = pseudo_inverse(&coeff_op(DenseMatrix::identity(2)), Regularization::default()).unwrap();
        let z = vec![Complex64::new(1.0, 0.0); 2];
        let r = fourier_sample(&inv, &z, &z, &[Complex64::new(0.0, 0.0); 2]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn oracle_basics() {
        let g = build_grid(2, 17, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let one = vec![1.0; g.len()];
        assert!((oracle_fourier(&g, &one, &[0.0, 0.0]) - 1.0).norm() < 1e-14);
        assert!(oracle_fourier(&g, &one, &[2.0 * PI, 0.0]).norm() < 1e-14);
        // separable field against a 1-D trapezoid
        let f = |s: f64| 1.0 + s * s;
        let rho: Vec<f64> = (0..g.len()).map(|a| { let x = g.coords(a); f(x[0]) * f(x[1]) }).collect();
        let xi = [1.3, -0.4];
        let one_d = |k: f64| -> Complex64 {
            let h = 1.0 / 16.0;
            (0..17).map(|i| {
                let s = i as f64 * h;
                let w = if i == 0 || i == 16 { h / 2.0 } else { h };
                Complex64::from_polar(w * f(s), k * s)
            }).sum()
        };
        let want = one_d(xi[0]) * one_d(xi[1]);
        assert!((oracle_fourier(&g, &rho, &xi) - want).norm() < 1e-13);
    }

    #[test]
    fn lattice_and_bound() {
        let g = build_grid(2, 9, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        assert_eq!(frequency_lattice(&g, 2.0 * PI).unwrap().len(), 5);
        assert_eq!(frequency_lattice(&g, 0.0).unwrap(), vec![vec![0.0, 0.0]]);
        match lattice_indices(&g, 100.0) {
            Err(Error::Lattice { max_xi, .. }) => assert!((max_xi - 8.0 * PI).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dc_only_synthesis() {
        let g = build_grid(2, 9, &[(0.0, 2.0), (0.0, 1.0)], &[-1.0, -1.0]).unwrap();
        let s = FourierSample { xi: vec![0.0, 0.0], value: Complex64::new(2.0 * 1.5, 0.0), oracle: None };
        let r = reconstruct_density(&[s], 0.0, &g).unwrap();
        assert!(r.rho_rec.iter().all(|v| (v - 1.5).abs() < 1e-14));
    }

    #[test]
    fn transform_round_trip() {
        let g = build_grid(2, 33, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let rho: Vec<f64> = (0..g.len())
            .map(|a| {
                let x = g.coords(a);
                let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.45).powi(2);
                1.0 + 0.2 * (-r2 / 0.02).exp()
            })
            .collect();
        let gamma = 3.0 * 2.0 * PI;
        let samples: Vec<FourierSample> = frequency_lattice(&g, gamma)
            .unwrap()
            .into_iter()
            .map(|xi| {
                let v = oracle_fourier(&g, &rho, &xi);
                FourierSample { xi, value: v, oracle: Some(v) }
            })
            .collect();
        let mut r = reconstruct_density(&samples, gamma, &g).unwrap();
        r.compare_with(&g, &rho).unwrap();
        assert!(r.metrics.l2_error.unwrap() < 0.02);
        assert!(r.metrics.max_imag < 1e-10);
        assert!(!r.symmetrized);
        // the band-limited field is already close to the truth away from the edges
        assert!(relative_l2(&g, &r.rho_rec, &rho) < 0.1);
    }

    #[test]
    fn one_sided_samples_are_symmetrized() {
        let g = build_grid(2, 9, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let mk = |x: f64, y: f64, v: Complex64| FourierSample { xi: vec![x, y], value: v, oracle: None };
        let s = vec![
            mk(0.0, 0.0, Complex64::new(1.0, 0.0)),
            mk(2.0 * PI, 0.0, Complex64::new(0.1, 0.05)),
            mk(0.0, 2.0 * PI, Complex64::new(0.0, 0.1)),
        ];
        let r = reconstruct_density(&s, 2.0 * PI, &g).unwrap();
        assert!(r.symmetrized);
        assert!(r.metrics.max_imag < 1e-12);
    }
}
