//! Density and Lamé fields with their declared pointwise bounds.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::linalg::{sym_eigenvalues, DenseMatrix};
use crate::mesh::{dot, Grid, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialBounds {
    pub rho1: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub lambda0: f64,
    pub lambda1: f64,
}

#[derive(Clone, Debug)]
pub struct MaterialModel {
    pub rho: Vec<f64>,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub bounds: MaterialBounds,
}

impl MaterialModel {
    pub fn new(rho: Vec<f64>, mu: Vec<f64>, lambda: Vec<f64>, bounds: MaterialBounds) -> Self {
        MaterialModel { rho, mu, lambda, bounds }
    }

    /// Samples `(rho, mu, lambda)` at every node; bounds are the field extrema.
    pub fn from_fn(g: &Grid, f: impl Fn(&Point) -> (f64, f64, f64)) -> Self {
        let (mut rho, mut mu, mut lambda) = (Vec::new(), Vec::new(), Vec::new());
        for a in 0..g.len() {
            let (r, m, l) = f(&g.coords(a));
            rho.push(r);
            mu.push(m);
            lambda.push(l);
        }
        let bounds = bounds_of(&rho, &mu, &lambda);
        MaterialModel { rho, mu, lambda, bounds }
    }

    pub fn constant(g: &Grid, rho: f64, mu: f64, lambda: f64) -> Self {
        Self::from_fn(g, |_| (rho, mu, lambda))
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Largest pressure speed sqrt((lambda + 2 mu) / rho).
    pub fn max_wave_speed(&self) -> f64 {
        self.rho
            .iter()
            .zip(&self.mu)
            .zip(&self.lambda)
            .map(|((r, m), l)| ((l + 2.0 * m) / r).max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn mu_is_constant(&self) -> bool {
        let m0 = self.mu[0];
        self.mu.iter().all(|&m| (m - m0).abs() <= 1e-14 * m0.abs().max(1.0))
    }

    pub fn with_rho(&self, rho: Vec<f64>) -> Self {
        let mut out = self.clone();
        out.bounds.rho1 = out.bounds.rho1.max(rho.iter().cloned().fold(f64::MIN, f64::max));
        out.rho = rho;
        out
    }

    pub(crate) fn check_shape(&self, g: &Grid) -> Result<()> {
        let n = g.len();
        if self.rho.len() != n || self.mu.len() != n || self.lambda.len() != n {
            return Err(Error::Shape(format!(
                "material fields have lengths (rho {}, mu {}, lambda {}) but the grid has {} nodes",
                self.rho.len(),
                self.mu.len(),
                self.lambda.len(),
                n
            )));
        }
        Ok(())
    }
}

pub fn bounds_of(rho: &[f64], mu: &[f64], lambda: &[f64]) -> MaterialBounds {
    let max = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(f64::MAX, f64::min);
    MaterialBounds {
        rho1: max(rho),
        mu0: min(mu),
        mu1: max(mu),
        lambda0: min(lambda),
        lambda1: max(lambda),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    NonFinite,
    DensityNonPositive,
    DensityAboveBound,
    ShearBelowBound,
    ShearAboveBound,
    LambdaBelowBound,
    LambdaAboveBound,
    Ellipticity,
    /// The declared bounds themselves are inconsistent (node is meaningless).
    Bounds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub node: usize,
    pub constraint: Constraint,
    pub value: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_admissible(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists every pointwise constraint the fields violate.
pub fn validate_material(m: &MaterialModel, g: &Grid) -> Result<ValidationReport> {
    m.check_shape(g)?;
    let b = m.bounds;
    let d = g.dim() as f64;
    let mut violations = Vec::new();
    if !(b.mu0 > 0.0 && b.mu0 <= b.mu1 && b.lambda0 <= b.lambda1 && b.rho1 > 0.0) {
        violations.push(Violation { node: 0, constraint: Constraint::Bounds, value: b.mu0 });
    }
    for a in 0..g.len() {
        let (r, mu, l) = (m.rho[a], m.mu[a], m.lambda[a]);
        let mut push = |constraint, value| violations.push(Violation { node: a, constraint, value });
        if !(r.is_finite() && mu.is_finite() && l.is_finite()) {
            push(Constraint::NonFinite, f64::NAN);
            continue;
        }
        if r <= 0.0 {
            push(Constraint::DensityNonPositive, r);
        }
        if r > b.rho1 {
            push(Constraint::DensityAboveBound, r);
        }
        if mu < b.mu0 {
            push(Constraint::ShearBelowBound, mu);
        }
        if mu > b.mu1 {
            push(Constraint::ShearAboveBound, mu);
        }
        if l < b.lambda0 {
            push(Constraint::LambdaBelowBound, l);
        }
        if l > b.lambda1 {
            push(Constraint::LambdaAboveBound, l);
        }
        if d * l + 2.0 * mu <= 0.0 {
            push(Constraint::Ellipticity, d * l + 2.0 * mu);
        }
    }
    Ok(ValidationReport { violations })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormMode {
    Literal,
    SymmetricRestricted,
}

/// Matrix of A ↦ (mu (A + Aᵀ) + lambda tr(A) I) : A on row-major d×d matrices.
pub fn lame_form_matrix(d: usize, mu: f64, lambda: f64) -> DenseMatrix {
    let dd = d * d;
    DenseMatrix::from_fn(dd, dd, |p, q| {
        let (i, j) = (p / d, p % d);
        let (k, l) = (q / d, q % d);
        let mut v = 0.0;
        if p == q {
            v += mu;
        }
        if i == l && j == k {
            v += mu;
        }
        if i == j && k == l {
            v += lambda;
        }
        v
    })
}

/// Orthonormal (Frobenius) basis of symmetric d×d matrices, one column each.
fn symmetric_basis(d: usize) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for i in 0..d {
        for j in i..d {
            let mut c = vec![0.0; d * d];
            if i == j {
                c[i * d + i] = 1.0;
            } else {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                c[i * d + j] = s;
                c[j * d + i] = s;
            }
            cols.push(c);
        }
    }
    DenseMatrix::from_fn(d * d, cols.len(), |p, c| cols[c][p])
}

/// Minimum of the form over unit-Frobenius matrices, restricted per `mode`.
pub fn form_min_eigenvalue(d: usize, mu: f64, lambda: f64, mode: FormMode) -> Result<f64> {
    let q = lame_form_matrix(d, mu, lambda);
    let q = match mode {
        FormMode::Literal => q,
        FormMode::SymmetricRestricted => {
            let b = symmetric_basis(d);
            b.transpose().matmul(&q).matmul(&b)
        }
    };
    Ok(sym_eigenvalues(&q)?[0])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub mode: FormMode,
    pub c0: f64,
    pub c1: f64,
    /// Per-node minimum eigenvalue of the first form.
    pub first: Vec<f64>,
    /// Per-node minimum eigenvalue of the gradient-weighted second form.
    pub second: Vec<f64>,
    pub min_first: f64,
    pub min_second: f64,
    pub first_pass: bool,
    pub second_pass: bool,
}

/// Evaluates both admissibility forms at every node against `c0` and `c1`.
///
/// The second form with the weight `l = |x - x0|² / 2` is the first form with
/// `mu - ∇mu·∇l` and `lambda - ∇lambda·∇l` in place of the coefficients.
pub fn check_admissible_h(
    m: &MaterialModel,
    g: &Grid,
    c0: f64,
    c1: f64,
    mode: FormMode,
) -> Result<AdmissibilityReport> {
    m.check_shape(g)?;
    let d = g.dim();
    let gmu = fd::gradient(g, &m.mu);
    let glam = fd::gradient(g, &m.lambda);
    let mut first = Vec::with_capacity(g.len());
    let mut second = Vec::with_capacity(g.len());
    for a in 0..g.len() {
        let gl = g.grad_l(a);
        first.push(form_min_eigenvalue(d, m.mu[a], m.lambda[a], mode)?);
        let mu2 = m.mu[a] - dot(&gmu[a], &gl);
        let lam2 = m.lambda[a] - dot(&glam[a], &gl);
        second.push(form_min_eigenvalue(d, mu2, lam2, mode)?);
    }
    let min_first = first.iter().cloned().fold(f64::INFINITY, f64::min);
    let min_second = second.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(AdmissibilityReport {
        mode,
        c0,
        c1,
        first_pass: min_first >= c0,
        second_pass: min_second >= c1,
        first,
        second,
        min_first,
        min_second,
    })
}

/// Reads a node-ordered scalar field with header `x1,...,xd,value`.
pub fn read_field_csv(g: &Grid, reader: impl Read) -> Result<Vec<f64>> {
    let d = g.dim();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    let expected: Vec<String> =
        (1..=d).map(|k| format!("x{k}")).chain(std::iter::once("value".into())).collect();
    if header.iter().collect::<Vec<_>>() != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!("expected header `{}`", expected.join(","))));
    }
    let tol = 1e-6 * g.h_min();
    let mut values = Vec::with_capacity(g.len());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if row >= g.len() {
            return Err(Error::Shape(format!("more than {} rows", g.len())));
        }
        let nums: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", row + 2))))
            .collect::<Result<_>>()?;
        if nums.len() != d + 1 {
            return Err(Error::Parse(format!("row {}: expected {} columns", row + 2, d + 1)));
        }
        let x = g.coords(row);
        if (0..d).any(|k| (nums[k] - x[k]).abs() > tol) {
            return Err(Error::Parse(format!(
                "row {}: coordinates do not match node {row} of the grid",
                row + 2
            )));
        }
        values.push(nums[d]);
    }
    if values.len() != g.len() {
        return Err(Error::Shape(format!("expected {} rows, found {}", g.len(), values.len())));
    }
    Ok(values)
}

pub fn read_field_csv_path(g: &Grid, path: &Path) -> Result<Vec<f64>> {
    read_field_csv(g, std::fs::File::open(path)?)
}

pub fn write_field_csv(g: &Grid, values: &[f64], w: impl std::io::Write) -> Result<()> {
    let d = g.dim();
    let mut wtr = csv::Writer::from_writer(w);
    let header: Vec<String> =
        (1..=d).map(|k| format!("x{k}")).chain(std::iter::once("value".into())).collect();
    wtr.write_record(&header).map_err(|e| Error::Parse(e.to_string()))?;
    for (a, v) in values.iter().enumerate() {
        let x = g.coords(a);
        let rec: Vec<String> =
            x[..d].iter().chain(std::iter::once(v)).map(|v| format!("{v:e}")).collect();
        wtr.write_record(&rec).map_err(|e| Error::Parse(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    fn grid(d: usize) -> Grid {
        build_grid(d, 8, &vec![(0.0, 1.0); d], &vec![-1.0; d]).unwrap()
    }

    #[test]
    fn constant_2d_valid() {
        let g = grid(2);
        let m = MaterialModel::constant(&g, 1.0, 1.0, 0.0);
        assert!(validate_material(&m, &g).unwrap().is_admissible());
    }

    #[test]
    fn ellipticity_violation_3d() {
        let g = grid(3);
        let mut m = MaterialModel::constant(&g, 1.0, 1.0, -1.0);
        m.bounds.lambda0 = -2.0;
        let r = validate_material(&m, &g).unwrap();
        assert_eq!(r.violations.len(), g.len());
        assert!(r.violations.iter().all(|v| v.constraint == Constraint::Ellipticity && v.value == -1.0));
    }

    #[test]
    fn zero_density_node_reported() {
        let g = grid(2);
        let mut m = MaterialModel::constant(&g, 1.0, 1.0, 0.0);
        m.rho[17] = 0.0;
        let r = validate_material(&m, &g).unwrap();
        assert_eq!(
            r.violations,
            vec![Violation { node: 17, constraint: Constraint::DensityNonPositive, value: 0.0 }]
        );
        // idempotent
        assert_eq!(validate_material(&m, &g).unwrap().violations, r.violations);
    }

    #[test]
    fn shape_mismatch() {
        let g = grid(2);
        let mut m = MaterialModel::constant(&g, 1.0, 1.0, 0.0);
        m.mu.pop();
        assert!(matches!(validate_material(&m, &g), Err(Error::Shape(_))));
    }

    #[test]
    fn form_matrix_is_exactly_symmetric() {
        for d in [2, 3] {
            let q = lame_form_matrix(d, 1.3, -0.4);
            assert_eq!(q, q.transpose());
        }
    }

    #[test]
    fn literal_and_restricted_minima() {
        for d in [2, 3] {
            let lit = form_min_eigenvalue(d, 1.0, 0.0, FormMode::Literal).unwrap();
            let sym = form_min_eigenvalue(d, 1.0, 0.0, FormMode::SymmetricRestricted).unwrap();
            assert!(lit.abs() < 1e-12);
            assert!((sym - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn form_matches_symmetric_part_identity() {
        // mu(|A|² + A:Aᵀ) = 2 mu |sym A|²
        let d = 3;
        let a: Vec<f64> = (0..9).map(|k| ((k * 7 % 5) as f64) - 1.7).collect();
        let q = lame_form_matrix(d, 0.8, 0.0);
        let qa: f64 = q.matvec(&a).iter().zip(&a).map(|(x, y)| x * y).sum();
        let mut sym = 0.0;
        for i in 0..d {
            for j in 0..d {
                let s = 0.5 * (a[i * d + j] + a[j * d + i]);
                sym += s * s;
            }
        }
        assert!((qa - 2.0 * 0.8 * sym).abs() < 1e-12);
    }

    #[test]
    fn constant_coefficients_forms_coincide() {
        let g = grid(2);
        let m = MaterialModel::constant(&g, 1.0, 1.5, 0.5);
        for mode in [FormMode::Literal, FormMode::SymmetricRestricted] {
            let r = check_admissible_h(&m, &g, 0.1, 0.1, mode).unwrap();
            assert_eq!(r.first, r.second);
        }
    }

    #[test]
    fn csv_roundtrip() {
        let g = build_grid(2, 4, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let vals: Vec<f64> = (0..g.len()).map(|a| a as f64 * 0.25).collect();
        let mut buf = Vec::new();
        write_field_csv(&g, &vals, &mut buf).unwrap();
        assert!(buf.starts_with(b"x1,x2,value\n"));
        assert_eq!(read_field_csv(&g, buf.as_slice()).unwrap(), vals);
    }
}
