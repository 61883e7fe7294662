//! Complex exponential probes `φ = ι e^{iθ·x}` for the elastostatic system.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::boundary::ProbeTraces;
use crate::error::{Error, Result};
use crate::fd;
use crate::forward::ElasticSolver;
use crate::material::MaterialModel;
use crate::mesh::Grid;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Debug)]
pub struct CgoProbe {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: Vec<Complex64>,
    pub iota: Vec<Complex64>,
    /// Nodal values of φ, `d` entries per node.
    pub phi: Vec<Complex64>,
    /// Nodal values of ψ = ῑ e^{iθ̄·x}.
    pub psi: Vec<Complex64>,
    pub traces_phi: ProbeTraces,
    pub traces_psi: ProbeTraces,
}

/// Unconjugated bilinear dot product.
pub fn bdot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Hermitian norm.
pub fn hnorm(a: &[Complex64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Vector orthogonal to `xi` with the same length.
pub fn orthogonal_direction(xi: &[f64]) -> Result<Vec<f64>> {
    let d = xi.len();
    let r = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    match d {
        _ if r == 0.0 => Ok(vec![0.0; d]),
        2 => Ok(vec![-xi[1], xi[0]]),
        3 => {
            let unit: Vec<f64> = xi.iter().map(|v| v / r).collect();
            for k in 0..3 {
                let mut e = vec![0.0; 3];
                e[k] = 1.0;
                let p = unit[k];
                for (ei, ui) in e.iter_mut().zip(&unit) {
                    *ei -= p * ui;
                }
                let len = e.iter().map(|v| v * v).sum::<f64>().sqrt();
                if len > 1e-8 {
                    return Ok(e.iter().map(|v| v * r / len).collect());
                }
            }
            Err(Error::Numerical("no basis vector is independent of xi".into()))
        }
        _ => Err(Error::Config(format!("dimension {d} not supported"))),
    }
}

/// Unit vector ι with ι·θ = 0: pivot on the largest |θ_p|, set the first other entry to one.
pub fn null_amplitude(theta: &[Complex64]) -> Result<Vec<Complex64>> {
    let d = theta.len();
    let mut iota = vec![Complex64::new(0.0, 0.0); d];
    let (p, big) = theta
        .iter()
        .enumerate()
        .fold((0, 0.0), |(bp, bv), (k, z)| if z.norm() > bv { (k, z.norm()) } else { (bp, bv) });
    if big == 0.0 {
        iota[0] = Complex64::new(1.0, 0.0);
        return Ok(iota);
    }
    let j = if p == 0 { 1 } else { 0 };
    iota[j] = Complex64::new(1.0, 0.0);
    iota[p] = -theta[j] / theta[p];
    let n = hnorm(&iota);
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::Numerical("degenerate null-space amplitude".into()));
    }
    iota.iter_mut().for_each(|z| *z /= n);
    Ok(iota)
}

fn exp_field(g: &Grid, amp: &[Complex64], theta: &[Complex64]) -> Vec<Complex64> {
    let d = g.dim();
    let mut out = Vec::with_capacity(g.len() * d);
    for a in 0..g.len() {
        let x = g.coords(a);
        let phase: Complex64 = (0..d).map(|k| theta[k] * x[k]).sum::<Complex64>() * I;
        let e = phase.exp();
        out.extend(amp.iter().map(|z| z * e));
    }
    out
}

/// Dirichlet and traction traces of `amp e^{iθ·x}`, traction from closed-form derivatives.
pub fn exponential_traces(
    g: &Grid,
    m: &MaterialModel,
    amp: &[Complex64],
    theta: &[Complex64],
) -> ProbeTraces {
    let d = g.dim();
    let nb = g.boundary_len();
    let mut t0 = Vec::with_capacity(nb * d);
    let mut t1 = Vec::with_capacity(nb * d);
    let it = bdot(amp, theta);
    for bn in g.boundary() {
        let x = g.coords(bn.node);
        let e = ((0..d).map(|k| theta[k] * x[k]).sum::<Complex64>() * I).exp();
        let (mu, lam) = (m.mu[bn.node], m.lambda[bn.node]);
        let mut tr = vec![Complex64::new(0.0, 0.0); d];
        for &(face, w) in &bn.face_weights {
            let nu = face.normal();
            let th_nu: Complex64 = (0..d).map(|k| theta[k] * nu[k]).sum();
            let a_nu: Complex64 = (0..d).map(|k| amp[k] * nu[k]).sum();
            for i in 0..d {
                let s = I * e * (mu * (amp[i] * th_nu + theta[i] * a_nu) + lam * it * nu[i]);
                tr[i] += s * (w / bn.weight);
            }
        }
        t0.extend(amp.iter().map(|z| z * e));
        t1.extend(tr);
    }
    ProbeTraces { t0, t1 }
}

/// Builds the probe for frequency `xi`; requires a constant shear modulus.
pub fn make_probe(xi: &[f64], g: &Grid, m: &MaterialModel) -> Result<CgoProbe> {
    m.check_shape(g)?;
    if !m.mu_is_constant() {
        return Err(Error::Unsupported(
            "probes are only constructed for constant mu; use certify_condition for variable mu"
                .into(),
        ));
    }
    if xi.len() != g.dim() {
        return Err(Error::Shape(format!("xi must have {} components", g.dim())));
    }
    let eta = orthogonal_direction(xi)?;
    let theta: Vec<Complex64> =
        xi.iter().zip(&eta).map(|(a, b)| Complex64::new(0.5 * a, 0.5 * b)).collect();
    let iota = null_amplitude(&theta)?;
    Ok(probe_with_amplitude(xi, &eta, &theta, &iota, g, m))
}

/// Probe fields for an arbitrary amplitude (no null-space check).
pub fn probe_with_amplitude(
    xi: &[f64],
    eta: &[f64],
    theta: &[Complex64],
    iota: &[Complex64],
    g: &Grid,
    m: &MaterialModel,
) -> CgoProbe {
    let theta_c: Vec<Complex64> = theta.iter().map(|z| z.conj()).collect();
    let iota_c: Vec<Complex64> = iota.iter().map(|z| z.conj()).collect();
    CgoProbe {
        xi: xi.to_vec(),
        eta: eta.to_vec(),
        theta: theta.to_vec(),
        iota: iota.to_vec(),
        phi: exp_field(g, iota, theta),
        psi: exp_field(g, &iota_c, &theta_c),
        traces_phi: exponential_traces(g, m, iota, theta),
        traces_psi: exponential_traces(g, m, &iota_c, &theta_c),
    }
}

impl CgoProbe {
    pub fn xi_norm(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn iota_norm_sqr(&self) -> f64 {
        hnorm(&self.iota).powi(2)
    }

    /// Same probe with ι replaced by `c ι` (fields and traces rescaled).
    pub fn rescaled(&self, c: Complex64) -> CgoProbe {
        let cc = c.conj();
        let scale = |v: &[Complex64], s: Complex64| v.iter().map(|z| z * s).collect::<Vec<_>>();
        CgoProbe {
            xi: self.xi.clone(),
            eta: self.eta.clone(),
            theta: self.theta.clone(),
            iota: scale(&self.iota, c),
            phi: scale(&self.phi, c),
            psi: scale(&self.psi, cc),
            traces_phi: ProbeTraces {
                t0: scale(&self.traces_phi.t0, c),
                t1: scale(&self.traces_phi.t1, c),
            },
            traces_psi: ProbeTraces {
                t0: scale(&self.traces_psi.t0, cc),
                t1: scale(&self.traces_psi.t1, cc),
            },
        }
    }

    pub fn record(&self) -> ProbeRecord {
        let pair = |z: &Complex64| [z.re, z.im];
        ProbeRecord {
            xi: self.xi.clone(),
            eta: self.eta.clone(),
            iota: self.iota.iter().map(pair).collect(),
        }
    }
}

/// JSON export of a probe's defining vectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    /// `[re, im]` pairs.
    pub iota: Vec<[f64; 2]>,
}

/// Solves `K v = 0` at interior nodes with `v = u` on the boundary, by conjugate
/// gradients started from `u`.
pub fn static_lift(solver: &ElasticSolver, u: &[f64], tol: f64) -> Result<Vec<f64>> {
    let g = solver.grid();
    let d = g.dim();
    if u.len() != g.len() * d {
        return Err(Error::Shape("field does not match the grid".into()));
    }
    let mask: Vec<bool> = (0..g.len()).flat_map(|a| std::iter::repeat(!g.is_boundary(a)).take(d)).collect();
    let mut x = u.to_vec();
    let mut tmp = vec![0.0; x.len()];
    solver.apply_stiffness(&x, &mut tmp);
    let mut r: Vec<f64> = tmp.iter().zip(&mask).map(|(v, &m)| if m { -v } else { 0.0 }).collect();
    let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let target = tol * {
        let mut k0 = vec![0.0; x.len()];
        let ones: Vec<f64> = u.iter().map(|v| v.abs()).collect();
        solver.apply_stiffness(&ones, &mut k0);
        k0.iter().map(|v| v * v).sum::<f64>().sqrt().max(scale)
    };
    let mut p = r.clone();
    let mut rr: f64 = r.iter().map(|v| v * v).sum();
    for _ in 0..50 * x.len() {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        solver.apply_stiffness(&p, &mut tmp);
        for (t, &m) in tmp.iter_mut().zip(&mask) {
            if !m {
                *t = 0.0;
            }
        }
        let pap: f64 = p.iter().zip(&tmp).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Numerical("stiffness is not positive on the interior".into()));
        }
        let alpha = rr / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * tmp[i];
        }
        let rr_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..x.len() {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Numerical("static lift did not converge".into()))
}

/// Traces of the discrete static field with the same boundary values: `T₀` is
/// unchanged, `T₁` is the nodal reaction `(K v)_b / w_b`, the functional the
/// discrete DtN map measures.
pub fn consistent_traces(solver: &ElasticSolver, field: &[Complex64]) -> Result<ProbeTraces> {
    let g = solver.grid();
    let d = g.dim();
    let re: Vec<f64> = field.iter().map(|z| z.re).collect();
    let im: Vec<f64> = field.iter().map(|z| z.im).collect();
    let mut out = [vec![0.0; re.len()], vec![0.0; im.len()]];
    for (part, o) in [re, im].iter().zip(out.iter_mut()) {
        if part.iter().all(|v| *v == 0.0) {
            continue;
        }
        let v = static_lift(solver, part, 1e-13)?;
        solver.apply_stiffness(&v, o);
    }
    let mut t0 = Vec::with_capacity(g.boundary_len() * d);
    let mut t1 = Vec::with_capacity(g.boundary_len() * d);
    for bn in g.boundary() {
        for c in 0..d {
            let i = bn.node * d + c;
            t0.push(field[i]);
            t1.push(Complex64::new(out[0][i], out[1][i]) / bn.weight);
        }
    }
    Ok(ProbeTraces { t0, t1 })
}

impl CgoProbe {
    /// Replaces the analytic traction traces by [`consistent_traces`].
    pub fn with_consistent_traces(mut self, solver: &ElasticSolver) -> Result<Self> {
        self.traces_phi = consistent_traces(solver, &self.phi)?;
        self.traces_psi = consistent_traces(solver, &self.psi)?;
        Ok(self)
    }
}

/// Max over nodes of |i(θιᵀ + ιθᵀ)∇μ + i(ι·θ)∇λ - μ(θ·θ)ι - (λ+μ)(ι·θ)θ|.
pub fn certify_condition(probe: &CgoProbe, m: &MaterialModel, g: &Grid) -> Result<f64> {
    m.check_shape(g)?;
    let d = g.dim();
    let gmu = fd::gradient(g, &m.mu);
    let glam = fd::gradient(g, &m.lambda);
    let (th, io) = (&probe.theta, &probe.iota);
    let it = bdot(io, th);
    let tt = bdot(th, th);
    let mut worst = 0.0f64;
    for a in 0..g.len() {
        let (mu, lam) = (m.mu[a], m.lambda[a]);
        let i_gmu: Complex64 = (0..d).map(|k| io[k] * gmu[a][k]).sum();
        let t_gmu: Complex64 = (0..d).map(|k| th[k] * gmu[a][k]).sum();
        let mut norm2 = 0.0;
        for i in 0..d {
            let v = I * (th[i] * i_gmu + io[i] * t_gmu) + I * it * glam[a][i]
                - mu * tt * io[i]
                - (lam + mu) * it * th[i];
            norm2 += v.norm_sqr();
        }
        worst = worst.max(norm2.sqrt());
    }
    Ok(worst)
}

/// Max over interior nodes of the discrete elastostatic operator applied to φ,
/// divided by |ξ|²|ι| (undivided when ξ = 0).
pub fn elastostatic_residual(probe: &CgoProbe, m: &MaterialModel, g: &Grid) -> Result<f64> {
    let solver = ElasticSolver::new(m, g)?;
    let d = g.dim();
    let re: Vec<f64> = probe.phi.iter().map(|z| z.re).collect();
    let im: Vec<f64> = probe.phi.iter().map(|z| z.im).collect();
    let mut kr = vec![0.0; re.len()];
    let mut ki = vec![0.0; im.len()];
    solver.apply_stiffness(&re, &mut kr);
    solver.apply_stiffness(&im, &mut ki);
    let mut worst = 0.0f64;
    for a in g.interior_nodes() {
        let v = g.volume_weight(a);
        let n2: f64 = (0..d).map(|i| (kr[a * d + i] / v).powi(2) + (ki[a * d + i] / v).powi(2)).sum();
        worst = worst.max(n2.sqrt());
    }
    let scale = probe.xi_norm().powi(2) * hnorm(&probe.iota);
    Ok(if scale > 0.0 { worst / scale } else { worst })
}
