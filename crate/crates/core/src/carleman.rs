//! Carleman weight `l = |x - x₀|²/2`, the illuminated boundary Γ, the explicit
//! observability constants, and empirical observability ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fd;
use crate::forward::{gradient_norm, l2_norm, traction, ElasticSolver, Storage};
use crate::material::{MaterialBounds, MaterialModel};
use crate::mesh::{Face, Grid, Point};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub t_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CarlemanConfig {
    pub x0: Vec<f64>,
    pub tau: f64,
    /// 𝒞 = d - 1.
    pub script_c: f64,
    pub rho2: f64,
    pub small_c0: f64,
    pub small_c1: f64,
    pub max_grad_l: f64,
    pub constants: CarlemanConstants,
    /// One flag per boundary node.
    pub gamma_mask: Vec<bool>,
}

impl CarlemanConfig {
    /// `C₁C₃ / (T C₀ - 2 C₂ C₃)`, defined for `T > T_min`.
    pub fn prefactor(&self, t: f64) -> Result<f64> {
        let k = self.constants;
        if t <= k.t_min {
            return Err(Error::Threshold { t, t_min: k.t_min });
        }
        Ok(k.c1 * k.c3 / (t * k.c0 - 2.0 * k.c2 * k.c3))
    }
}

/// Largest |x - x₀| over the box, attained at a corner.
pub fn max_grad_l(g: &Grid) -> f64 {
    max_grad_l_sqr(g).sqrt()
}

fn max_grad_l_sqr(g: &Grid) -> f64 {
    let x0 = g.x0();
    (0..g.dim())
        .map(|k| (g.lower()[k] - x0[k]).powi(2).max((g.upper()[k] - x0[k]).powi(2)))
        .sum()
}

pub fn carleman_constants(b: &MaterialBounds, g: &Grid, c0: f64, c1: f64, rho2: f64) -> Result<CarlemanConstants> {
    if !(c0 > 0.0 && c1 > 0.0 && rho2 > 0.0) {
        return Err(Error::Config(format!("c0 = {c0}, c1 = {c1}, rho2 = {rho2} must be positive")));
    }
    if !(b.mu0 > 0.0) {
        return Err(Error::Config(format!("mu0 = {} must be positive", b.mu0)));
    }
    let gl2 = max_grad_l_sqr(g);
    let mu0 = b.mu0;
    // squared to keep exact inputs exact
    let k1 = 2.0f64.max((1.0 + mu0) / (4.0 * mu0 * mu0)).max(5.0 / (4.0 * mu0));
    let big_c0 = rho2.min(c1);
    let big_c1 = (k1 * gl2).sqrt();
    let big_c2 = (b.rho1 / 2.0).max(2.0 / c0 * gl2);
    let big_c3 = 1.0f64.max(2.0 * b.mu1 + b.lambda0.abs().max(b.lambda1.abs()));
    Ok(CarlemanConstants {
        c0: big_c0,
        c1: big_c1,
        c2: big_c2,
        c3: big_c3,
        t_min: 2.0 * big_c2 * big_c3 / big_c0,
    })
}

pub fn constants(m: &MaterialModel, g: &Grid, tau: f64, c0: f64, c1: f64, rho2: f64) -> Result<CarlemanConfig> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau = {tau} must be positive")));
    }
    Ok(CarlemanConfig {
        x0: g.x0().to_vec(),
        tau,
        script_c: (g.dim() - 1) as f64,
        rho2,
        small_c0: c0,
        small_c1: c1,
        max_grad_l: max_grad_l(g),
        constants: carleman_constants(&m.bounds, g, c0, c1, rho2)?,
        gamma_mask: gamma_region(g).mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaRegion {
    /// Boundary nodes with (∇l·ν) > 0 on some incident face.
    pub mask: Vec<bool>,
    /// Face indices in Γ.
    pub faces: Vec<usize>,
    /// Faces where ∇l·ν vanishes somewhere or changes sign.
    pub flagged: Vec<usize>,
}

impl GammaRegion {
    /// Boundary weight of node `b` restricted to faces in Γ.
    pub fn weight(&self, g: &Grid, b: usize) -> f64 {
        g.boundary()[b]
            .face_weights
            .iter()
            .filter(|(f, _)| self.faces.contains(&f.index()))
            .map(|(_, w)| w)
            .sum()
    }
}

pub fn gamma_region(g: &Grid) -> GammaRegion {
    let d = g.dim();
    let x0 = g.x0();
    let mut faces = Vec::new();
    let mut flagged = Vec::new();
    for idx in 0..2 * d {
        let f = Face::from_index(idx);
        let pos = if f.high { g.upper()[f.axis] } else { g.lower()[f.axis] };
        let s = if f.high { 1.0 } else { -1.0 };
        // on a box face ∇l·ν is constant
        let v = s * (pos - x0[f.axis]);
        if v > 0.0 {
            faces.push(idx);
        } else if v == 0.0 {
            flagged.push(idx);
        }
    }
    let mask = g
        .boundary()
        .iter()
        .map(|bn| bn.face_weights.iter().any(|(f, _)| faces.contains(&f.index())))
        .collect();
    GammaRegion { mask, faces, flagged }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoConditionReport {
    /// min over nodes of 1 + (∇ρ·∇l)/ρ.
    pub min_value: f64,
    pub rho2: f64,
    pub passes: bool,
}

pub fn check_rho_condition(m: &MaterialModel, g: &Grid, rho2: f64) -> Result<RhoConditionReport> {
    m.check_shape(g)?;
    let grad = fd::gradient(g, &m.rho);
    let min_value = (0..g.len())
        .map(|a| {
            let gl = g.grad_l(a);
            1.0 + (0..g.dim()).map(|k| grad[a][k] * gl[k]).sum::<f64>() / m.rho[a]
        })
        .fold(f64::INFINITY, f64::min);
    Ok(RhoConditionReport { min_value, rho2, passes: min_value > rho2 })
}

/// A displacement field `w(t, x)` sampled by the decomposition.
pub type Field<'a> = dyn Fn(f64, &Point) -> Point + Sync + 'a;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CarlemanDecomposition {
    /// Nodes where the terms were evaluated (two cells or more from ∂Ω).
    pub nodes: Vec<usize>,
    pub s1: Vec<Point>,
    pub s2: Vec<Point>,
    /// max |S₁ + S₂ - e^{τl} P w|.
    pub defect: f64,
    /// min over nodes of ½|S₁+S₂|² - S₁·S₂.
    pub min_square_gap: f64,
}

struct Derivs {
    grad: Vec<[[f64; 3]; 3]>,
    div_sigma: Vec<Point>,
    accel: Vec<Point>,
    value: Vec<Point>,
}

fn component(vals: &[Point], k: usize) -> Vec<f64> {
    vals.iter().map(|p| p[k]).collect()
}

/// Centred differences of `u` at time `t`: ∇u, ∇·(μ(∇u+∇uᵀ)) + ∇(λ∇·u), ∂²_t u.
fn derivs(g: &Grid, m: &MaterialModel, u: &dyn Fn(f64, &Point) -> Point, t: f64, ht: f64) -> Derivs {
    let d = g.dim();
    let sample = |s: f64| (0..g.len()).map(|a| u(s, &g.coords(a))).collect::<Vec<Point>>();
    let value = sample(t);
    let before = sample(t - ht);
    let after = sample(t + ht);
    let accel = (0..g.len())
        .map(|a| {
            let mut p = [0.0; 3];
            for k in 0..d {
                p[k] = (after[a][k] - 2.0 * value[a][k] + before[a][k]) / (ht * ht);
            }
            p
        })
        .collect();
    let comps: Vec<Vec<Point>> = (0..d).map(|k| fd::gradient(g, &component(&value, k))).collect();
    let mut grad = vec![[[0.0; 3]; 3]; g.len()];
    for a in 0..g.len() {
        for i in 0..d {
            for j in 0..d {
                grad[a][i][j] = comps[i][a][j];
            }
        }
    }
    // stress rows, then their divergence
    let mut sigma = vec![vec![0.0; g.len()]; d * d];
    for a in 0..g.len() {
        let div: f64 = (0..d).map(|k| grad[a][k][k]).sum();
        for i in 0..d {
            for j in 0..d {
                let mut s = m.mu[a] * (grad[a][i][j] + grad[a][j][i]);
                if i == j {
                    s += m.lambda[a] * div;
                }
                sigma[i * d + j][a] = s;
            }
        }
    }
    let mut div_sigma = vec![[0.0; 3]; g.len()];
    for i in 0..d {
        for j in 0..d {
            for a in 0..g.len() {
                div_sigma[a][i] += fd::partial(g, &sigma[i * d + j], a, j);
            }
        }
    }
    Derivs { grad, div_sigma, accel, value }
}

/// Assembles the two Carleman terms for `v = e^{τl} w` at time `t` and compares
/// their sum with `e^{τl} P w`, all with centred differences (time step `h_min`).
pub fn carleman_decomposition(
    w: &Field<'_>,
    t: f64,
    m: &MaterialModel,
    g: &Grid,
    cfg: &CarlemanConfig,
) -> Result<CarlemanDecomposition> {
    m.check_shape(g)?;
    let tau = cfg.tau;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau = {tau} must be positive")));
    }
    let d = g.dim();
    let x0 = g.x0().to_vec();
    let l = move |x: &Point| 0.5 * (0..d).map(|k| (x[k] - x0[k]).powi(2)).sum::<f64>();
    let v = |s: f64, x: &Point| {
        let e = (tau * l(x)).exp();
        let mut p = w(s, x);
        p.iter_mut().for_each(|c| *c *= e);
        p
    };
    let ht = g.h_min();
    let dv = derivs(g, m, &v, t, ht);
    let dw = derivs(g, m, w, t, ht);
    let gmu = fd::gradient(g, &m.mu);
    let glam = fd::gradient(g, &m.lambda);
    let lap_l = d as f64;
    let cc = cfg.script_c;
    let nodes: Vec<usize> = (0..g.len()).filter(|&a| g.depth(a) >= 2).collect();
    let mut s1 = Vec::with_capacity(nodes.len());
    let mut s2 = Vec::with_capacity(nodes.len());
    let mut defect = 0.0f64;
    let mut gap = f64::INFINITY;
    for &a in &nodes {
        let x = g.coords(a);
        let gl = g.grad_l(a);
        let (rho, mu, lam) = (m.rho[a], m.mu[a], m.lambda[a]);
        let vv = dv.value[a];
        let gv = dv.grad[a];
        let gl2: f64 = (0..d).map(|k| gl[k] * gl[k]).sum();
        let gl_v: f64 = (0..d).map(|k| gl[k] * vv[k]).sum();
        let gl_gmu: f64 = (0..d).map(|k| gl[k] * gmu[a][k]).sum();
        let v_gmu: f64 = (0..d).map(|k| vv[k] * gmu[a][k]).sum();
        let div_v: f64 = (0..d).map(|k| gv[k][k]).sum();
        let mut p1 = [0.0; 3];
        let mut p2 = [0.0; 3];
        for i in 0..d {
            let gv_gl: f64 = (0..d).map(|j| gv[i][j] * gl[j]).sum();
            let gvt_gl: f64 = (0..d).map(|j| gv[j][i] * gl[j]).sum();
            // Hessian of l is the identity
            p1[i] = rho * dv.accel[a][i] - dv.div_sigma[a][i] + mu * tau * lap_l * vv[i]
                - mu * tau * tau * gl2 * vv[i]
                + (lam + mu) * tau * vv[i]
                - (lam + mu) * tau * tau * gl[i] * gl_v
                + tau * (gl[i] * v_gmu + vv[i] * gl_gmu)
                + tau * gl_v * glam[a][i]
                + 2.0 * (mu - 1.0) * tau * gv_gl
                + (lam + mu) * tau * gvt_gl
                + (lam + mu) * tau * div_v * gl[i]
                - tau * cc * vv[i];
            p2[i] = tau * (2.0 * gv_gl + cc * vv[i]);
            let pw = rho * dw.accel[a][i] - dw.div_sigma[a][i];
            let target = (tau * l(&x)).exp() * pw;
            defect = defect.max((p1[i] + p2[i] - target).abs());
        }
        let sum2: f64 = (0..d).map(|i| (p1[i] + p2[i]).powi(2)).sum();
        let dot12: f64 = (0..d).map(|i| p1[i] * p2[i]).sum();
        gap = gap.min(0.5 * sum2 - dot12);
        s1.push(p1);
        s2.push(p2);
    }
    Ok(CarlemanDecomposition { nodes, s1, s2, defect, min_square_gap: gap })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ObservabilityStats {
    /// Per sample, (‖∂_t u(T)‖ + ‖∇u(T)‖) / ‖traction‖_{L²((0,T)×Γ)}; `None` for a
    /// zero denominator.
    pub ratios: Vec<Option<f64>>,
    pub max: f64,
    pub median: f64,
    /// Max ratio over the first half of the ensemble.
    pub max_half: f64,
    pub unobservable: usize,
}

/// Smooth random field vanishing on ∂Ω: low sine modes with normal coefficients.
pub fn random_interior_field(g: &Grid, rng: &mut impl Rng, modes: usize) -> Vec<f64> {
    let d = g.dim();
    let lo = g.lower().to_vec();
    let len = g.side_lengths();
    let total = modes.pow(d as u32);
    let coef: Vec<f64> = (0..total * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut out = vec![0.0; g.len() * d];
    for a in 0..g.len() {
        if g.is_boundary(a) {
            continue;
        }
        let x = g.coords(a);
        for mi in 0..total {
            let mut rest = mi;
            let mut basis = 1.0;
            let mut k2 = 0.0;
            for ax in 0..d {
                let k = (rest % modes + 1) as f64;
                rest /= modes;
                basis *= (std::f64::consts::PI * k * (x[ax] - lo[ax]) / len[ax]).sin();
                k2 += k * k;
            }
            for c in 0..d {
                out[a * d + c] += coef[mi * d + c] * basis / k2;
            }
        }
    }
    out
}

/// Ratio ensemble for random interior data; each sample uses its own seeded stream.
pub fn empirical_observability(
    m: &MaterialModel,
    g: &Grid,
    gamma: &GammaRegion,
    horizon: f64,
    ensemble: usize,
    seed: u64,
) -> Result<ObservabilityStats> {
    if ensemble == 0 {
        return Err(Error::Config("ensemble size must be positive".into()));
    }
    let solver = ElasticSolver::new(m, g)?;
    let time = solver.time_grid(horizon);
    let d = g.dim();
    let gw: Vec<f64> = (0..g.boundary_len()).map(|b| gamma.weight(g, b)).collect();
    let ratios: Vec<Result<Option<f64>>> = (0..ensemble)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let u0 = random_interior_field(g, &mut rng, 3);
            let u1 = random_interior_field(g, &mut rng, 3);
            let traj = solver.solve_initial_value(&u0, &u1, time, Storage::All)?;
            let tr = traction(&traj, m, g)?;
            let mut den = 0.0;
            for n in 0..=time.steps {
                let s: f64 = (0..g.boundary_len())
                    .map(|b| gw[b] * tr.at(n, b)[..d].iter().map(|v| v * v).sum::<f64>())
                    .sum();
                den += time.weight(n) * s;
            }
            let num = l2_norm(g, &traj.final_velocity()?) + gradient_norm(g, traj.final_state()?);
            Ok((den > 0.0).then(|| num / den.sqrt()))
        })
        .collect();
    let ratios = ratios.into_iter().collect::<Result<Vec<_>>>()?;
    let finite = |r: &[Option<f64>]| r.iter().flatten().copied().collect::<Vec<f64>>();
    let mut all = finite(&ratios);
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let max = all.last().copied().unwrap_or(f64::NAN);
    let median = if all.is_empty() { f64::NAN } else { all[all.len() / 2] };
    let max_half = finite(&ratios[..ensemble.div_ceil(2)]).into_iter().fold(f64::NAN, f64::max);
    let unobservable = ratios.iter().filter(|r| r.is_none()).count();
    Ok(ObservabilityStats { ratios, max, median, max_half, unobservable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;
    use std::f64::consts::PI;

    fn unit(n: usize, x0: &[f64]) -> Grid {
        build_grid(2, n, &[(0.0, 1.0); 2], x0).unwrap()
    }

    #[test]
    fn fixture_constants() {
        let g = unit(9, &[-1.0, -1.0]);
        let m = MaterialModel::constant(&g, 1.0, 1.0, 0.0);
        let cfg = constants(&m, &g, 0.5, 1.0, 1.0, 1.0).unwrap();
        assert!((cfg.max_grad_l - 2.0 * 2f64.sqrt()).abs() < 1e-15);
        let k = cfg.constants;
        assert_eq!((k.c0, k.c1, k.c2, k.c3, k.t_min), (1.0, 4.0, 16.0, 2.0, 64.0));
        assert_eq!(cfg.script_c, 1.0);
        assert!(matches!(cfg.prefactor(64.0), Err(Error::Threshold { .. })));
        assert!((cfg.prefactor(65.0).unwrap() - 8.0).abs() < 1e-12);
        // min saturates
        let k2 = carleman_constants(&m.bounds, &g, 1.0, 1.0, 2.0).unwrap();
        assert_eq!(k2.c0, 1.0);
    }

    #[test]
    fn gamma_faces() {
        let g = unit(5, &[-1.0, -1.0]);
        let gam = gamma_region(&g);
        assert_eq!(gam.faces, vec![1, 3]);
        for (b, bn) in g.boundary().iter().enumerate() {
            let x = g.coords(bn.node);
            assert_eq!(gam.mask[b], x[0] == 1.0 || x[1] == 1.0);
        }
        let r = gamma_region(&unit(5, &[2.0, 2.0]));
        assert_eq!(r.faces, vec![0, 2]);
        let below = gamma_region(&unit(5, &[0.5, -1e6]));
        assert!(below.faces.contains(&3) && !below.faces.contains(&2));
    }

    #[test]
    fn rho_condition() {
        let g = unit(9, &[-1.0, -1.0]);
        let m = MaterialModel::constant(&g, 2.0, 1.0, 0.0);
        let r = check_rho_condition(&m, &g, 0.5).unwrap();
        assert_eq!(r.min_value, 1.0);
        assert!(r.passes);
        // ρ = e^{-k (x₁ + x₂)}: 1 - k (x₁ + x₂ + 2) is smallest at (1,1)
        let k = 1.0;
        let steep = MaterialModel::from_fn(&g, |x| ((-k * (x[0] + x[1])).exp(), 1.0, 0.0));
        let r = check_rho_condition(&steep, &g, 0.1).unwrap();
        assert!((r.min_value - (1.0 - 4.0 * k)).abs() < 0.05, "{}", r.min_value);
        assert!(!r.passes);
        let scaled = steep.with_rho(steep.rho.iter().map(|v| 3.0 * v).collect());
        let r2 = check_rho_condition(&scaled, &g, 0.1).unwrap();
        assert!((r.min_value - r2.min_value).abs() < 1e-12);
    }

    #[test]
    fn decomposition_zero_field() {
        let g = unit(9, &[-1.0, -1.0]);
        let m = MaterialModel::constant(&g, 1.0, 1.0, 0.0);
        let cfg = constants(&m, &g, 0.5, 1.0, 1.0, 1.0).unwrap();
        let r = carleman_decomposition(&|_, _| [0.0; 3], 0.3, &m, &g, &cfg).unwrap();
        assert_eq!(r.defect, 0.0);
        assert!(r.s1.iter().chain(&r.s2).all(|p| *p == [0.0; 3]));
    }

    #[test]
    fn decomposition_converges() {
        let w = |t: f64, x: &Point| [t.sin() * (PI * x[0]).sin(), 0.0, 0.0];
        let mut defects = Vec::new();
        for n in [33, 65] {
            let g = unit(n, &[-1.0, -1.0]);
            let m = MaterialModel::from_fn(&g, |x| (1.0 + 0.1 * x[0], 1.0 + 0.2 * x[1], 0.5 + 0.1 * x[0] * x[1]));
            let cfg = constants(&m, &g, 0.5, 1.0, 1.0, 1.0).unwrap();
            let r = carleman_decomposition(&w, 0.7, &m, &g, &cfg).unwrap();
            assert!(r.min_square_gap >= -1e-12);
            defects.push(r.defect);
        }
        let order = (defects[0] / defects[1]).log2();
        assert!(order > 1.7, "{defects:?}");
    }

    #[test]
    fn observability_scaling_and_stability() {
        let g = unit(12, &[-1.0, -1.0]);
        let m = MaterialModel::constant(&g, 1.0, 1.0, 0.5);
        let full = GammaRegion {
            mask: vec![true; g.boundary_len()],
            faces: (0..4).collect(),
            flagged: vec![],
        };
        let s = empirical_observability(&m, &g, &full, 2.0, 4, 11).unwrap();
        assert_eq!(s.unobservable, 0);
        assert!(s.max.is_finite() && s.max >= s.median);
        let again = empirical_observability(&m, &g, &full, 2.0, 4, 11).unwrap();
        assert_eq!(s.ratios, again.ratios);
    }
}
