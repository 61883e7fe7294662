//! The connecting operator 𝒥, the probe operator 𝒦, and their volume oracles.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::basis::BoundaryBasis;
use super::dtn::DtnOperator;
use super::operator::{BoundaryOperator, Horizon};
use super::time_ops::{b_series, op_b, theta_extend};
use crate::error::{Error, Result};
use crate::forward::{mass_inner, BoundarySource, ElasticSolver, SpaceTimeBoundaryField, Storage, TimeGrid};
use crate::linalg::DenseMatrix;

/// Symmetrized 𝒥 in coefficient space (Gram form `⟨f_i, 𝒥 f_j⟩`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConnectingOperator {
    pub op: BoundaryOperator,
    /// ‖𝒥 - 𝒥*‖_F / ‖𝒥‖_F before symmetrization.
    pub asymmetry: f64,
}

impl ConnectingOperator {
    fn from_raw(j: DenseMatrix) -> Self {
        let n = j.rows;
        let jt = j.transpose();
        let norm = j.frobenius();
        let asymmetry = if norm > 0.0 { j.sub(&jt).frobenius() / norm } else { 0.0 };
        let sym = DenseMatrix::from_fn(n, n, |a, b| 0.5 * (j.get(a, b) + j.get(b, a)));
        ConnectingOperator {
            op: BoundaryOperator {
                matrix: sym,
                w_in: vec![1.0; n],
                w_out: vec![1.0; n],
                horizon: Horizon::Coefficients,
            },
            asymmetry,
        }
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.op.matrix
    }

    /// `⟨f, 𝒥 h⟩` for coefficient vectors.
    pub fn pairing(&self, f: &[f64], h: &[f64]) -> f64 {
        self.op.matrix.matvec(h).iter().zip(f).map(|(a, b)| a * b).sum()
    }
}

fn check_pair(lambda_t: &DtnOperator, lambda_2t: &DtnOperator) -> Result<()> {
    if lambda_t.horizon() != Horizon::T || lambda_2t.horizon() != Horizon::TwoT {
        return Err(Error::Config(format!(
            "horizon mismatch: expected (T, 2T), got ({:?}, {:?})",
            lambda_t.horizon(),
            lambda_2t.horizon()
        )));
    }
    if lambda_t.basis().time() != lambda_2t.basis().time()
        || lambda_t.basis().len() != lambda_2t.basis().len()
    {
        return Err(Error::Shape("operators use different bases".into()));
    }
    Ok(())
}

/// `𝒥 = Λ_T* ℬΘ - ℬ Λ_2T Θ` assembled from the impulse responses.
pub fn connecting_operator(lambda_t: &DtnOperator, lambda_2t: &DtnOperator) -> Result<ConnectingOperator> {
    check_pair(lambda_t, lambda_2t)?;
    let basis = lambda_t.basis();
    let time = basis.time();
    let big_n = time.steps;
    let dt = time.dt;
    let atoms = basis.atoms();
    let na = atoms.count;
    let shift = atoms.shift;
    let ns = basis.spatial_len();
    let d = basis.dim();
    let total = basis.len();
    let wt: Vec<f64> = (0..=big_n).map(|n| time.weight(n)).collect();
    let a: Vec<Vec<f64>> = (0..na).map(|k| atoms.samples(k, 2 * big_n)).collect();
    // ℬΘ a_k on (0,T)
    let beta: Vec<Vec<f64>> = a
        .iter()
        .map(|ak| {
            let mut ext = ak.clone();
            ext[big_n + 1..].iter_mut().for_each(|v| *v = 0.0);
            let mut out = vec![0.0; big_n + 1];
            b_series(&ext, dt, big_n, &mut out);
            out
        })
        .collect();
    let wbeta: Vec<Vec<f64>> =
        beta.iter().map(|b| b.iter().zip(&wt).map(|(x, w)| x * w).collect()).collect();
    let wa: Vec<Vec<f64>> =
        a.iter().map(|s| s[..=big_n].iter().zip(&wt).map(|(x, w)| x * w).collect()).collect();
    let sigma = |slot: usize| basis.scale(slot / d);

    // Per source: J1 rows (s, ·) and J2 columns (s, ·).
    let blocks: Vec<(Vec<f64>, Vec<f64>)> = (0..ns)
        .into_par_iter()
        .map(|s| {
            let mut rows = vec![0.0; na * total];
            let mut cols = vec![0.0; total * na];
            let mut shifted = vec![0.0; 2 * big_n + 1];
            let mut bz = vec![0.0; big_n + 1];
            let ss = sigma(s);
            for r in 0..ns {
                let sr = sigma(r);
                let y = lambda_t.series(s, r);
                for k in 0..na {
                    let lag = k * shift;
                    for kp in 0..na {
                        let wb = &wbeta[kp];
                        let mut acc = 0.0;
                        for n in lag..=big_n {
                            acc += y[n - lag] * wb[n];
                        }
                        rows[k * total + r * na + kp] = ss * sr * acc;
                    }
                }
                let z = lambda_2t.series(s, r);
                for k in 0..na {
                    let lag = k * shift;
                    shifted[..lag].iter_mut().for_each(|v| *v = 0.0);
                    shifted[lag..].copy_from_slice(&z[..2 * big_n + 1 - lag]);
                    b_series(&shifted, dt, big_n, &mut bz);
                    for kp in 0..na {
                        let acc: f64 = wa[kp].iter().zip(&bz).map(|(x, y)| x * y).sum();
                        cols[(r * na + kp) * na + k] = ss * sr * acc;
                    }
                }
            }
            (rows, cols)
        })
        .collect();

    let mut j = DenseMatrix::zeros(total, total);
    for (s, (rows, cols)) in blocks.iter().enumerate() {
        for k in 0..na {
            let i = s * na + k;
            j.data[i * total..(i + 1) * total]
                .iter_mut()
                .zip(&rows[k * total..(k + 1) * total])
                .for_each(|(dst, v)| *dst += v);
        }
        for row in 0..total {
            for k in 0..na {
                j.data[row * total + s * na + k] -= cols[row * na + k];
            }
        }
    }
    Ok(ConnectingOperator::from_raw(j))
}

/// Matrix of a linear map on flat vectors, built column by column.
fn matrix_of(in_len: usize, out_len: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(out_len, in_len);
    let mut e = vec![0.0; in_len];
    for j in 0..in_len {
        e[j] = 1.0;
        for (i, v) in f(&e).iter().enumerate() {
            m.set(i, j, *v);
        }
        e[j] = 0.0;
    }
    m
}

fn field_weights(time: TimeGrid, w: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((time.steps + 1) * w.len() * d);
    for n in 0..=time.steps {
        for wb in w {
            for _ in 0..d {
                out.push(time.weight(n) * wb);
            }
        }
    }
    out
}

/// Reference assembly of 𝒥 by composing dense operators (small problems only).
pub fn connecting_operator_dense(
    lambda_t: &BoundaryOperator,
    lambda_2t: &BoundaryOperator,
    basis: &BoundaryBasis,
) -> Result<ConnectingOperator> {
    if lambda_t.horizon != Horizon::T || lambda_2t.horizon != Horizon::TwoT {
        return Err(Error::Config("horizon mismatch: expected (T, 2T)".into()));
    }
    let time = basis.time();
    let d = basis.dim();
    let w = basis.weights();
    let nb = basis.boundary_nodes();
    let t2 = time.doubled();
    let len_t = (time.steps + 1) * nb * d;
    let len_2t = (t2.steps + 1) * nb * d;
    let w_t = field_weights(time, w, d);
    let w_2t = field_weights(t2, w, d);
    let wrap = |values: &[f64], tg: TimeGrid| {
        SpaceTimeBoundaryField::from_parts(d, tg, values.to_vec(), w.to_vec())
    };
    let synth = BoundaryOperator::new(
        matrix_of(basis.len(), len_t, |c| basis.synthesize(c).unwrap().values().to_vec()),
        vec![1.0; basis.len()],
        w_t.clone(),
        Horizon::T,
    )?;
    let theta = BoundaryOperator::new(
        matrix_of(len_t, len_2t, |v| theta_extend(&wrap(v, time)).values().to_vec()),
        w_t.clone(),
        w_2t.clone(),
        Horizon::TwoT,
    )?;
    let bop = BoundaryOperator::new(
        matrix_of(len_2t, len_t, |v| op_b(&wrap(v, t2)).unwrap().values().to_vec()),
        w_2t,
        w_t,
        Horizon::T,
    )?;
    let first = lambda_t.adjoint()?.compose(&bop.compose(&theta)?.compose(&synth)?)?;
    let second = synth.adjoint()?.compose(&bop.compose(lambda_2t)?)?;
    Ok(ConnectingOperator::from_raw(first.matrix.sub(&second.matrix)))
}

/// Static boundary traces of a probe, one complex entry per boundary slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeTraces {
    pub t0: Vec<Complex64>,
    pub t1: Vec<Complex64>,
}

/// `𝒦 = Λ_T* 𝓘 T₀ - 𝓘 T₁` in moment form, precomputed for repeated probes.
#[derive(Clone, Debug)]
pub struct KOperator {
    ramp: DenseMatrix,
    /// `σ_b w_b ∫ a_k (T - t) dt` factors: entry `(b, k)`.
    trace_factor: Vec<f64>,
    dim: usize,
    atoms: usize,
}

impl KOperator {
    pub fn new(lambda_t: &DtnOperator) -> Self {
        let basis = lambda_t.basis();
        let time = basis.time();
        let atoms = basis.atoms();
        let nb = basis.boundary_nodes();
        let mut trace_factor = vec![0.0; nb * atoms.count];
        for k in 0..atoms.count {
            let m: f64 = (0..=time.steps)
                .map(|n| time.weight(n) * atoms.value(k, n) * (time.horizon() - time.time(n)))
                .sum();
            for b in 0..nb {
                trace_factor[b * atoms.count + k] = basis.scale(b) * basis.weights()[b] * m;
            }
        }
        KOperator { ramp: lambda_t.ramp_moments(), trace_factor, dim: basis.dim(), atoms: atoms.count }
    }

    pub fn apply(&self, traces: &ProbeTraces) -> Result<Vec<Complex64>> {
        let ns = self.ramp.cols;
        if traces.t0.len() != ns || traces.t1.len() != ns {
            return Err(Error::Shape(format!(
                "traces have lengths ({}, {}), expected {ns}",
                traces.t0.len(),
                traces.t1.len()
            )));
        }
        let re: Vec<f64> = traces.t0.iter().map(|z| z.re).collect();
        let im: Vec<f64> = traces.t0.iter().map(|z| z.im).collect();
        let a = self.ramp.matvec(&re);
        let b = self.ramp.matvec(&im);
        let mut out: Vec<Complex64> = a.into_iter().zip(b).map(|(x, y)| Complex64::new(x, y)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let k = i % self.atoms;
            let s = i / self.atoms;
            let bnode = s / self.dim;
            *o -= traces.t1[s] * self.trace_factor[bnode * self.atoms + k];
        }
        Ok(out)
    }
}

pub fn op_k(lambda_t: &DtnOperator, traces: &ProbeTraces) -> Result<Vec<Complex64>> {
    KOperator::new(lambda_t).apply(traces)
}

/// `∫_Ω u_f(T)·u_h(T) ρ dx` by the nodal trapezoid rule.
pub fn blagoveshchenskii_oracle(
    solver: &ElasticSolver,
    f: &dyn BoundarySource,
    h: &dyn BoundarySource,
    time: TimeGrid,
) -> Result<f64> {
    let uf = solver.solve_ibvp(f, time, Storage::FinalTwo)?;
    let uh = solver.solve_ibvp(h, time, Storage::FinalTwo)?;
    Ok(mass_inner(solver, uf.final_state()?, uh.final_state()?))
}

/// `⟨f, 𝒥 h⟩` for arbitrary sources, from boundary data and traction alone.
pub fn blagoveshchenskii_pairing(
    solver: &ElasticSolver,
    f: &dyn BoundarySource,
    h: &dyn BoundarySource,
    time: TimeGrid,
) -> Result<f64> {
    let d = solver.grid().dim();
    let ns = solver.grid().boundary_len() * d;
    let big_n = time.steps;
    let ff = solver.boundary_forces(f, time)?;
    let fh = solver.boundary_forces(h, time.doubled())?;
    let mut buf = vec![0.0; ns];
    // h and f on (0,T), zero-extended
    let mut hs = vec![0.0; ns * (2 * big_n + 1)];
    let mut fs = vec![0.0; ns * (big_n + 1)];
    for n in 0..=big_n {
        h.fill(n, &mut buf);
        for r in 0..ns {
            hs[r * (2 * big_n + 1) + n] = buf[r];
        }
        f.fill(n, &mut buf);
        fs[n * ns..(n + 1) * ns].copy_from_slice(&buf);
    }
    let mut series = vec![0.0; 2 * big_n + 1];
    let mut bh = vec![0.0; big_n + 1];
    let mut bt = vec![0.0; big_n + 1];
    let mut acc = 0.0;
    for r in 0..ns {
        b_series(&hs[r * (2 * big_n + 1)..(r + 1) * (2 * big_n + 1)], time.dt, big_n, &mut bh);
        for (n, v) in series.iter_mut().enumerate() {
            *v = fh[n * ns + r];
        }
        b_series(&series, time.dt, big_n, &mut bt);
        for n in 0..=big_n {
            acc += time.weight(n) * (ff[n * ns + r] * bh[n] - fs[n * ns + r] * bt[n]);
        }
    }
    Ok(acc)
}

/// `∫_Ω u_f(T)·φ ρ dx` (unconjugated) by the nodal trapezoid rule.
pub fn k_identity_oracle(
    solver: &ElasticSolver,
    f: &dyn BoundarySource,
    phi: &[Complex64],
    time: TimeGrid,
) -> Result<Complex64> {
    let u = solver.solve_ibvp(f, time, Storage::FinalTwo)?;
    let u = u.final_state()?;
    if phi.len() != u.len() {
        return Err(Error::Shape("probe field does not match the grid".into()));
    }
    let d = solver.grid().dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for (a, m) in solver.mass().iter().enumerate() {
        for i in 0..d {
            acc += phi[a * d + i] * (m * u[a * d + i]);
        }
    }
    Ok(acc)
}

/// `⟨f, 𝒦 φ⟩` for an arbitrary source from its boundary data and traction.
pub fn k_pairing(
    solver: &ElasticSolver,
    f: &dyn BoundarySource,
    traces: &ProbeTraces,
    time: TimeGrid,
) -> Result<Complex64> {
    let g = solver.grid();
    let d = g.dim();
    let ns = g.boundary_len() * d;
    let forces = solver.boundary_forces(f, time)?;
    let mut buf = vec![0.0; ns];
    let mut acc = Complex64::new(0.0, 0.0);
    for n in 0..=time.steps {
        let ramp = time.weight(n) * (time.horizon() - time.time(n));
        f.fill(n, &mut buf);
        for r in 0..ns {
            let wb = g.boundary()[r / d].weight;
            acc += traces.t0[r] * (ramp * forces[n * ns + r]) - traces.t1[r] * (ramp * wb * buf[r]);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::basis::TemporalAtoms;
    use crate::boundary::dtn::assemble_dtn;
    use crate::material::MaterialModel;
    use crate::mesh::build_grid;

    fn setup() -> (ElasticSolver, BoundaryBasis) {
        let g = build_grid(2, 6, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let m = MaterialModel::from_fn(&g, |x| (1.0 + 0.2 * x[0] * x[1], 1.0, 0.7));
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = s.time_grid(0.9);
        let basis = BoundaryBasis::new(&g, TemporalAtoms::new(time, 3, 0.35).unwrap());
        (s, basis)
    }

    #[test]
    fn fast_assembly_matches_dense_composition() {
        let (s, basis) = setup();
        let lt = assemble_dtn(&s, &basis, Horizon::T).unwrap();
        let l2 = assemble_dtn(&s, &basis, Horizon::TwoT).unwrap();
        let fast = connecting_operator(&lt, &l2).unwrap();
        let dense =
            connecting_operator_dense(&lt.to_dense().unwrap(), &l2.to_dense().unwrap(), &basis).unwrap();
        let diff = fast.matrix().sub(dense.matrix()).max_abs();
        assert!(diff <= 1e-10 * dense.matrix().max_abs(), "{diff}");
    }

    #[test]
    fn basis_pairs_match_volume_oracle() {
        let (s, basis) = setup();
        let lt = assemble_dtn(&s, &basis, Horizon::T).unwrap();
        let l2 = assemble_dtn(&s, &basis, Horizon::TwoT).unwrap();
        let j = connecting_operator(&lt, &l2).unwrap();
        assert!(j.asymmetry < 1e-10, "asymmetry {}", j.asymmetry);
        for (i, k) in [(0, 0), (3, 17), (40, 41)] {
            let oracle =
                blagoveshchenskii_oracle(&s, &basis.element(i), &basis.element(k), basis.time()).unwrap();
            let val = j.matrix().get(i, k);
            assert!((val - oracle).abs() <= 1e-9 * oracle.abs().max(1e-12), "{i},{k}: {val} vs {oracle}");
        }
    }

    #[test]
    fn pairing_matches_matrix() {
        let (s, basis) = setup();
        let lt = assemble_dtn(&s, &basis, Horizon::T).unwrap();
        let l2 = assemble_dtn(&s, &basis, Horizon::TwoT).unwrap();
        let j = connecting_operator(&lt, &l2).unwrap();
        let p = blagoveshchenskii_pairing(&s, &basis.element(5), &basis.element(9), basis.time()).unwrap();
        assert!((p - j.matrix().get(5, 9)).abs() < 1e-9 * p.abs().max(1e-12));
    }

    #[test]
    fn mismatched_horizons_rejected() {
        let (s, basis) = setup();
        let lt = assemble_dtn(&s, &basis, Horizon::T).unwrap();
        assert!(matches!(connecting_operator(&lt, &lt), Err(Error::Config(_))));
    }

    #[test]
    fn zero_probe_zero_k() {
        let (s, basis) = setup();
        let lt = assemble_dtn(&s, &basis, Horizon::T).unwrap();
        let ns = basis.spatial_len();
        let z = vec![Complex64::new(0.0, 0.0); ns];
        let k = op_k(&lt, &ProbeTraces { t0: z.clone(), t1: z }).unwrap();
        assert!(k.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn k_matches_dense_adjoint() {
        let (s, basis) = setup();
        let lt = assemble_dtn(&s, &basis, Horizon::T).unwrap();
        let ns = basis.spatial_len();
        let t0: Vec<Complex64> = (0..ns).map(|r| Complex64::new((r as f64).sin(), 0.3)).collect();
        let t1: Vec<Complex64> = (0..ns).map(|r| Complex64::new(0.1, (r as f64).cos())).collect();
        let k = op_k(&lt, &ProbeTraces { t0: t0.clone(), t1: t1.clone() }).unwrap();
        let time = basis.time();
        let ramp = |vals: &[Complex64], im: bool| {
            SpaceTimeBoundaryField::from_fn(s.grid(), time, |t, _, bn| {
                let b = s.grid().boundary_slot(bn.node).unwrap();
                let mut v = [0.0; 3];
                for c in 0..2 {
                    let z = vals[b * 2 + c];
                    v[c] = (time.horizon() - t) * if im { z.im } else { z.re };
                }
                v
            })
        };
        let adj = lt.to_dense().unwrap().adjoint().unwrap();
        let a_re = adj.apply(ramp(&t0, false).values());
        let a_im = adj.apply(ramp(&t0, true).values());
        let m_re = basis.moments(&ramp(&t1, false)).unwrap();
        let m_im = basis.moments(&ramp(&t1, true)).unwrap();
        for i in 0..basis.len() {
            let want = Complex64::new(a_re[i] - m_re[i], a_im[i] - m_im[i]);
            assert!((k[i] - want).norm() < 1e-10 * want.norm().max(1.0));
        }
        let direct = k_pairing(&s, &basis.element(4), &ProbeTraces { t0, t1 }, time).unwrap();
        assert!((direct - k[4]).norm() < 1e-10 * direct.norm().max(1.0));
    }
}
