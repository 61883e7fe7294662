//! Displacement-to-traction operator stored as impulse responses.
//!
//! The basis is invariant under time shifts, so one forward solve per spatial
//! source (boundary node × direction) gives every column: the response of atom
//! `k` is the response of atom 0 delayed by `k * shift` steps.

use rayon::prelude::*;

use super::basis::BoundaryBasis;
use super::operator::{BoundaryOperator, Horizon};
use crate::error::{Error, Result};
use crate::forward::{BoundarySource, ElasticSolver, SpaceTimeBoundaryField, TimeGrid};
use crate::linalg::DenseMatrix;

/// Atom 0 in one spatial slot with unit amplitude.
struct Impulse<'a> {
    basis: &'a BoundaryBasis,
    slot: usize,
}

impl BoundarySource for Impulse<'_> {
    fn fill(&self, n: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[self.slot] = self.basis.atoms().value(0, n);
    }
}

#[derive(Clone, Debug)]
pub struct DtnOperator {
    basis: BoundaryBasis,
    horizon: Horizon,
    time: TimeGrid,
    /// `[(source * receivers + receiver) * (steps + 1) + n]`, boundary forces.
    responses: Vec<f64>,
}

/// Forward-solves every spatial source of `basis` up to the requested horizon.
pub fn assemble_dtn(
    solver: &ElasticSolver,
    basis: &BoundaryBasis,
    horizon: Horizon,
) -> Result<DtnOperator> {
    let base = basis.time();
    let time = match horizon {
        Horizon::T => base,
        Horizon::TwoT => base.doubled(),
        Horizon::Coefficients => {
            return Err(Error::Config("a DtN operator needs a time horizon".into()))
        }
    };
    if solver.grid().boundary_len() != basis.boundary_nodes() || solver.grid().dim() != basis.dim() {
        return Err(Error::Shape("basis and solver use different grids".into()));
    }
    let ns = basis.spatial_len();
    let len = time.steps + 1;
    let columns: Vec<Result<Vec<f64>>> = (0..ns)
        .into_par_iter()
        .map(|slot| {
            let src = Impulse { basis, slot };
            let forces = solver.boundary_forces(&src, time).map_err(|e| Error::Column {
                column: slot * basis.atoms().count,
                source: Box::new(e),
            })?;
            // [n][r] -> [r][n]
            let mut out = vec![0.0; ns * len];
            for n in 0..len {
                for r in 0..ns {
                    out[r * len + n] = forces[n * ns + r];
                }
            }
            Ok(out)
        })
        .collect();
    let mut responses = Vec::with_capacity(ns * ns * len);
    for c in columns {
        responses.extend(c?);
    }
    Ok(DtnOperator { basis: basis.clone(), horizon, time, responses })
}

impl DtnOperator {
    pub fn basis(&self) -> &BoundaryBasis {
        &self.basis
    }

    pub fn horizon(&self) -> Horizon {
        self.horizon
    }

    pub fn time(&self) -> TimeGrid {
        self.time
    }

    /// Force record at `receiver` for a unit impulse in `source`.
    pub fn series(&self, source: usize, receiver: usize) -> &[f64] {
        let len = self.time.steps + 1;
        let ns = self.basis.spatial_len();
        let i = (source * ns + receiver) * len;
        &self.responses[i..i + len]
    }

    fn source_scale(&self, s: usize) -> f64 {
        self.basis.scale(s / self.basis.dim())
    }

    /// Traction density `Λ Σ c_i f_i` on the operator's horizon.
    pub fn apply(&self, coeffs: &[f64]) -> Result<SpaceTimeBoundaryField> {
        let basis = &self.basis;
        if coeffs.len() != basis.len() {
            return Err(Error::Shape(format!("expected {} coefficients", basis.len())));
        }
        let d = basis.dim();
        let ns = basis.spatial_len();
        let na = basis.atoms().count;
        let shift = basis.atoms().shift;
        let len = self.time.steps + 1;
        let mut values = vec![0.0; len * ns];
        for s in 0..ns {
            let sigma = self.source_scale(s);
            for k in 0..na {
                let c = coeffs[s * na + k] * sigma;
                if c == 0.0 {
                    continue;
                }
                let lag = k * shift;
                for r in 0..ns {
                    let y = self.series(s, r);
                    for n in lag..len {
                        values[n * ns + r] += c * y[n - lag];
                    }
                }
            }
        }
        let w = basis.weights();
        for row in values.chunks_mut(ns) {
            for (r, v) in row.iter_mut().enumerate() {
                *v /= w[r / d];
            }
        }
        Ok(SpaceTimeBoundaryField::from_parts(d, self.time, values, w.to_vec()))
    }

    /// `Λ* g`: coefficient vector with entries `⟨Λ f_i, g⟩`.
    pub fn adjoint_apply(&self, g: &SpaceTimeBoundaryField) -> Result<Vec<f64>> {
        let basis = &self.basis;
        if g.time() != self.time || g.nodes() != basis.boundary_nodes() {
            return Err(Error::Shape("field does not match the operator's output grid".into()));
        }
        let ns = basis.spatial_len();
        let na = basis.atoms().count;
        let shift = basis.atoms().shift;
        let len = self.time.steps + 1;
        // weighted samples g^n(r) * wt_n, laid out per receiver
        let mut gw = vec![0.0; ns * len];
        for n in 0..len {
            let wt = self.time.weight(n);
            for (r, v) in g.step(n).iter().enumerate() {
                gw[r * len + n] = wt * v;
            }
        }
        let mut out = vec![0.0; basis.len()];
        for s in 0..ns {
            let sigma = self.source_scale(s);
            for k in 0..na {
                let lag = k * shift;
                let mut acc = 0.0;
                for r in 0..ns {
                    let y = self.series(s, r);
                    let gr = &gw[r * len..(r + 1) * len];
                    for n in lag..len {
                        acc += y[n - lag] * gr[n];
                    }
                }
                out[s * na + k] = sigma * acc;
            }
        }
        Ok(out)
    }

    /// The operator restricted to outputs on `0..=steps` (causality makes this the
    /// operator of the shorter horizon).
    pub fn truncated(&self, horizon: Horizon) -> Result<DtnOperator> {
        let steps = match horizon {
            Horizon::T => self.basis.time().steps,
            Horizon::TwoT => self.basis.time().steps * 2,
            Horizon::Coefficients => return Err(Error::Config("not a time horizon".into())),
        };
        if steps > self.time.steps {
            return Err(Error::Config("cannot extend a DtN operator's horizon".into()));
        }
        let ns = self.basis.spatial_len();
        let mut responses = Vec::with_capacity(ns * ns * (steps + 1));
        for s in 0..ns {
            for r in 0..ns {
                responses.extend_from_slice(&self.series(s, r)[..=steps]);
            }
        }
        Ok(DtnOperator {
            basis: self.basis.clone(),
            horizon,
            time: TimeGrid { dt: self.time.dt, steps },
            responses,
        })
    }

    /// Dense matrix from coefficients to space-time traction samples.
    pub fn to_dense(&self) -> Result<BoundaryOperator> {
        let nb = self.basis.len();
        let ns = self.basis.spatial_len();
        let d = self.basis.dim();
        let rows = (self.time.steps + 1) * ns;
        let mut m = DenseMatrix::zeros(rows, nb);
        let mut e = vec![0.0; nb];
        for j in 0..nb {
            e[j] = 1.0;
            let col = self.apply(&e)?;
            for (i, v) in col.values().iter().enumerate() {
                m.set(i, j, *v);
            }
            e[j] = 0.0;
        }
        let w = self.basis.weights();
        let w_out = (0..rows)
            .map(|i| {
                let n = i / ns;
                self.time.weight(n) * w[(i % ns) / d]
            })
            .collect();
        BoundaryOperator::new(m, vec![1.0; nb], w_out, self.horizon)
    }

    /// Matrix with entries `⟨Λ f_i, (T - t) e_r⟩` over (0,T), one column per
    /// boundary slot `r`: applied to static traces it gives `Λ*((T - t) φ)`.
    pub fn ramp_moments(&self) -> DenseMatrix {
        let basis = &self.basis;
        let ns = basis.spatial_len();
        let na = basis.atoms().count;
        let shift = basis.atoms().shift;
        let tb = basis.time();
        let steps = tb.steps.min(self.time.steps);
        let ramp: Vec<f64> =
            (0..=steps).map(|n| tb.weight(n) * (tb.horizon() - tb.time(n))).collect();
        let mut m = DenseMatrix::zeros(basis.len(), ns);
        for s in 0..ns {
            let sigma = self.source_scale(s);
            for r in 0..ns {
                let y = self.series(s, r);
                for k in 0..na {
                    let lag = k * shift;
                    let mut acc = 0.0;
                    for n in lag..=steps {
                        acc += y[n - lag] * ramp[n];
                    }
                    m.set(s * na + k, r, sigma * acc);
                }
            }
        }
        m
    }
}
