//! Matrix-free bilinear finite-element stiffness for the isotropic elastic operator.
//!
//! Each node stores one d×d block per neighbour offset in {-1, 0, 1}^d. Cell
//! coefficients are arithmetic averages of the corner values and the element
//! integrals use 2^d Gauss points, which is exact for piecewise bilinear fields.

use crate::mesh::Grid;

#[derive(Clone, Debug)]
pub(crate) struct Stiffness {
    d: usize,
    slots: usize,
    offsets: Vec<isize>,
    blocks: Vec<f64>,
    len: usize,
}

fn corner(local: usize, d: usize) -> [usize; 3] {
    let mut c = [0; 3];
    for k in 0..d {
        c[k] = (local >> (d - 1 - k)) & 1;
    }
    c
}

/// Element matrices (shear part, lambda part) for a cell with the given spacing.
fn element_matrices(d: usize, h: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nc = 1 << d;
    let size = nc * d;
    let g = 0.5 / 3f64.sqrt();
    let gauss = [0.5 - g, 0.5 + g];
    let mut kmu = vec![0.0; size * size];
    let mut klam = vec![0.0; size * size];
    for q in 0..nc {
        let qc = corner(q, d);
        let xi: Vec<f64> = (0..d).map(|k| gauss[qc[k]]).collect();
        let weight: f64 = h.iter().map(|hk| 0.5 * hk).product();
        // gradients of the corner shape functions at this point
        let grads: Vec<[f64; 3]> = (0..nc)
            .map(|a| {
                let c = corner(a, d);
                let mut gr = [0.0; 3];
                for k in 0..d {
                    let mut v = if c[k] == 1 { 1.0 / h[k] } else { -1.0 / h[k] };
                    for m in 0..d {
                        if m != k {
                            v *= if c[m] == 1 { xi[m] } else { 1.0 - xi[m] };
                        }
                    }
                    gr[k] = v;
                }
                gr
            })
            .collect();
        for a in 0..nc {
            for b in 0..nc {
                let ga = grads[a];
                let gb = grads[b];
                let dotab: f64 = (0..d).map(|k| ga[k] * gb[k]).sum();
                for i in 0..d {
                    for j in 0..d {
                        let idx = (a * d + i) * size + b * d + j;
                        let mut v = ga[j] * gb[i];
                        if i == j {
                            v += dotab;
                        }
                        kmu[idx] += weight * v;
                        klam[idx] += weight * ga[i] * gb[j];
                    }
                }
            }
        }
    }
    (kmu, klam)
}

impl Stiffness {
    pub fn assemble(g: &Grid, mu: &[f64], lambda: &[f64]) -> Self {
        let d = g.dim();
        let n = g.n();
        let slots = 3usize.pow(d as u32);
        let nc = 1 << d;
        let size = nc * d;
        let (kmu, klam) = element_matrices(d, g.spacing());
        let mut offsets = vec![0isize; slots];
        for (s, off) in offsets.iter_mut().enumerate() {
            let mut rest = s;
            let mut o = 0isize;
            for k in (0..d).rev() {
                let dk = (rest % 3) as isize - 1;
                rest /= 3;
                o += dk * g.stride(k) as isize;
            }
            *off = o;
        }
        let slot_of = |a: &[usize; 3], b: &[usize; 3]| -> usize {
            (0..d).fold(0, |acc, k| acc * 3 + (b[k] + 1 - a[k]))
        };
        let len = g.len();
        let mut blocks = vec![0.0; len * slots * d * d];
        let cells = (n - 1).pow(d as u32);
        let mut nodes = vec![0usize; nc];
        for cell in 0..cells {
            let mut base = [0usize; 3];
            let mut rest = cell;
            for k in (0..d).rev() {
                base[k] = rest % (n - 1);
                rest /= n - 1;
            }
            let (mut mu_c, mut lam_c) = (0.0, 0.0);
            for (a, node) in nodes.iter_mut().enumerate() {
                let c = corner(a, d);
                let idx: Vec<usize> = (0..d).map(|k| base[k] + c[k]).collect();
                *node = g.node_index(&idx);
                mu_c += mu[*node];
                lam_c += lambda[*node];
            }
            mu_c /= nc as f64;
            lam_c /= nc as f64;
            for a in 0..nc {
                let ca = corner(a, d);
                for b in 0..nc {
                    let cb = corner(b, d);
                    let slot = slot_of(&ca, &cb);
                    let dst = (nodes[a] * slots + slot) * d * d;
                    for i in 0..d {
                        for j in 0..d {
                            let e = (a * d + i) * size + b * d + j;
                            blocks[dst + i * d + j] += mu_c * kmu[e] + lam_c * klam[e];
                        }
                    }
                }
            }
        }
        Stiffness { d, slots, offsets, blocks, len }
    }

    /// Row block of `K u` at a node whose full neighbourhood exists.
    #[inline]
    pub fn apply_interior(&self, u: &[f64], a: usize, out: &mut [f64; 3]) {
        let d = self.d;
        let dd = d * d;
        let base = a * self.slots * dd;
        *out = [0.0; 3];
        for s in 0..self.slots {
            let nb = (a as isize + self.offsets[s]) as usize;
            let blk = &self.blocks[base + s * dd..base + (s + 1) * dd];
            let un = &u[nb * d..nb * d + d];
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += blk[i * d + j] * un[j];
                }
                out[i] += acc;
            }
        }
    }

    /// Row block of `K u` at any node; missing neighbours carry zero blocks.
    pub fn apply_checked(&self, u: &[f64], a: usize, out: &mut [f64; 3]) {
        let d = self.d;
        let dd = d * d;
        let base = a * self.slots * dd;
        *out = [0.0; 3];
        for s in 0..self.slots {
            let nb = a as isize + self.offsets[s];
            if nb < 0 || nb as usize >= self.len {
                continue;
            }
            let nb = nb as usize;
            let blk = &self.blocks[base + s * dd..base + (s + 1) * dd];
            for i in 0..d {
                for j in 0..d {
                    out[i] += blk[i * d + j] * u[nb * d + j];
                }
            }
        }
    }

    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let d = self.d;
        let mut r = [0.0; 3];
        for a in 0..self.len {
            self.apply_checked(u, a, &mut r);
            out[a * d..a * d + d].copy_from_slice(&r[..d]);
        }
    }

    /// `uᵀ K v`
    pub fn bilinear(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut kv = vec![0.0; v.len()];
        self.apply(v, &mut kv);
        u.iter().zip(&kv).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    #[test]
    fn rigid_motions_in_kernel() {
        for d in [2, 3] {
            let g = build_grid(d, 5, &vec![(0.0, 1.0); d], &vec![-1.0; d]).unwrap();
            let mu: Vec<f64> = (0..g.len()).map(|a| 1.0 + 0.1 * (a % 3) as f64).collect();
            let lam = vec![0.7; g.len()];
            let k = Stiffness::assemble(&g, &mu, &lam);
            // translation and an infinitesimal rotation in the (0,1) plane
            let mut t = vec![0.0; g.len() * d];
            let mut rot = vec![0.0; g.len() * d];
            for a in 0..g.len() {
                let x = g.coords(a);
                t[a * d] = 1.0;
                rot[a * d] = -x[1];
                rot[a * d + 1] = x[0];
            }
            for f in [&t, &rot] {
                let mut out = vec![0.0; f.len()];
                k.apply(f, &mut out);
                assert!(out.iter().all(|v| v.abs() < 1e-12));
            }
        }
    }

    #[test]
    fn symmetric() {
        let g = build_grid(2, 6, &[(0.0, 1.0), (0.0, 2.0)], &[-1.0, -1.0]).unwrap();
        let mu: Vec<f64> = (0..g.len()).map(|a| 1.0 + 0.05 * a as f64).collect();
        let lam: Vec<f64> = (0..g.len()).map(|a| 0.5 - 0.01 * a as f64).collect();
        let k = Stiffness::assemble(&g, &mu, &lam);
        let u: Vec<f64> = (0..g.len() * 2).map(|i| (i as f64 * 0.37).sin()).collect();
        let v: Vec<f64> = (0..g.len() * 2).map(|i| (i as f64 * 0.91).cos()).collect();
        assert!((k.bilinear(&u, &v) - k.bilinear(&v, &u)).abs() < 1e-12);
    }

    #[test]
    fn linear_field_energy_is_exact() {
        // u = B x, constant coefficients: uᵀKu = ∫ (mu (B+Bᵀ) + lambda tr B I) : B
        let g = build_grid(2, 7, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let (mu, lam) = (1.3, 0.4);
        let k = Stiffness::assemble(&g, &vec![mu; g.len()], &vec![lam; g.len()]);
        let b = [[0.3, -0.2], [0.5, 0.1]];
        let mut u = vec![0.0; g.len() * 2];
        for a in 0..g.len() {
            let x = g.coords(a);
            for i in 0..2 {
                u[a * 2 + i] = b[i][0] * x[0] + b[i][1] * x[1];
            }
        }
        let tr = b[0][0] + b[1][1];
        let mut exact = lam * tr * tr;
        for i in 0..2 {
            for j in 0..2 {
                exact += mu * (b[i][j] + b[j][i]) * b[i][j];
            }
        }
        assert!((k.bilinear(&u, &u) - exact).abs() < 1e-12);
    }
}
