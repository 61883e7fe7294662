//! Finite-difference helpers on grid scalar fields.

use crate::mesh::{Grid, Point};

/// Derivative along `axis` at `node`: centred inside, second-order one-sided on faces.
pub fn partial(g: &Grid, field: &[f64], node: usize, axis: usize) -> f64 {
    let i = g.multi_index(node)[axis];
    let s = g.stride(axis);
    let h = g.spacing()[axis];
    let n = g.n();
    if i == 0 {
        (-3.0 * field[node] + 4.0 * field[node + s] - field[node + 2 * s]) / (2.0 * h)
    } else if i == n - 1 {
        (3.0 * field[node] - 4.0 * field[node - s] + field[node - 2 * s]) / (2.0 * h)
    } else {
        (field[node + s] - field[node - s]) / (2.0 * h)
    }
}

pub fn gradient_at(g: &Grid, field: &[f64], node: usize) -> Point {
    let mut out = [0.0; 3];
    for k in 0..g.dim() {
        out[k] = partial(g, field, node, k);
    }
    out
}

pub fn gradient(g: &Grid, field: &[f64]) -> Vec<Point> {
    (0..g.len()).map(|a| gradient_at(g, field, a)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_grid;

    #[test]
    fn exact_on_quadratics() {
        let g = build_grid(2, 9, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let f: Vec<f64> = (0..g.len())
            .map(|a| {
                let x = g.coords(a);
                x[0] * x[0] - 3.0 * x[0] * x[1] + x[1]
            })
            .collect();
        for a in 0..g.len() {
            let x = g.coords(a);
            let gr = gradient_at(&g, &f, a);
            assert!((gr[0] - (2.0 * x[0] - 3.0 * x[1])).abs() < 1e-12);
            assert!((gr[1] - (-3.0 * x[0] + 1.0)).abs() < 1e-12);
        }
    }
}
