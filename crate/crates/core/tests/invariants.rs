use std::sync::OnceLock;

use num_complex::Complex64;
use proptest::prelude::*;

use elastobcm::boundary::{op_b, op_i, BoundaryBasis, TemporalAtoms};
use elastobcm::cgo::{bdot, make_probe, null_amplitude};
use elastobcm::forward::{ElasticSolver, SpaceTimeBoundaryField, TimeGrid};
use elastobcm::material::MaterialModel;
use elastobcm::mesh::{build_grid, Grid};
use elastobcm::reconstruction::{lattice_indices, BoundaryData, Regularization};
use elastobcm::stability::sobolev_norm;

fn small() -> &'static (Grid, BoundaryData) {
    static CELL: OnceLock<(Grid, BoundaryData)> = OnceLock::new();
    CELL.get_or_init(|| {
        let g = build_grid(2, 9, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let m = MaterialModel::from_fn(&g, |x| (1.0 + 0.2 * x[0] * x[1], 1.0, 0.5));
        let s = ElasticSolver::new(&m, &g).unwrap();
        let mut time = s.time_grid(0.6);
        if time.steps % 2 == 1 {
            time = TimeGrid::new(0.6, 0.6 / (time.steps + 1) as f64).unwrap();
        }
        let basis = BoundaryBasis::new(&g, TemporalAtoms::new(time, 3, 0.3).unwrap());
        let data = BoundaryData::measure(&s, &basis, Regularization::default()).unwrap();
        (g, data)
    })
}

fn coeffs(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

fn field(time: TimeGrid, nodes: usize, seed: &[f64]) -> SpaceTimeBoundaryField {
    let g = build_grid(2, nodes, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
    SpaceTimeBoundaryField::from_fn(&g, time, |t, x, _| {
        [seed[0] * (3.0 * t + x[0]).sin(), seed[1] * t * t + seed[2] * x[1], 0.0]
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn dtn_is_linear(a in coeffs(3), x in -2.0f64..2.0) {
        let (_, data) = small();
        let n = data.lambda_t.basis().len();
        let f: Vec<f64> = (0..n).map(|i| a[i % 3] * ((i as f64) * 0.37).sin()).collect();
        let h: Vec<f64> = (0..n).map(|i| a[(i + 1) % 3] * ((i as f64) * 0.11).cos()).collect();
        let combo: Vec<f64> = f.iter().zip(&h).map(|(p, q)| p + x * q).collect();
        let mut lhs = data.lambda_t.apply(&combo).unwrap();
        let mut rhs = data.lambda_t.apply(&f).unwrap();
        rhs.axpy(x, &data.lambda_t.apply(&h).unwrap()).unwrap();
        lhs.axpy(-1.0, &rhs).unwrap();
        prop_assert!(lhs.max_abs() <= 1e-10 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn connecting_pairing_is_symmetric(f in coeffs(3), h in coeffs(3)) {
        let (_, data) = small();
        let n = data.connecting.matrix().rows;
        let ext = |c: &[f64]| -> Vec<f64> { (0..n).map(|i| c[i % 3] / (1 + i / 3) as f64).collect() };
        let (f, h) = (ext(&f), ext(&h));
        let a = data.connecting.pairing(&f, &h);
        let b = data.connecting.pairing(&h, &f);
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn time_operators_are_linear(s in coeffs(3), t in coeffs(3), x in -3.0f64..3.0) {
        let time = TimeGrid::new(1.0, 0.05).unwrap();
        let (f, h) = (field(time, 5, &s), field(time, 5, &t));
        let mut combo = f.clone();
        combo.axpy(x, &h).unwrap();

        let mut lhs = op_i(&combo);
        let mut rhs = op_i(&f);
        rhs.axpy(x, &op_i(&h)).unwrap();
        lhs.axpy(-1.0, &rhs).unwrap();
        prop_assert!(lhs.max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));

        let mut lhs = op_b(&combo).unwrap();
        let mut rhs = op_b(&f).unwrap();
        rhs.axpy(x, &op_b(&h).unwrap()).unwrap();
        lhs.axpy(-1.0, &rhs).unwrap();
        prop_assert!(lhs.max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn probe_conditions_hold(k1 in -4i32..=4, k2 in -4i32..=4) {
        prop_assume!(k1 != 0 || k2 != 0);
        let g = build_grid(2, 9, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let m = MaterialModel::constant(&g, 1.0, 1.0, 0.5);
        let xi = [k1 as f64 * std::f64::consts::PI, k2 as f64 * std::f64::consts::PI];
        let p = make_probe(&xi, &g, &m).unwrap();
        let tt = bdot(&p.theta, &p.theta);
        prop_assert!(tt.norm() <= 1e-12 * (1.0 + xi[0].abs() + xi[1].abs()).powi(2));
        prop_assert!(bdot(&p.theta, &p.iota).norm() <= 1e-12 * (1.0 + xi[0].abs() + xi[1].abs()));
        let sum: Vec<Complex64> = p.theta.iter().zip(&p.theta).map(|(a, b)| a + b.conj()).collect();
        let expect = [Complex64::new(xi[0], 0.0), Complex64::new(xi[1], 0.0)];
        for (a, b) in sum.iter().zip(&expect) {
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + b.norm()));
        }
    }

    #[test]
    fn null_amplitude_is_orthogonal(re in prop::collection::vec(-2.0f64..2.0, 2), im in prop::collection::vec(-2.0f64..2.0, 2)) {
        let theta: Vec<Complex64> = re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)).collect();
        prop_assume!(theta.iter().map(|z| z.norm()).sum::<f64>() > 1e-3);
        let iota = null_amplitude(&theta).unwrap();
        let n2: f64 = iota.iter().map(|z| z.norm_sqr()).sum();
        prop_assert!((n2 - 1.0).abs() <= 1e-12);
        prop_assert!(bdot(&theta, &iota).norm() <= 1e-12 * (1.0 + theta.iter().map(|z| z.norm()).sum::<f64>()));
    }

    #[test]
    fn lattice_is_symmetric(gamma in 1.0f64..15.0) {
        let g = build_grid(2, 12, &[(0.0, 1.0), (0.0, 2.0)], &[-1.0, -1.0]).unwrap();
        let ks = lattice_indices(&g, gamma).unwrap();
        for k in &ks {
            let neg: Vec<i64> = k.iter().map(|v| -v).collect();
            prop_assert!(ks.contains(&neg));
        }
    }

    #[test]
    fn sobolev_norm_grows_with_s(a in 0.05f64..0.5, s in 0.0f64..1.5, ds in 0.1f64..1.0) {
        let g = build_grid(2, 16, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap();
        let f: Vec<f64> = (0..g.len()).map(|i| {
            let x = g.coords(i);
            a * (2.0 * std::f64::consts::PI * x[0]).sin() + (4.0 * std::f64::consts::PI * x[1]).cos()
        }).collect();
        let lo = sobolev_norm(&g, &f, s).unwrap();
        let hi = sobolev_norm(&g, &f, s + ds).unwrap();
        prop_assert!(hi >= lo);
    }
}

#[test]
fn sample_ignores_probe_scale() {
    let (g, data) = small();
    let lame = ElasticSolver::new(&MaterialModel::from_fn(g, |_| (1.0, 1.0, 0.5)), g).unwrap();
    let p = make_probe(&[2.0 * std::f64::consts::PI, 0.0], g, lame.material())
        .unwrap()
        .with_consistent_traces(&lame)
        .unwrap();
    let base = data.sample(&p, &data.inverse).unwrap();
    for c in [Complex64::new(4.0, 0.0), Complex64::new(0.3, -2.0)] {
        let v = data.sample(&p.rescaled(c), &data.inverse).unwrap();
        assert!((v - base).norm() <= 1e-12 * (1.0 + base.norm()), "{v} vs {base}");
    }
}

#[test]
fn regularized_inverse_projects() {
    let (_, data) = small();
    let d = data.inverse.projection_defect(data.connecting.matrix());
    assert!(d <= 1e-8, "{d}");
}
