//! Acceptance harness: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use elastobcm::boundary::basis::bump;
use elastobcm::boundary::{
    blagoveshchenskii_oracle, blagoveshchenskii_pairing, k_identity_oracle, BoundaryBasis, TemporalAtoms,
};
use elastobcm::carleman::{self, carleman_decomposition, gamma_region, random_interior_field};
use elastobcm::cgo::{certify_condition, elastostatic_residual, make_probe};
use elastobcm::forward::{energy_with, ElasticSolver, SpaceTimeBoundaryField, Storage, TimeGrid};
use elastobcm::material::MaterialModel;
use elastobcm::mesh::{build_grid, Grid, Point};
use elastobcm::reconstruction::{
    fourier_sample, frequency_lattice, reconstruct_density, BoundaryData, Regularization, TraceMode,
};
use elastobcm::stability::{
    lipschitz_report, log_stability_report, NormOptions, PerturbationExperiment, StabilityConfig,
};

type Outcome = Result<(bool, String), String>;

fn unit(n: usize) -> Grid {
    build_grid(2, n, &[(0.0, 1.0); 2], &[-1.0, -1.0]).unwrap()
}

/// ρ = 1 + 0.2 exp(-|x - c|² / 0.15²), μ = λ = 1.
fn bump_medium(g: &Grid) -> MaterialModel {
    MaterialModel::from_fn(g, |x| {
        let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
        (1.0 + 0.2 * (-r2 / 0.15f64.powi(2)).exp(), 1.0, 1.0)
    })
}

/// The n = 48 measurement shared by AC2, AC3, AC7 and AC10.
struct Shared {
    g: Grid,
    m: MaterialModel,
    solver: ElasticSolver,
    lame: ElasticSolver,
    basis: BoundaryBasis,
    data: BoundaryData,
}

fn measure_shared() -> Shared {
    let g = unit(48);
    let m = bump_medium(&g);
    let solver = ElasticSolver::new(&m, &g).unwrap();
    let mut time = solver.time_grid(1.0);
    if time.steps % 2 == 1 {
        time = TimeGrid::new(1.0, 1.0 / (time.steps + 1) as f64).unwrap();
    }
    let basis = BoundaryBasis::new(&g, TemporalAtoms::new(time, 10, 0.2).unwrap());
    let data = BoundaryData::measure(&solver, &basis, Regularization::Truncated { threshold: 1e-6 }).unwrap();
    let lame = ElasticSolver::new(&m.with_rho(vec![1.0; g.len()]), &g).unwrap();
    Shared { g, m, solver, lame, basis, data }
}

fn drift(n: usize, halve: bool) -> f64 {
    let g = unit(n);
    let m = bump_medium(&g);
    let s = ElasticSolver::new(&m, &g).unwrap();
    let base = s.time_grid(1.0);
    let time = if halve { TimeGrid::new(1.0, base.dt / 2.0).unwrap() } else { base };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u0 = random_interior_field(&g, &mut rng, 3);
    let v0 = random_interior_field(&g, &mut rng, 3);
    let traj = s.solve_initial_value(&u0, &v0, time, Storage::All).unwrap();
    energy_with(&s, &traj).unwrap().max_relative_drift()
}

fn ac1() -> Outcome {
    let a = drift(64, false);
    let b = drift(64, true);
    let ratio = a / b;
    Ok((a <= 1e-3 && ratio >= 3.0, format!("drift {a:.3e}, halved dt {b:.3e}, reduction x{ratio:.2}")))
}

/// Grid-independent smooth Dirichlet data for the refinement study.
fn smooth_source(g: &Grid, time: TimeGrid, centre: f64, shape: impl Fn(&Point) -> [f64; 2]) -> SpaceTimeBoundaryField {
    SpaceTimeBoundaryField::from_fn(g, time, |t, x, _| {
        let a = bump((t - centre) / 0.25);
        let s = shape(x);
        [a * s[0], a * s[1], 0.0]
    })
}

fn ac2(sh: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let nb = sh.basis.len();
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let (i, j) = (rng.gen_range(0..nb), rng.gen_range(0..nb));
        let oracle = blagoveshchenskii_oracle(&sh.solver, &sh.basis.element(i), &sh.basis.element(j), sh.basis.time())
            .map_err(|e| e.to_string())?;
        let got = sh.data.connecting.matrix().get(i, j);
        worst = worst.max((got - oracle).abs() / oracle.abs());
    }
    // refinement: the pairing of fixed smooth sources on n = 25, 49, 97
    let mut values = Vec::new();
    for n in [25, 49, 97] {
        let g = unit(n);
        let m = bump_medium(&g);
        let s = ElasticSolver::new(&m, &g).unwrap();
        let time = s.time_grid(1.0);
        let f = smooth_source(&g, time, 0.4, |x| [(PI * x[0]).cos() * x[1], (PI * x[1]).sin()]);
        let h = smooth_source(&g, time, 0.6, |x| [x[0] * x[1], (PI * x[0]).cos()]);
        values.push(blagoveshchenskii_pairing(&s, &f, &h, time).map_err(|e| e.to_string())?);
    }
    let order = ((values[0] - values[1]).abs() / (values[1] - values[2]).abs()).log2();
    Ok((
        worst <= 0.05 && order >= 1.0,
        format!("worst relative error {worst:.2e} over 5 pairs, pairing convergence order {order:.2}"),
    ))
}

fn ac3(sh: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for xi in [[0.0, 0.0], [2.0 * PI, 0.0]] {
        let p = make_probe(&xi, &sh.g, &sh.m).and_then(|p| p.with_consistent_traces(&sh.lame)).map_err(|e| e.to_string())?;
        let k = sh.data.k.apply(&p.traces_phi).map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let i = rng.gen_range(0..sh.basis.len());
            let oracle = k_identity_oracle(&sh.solver, &sh.basis.element(i), &p.phi, sh.basis.time()).map_err(|e| e.to_string())?;
            worst = worst.max((k[i] - oracle).norm() / oracle.norm());
        }
    }
    Ok((worst <= 0.05, format!("worst relative error {worst:.2e} over |xi| in {{0, 2pi}}")))
}

fn ac4() -> Outcome {
    let mut cond = 0.0f64;
    let mut res = Vec::new();
    let ns = [32, 64, 128];
    for n in ns {
        let g = unit(n);
        let m = MaterialModel::from_fn(&g, |x| (1.0 + 0.3 * x[0], 1.0, 0.5 + 0.2 * x[1]));
        for xi in [[2.0 * PI, 0.0], [PI, -PI]] {
            let p = make_probe(&xi, &g, &m).map_err(|e| e.to_string())?;
            cond = cond.max(certify_condition(&p, &m, &g).map_err(|e| e.to_string())?);
        }
        let p = make_probe(&[2.0 * PI, 0.0], &g, &m).map_err(|e| e.to_string())?;
        res.push(elastostatic_residual(&p, &m, &g).map_err(|e| e.to_string())?);
    }
    // least-squares slope of ln r against ln h
    let x: Vec<f64> = ns.iter().map(|&n| (1.0 / (n - 1) as f64).ln()).collect();
    let y: Vec<f64> = res.iter().map(|r| r.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / 3.0, y.iter().sum::<f64>() / 3.0);
    let order = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    Ok((
        cond <= 1e-12 && (1.7..=2.3).contains(&order),
        format!("condition residual {cond:.1e}, elastostatic residuals {res:?}, order {order:.3}"),
    ))
}

fn ac5() -> Outcome {
    let w = |t: f64, x: &Point| [t.sin() * (PI * x[0]).sin(), 0.0, 0.0];
    let mut defects = Vec::new();
    let mut gap = f64::INFINITY;
    for n in [65, 129] {
        let g = unit(n);
        let m = MaterialModel::from_fn(&g, |x| (1.0 + 0.1 * x[0], 1.0 + 0.2 * x[1], 0.5 + 0.1 * x[0] * x[1]));
        let cfg = carleman::constants(&m, &g, 0.5, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
        let r = carleman_decomposition(&w, 0.7, &m, &g, &cfg).map_err(|e| e.to_string())?;
        defects.push(r.defect);
        gap = gap.min(r.min_square_gap);
    }
    let order = (defects[0] / defects[1]).log2();
    Ok((
        (1.7..=2.3).contains(&order) && gap >= -1e-12,
        format!("defects {defects:?}, order {order:.3}, min square gap {gap:.3e}"),
    ))
}

fn ac6() -> Outcome {
    let g = unit(17);
    let m = MaterialModel::constant(&g, 1.0, 1.0, 0.0);
    let cfg = carleman::constants(&m, &g, 0.5, 1.0, 1.0, 1.0).map_err(|e| e.to_string())?;
    let k = cfg.constants;
    let exact = (k.c0, k.c1, k.c2, k.c3, k.t_min) == (1.0, 4.0, 16.0, 2.0, 64.0);
    let gam = gamma_region(&g);
    let mask_ok = g.boundary().iter().enumerate().all(|(b, bn)| {
        let x = g.coords(bn.node);
        gam.mask[b] == (x[0] == 1.0 || x[1] == 1.0)
    });
    // faces: 1 = right (x₁ = 1), 3 = top (x₂ = 1)
    let faces_ok = gam.faces == vec![1, 3] && gam.flagged.is_empty();
    Ok((
        exact && mask_ok && faces_ok,
        format!("C0={} C1={} C2={} C3={} Tmin={}, gamma faces {:?}", k.c0, k.c1, k.c2, k.c3, k.t_min, gam.faces),
    ))
}

fn ac7(sh: &Shared) -> Outcome {
    let xis = frequency_lattice(&sh.g, 2.0 * PI).map_err(|e| e.to_string())?;
    let samples = sh
        .data
        .sample_all(&sh.lame, &xis, &sh.data.inverse, TraceMode::Consistent, Some(&sh.m.rho))
        .map_err(|e| e.to_string())?;
    let mut r = reconstruct_density(&samples, 2.0 * PI, &sh.g).map_err(|e| e.to_string())?;
    r.compare_with(&sh.g, &sh.m.rho).map_err(|e| e.to_string())?;
    let se = r.metrics.max_sample_error.unwrap();
    let l2 = r.metrics.l2_error.unwrap();
    Ok((
        se <= 0.10 && l2 <= 0.20,
        format!("{} samples, max sample error {se:.4}, band-limited L2 error {l2:.4}, rank {}", samples.len(), sh.data.inverse.rank),
    ))
}

struct Stab {
    exp: PerturbationExperiment,
    g: Grid,
    run: elastobcm::stability::PerturbationRun,
    set: elastobcm::stability::MeasuredSet,
}

fn stability_run() -> Stab {
    let g = unit(16);
    let base = MaterialModel::constant(&g, 1.0, 1.0, 1.0);
    let direction = (0..g.len())
        .map(|a| {
            let x = g.coords(a);
            bump(((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt() / 0.3)
        })
        .collect();
    let exp = PerturbationExperiment { base, direction, epsilons: vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7] };
    let cfg = StabilityConfig {
        horizon: 1.0,
        atoms: 6,
        width: 0.25,
        regularization: Regularization::Tikhonov { alpha: 1e-6 },
        trace_mode: TraceMode::Consistent,
        xis: vec![vec![0.0, 0.0], vec![2.0 * PI, 0.0], vec![PI, PI]],
        norm: NormOptions::default(),
    };
    let (run, set) = exp.run_measured(&g, &cfg).unwrap();
    Stab { exp, g, run, set }
}

fn ac8(st: &Stab) -> Outcome {
    let rep = lipschitz_report(&st.run).map_err(|e| e.to_string())?;
    let slopes: Vec<f64> = rep.rows.iter().map(|r| r.slope).collect();
    let ok = rep.decades >= 3.0 && slopes.iter().all(|s| (0.8..=1.2).contains(s));
    Ok((ok, format!("{:.1} decades, slopes {slopes:.4?}", rep.decades)))
}

fn ac9(st: &Stab) -> Outcome {
    let rep = log_stability_report(&st.exp, &st.run, &st.g, |eps, xis| {
        let i = st.exp.epsilons.iter().position(|e| *e == eps).unwrap();
        st.set.sample_diff(i + 1, xis)
    })
    .map_err(|e| e.to_string())?;
    let r = st.run.radius;
    let exact = rep.rows.iter().all(|row| {
        let gamma = -row.e.ln() / (4.0 * r + 1.0);
        let out = row.e >= (-8.0 * r - 2.0).exp();
        gamma == row.gamma && out == row.out_of_regime && row.bound_term == row.e.ln().powi(-2)
    });
    let in_regime = rep.rows.iter().filter(|r| !r.out_of_regime).count();
    Ok((
        rep.monotone && exact,
        format!("monotone {}, gamma and threshold exact {exact}, {in_regime} of {} in regime", rep.monotone, rep.rows.len()),
    ))
}

fn ac10(sh: &Shared) -> Outcome {
    let asym = sh.data.connecting.asymmetry;
    let defect = sh.data.inverse.projection_defect(sh.data.connecting.matrix());
    let p = make_probe(&[2.0 * PI, 0.0], &sh.g, &sh.m).and_then(|p| p.with_consistent_traces(&sh.lame)).map_err(|e| e.to_string())?;
    let base = sh.data.sample(&p, &sh.data.inverse).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for c in [Complex64::new(3.0, 0.0), Complex64::new(0.2, -1.7), Complex64::new(0.0, 1e-3)] {
        let q = p.rescaled(c);
        let kp = sh.data.k.apply(&q.traces_phi).map_err(|e| e.to_string())?;
        let ks = sh.data.k.apply(&q.traces_psi).map_err(|e| e.to_string())?;
        let v = fourier_sample(&sh.data.inverse, &kp, &ks, &q.iota).map_err(|e| e.to_string())?;
        worst = worst.max((v - base).norm() / base.norm());
    }
    Ok((
        asym <= 1e-6 && defect <= 1e-8 && worst <= 1e-12,
        format!("symmetry defect {asym:.2e}, projection defect {defect:.2e}, rescaling change {worst:.2e}"),
    ))
}

fn report(name: &str, start: Instant, outcome: Outcome) -> bool {
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok((pass, detail)) => {
            println!("{name} {} [{secs:.1}s] {detail}", if pass { "PASS" } else { "FAIL" });
            pass
        }
        Err(e) => {
            println!("{name} FAIL [{secs:.1}s] error: {e}");
            false
        }
    }
}

fn main() -> ExitCode {
    let mut ok = true;
    let t = Instant::now();
    ok &= report("AC1", t, ac1());
    let t = Instant::now();
    let shared = measure_shared();
    println!("     shared n=48 measurement: {} basis elements [{:.1}s]", shared.basis.len(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    ok &= report("AC2", t, ac2(&shared));
    let t = Instant::now();
    ok &= report("AC3", t, ac3(&shared));
    let t = Instant::now();
    ok &= report("AC4", t, ac4());
    let t = Instant::now();
    ok &= report("AC5", t, ac5());
    let t = Instant::now();
    ok &= report("AC6", t, ac6());
    let t = Instant::now();
    ok &= report("AC7", t, ac7(&shared));
    let t = Instant::now();
    let stab = stability_run();
    println!("     stability sweep: {} epsilons [{:.1}s]", stab.exp.epsilons.len(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    ok &= report("AC8", t, ac8(&stab));
    let t = Instant::now();
    ok &= report("AC9", t, ac9(&stab));
    let t = Instant::now();
    ok &= report("AC10", t, ac10(&shared));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
