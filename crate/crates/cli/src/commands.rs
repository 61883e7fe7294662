//! One function per subcommand; each returns whether its checks passed.

use std::path::Path;

use anyhow::{bail, Context, Result};
use elastobcm::boundary::{
    assemble_dtn, blagoveshchenskii_oracle, k_identity_oracle, BoundaryBasis, Horizon, TemporalAtoms,
};
use elastobcm::carleman::{self, carleman_decomposition, empirical_observability, gamma_region, random_interior_field};
use elastobcm::cgo::{certify_condition, elastostatic_residual, make_probe};
use elastobcm::forward::{energy_with, ElasticSolver, Storage, TimeGrid};
use elastobcm::io::{write_operator_file, write_snapshot_files};
use elastobcm::material::{validate_material, write_field_csv, MaterialModel};
use elastobcm::mesh::{Grid, Point};
use elastobcm::reconstruction::{frequency_lattice, reconstruct_density, BoundaryData, TraceMode};
use elastobcm::stability::{lipschitz_report, log_stability_report, PerturbationExperiment, StabilityConfig};
use elastobcm::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::output::{f, header, indexed, opt, Output};

struct Setup {
    grid: Grid,
    material: MaterialModel,
    solver: ElasticSolver,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup> {
    let grid = cfg.grid()?;
    let material = cfg.material(&grid)?;
    let report = validate_material(&material, &grid)?;
    if let Some(v) = report.violations.first() {
        return Err(Error::Config(format!(
            "material violates {:?} at node {} (value {}), {} violations in total",
            v.constraint,
            v.node,
            v.value,
            report.violations.len()
        ))
        .into());
    }
    let solver = ElasticSolver::new(&material, &grid)?.with_cfl(cfg.time.cfl);
    Ok(Setup { grid, material, solver })
}

fn basis(cfg: &ExperimentConfig, s: &Setup) -> Result<BoundaryBasis> {
    let time = s.solver.time_grid(cfg.time.horizon);
    Ok(BoundaryBasis::new(&s.grid, TemporalAtoms::new(time, cfg.basis.atoms, cfg.basis.width)?))
}

/// Solver that knows only μ and λ: the density is set to one.
fn lame_solver(s: &Setup) -> Result<ElasticSolver> {
    let m = s.material.with_rho(vec![1.0; s.grid.len()]);
    Ok(ElasticSolver::new(&m, &s.grid)?)
}

pub fn forward(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let d = s.grid.dim();
    let time = s.solver.time_grid(cfg.time.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u0 = random_interior_field(&s.grid, &mut rng, cfg.forward.modes);
    let v0 = random_interior_field(&s.grid, &mut rng, cfg.forward.modes);
    let traj = s.solver.solve_initial_value(&u0, &v0, time, Storage::All)?;
    let e = energy_with(&s.solver, &traj)?;
    let drift = e.max_relative_drift();
    let e0 = e.values[0];
    out.csv(
        "energy.csv",
        &header(&["t", "energy", "relative_drift"]),
        e.times.iter().zip(&e.values).map(|(t, v)| vec![f(*t), f(*v), f((v - e0).abs() / e0)]),
    )?;
    if cfg.forward.snapshots {
        write_snapshot_files(&traj, &s.grid, &out.path("snapshots.bin"))?;
        out.note("snapshots.bin")?;
    }
    out.json(
        "forward.json",
        &json!({ "dim": d, "n": s.grid.n(), "dt": time.dt, "steps": time.steps, "max_relative_drift": drift }),
    )?;
    println!("energy drift {drift:e} over {} steps", time.steps);
    Ok(true)
}

pub fn dtn(cfg: &ExperimentConfig, out: &mut Output, dump: Option<&Path>) -> Result<bool> {
    let s = setup(cfg)?;
    let basis = basis(cfg, &s)?;
    let op = assemble_dtn(&s.solver, &basis, Horizon::T)?;
    let ns = basis.spatial_len();
    let d = basis.dim();
    let time = op.time();
    let mut rows = Vec::with_capacity(ns);
    for src in 0..ns {
        // energy of the impulse response over all receivers
        let mut acc = 0.0;
        for r in 0..ns {
            let y = op.series(src, r);
            acc += (0..y.len()).map(|n| time.weight(n) * y[n] * y[n]).sum::<f64>();
        }
        rows.push(vec![(src / d).to_string(), (src % d).to_string(), f(acc.sqrt())]);
    }
    out.csv("dtn_sources.csv", &header(&["boundary_node", "direction", "response_norm"]), rows)?;
    if let Some(path) = dump {
        let dense = op.to_dense()?;
        write_operator_file(&dense, Some(&basis), path)
            .with_context(|| format!("cannot write {}", path.display()))?;
        out.log(&format!("dumped operator to {}", path.display()))?;
    }
    out.json(
        "dtn.json",
        &json!({
            "basis_size": basis.len(),
            "spatial_sources": ns,
            "atoms": basis.atoms(),
            "dt": time.dt,
            "steps": time.steps,
        }),
    )?;
    println!("assembled DtN for {} basis elements", basis.len());
    Ok(true)
}

pub fn probe(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let d = s.grid.dim();
    let xis = frequency_lattice(&s.grid, cfg.probe.gamma)?;
    let mut rows = Vec::new();
    let mut records = Vec::new();
    let mut worst = 0.0f64;
    for xi in &xis {
        let p = make_probe(xi, &s.grid, &s.material)?;
        let cond = certify_condition(&p, &s.material, &s.grid)?;
        let res = elastostatic_residual(&p, &s.material, &s.grid)?;
        worst = worst.max(cond);
        let mut row: Vec<String> = p.xi.iter().chain(&p.eta).map(|v| f(*v)).collect();
        row.extend(p.iota.iter().flat_map(|z| [f(z.re), f(z.im)]));
        row.extend([f(cond), f(res)]);
        rows.push(row);
        records.push(p.record());
    }
    let mut cols = indexed("xi", d);
    cols.extend(indexed("eta", d));
    for i in 1..=d {
        cols.push(format!("iota_{i}_re"));
        cols.push(format!("iota_{i}_im"));
    }
    cols.extend(header(&["condition_residual", "elastostatic_residual"]));
    out.csv("probes.csv", &cols, rows)?;
    out.json("probes.json", &json!({ "gamma": cfg.probe.gamma, "probes": records, "max_condition_residual": worst }))?;
    println!("{} probes, max condition residual {worst:e}", xis.len());
    Ok(worst <= 1e-12)
}

pub fn reconstruct(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let d = s.grid.dim();
    // fail on the lattice bound before any forward solve
    let xis = frequency_lattice(&s.grid, cfg.probe.gamma)?;
    let basis = basis(cfg, &s)?;
    let data = BoundaryData::measure(&s.solver, &basis, cfg.regularization.method())?;
    out.log(&format!("measured basis of {} elements, rank {}", basis.len(), data.inverse.rank))?;
    let lame = lame_solver(&s)?;
    let samples = data.sample_all(&lame, &xis, &data.inverse, cfg.probe.trace_mode, Some(&s.material.rho))?;
    let mut result = reconstruct_density(&samples, cfg.probe.gamma, &s.grid)?;
    result.compare_with(&s.grid, &s.material.rho)?;
    let mut cols = indexed("xi", d);
    cols.extend(header(&["re", "im", "oracle_re", "oracle_im"]));
    out.csv(
        "samples.csv",
        &cols,
        samples.iter().map(|smp| {
            let mut r: Vec<String> = smp.xi.iter().map(|v| f(*v)).collect();
            r.extend([f(smp.value.re), f(smp.value.im), opt(smp.oracle.map(|o| o.re)), opt(smp.oracle.map(|o| o.im))]);
            r
        }),
    )?;
    let mut buf = Vec::new();
    write_field_csv(&s.grid, &result.rho_rec, &mut buf)?;
    write_with_sidecar(out, "rho_rec.csv", &buf)?;
    out.json(
        "metrics.json",
        &json!({
            "gamma": cfg.probe.gamma,
            "samples": samples.len(),
            "basis_size": basis.len(),
            "rank": data.inverse.rank,
            "asymmetry": data.connecting.asymmetry,
            "symmetrized": result.symmetrized,
            "metrics": result.metrics,
        }),
    )?;
    println!(
        "{} samples, max sample error {}, L2 error {}",
        samples.len(),
        opt(result.metrics.max_sample_error),
        opt(result.metrics.l2_error)
    );
    Ok(true)
}

/// Field CSVs come from the core writer; the sidecar is added here.
fn write_with_sidecar(out: &mut Output, name: &str, bytes: &[u8]) -> Result<()> {
    let text = std::str::from_utf8(bytes)?;
    let mut lines = text.lines();
    let cols: Vec<String> = lines.next().unwrap_or_default().split(',').map(String::from).collect();
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    out.csv(name, &cols, rows)
}

pub fn observability(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let gamma = gamma_region(&s.grid);
    let c = &cfg.carleman;
    let stats = empirical_observability(&s.material, &s.grid, &gamma, cfg.time.horizon, c.ensemble, cfg.seed)?;
    out.csv(
        "observability.csv",
        &header(&["sample", "ratio"]),
        stats.ratios.iter().enumerate().map(|(i, r)| vec![i.to_string(), opt(*r)]),
    )?;
    out.json("observability.json", &json!({ "gamma": gamma, "stats": stats }))?;
    println!("max ratio {}, median {}, {} unobservable", stats.max, stats.median, stats.unobservable);
    Ok(true)
}

#[derive(Serialize)]
struct DefectRow {
    n: usize,
    defect: f64,
    min_square_gap: f64,
}

/// The manufactured displacement used by the defect checks.
fn manufactured(t: f64, x: &Point) -> Point {
    let pi = std::f64::consts::PI;
    [t.sin() * (pi * x[0]).sin(), 0.0, 0.0]
}

fn refined(cfg: &ExperimentConfig, n: usize) -> Result<(Grid, MaterialModel)> {
    let mut c = cfg.clone();
    c.grid.n = n;
    let g = c.grid()?;
    let m = c.material(&g)?;
    Ok((g, m))
}

/// Defects at `4(n-1)+1` and `8(n-1)+1` nodes per axis, and the observed order.
fn defect_refinement(cfg: &ExperimentConfig) -> Result<(Vec<DefectRow>, f64)> {
    let c = &cfg.carleman;
    let n = cfg.grid.n;
    let mut rows = Vec::new();
    for k in [4, 8] {
        let (g, m) = refined(cfg, k * (n - 1) + 1)?;
        let cc = carleman::constants(&m, &g, c.tau, c.c0, c.c1, c.rho2)?;
        let r = carleman_decomposition(&manufactured, c.t_eval, &m, &g, &cc)?;
        rows.push(DefectRow { n: g.n(), defect: r.defect, min_square_gap: r.min_square_gap });
    }
    let order = (rows[0].defect / rows[1].defect).log2();
    Ok((rows, order))
}

pub fn carleman_check(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let c = &cfg.carleman;
    let cc = carleman::constants(&s.material, &s.grid, c.tau, c.c0, c.c1, c.rho2)?;
    let gamma = gamma_region(&s.grid);
    let rho = carleman::check_rho_condition(&s.material, &s.grid, c.rho2)?;
    let prefactor = cc.prefactor(cfg.time.horizon).ok();
    let (rows, order) = defect_refinement(cfg)?;
    let gap_ok = rows.iter().all(|r| r.min_square_gap >= -1e-12);
    out.csv(
        "carleman_defect.csv",
        &header(&["n", "defect", "min_square_gap"]),
        rows.iter().map(|r| vec![r.n.to_string(), f(r.defect), f(r.min_square_gap)]),
    )?;
    out.json(
        "carleman.json",
        &json!({
            "constants": cc.constants,
            "script_c": cc.script_c,
            "max_grad_l": cc.max_grad_l,
            "tau": cc.tau,
            "gamma": gamma,
            "rho_condition": rho,
            "horizon": cfg.time.horizon,
            "prefactor": prefactor,
            "defect_order": order,
        }),
    )?;
    let k = cc.constants;
    println!("C0={} C1={} C2={} C3={} Tmin={}; defect order {order:.3}", k.c0, k.c1, k.c2, k.c3, k.t_min);
    Ok(gap_ok)
}

pub fn stability(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let st = &cfg.stability;
    for xi in &st.xis {
        if xi.len() != s.grid.dim() {
            bail!(Error::Config(format!("stability.xis entries need {} components", s.grid.dim())));
        }
    }
    let exp = PerturbationExperiment {
        base: s.material.clone(),
        direction: cfg.perturbation(&s.grid)?,
        epsilons: st.epsilons.clone(),
    };
    let scfg = StabilityConfig {
        horizon: cfg.time.horizon,
        atoms: cfg.basis.atoms,
        width: cfg.basis.width,
        regularization: elastobcm::reconstruction::Regularization::Tikhonov { alpha: st.alpha },
        trace_mode: cfg.probe.trace_mode,
        xis: st.xis.clone(),
        norm: Default::default(),
    };
    let (run, set) = exp.run_measured(&s.grid, &scfg)?;
    let lip = lipschitz_report(&run)?;
    let log = log_stability_report(&exp, &run, &s.grid, |eps, xis| {
        let i = exp.epsilons.iter().position(|e| *e == eps).unwrap();
        set.sample_diff(i + 1, xis)
    })?;
    out.csv(
        "stability.csv",
        &header(&["epsilon", "E", "L2diff", "gamma", "bound_term"]),
        log.rows.iter().map(|r| vec![f(r.epsilon), f(r.e), f(r.l2_diff), f(r.gamma), f(r.bound_term)]),
    )?;
    let d = s.grid.dim();
    let mut cols = indexed("xi", d);
    cols.extend(header(&["epsilon", "E", "abs_diff", "ratio"]));
    let mut rows = Vec::new();
    for row in &lip.rows {
        for (rec, ratio) in run.records.iter().zip(&row.ratios) {
            let k = rec.fourier_diff.iter().position(|p| p.xi == row.xi).unwrap();
            let mut r: Vec<String> = row.xi.iter().map(|v| f(*v)).collect();
            r.extend([f(rec.epsilon), f(rec.distance.total), f(rec.fourier_diff[k].value.norm()), f(*ratio)]);
            rows.push(r);
        }
    }
    out.csv("lipschitz.csv", &cols, rows)?;
    out.json(
        "stability.json",
        &json!({
            "radius": run.radius,
            "decades": lip.decades,
            "slopes": lip.rows.iter().map(|r| json!({ "xi": r.xi, "slope": r.slope, "constant": r.constant })).collect::<Vec<_>>(),
            "monotone": log.monotone,
            "rows": log.rows,
            "distances": run.records.iter().map(|r| r.distance).collect::<Vec<_>>(),
        }),
    )?;
    for r in &lip.rows {
        println!("xi {:?}: slope {:.4}", r.xi, r.slope);
    }
    Ok(true)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    passed: bool,
    value: f64,
    threshold: String,
    detail: serde_json::Value,
}

pub fn verify(cfg: &ExperimentConfig, out: &mut Output) -> Result<bool> {
    let s = setup(cfg)?;
    let mut checks = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // energy drift, at a quarter of the usual step
    let time = TimeGrid::fitted(cfg.time.horizon, 0.25 * s.solver.max_dt());
    let u0 = random_interior_field(&s.grid, &mut rng, cfg.forward.modes);
    let v0 = random_interior_field(&s.grid, &mut rng, cfg.forward.modes);
    let traj = s.solver.solve_initial_value(&u0, &v0, time, Storage::All)?;
    let drift = energy_with(&s.solver, &traj)?.max_relative_drift();
    checks.push(Check { name: "energy_drift", passed: drift <= 1e-3, value: drift, threshold: "<= 1e-3".into(), detail: json!({ "steps": time.steps }) });

    // Blagoveščenskiĭ identity on random basis pairs
    let basis = basis(cfg, &s)?;
    let data = BoundaryData::measure(&s.solver, &basis, cfg.regularization.method())?;
    let mut worst = 0.0f64;
    let mut pairs = Vec::new();
    for _ in 0..5 {
        let (i, j) = (rng.gen_range(0..basis.len()), rng.gen_range(0..basis.len()));
        let oracle = blagoveshchenskii_oracle(&s.solver, &basis.element(i), &basis.element(j), basis.time())?;
        let got = data.connecting.matrix().get(i, j);
        let rel = (got - oracle).abs() / oracle.abs();
        worst = worst.max(rel);
        pairs.push(json!({ "i": i, "j": j, "pairing": got, "oracle": oracle, "relative_error": rel }));
    }
    checks.push(Check { name: "blagoveshchenskii", passed: worst <= 0.05, value: worst, threshold: "<= 0.05".into(), detail: json!(pairs) });

    // 𝒦-identity and CGO residuals
    if s.material.mu_is_constant() {
        let lame = lame_solver(&s)?;
        let mut worst_k = 0.0f64;
        let mut worst_cond = 0.0f64;
        let mut rows = Vec::new();
        let two_pi = 2.0 * std::f64::consts::PI;
        let mut xi1 = vec![0.0; s.grid.dim()];
        xi1[0] = two_pi;
        for xi in [vec![0.0; s.grid.dim()], xi1] {
            let mut p = make_probe(&xi, &s.grid, &s.material)?;
            worst_cond = worst_cond.max(certify_condition(&p, &s.material, &s.grid)?);
            if cfg.probe.trace_mode == TraceMode::Consistent {
                p = p.with_consistent_traces(&lame)?;
            }
            let k = data.k.apply(&p.traces_phi)?;
            for _ in 0..3 {
                let i = rng.gen_range(0..basis.len());
                let oracle = k_identity_oracle(&s.solver, &basis.element(i), &p.phi, basis.time())?;
                let rel = (k[i] - oracle).norm() / oracle.norm();
                worst_k = worst_k.max(rel);
                rows.push(json!({ "xi": xi, "i": i, "relative_error": rel }));
            }
        }
        checks.push(Check { name: "k_identity", passed: worst_k <= 0.05, value: worst_k, threshold: "<= 0.05".into(), detail: json!(rows) });
        checks.push(Check { name: "cgo_condition", passed: worst_cond <= 1e-12, value: worst_cond, threshold: "<= 1e-12".into(), detail: json!(null) });
    } else {
        out.log("mu varies: k_identity and cgo_condition skipped")?;
    }

    // Carleman defect order and the square inequality
    let (rows, order) = defect_refinement(cfg)?;
    let gap = rows.iter().map(|r| r.min_square_gap).fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "carleman_defect_order",
        passed: (1.7..=2.3).contains(&order),
        value: order,
        threshold: "in [1.7, 2.3]".into(),
        detail: json!(rows),
    });
    checks.push(Check { name: "carleman_square_gap", passed: gap >= -1e-12, value: gap, threshold: ">= -1e-12".into(), detail: json!(null) });

    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        println!("{:<24} {} ({})", c.name, if c.passed { "pass" } else { "FAIL" }, c.value);
    }
    out.json("verify.json", &json!({ "passed": passed, "checks": checks }))?;
    Ok(passed)
}
