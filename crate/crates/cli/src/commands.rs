use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use infomesh::findim::{
    cramer_rao_check, cramer_rao_from_fisher, fisher_matrix, gauss_newton_fisher, jacobian_audit, posterior_exact,
    posterior_quadrature_oracle, random_linear_model, NonlinearModel, Route,
};
use infomesh::information::{info_density_pointwise, information_field, oed_scores};
use infomesh::io;
use infomesh::refinement::{refine_loop, Criterion, CycleResult, LoopConfig};
use infomesh::spectrum::count_above;
use infomesh::{Error, MeasurementSet, Result, ScalarField, Scenario, SyntheticData};

use crate::manifest::Manifest;
use crate::Command;

pub fn execute(cmd: &Command, scn: &Scenario) -> Result<PathBuf> {
    let root = PathBuf::from(&scn.output);
    let mut m = Manifest::new(&root);
    match cmd {
        Command::Forward => forward(scn, &mut m)?,
        Command::Synthesize => synthesize(scn, &mut m)?,
        Command::Invert => invert(scn, &mut m)?,
        Command::Info => info(scn, &mut m)?,
        Command::RefineLoop { criterion, cycles } => {
            adaptive(scn, &mut m, *criterion, cycles.unwrap_or(scn.cycles), false)?
        }
        Command::Spectrum { criterion, cycles } => {
            adaptive(scn, &mut m, *criterion, cycles.unwrap_or(scn.cycles), true)?
        }
        Command::FindimDemo => findim_demo(&mut m)?,
    }
    let path = m.write()?;
    log::info!("manifest written to {}", path.display());
    Ok(path)
}

fn run_record(cmd: &str, scn: &Scenario, synth: Option<&SyntheticData>) -> Value {
    let rings: Vec<Value> = scn.rings.iter().map(|r| json!([r.radius, r.count])).collect();
    let mut v = json!({
        "kind": "run",
        "command": cmd,
        "problem_peclet": scn.problem_peclet(),
        "diffusion": scn.diffusion,
        "wind": scn.wind,
        "beta": scn.beta,
        "detectors": scn.detector_count(),
        "rings": rings,
        "noise_fraction": scn.noise_fraction,
        "source": {
            "center": scn.source.center,
            "radius": scn.source.radius,
            "amplitude": scn.source.amplitude,
        },
        "background_cells": scn.workbench_grid().cells_per_side(),
        "truth_cells": scn.truth_cells,
        "initial_level": scn.initial_level,
        "seed": scn.seed,
    });
    if let Some(s) = synth {
        v["sigma"] = json!(s.sigma);
        v["max_u"] = json!(s.max_u);
    }
    v
}

fn truth_and_data(scn: &Scenario) -> Result<(ScalarField, SyntheticData)> {
    let truth = scn.solve_truth()?;
    let synth = scn.synthesize(&truth, scn.seed)?;
    Ok((truth, synth))
}

fn forward(scn: &Scenario, m: &mut Manifest) -> Result<()> {
    let (truth, synth) = truth_and_data(scn)?;
    m.record(run_record("forward", scn, Some(&synth)));
    let op = scn.operator(truth.grid())?;
    m.record(json!({
        "kind": "operator",
        "cells": truth.grid().cells_per_side(),
        "cell_peclet": op.cell_peclet(),
        "stability_warning": op.stability_warning(),
    }));
    io::write_vtk_point_data(&m.path("forward/truth.vtk"), truth.grid(), &[("u", truth.values())])?;
    m.artifact("forward/truth.vtk")?;
    Ok(())
}

fn write_measurements(m: &mut Manifest, rel: &str, synth: &SyntheticData) -> Result<()> {
    let rows: Vec<Vec<f64>> = synth
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| vec![i as f64, p[0], p[1], synth.clean[i], synth.values[i], synth.sigma])
        .collect();
    io::write_csv(&m.path(rel), &["index", "x", "y", "clean", "value", "sigma"], &rows)?;
    m.artifact(rel)
}

fn synthesize(scn: &Scenario, m: &mut Manifest) -> Result<()> {
    let (_, synth) = truth_and_data(scn)?;
    m.record(run_record("synthesize", scn, Some(&synth)));
    write_measurements(m, "measurements.csv", &synth)
}

fn invert(scn: &Scenario, m: &mut Manifest) -> Result<()> {
    let (_, synth) = truth_and_data(scn)?;
    m.record(run_record("invert", scn, Some(&synth)));
    let problem = scn.inverse_problem(synth.sigma, Some(synth.values.clone()))?;
    let mesh = scn.initial_mesh()?;
    let sys = problem.schur(&mesh)?;
    let rec = problem.reconstruct(&mesh, &sys)?;
    let grid = *problem.grid();

    let mut chi2 = 0.0;
    for (l, p) in synth.points.iter().enumerate() {
        let u = rec.state.evaluate(p[0], p[1]).expect("detector inside");
        chi2 += ((u - synth.values[l]) / synth.sigma).powi(2);
    }
    m.record(json!({
        "kind": "report",
        "leaves": mesh.len(),
        "max_q": rec.q.max(),
        "true_amplitude": scn.source.amplitude,
        "mean_chi2": chi2 / synth.points.len() as f64,
    }));

    io::write_mesh_csv(&m.path("invert/mesh.csv"), &mesh)?;
    m.artifact("invert/mesh.csv")?;
    io::write_leaf_csv(&m.path("invert/q.csv"), &[("q", rec.q.values())])?;
    m.artifact("invert/q.csv")?;
    io::write_vtk_cell_data(
        &m.path("invert/q.vtk"),
        &grid,
        &[("q", &io::leaf_values_to_cells(&mesh, rec.q.values()))],
    )?;
    m.artifact("invert/q.vtk")?;
    io::write_vtk_point_data(
        &m.path("invert/state.vtk"),
        &grid,
        &[("u", rec.state.values()), ("lambda", rec.adjoint.values())],
    )?;
    m.artifact("invert/state.vtk")?;
    write_measurements(m, "invert/measurements.csv", &synth)
}

fn info(scn: &Scenario, m: &mut Manifest) -> Result<()> {
    let (_, synth) = truth_and_data(scn)?;
    m.record(run_record("info", scn, Some(&synth)));
    // information never depends on the measured values
    let problem = scn.inverse_problem(synth.sigma, None)?;
    let mesh = scn.initial_mesh()?;
    let sys = problem.schur(&mesh)?;
    let field = information_field(&sys, &mesh)?;
    let qdiag: Vec<f64> = field.content.iter().map(|j| j * j).collect();
    let scores = oed_scores(&qdiag)?;
    m.record(json!({
        "kind": "scores",
        "detectors": "all",
        "information": scores.information,
        "trace": scores.trace,
    }));

    // per-ring scores on the same mesh
    let mut offset = 0;
    for ring in &scn.rings {
        let idx: Vec<usize> = (offset..offset + ring.count).collect();
        offset += ring.count;
        let pts = idx.iter().map(|&i| synth.points[i]).collect();
        let ms = MeasurementSet::new(pts, vec![synth.sigma; ring.count])?;
        let adj: Vec<ScalarField> = idx.iter().map(|&i| problem.adjoints[i].clone()).collect();
        let b = problem.coupling(&mesh)?;
        let sub = infomesh::assemble_schur(&adj, &b, &ms, scn.beta, &mesh)?;
        let s = oed_scores(&infomesh::fisher_diag(&sub))?;
        m.record(json!({
            "kind": "scores",
            "detectors": format!("ring r={:?}", ring.radius),
            "information": s.information,
            "trace": s.trace,
        }));
    }

    let pointwise = info_density_pointwise(
        &problem.adjoints,
        &problem.measurements,
        scn.beta,
        &mesh,
        problem.grid(),
    )?;
    io::write_mesh_csv(&m.path("info/mesh.csv"), &mesh)?;
    m.artifact("info/mesh.csv")?;
    io::write_leaf_csv(
        &m.path("info/information.csv"),
        &[("content", &field.content), ("density", &field.density)],
    )?;
    m.artifact("info/information.csv")?;
    io::write_vtk_cell_data(
        &m.path("info/density.vtk"),
        problem.grid(),
        &[
            ("density", &io::leaf_values_to_cells(&mesh, &field.density)),
            ("pointwise_density", pointwise.values()),
        ],
    )?;
    m.artifact("info/density.vtk")?;
    Ok(())
}

fn write_cycle(m: &mut Manifest, dir: &str, c: &CycleResult, grid: &infomesh::UniformGrid) -> Result<()> {
    let rel = |f: &str| format!("{dir}/{f}");
    io::write_mesh_csv(&m.path(&rel("mesh.csv")), &c.mesh)?;
    m.artifact(&rel("mesh.csv"))?;
    io::write_leaf_csv(
        &m.path(&rel("info.csv")),
        &[("content", &c.info.content), ("density", &c.info.density)],
    )?;
    m.artifact(&rel("info.csv"))?;
    io::write_leaf_csv(&m.path(&rel("indicators.csv")), &[("eta", &c.indicators.values)])?;
    m.artifact(&rel("indicators.csv"))?;
    let level: Vec<f64> = c.mesh.leaves().iter().map(|l| l.level as f64).collect();
    let mut cells = vec![
        ("level", io::leaf_values_to_cells(&c.mesh, &level)),
        ("density", io::leaf_values_to_cells(&c.mesh, &c.info.density)),
        ("indicator", io::leaf_values_to_cells(&c.mesh, &c.indicators.values)),
    ];
    if let Some(r) = &c.reconstruction {
        io::write_leaf_csv(&m.path(&rel("q.csv")), &[("q", r.q.values())])?;
        m.artifact(&rel("q.csv"))?;
        cells.push(("q", io::leaf_values_to_cells(&c.mesh, r.q.values())));
    }
    let fields: Vec<(&str, &[f64])> = cells.iter().map(|(n, v)| (*n, v.as_slice())).collect();
    io::write_vtk_cell_data(&m.path(&rel("fields.vtk")), grid, &fields)?;
    m.artifact(&rel("fields.vtk"))?;
    if let Some(s) = &c.spectrum {
        io::write_spectrum_csv(&m.path(&rel("spectrum.csv")), s)?;
        m.artifact(&rel("spectrum.csv"))?;
    }
    Ok(())
}

fn adaptive(scn: &Scenario, m: &mut Manifest, criterion: Criterion, cycles: usize, spectra: bool) -> Result<()> {
    let (_, synth) = truth_and_data(scn)?;
    let cmd = if spectra { "spectrum" } else { "refine-loop" };
    let mut run = run_record(cmd, scn, Some(&synth));
    run["criterion"] = json!(criterion.name());
    run["cycles"] = json!(cycles);
    m.record(run);
    let problem = scn.inverse_problem(synth.sigma, Some(synth.values.clone()))?;
    let cfg = LoopConfig {
        fraction: scn.fraction,
        spectrum_limit: if spectra { scn.spectrum_limit } else { 0 },
        ..LoopConfig::new(criterion, cycles)
    };
    let results = refine_loop(&problem, scn.initial_mesh()?, &cfg)?;
    let base = format!("{cmd}-{}", criterion.name());
    for c in &results {
        let mut rec = json!({
            "kind": "cycle",
            "criterion": criterion.name(),
            "cycle": c.cycle,
            "leaves": c.mesh.len(),
            "marked": c.marked.len(),
            "mirror_symmetric": c.mesh.is_mirror_symmetric(),
        });
        if let Some(r) = &c.reconstruction {
            rec["max_q"] = json!(r.q.max());
        }
        if let Some(s) = &c.spectrum {
            let threshold = 10.0 * scn.beta * c.mesh.min_area();
            rec["spectrum_threshold"] = json!(threshold);
            rec["count_above"] = json!(count_above(s, threshold)?);
            rec["min_eigenvalue"] = json!(s.smallest());
            rec["max_eigenvalue"] = json!(s.largest());
        } else if spectra {
            rec["spectrum_skipped"] = json!(format!("more than {} leaves", scn.spectrum_limit));
        }
        m.record(rec);
        write_cycle(m, &format!("{base}/cycle-{}", c.cycle), c, problem.grid())?;
    }
    Ok(())
}

fn findim_demo(m: &mut Manifest) -> Result<()> {
    let mut report = String::new();
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool, detail: String, report: &mut String| {
        let _ = writeln!(report, "{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures.push(name.to_string());
        }
    };

    let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
    let cr = cramer_rao_from_fisher(&q)?;
    let _ = writeln!(report, "Cramer-Rao chain for Q = [[2, 1], [1, 2]]:\n{cr}");
    check(
        "two-by-two variance",
        (cr.variance[0] - 2.0 / 3.0).abs() <= 1e-14 && cr.bound[0] == 0.5,
        format!("var = {:.15}, bound = {}", cr.variance[0], cr.bound[0]),
        &mut report,
    );

    let mut min_slack = f64::INFINITY;
    let mut route_gap: f64 = 0.0;
    for i in 0..100u64 {
        let k = 2 + (i % 7) as usize;
        let model = random_linear_model(i, k + 2, k, k + 1);
        min_slack = min_slack.min(cramer_rao_check(&model)?.min_slack());
        let f = fisher_matrix(&model, Route::Forward)?;
        let a = fisher_matrix(&model, Route::Adjoint)?;
        route_gap = route_gap.max((f - &a).amax() / a.amax());
    }
    check(
        "Cramer-Rao on 100 random models",
        min_slack >= -1e-12,
        format!("min slack {min_slack:e}"),
        &mut report,
    );
    check(
        "forward vs adjoint route",
        route_gap <= 1e-12,
        format!("max relative gap {route_gap:e}"),
        &mut report,
    );

    let model = random_linear_model(7, 3, 2, 3);
    let exact = posterior_exact(&model)?;
    let z = DVector::from_vec(vec![0.3, -0.2, 0.5]);
    let mean = infomesh::findim::map_solve(&model, &z)?;
    let sd = [exact[(0, 0)].sqrt(), exact[(1, 1)].sqrt()];
    let bounds: Vec<(f64, f64)> = (0..2).map(|i| (mean[i] - 9.0 * sd[i], mean[i] + 9.0 * sd[i])).collect();
    let lp = |x: &[f64]| {
        -model
            .objective(&DVector::from_column_slice(x), &z)
            .unwrap_or(f64::INFINITY)
    };
    let quad = posterior_quadrature_oracle(lp, &bounds, 600)?;
    let gap = (&quad.covariance - &exact).amax();
    check(
        "quadrature posterior vs exact covariance",
        gap <= 1e-6,
        format!("max gap {gap:e}"),
        &mut report,
    );

    let sigma = 0.01;
    let nl = NonlinearModel::new(
        Box::new(|x| x.map(|v| v * v * v + v)),
        Box::new(|x| DMatrix::from_diagonal(&x.map(|v| 3.0 * v * v + 1.0))),
        DMatrix::identity(1, 1),
        DVector::from_element(1, sigma),
        DMatrix::zeros(1, 1),
        0.0,
    )?;
    let q_star = DVector::from_element(1, 1.0);
    let audit = jacobian_audit(&nl, &q_star, 1e-5);
    check(
        "Jacobian audit",
        audit <= 1e-6,
        format!("max entry error {audit:e}"),
        &mut report,
    );
    let gn = gauss_newton_fisher(&nl, &q_star)?;
    let gn_sd = 1.0 / gn[(0, 0)].sqrt();
    let z = DVector::from_element(1, 2.0);
    let lp = |x: &[f64]| -nl.objective(&DVector::from_column_slice(x), &z);
    let quad = posterior_quadrature_oracle(lp, &[(1.0 - 12.0 * gn_sd, 1.0 + 12.0 * gn_sd)], 4000)?;
    let sd = quad.covariance[(0, 0)].sqrt();
    check(
        "nonlinear small-noise std",
        (sd / gn_sd - 1.0).abs() <= 0.2,
        format!("quadrature {sd:e}, Gauss-Newton {gn_sd:e}"),
        &mut report,
    );

    print!("{report}");
    let rel = "findim/report.txt";
    let path = m.path(rel);
    fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
    fs::write(&path, &report)?;
    m.record(json!({ "kind": "run", "command": "findim-demo", "failures": failures }));
    m.artifact(rel)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Check(failures.join(", ")))
    }
}
