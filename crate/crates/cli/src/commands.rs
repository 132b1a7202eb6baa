use nearfield_core::dtn::{exterior_diagonal, free_interior_diagonal};
use nearfield_core::emission::{regularization_path, EmissionConfig, Emitter, Regularization};
use nearfield_core::forward::{
    incident_coefficients, nearfield_direct, nearfield_factorized, scatter, scattering_ratios, solve_direct,
    NearFieldMatrix,
};
use nearfield_core::inversion::{fit_potential, recover_dtn, recover_middle, FitReport, PotentialTemplate, RecoveryConfig};
use nearfield_core::layer::{adjoint_residual, assemble_l, assemble_lstar, Discretization, KernelSign, SourceDensity};
use nearfield_core::scene::{validate_scene, RadialPotential, SceneFile, ValidationReport};
use nearfield_core::specfun::RadialTable;
use nearfield_core::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::fs;
use std::path::Path;

use crate::manifest::{pretty, OutputDir, RunManifest};
use crate::{Cli, Command, Failure, GlobalArgs};

/// Norm below which a near-field matrix counts as zero.
const ZERO_TOLERANCE: f64 = 1e-10;

pub fn run(cli: &Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate { scene } => simulate(g, scene),
        Command::Verify { scene } => verify(g, scene),
        Command::Synthesize { scene, phi, steps } => synthesize(g, scene, phi.as_deref(), *steps),
        Command::Recover {
            scene,
            nearfield,
            template,
            lrec,
            tau,
        } => recover(g, scene, nearfield, template, *lrec, *tau),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_scene(g: &GlobalArgs, path: &Path) -> Result<(SceneFile, Vec<u8>), Failure> {
    let bytes = read(path)?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut file = SceneFile::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if let Some(l) = g.lmax {
        file.scene.l_max = l;
    }
    Ok((file, bytes))
}

fn options_bytes(g: &GlobalArgs, extra: &str) -> Vec<u8> {
    format!("tol={:e};lmax={:?};seed={};{extra}", g.tol, g.lmax, g.seed).into_bytes()
}

fn validated(g: &GlobalArgs, file: &SceneFile) -> Result<ValidationReport, Failure> {
    let report = validate_scene(&file.scene, &file.potential)?;
    if !report.all_passed() {
        if !g.quiet {
            print!("{report}");
        }
        let names: Vec<String> = report.failures().map(|c| format!("{} ({})", c.name, c.detail)).collect();
        return Err(Failure::Validation(format!("scene validation failed: {}", names.join("; "))));
    }
    Ok(report)
}

fn emit(g: &GlobalArgs, report: &serde_json::Value, human: &str) {
    if g.json {
        print!("{}", pretty(report));
    } else if !g.quiet {
        print!("{human}");
    }
}

fn simulate(g: &GlobalArgs, scene_path: &Path) -> Result<(), Failure> {
    let (file, bytes) = load_scene(g, scene_path)?;
    let validation = validated(g, &file)?;
    let manifest = RunManifest::new("simulate", scene_path, &g.out, &[&bytes, &options_bytes(g, "")]);
    let out = OutputDir::create(&manifest, &g.out)?;

    let disc = Discretization::new(&file.scene)?;
    let mut direct = nearfield_direct(&disc, &file.potential)?;
    let mut factorized = nearfield_factorized(&disc, &file.potential)?;
    direct.metadata.manifest_hash = Some(out.manifest_hash.clone());
    factorized.metadata.manifest_hash = Some(out.manifest_hash.clone());
    out.write("nearfield_direct.json", &direct.to_json())?;
    out.write("nearfield_factorized.json", &factorized.to_json())?;

    let dn = direct.spectral_norm();
    let fnorm = factorized.spectral_norm();
    let both_zero = dn < ZERO_TOLERANCE && fnorm < ZERO_TOLERANCE;
    let rel = factorized.relative_difference(&direct)?;
    let passed = both_zero || rel < g.tol;
    let tail = solve_direct(&disc, &file.potential, &disc.random_density(g.seed))?.tail;
    let report = json!({
        "command": "simulate",
        "scene_hash": direct.metadata.scene_hash,
        "direct_norm": dn,
        "factorized_norm": fnorm,
        "relative_discrepancy": rel,
        "tolerance": g.tol,
        "both_zero": both_zero,
        "zero_tolerance": ZERO_TOLERANCE,
        "truncation_tail": tail,
        "passed": passed,
        "validation": validation,
    });
    out.write_json("simulate_report.json", report.clone())?;
    let mut human = format!(
        "direct ‖F_S‖ = {dn:.6e}\nfactorized ‖F_S‖ = {fnorm:.6e}\nrelative discrepancy = {rel:.3e} (tol {:.1e})\n",
        g.tol
    );
    if both_zero {
        human.push_str(&format!("both matrices are zero to tolerance {ZERO_TOLERANCE:.0e}\n"));
    }
    human.push_str(&format!("written to {}\n", g.out.display()));
    emit(g, &report, &human);
    if passed {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("factorized and direct F_S differ by {rel:.3e}")))
    }
}

#[derive(Debug, Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl Check {
    /// Passes when `value < tolerance`.
    fn below(name: &'static str, value: f64, tolerance: f64) -> Self {
        Self {
            name,
            value,
            tolerance,
            passed: value < tolerance,
        }
    }
}

fn verify(g: &GlobalArgs, scene_path: &Path) -> Result<(), Failure> {
    let (file, bytes) = load_scene(g, scene_path)?;
    validated(g, &file)?;
    let manifest = RunManifest::new("verify", scene_path, &g.out, &[&bytes, &options_bytes(g, "")]);
    let out = OutputDir::create(&manifest, &g.out)?;
    let cfg = &file.scene;
    let disc = Discretization::new(cfg)?;

    // specfun Wronskian j y' - j' y = 1/x² at ka and at the nearest source radius
    let mut wr: f64 = 0.0;
    for x in [cfg.k * cfg.a, cfg.k * (cfg.center_distance() - cfg.rho)] {
        let t = RadialTable::new(cfg.l_max, x)?;
        for l in 0..=cfg.l_max {
            wr = wr.max(((t.j[l] * t.dy[l] - t.dj[l] * t.y[l]) * x * x - 1.0).abs());
        }
    }

    // Im f^out = k / (x² |h|²) > 0
    let fout = exterior_diagonal(cfg.l_max, cfg.k, cfg.a)?;
    let t = RadialTable::new(cfg.l_max, cfg.k * cfg.a)?;
    let x = cfg.k * cfg.a;
    let mut im_err: f64 = 0.0;
    let mut im_min = f64::INFINITY;
    for l in 0..=cfg.l_max {
        let expect = cfg.k / (x * x * t.h(l).norm_sqr());
        im_min = im_min.min(fout.get(l).im);
        im_err = im_err.max((fout.get(l).im - expect).abs() / expect);
    }

    let l = assemble_l(&disc);
    let lstar = assemble_lstar(&disc);
    let adj = adjoint_residual(&l, &lstar, &disc.source_weights);

    let direct = nearfield_direct(&disc, &file.potential)?;
    let factorized = nearfield_factorized(&disc, &file.potential)?;
    let fact = factorized.relative_difference(&direct)?;
    let tail = solve_direct(&disc, &file.potential, &disc.random_density(g.seed))?.tail;

    let checks = vec![
        Check::below("wronskian", wr, 1e-10),
        Check {
            name: "im_fout_positive",
            value: im_min,
            tolerance: 0.0,
            passed: im_min > 0.0,
        },
        Check::below("im_fout_closed_form", im_err, 1e-10),
        Check::below("adjointness", adj, 1e-10),
        Check::below("factorization", fact, g.tol),
        Check::below("truncation_tail", tail, 1e-10),
    ];
    let all = checks.iter().all(|c| c.passed);
    let report = json!({ "command": "verify", "checks": checks, "passed": all });
    out.write_json("verify_report.json", report.clone())?;
    let mut human = String::new();
    for c in &checks {
        human.push_str(&format!(
            "{:<4} {:<22} {:>12.4e}  (tol {:.1e})\n",
            if c.passed { "ok" } else { "FAIL" },
            c.name,
            c.value,
            c.tolerance
        ));
    }
    emit(g, &report, &human);
    if all {
        Ok(())
    } else {
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        Err(Failure::Numerical(format!("failed checks: {}", failed.join(", "))))
    }
}

/// On-disk density: node values as `[re, im]` pairs.
#[derive(Debug, Serialize, Deserialize)]
pub struct DensityFile {
    pub values: Vec<[f64; 2]>,
}

fn load_density(path: &Path, disc: &Discretization) -> Result<SourceDensity, Failure> {
    let bytes = read(path)?;
    let doc: DensityFile =
        serde_json::from_slice(&bytes).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if doc.values.len() != disc.n_sources() {
        return Err(Failure::Usage(format!(
            "{}: {} values for {} source nodes",
            path.display(),
            doc.values.len(),
            disc.n_sources()
        )));
    }
    let values = doc.values.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
    Ok(disc.density(values)?)
}

fn synthesize(g: &GlobalArgs, scene_path: &Path, phi_path: Option<&Path>, steps: usize) -> Result<(), Failure> {
    let (file, bytes) = load_scene(g, scene_path)?;
    validated(g, &file)?;
    if steps == 0 {
        return Err(Failure::Usage("--steps must be positive".into()));
    }
    let phi_bytes = match phi_path {
        Some(p) => read(p)?,
        None => Vec::new(),
    };
    let manifest = RunManifest::new(
        "synthesize",
        scene_path,
        &g.out,
        &[&bytes, &phi_bytes, &options_bytes(g, &format!("steps={steps}"))],
    );
    let cfg = &file.scene;
    let disc = Discretization::new(cfg)?;
    let phi = match phi_path {
        Some(p) => load_density(p, &disc)?,
        None => disc.random_density(g.seed),
    };
    let mut ec = EmissionConfig::default_for(cfg);
    ec.regularization = Regularization::tikhonov_decades(steps);
    let emitter = Emitter::new(&disc, &ec)?;

    // the measurement: the scatterer's response to the emitted wave
    let tau = scattering_ratios(&file.potential, cfg.l_max, cfg.k, cfg.a)?;
    let respond = |density: &SourceDensity, sign: KernelSign| {
        let inc = incident_coefficients(cfg.k, cfg.l_max, &disc.source_points, &density.weights, &density.values, sign);
        scatter(cfg, &tau, inc, &disc.source_points).map(|s| s.on_sources)
    };
    let target = respond(&phi, KernelSign::Incoming)?;
    let path = regularization_path(&emitter, &phi, &target, |psi| respond(psi, KernelSign::Outgoing))?;

    let out = OutputDir::create(&manifest, &g.out)?;
    out.write_csv("synthesis_path.csv", &path.to_csv())?;
    let last = path.final_step().expect("non-empty path");
    let report = json!({
        "command": "synthesize",
        "shield": ec.shield,
        "l_shield": ec.l_shield,
        "target_norm_h32": path.target_norm,
        "final_residual_h32": last.residual_h32,
        "final_relative_residual": last.residual_h32 / path.target_norm.max(f64::MIN_POSITIVE),
        "final_nearfield_error": last.nearfield_error,
        "monotone": path.is_monotone(),
        "plateau_steps": path.steps.iter().filter(|s| s.plateau).map(|s| s.step).collect::<Vec<_>>(),
        "stability_constants": path.stability_constants(),
    });
    out.write_json("synthesis_report.json", report.clone())?;
    let mut human = path.to_csv();
    for s in path.steps.iter().filter(|s| s.plateau) {
        human.push_str(&format!("warning: residual plateau at step {} (numerical rank exhausted)\n", s.step));
    }
    emit(g, &report, &human);
    Ok(())
}

/// `value@radius[!],...` with `!` pinning the breakpoint.
pub fn parse_template(shells: &str) -> Result<PotentialTemplate, Failure> {
    let mut values = Vec::new();
    let mut breakpoints = Vec::new();
    let mut fixed = Vec::new();
    for part in shells.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (v, r) = part
            .split_once('@')
            .ok_or_else(|| Failure::Usage(format!("template shell '{part}' is not value@radius")))?;
        let pinned = r.ends_with('!');
        let r = r.trim_end_matches('!');
        let v: f64 = v.trim().parse().map_err(|_| Failure::Usage(format!("bad value in '{part}'")))?;
        let r: f64 = r.trim().parse().map_err(|_| Failure::Usage(format!("bad radius in '{part}'")))?;
        values.push(v);
        breakpoints.push(r);
        fixed.push(pinned.then_some(r));
    }
    if values.is_empty() || values.len() > 4 {
        return Err(Failure::Usage("template needs between 1 and 4 shells".into()));
    }
    let initial = RadialPotential::new(breakpoints, values)?;
    Ok(PotentialTemplate {
        initial,
        fixed_breakpoints: fixed,
    })
}

fn recover(g: &GlobalArgs, scene_path: &Path, nf_path: &Path, template: &str, lrec: usize, tau: f64) -> Result<(), Failure> {
    let (file, bytes) = load_scene(g, scene_path)?;
    let cfg = &file.scene;
    let nf_bytes = read(nf_path)?;
    let nf_text = String::from_utf8(nf_bytes.clone()).map_err(|e| Failure::Usage(format!("{}: {e}", nf_path.display())))?;
    let fs = NearFieldMatrix::from_json(&nf_text).map_err(|e| Failure::Usage(format!("{}: {e}", nf_path.display())))?;
    let tmpl = parse_template(template)?;
    let disc = Discretization::new(cfg)?;
    if fs.dim() != disc.n_sources() || fs.metadata.l_max != cfg.l_max || fs.metadata.k != cfg.k {
        return Err(Failure::Usage(format!(
            "{} was computed for a different discretization (n = {}, L_max = {}, k = {})",
            nf_path.display(),
            fs.dim(),
            fs.metadata.l_max,
            fs.metadata.k
        )));
    }
    let manifest = RunManifest::new(
        "recover",
        scene_path,
        &g.out,
        &[&bytes, &nf_bytes, &options_bytes(g, &format!("template={template};lrec={lrec};tau={tau:e}"))],
    );
    let out = OutputDir::create(&manifest, &g.out)?;

    let rc = RecoveryConfig {
        svd_threshold: tau,
        l_rec: lrec,
        ..RecoveryConfig::default()
    };
    let l = assemble_l(&disc);
    let lstar = assemble_lstar(&disc);
    let f0 = free_interior_diagonal(cfg.l_max, cfg.k, cfg.a)?;
    let fout = exterior_diagonal(cfg.l_max, cfg.k, cfg.a)?;
    let middle = recover_middle(&fs, &l, &lstar, &rc)?;
    let fn_rec = recover_dtn(&middle.degrees, &f0, &fout, lrec)?;
    let diag: serde_json::Value = serde_json::from_str(&fn_rec.to_json()).expect("diagonal json");
    out.write_json(
        "recovered_dtn.json",
        json!({
            "diagonal": diag,
            "trusted_degree": middle.trusted_degree,
            "fit_residual": middle.fit_residual,
            "block_norms": middle.block_norms,
        }),
    )?;

    let report: FitReport = fit_potential(&fn_rec, &tmpl, lrec, cfg.k, cfg.a, &rc.fit)?;
    out.write_csv("fit_log.csv", &report.log_csv())?;
    let doc = json!({
        "command": "recover",
        "params": report.params,
        "potential": report.potential,
        "misfit": report.misfit,
        "iterations": report.iterations,
        "converged": report.converged,
        "trusted_degree": middle.trusted_degree,
    });
    out.write_json("fit_report.json", doc.clone())?;
    let mut human = String::new();
    for l in 0..=lrec {
        let z = fn_rec.get(l);
        human.push_str(&format!("f_n({l:>2}) = {:+.10e} {:+.3e}i\n", z.re, z.im));
    }
    human.push_str(&format!(
        "fit: values {:?} breakpoints {:?} misfit {:.3e} after {} iterations\n",
        report.potential.values, report.potential.breakpoints, report.misfit, report.iterations
    ));
    emit(g, &doc, &human);
    report.into_result()?;
    Ok(())
}
