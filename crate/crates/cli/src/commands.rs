use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use optomirror::analytic::ProtocolKernel;
use optomirror::dynamics::{
    polaron_identity_defect, simulate_protocol, uniform_times, ShotNoise, HBAR_SI,
};
use optomirror::fock::{resolved_levels, tensor, Displacer, Mode};
use optomirror::formats::{fmt_f64, parse_quadrature_csv, write_char_csv, write_quadrature_csv, write_wigner_grid, Preamble};
use optomirror::reconstruct::{assemble_samples, grid_char, invert_records, wigner_from_char, GridGeometry, GridOptions};
use optomirror::states::{coherent_state, mirror_pure_state, PhaseSpaceProbe};
use optomirror::{
    BruteEngine, EngineKind, FactoredEngine, Frame, MirrorFamily, MirrorStateSpec, SystemParams, Truncation, WignerGrid,
    C64,
};

use crate::config::{cavity_coupling, CouplingSource, Run};
use crate::output::{ensure_dir, write_atomic};
use crate::CliError;

const QUADRATURE_PREFIX: &str = "quadratures_eta_";

pub fn quadrature_file_name(eta: f64) -> String {
    format!("{QUADRATURE_PREFIX}{}.csv", fmt_f64(eta))
}

pub fn params(run: &Run) -> Result<(), CliError> {
    let p = &run.base;
    println!("omega = {} rad/s", fmt_f64(p.omega_field()));
    println!("Omega = {} rad/s", fmt_f64(p.omega_mirror()));
    match run.coupling {
        CouplingSource::Cavity { length, mass } => {
            println!("hbar = {} J s", fmt_f64(HBAR_SI));
            println!("L = {} m", fmt_f64(length));
            println!("m = {} kg", fmt_f64(mass));
            let x_zpf = (HBAR_SI / (2.0 * mass * p.omega_mirror())).sqrt();
            println!("x_zpf = sqrt(hbar / (2 m Omega)) = {} m", fmt_f64(x_zpf));
            let g = cavity_coupling(p.omega_field(), length, mass, p.omega_mirror())?;
            println!("g = (omega / L) x_zpf = {} rad/s", fmt_f64(g));
        }
        CouplingSource::Direct => println!("g = {} rad/s (given)", fmt_f64(p.coupling())),
    }
    println!("eta = g / Omega = {}", fmt_f64(p.eta()));
    println!("epsilon = g eta = {} rad/s", fmt_f64(p.epsilon()));
    println!("alpha = {},{}", fmt_f64(p.alpha().re), fmt_f64(p.alpha().im));
    println!("frame = {}", p.frame());
    Ok(())
}

fn base_preamble(p: &SystemParams) -> Preamble {
    let mut pre = Preamble::default();
    pre.push("frame", p.frame().to_string());
    pre.push("omega", fmt_f64(p.omega_field()));
    pre.push("Omega", fmt_f64(p.omega_mirror()));
    pre.push("alpha", format!("{},{}", fmt_f64(p.alpha().re), fmt_f64(p.alpha().im)));
    pre
}

pub fn simulate(run: &Run, engine: EngineKind) -> Result<(), CliError> {
    let mirror = run
        .mirror
        .ok_or_else(|| CliError::config("simulate needs a `mirror` state in the config"))?;
    ensure_dir(&run.out_dir)?;
    let noise = run
        .shots
        .map(|shots| ShotNoise::new(shots, run.seed))
        .transpose()
        .map_err(CliError::config)?;
    for &eta in &run.eta_list {
        let params = run.params_for(eta)?;
        let trunc = run.truncation_for(&params, &mirror)?;
        let result = simulate_protocol(&params, &mirror, &run.times, engine, trunc, noise).map_err(CliError::run)?;
        let meta = &result.meta;
        let mut pre = base_preamble(&params);
        pre.push("g", fmt_f64(params.coupling()));
        pre.push("eta", fmt_f64(eta));
        pre.push("mirror", mirror.family().to_string());
        pre.push("engine", meta.engine.to_string());
        pre.push("field_dim", meta.truncation.field_dim.to_string());
        pre.push("mirror_dim", meta.truncation.mirror_dim.to_string());
        pre.push("coherent_leakage", fmt_f64(meta.coherent_leakage));
        pre.push("leakage", fmt_f64(meta.leakage));
        pre.push("shots", meta.shots.map_or("none".to_string(), |s| s.to_string()));
        pre.push("seed", meta.seed.map_or("none".to_string(), |s| s.to_string()));
        for w in &meta.warnings {
            pre.push("warning", w.clone());
            eprintln!("warning (eta={}): {w}", fmt_f64(eta));
        }
        let path = run.out_dir.join(quadrature_file_name(eta));
        write_atomic(&path, &write_quadrature_csv(&pre, eta, &result.records))?;
        println!(
            "wrote {} ({} rows, dims {}x{}, leakage {})",
            path.display(),
            result.records.len(),
            trunc.field_dim,
            trunc.mirror_dim,
            fmt_f64(meta.leakage)
        );
    }
    Ok(())
}

fn default_inputs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::config(format!("cannot list {}: {e}", dir.display())))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(QUADRATURE_PREFIX) && n.ends_with(".csv"))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::config(format!("no {QUADRATURE_PREFIX}*.csv files in {}", dir.display())));
    }
    Ok(found)
}

/// Compares one metadata value with the configuration.
fn check_meta(pre: &Preamble, key: &str, expected: &str, path: &Path) -> Result<(), CliError> {
    match pre.get(key) {
        Some(found) if found == expected => Ok(()),
        Some(found) => Err(CliError::mismatch(format!(
            "{}: `{key}` is {found} in the file but {expected} in the config",
            path.display()
        ))),
        None => Err(CliError::mismatch(format!("{}: missing `# {key}=` metadata", path.display()))),
    }
}

fn reference_spec(spec: MirrorStateSpec, output: &GridGeometry, explicit: Option<usize>) -> Result<MirrorStateSpec, CliError> {
    let dim = explicit.unwrap_or_else(|| {
        let reach = output.center().norm() + output.half_width() * 2f64.sqrt();
        Truncation::mirror_dim_for(0, 0.0, spec.family().extent() + reach).max(spec.dim())
    });
    spec.with_dim(dim).map_err(CliError::config)
}

pub fn reconstruct(run: &Run, inputs: &[PathBuf]) -> Result<(), CliError> {
    let inputs = if inputs.is_empty() {
        default_inputs(&run.out_dir)?
    } else {
        inputs.to_vec()
    };
    let expected = base_preamble(&run.base);
    let mut groups = Vec::with_capacity(inputs.len());
    let mut rejected_total = 0;
    let mut etas = Vec::new();
    for path in &inputs {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let file = parse_quadrature_csv(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        for (key, value) in &expected.0 {
            check_meta(&file.preamble, key, value, path)?;
        }
        if !run.eta_list.contains(&file.eta) {
            return Err(CliError::mismatch(format!(
                "{}: eta = {} is not in the configured eta_list",
                path.display(),
                fmt_f64(file.eta)
            )));
        }
        if let Some(e) = file.preamble.get("eta") {
            check_meta(&file.preamble, "eta", &fmt_f64(file.eta), path).map_err(|_| {
                CliError::mismatch(format!("{}: metadata eta {e} differs from the eta column", path.display()))
            })?;
        }
        let kernel = ProtocolKernel::new(run.params_for(file.eta)?);
        let (samples, rejected) = invert_records(&file.records, run.base.frame(), &kernel, &format!("eta={}", fmt_f64(file.eta)))
            .map_err(CliError::mismatch)?;
        rejected_total += rejected;
        etas.push(file.eta);
        groups.push(samples);
    }
    let samples = assemble_samples(&groups).map_err(CliError::config)?;
    let lambda_grid = GridGeometry::centered_with_spacing(run.lambda_reach, run.lambda_spacing).map_err(CliError::config)?;
    let grid = grid_char(&samples, lambda_grid, GridOptions::default()).map_err(CliError::config)?;
    let wigner = wigner_from_char(&grid, run.wigner).map_err(CliError::config)?;

    ensure_dir(&run.out_dir)?;
    let mut pre = base_preamble(&run.base);
    pre.push("eta_list", etas.iter().map(|e| fmt_f64(*e)).collect::<Vec<_>>().join(";"));
    pre.push("rejected", rejected_total.to_string());
    for w in &grid.warnings {
        pre.push("warning", w.clone());
        eprintln!("warning: {w}");
    }
    let char_path = run.out_dir.join("char_samples.csv");
    write_atomic(&char_path, &write_char_csv(&pre, &samples))?;
    let wigner_path = run.out_dir.join("wigner.txt");
    write_atomic(&wigner_path, &write_wigner_grid(&wigner))?;
    println!("wrote {} ({} samples, {} rejected)", char_path.display(), samples.len(), rejected_total);
    println!("wrote {} (min W = {})", wigner_path.display(), fmt_f64(wigner.min()));

    if let Some(spec) = run.mirror {
        let spec = reference_spec(spec, &run.wigner, run.reference_dim)?;
        let probe = PhaseSpaceProbe::from_spec(&spec).map_err(CliError::run)?;
        let reference = WignerGrid::reference(&probe, run.wigner).map_err(CliError::run)?;
        let path = run.out_dir.join("wigner_reference.txt");
        write_atomic(&path, &write_wigner_grid(&reference))?;
        let diff = wigner.max_abs_diff_where(&reference, |_| true).map_err(CliError::config)?;
        println!(
            "wrote {} (min W = {}, max |W - W_ref| = {})",
            path.display(),
            fmt_f64(reference.min()),
            fmt_f64(diff)
        );
    }
    Ok(())
}

struct Check {
    name: &'static str,
    residual: f64,
    tol: f64,
}

fn selftest_checks(corrupt: bool) -> optomirror::Result<Vec<Check>> {
    let eta = 0.3;
    let p = SystemParams::new(0.0, 1.0, eta, C64::new(1.0, 0.0), Frame::RotatingAtOmega)?;
    let mut checks = Vec::new();

    let defect = polaron_identity_defect(&p, 6, Truncation::mirror_dim_for(5, eta, 0.0))?;
    checks.push(Check {
        name: "polaron operator identity",
        residual: defect,
        tol: 1e-8,
    });

    let dim = 60;
    let disp = Displacer::new(Mode::Mirror, dim)?;
    let keep = resolved_levels(dim, 2.0 * eta);
    let mut worst: f64 = 0.0;
    for j in 0..64 {
        let phase = 2.0 * PI * j as f64 / 64.0;
        let e = C64::from_polar(1.0, phase);
        let lhs = disp.matrix(e * eta)?.into_entries()
            * disp.matrix(C64::new(-eta, 0.0))?.into_entries()
            * C64::from_polar(1.0, eta * eta * phase.sin());
        let rhs = disp.matrix((e - 1.0) * eta)?.into_entries();
        let diff = (lhs - rhs).view((0, 0), (keep, keep)).iter().map(|z| z.norm()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    checks.push(Check {
        name: "displacement product identity",
        residual: worst,
        tol: 1e-9,
    });

    let family = MirrorFamily::Coherent(C64::new(0.5, 0.0));
    let trunc = Truncation::auto(&p, &family);
    let field = coherent_state(p.alpha(), Mode::Field, trunc.field_dim)?;
    let mirror = mirror_pure_state(&MirrorStateSpec::new(family, trunc.mirror_dim)?)?
        .expect("coherent mirror state is pure");
    let psi0 = tensor(&field, &mirror)?;
    let brute = BruteEngine::new(&p, trunc)?;
    let fact = FactoredEngine::new(&p, trunc)?;
    let times = uniform_times(2.0 * PI, 8)?;
    let mut worst: f64 = 0.0;
    for (a, &t) in brute.evolve_many(&psi0, &times)?.iter().zip(&times) {
        worst = worst.max((1.0 - a.inner(&fact.evolve(&psi0, t)?)?.norm()).abs());
    }
    checks.push(Check {
        name: "dual-engine overlap defect",
        residual: worst,
        tol: 1e-9,
    });

    let spec = MirrorStateSpec::auto(MirrorFamily::Vacuum)?;
    let trunc = Truncation::auto(&p, &MirrorFamily::Vacuum);
    let times = uniform_times(2.0 * PI, 64)?;
    let run = simulate_protocol(&p, &spec, &times, EngineKind::Factored, trunc, None)?;
    let kernel = if corrupt {
        ProtocolKernel::new(p).corrupted()
    } else {
        ProtocolKernel::new(p)
    };
    let (samples, _) = invert_records(&run.records, Frame::RotatingAtOmega, &kernel, "selftest")?;
    let worst = samples
        .iter()
        .map(|s| (s.chi_hat - (-s.lambda.norm_sqr() / 2.0).exp()).norm())
        .fold(0.0, f64::max);
    checks.push(Check {
        name: "vacuum round trip",
        residual: worst,
        tol: 1e-8,
    });
    Ok(checks)
}

pub fn selftest(corrupt_prefactor: bool) -> Result<(), CliError> {
    let checks = selftest_checks(corrupt_prefactor).map_err(|e| CliError {
        code: CliError::SELFTEST,
        message: format!("self-test could not run: {e}"),
    })?;
    let mut failed = Vec::new();
    for c in &checks {
        let pass = c.residual <= c.tol;
        println!(
            "{}: residual {:.3e} (tol {:.0e}) {}",
            c.name,
            c.residual,
            c.tol,
            if pass { "PASS" } else { "FAIL" }
        );
        if !pass {
            failed.push(format!("{} residual {:e}", c.name, c.residual));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError {
            code: CliError::SELFTEST,
            message: format!("self-test failed: {}", failed.join("; ")),
        })
    }
}
