//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits non-zero if any fails. Timings are wall-clock and
//! include all setup a criterion needs.

mod common;

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use optomirror::analytic::ProtocolKernel;
use optomirror::dynamics::{
    polaron_identity_defect, simulate_protocol, BruteEngine, EngineKind, FactoredEngine, FieldMoments, Frame,
    ShotNoise, SystemParams, Truncation,
};
use optomirror::fock::{reduce_pure, resolved_levels, tensor, DensityMatrix, Displacer, Mode, Space, StateVector};
use optomirror::reconstruct::{assemble_samples, grid_char, invert_records, wigner_from_char, GridGeometry, GridOptions};
use optomirror::states::{char_fn_direct, coherent_state, mirror_ensemble, MirrorFamily, MirrorStateSpec, PhaseSpaceProbe};
use optomirror::{WignerGrid, C64};

struct Outcome {
    pass: bool,
    detail: String,
}

fn run(id: u32, title: &str, budget: Duration, body: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = body();
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let pass = outcome.pass && in_time;
    println!(
        "criterion {id} {}: {title}: {} [{:.2}s, budget {}s{}]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    pass
}

const ETAS: [f64; 3] = [0.1, 0.3, 0.5];
const ALPHAS: [f64; 3] = [0.5, 1.0, 2.0];

fn params(eta: f64, alpha: f64) -> SystemParams {
    SystemParams::new(0.0, 1.0, eta, C64::new(alpha, 0.0), Frame::RotatingAtOmega).unwrap()
}

fn period_times(points: usize) -> Vec<f64> {
    (0..points).map(|k| 2.0 * PI * k as f64 / (points - 1) as f64).collect()
}

/// One truncation large enough for every family in `families`.
fn box_truncation(p: &SystemParams, families: &[MirrorFamily]) -> Truncation {
    families
        .iter()
        .map(|f| Truncation::auto(p, f))
        .reduce(|a, b| Truncation {
            field_dim: a.field_dim.max(b.field_dim),
            mirror_dim: a.mirror_dim.max(b.mirror_dim),
        })
        .unwrap()
}

fn initial_components(p: &SystemParams, trunc: Truncation, family: MirrorFamily) -> Vec<(f64, StateVector)> {
    let field = coherent_state(p.alpha(), Mode::Field, trunc.field_dim).unwrap();
    let spec = MirrorStateSpec::new(family, trunc.mirror_dim).unwrap();
    mirror_ensemble(&spec)
        .unwrap()
        .into_iter()
        .map(|(w, phi)| (w, tensor(&field, &phi).unwrap()))
        .collect()
}

fn criterion_1() -> Outcome {
    let field_dim = 6;
    let mut worst: f64 = 0.0;
    let mut dims = Vec::new();
    for eta in ETAS {
        let mirror_dim = Truncation::mirror_dim_for(field_dim - 1, eta, 0.0);
        dims.push(mirror_dim);
        worst = worst.max(polaron_identity_defect(&params(eta, 1.0), field_dim, mirror_dim).unwrap());
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max defect {worst:.3e} (tol 1e-8), field_dim 6, mirror_dim {dims:?}"),
    }
}

fn criterion_2() -> Outcome {
    let dim = 60;
    let disp = Displacer::new(Mode::Mirror, dim).unwrap();
    let mut worst: f64 = 0.0;
    let mut block = dim;
    for k in 1..=5 {
        let eta = 0.1 * k as f64;
        let keep = resolved_levels(dim, 2.0 * eta);
        block = block.min(keep);
        for j in 0..64 {
            let phase = 2.0 * PI * j as f64 / 64.0;
            let e = C64::from_polar(1.0, phase);
            let lhs = disp.matrix(e * eta).unwrap().into_entries()
                * disp.matrix(C64::new(-eta, 0.0)).unwrap().into_entries()
                * C64::from_polar(1.0, eta * eta * phase.sin());
            let rhs = disp.matrix((e - 1.0) * eta).unwrap().into_entries();
            let diff = (lhs - rhs).view((0, 0), (keep, keep)).into_owned();
            worst = worst.max(common::max_abs(&diff));
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("max residual {worst:.3e} (tol 1e-9), eta 0.1..0.5 x 64 phases, leading {block} of {dim} levels"),
    }
}

fn criterion_3() -> Outcome {
    let families = [MirrorFamily::Vacuum, MirrorFamily::Coherent(C64::new(0.5, 0.0)), MirrorFamily::Fock(1)];
    let times = period_times(33);
    let mut worst: f64 = 0.0;
    let mut largest = 0;
    for eta in ETAS {
        for alpha in ALPHAS {
            let p = params(eta, alpha);
            let trunc = box_truncation(&p, &families);
            largest = largest.max(trunc.mirror_dim);
            let brute = BruteEngine::new(&p, trunc).unwrap();
            let fact = FactoredEngine::new(&p, trunc).unwrap();
            for family in families {
                let (_, psi0) = initial_components(&p, trunc, family).remove(0);
                let prepared = fact.prepare(&psi0).unwrap();
                for (a, &t) in brute.evolve_many(&psi0, &times).unwrap().iter().zip(&times) {
                    let b = fact.evolve_prepared(&prepared, t).unwrap();
                    worst = worst.max(1.0 - a.inner(&b).unwrap().norm());
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-9,
        detail: format!("min overlap 1 - {worst:.3e} (tol 1 - 1e-9), 33 t x 3 eta x 3 alpha x 3 states, mirror_dim <= {largest}"),
    }
}

fn families_all() -> [MirrorFamily; 5] {
    [
        MirrorFamily::Vacuum,
        MirrorFamily::Fock(1),
        MirrorFamily::Coherent(C64::new(0.5, 0.0)),
        MirrorFamily::Thermal(0.2),
        MirrorFamily::Cat {
            amplitude: C64::new(1.5, 0.0),
            phase: 0.0,
        },
    ]
}

fn criterion_4() -> Outcome {
    let families = families_all();
    let times = period_times(33);
    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for eta in ETAS {
        for alpha in ALPHAS {
            let p = params(eta, alpha);
            let kernel = ProtocolKernel::new(p);
            let trunc = box_truncation(&p, &families);
            let brute = BruteEngine::new(&p, trunc).unwrap();
            for family in families {
                let mut a_brute = vec![C64::new(0.0, 0.0); times.len()];
                for (w, psi0) in initial_components(&p, trunc, family) {
                    for (acc, psi) in a_brute.iter_mut().zip(brute.evolve_many(&psi0, &times).unwrap()) {
                        *acc += FieldMoments::of_pure(&psi).unwrap().a * w;
                    }
                }
                for (&t, &a) in times.iter().zip(&a_brute) {
                    let analytic = kernel.expect_a(|l| family.char_fn(l), t).unwrap();
                    let err = (a - analytic).norm();
                    if err > worst {
                        worst = err;
                        worst_at = format!("{family} eta={eta} alpha={alpha} t={t:.3}");
                    }
                }
            }
        }
    }
    Outcome {
        pass: worst <= 1e-6,
        detail: format!("max |<a>_analytic - <a>_brute| {worst:.3e} (tol 1e-6) at {worst_at}, 5 families"),
    }
}

fn cat15() -> MirrorFamily {
    MirrorFamily::Cat {
        amplitude: C64::new(1.5, 0.0),
        phase: 0.0,
    }
}

fn criterion_5() -> Outcome {
    let family = cat15();
    let probe = PhaseSpaceProbe::from_spec(&MirrorStateSpec::new(family, 80).unwrap()).unwrap();
    let times = period_times(257);
    let mut worst_brute: f64 = 0.0;
    let mut worst_analytic: f64 = 0.0;
    for k in 1..=6 {
        let p = params(0.1 * k as f64, 1.0);
        let kernel = ProtocolKernel::new(p);
        let spec = MirrorStateSpec::auto(family).unwrap();
        let trunc = Truncation::auto(&p, &family);
        let run = simulate_protocol(&p, &spec, &times, EngineKind::Brute, trunc, None).unwrap();
        let (brute, rejected) = invert_records(&run.records, Frame::RotatingAtOmega, &kernel, "brute").unwrap();
        assert_eq!(rejected, 0);
        let records: Vec<_> = times.iter().map(|&t| kernel.record(|l| family.char_fn(l), t).unwrap()).collect();
        let (analytic, _) = invert_records(&records, Frame::RotatingAtOmega, &kernel, "analytic").unwrap();
        for s in assemble_samples(&[brute]).unwrap() {
            worst_brute = worst_brute.max((s.chi_hat - probe.chi(s.lambda).unwrap()).norm());
        }
        for s in assemble_samples(&[analytic]).unwrap() {
            worst_analytic = worst_analytic.max((s.chi_hat - probe.chi(s.lambda).unwrap()).norm());
        }
    }
    Outcome {
        pass: worst_brute <= 1e-6 && worst_analytic <= 1e-8,
        detail: format!(
            "cat(1.5) eta 0.1..0.6: brute-record error {worst_brute:.3e} (tol 1e-6), analytic-record error {worst_analytic:.3e} (tol 1e-8)"
        ),
    }
}

fn criterion_6() -> Outcome {
    let family = cat15();
    let p = params(0.25, 1.0);
    let times = period_times(257);
    let mut groups = Vec::new();
    for k in 1..=12 {
        let eta = 0.25 * k as f64;
        let kernel = ProtocolKernel::new(p.with_eta(eta).unwrap());
        let records: Vec<_> = times.iter().map(|&t| kernel.record(|l| family.char_fn(l), t).unwrap()).collect();
        groups.push(invert_records(&records, Frame::RotatingAtOmega, &kernel, &format!("eta={eta}")).unwrap().0);
    }
    let samples = assemble_samples(&groups).unwrap();
    let lambda_grid = GridGeometry::centered_with_spacing(7.0, 0.05).unwrap();
    let grid = grid_char(&samples, lambda_grid, GridOptions::default()).unwrap();
    let out = GridGeometry::new(C64::new(0.0, 0.0), 0.5, 21).unwrap();
    let w = wigner_from_char(&grid, out).unwrap();
    let probe = PhaseSpaceProbe::from_spec(&MirrorStateSpec::new(family, 80).unwrap()).unwrap();
    let reference = WignerGrid::reference(&probe, out).unwrap();
    let in_disc = |b: C64| b.norm() <= 0.5 + 1e-12;
    let err = w.max_abs_diff_where(&reference, in_disc).unwrap();
    let mut min_rec = f64::INFINITY;
    for i in 0..out.n() {
        for j in 0..out.n() {
            if in_disc(out.point(i, j)) {
                min_rec = min_rec.min(w.values()[(i, j)]);
            }
        }
    }
    Outcome {
        pass: min_rec < 0.0 && err <= 5e-2,
        detail: format!(
            "cat(1.5), 12 circles eta 0.25..3: min W_rec {min_rec:.4} (< 0), max |dW| on |beta|<=0.5 {err:.3e} (tol 5e-2), reference min {:.4}",
            reference.min()
        ),
    }
}

fn random_density() -> impl Strategy<Value = (DensityMatrix, C64)> {
    (2usize..=20, 1usize..=4)
        .prop_flat_map(|(dim, rank)| {
            (
                Just(dim),
                prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), dim * rank),
                0.0f64..1.0,
                0.0f64..(2.0 * PI),
            )
                .prop_map(move |(dim, raw, r, phi)| {
                    let a = DMatrix::from_fn(dim, raw.len() / dim, |i, j| {
                        let (re, im) = raw[i * (raw.len() / dim) + j];
                        C64::new(re, im)
                    });
                    let mut rho = &a * a.adjoint();
                    let tr = rho.trace();
                    rho /= tr;
                    // symmetrise away rounding so construction never fails
                    let rho = (&rho + rho.adjoint()) * C64::new(0.5, 0.0);
                    let lambda = C64::from_polar(r * (dim as f64).sqrt() / 2.0, phi);
                    (DensityMatrix::new(Space::Mirror, rho).unwrap(), lambda)
                })
        })
        .prop_map(|x| x)
}

fn criterion_7() -> Outcome {
    let cases = 256;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let worst = std::cell::Cell::new((0.0f64, 0.0f64, 0.0f64));
    let result = runner.run(&random_density(), |(rho, lambda)| {
        let at_zero = (char_fn_direct(&rho, C64::new(0.0, 0.0)).unwrap() - 1.0).norm();
        let chi = char_fn_direct(&rho, lambda).unwrap();
        let chi_neg = char_fn_direct(&rho, -lambda).unwrap();
        let sym = (chi_neg - chi.conj()).norm();
        let excess = chi.norm() - 1.0;
        let (a, b, c) = worst.get();
        worst.set((a.max(at_zero), b.max(sym), c.max(excess)));
        prop_assert!(at_zero <= 1e-12, "chi(0) off by {}", at_zero);
        prop_assert!(sym <= 1e-12, "Hermitian symmetry off by {}", sym);
        prop_assert!(excess <= 1e-10, "|chi| exceeds 1 by {}", excess);
        Ok(())
    });
    let (a, b, c) = worst.get();
    Outcome {
        pass: result.is_ok(),
        detail: format!(
            "{cases} random density matrices (dim 2..20): |chi(0)-1| {a:.1e} (tol 1e-12), symmetry {b:.1e} (tol 1e-12), |chi|-1 {c:.1e} (tol 1e-10){}",
            match &result {
                Ok(()) => String::new(),
                Err(e) => format!(", failure: {e}"),
            }
        ),
    }
}

fn criterion_8() -> Outcome {
    let family = cat15();
    let p = params(0.3, 1.0);
    let kernel = ProtocolKernel::new(p);
    let spec = MirrorStateSpec::auto(family).unwrap();
    let trunc = Truncation::auto(&p, &family);
    let times = period_times(257);
    let clean = simulate_protocol(&p, &spec, &times, EngineKind::Factored, trunc, None).unwrap();
    let probe = PhaseSpaceProbe::from_spec(&MirrorStateSpec::new(family, 80).unwrap()).unwrap();
    let rms = |shots: u64| -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for seed in 0..20u64 {
            let noise = ShotNoise::new(shots, seed).unwrap();
            let noisy: Vec<_> = clean
                .records
                .iter()
                .enumerate()
                .map(|(k, r)| r.with_shot_noise(&noise, k as u64).unwrap())
                .collect();
            let (samples, _) = invert_records(&noisy, Frame::RotatingAtOmega, &kernel, "noisy").unwrap();
            for s in samples {
                sum += (s.chi_hat - probe.chi(s.lambda).unwrap()).norm_sqr();
                count += 1;
            }
        }
        (sum / count as f64).sqrt()
    };
    let low = rms(10_000);
    let high = rms(40_000);
    let ratio = low / high;
    Outcome {
        pass: (2.0 / 1.5..=2.0 * 1.5).contains(&ratio),
        detail: format!("RMS error {low:.3e} at 1e4 shots, {high:.3e} at 4e4 shots, ratio {ratio:.3} (accept [1.333, 3]), 20 seeds"),
    }
}

fn criterion_9() -> Outcome {
    let families = [
        MirrorFamily::Vacuum,
        MirrorFamily::Fock(1),
        MirrorFamily::Coherent(C64::new(0.5, -0.3)),
        cat15(),
    ];
    let mut worst: f64 = 0.0;
    for eta in ETAS {
        let p = params(eta, 1.0);
        let trunc = box_truncation(&p, &families);
        let brute = BruteEngine::new(&p, trunc).unwrap();
        let fact = FactoredEngine::new(&p, trunc).unwrap();
        for family in families {
            let (_, psi0) = initial_components(&p, trunc, family).remove(0);
            for psi in [brute.evolve(&psi0, 2.0 * PI).unwrap(), fact.evolve(&psi0, 2.0 * PI).unwrap()] {
                let purity = reduce_pure(&psi, Mode::Field).unwrap().purity();
                worst = worst.max((purity - 1.0).abs());
            }
        }
    }
    Outcome {
        pass: worst <= 1e-8,
        detail: format!("max |purity - 1| at Wt = 2pi {worst:.3e} (tol 1e-8), 4 pure mirror states x 3 eta, both engines"),
    }
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run(1, "polaron operator identity", secs(5), criterion_1),
        run(2, "displacement product identity", secs(2), criterion_2),
        run(3, "dual-engine equivalence", secs(120), criterion_3),
        run(4, "closed-form <a(t)> vs brute force", secs(120), criterion_4),
        run(5, "noiseless round-trip tomography", secs(180), criterion_5),
        run(6, "Wigner negativity recovery", secs(120), criterion_6),
        run(7, "characteristic-function axioms (property test)", secs(120), criterion_7),
        run(8, "shot-noise scaling", secs(120), criterion_8),
        run(9, "revival disentanglement", secs(30), criterion_9),
    ];
    let failed = results.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
