//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use jumpheat::fem::{self, measure_s1_decay};
use jumpheat::harness::{bias_budget, run_study, Estimator, StudyConfig};
use jumpheat::mc::{replicate, SampleStats};
use jumpheat::noise::{sample_path, split_big_jumps, IntensitySpec};
use jumpheat::oracle::{
    expansion_check, second_moment, weak_error_deterministic, CharTarget, ExpansionConfig, FunctionalBounds,
    OracleModel, QuadratureOptions,
};
use jumpheat::schemes::{rational_factors, run_exact_mild, run_full_scheme, run_stopped_scheme, Backend, SchemeConfig};
use jumpheat::spectral::{build_spectrum, FieldState, ModeSpectrum};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn symmetric_half() -> IntensitySpec {
    IntensitySpec::SymmetricStable { index: 0.5, tau: 1.0 }
}

fn temporal_rate() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for theta in [1.0, 0.75] {
        let cfg = StudyConfig {
            theta,
            expect_rate_dt: Some((0.60, 0.90)),
            ..StudyConfig::default()
        };
        match run_study(&cfg) {
            Ok(r) => match r.rate_dt {
                Some(f) => {
                    ok &= r.all_checks_pass();
                    parts.push(format!("theta={theta}: slope {:.4} ± {:.4}", f.slope, f.conf_radius));
                }
                None => {
                    ok = false;
                    parts.push(format!("theta={theta}: no fit"));
                }
            },
            Err(e) => {
                ok = false;
                parts.push(format!("theta={theta}: {e}"));
            }
        }
    }
    outcome(ok, format!("{} (window [0.60, 0.90])", parts.join("; ")))
}

fn spatial_cfg(steps: Option<usize>) -> StudyConfig {
    StudyConfig {
        steps: vec![steps],
        levels: vec![8, 16, 32, 64, 128],
        expect_rate_h: Some((1.2, 1.8)),
        ..StudyConfig::default()
    }
}

fn spatial_rate() -> Outcome {
    match run_study(&spatial_cfg(None)) {
        Ok(r) => match r.rate_h {
            Some(f) => outcome(
                r.all_checks_pass(),
                format!(
                    "time-exact J sweep slope {:.4} ± {:.4} (window [1.2, 1.8])",
                    f.slope, f.conf_radius
                ),
            ),
            None => outcome(false, "no fit".into()),
        },
        Err(e) => outcome(false, e.to_string()),
    }
}

fn spatial_rate_fixed_n_diagnostic() -> String {
    match run_study(&spatial_cfg(Some(4096))) {
        Ok(r) => {
            let errs: Vec<String> = r.rows.iter().map(|row| format!("{:.3e}", row.error)).collect();
            let slope = r.rate_h.map_or("n/a".to_string(), |f| format!("{:.4}", f.slope));
            format!("N=4096 J sweep errors [{}], slope {slope}", errs.join(", "))
        }
        Err(e) => format!("N=4096 J sweep failed: {e}"),
    }
}

fn expansion_identity() -> Outcome {
    let mut passes = 0;
    let mut parts = Vec::new();
    for seed in 0..5u64 {
        let cfg = ExpansionConfig {
            theta: 1.0,
            steps: 4,
            horizon: 1.0,
            x0: 5.0,
            g: 1.0,
            spec: IntensitySpec::FiniteUniform { lo: 0.5, hi: 1.0, total_mass: 2.0 },
            spectrum: build_spectrum(1, 0.0).unwrap(),
            n_paths: 100_000,
            master_seed: 1000 + seed,
        };
        match expansion_check(&cfg) {
            Ok(r) => {
                if r.passes(3.0) {
                    passes += 1;
                }
                parts.push(format!("{:.2}σ", r.gap() / r.mc_stderr));
            }
            Err(e) => parts.push(e.to_string()),
        }
    }
    outcome(passes == 5, format!("{passes}/5 seeds within 3σ, gaps [{}]", parts.join(", ")))
}

fn isometry_case(spectrum: &ModeSpectrum, spec: &IntensitySpec, eps: f64, n: usize, seed: u64) -> (f64, SampleStats) {
    let m = spectrum.len();
    let x0 = spectrum.zero_field();
    let samples = replicate(n, seed, |_, s| {
        let path = sample_path(spec, 1.0, eps, s)?;
        Ok(run_exact_mild(&path, spectrum, m, &x0, 1.0)?.h_norm_sq())
    })
    .unwrap();
    (second_moment(spectrum, spec, eps, 1.0).unwrap(), SampleStats::from_samples(&samples))
}

fn ito_isometry() -> Outcome {
    let eps = 1e-3;
    let spec = symmetric_half();
    let (want16, got16) = isometry_case(&build_spectrum(16, 0.35).unwrap(), &spec, eps, 10_000, 41);
    let one = build_spectrum(1, 0.0).unwrap();
    let (want1, got1) = isometry_case(&one, &spec, eps, 10_000, 42);
    let m2 = spec.moments(eps, 1.0).unwrap().m2;
    let closed = -(-2.0 * PI * PI).exp_m1() / (2.0 * PI * PI) * m2;
    let z16 = (got16.mean - want16) / got16.stderr;
    let z1 = (got1.mean - want1) / got1.stderr;
    let closed_ok = (want1 - closed).abs() <= 1e-14 * closed;
    outcome(
        z16.abs() <= 3.0 && z1.abs() <= 3.0 && closed_ok,
        format!(
            "M=16: {:.5e} vs {:.5e} ({z16:+.2}σ); M=1: {:.5e} vs closed form {:.5e} ({z1:+.2}σ)",
            got16.mean, want16, got1.mean, closed
        ),
    )
}

fn oracle_mc_equivalence() -> Outcome {
    let eps = 1e-3;
    let steps = 64;
    let base = StudyConfig {
        eps,
        steps: vec![Some(steps)],
        ..StudyConfig::default()
    };
    let spectrum = base.spectrum().unwrap();
    let functional = base.test_functional().unwrap();
    let model = OracleModel::new(spectrum, base.intensity, eps, 1.0);
    let target = CharTarget::FullDiscrete {
        backend: Backend::SpectralCutoff { modes: 256 },
        theta: 1.0,
        steps,
    };
    let oracle = match weak_error_deterministic(&functional, target, &model, &QuadratureOptions::default()) {
        Ok(w) => w,
        Err(e) => return outcome(false, e.to_string()),
    };
    let mc_cfg = StudyConfig {
        estimator: Estimator::MonteCarlo { n_paths: 100_000, master_seed: 7 },
        ..base
    };
    let mc = match run_study(&mc_cfg) {
        Ok(r) => r.rows[0].clone(),
        Err(e) => return outcome(false, e.to_string()),
    };
    let combined = (mc.uncertainty.powi(2) + oracle.tol.powi(2)).sqrt();
    let z = (mc.signed - oracle.signed) / combined;
    outcome(
        z.abs() <= 3.0,
        format!(
            "oracle {:.4e}, Monte Carlo {:.4e} ± {:.2e} ({z:+.2} combined σ)",
            oracle.signed, mc.signed, mc.uncertainty
        ),
    )
}

/// `x_N = S^N P_h x0 + Σ_n S^{N−n−1} T P_h Q^{1/2} ΔZ_n` with dense matrices.
fn literal_fem_sum(cfg: &SchemeConfig, incs: &[f64], m: usize) -> Vec<f64> {
    let Backend::Fem { n_cells } = cfg.backend else { unreachable!() };
    let (mesh, ops) = fem::assemble(n_cells).unwrap();
    let d = mesh.dim();
    let dense = |t: &fem::SymTridiag| {
        let mut a = DMatrix::zeros(d, d);
        for i in 0..d {
            a[(i, i)] = t.diag[i];
            if i + 1 < d {
                a[(i, i + 1)] = t.off[i];
                a[(i + 1, i)] = t.off[i];
            }
        }
        a
    };
    let (mass, stiff) = (dense(&ops.mass), dense(&ops.stiffness));
    let dt = cfg.dt();
    let lhs_inv = (&mass + &stiff * (cfg.theta * dt)).try_inverse().unwrap();
    let s = &lhs_inv * (&mass - &stiff * ((1.0 - cfg.theta) * dt));
    let t = &lhs_inv * &mass;
    let mass_inv = mass.clone().try_inverse().unwrap();
    let loads = fem::sine_loads(&mesh, m);
    let project = |c: &[f64]| {
        let mut l = DVector::zeros(d);
        for (k, ck) in c.iter().enumerate() {
            l += DVector::from_column_slice(&loads[k]) * *ck;
        }
        &mass_inv * l
    };
    let n = cfg.steps;
    let mut x = s.pow(n as u32) * project(cfg.x0.coeffs());
    for k in 0..n {
        x += s.pow((n - k - 1) as u32) * &t * project(&incs[k * m..(k + 1) * m]);
    }
    x.iter().copied().collect()
}

fn scheme_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let m = rng.random_range(1..=4usize);
        let steps = rng.random_range(1..=6usize);
        let theta = rng.random_range(0.51..=1.0);
        let spectrum = build_spectrum(m, rng.random_range(0.0..1.0)).unwrap();
        let x0 = FieldState::spectral((0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let backend = if case % 2 == 0 {
            Backend::SpectralCutoff { modes: rng.random_range(1..=m) }
        } else {
            Backend::Fem { n_cells: rng.random_range(3..=8usize) }
        };
        let spec = IntensitySpec::FiniteUniform { lo: -1.0, hi: 2.0, total_mass: 5.0 };
        let path = sample_path(&spec, 1.0, 0.0, rng.random()).unwrap();
        let cfg = SchemeConfig::new(theta, steps, 1.0, backend, x0.clone());
        let got = run_full_scheme(&cfg, &path, &spectrum).unwrap();
        let incs = path.binned_increments(&spectrum, m, steps);
        let want: Vec<f64> = match backend {
            Backend::SpectralCutoff { modes } => (0..m)
                .map(|k| {
                    if k >= modes {
                        return 0.0;
                    }
                    let (s, t) = rational_factors(theta, cfg.dt(), spectrum.lambda(k + 1));
                    let mut sum = s.powi(steps as i32) * x0.coeffs()[k];
                    for n in 0..steps {
                        sum += s.powi((steps - n - 1) as i32) * t * incs[n * m + k];
                    }
                    sum
                })
                .collect(),
            Backend::Fem { .. } => literal_fem_sum(&cfg, &incs, m),
        };
        let scale = want.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let err = got
            .coeffs()
            .iter()
            .zip(&want)
            .fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
        worst = worst.max(err / scale);
    }
    let mut max_s: f64 = 0.0;
    for i in 0..1000 {
        let theta = 0.5 + 0.5 * (i as f64 + 1.0) / 1000.0;
        for j in 0..1000 {
            let z = 10f64.powf(-8.0 + 16.0 * j as f64 / 999.0);
            let (s, _) = rational_factors(theta, z, 1.0);
            max_s = max_s.max(s.abs());
        }
    }
    outcome(
        worst <= 1e-13 && max_s <= 1.0,
        format!("worst relative gap {worst:.2e} over 100 instances; max |s| = {max_s} on 10^6 grid"),
    )
}

fn big_jump_budget() -> Outcome {
    let bounds = FunctionalBounds { sup: 1.0, grad: 1.0, hessian: 1.0 };
    let spectrum = build_spectrum(8, 0.5).unwrap();
    let horizon = 1.0;
    let mut ok = true;
    let mut worst: f64 = 0.0;
    let ms: Vec<f64> = (0..60).map(|i| 1.0 + 0.25 * i as f64).collect();
    for index in [0.5, 1.0, 1.5, 1.9] {
        for tau in [2.0, 5.0, f64::INFINITY] {
            for symmetric in [false, true] {
                let spec = if symmetric {
                    IntensitySpec::SymmetricStable { index, tau }
                } else {
                    IntensitySpec::OneSidedStable { index, tau }
                };
                let mut prev = f64::INFINITY;
                for &m in &ms {
                    let b = bias_budget(&spec, 0.0, Some(m), &bounds, horizon, &spectrum).unwrap().big_jump_bound;
                    let side = if m >= tau { 0.0 } else { (m.powf(-index) - tau.powf(-index)) / index };
                    let mass = if symmetric { 2.0 * side } else { side };
                    let want = 2.0 * (horizon * mass).min(1.0);
                    worst = worst.max((b - want).abs());
                    ok &= b <= prev;
                    prev = b;
                }
            }
        }
    }
    let analytic_ok = worst <= 1e-14;

    let spectrum = build_spectrum(6, 0.35).unwrap();
    let x0 = spectrum.zero_field();
    let mut gap: f64 = 0.0;
    for (spec, m) in [
        (IntensitySpec::SymmetricStable { index: 0.5, tau: 3.0 }, 3.0),
        (IntensitySpec::SymmetricStable { index: 1.5, tau: 3.0 }, 10.0),
        (IntensitySpec::OneSidedStable { index: 0.5, tau: 1.0 }, 2.0),
    ] {
        for seed in 0..50 {
            let raw = sample_path(&spec, 1.0, 0.01, seed).unwrap();
            let split = split_big_jumps(&spec, &raw, m, &spectrum).unwrap();
            for backend in [Backend::SpectralCutoff { modes: 6 }, Backend::Fem { n_cells: 16 }] {
                let cfg = SchemeConfig::new(1.0, 16, 1.0, backend, x0.clone());
                let full = run_full_scheme(&cfg, &raw, &spectrum).unwrap();
                let stopped = run_stopped_scheme(&cfg, &split, &spectrum).unwrap();
                ok &= !stopped.tau_m_hit;
                let scale = full.coeffs().iter().fold(1e-300f64, |a, v| a.max(v.abs()));
                for (a, b) in full.coeffs().iter().zip(stopped.x.coeffs()) {
                    gap = gap.max((a - b).abs() / scale);
                }
            }
        }
    }
    outcome(
        ok && analytic_ok && gap <= 1e-12,
        format!("analytic gap {worst:.1e}, monotone in m: {ok}; stopped vs full scheme (m >= tau) max rel gap {gap:.1e}"),
    )
}

fn fem_backend() -> Outcome {
    let table = match measure_s1_decay(&[16, 32, 64, 128], &[0.01, 0.1], &[1.0, 2.0], 256) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let s1_ok = table.slopes.len() == 4 && table.slopes.iter().all(|s| s.passes);
    let slopes: Vec<String> = table
        .slopes
        .iter()
        .map(|s| format!("t={} q={}: {:.3}", s.t, s.q, s.slope))
        .collect();

    let m = 8;
    let spectrum = build_spectrum(m, 0.35).unwrap();
    let x0 = FieldState::spectral((0..m).map(|k| 1.0 / (k + 1) as f64).collect()).unwrap();
    let spec = symmetric_half();
    let mut ratios = Vec::new();
    for seed in 0..5 {
        let path = sample_path(&spec, 1.0, 0.01, seed).unwrap();
        let run = |backend| {
            run_full_scheme(&SchemeConfig::new(1.0, 32, 1.0, backend, x0.clone()), &path, &spectrum).unwrap()
        };
        let reference = run(Backend::SpectralCutoff { modes: m });
        let dist = |n_cells: usize| {
            let (mesh, ops) = fem::assemble(n_cells).unwrap();
            let x = run(Backend::Fem { n_cells });
            fem::distance_sq_to_spectral(&mesh, &ops, x.coeffs(), reference.coeffs()).sqrt()
        };
        ratios.push(dist(64) / dist(128));
    }
    let agree_ok = ratios.iter().all(|r| *r >= 2.0);
    let ratios: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    outcome(
        s1_ok && agree_ok,
        format!(
            "S1 slopes [{}]; FEM-vs-cutoff distance ratio 64→128 [{}] (need >= 2)",
            slopes.join(", "),
            ratios.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        ("1 temporal weak rate", temporal_rate),
        ("2 spatial weak rate", spatial_rate),
        ("3 error expansion identity", expansion_identity),
        ("4 isometry", ito_isometry),
        ("5 oracle vs Monte Carlo", oracle_mc_equivalence),
        ("6 scheme algebra", scheme_algebra),
        ("7 big-jump budget", big_jump_budget),
        ("8 FEM backend", fem_backend),
    ];
    let mut failures = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let label = if o.passed { "PASS" } else { "FAIL" };
        println!("{label} criterion {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        if !o.passed {
            failures += 1;
        }
        if name.starts_with('2') {
            let start = Instant::now();
            println!(
                "INFO criterion 2 diagnostic: {} [{:.1}s]",
                spatial_rate_fixed_n_diagnostic(),
                start.elapsed().as_secs_f64()
            );
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
