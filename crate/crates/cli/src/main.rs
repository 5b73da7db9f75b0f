use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use jumpheat::harness::{run_study, StudyConfig, CONFIG_SCHEMA};
use jumpheat::noise::{sample_path, IntensitySpec, JumpPath};
use jumpheat::oracle::{
    char_functional, expansion_check, point_evaluation, CharTarget, ExpansionConfig, OracleModel, OracleRecord,
    QuadratureOptions,
};
use jumpheat::schemes::{run_full_scheme, run_semidiscrete, Backend, SchemeConfig};
use jumpheat::spectral::{check_assumptions, ModeSpectrum};

#[derive(Parser)]
#[command(name = "jumpheat", version, about = "Stochastic heat equation with impulsive noise: schemes, oracles, weak-order studies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Check the operator/noise assumptions for a spectrum.
    CheckAssumptions {
        #[arg(long, default_value_t = 256)]
        modes: usize,
        #[arg(long, default_value_t = 0.35)]
        rho: f64,
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long, default_value_t = 0.35)]
        beta: f64,
        /// Also check the moment conditions of this intensity.
        #[arg(long)]
        intensity: Option<IntensitySpec>,
    },
    /// Sample a jump path and write it in text form.
    SamplePath {
        #[arg(long, default_value = "symmetric-stable 0.5 1")]
        intensity: IntensitySpec,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run one scheme on one path and print the final state as JSON.
    Simulate(SimulateArgs),
    /// Run a weak-error study.
    WeakOrder(WeakOrderArgs),
    /// Check the one-mode error expansion by Monte Carlo.
    ExpansionCheck {
        #[arg(long, default_value = "finite-uniform 0.5 1 2")]
        intensity: IntensitySpec,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 5.0)]
        x0: f64,
        #[arg(long, default_value_t = 1.0)]
        g: f64,
        #[arg(long, default_value_t = 0.0)]
        rho: f64,
        #[arg(long, default_value_t = 100_000)]
        n_paths: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Pass when the gap is within this many standard errors.
        #[arg(long, default_value_t = 3.0)]
        sigmas: f64,
    },
    /// Evaluate a characteristic functional and print the JSON record.
    Oracle {
        /// exact | semidiscrete:<backend> | full:<backend>:<theta>:<steps>, backend = spectral-J or fem-N.
        #[arg(long, default_value = "exact")]
        target: String,
        #[arg(long, default_value_t = 256)]
        modes: usize,
        #[arg(long, default_value_t = 0.35)]
        rho: f64,
        #[arg(long, default_value = "symmetric-stable 0.5 1")]
        intensity: IntensitySpec,
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        /// g = weight · (truncated point evaluation at xi0).
        #[arg(long, default_value_t = 1.0 / 3.0)]
        xi0: f64,
        #[arg(long, default_value_t = 0.01)]
        weight: f64,
    },
}

#[derive(Args)]
struct SimulateArgs {
    /// Jump path file from `sample-path`; sampled afresh when absent.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long, default_value = "symmetric-stable 0.5 1")]
    intensity: IntensitySpec,
    #[arg(long, default_value_t = 1e-3)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    horizon: f64,
    #[arg(long, default_value_t = 64)]
    modes: usize,
    #[arg(long, default_value_t = 0.35)]
    rho: f64,
    /// spectral-J or fem-N.
    #[arg(long, default_value = "spectral-64")]
    backend: String,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Number of time steps; 0 runs the time-exact semidiscrete solution.
    #[arg(long, default_value_t = 64)]
    steps: usize,
}

#[derive(Args)]
struct WeakOrderArgs {
    /// Key-value configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the configuration schema and exit.
    #[arg(long)]
    schema: bool,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    rho: Option<String>,
    #[arg(long)]
    modes: Option<String>,
    #[arg(long)]
    x0: Option<String>,
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    intensity: Option<String>,
    #[arg(long)]
    eps: Option<String>,
    #[arg(long)]
    m_level: Option<String>,
    #[arg(long)]
    theta: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    functional: Option<String>,
    #[arg(long)]
    g: Option<String>,
    #[arg(long)]
    estimator: Option<String>,
    #[arg(long)]
    n_paths: Option<String>,
    #[arg(long)]
    master_seed: Option<String>,
    #[arg(long)]
    expect_rate_dt: Option<String>,
    #[arg(long)]
    expect_rate_h: Option<String>,
    #[arg(long)]
    csv: Option<String>,
    #[arg(long)]
    json: Option<String>,
    #[arg(long)]
    gnuplot: Option<String>,
}

impl WeakOrderArgs {
    fn config_text(&self) -> Result<String> {
        let mut text = match &self.config {
            Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
            None => String::new(),
        };
        let overrides = [
            ("alpha", &self.alpha),
            ("beta", &self.beta),
            ("rho", &self.rho),
            ("modes", &self.modes),
            ("x0", &self.x0),
            ("horizon", &self.horizon),
            ("intensity", &self.intensity),
            ("eps", &self.eps),
            ("m_level", &self.m_level),
            ("theta", &self.theta),
            ("steps", &self.steps),
            ("levels", &self.levels),
            ("backend", &self.backend),
            ("functional", &self.functional),
            ("g", &self.g),
            ("estimator", &self.estimator),
            ("n_paths", &self.n_paths),
            ("master_seed", &self.master_seed),
            ("expect_rate_dt", &self.expect_rate_dt),
            ("expect_rate_h", &self.expect_rate_h),
            ("csv", &self.csv),
            ("json", &self.json),
            ("gnuplot", &self.gnuplot),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                text.push_str(&format!("\n{key} = {v}"));
            }
        }
        Ok(text)
    }
}

fn parse_backend(s: &str) -> Result<Backend> {
    let (kind, n) = s
        .split_once('-')
        .with_context(|| format!("backend '{s}' should look like spectral-64 or fem-128"))?;
    let n: usize = n.parse().with_context(|| format!("backend size in '{s}'"))?;
    Ok(match kind {
        "spectral" => Backend::SpectralCutoff { modes: n },
        "fem" => Backend::Fem { n_cells: n },
        _ => bail!("unknown backend '{kind}'"),
    })
}

fn parse_target(s: &str) -> Result<CharTarget> {
    let parts: Vec<&str> = s.split(':').collect();
    Ok(match parts.as_slice() {
        ["exact"] => CharTarget::Exact,
        ["semidiscrete", b] => CharTarget::Semidiscrete(parse_backend(b)?),
        ["full", b, theta, steps] => CharTarget::FullDiscrete {
            backend: parse_backend(b)?,
            theta: theta.parse().context("theta")?,
            steps: steps.parse().context("steps")?,
        },
        _ => bail!("unknown target '{s}'"),
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::CheckAssumptions {
            modes,
            rho,
            alpha,
            beta,
            intensity,
        } => {
            let spectrum = ModeSpectrum::dirichlet(modes, rho)?;
            let report = check_assumptions(&spectrum, alpha, beta)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            let mut ok = report.all_hold();
            for v in report.violations() {
                eprintln!("violated: {v}");
            }
            if let Some(spec) = intensity {
                spec.validate()?;
                let (nu0, nu) = (spec.satisfies_ass_nu0(), spec.satisfies_ass_nu());
                println!("intensity {spec}: finite second moment {nu0}, finite max(|σ|, σ²) moment {nu}");
                ok &= nu0;
            }
            Ok(ok)
        }
        Command::SamplePath {
            intensity,
            horizon,
            eps,
            seed,
            out,
        } => {
            let path = sample_path(&intensity, horizon, eps, seed)?;
            let text = path.to_text();
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            eprintln!("{} jumps", path.jumps().len());
            Ok(true)
        }
        Command::Simulate(a) => {
            let path = match &a.path {
                Some(p) => JumpPath::from_text(&std::fs::read_to_string(p)?)?,
                None => sample_path(&a.intensity, a.horizon, a.eps, a.seed)?,
            };
            let spectrum = ModeSpectrum::dirichlet(a.modes, a.rho)?;
            let cfg = SchemeConfig::new(
                a.theta,
                a.steps.max(1),
                path.horizon(),
                parse_backend(&a.backend)?,
                spectrum.zero_field(),
            );
            let x = if a.steps == 0 {
                run_semidiscrete(&cfg, &path, &spectrum, path.horizon())?
            } else {
                run_full_scheme(&cfg, &path, &spectrum)?
            };
            println!("{}", serde_json::to_string(&x)?);
            Ok(true)
        }
        Command::WeakOrder(a) => {
            if a.schema {
                for (k, v) in CONFIG_SCHEMA {
                    println!("{k} = {v}");
                }
                return Ok(true);
            }
            let cfg = StudyConfig::parse(&a.config_text()?)?;
            let report = run_study(&cfg)?;
            report.write_outputs()?;
            print!("{}", report.to_csv());
            for (label, fit) in [("rate_dt", report.rate_dt), ("rate_h", report.rate_h)] {
                if let Some(f) = fit {
                    println!("{label} = {:.4} ± {:.4} ({} points)", f.slope, f.conf_radius, f.n_points);
                }
            }
            println!(
                "gamma_max = {}, small-jump bias <= {:.3e}, big-jump bias <= {:.3e}",
                report.gamma_max, report.budget.small_jump_bound, report.budget.big_jump_bound
            );
            for c in &report.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            Ok(report.all_checks_pass())
        }
        Command::ExpansionCheck {
            intensity,
            steps,
            theta,
            horizon,
            x0,
            g,
            rho,
            n_paths,
            seed,
            sigmas,
        } => {
            let cfg = ExpansionConfig {
                theta,
                steps,
                horizon,
                x0,
                g,
                spec: intensity,
                spectrum: ModeSpectrum::dirichlet(1, rho)?,
                n_paths,
                master_seed: seed,
            };
            let r = expansion_check(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&r)?);
            let ok = r.passes(sigmas);
            println!(
                "{} |lhs - rhs| = {:.3e}, {sigmas} stderr = {:.3e}",
                if ok { "PASS" } else { "FAIL" },
                r.gap(),
                sigmas * r.mc_stderr
            );
            Ok(ok)
        }
        Command::Oracle {
            target,
            modes,
            rho,
            intensity,
            eps,
            horizon,
            xi0,
            weight,
        } => {
            let target = parse_target(&target)?;
            let model = OracleModel::new(ModeSpectrum::dirichlet(modes, rho)?, intensity, eps, horizon);
            let g = point_evaluation(modes, xi0, weight)?;
            let v = char_functional(target, &g, &model, &QuadratureOptions::default())?;
            println!("{}", serde_json::to_string_pretty(&OracleRecord::new(target, &g, &v))?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
