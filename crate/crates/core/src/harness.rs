//! Weak-error studies: configuration, estimators, rate fits and reports.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};
use crate::fem;
use crate::mc::{replicate, SampleStats};
use crate::noise::{sample_path, split_big_jumps, IntensitySpec, JumpPath};
use crate::oracle::{
    point_evaluation, weak_error_deterministic, CharTarget, FunctionalBounds, OracleModel, QuadratureOptions,
    TestFunctional,
};
use crate::schemes::{run_exact_mild, run_semidiscrete, run_stopped_scheme, Backend, FullScheme, SchemeConfig};
use crate::spectral::{check_assumptions, AssumptionReport, FieldState, ModeSpectrum};

/// Shape of the test functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FunctionalKind {
    Cos,
    Sin,
    ExpNegSq { c: f64 },
}

/// The weight `g` of linear trigonometric functionals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GSpec {
    /// `g_k = weight·ẽ_k(xi0)`.
    Point { xi0: f64, weight: f64 },
    /// `g = weight·ẽ_k`.
    Mode { k: usize, weight: f64 },
}

impl GSpec {
    pub fn field(&self, modes: usize) -> Result<FieldState> {
        match *self {
            GSpec::Point { xi0, weight } => point_evaluation(modes, xi0, weight),
            GSpec::Mode { k, weight } => {
                if k == 0 || k > modes {
                    return Err(invalid(format!("g mode {k} outside 1..={modes}")));
                }
                let mut c = vec![0.0; modes];
                c[k - 1] = weight;
                FieldState::spectral(c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum X0Spec {
    Zero,
    Mode { k: usize, amplitude: f64 },
    Coeffs(Vec<f64>),
}

impl X0Spec {
    pub fn field(&self, modes: usize) -> Result<FieldState> {
        let mut c = vec![0.0; modes];
        match self {
            X0Spec::Zero => {}
            X0Spec::Mode { k, amplitude } => {
                if *k == 0 || *k > modes {
                    return Err(invalid(format!("x0 mode {k} outside 1..={modes}")));
                }
                c[k - 1] = *amplitude;
            }
            X0Spec::Coeffs(v) => {
                if v.len() > modes {
                    return Err(invalid("x0 has more coefficients than noise modes"));
                }
                c[..v.len()].copy_from_slice(v);
            }
        }
        FieldState::spectral(c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepBackend {
    Spectral,
    Fem,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    OracleChar,
    MonteCarlo { n_paths: usize, master_seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    /// Noise modes `M`.
    pub modes: usize,
    pub x0: X0Spec,
    pub horizon: f64,
    pub intensity: IntensitySpec,
    pub eps: f64,
    /// Big-jump cap; `None` disables the splitting.
    pub m_level: Option<f64>,
    pub theta: f64,
    /// Time steps per run; `None` is the time-exact semidiscrete solution.
    pub steps: Vec<Option<usize>>,
    /// `J` for the spectral backend, cells for FEM.
    pub levels: Vec<usize>,
    pub backend: SweepBackend,
    pub functional: FunctionalKind,
    pub g: GSpec,
    pub estimator: Estimator,
    pub expect_rate_dt: Option<(f64, f64)>,
    pub expect_rate_h: Option<(f64, f64)>,
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    pub gnuplot: Option<PathBuf>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.35,
            rho: 0.35,
            modes: 256,
            x0: X0Spec::Zero,
            horizon: 1.0,
            intensity: IntensitySpec::SymmetricStable { index: 0.5, tau: 1.0 },
            eps: 0.0,
            m_level: None,
            theta: 1.0,
            steps: (4..=9).map(|p| Some(1usize << p)).collect(),
            levels: vec![256],
            backend: SweepBackend::Spectral,
            functional: FunctionalKind::Cos,
            g: GSpec::Point { xi0: 1.0 / 3.0, weight: 0.01 },
            estimator: Estimator::OracleChar,
            expect_rate_dt: None,
            expect_rate_h: None,
            csv: None,
            json: None,
            gnuplot: None,
        }
    }
}

/// Keys accepted by [`StudyConfig::parse`], with the expected value format.
pub const CONFIG_SCHEMA: &[(&str, &str)] = &[
    ("alpha", "number"),
    ("beta", "number"),
    ("rho", "number"),
    ("modes", "integer M"),
    ("x0", "zero | mode <k> <amplitude> | coeffs <c1,c2,...>"),
    ("horizon", "number T >= 1"),
    ("intensity", "one-sided-stable <index> <tau> | symmetric-stable <index> <tau> | finite-uniform <lo> <hi> <mass>"),
    ("eps", "number >= 0"),
    ("m_level", "number >= 1 | none"),
    ("theta", "number in [1/2, 1]"),
    ("steps", "comma list of integers or inf"),
    ("levels", "comma list of integers (J or cells)"),
    ("backend", "spectral | fem"),
    ("functional", "cos | sin | exp-neg-sq <c>"),
    ("g", "point <xi0> <weight> | mode <k> <weight>"),
    ("estimator", "oracle | mc"),
    ("n_paths", "integer"),
    ("master_seed", "integer"),
    ("expect_rate_dt", "<lo> <hi>"),
    ("expect_rate_h", "<lo> <hi>"),
    ("csv", "path"),
    ("json", "path"),
    ("gnuplot", "path"),
];

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.trim()
        .parse()
        .map_err(|e| invalid(format!("{key}: cannot parse '{v}': {e}")))
}

fn words(v: &str) -> Vec<&str> {
    v.split_whitespace().collect()
}

fn parse_window(key: &str, v: &str) -> Result<(f64, f64)> {
    let w = words(v);
    if w.len() != 2 {
        return Err(invalid(format!("{key}: expected '<lo> <hi>'")));
    }
    Ok((parse_num(key, w[0])?, parse_num(key, w[1])?))
}

impl StudyConfig {
    /// Parses `key = value` lines on top of the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let (mut n_paths, mut seed, mut mc) = (10_000usize, 0u64, false);
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected 'key = value', got '{line}'"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, &mut n_paths, &mut seed, &mut mc)
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
        }
        if mc {
            cfg.estimator = Estimator::MonteCarlo { n_paths, master_seed: seed };
        }
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, n_paths: &mut usize, seed: &mut u64, mc: &mut bool) -> Result<()> {
        match key {
            "alpha" => self.alpha = parse_num(key, v)?,
            "beta" => self.beta = parse_num(key, v)?,
            "rho" => self.rho = parse_num(key, v)?,
            "modes" => self.modes = parse_num(key, v)?,
            "horizon" => self.horizon = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "theta" => self.theta = parse_num(key, v)?,
            "intensity" => self.intensity = v.parse()?,
            "m_level" => {
                self.m_level = if v == "none" { None } else { Some(parse_num(key, v)?) };
            }
            "x0" => {
                let w = words(v);
                self.x0 = match w.as_slice() {
                    ["zero"] => X0Spec::Zero,
                    ["mode", k, a] => X0Spec::Mode {
                        k: parse_num(key, k)?,
                        amplitude: parse_num(key, a)?,
                    },
                    ["coeffs", list] => X0Spec::Coeffs(
                        list.split(',').map(|c| parse_num(key, c)).collect::<Result<_>>()?,
                    ),
                    _ => return Err(invalid(format!("x0: unrecognised '{v}'"))),
                };
            }
            "steps" => {
                self.steps = v
                    .split(',')
                    .map(|s| match s.trim() {
                        "inf" => Ok(None),
                        t => parse_num(key, t).map(Some),
                    })
                    .collect::<Result<_>>()?;
            }
            "levels" => {
                self.levels = v.split(',').map(|s| parse_num(key, s)).collect::<Result<_>>()?;
            }
            "backend" => {
                self.backend = match v {
                    "spectral" => SweepBackend::Spectral,
                    "fem" => SweepBackend::Fem,
                    _ => return Err(invalid(format!("backend: expected spectral or fem, got '{v}'"))),
                };
            }
            "functional" => {
                let w = words(v);
                self.functional = match w.as_slice() {
                    ["cos"] => FunctionalKind::Cos,
                    ["sin"] => FunctionalKind::Sin,
                    ["exp-neg-sq", c] => FunctionalKind::ExpNegSq { c: parse_num(key, c)? },
                    _ => return Err(invalid(format!("functional: unrecognised '{v}'"))),
                };
            }
            "g" => {
                let w = words(v);
                self.g = match w.as_slice() {
                    ["point", x, c] => GSpec::Point {
                        xi0: parse_num(key, x)?,
                        weight: parse_num(key, c)?,
                    },
                    ["mode", k, c] => GSpec::Mode {
                        k: parse_num(key, k)?,
                        weight: parse_num(key, c)?,
                    },
                    _ => return Err(invalid(format!("g: unrecognised '{v}'"))),
                };
            }
            "estimator" => {
                *mc = match v {
                    "oracle" => false,
                    "mc" => true,
                    _ => return Err(invalid(format!("estimator: expected oracle or mc, got '{v}'"))),
                };
                if !*mc {
                    self.estimator = Estimator::OracleChar;
                }
            }
            "n_paths" => *n_paths = parse_num(key, v)?,
            "master_seed" => *seed = parse_num(key, v)?,
            "expect_rate_dt" => self.expect_rate_dt = Some(parse_window(key, v)?),
            "expect_rate_h" => self.expect_rate_h = Some(parse_window(key, v)?),
            "csv" => self.csv = Some(PathBuf::from(v)),
            "json" => self.json = Some(PathBuf::from(v)),
            "gnuplot" => self.gnuplot = Some(PathBuf::from(v)),
            _ => return Err(invalid(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn spectrum(&self) -> Result<ModeSpectrum> {
        ModeSpectrum::dirichlet(self.modes, self.rho)
    }

    pub fn g_field(&self) -> Result<FieldState> {
        self.g.field(self.modes)
    }

    pub fn test_functional(&self) -> Result<TestFunctional> {
        Ok(match self.functional {
            FunctionalKind::Cos => TestFunctional::CosLinear { g: self.g_field()? },
            FunctionalKind::Sin => TestFunctional::SinLinear { g: self.g_field()? },
            FunctionalKind::ExpNegSq { c } => {
                if !(c > 0.0) {
                    return Err(invalid(format!("exp-neg-sq needs c > 0, got {c}")));
                }
                TestFunctional::ExpNegSq { c }
            }
        })
    }

    pub fn backend_at(&self, level: usize) -> Backend {
        match self.backend {
            SweepBackend::Spectral => Backend::SpectralCutoff { modes: level },
            SweepBackend::Fem => Backend::Fem { n_cells: level },
        }
    }

    /// Checks the structural requirements and the operator/noise assumptions.
    pub fn validate(&self) -> Result<AssumptionReport> {
        if !(self.horizon >= 1.0 && self.horizon.is_finite()) {
            return Err(Error::AssumptionViolated(format!(
                "horizon T = {} must satisfy T >= 1",
                self.horizon
            )));
        }
        if self.steps.is_empty() || self.levels.is_empty() {
            return Err(invalid("need at least one steps value and one level"));
        }
        for s in self.steps.iter().flatten() {
            if *s == 0 {
                return Err(invalid("steps must be >= 1"));
            }
            if self.horizon / *s as f64 > 1.0 {
                return Err(Error::AssumptionViolated(format!(
                    "dt = T/N = {} exceeds 1",
                    self.horizon / *s as f64
                )));
            }
        }
        fem::check_theta(self.theta)?;
        self.intensity.validate()?;
        if let Some(m) = self.m_level {
            if !(m >= 1.0) {
                return Err(invalid(format!("m_level must be >= 1, got {m}")));
            }
        }
        let spectrum = self.spectrum()?;
        let report = check_assumptions(&spectrum, self.alpha, self.beta)?;
        if !report.all_hold() {
            return Err(Error::AssumptionViolated(report.violations().join("; ")));
        }
        for &l in &self.levels {
            let cfg = SchemeConfig::new(self.theta, 1, self.horizon, self.backend_at(l), self.x0.field(self.modes)?);
            cfg.validate(&spectrum)?;
        }
        self.test_functional()?;
        Ok(report)
    }
}

/// `h` of a grid level: `1/(Jπ)` for the spectral cutoff, the mesh width for FEM.
pub fn level_h(backend: Backend) -> f64 {
    match backend {
        Backend::SpectralCutoff { modes } => 1.0 / (modes as f64 * PI),
        Backend::Fem { n_cells } => 1.0 / n_cells as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub conf_radius: f64,
    pub n_points: usize,
}

impl RateFit {
    pub fn within(&self, window: (f64, f64)) -> bool {
        self.slope >= window.0 && self.slope <= window.1
    }
}

/// Least squares on `(ln scale, ln error)`.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(s, e)| *s > 0.0 && *e > 0.0 && s.is_finite() && e.is_finite())
        .map(|(s, e)| (s.ln(), e.ln()))
        .collect();
    let n = pts.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "rate fit needs at least 3 points with positive error, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData("rate fit needs distinct scales".into()));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let se = (rss / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(1.96);
    Ok(RateFit {
        slope,
        intercept,
        conf_radius: t * se,
        n_points: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBudget {
    pub small_jump_bound: f64,
    pub big_jump_bound: f64,
}

/// Weak bias from dropping jumps below `eps` and from stopping at the first jump above `m`.
pub fn bias_budget(
    spec: &IntensitySpec,
    eps: f64,
    m: Option<f64>,
    bounds: &FunctionalBounds,
    horizon: f64,
    spectrum: &ModeSpectrum,
) -> Result<BiasBudget> {
    let big_jump_bound = match m {
        Some(m) => 2.0 * bounds.sup * (horizon * spec.tail_mass(m)?).min(1.0),
        None => 0.0,
    };
    let small_jump_bound = if eps > 0.0 {
        let m2 = spec.moments(0.0, eps)?.m2;
        let trace: f64 = spectrum
            .lambdas()
            .iter()
            .zip(spectrum.qs())
            .map(|(l, q)| q / (2.0 * l))
            .sum();
        0.5 * bounds.hessian * m2 * trace
    } else {
        0.0
    };
    Ok(BiasBudget {
        small_jump_bound,
        big_jump_bound,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub h: f64,
    /// `0` marks the time-exact semidiscrete solution.
    pub dt: f64,
    pub steps: Option<usize>,
    pub level: usize,
    pub theta: f64,
    pub estimator: String,
    /// `Eφ(approx) − Eφ(X_T)`.
    pub signed: f64,
    pub error: f64,
    pub uncertainty: f64,
    pub n_paths_or_tol: f64,
}

impl ErrorRow {
    pub fn resolved(&self) -> bool {
        self.error > 5.0 * self.uncertainty
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakErrorReport {
    pub config: StudyConfig,
    pub rows: Vec<ErrorRow>,
    pub rate_dt: Option<RateFit>,
    pub rate_h: Option<RateFit>,
    pub gamma_max: f64,
    pub budget: BiasBudget,
    pub assumptions: AssumptionReport,
    pub checks: Vec<CheckOutcome>,
}

impl WeakErrorReport {
    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("h,dt,theta,estimator,error,uncertainty,n_paths_or_tol\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:.10e},{:.10e},{},{},{:.10e},{:.10e},{:e}",
                r.h, r.dt, r.theta, r.estimator, r.error, r.uncertainty, r.n_paths_or_tol
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// A gnuplot script that plots the CSV at `csv_path` on log-log axes.
    pub fn gnuplot_script(&self, csv_path: &str) -> String {
        let dt_axis = self.rate_dt.is_some() || self.rows.iter().all(|r| r.h == self.rows[0].h);
        let (col, label) = if dt_axis { (2, "dt") } else { (1, "h") };
        let mut s = String::new();
        let _ = writeln!(s, "set datafile separator ','");
        let _ = writeln!(s, "set logscale xy");
        let _ = writeln!(s, "set xlabel '{label}'");
        let _ = writeln!(s, "set ylabel 'weak error'");
        let _ = writeln!(s, "set key left top");
        let _ = write!(
            s,
            "plot '{csv_path}' every ::1 using {col}:5:6 with yerrorbars title 'error'"
        );
        if let Some(f) = if dt_axis { self.rate_dt } else { self.rate_h } {
            let _ = write!(
                s,
                ", exp({:.6}) * x**{:.6} with lines title 'slope {:.3}'",
                f.intercept, f.slope, f.slope
            );
        }
        s.push('\n');
        s
    }

    /// Writes the outputs named in the configuration.
    pub fn write_outputs(&self) -> Result<()> {
        if let Some(p) = &self.config.csv {
            std::fs::write(p, self.to_csv())?;
        }
        if let Some(p) = &self.config.json {
            std::fs::write(p, self.to_json()?)?;
        }
        if let Some(p) = &self.config.gnuplot {
            let csv = self
                .config
                .csv
                .as_ref()
                .map_or_else(|| "errors.csv".to_string(), |c| c.display().to_string());
            std::fs::write(p, self.gnuplot_script(&csv))?;
        }
        Ok(())
    }
}

struct GridPoint {
    level: usize,
    steps: Option<usize>,
    cfg: SchemeConfig,
}

fn grid(cfg: &StudyConfig, x0: &FieldState) -> Vec<GridPoint> {
    let mut out = Vec::new();
    for &level in &cfg.levels {
        for &steps in &cfg.steps {
            out.push(GridPoint {
                level,
                steps,
                cfg: SchemeConfig::new(cfg.theta, steps.unwrap_or(1), cfg.horizon, cfg.backend_at(level), x0.clone()),
            });
        }
    }
    out
}

/// Evaluates `φ` on spectral or FEM states.
struct Probe {
    functional: TestFunctional,
    /// `⟨v, g⟩ = v · dual` for FEM nodal vectors.
    dual: Option<Vec<f64>>,
}

impl Probe {
    fn new(functional: &TestFunctional, backend: Backend) -> Result<Self> {
        let dual = match (backend, functional.g()) {
            (Backend::Fem { n_cells }, Some(g)) => {
                let (mesh, _) = fem::assemble(n_cells)?;
                let mut d = vec![0.0; mesh.dim()];
                for (k, gk) in g.coeffs().iter().enumerate() {
                    if *gk != 0.0 {
                        for (di, li) in d.iter_mut().zip(fem::sine_load(&mesh, k + 1)) {
                            *di += gk * li;
                        }
                    }
                }
                Some(d)
            }
            _ => None,
        };
        Ok(Self {
            functional: functional.clone(),
            dual,
        })
    }

    fn eval(&self, x: &FieldState) -> Result<f64> {
        match (&self.dual, &self.functional) {
            (Some(d), TestFunctional::CosLinear { .. }) => Ok(dot(d, x.coeffs()).cos()),
            (Some(d), TestFunctional::SinLinear { .. }) => Ok(dot(d, x.coeffs()).sin()),
            _ => self.functional.eval(x),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn estimator_name(e: &Estimator) -> &'static str {
    match e {
        Estimator::OracleChar => "oracle",
        Estimator::MonteCarlo { .. } => "mc",
    }
}

/// Runs every grid point of the study and fits the rates.
pub fn run_study(cfg: &StudyConfig) -> Result<WeakErrorReport> {
    let assumptions = cfg.validate()?;
    let spectrum = cfg.spectrum()?;
    let x0 = cfg.x0.field(cfg.modes)?;
    let functional = cfg.test_functional()?;
    let points = grid(cfg, &x0);
    let name = estimator_name(&cfg.estimator).to_string();

    let mut rows = Vec::with_capacity(points.len());
    match cfg.estimator {
        Estimator::OracleChar => {
            if cfg.m_level.is_some() {
                return Err(Error::Unsupported(
                    "the oracle estimator needs finite second moments; big-jump splitting is Monte Carlo only".into(),
                ));
            }
            let model = OracleModel::new(spectrum.clone(), cfg.intensity, cfg.eps, cfg.horizon).with_x0(x0.clone())?;
            let opts = QuadratureOptions::default();
            for p in &points {
                let backend = p.cfg.backend;
                let target = match p.steps {
                    None => CharTarget::Semidiscrete(backend),
                    Some(steps) => CharTarget::FullDiscrete {
                        backend,
                        theta: cfg.theta,
                        steps,
                    },
                };
                let w = weak_error_deterministic(&functional, target, &model, &opts)?;
                rows.push(ErrorRow {
                    h: level_h(backend),
                    dt: p.steps.map_or(0.0, |n| cfg.horizon / n as f64),
                    steps: p.steps,
                    level: p.level,
                    theta: cfg.theta,
                    estimator: name.clone(),
                    signed: w.signed,
                    error: w.error,
                    uncertainty: w.tol,
                    n_paths_or_tol: w.tol,
                });
            }
        }
        Estimator::MonteCarlo { n_paths, master_seed } => {
            let stats = monte_carlo(cfg, &spectrum, &x0, &functional, &points, n_paths, master_seed)?;
            for (p, s) in points.iter().zip(stats) {
                rows.push(ErrorRow {
                    h: level_h(p.cfg.backend),
                    dt: p.steps.map_or(0.0, |n| cfg.horizon / n as f64),
                    steps: p.steps,
                    level: p.level,
                    theta: cfg.theta,
                    estimator: name.clone(),
                    signed: s.mean,
                    error: s.mean.abs(),
                    uncertainty: s.stderr,
                    n_paths_or_tol: n_paths as f64,
                });
            }
        }
    }

    let fit_axis = |by_dt: bool| -> Option<RateFit> {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.resolved())
            .filter(|r| if by_dt { r.steps.is_some() } else { true })
            .map(|r| (if by_dt { r.dt } else { r.h }, r.error))
            .collect();
        fit_rate(&pts).ok()
    };
    let finite_steps = cfg.steps.iter().filter(|s| s.is_some()).count();
    let rate_dt = if cfg.levels.len() == 1 && finite_steps >= 3 { fit_axis(true) } else { None };
    let rate_h = if cfg.steps.len() == 1 && cfg.levels.len() >= 3 { fit_axis(false) } else { None };

    let budget = bias_budget(
        &cfg.intensity,
        cfg.eps,
        cfg.m_level,
        &functional.bounds(),
        cfg.horizon,
        &spectrum,
    )?;

    let mut checks = Vec::new();
    for (label, window, fit) in [
        ("rate_dt", cfg.expect_rate_dt, rate_dt),
        ("rate_h", cfg.expect_rate_h, rate_h),
    ] {
        if let Some(w) = window {
            let (passed, detail) = match fit {
                Some(f) => (
                    f.within(w),
                    format!("slope {:.4} ± {:.4} against [{}, {}]", f.slope, f.conf_radius, w.0, w.1),
                ),
                None => (false, "not enough resolved rows to fit".to_string()),
            };
            checks.push(CheckOutcome {
                name: label.to_string(),
                passed,
                detail,
            });
        }
    }

    Ok(WeakErrorReport {
        config: cfg.clone(),
        rows,
        rate_dt,
        rate_h,
        gamma_max: assumptions.gamma_max.unwrap_or(f64::NAN),
        budget,
        assumptions,
        checks,
    })
}

/// Common-path differences `φ(X_h^N) − φ(X_T)` for every grid point.
fn monte_carlo(
    cfg: &StudyConfig,
    spectrum: &ModeSpectrum,
    x0: &FieldState,
    functional: &TestFunctional,
    points: &[GridPoint],
    n_paths: usize,
    master_seed: u64,
) -> Result<Vec<SampleStats>> {
    if n_paths < 2 {
        return Err(invalid("Monte Carlo needs at least two paths"));
    }
    let engines: Vec<Option<FullScheme>> = points
        .iter()
        .map(|p| p.steps.map(|_| FullScheme::new(&p.cfg, spectrum)).transpose())
        .collect::<Result<_>>()?;
    let probes: Vec<Probe> = points
        .iter()
        .map(|p| Probe::new(functional, p.cfg.backend))
        .collect::<Result<_>>()?;
    let exact_probe = Probe::new(functional, Backend::SpectralCutoff { modes: cfg.modes })?;
    let m = cfg.modes;

    let per_path = replicate(n_paths, master_seed, |_, seed| {
        let raw = sample_path(&cfg.intensity, cfg.horizon, cfg.eps, seed)?;
        let (reference_path, split) = match cfg.m_level {
            None => (raw, None),
            Some(level) => {
                let split = split_big_jumps(&cfg.intensity, &raw, level, spectrum)?;
                let driver = JumpPath::custom(
                    raw.horizon(),
                    raw.eps(),
                    f64::INFINITY,
                    split.small.comp_rate(),
                    raw.jumps().to_vec(),
                )?;
                (driver, Some(split))
            }
        };
        let exact = run_exact_mild(&reference_path, spectrum, m, x0, cfg.horizon)?;
        let phi_exact = exact_probe.eval(&exact)?;
        let mut diffs = Vec::with_capacity(points.len());
        for ((p, engine), probe) in points.iter().zip(&engines).zip(&probes) {
            let approx = match (engine, &split) {
                (Some(_), Some(split)) => run_stopped_scheme(&p.cfg, split, spectrum)?.x,
                (Some(e), None) => e.run(&reference_path)?,
                (None, Some(split)) => run_semidiscrete(&p.cfg, &split.stopped_driver()?, spectrum, cfg.horizon)?,
                (None, None) => run_semidiscrete(&p.cfg, &reference_path, spectrum, cfg.horizon)?,
            };
            diffs.push(probe.eval(&approx)? - phi_exact);
        }
        Ok(diffs)
    })?;
    Ok((0..points.len())
        .map(|i| {
            let col: Vec<f64> = per_path.iter().map(|d| d[i]).collect();
            SampleStats::from_samples(&col)
        })
        .collect())
}
