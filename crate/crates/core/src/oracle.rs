//! Deterministic ground truth: second moments, characteristic functionals by
//! quadrature, the one-mode value function and the error-expansion check.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fem;
use crate::mc::{replicate, SampleStats};
use crate::noise::{sample_path, IntensitySpec};
use crate::quad::{composite, Chebyshev, GaussLegendre};
use crate::schemes::{rational_factors, run_full_scheme, run_semidiscrete, Backend, SchemeConfig};
use crate::spectral::{basis_integral, basis_row, basis_value, Basis, FieldState, ModeSpectrum};

const SERIES_TERMS: usize = 40;
const SERIES_RADIUS: f64 = 2.0;

/// `e^{iz} − 1 − iz`.
pub fn kappa(z: f64) -> Complex64 {
    if z.abs() < 0.5 {
        let mut term = Complex64::new(1.0, 0.0);
        let mut sum = Complex64::new(0.0, 0.0);
        let iz = Complex64::new(0.0, z);
        for n in 1..=22 {
            term = term * iz / n as f64;
            if n >= 2 {
                sum += term;
            }
        }
        sum
    } else {
        let (s, c) = z.sin_cos();
        Complex64::new(c - 1.0, s - z)
    }
}

/// `e^z − 1` without cancellation for small `z`.
pub fn complex_expm1(z: Complex64) -> Complex64 {
    let em1 = z.re.exp_m1();
    let (s, c) = z.im.sin_cos();
    let half = (0.5 * z.im).sin();
    Complex64::new(em1 * c - 2.0 * half * half, z.re.exp() * s)
}

/// The compensated jump symbol `K(f) = ∫_{|σ|≥eps} (e^{iσf} − 1 − iσf) ν(dσ)`.
#[derive(Debug, Clone)]
pub struct LevySymbol {
    spec: IntensitySpec,
    eps: f64,
    upper: f64,
    series: Vec<Complex64>,
    gauss: GaussLegendre,
}

impl LevySymbol {
    pub fn new(spec: &IntensitySpec, eps: f64) -> Result<Self> {
        spec.validate()?;
        if !(eps >= 0.0) {
            return Err(invalid(format!("eps must be >= 0, got {eps}")));
        }
        let upper = spec.upper();
        if eps < upper {
            let m2 = spec.moments(eps, upper)?.m2;
            if !m2.is_finite() {
                return Err(invalid(
                    "second moment of the truncated intensity is infinite; \
                     use the big-jump splitting",
                ));
            }
            if !upper.is_finite() {
                return Err(Error::Unsupported(
                    "characteristic functionals need a bounded jump support".into(),
                ));
            }
        }
        let mut series = vec![Complex64::new(0.0, 0.0); SERIES_TERMS + 1];
        if eps < upper {
            let mut fact = 1.0;
            for (n, c) in series.iter_mut().enumerate().skip(1) {
                fact *= n as f64;
                if n >= 2 {
                    let i_pow = Complex64::new(0.0, 1.0).powu(n as u32);
                    *c = i_pow * (spec.raw_moment(n as u32, eps, upper) / fact);
                }
            }
        }
        Ok(Self {
            spec: *spec,
            eps,
            upper,
            series,
            gauss: GaussLegendre::new(12),
        })
    }

    pub fn eval(&self, f: f64) -> Complex64 {
        if self.eps >= self.upper || f == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        if f.abs() * self.upper <= SERIES_RADIUS {
            return self.series_eval(f);
        }
        match self.spec {
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
                let d = total_mass / (hi - lo);
                let mut acc = Complex64::new(0.0, 0.0);
                for (l, u) in [(lo.max(self.eps), hi), (lo, hi.min(-self.eps))] {
                    if u > l {
                        acc += self.panels(l, u, f, false, |_| d);
                    }
                }
                acc
            }
            IntensitySpec::OneSidedStable { index, .. } | IntensitySpec::SymmetricStable { index, .. } => {
                let delta = SERIES_RADIUS / f.abs();
                let mut acc = Complex64::new(0.0, 0.0);
                if self.eps < delta {
                    let mut fact = 1.0;
                    let i = Complex64::new(0.0, 1.0);
                    for n in 1..=SERIES_TERMS {
                        fact *= n as f64;
                        if n >= 2 {
                            let m = self.spec.raw_moment(n as u32, self.eps, delta);
                            acc += (i * f).powu(n as u32) * (m / fact);
                        }
                    }
                }
                let start = self.eps.max(delta);
                let outer = self.panels(start, self.upper, f, true, |s| s.powf(-1.0 - index));
                if matches!(self.spec, IntensitySpec::SymmetricStable { .. }) {
                    acc + Complex64::new(2.0 * outer.re, 0.0)
                } else {
                    acc + outer
                }
            }
        }
    }

    fn series_eval(&self, f: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for c in self.series.iter().rev() {
            acc = acc * f + c;
        }
        acc
    }

    /// `∫_a^b κ(σf) density(σ) dσ` on panels of width at most `2/|f|`; `geometric`
    /// additionally caps the ratio of panel ends at 2 for power-law densities on `a > 0`.
    fn panels<D: Fn(f64) -> f64>(&self, a: f64, b: f64, f: f64, geometric: bool, density: D) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        let max_width = SERIES_RADIUS / f.abs();
        let mut lo = a;
        while lo < b {
            let mut hi = (lo + max_width).min(b);
            if geometric && lo > 0.0 {
                hi = hi.min(2.0 * lo);
            }
            for (s, w) in self.gauss.mapped(lo, hi) {
                acc += kappa(s * f) * (w * density(s));
            }
            lo = hi;
        }
        acc
    }
}

/// Test functional `φ` on `H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunctional {
    /// `cos⟨x, g⟩`.
    CosLinear { g: FieldState },
    /// `sin⟨x, g⟩`.
    SinLinear { g: FieldState },
    /// `exp(−c|x|²)`.
    ExpNegSq { c: f64 },
}

/// Sup-norm bounds of `φ`, `Dφ` and `D²φ` (operator norm for the Hessian).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalBounds {
    pub sup: f64,
    pub grad: f64,
    pub hessian: f64,
}

/// Sine coefficients `c·ẽ_k(ξ0)` of the truncated point evaluation at `ξ0`.
pub fn point_evaluation(modes: usize, xi0: f64, c: f64) -> Result<FieldState> {
    if !(xi0 > 0.0 && xi0 < 1.0) {
        return Err(invalid(format!("evaluation point {xi0} outside (0,1)")));
    }
    FieldState::spectral((1..=modes).map(|k| c * basis_value(k, xi0)).collect())
}

impl TestFunctional {
    pub fn bounds(&self) -> FunctionalBounds {
        match self {
            TestFunctional::CosLinear { g } | TestFunctional::SinLinear { g } => {
                let n2 = g.h_norm_sq();
                FunctionalBounds {
                    sup: 1.0,
                    grad: n2.sqrt(),
                    hessian: n2,
                }
            }
            TestFunctional::ExpNegSq { c } => FunctionalBounds {
                sup: 1.0,
                grad: (2.0 * c).sqrt() * (-0.5f64).exp(),
                hessian: 2.0 * c,
            },
        }
    }

    /// `φ(x)` for a spectral field.
    pub fn eval(&self, x: &FieldState) -> Result<f64> {
        match self {
            TestFunctional::CosLinear { g } => Ok(x.spectral_dot(g)?.cos()),
            TestFunctional::SinLinear { g } => Ok(x.spectral_dot(g)?.sin()),
            TestFunctional::ExpNegSq { c } => Ok((-c * x.h_norm_sq()).exp()),
        }
    }

    pub fn g(&self) -> Option<&FieldState> {
        match self {
            TestFunctional::CosLinear { g } | TestFunctional::SinLinear { g } => Some(g),
            TestFunctional::ExpNegSq { .. } => None,
        }
    }
}

/// `E|∫₀ᵀ S(T−s)Q^{1/2} dZ_s|²`.
pub fn second_moment(spectrum: &ModeSpectrum, spec: &IntensitySpec, eps: f64, horizon: f64) -> Result<f64> {
    if !(horizon >= 0.0) {
        return Err(invalid(format!("horizon must be >= 0, got {horizon}")));
    }
    let upper = spec.upper();
    let m2 = if eps < upper { spec.moments(eps, upper)?.m2 } else { 0.0 };
    if !m2.is_finite() {
        return Err(invalid(
            "second moment of the truncated intensity is infinite; use the big-jump splitting",
        ));
    }
    let sum: f64 = spectrum
        .lambdas()
        .iter()
        .zip(spectrum.qs())
        .map(|(l, q)| q * -(-2.0 * l * horizon).exp_m1() / (2.0 * l))
        .sum();
    Ok(m2 * sum)
}

/// What the characteristic functional is taken of.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CharTarget {
    /// `X_T` with the `M`-mode noise.
    Exact,
    /// `X_{h,T}`.
    Semidiscrete(Backend),
    /// `X_h^N`.
    FullDiscrete { backend: Backend, theta: f64, steps: usize },
}

impl std::fmt::Display for CharTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = |b: &Backend| match b {
            Backend::SpectralCutoff { modes } => format!("spectral:{modes}"),
            Backend::Fem { n_cells } => format!("fem:{n_cells}"),
        };
        match self {
            CharTarget::Exact => write!(f, "exact"),
            CharTarget::Semidiscrete(be) => write!(f, "semidiscrete({})", b(be)),
            CharTarget::FullDiscrete { backend, theta, steps } => {
                write!(f, "full({}, theta={theta}, steps={steps})", b(backend))
            }
        }
    }
}

/// Model data shared by every oracle evaluation.
#[derive(Debug, Clone)]
pub struct OracleModel {
    /// Noise modes `M` = `spectrum.len()`.
    pub spectrum: ModeSpectrum,
    pub spec: IntensitySpec,
    pub eps: f64,
    pub horizon: f64,
    pub x0: FieldState,
}

impl OracleModel {
    pub fn new(spectrum: ModeSpectrum, spec: IntensitySpec, eps: f64, horizon: f64) -> Self {
        let x0 = spectrum.zero_field();
        Self {
            spectrum,
            spec,
            eps,
            horizon,
            x0,
        }
    }

    pub fn with_x0(mut self, x0: FieldState) -> Result<Self> {
        if x0.basis() != Basis::Spectral(self.spectrum.len()) {
            return Err(invalid("initial value must be a spectral field with M modes"));
        }
        self.x0 = x0;
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureOptions {
    pub xi_order: usize,
    pub time_order: usize,
    /// Target for the absolute change of the exponent between two refinement levels.
    pub tol: f64,
    pub max_level: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self {
            xi_order: 6,
            time_order: 8,
            tol: 1e-12,
            max_level: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharValue {
    /// `i⟨deterministic part, g⟩ + ∫∫ K(f) ds dξ`.
    pub exponent: Complex64,
    pub value: Complex64,
    /// Refinement estimate of the exponent error.
    pub tol: f64,
}

/// Discrete modes of the target: rates, noise-to-mode weights and deterministic amplitudes.
struct ModalMap {
    rates: Vec<f64>,
    /// `weights[m][k]` for the noise mode `k`; diagonal maps store one entry per row.
    weights: Vec<Vec<f64>>,
    diagonal: bool,
    det: Vec<f64>,
    noise_modes: usize,
}

impl ModalMap {
    fn build(backend: Backend, g: &FieldState, model: &OracleModel) -> Result<Self> {
        let m = model.spectrum.len();
        let sq: Vec<f64> = model.spectrum.qs().iter().map(|q| q.sqrt()).collect();
        let gc = g.coeffs();
        let x0 = model.x0.coeffs();
        match backend {
            Backend::SpectralCutoff { modes } => {
                let j = modes.min(m);
                Ok(Self {
                    rates: model.spectrum.lambdas()[..j].to_vec(),
                    weights: (0..j).map(|k| vec![sq[k] * gc[k]]).collect(),
                    diagonal: true,
                    det: (0..j).map(|k| x0[k] * gc[k]).collect(),
                    noise_modes: j,
                })
            }
            Backend::Fem { n_cells } => {
                let (mesh, _) = fem::assemble(n_cells)?;
                let modes = fem::discrete_modes(&mesh);
                let p = modes.project_loads(&fem::sine_loads(&mesh, m));
                let mut weights = Vec::with_capacity(p.len());
                let mut det = Vec::with_capacity(p.len());
                for row in &p {
                    let b: f64 = row.iter().zip(gc).map(|(a, c)| a * c).sum();
                    let x: f64 = row.iter().zip(x0).map(|(a, c)| a * c).sum();
                    weights.push((0..m).map(|k| sq[k] * row[k] * b).collect());
                    det.push(x * b);
                }
                Ok(Self {
                    rates: modes.rates,
                    weights,
                    diagonal: false,
                    det,
                    noise_modes: m,
                })
            }
        }
    }

    /// `c_k = Σ_m w_m W[m][k]`, returns the number of leading entries worth keeping.
    fn combine(&self, w: &[f64], c: &mut [f64]) -> usize {
        c.iter_mut().for_each(|v| *v = 0.0);
        if self.diagonal {
            for (k, (wm, row)) in w.iter().zip(&self.weights).enumerate() {
                c[k] = wm * row[0];
            }
        } else {
            for (wm, row) in w.iter().zip(&self.weights) {
                if *wm != 0.0 {
                    for (ck, r) in c.iter_mut().zip(row) {
                        *ck += wm * r;
                    }
                }
            }
        }
        let cmax = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if cmax == 0.0 {
            return 0;
        }
        c.iter().rposition(|v| v.abs() > 1e-18 * cmax).map_or(0, |i| i + 1)
    }
}

struct XiGrid {
    weights: Vec<f64>,
    /// Row-major `nodes × modes` basis values.
    basis: Vec<f64>,
    modes: usize,
}

impl XiGrid {
    fn new(panels: usize, order: usize, modes: usize) -> Self {
        let pts = composite(0.0, 1.0, panels, order);
        let mut basis = vec![0.0; pts.len() * modes];
        for (i, (x, _)) in pts.iter().enumerate() {
            basis_row(*x, &mut basis[i * modes..(i + 1) * modes]);
        }
        Self {
            weights: pts.iter().map(|p| p.1).collect(),
            basis,
            modes,
        }
    }

    /// `∫₀¹ K(Σ_k c_k ẽ_k(ξ)) dξ` using the first `kmax` modes.
    fn integrate(&self, c: &[f64], kmax: usize, symbol: &LevySymbol) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        if kmax == 0 {
            return acc;
        }
        for (i, w) in self.weights.iter().enumerate() {
            let row = &self.basis[i * self.modes..i * self.modes + kmax];
            let f: f64 = row.iter().zip(&c[..kmax]).map(|(b, ck)| b * ck).sum();
            acc += symbol.eval(f) * *w;
        }
        acc
    }
}

enum TimeRule {
    Continuous,
    Discrete { theta: f64, steps: usize },
}

fn stochastic_exponent(
    map: &ModalMap,
    rule: &TimeRule,
    symbol: &LevySymbol,
    horizon: f64,
    xi: &XiGrid,
    time_order: usize,
    level: usize,
) -> Complex64 {
    let nm = map.rates.len();
    let mut w = vec![0.0; nm];
    let mut c = vec![0.0; map.noise_modes];
    let mut acc = Complex64::new(0.0, 0.0);
    match *rule {
        TimeRule::Continuous => {
            let mu_max = map.rates.iter().fold(0.0f64, |a, &b| a.max(b));
            let r0 = (0.01 / mu_max).min(horizon);
            let mut edges = vec![0.0, r0];
            while *edges.last().unwrap() < horizon {
                let next = (edges.last().unwrap() * 2.0).min(horizon);
                edges.push(next);
            }
            let rule = GaussLegendre::new(time_order);
            let sub = 1usize << level;
            for e in edges.windows(2) {
                let width = (e[1] - e[0]) / sub as f64;
                for p in 0..sub {
                    let a = e[0] + p as f64 * width;
                    for (r, wt) in rule.mapped(a, a + width) {
                        for (wm, mu) in w.iter_mut().zip(&map.rates) {
                            *wm = (-mu * r).exp();
                        }
                        let kmax = map.combine(&w, &mut c);
                        acc += xi.integrate(&c, kmax, symbol) * wt;
                    }
                }
            }
        }
        TimeRule::Discrete { theta, steps } => {
            let dt = horizon / steps as f64;
            let (s, t): (Vec<f64>, Vec<f64>) =
                map.rates.iter().map(|&mu| rational_factors(theta, dt, mu)).unzip();
            let mut pw = vec![1.0; nm];
            let mut first_max = 0.0;
            for j in 0..steps {
                for m in 0..nm {
                    w[m] = pw[m] * t[m];
                }
                let kmax = map.combine(&w, &mut c);
                let cmax = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if j == 0 {
                    first_max = cmax;
                } else if cmax <= 1e-12 * first_max {
                    break;
                }
                acc += xi.integrate(&c, kmax, symbol) * dt;
                for m in 0..nm {
                    pw[m] *= s[m];
                }
            }
        }
    }
    acc
}

fn target_parts(target: CharTarget, model: &OracleModel) -> Result<(Backend, TimeRule)> {
    let m = model.spectrum.len();
    Ok(match target {
        CharTarget::Exact => (Backend::SpectralCutoff { modes: m }, TimeRule::Continuous),
        CharTarget::Semidiscrete(b) => (b, TimeRule::Continuous),
        CharTarget::FullDiscrete { backend, theta, steps } => {
            crate::fem::check_theta(theta)?;
            if steps == 0 {
                return Err(invalid("need at least one time step"));
            }
            (backend, TimeRule::Discrete { theta, steps })
        }
    })
}

/// `E e^{i⟨X, g⟩}` for the chosen target.
pub fn char_functional(
    target: CharTarget,
    g: &FieldState,
    model: &OracleModel,
    opts: &QuadratureOptions,
) -> Result<CharValue> {
    let m = model.spectrum.len();
    if g.basis() != Basis::Spectral(m) {
        return Err(invalid("g must be a spectral field with M modes"));
    }
    if !(model.horizon > 0.0) {
        return Err(invalid("horizon must be > 0"));
    }
    let symbol = LevySymbol::new(&model.spec, model.eps)?;
    let (backend, rule) = target_parts(target, model)?;
    let map = ModalMap::build(backend, g, model)?;

    let det: f64 = match rule {
        TimeRule::Continuous => map
            .rates
            .iter()
            .zip(&map.det)
            .map(|(mu, d)| (-mu * model.horizon).exp() * d)
            .sum(),
        TimeRule::Discrete { theta, steps } => {
            let dt = model.horizon / steps as f64;
            map.rates
                .iter()
                .zip(&map.det)
                .map(|(&mu, d)| rational_factors(theta, dt, mu).0.powi(steps as i32) * d)
                .sum()
        }
    };

    let active = (0..map.noise_modes)
        .rev()
        .find(|&k| {
            if map.diagonal {
                map.weights[k][0] != 0.0
            } else {
                map.weights.iter().any(|row| row[k] != 0.0)
            }
        })
        .map_or(1, |k| k + 1);
    let base_panels = (2 * active).max(64);
    let eval = |level: usize| {
        let xi = XiGrid::new(base_panels << level, opts.xi_order, map.noise_modes);
        stochastic_exponent(&map, &rule, &symbol, model.horizon, &xi, opts.time_order, level)
    };
    let mut prev = eval(0);
    let mut tol = f64::INFINITY;
    for level in 1..=opts.max_level.max(1) {
        let next = eval(level);
        tol = (next - prev).norm();
        prev = next;
        if tol <= opts.tol {
            break;
        }
    }
    if tol > opts.tol {
        return Err(Error::Quadrature {
            target: opts.tol,
            achieved: tol,
        });
    }
    let exponent = prev + Complex64::new(0.0, det);
    Ok(CharValue {
        exponent,
        value: exponent.exp(),
        tol,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakError {
    /// `Eφ(approx) − Eφ(X_T)`.
    pub signed: f64,
    pub error: f64,
    pub tol: f64,
    pub exact: CharValue,
    pub approx: CharValue,
}

/// `|Eφ(X_h^N) − Eφ(X_T)|` for linear trigonometric `φ`, without Monte Carlo noise.
pub fn weak_error_deterministic(
    functional: &TestFunctional,
    target: CharTarget,
    model: &OracleModel,
    opts: &QuadratureOptions,
) -> Result<WeakError> {
    let g = functional.g().ok_or_else(|| {
        Error::Unsupported("deterministic weak errors need a cosine or sine functional".into())
    })?;
    let exact = char_functional(CharTarget::Exact, g, model, opts)?;
    let approx = char_functional(target, g, model, opts)?;
    Ok(weak_error_from(functional, exact, approx))
}

pub(crate) fn weak_error_from(functional: &TestFunctional, exact: CharValue, approx: CharValue) -> WeakError {
    let diff = exact.exponent.exp() * complex_expm1(approx.exponent - exact.exponent);
    let signed = match functional {
        TestFunctional::SinLinear { .. } => diff.im,
        _ => diff.re,
    };
    let scale = exact.value.norm().max(approx.value.norm());
    WeakError {
        signed,
        error: signed.abs(),
        tol: scale * (exact.tol + approx.tol),
        exact,
        approx,
    }
}

/// JSON record of one oracle value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub target: String,
    pub g: Vec<f64>,
    pub value_re: f64,
    pub value_im: f64,
    pub tol: f64,
}

impl OracleRecord {
    pub fn new(target: CharTarget, g: &FieldState, value: &CharValue) -> Self {
        Self {
            target: target.to_string(),
            g: g.coeffs().to_vec(),
            value_re: value.value.re,
            value_im: value.value.im,
            tol: value.value.norm() * value.tol,
        }
    }
}

/// One-mode exponent `L(a) = ∫₀¹ K(a ẽ_1(ξ)) dξ`.
struct OneMode {
    symbol: LevySymbol,
    xi: Vec<(f64, f64)>,
    lambda: f64,
    sqrt_q: f64,
}

impl OneMode {
    fn new(spectrum: &ModeSpectrum, spec: &IntensitySpec, eps: f64) -> Result<Self> {
        if spectrum.len() != 1 {
            return Err(Error::Unsupported(format!(
                "one-mode formulas need M = 1, got M = {}",
                spectrum.len()
            )));
        }
        Ok(Self {
            symbol: LevySymbol::new(spec, eps)?,
            xi: composite(0.0, 1.0, 16, 10),
            lambda: spectrum.lambda(1),
            sqrt_q: spectrum.q(1).sqrt(),
        })
    }

    fn l(&self, a: f64) -> Complex64 {
        if a == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.xi
            .iter()
            .map(|&(x, w)| self.symbol.eval(a * basis_value(1, x)) * w)
            .sum()
    }

    /// `log χ(τ) = ∫₀^τ L(g√q e^{−λu}) du` with a refinement estimate.
    fn log_chi(&self, g: f64, tau: f64) -> (Complex64, f64) {
        if tau <= 0.0 || g == 0.0 || self.sqrt_q == 0.0 {
            return (Complex64::new(0.0, 0.0), 0.0);
        }
        let integrate = |panels: usize| -> Complex64 {
            composite(0.0, tau, panels, 10)
                .into_iter()
                .map(|(u, w)| self.l(g * self.sqrt_q * (-self.lambda * u).exp()) * w)
                .sum()
        };
        let coarse = integrate(8);
        let fine = integrate(16);
        (fine, (fine - coarse).norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VhValue {
    pub value: f64,
    pub derivative: f64,
    pub tol: f64,
}

/// `v_h(t, x) = Re(e^{igx} χ(t))` for the one-mode model and its `x`-derivative.
pub fn vh_closed_form(
    t: f64,
    x: f64,
    g: f64,
    spectrum: &ModeSpectrum,
    spec: &IntensitySpec,
    eps: f64,
) -> Result<VhValue> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    let one = OneMode::new(spectrum, spec, eps)?;
    let (lc, tol) = one.log_chi(g, t);
    let chi = lc.exp();
    let phase = Complex64::new(0.0, g * x).exp();
    let v = phase * chi;
    Ok(VhValue {
        value: v.re,
        derivative: (Complex64::new(0.0, g) * v).re,
        tol: chi.norm() * tol,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    pub theta: f64,
    pub steps: usize,
    pub horizon: f64,
    /// Mode-1 coefficient of the initial value.
    pub x0: f64,
    /// Weight of `φ(x) = cos(g·x_1)`.
    pub g: f64,
    pub spec: IntensitySpec,
    /// One-mode spectrum.
    pub spectrum: ModeSpectrum,
    pub n_paths: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionResult {
    /// Monte Carlo mean of `φ(X_h^N) − φ(X_{h,T})`.
    pub lhs: f64,
    /// Term I plus the Monte Carlo mean of term II.
    pub rhs: f64,
    pub term_i: f64,
    pub term_ii: f64,
    /// Standard error of the per-path difference of both sides.
    pub mc_stderr: f64,
    pub n_paths: usize,
}

impl ExpansionResult {
    pub fn gap(&self) -> f64 {
        (self.lhs - self.rhs).abs()
    }

    pub fn passes(&self, sigmas: f64) -> bool {
        self.gap() <= sigmas * self.mc_stderr
    }
}

const CHEB_DEGREE: usize = 28;

/// Checks `Eφ(X_h^N) − Eφ(X_{h,T}) = I + II` for the one-mode model.
pub fn expansion_check(cfg: &ExpansionConfig) -> Result<ExpansionResult> {
    if !cfg.spec.has_finite_activity() {
        return Err(Error::Unsupported(
            "the expansion check needs a finite-activity intensity".into(),
        ));
    }
    if cfg.n_paths < 2 {
        return Err(invalid("need at least two paths"));
    }
    let one = OneMode::new(&cfg.spectrum, &cfg.spec, 0.0)?;
    crate::fem::check_theta(cfg.theta)?;
    if cfg.steps == 0 || !(cfg.horizon > 0.0) {
        return Err(invalid("need steps >= 1 and a positive horizon"));
    }
    let (n, big_t, g) = (cfg.steps, cfg.horizon, cfg.g);
    let dt = big_t / n as f64;
    let lambda = one.lambda;
    let sq = one.sqrt_q;
    let (s, t) = rational_factors(cfg.theta, dt, lambda);
    let gamma: Vec<f64> = (0..n).map(|k| s.powi((n - k - 1) as i32) * t).collect();

    let (lc_t, _) = one.log_chi(g, big_t);
    let chi_t = lc_t.exp();
    let phase = |y: f64| Complex64::new(0.0, g * y).exp();
    let term_i = (chi_t * (phase(s.powi(n as i32) * cfg.x0) - phase((-lambda * big_t).exp() * cfg.x0))).re;

    // A(t) = χ(T−t)(Λ_G(t) − Λ_F(t)), one interpolant per bin.
    let mut interp = Vec::with_capacity(n);
    for (k, gk) in gamma.iter().enumerate() {
        let lg = one.l(g * sq * gk);
        let a = k as f64 * dt;
        let cheb = Chebyshev::fit(a, a + dt, CHEB_DEGREE, |tt| {
            let (lc, _) = one.log_chi(g, big_t - tt);
            let lf = one.l(g * sq * (-lambda * (big_t - tt)).exp());
            let v = lc.exp() * (lg - lf);
            (v.re, v.im)
        });
        interp.push(cheb);
    }

    let comp = cfg.spec.moments(0.0, cfg.spec.upper())?.m1;
    let drift: Vec<f64> = gamma.iter().map(|gm| -comp * sq * basis_integral(1) * gm).collect();
    let x0 = cfg.spectrum.field(vec![cfg.x0])?;
    let scheme = SchemeConfig::new(cfg.theta, n, big_t, Backend::SpectralCutoff { modes: 1 }, x0);
    let gauss = GaussLegendre::new(16);

    let samples = replicate(cfg.n_paths, cfg.master_seed, |_, seed| {
        let path = sample_path(&cfg.spec, big_t, 0.0, seed)?;
        let xn = run_full_scheme(&scheme, &path, &cfg.spectrum)?.coeffs()[0];
        let xt = run_semidiscrete(&scheme, &path, &cfg.spectrum, big_t)?.coeffs()[0];
        let lhs = (g * xn).cos() - (g * xt).cos();

        let mut y = s.powi(n as i32) * cfg.x0;
        let mut jumps = path.jumps().iter().peekable();
        let mut ii = 0.0;
        for k in 0..n {
            let (a, b) = (k as f64 * dt, (k + 1) as f64 * dt);
            let v = drift[k];
            let mut u0 = a;
            loop {
                let next = jumps.peek().filter(|j| path.bin_of(j.t, n) == k).map(|j| j.t);
                let u1 = next.unwrap_or(b).min(b);
                if u1 > u0 {
                    for (tt, w) in gauss.mapped(u0, u1) {
                        let (ar, ai) = interp[k].eval(tt);
                        let yy = y + v * (tt - u0);
                        let (sn, cs) = (g * yy).sin_cos();
                        ii += w * (ar * cs - ai * sn);
                    }
                    y += v * (u1 - u0);
                }
                u0 = u1;
                match next {
                    Some(_) => {
                        let j = jumps.next().expect("peeked jump");
                        y += gamma[k] * sq * basis_value(1, j.xi) * j.sigma;
                    }
                    None => break,
                }
            }
        }
        Ok((lhs, ii))
    })?;
    let lhs: Vec<f64> = samples.iter().map(|p| p.0).collect();
    let ii: Vec<f64> = samples.iter().map(|p| p.1).collect();
    let diff: Vec<f64> = samples.iter().map(|p| p.0 - p.1).collect();
    let l = SampleStats::from_samples(&lhs);
    let r = SampleStats::from_samples(&ii);
    let d = SampleStats::from_samples(&diff);
    Ok(ExpansionResult {
        lhs: l.mean,
        rhs: term_i + r.mean,
        term_i,
        term_ii: r.mean,
        mc_stderr: d.stderr,
        n_paths: cfg.n_paths,
    })
}
