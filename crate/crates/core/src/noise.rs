//! Jump-size intensities, Poisson random measure paths and their mode increments.

use std::fmt;
use std::str::FromStr;

use rand::distr::{Open01, OpenClosed01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::spectral::{basis_integral, basis_row, ModeSpectrum};

/// Jump-size intensity `ν(dσ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum IntensitySpec {
    /// `σ^{-1-index}` on `(0, tau]`.
    OneSidedStable { index: f64, tau: f64 },
    /// `|σ|^{-1-index}` on `[-tau, tau]`.
    SymmetricStable { index: f64, tau: f64 },
    /// Total mass spread uniformly over `[lo, hi]`.
    FiniteUniform { lo: f64, hi: f64, total_mass: f64 },
}

/// `ν`-mass and first two moments over `{eps ≤ |σ| ≤ cap}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub m1: f64,
    pub m1abs: f64,
    pub m2: f64,
}

impl Moments {
    const ZERO: Moments = Moments {
        mass: 0.0,
        m1: 0.0,
        m1abs: 0.0,
        m2: 0.0,
    };
}

/// `∫_l^u σ^p dσ`, possibly infinite.
fn power_integral(p: f64, l: f64, u: f64) -> f64 {
    if u <= l {
        return 0.0;
    }
    let e = p + 1.0;
    if e == 0.0 {
        (u / l).ln()
    } else {
        (u.powf(e) - l.powf(e)) / e
    }
}

impl IntensitySpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            IntensitySpec::OneSidedStable { index, tau } | IntensitySpec::SymmetricStable { index, tau } => {
                if !(index > 0.0 && index < 2.0) {
                    return Err(invalid(format!("stability index must lie in (0,2), got {index}")));
                }
                if !(tau > 0.0) {
                    return Err(invalid(format!("tau must be > 0, got {tau}")));
                }
            }
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return Err(invalid(format!("uniform intensity needs lo < hi, got [{lo}, {hi}]")));
                }
                if !(total_mass >= 0.0 && total_mass.is_finite()) {
                    return Err(invalid(format!("total mass must be finite and >= 0, got {total_mass}")));
                }
            }
        }
        Ok(())
    }

    /// Largest jump magnitude in the support.
    pub fn upper(&self) -> f64 {
        match *self {
            IntensitySpec::OneSidedStable { tau, .. } | IntensitySpec::SymmetricStable { tau, .. } => tau,
            IntensitySpec::FiniteUniform { lo, hi, .. } => lo.abs().max(hi.abs()),
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            IntensitySpec::SymmetricStable { .. } => true,
            IntensitySpec::OneSidedStable { .. } => false,
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => total_mass == 0.0 || lo == -hi,
        }
    }

    /// True when every `eps > 0` leaves finitely many jumps and `eps = 0` does too.
    pub fn has_finite_activity(&self) -> bool {
        matches!(self, IntensitySpec::FiniteUniform { .. })
    }

    /// Moments over `{eps ≤ |σ| ≤ cap}`; `cap` may exceed the support.
    pub fn moments(&self, eps: f64, cap: f64) -> Result<Moments> {
        self.validate()?;
        if !(eps >= 0.0) || !(eps < cap) {
            return Err(invalid(format!("need 0 <= eps < cap, got eps = {eps}, cap = {cap}")));
        }
        Ok(match *self {
            IntensitySpec::OneSidedStable { index, tau } => {
                let u = cap.min(tau);
                if u <= eps {
                    return Ok(Moments::ZERO);
                }
                let m1 = power_integral(-index, eps, u);
                Moments {
                    mass: power_integral(-1.0 - index, eps, u),
                    m1,
                    m1abs: m1,
                    m2: power_integral(1.0 - index, eps, u),
                }
            }
            IntensitySpec::SymmetricStable { index, tau } => {
                let u = cap.min(tau);
                if u <= eps {
                    return Ok(Moments::ZERO);
                }
                Moments {
                    mass: 2.0 * power_integral(-1.0 - index, eps, u),
                    m1: 0.0,
                    m1abs: 2.0 * power_integral(-index, eps, u),
                    m2: 2.0 * power_integral(1.0 - index, eps, u),
                }
            }
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
                let d = total_mass / (hi - lo);
                let mut out = Moments::ZERO;
                for (l, u, sign) in [(lo.max(eps), hi.min(cap), 1.0), (lo.max(-cap), hi.min(-eps), -1.0)] {
                    if u > l {
                        out.mass += d * (u - l);
                        let first = d * (u * u - l * l) / 2.0;
                        out.m1 += first;
                        out.m1abs += sign * first;
                        out.m2 += d * (u.powi(3) - l.powi(3)) / 3.0;
                    }
                }
                out
            }
        })
    }

    /// `∫ σ^n ν(dσ)` over `{eps ≤ |σ| ≤ cap}`.
    pub fn raw_moment(&self, n: u32, eps: f64, cap: f64) -> f64 {
        let p = n as f64;
        match *self {
            IntensitySpec::OneSidedStable { index, tau } => power_integral(p - 1.0 - index, eps, cap.min(tau)),
            IntensitySpec::SymmetricStable { index, tau } => {
                if n % 2 == 1 {
                    0.0
                } else {
                    2.0 * power_integral(p - 1.0 - index, eps, cap.min(tau))
                }
            }
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
                let d = total_mass / (hi - lo);
                let mut out = 0.0;
                for (l, u) in [(lo.max(eps), hi.min(cap)), (lo.max(-cap), hi.min(-eps))] {
                    if u > l {
                        out += d * (u.powi(n as i32 + 1) - l.powi(n as i32 + 1)) / (p + 1.0);
                    }
                }
                out
            }
        }
    }

    /// Moments over the whole support.
    pub fn total_moments(&self) -> Result<Moments> {
        self.moments(0.0, f64::INFINITY)
    }

    /// `ν({|σ| > m})`.
    pub fn tail_mass(&self, m: f64) -> Result<f64> {
        if !(m >= 0.0) {
            return Err(invalid(format!("tail level must be >= 0, got {m}")));
        }
        if m >= self.upper() {
            self.validate()?;
            return Ok(0.0);
        }
        Ok(self.moments(m, f64::INFINITY)?.mass)
    }

    /// `∫ σ² ν(dσ) < ∞`.
    pub fn satisfies_ass_nu0(&self) -> bool {
        self.total_moments().map(|m| m.m2.is_finite()).unwrap_or(false)
    }

    /// `∫ max(|σ|, σ²) ν(dσ) < ∞`.
    pub fn satisfies_ass_nu(&self) -> bool {
        self.total_moments()
            .map(|m| m.m2.is_finite() && m.m1abs.is_finite())
            .unwrap_or(false)
    }

    /// Density of `ν` at `σ ≠ 0`.
    pub fn density(&self, sigma: f64) -> f64 {
        match *self {
            IntensitySpec::OneSidedStable { index, tau } => {
                if sigma > 0.0 && sigma <= tau {
                    sigma.powf(-1.0 - index)
                } else {
                    0.0
                }
            }
            IntensitySpec::SymmetricStable { index, tau } => {
                let a = sigma.abs();
                if a > 0.0 && a <= tau {
                    a.powf(-1.0 - index)
                } else {
                    0.0
                }
            }
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
                if sigma >= lo && sigma <= hi {
                    total_mass / (hi - lo)
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for IntensitySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            IntensitySpec::OneSidedStable { index, tau } => write!(f, "one-sided-stable {index:e} {tau:e}"),
            IntensitySpec::SymmetricStable { index, tau } => write!(f, "symmetric-stable {index:e} {tau:e}"),
            IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
                write!(f, "finite-uniform {lo:e} {hi:e} {total_mass:e}")
            }
        }
    }
}

impl FromStr for IntensitySpec {
    type Err = Error;

    /// Accepts `kind a b [c]` with whitespace or `:` separators.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s
            .split(|c: char| c.is_whitespace() || c == ':')
            .filter(|p| !p.is_empty())
            .collect();
        let nums = |n: usize| -> Result<Vec<f64>> {
            if parts.len() != n + 1 {
                return Err(invalid(format!("'{}' expects {n} numbers", parts[0])));
            }
            parts[1..]
                .iter()
                .map(|p| p.parse::<f64>().map_err(|e| invalid(format!("bad number '{p}': {e}"))))
                .collect()
        };
        let spec = match parts.first().copied() {
            Some("one-sided-stable") => {
                let v = nums(2)?;
                IntensitySpec::OneSidedStable { index: v[0], tau: v[1] }
            }
            Some("symmetric-stable") => {
                let v = nums(2)?;
                IntensitySpec::SymmetricStable { index: v[0], tau: v[1] }
            }
            Some("finite-uniform") => {
                let v = nums(3)?;
                IntensitySpec::FiniteUniform {
                    lo: v[0],
                    hi: v[1],
                    total_mass: v[2],
                }
            }
            _ => {
                return Err(invalid(format!(
                    "unknown intensity '{s}' (expected one-sided-stable, symmetric-stable or finite-uniform)"
                )))
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub t: f64,
    pub xi: f64,
    pub sigma: f64,
}

/// One realization of the Poisson random measure, with small jumps removed and compensated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpPath {
    horizon: f64,
    eps: f64,
    cap: f64,
    comp_rate: f64,
    seed: Option<u64>,
    spec: Option<IntensitySpec>,
    jumps: Vec<Jump>,
}

impl JumpPath {
    /// Path for `spec` keeping jumps with `eps ≤ |σ|`; the compensator covers the same range.
    pub fn new(spec: IntensitySpec, horizon: f64, eps: f64, jumps: Vec<Jump>) -> Result<Self> {
        let cap = spec.upper();
        let comp_rate = if eps < cap { spec.moments(eps, cap)?.m1 } else { 0.0 };
        let mut p = Self::custom(horizon, eps, cap, comp_rate, jumps)?;
        p.spec = Some(spec);
        Ok(p)
    }

    /// Path with an explicit compensator rate.
    pub fn custom(horizon: f64, eps: f64, cap: f64, comp_rate: f64, jumps: Vec<Jump>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid(format!("horizon must be > 0, got {horizon}")));
        }
        if !(eps >= 0.0) || !comp_rate.is_finite() {
            return Err(invalid("eps must be >= 0 and the compensator finite"));
        }
        let mut last = 0.0;
        for j in &jumps {
            if !(j.t > 0.0 && j.t <= horizon) {
                return Err(invalid(format!("jump time {} outside (0, {horizon}]", j.t)));
            }
            if !(j.xi > 0.0 && j.xi < 1.0) {
                return Err(invalid(format!("jump location {} outside (0,1)", j.xi)));
            }
            if !(j.sigma.abs() >= eps) || !j.sigma.is_finite() {
                return Err(invalid(format!("jump size {} below eps = {eps}", j.sigma)));
            }
            if j.t < last {
                return Err(invalid("jumps must be sorted by time"));
            }
            last = j.t;
        }
        Ok(Self {
            horizon,
            eps,
            cap,
            comp_rate,
            seed: None,
            spec: None,
            jumps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    pub fn cap(&self) -> f64 {
        self.cap
    }
    pub fn comp_rate(&self) -> f64 {
        self.comp_rate
    }
    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
    pub fn spec(&self) -> Option<&IntensitySpec> {
        self.spec.as_ref()
    }
    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Same path with every jump size multiplied by `factor` and the compensator scaled alike.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut p = self.clone();
        for j in &mut p.jumps {
            j.sigma *= factor;
        }
        p.comp_rate *= factor;
        p.eps *= factor.abs();
        p.cap *= factor.abs();
        p.spec = None;
        p
    }

    /// Keeps jumps with `|σ| ≥ eps2` and recomputes the compensator from the intensity.
    pub fn coarsen(&self, eps2: f64) -> Result<Self> {
        let spec = self
            .spec
            .ok_or_else(|| invalid("coarsening needs a path that records its intensity"))?;
        if eps2 < self.eps {
            return Err(invalid("coarsening cannot lower eps"));
        }
        let jumps = self.jumps.iter().copied().filter(|j| j.sigma.abs() >= eps2).collect();
        let mut p = Self::new(spec, self.horizon, eps2, jumps)?;
        p.seed = self.seed;
        Ok(p)
    }

    fn check_interval(&self, a: f64, b: f64) -> Result<()> {
        if !(a >= 0.0 && a < b && b <= self.horizon * (1.0 + 1e-15)) {
            return Err(invalid(format!(
                "interval ({a}, {b}] not inside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }

    /// Index of the bin `(t_n, t_{n+1}]` holding time `t` on a grid of `steps` bins.
    pub fn bin_of(&self, t: f64, steps: usize) -> usize {
        bin_index(t, self.horizon, steps)
    }

    /// Mode increments of `Q^{1/2}Z` over every bin of a uniform grid, flattened `steps × modes`.
    pub fn binned_increments(&self, spectrum: &ModeSpectrum, modes: usize, steps: usize) -> Vec<f64> {
        let modes = modes.min(spectrum.len());
        let mut out = vec![0.0; steps * modes];
        let sq: Vec<f64> = spectrum.qs()[..modes].iter().map(|q| q.sqrt()).collect();
        let mut row = vec![0.0; modes];
        for j in &self.jumps {
            let n = bin_index(j.t, self.horizon, steps);
            basis_row(j.xi, &mut row);
            let dst = &mut out[n * modes..(n + 1) * modes];
            for ((d, r), s) in dst.iter_mut().zip(&row).zip(&sq) {
                *d += s * r * j.sigma;
            }
        }
        if self.comp_rate != 0.0 {
            let dt = self.horizon / steps as f64;
            let drift: Vec<f64> = (0..modes)
                .map(|k| dt * self.comp_rate * sq[k] * basis_integral(k + 1))
                .collect();
            for n in 0..steps {
                for (d, c) in out[n * modes..(n + 1) * modes].iter_mut().zip(&drift) {
                    *d -= c;
                }
            }
        }
        out
    }

    /// Serializes to the line-oriented text format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("# jumpheat jump path v1\n");
        s.push_str(&format!("horizon {:.16e}\n", self.horizon));
        s.push_str(&format!("eps {:.16e}\n", self.eps));
        s.push_str(&format!("cap {:.16e}\n", self.cap));
        s.push_str(&format!("comp_rate {:.16e}\n", self.comp_rate));
        match self.seed {
            Some(seed) => s.push_str(&format!("seed {seed}\n")),
            None => s.push_str("seed none\n"),
        }
        match &self.spec {
            Some(spec) => s.push_str(&format!("spec {spec}\n")),
            None => s.push_str("spec none\n"),
        }
        s.push_str(&format!("jumps {}\n", self.jumps.len()));
        for j in &self.jumps {
            s.push_str(&format!("{:.16e} {:.16e} {:.16e}\n", j.t, j.xi, j.sigma));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (no, line) = lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("missing '{key}'"),
            })?;
            let rest = line
                .trim()
                .strip_prefix(key)
                .filter(|r| r.starts_with(char::is_whitespace))
                .ok_or(Error::Parse {
                    line: no + 1,
                    msg: format!("expected '{key}'"),
                })?;
            Ok((no + 1, rest.trim().to_string()))
        };
        let num = |(no, v): (usize, String)| -> Result<f64> {
            v.parse().map_err(|e| Error::Parse {
                line: no,
                msg: format!("bad number '{v}': {e}"),
            })
        };
        let horizon = num(header("horizon")?)?;
        let eps = num(header("eps")?)?;
        let cap = num(header("cap")?)?;
        let comp_rate = num(header("comp_rate")?)?;
        let (no, seed) = header("seed")?;
        let seed = match seed.as_str() {
            "none" => None,
            s => Some(s.parse().map_err(|e| Error::Parse {
                line: no,
                msg: format!("bad seed: {e}"),
            })?),
        };
        let (no, spec) = header("spec")?;
        let spec = match spec.as_str() {
            "none" => None,
            s => Some(s.parse::<IntensitySpec>().map_err(|e| Error::Parse {
                line: no,
                msg: e.to_string(),
            })?),
        };
        let (no, count) = header("jumps")?;
        let count: usize = count.parse().map_err(|e| Error::Parse {
            line: no,
            msg: format!("bad jump count: {e}"),
        })?;
        let mut jumps = Vec::with_capacity(count);
        for (no, line) in lines {
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: no + 1,
                    msg: format!("bad jump triple: {e}"),
                })?;
            if v.len() != 3 {
                return Err(Error::Parse {
                    line: no + 1,
                    msg: "expected 't xi sigma'".into(),
                });
            }
            jumps.push(Jump {
                t: v[0],
                xi: v[1],
                sigma: v[2],
            });
        }
        if jumps.len() != count {
            return Err(Error::Parse {
                line: 0,
                msg: format!("header announces {count} jumps, found {}", jumps.len()),
            });
        }
        let mut p = Self::custom(horizon, eps, cap, comp_rate, jumps)?;
        p.seed = seed;
        p.spec = spec;
        Ok(p)
    }
}

pub(crate) fn bin_index(t: f64, horizon: f64, steps: usize) -> usize {
    let grid = |k: usize| k as f64 * horizon / steps as f64;
    let mut n = ((t / horizon) * steps as f64).ceil() as isize - 1;
    n = n.clamp(0, steps as isize - 1);
    let mut n = n as usize;
    while n > 0 && t <= grid(n) {
        n -= 1;
    }
    while n + 1 < steps && t > grid(n + 1) {
        n += 1;
    }
    n
}

/// Mode increments of `Q^{1/2}Z` over `(a, b]`.
pub fn increment_modes(path: &JumpPath, spectrum: &ModeSpectrum, a: f64, b: f64) -> Result<Vec<f64>> {
    path.check_interval(a, b)?;
    let m = spectrum.len();
    let sq: Vec<f64> = spectrum.qs().iter().map(|q| q.sqrt()).collect();
    let mut out = vec![0.0; m];
    let mut row = vec![0.0; m];
    for j in path.jumps.iter().filter(|j| j.t > a && j.t <= b) {
        basis_row(j.xi, &mut row);
        for k in 0..m {
            out[k] += sq[k] * row[k] * j.sigma;
        }
    }
    for k in 0..m {
        out[k] -= (b - a) * path.comp_rate * sq[k] * basis_integral(k + 1);
    }
    Ok(out)
}

const LAYER_OFFSET: i64 = 1 << 20;
const TAIL_LAYER_START: i32 = 8;
const TAIL_STREAM: u64 = 1 << 40;
const UNIFORM_STREAM: u64 = (1 << 40) + 1;

struct Layer {
    stream: u64,
    lo: f64,
    hi: f64,
}

/// Magnitude layers: dyadic annuli `(2^j, 2^{j+1}]` from the one containing `eps` upwards.
fn layers(spec: &IntensitySpec, eps: f64) -> Vec<Layer> {
    let tau = spec.upper();
    let mut j = eps.log2().floor() as i32;
    while 2f64.powi(j) > eps {
        j -= 1;
    }
    while 2f64.powi(j + 1) <= eps {
        j += 1;
    }
    let mut out = Vec::new();
    let top = if tau.is_finite() { i32::MAX } else { TAIL_LAYER_START };
    while j < top && 2f64.powi(j) < tau {
        out.push(Layer {
            stream: (j as i64 + LAYER_OFFSET) as u64,
            lo: 2f64.powi(j),
            hi: 2f64.powi(j + 1).min(tau),
        });
        j += 1;
    }
    if !tau.is_finite() {
        out.push(Layer {
            stream: TAIL_STREAM,
            lo: 2f64.powi(TAIL_LAYER_START),
            hi: f64::INFINITY,
        });
    }
    out
}

fn poisson_count(rng: &mut ChaCha8Rng, mean: f64) -> Result<usize> {
    if mean <= 0.0 {
        return Ok(0);
    }
    if !(mean < 1e9) {
        return Err(invalid(format!(
            "expected jump count {mean:e} is too large; raise eps"
        )));
    }
    let d = Poisson::new(mean).map_err(|e| invalid(format!("poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng) as usize)
}

/// Draws a path of the Poisson random measure with intensity `dt dξ ν(dσ)` on `(0,T] × (0,1)`,
/// keeping jumps with `|σ| ≥ eps`. Paths for different `eps` with the same seed are nested.
pub fn sample_path(spec: &IntensitySpec, horizon: f64, eps: f64, seed: u64) -> Result<JumpPath> {
    spec.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid(format!("horizon must be > 0, got {horizon}")));
    }
    if !(eps >= 0.0) {
        return Err(invalid(format!("eps must be >= 0, got {eps}")));
    }
    let mut jumps = Vec::new();
    match *spec {
        IntensitySpec::FiniteUniform { lo, hi, total_mass } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(UNIFORM_STREAM);
            let n = poisson_count(&mut rng, horizon * total_mass)?;
            for _ in 0..n {
                let t = horizon * rng.sample::<f64, _>(OpenClosed01);
                let xi = rng.sample::<f64, _>(Open01);
                let sigma = lo + (hi - lo) * rng.random::<f64>();
                if sigma.abs() >= eps && sigma != 0.0 {
                    jumps.push(Jump { t, xi, sigma });
                }
            }
        }
        IntensitySpec::OneSidedStable { index, .. } | IntensitySpec::SymmetricStable { index, .. } => {
            if eps == 0.0 {
                return Err(invalid(
                    "stable intensities have infinitely many small jumps; \
                     sampling needs a truncation level eps > 0",
                ));
            }
            let symmetric = matches!(spec, IntensitySpec::SymmetricStable { .. });
            for layer in layers(spec, eps) {
                if layer.hi <= eps {
                    continue;
                }
                let (la, ua) = (layer.lo.powf(-index), layer.hi.powf(-index));
                let side_mass = (la - ua) / index;
                let mass = if symmetric { 2.0 * side_mass } else { side_mass };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(layer.stream);
                let n = poisson_count(&mut rng, horizon * mass)?;
                for _ in 0..n {
                    let t = horizon * rng.sample::<f64, _>(OpenClosed01);
                    let xi = rng.sample::<f64, _>(Open01);
                    let u: f64 = rng.random();
                    let mut sigma = (la - u * (la - ua)).powf(-1.0 / index);
                    if symmetric && rng.random::<bool>() {
                        sigma = -sigma;
                    }
                    if sigma.abs() >= eps {
                        jumps.push(Jump { t, xi, sigma });
                    }
                }
            }
        }
    }
    jumps.sort_by(|a, b| a.t.total_cmp(&b.t));
    let mut p = JumpPath::new(*spec, horizon, eps, jumps)?;
    p.seed = Some(seed);
    Ok(p)
}

/// Small/big decomposition of a raw path at `|σ| = 1`, big jumps capped at `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPath {
    pub small: JumpPath,
    pub big: JumpPath,
    pub m: f64,
    pub u_m_modes: Vec<f64>,
    pub tau_m_hit: bool,
}

pub fn split_big_jumps(
    spec: &IntensitySpec,
    raw: &JumpPath,
    m: f64,
    spectrum: &ModeSpectrum,
) -> Result<SplitPath> {
    if !(m >= 1.0) {
        return Err(invalid(format!("big-jump cap m must be >= 1, got {m}")));
    }
    let eps = raw.eps();
    if eps > 1.0 {
        return Err(invalid(format!("splitting at 1 needs eps <= 1, got {eps}")));
    }
    let horizon = raw.horizon();
    let small_jumps: Vec<Jump> = raw.jumps.iter().copied().filter(|j| j.sigma.abs() <= 1.0).collect();
    let big_jumps: Vec<Jump> = raw
        .jumps
        .iter()
        .copied()
        .filter(|j| j.sigma.abs() > 1.0 && j.sigma.abs() <= m)
        .collect();
    let tau_m_hit = raw.jumps.iter().any(|j| j.sigma.abs() > m);
    let small_comp = if eps < 1.0 { spec.moments(eps, 1.0)?.m1 } else { 0.0 };
    let big_comp = if m > 1.0 { spec.moments(1.0, m)?.m1 } else { 0.0 };
    let mut small = JumpPath::custom(horizon, eps, 1.0, small_comp, small_jumps)?;
    small.spec = Some(*spec);
    small.seed = raw.seed;
    let mut big = JumpPath::custom(horizon, eps.max(1.0), m, big_comp, big_jumps)?;
    big.spec = Some(*spec);
    big.seed = raw.seed;
    let u_m_modes = spectrum
        .qs()
        .iter()
        .enumerate()
        .map(|(k, q)| q.sqrt() * basis_integral(k + 1) * big_comp)
        .collect();
    Ok(SplitPath {
        small,
        big,
        m,
        u_m_modes,
        tau_m_hit,
    })
}

impl SplitPath {
    /// The driving path of the stopped equation: all jumps up to `m`, only the small ones compensated.
    pub fn stopped_driver(&self) -> Result<JumpPath> {
        let mut jumps: Vec<Jump> = self.small.jumps.iter().chain(&self.big.jumps).copied().collect();
        jumps.sort_by(|a, b| a.t.total_cmp(&b.t));
        let mut p = JumpPath::custom(
            self.small.horizon,
            self.small.eps,
            self.m,
            self.small.comp_rate,
            jumps,
        )?;
        p.seed = self.small.seed;
        Ok(p)
    }
}
