//! θ-scheme, semidiscrete and exact mild solutions driven by a shared jump path.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::fem::{self, check_theta, DiscreteModes, DiscreteOperators, FemMesh, ThetaStepper};
use crate::noise::{JumpPath, SplitPath};
use crate::spectral::{basis_integral, basis_row, Basis, FieldState, ModeSpectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backend {
    /// `V_h = span{ẽ_1..ẽ_J}`, with `h = 1/(Jπ)`.
    SpectralCutoff { modes: usize },
    /// P1 elements on a uniform mesh.
    Fem { n_cells: usize },
}

impl Backend {
    /// Mesh width `h`.
    pub fn h(&self) -> f64 {
        match *self {
            Backend::SpectralCutoff { modes } => 1.0 / (modes as f64 * std::f64::consts::PI),
            Backend::Fem { n_cells } => 1.0 / n_cells as f64,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Backend::SpectralCutoff { modes: 0 } => Err(invalid("spectral cutoff needs J >= 1")),
            Backend::Fem { n_cells } if n_cells < 2 => Err(invalid("mesh needs at least 2 cells")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub theta: f64,
    pub steps: usize,
    pub horizon: f64,
    pub backend: Backend,
    /// Noise mode cutoff `M`.
    pub noise_modes: usize,
    /// Initial value as `M` sine coefficients.
    pub x0: FieldState,
}

impl SchemeConfig {
    pub fn new(theta: f64, steps: usize, horizon: f64, backend: Backend, x0: FieldState) -> Self {
        Self {
            theta,
            steps,
            horizon,
            backend,
            noise_modes: x0.len(),
            x0,
        }
    }

    /// `Δt = T/N`, formed from the stored pair.
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn validate(&self, spectrum: &ModeSpectrum) -> Result<()> {
        check_theta(self.theta)?;
        if self.steps == 0 {
            return Err(invalid("need at least one time step"));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(invalid(format!("horizon must be > 0, got {}", self.horizon)));
        }
        self.backend.validate()?;
        if self.noise_modes == 0 || self.noise_modes > spectrum.len() {
            return Err(invalid(format!(
                "noise cutoff M = {} must lie in 1..={}",
                self.noise_modes,
                spectrum.len()
            )));
        }
        if self.x0.basis() != Basis::Spectral(self.noise_modes) {
            return Err(invalid("initial value must be a spectral field with M modes"));
        }
        Ok(())
    }

    fn check_path(&self, path: &JumpPath) -> Result<()> {
        if (path.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(invalid(format!(
                "path horizon {} differs from scheme horizon {}",
                path.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Symbols `s = (1 − (1−θ)Δtλ)/(1 + θΔtλ)` and `t = 1/(1 + θΔtλ)`.
pub fn rational_factors(theta: f64, dt: f64, lambda: f64) -> (f64, f64) {
    let z = dt * lambda;
    let den = 1.0 + theta * z;
    ((1.0 - (1.0 - theta) * z) / den, 1.0 / den)
}

#[allow(clippy::large_enum_variant)]
enum Engine {
    Spectral {
        s: Vec<f64>,
        t: Vec<f64>,
    },
    Fem {
        mesh: FemMesh,
        ops: DiscreteOperators,
        stepper: ThetaStepper,
        loads: Vec<Vec<f64>>,
    },
}

/// A θ-scheme with precomputed symbols or factorizations, reusable across paths.
pub struct FullScheme {
    cfg: SchemeConfig,
    spectrum: ModeSpectrum,
    engine: Engine,
}

impl FullScheme {
    pub fn new(cfg: &SchemeConfig, spectrum: &ModeSpectrum) -> Result<Self> {
        cfg.validate(spectrum)?;
        let dt = cfg.dt();
        let engine = match cfg.backend {
            Backend::SpectralCutoff { modes } => {
                let j = modes.min(cfg.noise_modes);
                let (s, t) = spectrum.lambdas()[..j]
                    .iter()
                    .map(|&l| rational_factors(cfg.theta, dt, l))
                    .unzip();
                Engine::Spectral { s, t }
            }
            Backend::Fem { n_cells } => {
                let (mesh, ops) = fem::assemble(n_cells)?;
                let stepper = ops.theta_stepper(cfg.theta, dt)?;
                let loads = fem::sine_loads(&mesh, cfg.noise_modes);
                Engine::Fem {
                    mesh,
                    ops,
                    stepper,
                    loads,
                }
            }
        };
        Ok(Self {
            cfg: cfg.clone(),
            spectrum: spectrum.clone(),
            engine,
        })
    }

    pub fn config(&self) -> &SchemeConfig {
        &self.cfg
    }

    /// `X_h^N` for one path.
    pub fn run(&self, path: &JumpPath) -> Result<FieldState> {
        self.cfg.check_path(path)?;
        let incs = path.binned_increments(&self.spectrum, self.cfg.noise_modes, self.cfg.steps);
        self.evolve(&incs)
    }

    /// Runs the recursion on flattened `steps × M` mode increments.
    pub fn evolve(&self, incs: &[f64]) -> Result<FieldState> {
        let m = self.cfg.noise_modes;
        let steps = self.cfg.steps;
        if incs.len() != steps * m {
            return Err(invalid("increment table does not match steps × modes"));
        }
        let x0 = self.cfg.x0.coeffs();
        match &self.engine {
            Engine::Spectral { s, t } => {
                let j = s.len();
                let mut x = vec![0.0; m];
                x[..j].copy_from_slice(&x0[..j]);
                for n in 0..steps {
                    let row = &incs[n * m..n * m + j];
                    for k in 0..j {
                        x[k] = s[k] * x[k] + t[k] * row[k];
                    }
                }
                FieldState::spectral(x)
            }
            Engine::Fem {
                mesh,
                ops,
                stepper,
                loads,
            } => {
                let mut x = fem::project_spectral(mesh, ops, x0);
                let dim = mesh.dim();
                let mut load = vec![0.0; dim];
                let mut scratch = vec![0.0; dim];
                for n in 0..steps {
                    load.iter_mut().for_each(|v| *v = 0.0);
                    for (k, l) in loads.iter().enumerate() {
                        let c = incs[n * m + k];
                        if c != 0.0 {
                            for (v, lk) in load.iter_mut().zip(l) {
                                *v += c * lk;
                            }
                        }
                    }
                    stepper.step(&mut x, &load, &mut scratch);
                }
                FieldState::new(mesh.basis(), x)
            }
        }
    }
}

pub fn run_full_scheme(cfg: &SchemeConfig, path: &JumpPath, spectrum: &ModeSpectrum) -> Result<FieldState> {
    FullScheme::new(cfg, spectrum)?.run(path)
}

/// `S_{h,Δt}^N P_h x0`, the scheme without noise.
pub fn deterministic_flow(cfg: &SchemeConfig, spectrum: &ModeSpectrum) -> Result<FieldState> {
    let scheme = FullScheme::new(cfg, spectrum)?;
    scheme.evolve(&vec![0.0; cfg.steps * cfg.noise_modes])
}

/// Exact jump sum for diagonal dynamics with the given rates, used for both
/// the spectral semidiscrete solution and the exact mild solution.
fn spectral_mild(
    path: &JumpPath,
    spectrum: &ModeSpectrum,
    modes: usize,
    total: usize,
    x0: &[f64],
    t_eval: f64,
) -> Result<FieldState> {
    if !(t_eval >= 0.0 && t_eval <= path.horizon() * (1.0 + 1e-15)) {
        return Err(invalid(format!(
            "evaluation time {t_eval} outside [0, {}]",
            path.horizon()
        )));
    }
    let lambdas = &spectrum.lambdas()[..modes];
    let sq: Vec<f64> = spectrum.qs()[..modes].iter().map(|q| q.sqrt()).collect();
    let mut x: Vec<f64> = (0..modes).map(|k| (-lambdas[k] * t_eval).exp() * x0[k]).collect();
    let mut row = vec![0.0; modes];
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    for j in path.jumps().iter().take_while(|j| j.t <= t_eval) {
        basis_row(j.xi, &mut row);
        // e^{-π²k²τ} by the recurrence u^{k²} = u^{(k-1)²}·u^{2k-1}
        let u = (-pi2 * (t_eval - j.t)).exp();
        let u2 = u * u;
        let mut decay = u;
        let mut step = u;
        for k in 0..modes {
            x[k] += sq[k] * row[k] * j.sigma * decay;
            step *= u2;
            decay *= step;
            if decay == 0.0 {
                break;
            }
        }
    }
    if path.comp_rate() != 0.0 {
        for k in 0..modes {
            let l = lambdas[k];
            x[k] -= path.comp_rate() * sq[k] * basis_integral(k + 1) * (-(-l * t_eval).exp_m1()) / l;
        }
    }
    x.resize(total, 0.0);
    FieldState::spectral(x)
}

/// `X_{h,t}`. The spectral cutoff is summed exactly; the FEM backend is summed exactly
/// in the eigenbasis of the discrete pencil.
pub fn run_semidiscrete(
    cfg: &SchemeConfig,
    path: &JumpPath,
    spectrum: &ModeSpectrum,
    t_eval: f64,
) -> Result<FieldState> {
    cfg.validate(spectrum)?;
    cfg.check_path(path)?;
    match cfg.backend {
        Backend::SpectralCutoff { modes } => spectral_mild(
            path,
            spectrum,
            modes.min(cfg.noise_modes),
            cfg.noise_modes,
            cfg.x0.coeffs(),
            t_eval,
        ),
        Backend::Fem { n_cells } => {
            let (mesh, ops) = fem::assemble(n_cells)?;
            let modes = fem::discrete_modes(&mesh);
            fem_semidiscrete(&mesh, &ops, &modes, cfg, path, spectrum, t_eval)
        }
    }
}

fn fem_semidiscrete(
    mesh: &FemMesh,
    ops: &DiscreteOperators,
    modes: &DiscreteModes,
    cfg: &SchemeConfig,
    path: &JumpPath,
    spectrum: &ModeSpectrum,
    t_eval: f64,
) -> Result<FieldState> {
    if !(t_eval >= 0.0 && t_eval <= path.horizon() * (1.0 + 1e-15)) {
        return Err(invalid(format!("evaluation time {t_eval} outside [0, {}]", path.horizon())));
    }
    let m = cfg.noise_modes;
    let p = modes.project_loads(&fem::sine_loads(mesh, m));
    let sq: Vec<f64> = spectrum.qs()[..m].iter().map(|q| q.sqrt()).collect();
    let x0h = fem::project_spectral(mesh, ops, cfg.x0.coeffs());
    let mut tmp = vec![0.0; mesh.dim()];
    ops.mass.mul_vec(&x0h, &mut tmp);
    let mut amp: Vec<f64> = modes
        .vectors
        .iter()
        .zip(&modes.rates)
        .map(|(v, mu)| (-mu * t_eval).exp() * v.iter().zip(&tmp).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut row = vec![0.0; m];
    for j in path.jumps().iter().take_while(|j| j.t <= t_eval) {
        basis_row(j.xi, &mut row);
        for (a, (pm, mu)) in amp.iter_mut().zip(p.iter().zip(&modes.rates)) {
            let pair: f64 = (0..m).map(|k| sq[k] * row[k] * pm[k]).sum();
            *a += j.sigma * pair * (-mu * (t_eval - j.t)).exp();
        }
    }
    if path.comp_rate() != 0.0 {
        for (a, (pm, mu)) in amp.iter_mut().zip(p.iter().zip(&modes.rates)) {
            let pair: f64 = (0..m).map(|k| sq[k] * basis_integral(k + 1) * pm[k]).sum();
            *a -= path.comp_rate() * pair * (-(-mu * t_eval).exp_m1()) / mu;
        }
    }
    FieldState::new(mesh.basis(), modes.synthesize(&amp))
}

/// The reference solution `X_t` with the `M`-mode noise.
pub fn run_exact_mild(
    path: &JumpPath,
    spectrum: &ModeSpectrum,
    modes: usize,
    x0: &FieldState,
    horizon: f64,
) -> Result<FieldState> {
    if modes == 0 || modes > spectrum.len() || x0.basis() != Basis::Spectral(modes) {
        return Err(invalid("exact solution needs a spectral initial value with M modes"));
    }
    spectral_mild(path, spectrum, modes, modes, x0.coeffs(), horizon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoppedOutcome {
    pub x: FieldState,
    pub tau_m_hit: bool,
}

/// θ-scheme for the equation with big jumps capped at `m`.
pub fn run_stopped_scheme(
    cfg: &SchemeConfig,
    split: &SplitPath,
    spectrum: &ModeSpectrum,
) -> Result<StoppedOutcome> {
    cfg.check_path(&split.small)?;
    cfg.check_path(&split.big)?;
    let scheme = FullScheme::new(cfg, spectrum)?;
    let m = cfg.noise_modes;
    if split.u_m_modes.len() < m {
        return Err(invalid("split path was built with fewer modes than the scheme uses"));
    }
    let mut incs = split.small.binned_increments(spectrum, m, cfg.steps);
    let big = split.big.binned_increments(spectrum, m, cfg.steps);
    let dt = cfg.dt();
    for n in 0..cfg.steps {
        for k in 0..m {
            incs[n * m + k] += big[n * m + k] + dt * split.u_m_modes[k];
        }
    }
    Ok(StoppedOutcome {
        x: scheme.evolve(&incs)?,
        tau_m_hit: split.tau_m_hit,
    })
}
