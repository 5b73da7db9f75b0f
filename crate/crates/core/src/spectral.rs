//! Diagonal model of the Dirichlet Laplacian on (0,1) and the noise covariance.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Eigenvalues `λ_k = (kπ)²` of the Dirichlet Laplacian and covariance weights
/// `q_k = scale·λ_k^{-ρ}`. Modes are 1-based in the API, 0-based in storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    lambdas: Vec<f64>,
    qs: Vec<f64>,
    rho: f64,
    noise_scale: f64,
}

pub fn build_spectrum(modes: usize, rho: f64) -> Result<ModeSpectrum> {
    ModeSpectrum::dirichlet(modes, rho)
}

impl ModeSpectrum {
    pub fn dirichlet(modes: usize, rho: f64) -> Result<Self> {
        if modes == 0 {
            return Err(invalid("spectrum needs at least one mode"));
        }
        if !(rho >= 0.0 && rho.is_finite()) {
            return Err(invalid(format!("rho must be finite and >= 0, got {rho}")));
        }
        let lambdas: Vec<f64> = (1..=modes).map(|k| (k as f64 * PI).powi(2)).collect();
        let qs = lambdas.iter().map(|&l| l.powf(-rho)).collect();
        Ok(Self {
            lambdas,
            qs,
            rho,
            noise_scale: 1.0,
        })
    }

    /// Same operator, covariance multiplied by `scale` (0 switches the noise off).
    pub fn with_noise_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(invalid(format!("noise scale must be >= 0, got {scale}")));
        }
        self.qs = self.lambdas.iter().map(|&l| scale * l.powf(-self.rho)).collect();
        self.noise_scale = scale;
        Ok(self)
    }

    /// Keeps only the first `modes` modes.
    pub fn truncated(&self, modes: usize) -> Result<Self> {
        if modes == 0 || modes > self.len() {
            return Err(invalid(format!(
                "cannot truncate {} modes to {modes}",
                self.len()
            )));
        }
        Ok(Self {
            lambdas: self.lambdas[..modes].to_vec(),
            qs: self.qs[..modes].to_vec(),
            rho: self.rho,
            noise_scale: self.noise_scale,
        })
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn qs(&self) -> &[f64] {
        &self.qs
    }

    /// `λ_k` for the 1-based mode `k`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.lambdas[k - 1]
    }

    /// `q_k` for the 1-based mode `k`.
    pub fn q(&self, k: usize) -> f64 {
        self.qs[k - 1]
    }

    /// `√2 sin(kπξ)` for the 1-based mode `k`.
    pub fn eval_basis(&self, k: usize, xi: f64) -> Result<f64> {
        if k == 0 || k > self.len() {
            return Err(invalid(format!("mode {k} outside 1..={}", self.len())));
        }
        if !(xi > 0.0 && xi < 1.0) {
            return Err(invalid(format!("point {xi} outside (0,1)")));
        }
        Ok(basis_value(k, xi))
    }

    /// A field in the spectral basis of this spectrum.
    pub fn field(&self, coeffs: Vec<f64>) -> Result<FieldState> {
        FieldState::spectral(coeffs).and_then(|f| {
            if f.len() == self.len() {
                Ok(f)
            } else {
                Err(invalid(format!(
                    "field has {} coefficients, spectrum has {} modes",
                    f.len(),
                    self.len()
                )))
            }
        })
    }

    pub fn zero_field(&self) -> FieldState {
        FieldState {
            basis: Basis::Spectral(self.len()),
            coeffs: vec![0.0; self.len()],
        }
    }
}

/// `√2 sin(kπξ)` without range checks.
pub fn basis_value(k: usize, xi: f64) -> f64 {
    SQRT_2 * (k as f64 * PI * xi).sin()
}

/// `∫₀¹ √2 sin(kπξ) dξ`.
pub fn basis_integral(k: usize) -> f64 {
    if k % 2 == 1 {
        2.0 * SQRT_2 / (k as f64 * PI)
    } else {
        0.0
    }
}

/// Fills `out[i] = √2 sin((i+1)πξ)` by angle addition, reseeded every 32 modes.
pub fn basis_row(xi: f64, out: &mut [f64]) {
    let (s1, c1) = (PI * xi).sin_cos();
    let mut k = 0;
    while k < out.len() {
        let (mut s, mut c) = ((k as f64 + 1.0) * PI * xi).sin_cos();
        let end = (k + 32).min(out.len());
        for slot in &mut out[k..end] {
            *slot = SQRT_2 * s;
            let sn = s * c1 + c * s1;
            c = c * c1 - s * s1;
            s = sn;
        }
        k = end;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    /// Sine coefficients of the first `M` modes.
    Spectral(usize),
    /// Interior nodal values of P1 elements on a uniform mesh with this many cells.
    FemNodal(usize),
}

impl Basis {
    pub fn dim(&self) -> usize {
        match *self {
            Basis::Spectral(m) => m,
            Basis::FemNodal(n) => n.saturating_sub(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldState {
    basis: Basis,
    coeffs: Vec<f64>,
}

impl FieldState {
    pub fn new(basis: Basis, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.dim() {
            return Err(invalid(format!(
                "{:?} expects {} coefficients, got {}",
                basis,
                basis.dim(),
                coeffs.len()
            )));
        }
        if let Basis::FemNodal(n) = basis {
            if n < 2 {
                return Err(invalid("a mesh needs at least two cells"));
            }
        }
        Ok(Self { basis, coeffs })
    }

    pub fn spectral(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(invalid("spectral field needs at least one mode"));
        }
        Self::new(Basis::Spectral(coeffs.len()), coeffs)
    }

    pub fn basis(&self) -> Basis {
        self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `|x|_H²`: plain sum of squares for sine coefficients, mass-weighted for nodal values.
    pub fn h_norm_sq(&self) -> f64 {
        match self.basis {
            Basis::Spectral(_) => self.coeffs.iter().map(|c| c * c).sum(),
            Basis::FemNodal(n) => {
                let h = 1.0 / n as f64;
                let c = &self.coeffs;
                let mut s = 0.0;
                for i in 0..c.len() {
                    s += 2.0 * h / 3.0 * c[i] * c[i];
                    if i + 1 < c.len() {
                        s += 2.0 * h / 6.0 * c[i] * c[i + 1];
                    }
                }
                s
            }
        }
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm_sq().max(0.0).sqrt()
    }

    /// `⟨x, g⟩_H` for two spectral fields; the shorter one is padded with zeros.
    pub fn spectral_dot(&self, g: &FieldState) -> Result<f64> {
        match (self.basis, g.basis) {
            (Basis::Spectral(_), Basis::Spectral(_)) => Ok(self
                .coeffs
                .iter()
                .zip(&g.coeffs)
                .map(|(a, b)| a * b)
                .sum()),
            _ => Err(invalid("spectral inner product needs two spectral fields")),
        }
    }
}

fn check_spectral(spectrum: &ModeSpectrum, x: &FieldState) -> Result<()> {
    if x.basis != Basis::Spectral(spectrum.len()) {
        return Err(invalid(format!(
            "expected spectral field with {} modes, got {:?}",
            spectrum.len(),
            x.basis
        )));
    }
    Ok(())
}

/// `S(t)x = Σ e^{-λ_k t} x_k ẽ_k`.
pub fn semigroup_apply(spectrum: &ModeSpectrum, t: f64, x: &FieldState) -> Result<FieldState> {
    if !(t >= 0.0) {
        return Err(invalid(format!("time must be >= 0, got {t}")));
    }
    check_spectral(spectrum, x)?;
    let coeffs = x
        .coeffs
        .iter()
        .zip(&spectrum.lambdas)
        .map(|(c, l)| c * (-l * t).exp())
        .collect();
    Ok(FieldState {
        basis: x.basis,
        coeffs,
    })
}

/// `A^s x = Σ λ_k^s x_k ẽ_k`.
pub fn fractional_apply(spectrum: &ModeSpectrum, s: f64, x: &FieldState) -> Result<FieldState> {
    check_spectral(spectrum, x)?;
    let coeffs = x
        .coeffs
        .iter()
        .zip(&spectrum.lambdas)
        .map(|(c, l)| c * l.powf(s))
        .collect();
    Ok(FieldState {
        basis: x.basis,
        coeffs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub alpha: f64,
    pub beta: f64,
    pub rho: f64,
    /// `Σ λ_k^{-α}` is finite (p-series exponent `2α > 1`).
    pub trace_finite: bool,
    /// `Σ_{k≤M} λ_k^{-α}`.
    pub trace_partial_sum: f64,
    /// Integral bound on the tail `Σ_{k>M} λ_k^{-α}`; infinite when the series diverges.
    pub tail_bound: f64,
    /// `A^β Q` is bounded, i.e. `β ≤ ρ`.
    pub abeta_q_bounded: bool,
    /// `β ∈ (α−1, α]`.
    pub beta_window_holds: bool,
    /// `1 − α + β`, present only when the β window holds.
    pub gamma_max: Option<f64>,
}

impl AssumptionReport {
    /// Rigorous bracket `[partial, partial + tail]` for the full trace.
    pub fn trace_bracket(&self) -> (f64, f64) {
        (self.trace_partial_sum, self.trace_partial_sum + self.tail_bound)
    }

    pub fn all_hold(&self) -> bool {
        self.trace_finite && self.abeta_q_bounded && self.beta_window_holds
    }

    /// Names of the violated conditions.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !self.trace_finite {
            v.push(format!(
                "trace of A^(-alpha) is infinite (need 2*alpha > 1, alpha = {})",
                self.alpha
            ));
        }
        if !self.abeta_q_bounded {
            v.push(format!(
                "A^beta Q is unbounded (need beta <= rho, beta = {}, rho = {})",
                self.beta, self.rho
            ));
        }
        if !self.beta_window_holds {
            v.push(format!(
                "beta must lie in (alpha - 1, alpha], got alpha = {}, beta = {}",
                self.alpha, self.beta
            ));
        }
        v
    }
}

pub fn check_assumptions(spectrum: &ModeSpectrum, alpha: f64, beta: f64) -> Result<AssumptionReport> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(invalid(format!("alpha must be > 0, got {alpha}")));
    }
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    let trace_partial_sum: f64 = spectrum.lambdas.iter().map(|l| l.powf(-alpha)).sum();
    let p = 2.0 * alpha;
    let trace_finite = p > 1.0;
    let k = spectrum.len() as f64;
    // Σ_{j>K} (jπ)^{-p} ≤ ∫_K^∞ (xπ)^{-p} dx
    let tail_bound = if trace_finite {
        PI.powf(-p) * k.powf(1.0 - p) / (p - 1.0)
    } else {
        f64::INFINITY
    };
    let rho = spectrum.rho;
    let abeta_q_bounded = beta <= rho;
    let beta_window_holds = beta > alpha - 1.0 && beta <= alpha;
    Ok(AssumptionReport {
        alpha,
        beta,
        rho,
        trace_finite,
        trace_partial_sum,
        tail_bound,
        abeta_q_bounded,
        beta_window_holds,
        gamma_max: beta_window_holds.then_some(1.0 - alpha + beta),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_eigenvalue_and_weights() {
        let s = build_spectrum(1, 0.0).unwrap();
        assert!((s.lambda(1) - 9.869604401089358).abs() < 1e-12);
        assert_eq!(s.q(1), 1.0);
        let s = build_spectrum(2, 1.0).unwrap();
        assert!((s.q(2) - 0.025330295910584444).abs() < 1e-15);
    }

    #[test]
    fn weight_ratio_for_rho_035() {
        let s = build_spectrum(64, 0.35).unwrap();
        // 4096^(-0.35) = exp(-0.35 ln 4096)
        let expected = (-0.35 * 4096f64.ln()).exp();
        assert!((s.q(64) / s.q(1) - expected).abs() < 1e-14);
        assert!((expected - 0.0544).abs() < 5e-4);
    }

    #[test]
    fn zero_modes_rejected() {
        assert!(build_spectrum(0, 0.0).is_err());
    }

    #[test]
    fn basis_values() {
        let s = build_spectrum(3, 0.0).unwrap();
        assert!((s.eval_basis(1, 0.5).unwrap() - SQRT_2).abs() < 1e-15);
        assert!(s.eval_basis(2, 0.5).unwrap().abs() < 1e-15);
        assert!(s.eval_basis(3, 1.0 / 3.0).unwrap().abs() < 1e-15);
        assert!(s.eval_basis(1, 0.0).is_err());
        assert!(s.eval_basis(1, 1.0).is_err());
        assert!(s.eval_basis(4, 0.5).is_err());
    }

    #[test]
    fn basis_row_matches_direct_evaluation() {
        let mut row = vec![0.0; 300];
        for &xi in &[1e-6, 0.013, 1.0 / 3.0, 0.5, 0.77, 1.0 - 1e-9] {
            basis_row(xi, &mut row);
            for (i, v) in row.iter().enumerate() {
                assert!((v - basis_value(i + 1, xi)).abs() < 1e-12, "xi={xi} k={}", i + 1);
            }
        }
    }

    #[test]
    fn basis_integrals() {
        assert!((basis_integral(1) - 2.0 * SQRT_2 / PI).abs() < 1e-15);
        assert_eq!(basis_integral(2), 0.0);
        let g = crate::quad::GaussLegendre::new(30);
        for k in 1..=7 {
            let q = g.integrate(0.0, 1.0, |x| basis_value(k, x));
            assert!((q - basis_integral(k)).abs() < 1e-13);
        }
    }

    #[test]
    fn semigroup_examples() {
        let s = build_spectrum(1, 0.0).unwrap();
        let x = s.field(vec![1.0]).unwrap();
        let y = semigroup_apply(&s, 1.0, &x).unwrap();
        assert!((y.coeffs()[0] - 5.172318620381234e-5).abs() < 1e-18);
        assert_eq!(semigroup_apply(&s, 0.0, &x).unwrap(), x);
        let bad = FieldState::spectral(vec![1.0, 2.0]).unwrap();
        assert!(semigroup_apply(&s, 1.0, &bad).is_err());
        assert!(semigroup_apply(&s, -1.0, &x).is_err());
    }

    #[test]
    fn fractional_examples() {
        let s = build_spectrum(1, 0.0).unwrap();
        let x = s.field(vec![1.0]).unwrap();
        let y = fractional_apply(&s, 0.5, &x).unwrap();
        assert!((y.coeffs()[0] - PI).abs() < 1e-15);
        assert_eq!(fractional_apply(&s, 0.0, &x).unwrap(), x);
    }

    #[test]
    fn assumption_examples() {
        let s = build_spectrum(256, 0.35).unwrap();
        let r = check_assumptions(&s, 0.6, 0.35).unwrap();
        assert!(r.trace_finite && r.abeta_q_bounded && r.beta_window_holds);
        assert!((r.gamma_max.unwrap() - 0.75).abs() < 1e-15);
        assert!(!check_assumptions(&s, 0.4, 0.0).unwrap().trace_finite);
        let r = check_assumptions(&s, 0.6, 0.7).unwrap();
        assert!(!r.abeta_q_bounded);
        assert!(!r.beta_window_holds);
        assert!(r.gamma_max.is_none());
        assert_eq!(r.violations().len(), 2);
        assert!(check_assumptions(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn trace_bracket_contains_one_sixth() {
        for m in [1, 5, 40, 300] {
            let s = build_spectrum(m, 0.0).unwrap();
            let r = check_assumptions(&s, 1.0, 0.5).unwrap();
            let (lo, hi) = r.trace_bracket();
            let exact = 1.0 / 6.0;
            assert!(lo <= exact && exact <= hi, "m={m}: [{lo}, {hi}]");
        }
    }

    #[test]
    fn fem_norm_uses_mass_matrix() {
        // Hat function at the single node of a two-cell mesh: ∫ φ² = 2h/3 = 1/3.
        let f = FieldState::new(Basis::FemNodal(2), vec![1.0]).unwrap();
        assert!((f.h_norm_sq() - 1.0 / 3.0).abs() < 1e-15);
        assert!(FieldState::new(Basis::FemNodal(4), vec![1.0]).is_err());
    }

    fn spectral_field() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-10.0f64..10.0, 1..20)
    }

    proptest! {
        #[test]
        fn semigroup_contracts(c in spectral_field(), t in 0.0f64..2.0) {
            let s = build_spectrum(c.len(), 0.3).unwrap();
            let x = s.field(c).unwrap();
            let y = semigroup_apply(&s, t, &x).unwrap();
            prop_assert!(y.h_norm() <= x.h_norm() * (1.0 + 1e-15));
            if t > 0.0 && x.h_norm() > 0.0 {
                prop_assert!(y.h_norm() < x.h_norm());
            }
        }

        #[test]
        fn semigroup_law(c in spectral_field(), a in 0.0f64..0.05, b in 0.0f64..0.05) {
            let s = build_spectrum(c.len(), 0.0).unwrap();
            let x = s.field(c).unwrap();
            let lhs = semigroup_apply(&s, a + b, &x).unwrap();
            let rhs = semigroup_apply(&s, a, &semigroup_apply(&s, b, &x).unwrap()).unwrap();
            for (u, v) in lhs.coeffs().iter().zip(rhs.coeffs()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(v.abs()) + 1e-300);
            }
        }

        #[test]
        fn fractional_inverse_pair(c in spectral_field(), p in -2.0f64..2.0) {
            let s = build_spectrum(c.len(), 0.0).unwrap();
            let x = s.field(c).unwrap();
            let back = fractional_apply(&s, p, &fractional_apply(&s, -p, &x).unwrap()).unwrap();
            for (u, v) in x.coeffs().iter().zip(back.coeffs()) {
                prop_assert!((u - v).abs() <= 1e-12 * u.abs());
            }
        }
    }
}
