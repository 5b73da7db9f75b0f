//! P1 finite elements on a uniform mesh of (0,1) with Dirichlet boundary conditions.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::quad::GaussLegendre;
use crate::spectral::{Basis, FieldState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FemMesh {
    pub n_cells: usize,
    pub h: f64,
}

impl FemMesh {
    /// Number of interior nodes.
    pub fn dim(&self) -> usize {
        self.n_cells - 1
    }

    /// Coordinate of the 1-based interior node `i`.
    pub fn node(&self, i: usize) -> f64 {
        i as f64 / self.n_cells as f64
    }

    pub fn basis(&self) -> Basis {
        Basis::FemNodal(self.n_cells)
    }
}

/// Symmetric tridiagonal matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTridiag {
    pub diag: Vec<f64>,
    /// `off[i]` couples rows `i` and `i+1`.
    pub off: Vec<f64>,
}

impl SymTridiag {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.off[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.off[i] * x[i + 1];
            }
            out[i] = s;
        }
    }

    pub fn quad_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut tmp = vec![0.0; self.dim()];
        self.mul_vec(y, &mut tmp);
        x.iter().zip(&tmp).map(|(a, b)| a * b).sum()
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &SymTridiag, b: f64) -> SymTridiag {
        SymTridiag {
            diag: self
                .diag
                .iter()
                .zip(&other.diag)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            off: self
                .off
                .iter()
                .zip(&other.off)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    /// LDLᵀ-style factorization for the Thomas algorithm.
    pub fn factor(&self) -> TridiagFactor {
        let n = self.dim();
        let mut denom = vec![0.0; n];
        let mut upper = vec![0.0; n.saturating_sub(1)];
        for i in 0..n {
            let d = if i == 0 {
                self.diag[0]
            } else {
                self.diag[i] - self.off[i - 1] * upper[i - 1]
            };
            assert!(d != 0.0, "singular tridiagonal matrix");
            denom[i] = d;
            if i + 1 < n {
                upper[i] = self.off[i] / d;
            }
        }
        TridiagFactor {
            off: self.off.clone(),
            denom,
            upper,
        }
    }

    fn is_spd_pattern(&self) -> bool {
        // Diagonal dominance with positive diagonal implies SPD for symmetric tridiagonals.
        let n = self.dim();
        (0..n).all(|i| {
            let mut r = 0.0;
            if i > 0 {
                r += self.off[i - 1].abs();
            }
            if i + 1 < n {
                r += self.off[i].abs();
            }
            self.diag[i] > 0.0 && self.diag[i] >= r
        })
    }
}

#[derive(Debug, Clone)]
pub struct TridiagFactor {
    off: Vec<f64>,
    denom: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagFactor {
    /// Solves in place.
    pub fn solve(&self, rhs: &mut [f64]) {
        let n = self.denom.len();
        rhs[0] /= self.denom[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.off[i - 1] * rhs[i - 1]) / self.denom[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            rhs[i] -= self.upper[i] * rhs[i + 1];
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub mass: SymTridiag,
    pub stiffness: SymTridiag,
    mass_factor: TridiagFactor,
}

pub fn assemble(n_cells: usize) -> Result<(FemMesh, DiscreteOperators)> {
    if n_cells < 2 {
        return Err(invalid(format!("mesh needs at least 2 cells, got {n_cells}")));
    }
    let h = 1.0 / n_cells as f64;
    let n = n_cells - 1;
    let mass = SymTridiag {
        diag: vec![2.0 * h / 3.0; n],
        off: vec![h / 6.0; n - 1],
    };
    let stiffness = SymTridiag {
        diag: vec![2.0 / h; n],
        off: vec![-1.0 / h; n - 1],
    };
    assert!(mass.is_spd_pattern() && stiffness.is_spd_pattern());
    let mass_factor = mass.factor();
    Ok((
        FemMesh { n_cells, h },
        DiscreteOperators {
            mass,
            stiffness,
            mass_factor,
        },
    ))
}

impl DiscreteOperators {
    /// Solves `mass·c = load`.
    pub fn solve_mass(&self, load: &[f64]) -> Vec<f64> {
        let mut c = load.to_vec();
        self.mass_factor.solve(&mut c);
        c
    }

    pub fn theta_stepper(&self, theta: f64, dt: f64) -> Result<ThetaStepper> {
        check_theta(theta)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("time step must be > 0, got {dt}")));
        }
        Ok(ThetaStepper {
            lhs: self.mass.combine(1.0, &self.stiffness, theta * dt).factor(),
            rhs: self.mass.combine(1.0, &self.stiffness, -(1.0 - theta) * dt),
        })
    }
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.5 && theta <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("theta must lie in (1/2, 1], got {theta}")))
    }
}

/// Factorized `(mass + θΔt·stiffness)` together with `(mass − (1−θ)Δt·stiffness)`.
#[derive(Debug, Clone)]
pub struct ThetaStepper {
    lhs: TridiagFactor,
    rhs: SymTridiag,
}

impl ThetaStepper {
    /// Advances nodal values `x` by one step with the given load vector.
    pub fn step(&self, x: &mut [f64], load: &[f64], scratch: &mut [f64]) {
        self.rhs.mul_vec(x, scratch);
        for (s, l) in scratch.iter_mut().zip(load) {
            *s += l;
        }
        self.lhs.solve(scratch);
        x.copy_from_slice(scratch);
    }
}

pub fn theta_step(
    ops: &DiscreteOperators,
    theta: f64,
    dt: f64,
    state: &FieldState,
    load: &[f64],
) -> Result<FieldState> {
    let n = ops.mass.dim();
    if state.basis() != Basis::FemNodal(n + 1) || load.len() != n {
        return Err(invalid("state or load does not match the mesh"));
    }
    let stepper = ops.theta_stepper(theta, dt)?;
    let mut x = state.coeffs().to_vec();
    let mut scratch = vec![0.0; n];
    stepper.step(&mut x, load, &mut scratch);
    FieldState::new(state.basis(), x)
}

/// Load vector `(∫ f φ_i)_i` by Gauss quadrature with `order` points per cell.
pub fn load_vector<F: Fn(f64) -> f64>(mesh: &FemMesh, f: F, order: usize) -> Vec<f64> {
    let rule = GaussLegendre::new(order);
    let n = mesh.n_cells;
    let h = mesh.h;
    let mut load = vec![0.0; n - 1];
    for cell in 0..n {
        let a = cell as f64 * h;
        for (x, w) in rule.mapped(a, a + h) {
            let fx = f(x) * w;
            let right = (x - a) / h;
            // left node of the cell is `cell`, right node is `cell + 1` (1-based interior indices)
            if cell >= 1 {
                load[cell - 1] += fx * (1.0 - right);
            }
            if cell < n - 1 {
                load[cell] += fx * right;
            }
        }
    }
    load
}

pub fn l2_project<F: Fn(f64) -> f64>(
    mesh: &FemMesh,
    ops: &DiscreteOperators,
    f: F,
) -> Result<FieldState> {
    l2_project_with(mesh, ops, f, 4)
}

pub fn l2_project_with<F: Fn(f64) -> f64>(
    mesh: &FemMesh,
    ops: &DiscreteOperators,
    f: F,
    order: usize,
) -> Result<FieldState> {
    let load = load_vector(mesh, f, order);
    FieldState::new(mesh.basis(), ops.solve_mass(&load))
}

/// Exact load of `√2 sin(kπx)`, 1-based `k`.
pub fn sine_load(mesh: &FemMesh, k: usize) -> Vec<f64> {
    let w = k as f64 * PI;
    let h = mesh.h;
    let factor = 2.0 * (1.0 - (w * h).cos()) / (w * w * h);
    (1..mesh.n_cells)
        .map(|i| SQRT_2 * (w * mesh.node(i)).sin() * factor)
        .collect()
}

/// Loads of the first `modes` sine modes, one vector per mode.
pub fn sine_loads(mesh: &FemMesh, modes: usize) -> Vec<Vec<f64>> {
    (1..=modes).map(|k| sine_load(mesh, k)).collect()
}

/// Nodal vector of `P_h x` for a spectral field `x`.
pub fn project_spectral(mesh: &FemMesh, ops: &DiscreteOperators, coeffs: &[f64]) -> Vec<f64> {
    let mut load = vec![0.0; mesh.dim()];
    for (k, &c) in coeffs.iter().enumerate() {
        if c != 0.0 {
            for (l, s) in load.iter_mut().zip(sine_load(mesh, k + 1)) {
                *l += c * s;
            }
        }
    }
    ops.solve_mass(&load)
}

/// `|u_h − Σ c_k ẽ_k|_H²` for nodal values `u_h` and sine coefficients `c`.
pub fn distance_sq_to_spectral(
    mesh: &FemMesh,
    ops: &DiscreteOperators,
    nodal: &[f64],
    coeffs: &[f64],
) -> f64 {
    let mut d = ops.mass.quad_form(nodal, nodal);
    for (k, &c) in coeffs.iter().enumerate() {
        let l = sine_load(mesh, k + 1);
        let pair: f64 = nodal.iter().zip(&l).map(|(a, b)| a * b).sum();
        d += c * c - 2.0 * c * pair;
    }
    d.max(0.0)
}

/// Eigenpairs of the pencil (stiffness, mass), mass-orthonormal.
#[derive(Debug, Clone)]
pub struct DiscreteModes {
    pub rates: Vec<f64>,
    /// `vectors[m]` holds the nodal values of the `(m+1)`-th eigenvector.
    pub vectors: Vec<Vec<f64>>,
}

pub fn discrete_modes(mesh: &FemMesh) -> DiscreteModes {
    let n = mesh.n_cells;
    let h = mesh.h;
    let mut rates = Vec::with_capacity(n - 1);
    let mut vectors = Vec::with_capacity(n - 1);
    for m in 1..n {
        let c = (m as f64 * PI * h).cos();
        rates.push(6.0 / (h * h) * (1.0 - c) / (2.0 + c));
        let norm = ((h / 3.0) * (2.0 + c) * n as f64).sqrt();
        vectors.push(
            (1..n)
                .map(|i| SQRT_2 * (m as f64 * PI * mesh.node(i)).sin() / norm)
                .collect(),
        );
    }
    DiscreteModes { rates, vectors }
}

impl DiscreteModes {
    /// `P[m][k] = v̂_mᵀ L_k`, the discrete-mode coordinates of `P_h ẽ_k`.
    pub fn project_loads(&self, loads: &[Vec<f64>]) -> Vec<Vec<f64>> {
        self.vectors
            .iter()
            .map(|v| {
                loads
                    .iter()
                    .map(|l| v.iter().zip(l).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect()
    }

    /// Nodal values of `Σ_m a_m v̂_m`.
    pub fn synthesize(&self, amplitudes: &[f64]) -> Vec<f64> {
        let n = self.vectors.first().map_or(0, Vec::len);
        let mut out = vec![0.0; n];
        for (a, v) in amplitudes.iter().zip(&self.vectors) {
            if *a != 0.0 {
                for (o, x) in out.iter_mut().zip(v) {
                    *o += a * x;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct S1Row {
    pub n_cells: usize,
    pub h: f64,
    pub t: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct S1Slope {
    pub t: f64,
    pub q: f64,
    pub slope: f64,
    /// Largest `norm·t^{q/2}/h^q` over the mesh sequence.
    pub implied_constant: f64,
    pub passes: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct S1Table {
    pub probe_modes: usize,
    pub rows: Vec<S1Row>,
    pub slopes: Vec<S1Slope>,
}

/// Estimates `‖S_h(t)P_h − S(t)‖` restricted to the first `probe_modes` sine modes.
pub fn measure_s1_decay(
    n_cells: &[usize],
    t_grid: &[f64],
    q_grid: &[f64],
    probe_modes: usize,
) -> Result<S1Table> {
    if probe_modes == 0 {
        return Err(invalid("need at least one probe mode"));
    }
    let mut rows = Vec::new();
    for &n in n_cells {
        let (mesh, _) = assemble(n)?;
        let modes = discrete_modes(&mesh);
        let p = modes.project_loads(&sine_loads(&mesh, probe_modes));
        for &t in t_grid {
            if !(t > 0.0) {
                return Err(invalid(format!("probe time must be > 0, got {t}")));
            }
            rows.push(S1Row {
                n_cells: n,
                h: mesh.h,
                t,
                norm: s1_norm(&modes, &p, probe_modes, t),
            });
        }
    }
    let mut slopes = Vec::new();
    for &t in t_grid {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.t == t && r.norm > 0.0)
            .map(|r| (r.h, r.norm))
            .collect();
        if pts.len() < 2 {
            continue;
        }
        let slope = log_slope(&pts);
        for &q in q_grid {
            let implied_constant = pts
                .iter()
                .map(|(h, nrm)| nrm * t.powf(q / 2.0) / h.powf(q))
                .fold(0.0, f64::max);
            slopes.push(S1Slope {
                t,
                q,
                slope,
                implied_constant,
                passes: slope >= q - 0.2,
            });
        }
    }
    Ok(S1Table {
        probe_modes,
        rows,
        slopes,
    })
}

fn log_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x.ln() / n, b + y.ln() / n));
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in pts {
        sxy += (x.ln() - mx) * (y.ln() - my);
        sxx += (x.ln() - mx).powi(2);
    }
    sxy / sxx
}

/// Operator norm of `S_h(t)P_h − S(t)` on span{ẽ_1..ẽ_K} by power iteration on the Gram matrix.
fn s1_norm(modes: &DiscreteModes, p: &[Vec<f64>], probe: usize, t: f64) -> f64 {
    let d: Vec<f64> = modes.rates.iter().map(|mu| (-mu * t).exp()).collect();
    let b: Vec<f64> = (1..=probe)
        .map(|k| (-(k as f64 * PI).powi(2) * t).exp())
        .collect();
    // G = PᵀD²P − PᵀDP·B − B·PᵀDP + B²
    let mut g = vec![vec![0.0; probe]; probe];
    for (m, row) in p.iter().enumerate() {
        let dm = d[m];
        if dm == 0.0 {
            continue;
        }
        for i in 0..probe {
            let pi = row[i];
            if pi == 0.0 {
                continue;
            }
            for j in 0..probe {
                let pj = row[j];
                g[i][j] += pi * pj * (dm * dm - dm * b[j] - b[i] * dm);
            }
        }
    }
    for i in 0..probe {
        g[i][i] += b[i] * b[i];
    }
    let mut v = vec![1.0 / (probe as f64).sqrt(); probe];
    let mut w = vec![0.0; probe];
    let mut est = 0.0;
    for _ in 0..5000 {
        for i in 0..probe {
            w[i] = g[i].iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let nrm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nrm == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / nrm;
        }
        if (nrm - est).abs() <= 1e-13 * nrm {
            est = nrm;
            break;
        }
        est = nrm;
    }
    est.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn dense(m: &SymTridiag) -> DMatrix<f64> {
        let n = m.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                m.diag[i]
            } else if j == i + 1 {
                m.off[i]
            } else if i == j + 1 {
                m.off[j]
            } else {
                0.0
            }
        })
    }

    #[test]
    fn two_cell_system() {
        let (mesh, ops) = assemble(2).unwrap();
        assert_eq!(mesh.dim(), 1);
        assert!((ops.mass.diag[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((ops.stiffness.diag[0] - 4.0).abs() < 1e-15);
        assert!(assemble(1).is_err());
    }

    #[test]
    fn four_cell_mass_diagonal() {
        let (_, ops) = assemble(4).unwrap();
        assert!(ops.mass.diag.iter().all(|d| (d - 1.0 / 6.0).abs() < 1e-15));
    }

    #[test]
    fn generalized_eigenvalues_against_dense_solver() {
        let (mesh, ops) = assemble(64).unwrap();
        // M^{-1/2} K M^{-1/2} via Cholesky of the dense mass matrix
        let m = dense(&ops.mass);
        let k = dense(&ops.stiffness);
        let l = m.clone().cholesky().unwrap().l();
        let linv = l.try_inverse().unwrap();
        let c = &linv * k * linv.transpose();
        let mut ev: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let modes = discrete_modes(&mesh);
        for (a, b) in ev.iter().zip(&modes.rates) {
            assert!((a - b).abs() < 1e-9 * b, "{a} vs {b}");
        }
        assert!((ev[0] / (PI * PI) - 1.0).abs() < 1e-3);
        for (kk, e) in ev.iter().take(5).enumerate() {
            assert!(*e >= ((kk + 1) as f64 * PI).powi(2));
        }
    }

    #[test]
    fn discrete_modes_are_mass_orthonormal() {
        let (mesh, ops) = assemble(16).unwrap();
        let modes = discrete_modes(&mesh);
        for (i, u) in modes.vectors.iter().enumerate() {
            for (j, v) in modes.vectors.iter().enumerate() {
                let g = ops.mass.quad_form(u, v);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let (mesh, ops) = assemble(8).unwrap();
        // hat function at node 3
        let node = 3;
        let hat = |x: f64| (1.0 - (x - mesh.node(node)).abs() / mesh.h).max(0.0);
        let c = l2_project(&mesh, &ops, hat).unwrap();
        for (i, v) in c.coeffs().iter().enumerate() {
            let want = if i + 1 == node { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-13);
        }
        let z = l2_project(&mesh, &ops, |_| 0.0).unwrap();
        assert!(z.coeffs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn projection_error_of_first_mode() {
        let (mesh, ops) = assemble(64).unwrap();
        let p = l2_project(&mesh, &ops, |x| SQRT_2 * (PI * x).sin()).unwrap();
        // |P_h f − f|² = |f|² − |P_h f|² for an orthogonal projector
        let err = distance_sq_to_spectral(&mesh, &ops, p.coeffs(), &[1.0]).sqrt();
        // independent fine-quadrature evaluation of the same L² error
        let g = GaussLegendre::new(12);
        let mut fine = 0.0;
        for cell in 0..mesh.n_cells {
            let a = cell as f64 * mesh.h;
            fine += g.integrate(a, a + mesh.h, |x| {
                let left = if cell == 0 { 0.0 } else { p.coeffs()[cell - 1] };
                let right = if cell + 1 == mesh.n_cells { 0.0 } else { p.coeffs()[cell] };
                let uh = left + (right - left) * (x - a) / mesh.h;
                (uh - SQRT_2 * (PI * x).sin()).powi(2)
            });
        }
        // the closed-form distance subtracts O(1) terms, so agreement is limited by cancellation
        assert!((err - fine.sqrt()).abs() < 1e-5 * err, "{err} {}", fine.sqrt());
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn closed_form_sine_load_matches_quadrature() {
        let (mesh, _) = assemble(10).unwrap();
        for k in [1, 2, 7, 23] {
            let exact = sine_load(&mesh, k);
            let quad = load_vector(&mesh, |x| crate::spectral::basis_value(k, x), 24);
            for (a, b) in exact.iter().zip(&quad) {
                assert!((a - b).abs() < 1e-14, "k={k}");
            }
        }
    }

    #[test]
    fn theta_step_examples() {
        let (mesh, ops) = assemble(8).unwrap();
        let zero = FieldState::new(mesh.basis(), vec![0.0; 7]).unwrap();
        let out = theta_step(&ops, 1.0, 0.1, &zero, &[0.0; 7]).unwrap();
        assert!(out.coeffs().iter().all(|&v| v == 0.0));
        assert!(theta_step(&ops, 0.5, 0.1, &zero, &[0.0; 7]).is_err());
        assert!(theta_step(&ops, 1.1, 0.1, &zero, &[0.0; 7]).is_err());

        // scalar analogue
        let (s, _) = crate::schemes::rational_factors(1.0, 0.5, PI * PI);
        assert!((s - 1.0 / (1.0 + 0.5 * PI * PI)).abs() < 1e-15);
        assert!((s - 0.16850).abs() < 1e-5);
    }

    #[test]
    fn theta_step_damps_eigenvectors() {
        let (mesh, ops) = assemble(32).unwrap();
        let modes = discrete_modes(&mesh);
        for &theta in &[0.51, 0.75, 1.0] {
            for &dt in &[1e-4, 1e-2, 1.0] {
                for (mu, v) in modes.rates.iter().zip(&modes.vectors) {
                    let x = FieldState::new(mesh.basis(), v.clone()).unwrap();
                    let y = theta_step(&ops, theta, dt, &x, &vec![0.0; mesh.dim()]).unwrap();
                    let (s, _) = crate::schemes::rational_factors(theta, dt, *mu);
                    for (a, b) in y.coeffs().iter().zip(v) {
                        assert!((a - s * b).abs() < 1e-10 * b.abs().max(1e-3));
                    }
                    assert!(s.abs() <= 1.0);
                    if theta == 1.0 {
                        assert!(s > 0.0 && s < 1.0);
                    }
                }
            }
        }
    }

    #[test]
    fn s1_norm_limits_and_ratio() {
        let table = measure_s1_decay(&[32, 64], &[0.01, 50.0], &[2.0], 256).unwrap();
        let get = |n: usize, t: f64| {
            table
                .rows
                .iter()
                .find(|r| r.n_cells == n && r.t == t)
                .unwrap()
                .norm
        };
        assert!(get(32, 50.0) < 1e-100);
        let ratio = get(32, 0.01) / get(64, 0.01);
        assert!(ratio > 4.0 / 1.5 && ratio < 4.0 * 1.5, "ratio {ratio}");
        let tiny = measure_s1_decay(&[16], &[1e-9], &[1.0], 64).unwrap();
        assert!(tiny.rows[0].norm <= 2.0);
    }
}
