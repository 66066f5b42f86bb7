//! Linearized operator `H_c`, its coefficient fields, and the transonic constants.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nonlinearity::Nonlinearity;
use crate::profile::{Branch, ProfileError, TravelingWave};
use crate::scalar::Real;
use crate::spectral_grid::{Grid, HydroState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error("q1 vanishes at x = {0}: speed outside the validated window")]
    Q1Vanishes(f64),
    #[error("tau_c = {tau} is not positive at c = {c}: speed outside the validated window")]
    WindowViolation { c: f64, tau: f64 },
}

/// Sixth-order staggered first-derivative weights (half-spacing offsets 1/2, 3/2, 5/2).
const STAGGERED: [f64; 3] = [75.0 / 64.0, -25.0 / 384.0, 3.0 / 640.0];

/// Block operator on stacked `(η, v)` of the form
/// `[[Gᵀ diag(a) G + diag(d_η), diag(o)], [diag(o), diag(d_v)]]`,
/// where `G` maps nodes to midpoints. Stored by coefficient fields; periodic wrap.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix<T> {
    pub n: usize,
    pub dx: T,
    /// Divergence-form coefficient at midpoints `x_{i+1/2}`.
    pub a_mid: Vec<T>,
    pub diag_eta: Vec<T>,
    pub off: Vec<T>,
    pub diag_v: Vec<T>,
}

impl<T: Real> OperatorMatrix<T> {
    pub fn dim(&self) -> usize {
        2 * self.n
    }

    /// Node-to-midpoint derivative `(Gu)_{i+1/2}`.
    pub fn gradient(&self, u: &[T]) -> Vec<T> {
        let n = self.n;
        let w = STAGGERED.map(T::lit);
        (0..n)
            .map(|i| {
                let at = |o: isize| u[(i as isize + o).rem_euclid(n as isize) as usize];
                (w[0] * (at(1) - at(0)) + w[1] * (at(2) - at(-1)) + w[2] * (at(3) - at(-2))) / self.dx
            })
            .collect()
    }

    /// Adjoint of [`Self::gradient`].
    pub fn gradient_adjoint(&self, g: &[T]) -> Vec<T> {
        let n = self.n;
        let w = STAGGERED.map(T::lit);
        (0..n)
            .map(|j| {
                let at = |o: isize| g[(j as isize + o).rem_euclid(n as isize) as usize];
                (w[0] * (at(-1) - at(0)) + w[1] * (at(-2) - at(1)) + w[2] * (at(-3) - at(2))) / self.dx
            })
            .collect()
    }

    pub fn apply(&self, eta: &[T], v: &[T]) -> (Vec<T>, Vec<T>) {
        let grad = self.gradient(eta);
        let flux: Vec<T> = grad.iter().zip(&self.a_mid).map(|(&g, &a)| g * a).collect();
        let mut out_eta = self.gradient_adjoint(&flux);
        let mut out_v = Vec::with_capacity(self.n);
        for j in 0..self.n {
            out_eta[j] += self.diag_eta[j] * eta[j] + self.off[j] * v[j];
            out_v.push(self.off[j] * eta[j] + self.diag_v[j] * v[j]);
        }
        (out_eta, out_v)
    }

    pub fn apply_state(&self, s: &HydroState<T>) -> HydroState<T> {
        let (e, v) = self.apply(&s.eta, &s.v);
        HydroState::new(e, v, s.time)
    }

    /// `⟨Aε, ε⟩` with the grid quadrature weight `dx`.
    pub fn quadratic_form(&self, s: &HydroState<T>) -> T {
        let (e, v) = self.apply(&s.eta, &s.v);
        let dot: T = e.iter().zip(&s.eta).chain(v.iter().zip(&s.v)).map(|(&a, &b)| a * b).sum();
        dot * self.dx
    }
}

impl OperatorMatrix<f64> {
    /// Dense `2n × 2n` matrix in block order `(η₀..η_{n-1}, v₀..v_{n-1})`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        let taps: Vec<(isize, f64)> = [(1, 0), (0, 0), (2, 1), (-1, 1), (3, 2), (-2, 2)]
            .iter()
            .enumerate()
            .map(|(q, &(o, w))| (o, if q % 2 == 0 { STAGGERED[w] } else { -STAGGERED[w] } / self.dx))
            .collect();
        let wrap = |i: usize, o: isize| (i as isize + o).rem_euclid(n as isize) as usize;
        for i in 0..n {
            for &(oj, gj) in &taps {
                for &(ok, gk) in &taps {
                    m[(wrap(i, oj), wrap(i, ok))] += gj * self.a_mid[i] * gk;
                }
            }
        }
        for j in 0..n {
            m[(j, j)] += self.diag_eta[j];
            m[(j, n + j)] += self.off[j];
            m[(n + j, j)] += self.off[j];
            m[(n + j, n + j)] += self.diag_v[j];
        }
        m
    }

    /// Dense X-norm Gram matrix `dx·(I + GᵀG) ⊕ dx·I`.
    pub fn x_gram(&self) -> DMatrix<f64> {
        let unit = OperatorMatrix {
            n: self.n,
            dx: self.dx,
            a_mid: vec![1.0; self.n],
            diag_eta: vec![1.0; self.n],
            off: vec![0.0; self.n],
            diag_v: vec![1.0; self.n],
        };
        unit.to_dense() * self.dx
    }
}

/// Midpoint values `u(x_j + dx/2)` by trigonometric interpolation.
fn at_midpoints<T: Real>(grid: &Grid<T>, u: &[T]) -> Vec<T> {
    grid.shift(u, grid.dx() / T::lit(2.0))
}

/// `𝓜_c = -(η''/(4B²) + η'²/(4B³) + f'(B)/2)` from the exact profile derivatives.
fn potential_term<T: Real>(wave: &TravelingWave<T>) -> Vec<T> {
    let (d1, d2) = wave.exact_derivatives();
    let four = T::lit(4.0);
    (0..wave.eta.len())
        .map(|j| {
            let b = T::one() - wave.eta[j];
            -(d2[j] / (four * b * b) + d1[j] * d1[j] / (four * b * b * b) + wave.f_prime[j] / T::lit(2.0))
        })
        .collect()
}

/// `H_c = ∇²(E - cp)(Q_c)` with the divergence-form block `-(ε'/(4B))'`.
pub fn assemble_h_c<T: Real>(wave: &TravelingWave<T>) -> OperatorMatrix<T> {
    let grid = &wave.grid;
    let four = T::lit(4.0);
    let b: Vec<T> = wave.eta.iter().map(|&e| T::one() - e).collect();
    let a_mid = at_midpoints(grid, &wave.eta).into_iter().map(|e| T::one() / (four * (T::one() - e))).collect();
    OperatorMatrix {
        n: grid.n(),
        dx: grid.dx(),
        a_mid,
        diag_eta: potential_term(wave),
        off: b.iter().map(|&bb| -wave.c / (T::lit(2.0) * bb)).collect(),
        diag_v: b,
    }
}

/// `H_c ε` with spectral derivatives, used on dynamics grids.
pub fn apply_h_spectral<T: Real>(wave: &TravelingWave<T>, eps: &HydroState<T>) -> HydroState<T> {
    let grid = &wave.grid;
    let four = T::lit(4.0);
    let m = potential_term(wave);
    let d = grid.derivative(&eps.eta, 1);
    let flux: Vec<T> = d.iter().zip(&wave.eta).map(|(&u, &e)| u / (four * (T::one() - e))).collect();
    let div = grid.derivative(&flux, 1);
    let mut out_eta = Vec::with_capacity(grid.n());
    let mut out_v = Vec::with_capacity(grid.n());
    for j in 0..grid.n() {
        let b = T::one() - wave.eta[j];
        let o = -wave.c / (T::lit(2.0) * b);
        out_eta.push(-div[j] + m[j] * eps.eta[j] + o * eps.v[j]);
        out_v.push(o * eps.eta[j] + b * eps.v[j]);
    }
    HydroState::new(out_eta, out_v, eps.time)
}

/// Exact `∂_x Q_c = (η', cη'/(2B²))`.
pub fn kernel_direction<T: Real>(wave: &TravelingWave<T>) -> HydroState<T> {
    let (d1, _) = wave.exact_derivatives();
    let two = T::lit(2.0);
    let v = d1
        .iter()
        .zip(&wave.eta)
        .map(|(&d, &e)| wave.c * d / (two * (T::one() - e) * (T::one() - e)))
        .collect();
    HydroState::new(d1, v, T::zero())
}

/// `∇p(Q_c) = ½(v_c, η_c)`.
pub fn momentum_gradient<T: Real>(wave: &TravelingWave<T>) -> HydroState<T> {
    let half = T::lit(0.5);
    HydroState::new(
        wave.v.iter().map(|&u| half * u).collect(),
        wave.eta.iter().map(|&u| half * u).collect(),
        T::zero(),
    )
}

/// Lowest eigenpairs of a dense symmetric problem, ascending.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: Vec<f64>,
    /// Columns are unit eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
}

pub fn spectrum(matrix: &OperatorMatrix<f64>, count: usize) -> Spectrum {
    let eig = matrix.to_dense().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    order.truncate(count);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    Spectrum { values, vectors }
}

/// Lowest `count` eigenvalues without eigenvectors.
pub fn lowest_eigenvalues(matrix: &OperatorMatrix<f64>, count: usize) -> Vec<f64> {
    let mut ev: Vec<f64> = matrix.to_dense().symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev.truncate(count);
    ev
}

fn stacked(s: &HydroState<f64>) -> DVector<f64> {
    DVector::from_iterator(2 * s.eta.len(), s.eta.iter().chain(&s.v).copied())
}

/// Minimum of `⟨Aε, ε⟩/‖ε‖²_X` over the ℓ²-orthogonal complement of `constraints`.
///
/// With `W = LLᵀ` the X-Gram factor, the problem becomes a standard eigenproblem for
/// `L⁻¹AL⁻ᵀ` restricted to the complement of `L⁻¹C`; the constrained directions are
/// lifted out of the way by a large shift.
pub fn coercivity_lc(matrix: &OperatorMatrix<f64>, constraints: &[HydroState<f64>]) -> f64 {
    let a = matrix.to_dense() * matrix.dx;
    let w = matrix.x_gram();
    let chol = w.cholesky().expect("X-Gram matrix is positive definite");
    let l = chol.l();
    let linv_a = l.solve_lower_triangular(&a).expect("nonsingular factor");
    let mut m = l.solve_lower_triangular(&linv_a.transpose()).expect("nonsingular factor");
    m = (&m + m.transpose()) * 0.5;
    if !constraints.is_empty() {
        let cols: Vec<DVector<f64>> = constraints
            .iter()
            .map(|c| l.solve_lower_triangular(&stacked(c)).expect("nonsingular factor"))
            .collect();
        let q = DMatrix::from_columns(&cols).qr().q();
        let p = DMatrix::identity(m.nrows(), m.nrows()) - &q * q.transpose();
        let shift = m.diagonal().amax() * 10.0 + 1.0;
        m = &p * m * &p + &q * q.transpose() * shift;
        m = (&m + m.transpose()) * 0.5;
    }
    m.symmetric_eigenvalues().min()
}

/// `ẽ = S H_c ε`, with `S` swapping the two components.
pub fn dual_variable<T: Real>(wave: &TravelingWave<T>, eps: &HydroState<T>) -> HydroState<T> {
    let h = apply_h_spectral(wave, eps);
    HydroState::new(h.v, h.eta, eps.time)
}

/// Coefficient fields of the virial quadratic form, evaluated from the first integral.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QCoefficients {
    pub x: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub q3: Vec<f64>,
    pub q1_tilde: Vec<f64>,
    pub q4: Vec<f64>,
    pub q5: Vec<f64>,
    pub q1_over_eta: Vec<f64>,
    pub q1_tilde_over_eta: Vec<f64>,
    /// Limit of `q₄` as `x → +∞`; the limit at `-∞` is its negative.
    pub q4_limit: f64,
}

/// `(q₁/η, q̃₁/η)` as functions of `η` on the branch.
pub fn q_ratios<T: Real>(b: &Branch<'_, T>, eta: T) -> (T, T) {
    let g = b.g(eta);
    let gp = b.g_prime(eta);
    let bb = T::one() - eta;
    let two = T::lit(2.0);
    let q1 = two * g - bb * gp;
    let q1t = -T::lit(3.0) * gp / (T::lit(4.0) * bb) - g / (two * bb * bb) - b.c * b.c * g / (bb * bb * q1);
    (q1, q1t)
}

pub fn q_coefficients(wave: &TravelingWave<f64>) -> Result<QCoefficients, OperatorError> {
    let c = wave.c;
    let c2 = c * c;
    let n = wave.eta.len();
    let (d1, _) = wave.exact_derivatives();
    let mut q = QCoefficients {
        x: wave.grid.x().to_vec(),
        m1: Vec::with_capacity(n),
        m2: Vec::with_capacity(n),
        q1: Vec::with_capacity(n),
        q2: Vec::with_capacity(n),
        q3: Vec::with_capacity(n),
        q1_tilde: Vec::with_capacity(n),
        q4: Vec::with_capacity(n),
        q5: Vec::with_capacity(n),
        q1_over_eta: Vec::with_capacity(n),
        q1_tilde_over_eta: Vec::with_capacity(n),
        q4_limit: -wave.nu * (wave.nu * wave.nu + c2),
    };
    for j in 0..n {
        let (e, g, gp, x) = (wave.eta[j], wave.g[j].max(0.0), wave.g_prime[j], q.x[j]);
        let b = 1.0 - e;
        let sgn = if x == 0.0 { 0.0 } else { x.signum() };
        let m1 = sgn * g.sqrt();
        let q1r = 2.0 * g - b * gp;
        if q1r <= 0.0 {
            return Err(OperatorError::Q1Vanishes(x));
        }
        let q1tr = -0.75 * gp / b - g / (2.0 * b * b) - c2 * g / (b * b * q1r);
        q.m1.push(m1);
        q.m2.push(-c * d1[j] / (2.0 * b * b));
        q.q1.push(e * q1r);
        q.q2.push(c * e * gp);
        q.q3.push(-2.0 * c * d1[j] / b);
        q.q1_tilde.push(e * q1tr);
        q.q4.push(-m1 * (g + c2) / b);
        q.q5.push(
            e * (0.75 * g * gp / b
                + g * g / (2.0 * b * b)
                + c2 * g / (2.0 * b)
                + c2 * gp / (4.0 * b)
                + c2 * e * g / (2.0 * b * b)),
        );
        q.q1_over_eta.push(q1r);
        q.q1_tilde_over_eta.push(q1tr);
    }
    Ok(q)
}

/// Spectral derivative of a field whose limits at `±L` differ by `jump`.
pub fn derivative_with_jump(grid: &Grid<f64>, u: &[f64], jump: f64) -> Vec<f64> {
    let slope = jump / (2.0 * grid.half_length());
    let detrended: Vec<f64> = u.iter().zip(grid.x()).map(|(&a, &x)| a - slope * x).collect();
    grid.derivative(&detrended, 1).into_iter().map(|d| d + slope).collect()
}

impl QCoefficients {
    /// Pointwise `-q₄'/2 + q₅`.
    pub fn identity_residual(&self, grid: &Grid<f64>) -> Vec<f64> {
        let d = derivative_with_jump(grid, &self.q4, 2.0 * self.q4_limit);
        d.iter().zip(&self.q5).map(|(&a, &b)| -0.5 * a + b).collect()
    }

    /// `∫ q₁(e_v + q₂/(2q₁) e_η + q₃/(2q₁) e_η')² + q̃₁(e_η' + m₁ e_η)²`.
    pub fn gauss_reduced_form(&self, grid: &Grid<f64>, e: &HydroState<f64>) -> f64 {
        let de = grid.derivative(&e.eta, 1);
        let dens: Vec<f64> = (0..grid.n())
            .map(|j| {
                let a = e.v[j] + (self.q2[j] * e.eta[j] + self.q3[j] * de[j]) / (2.0 * self.q1[j]);
                let b = de[j] + self.m1[j] * e.eta[j];
                self.q1[j] * a * a + self.q1_tilde[j] * b * b
            })
            .collect();
        grid.integrate(&dens)
    }
}

/// `-4⟨M_c S H_c ∂_x ẽ, ẽ⟩` with `M_c = [[m₂, m₁], [m₁, 0]]`.
pub fn virial_form_lhs(wave: &TravelingWave<f64>, q: &QCoefficients, e: &HydroState<f64>) -> f64 {
    let grid = &wave.grid;
    let de = HydroState::new(grid.derivative(&e.eta, 1), grid.derivative(&e.v, 1), 0.0);
    let h = apply_h_spectral(wave, &de);
    let (s0, s1) = (&h.v, &h.eta);
    let dens: Vec<f64> = (0..grid.n())
        .map(|j| {
            let r0 = q.m2[j] * s0[j] + q.m1[j] * s1[j];
            let r1 = q.m1[j] * s0[j];
            r0 * e.eta[j] + r1 * e.v[j]
        })
        .collect();
    -4.0 * grid.integrate(&dens)
}

/// Constants of the limiting operator `T_∞` near the sound speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransonicConstants {
    pub c: f64,
    pub nu2: f64,
    pub k: f64,
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub tau_c: f64,
}

impl TransonicConstants {
    /// `k₂k₀ - k₃² - 9k₀k₁ν²/4`, zero by construction of `k₂`.
    pub fn determinant_defect(&self) -> f64 {
        self.k2 * self.k0 - self.k3 * self.k3 - 2.25 * self.k0 * self.k1 * self.nu2
    }

    /// Limit of `τ_c/ν²` as `ν → 0` implied by the constants: `-9k/(4(c_s²+4))`.
    pub fn tau_ratio_limit(&self) -> f64 {
        let cs2 = self.c * self.c + self.nu2;
        -9.0 * self.k / (4.0 * (cs2 + 4.0))
    }

    /// Symbol `[[k₁ξ² + k₂, k₃], [k₃, k₀]]` and its lower eigenvalue.
    pub fn lower_branch(&self, xi2: f64) -> f64 {
        let a = self.k1 * xi2 + self.k2;
        let d = self.k0;
        0.5 * ((a + d) - ((a - d).powi(2) + 4.0 * self.k3 * self.k3).sqrt())
    }
}

pub fn transonic_constants(model: &dyn Nonlinearity<f64>, c: f64) -> Result<TransonicConstants, OperatorError> {
    let nu2 = crate::profile::nu_c(model, c)?.powi(2);
    let k = crate::nonlinearity::transonic_coefficient(model);
    let k0 = 2.0 * nu2 - k / 3.0;
    let k1 = -(k / 4.0 + nu2 / 2.0 + c * c * nu2 / k0);
    let k3 = 0.5 * c * (nu2 + k / 3.0);
    let k2 = k3 * k3 / k0 + 2.25 * k1 * nu2;
    let tau_c = 0.5 * ((k2 + k0) - ((k2 - k0).powi(2) + 4.0 * k3 * k3).sqrt());
    if !(tau_c > 0.0) {
        return Err(OperatorError::WindowViolation { c, tau: tau_c });
    }
    Ok(TransonicConstants { c, nu2, k, k0, k1, k2, k3, tau_c })
}

/// Discretized `T_∞ = [[-k₁∂² + k₂, k₃], [k₃, k₀]]` on `grid` with the staggered stencil.
pub fn assemble_t_limit(k: &TransonicConstants, grid: &Grid<f64>) -> OperatorMatrix<f64> {
    let n = grid.n();
    OperatorMatrix {
        n,
        dx: grid.dx(),
        a_mid: vec![k.k1; n],
        diag_eta: vec![k.k2; n],
        off: vec![k.k3; n],
        diag_v: vec![k.k0; n],
    }
}

/// Eigenvalues of a constant-coefficient operator by Fourier diagonalization: each grid
/// wavenumber `ξ` contributes the two eigenvalues of the stencil symbol
/// `[[aσ(ξ)² + d_η, o], [o, d_v]]`, `σ(ξ) = (2/dx)Σ w_m sin((2m-1)ξdx/2)`.
pub fn constant_coefficient_spectrum(m: &OperatorMatrix<f64>, grid: &Grid<f64>) -> Vec<(f64, f64, f64)> {
    let (a, de, o, dv) = (m.a_mid[0], m.diag_eta[0], m.off[0], m.diag_v[0]);
    grid.wavenumbers()
        .iter()
        .map(|&xi| {
            let h = xi * m.dx / 2.0;
            let sigma = 2.0 / m.dx
                * (STAGGERED[0] * h.sin() + STAGGERED[1] * (3.0 * h).sin() + STAGGERED[2] * (5.0 * h).sin());
            let p = a * sigma * sigma + de;
            let disc = ((p - dv).powi(2) + 4.0 * o * o).sqrt();
            (xi, 0.5 * (p + dv - disc), 0.5 * (p + dv + disc))
        })
        .collect()
}

/// Pointwise virial weight `N(x) = [[0, x], [x, 0]] + γ M_c(x)`.
#[derive(Debug, Clone)]
pub struct VirialMatrix {
    pub gamma: f64,
    pub x: Vec<f64>,
    pub m1: Vec<f64>,
    pub m2: Vec<f64>,
}

impl VirialMatrix {
    /// Entries `(N₁₁, N₁₂, N₂₂)` at grid point `j`.
    pub fn entries(&self, j: usize) -> (f64, f64, f64) {
        (self.gamma * self.m2[j], self.x[j] + self.gamma * self.m1[j], 0.0)
    }

    /// `⟨Nẽ, ẽ⟩`.
    pub fn form(&self, grid: &Grid<f64>, e: &HydroState<f64>) -> f64 {
        let dens: Vec<f64> = (0..grid.n())
            .map(|j| {
                let (a, b, d) = self.entries(j);
                a * e.eta[j] * e.eta[j] + 2.0 * b * e.eta[j] * e.v[j] + d * e.v[j] * e.v[j]
            })
            .collect();
        grid.integrate(&dens)
    }

    /// `sup_x ‖M_c(x)‖` (spectral norm of the 2×2 block).
    pub fn m_sup(&self) -> f64 {
        (0..self.x.len())
            .map(|j| {
                let (a, b) = (self.m2[j], self.m1[j]);
                0.5 * a.abs() + (0.25 * a * a + b * b).sqrt()
            })
            .fold(0.0, f64::max)
    }
}

pub fn virial_matrix(wave: &TravelingWave<f64>, gamma: f64) -> VirialMatrix {
    let (d1, _) = wave.exact_derivatives();
    let x = wave.grid.x().to_vec();
    let m1 = wave.g.iter().zip(&x).map(|(&g, &x)| if x == 0.0 { 0.0 } else { x.signum() * g.max(0.0).sqrt() }).collect();
    let m2 = d1.iter().zip(&wave.eta).map(|(&d, &e)| -wave.c * d / (2.0 * (1.0 - e).powi(2))).collect();
    VirialMatrix { gamma, x, m1, m2 }
}

/// Summary of the spectral study at one speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub c: f64,
    pub nu2: f64,
    pub eigs: Vec<f64>,
    pub negative_count: usize,
    pub kernel_alignment: f64,
    pub lc: f64,
    pub k0: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub tau_c: f64,
}

/// Eigenvalues below this count as negative; those within it as kernel.
pub const KERNEL_TOL: f64 = 1e-6;

/// Lowest eigenvalues, negative count, kernel alignment and `l_c` for `wave`.
///
/// The transonic constants are filled in when they exist (`τ_c > 0`), else left `NaN`.
pub fn spectral_report(
    model: &dyn Nonlinearity<f64>,
    wave: &TravelingWave<f64>,
    count: usize,
) -> SpectralReport {
    let h = assemble_h_c(wave);
    let sp = spectrum(&h, count.max(2));
    let negative_count = sp.values.iter().filter(|&&l| l < -KERNEL_TOL).count();
    let kernel = stacked(&kernel_direction(wave));
    let kernel_alignment = (0..sp.values.len())
        .map(|i| sp.vectors.column(i).dot(&kernel).abs() / kernel.norm())
        .fold(0.0, f64::max);
    let lc = coercivity_lc(&h, &[kernel_direction(wave), momentum_gradient(wave)]);
    let t = transonic_constants(model, wave.c).ok();
    let pick = |f: fn(&TransonicConstants) -> f64| t.as_ref().map(f).unwrap_or(f64::NAN);
    SpectralReport {
        c: wave.c,
        nu2: wave.nu * wave.nu,
        eigs: sp.values,
        negative_count,
        kernel_alignment,
        lc,
        k0: pick(|t| t.k0),
        k1: pick(|t| t.k1),
        k2: pick(|t| t.k2),
        k3: pick(|t| t.k3),
        tau_c: pick(|t| t.tau_c),
    }
}
