//! Uniform periodic grid on `[-L, L)`, Fourier calculus, and the norms used throughout.
//!
//! The Nyquist mode is dropped by every derivative multiplier, so derivative operators
//! compose exactly.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("grid size {0} must be a power of two and at least 256")]
    BadSize(usize),
    #[error("half-length {0} must be positive and finite")]
    BadLength(f64),
    #[error("field length {got} does not match grid size {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Clone)]
pub struct Grid<T: Real> {
    n: usize,
    l: T,
    dx: T,
    x: Vec<T>,
    k: Vec<T>,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
}

impl<T: Real> fmt::Debug for Grid<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("n", &self.n).field("l", &self.l).finish()
    }
}

impl<T: Real> PartialEq for Grid<T> {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.l == other.l
    }
}

pub const MIN_POINTS: usize = 256;

impl<T: Real> Grid<T> {
    pub fn new(n: usize, l: T) -> Result<Self, GridError> {
        if n < MIN_POINTS || !n.is_power_of_two() {
            return Err(GridError::BadSize(n));
        }
        if !(l > T::zero()) || !l.is_finite() {
            return Err(GridError::BadLength(l.as_f64()));
        }
        let dx = T::lit(2.0) * l / T::of(n);
        let x = (0..n).map(|j| -l + T::of(j) * dx).collect();
        let k0 = T::PI() / l;
        let half = n / 2;
        let k = (0..n)
            .map(|j| if j < half { T::of(j) * k0 } else { -(T::of(n - j) * k0) })
            .collect();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        Ok(Self { n, l, dx, x, k, fwd, inv })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> T {
        self.l
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    /// Wavenumbers in FFT order; index `n/2` is the Nyquist mode `-π n/(2L)`.
    pub fn wavenumbers(&self) -> &[T] {
        &self.k
    }

    /// Largest wavenumber magnitude kept by the derivative multipliers.
    pub fn k_max(&self) -> T {
        T::PI() / self.dx
    }

    /// Index of `x = 0`.
    pub fn origin(&self) -> usize {
        self.n / 2
    }

    /// Stable identifier used for caching and reproducibility metadata.
    pub fn key(&self) -> String {
        format!("n{}-L{:.12e}", self.n, self.l.as_f64())
    }

    pub fn check(&self, field_len: usize) -> Result<(), GridError> {
        if field_len == self.n {
            Ok(())
        } else {
            Err(GridError::LengthMismatch { expected: self.n, got: field_len })
        }
    }

    pub fn fft(&self, u: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = u.to_vec();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn fft_real(&self, u: &[T]) -> Vec<Complex<T>> {
        let mut buf: Vec<Complex<T>> = u.iter().map(|&r| Complex::new(r, T::zero())).collect();
        self.fwd.process(&mut buf);
        buf
    }

    pub fn ifft(&self, hat: &[Complex<T>]) -> Vec<Complex<T>> {
        let mut buf = hat.to_vec();
        self.inv.process(&mut buf);
        let scale = T::one() / T::of(self.n);
        buf.iter_mut().for_each(|z| *z = *z * scale);
        buf
    }

    pub fn ifft_real(&self, hat: &[Complex<T>]) -> Vec<T> {
        self.ifft(hat).into_iter().map(|z| z.re).collect()
    }

    /// Multiplier `(ik)^order` with the Nyquist mode removed.
    pub fn derivative_multiplier(&self, j: usize, order: u32) -> Complex<T> {
        if j == self.n / 2 && order > 0 {
            return Complex::new(T::zero(), T::zero());
        }
        Complex::new(T::zero(), self.k[j]).powu(order)
    }

    /// Derivative of order `order` from a precomputed spectrum.
    pub fn derivative_from_hat(&self, hat: &[Complex<T>], order: u32) -> Vec<T> {
        let d: Vec<Complex<T>> =
            hat.iter().enumerate().map(|(j, &h)| h * self.derivative_multiplier(j, order)).collect();
        self.ifft_real(&d)
    }

    pub fn derivative(&self, u: &[T], order: u32) -> Vec<T> {
        if order == 0 {
            return u.to_vec();
        }
        self.derivative_from_hat(&self.fft_real(u), order)
    }

    pub fn derivative_complex(&self, u: &[Complex<T>], order: u32) -> Vec<Complex<T>> {
        let mut hat = self.fft(u);
        hat.iter_mut().enumerate().for_each(|(j, h)| *h = *h * self.derivative_multiplier(j, order));
        self.ifft(&hat)
    }

    /// Periodic trapezoid rule, `dx Σ u_j`.
    pub fn integrate(&self, u: &[T]) -> T {
        u.iter().copied().sum::<T>() * self.dx
    }

    pub fn inner(&self, a: &[T], b: &[T]) -> T {
        a.iter().zip(b).map(|(&p, &q)| p * q).sum::<T>() * self.dx
    }

    /// `u(x + s)` by trigonometric interpolation.
    pub fn shift(&self, u: &[T], s: T) -> Vec<T> {
        let mut hat = self.fft_real(u);
        for (j, h) in hat.iter_mut().enumerate() {
            let phase = self.k[j] * s;
            let rot = if j == self.n / 2 {
                Complex::new(phase.cos(), T::zero())
            } else {
                Complex::new(phase.cos(), phase.sin())
            };
            *h = *h * rot;
        }
        self.ifft_real(&hat)
    }

    /// Zeroes every mode with `|m| ≥ n/3` (2/3 rule).
    pub fn dealias(&self, u: &mut [T]) {
        let mut hat = self.fft_real(u);
        self.dealias_hat(&mut hat);
        let back = self.ifft_real(&hat);
        u.copy_from_slice(&back);
    }

    pub fn dealias_hat(&self, hat: &mut [Complex<T>]) {
        let cut = self.n / 3;
        for (j, h) in hat.iter_mut().enumerate() {
            let m = if j <= self.n / 2 { j } else { self.n - j };
            if m >= cut {
                *h = Complex::new(T::zero(), T::zero());
            }
        }
    }

    /// Periodic antiderivative of `u - mean(u)`, pinned to zero at `x = 0`.
    pub fn antiderivative(&self, u: &[T]) -> Vec<T> {
        let mut hat = self.fft_real(u);
        hat[0] = Complex::new(T::zero(), T::zero());
        hat[self.n / 2] = Complex::new(T::zero(), T::zero());
        for (j, h) in hat.iter_mut().enumerate().skip(1) {
            if j != self.n / 2 {
                *h = *h / Complex::new(T::zero(), self.k[j]);
            }
        }
        let mut out = self.ifft_real(&hat);
        let anchor = out[self.origin()];
        out.iter_mut().for_each(|y| *y -= anchor);
        out
    }

    /// `∫_0^x u` for a field that decays at the box edges.
    pub fn cumulative_integral(&self, u: &[T]) -> Vec<T> {
        let mean = self.integrate(u) / (T::lit(2.0) * self.l);
        let periodic = self.antiderivative(u);
        periodic.iter().zip(&self.x).map(|(&p, &x)| p + mean * x).collect()
    }

    /// Weight `min(|x|, L - dx/2)^ρ`.
    pub fn weight(&self, rho: T) -> Vec<T> {
        let cap = self.l - self.dx / T::lit(2.0);
        self.x
            .iter()
            .map(|&x| if rho == T::zero() { T::one() } else { x.abs().min(cap).powf(rho) })
            .collect()
    }
}

/// Hydrodynamic pair `(η, v)` on a grid at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydroState<T> {
    pub eta: Vec<T>,
    pub v: Vec<T>,
    pub time: T,
}

impl<T: Real> HydroState<T> {
    pub fn new(eta: Vec<T>, v: Vec<T>, time: T) -> Self {
        Self { eta, v, time }
    }

    pub fn zeros(n: usize) -> Self {
        Self { eta: vec![T::zero(); n], v: vec![T::zero(); n], time: T::zero() }
    }

    pub fn max_eta(&self) -> T {
        self.eta.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn is_finite(&self) -> bool {
        self.eta.iter().chain(&self.v).all(|u| u.is_finite())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            eta: self.eta.iter().zip(&other.eta).map(|(&a, &b)| a - b).collect(),
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| a - b).collect(),
            time: self.time,
        }
    }

    pub fn add_scaled(&self, other: &Self, s: T) -> Self {
        Self {
            eta: self.eta.iter().zip(&other.eta).map(|(&a, &b)| a + s * b).collect(),
            v: self.v.iter().zip(&other.v).map(|(&a, &b)| a + s * b).collect(),
            time: self.time,
        }
    }

    pub fn shifted(&self, grid: &Grid<T>, s: T) -> Self {
        Self { eta: grid.shift(&self.eta, s), v: grid.shift(&self.v, s), time: self.time }
    }

    /// Mirror image `(η(-x), -v(-x))`, using `x_j ↦ x_{n-j}` on the grid.
    pub fn mirrored(&self) -> Self {
        let n = self.eta.len();
        let idx = |j: usize| (n - j) % n;
        Self {
            eta: (0..n).map(|j| self.eta[idx(j)]).collect(),
            v: (0..n).map(|j| -self.v[idx(j)]).collect(),
            time: self.time,
        }
    }
}

/// Squared norm of the weighted space `X_ρ^l`.
///
/// Sums `∫(∂^m η)²|x|^ρ` for `m ≤ l+1` and `∫(∂^m v)²|x|^ρ` for `m ≤ max(l, 0)`; with
/// `l = -1` this is the weighted `L² × L²` norm.
pub fn x_norm_sq<T: Real>(grid: &Grid<T>, eta: &[T], v: &[T], rho: T, l: i32) -> T {
    assert!(l >= -1, "X-norm order must be at least -1");
    let w = grid.weight(rho);
    let weighted = |u: &[T]| u.iter().zip(&w).map(|(&a, &b)| a * a * b).sum::<T>() * grid.dx();
    let eta_hat = grid.fft_real(eta);
    let v_hat = grid.fft_real(v);
    let mut acc = T::zero();
    for m in 0..=(l + 1) as u32 {
        acc += weighted(&grid.derivative_from_hat(&eta_hat, m));
    }
    for m in 0..=l.max(0) as u32 {
        acc += weighted(&grid.derivative_from_hat(&v_hat, m));
    }
    acc
}

pub fn x_norm<T: Real>(grid: &Grid<T>, eta: &[T], v: &[T], rho: T, l: i32) -> T {
    x_norm_sq(grid, eta, v, rho, l).sqrt()
}

/// Energy-space norm `‖(η, v)‖_X` (`ρ = 0`, `l = 0`).
pub fn energy_norm<T: Real>(grid: &Grid<T>, state: &HydroState<T>) -> T {
    x_norm(grid, &state.eta, &state.v, T::zero(), 0)
}

/// A classical field `ψ = φ e^{-iκx}` stored through its periodic part `φ`.
///
/// A dark soliton has different phases at the two ends of the box; the twist `κ`
/// absorbs that jump so that `φ` is periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct TwistedField<T> {
    pub phi: Vec<Complex<T>>,
    pub kappa: T,
}

impl<T: Real> TwistedField<T> {
    pub fn untwisted(phi: Vec<Complex<T>>) -> Self {
        Self { phi, kappa: T::zero() }
    }

    /// Values of `ψ` on the grid.
    pub fn physical(&self, grid: &Grid<T>) -> Vec<Complex<T>> {
        self.phi
            .iter()
            .zip(grid.x())
            .map(|(&p, &x)| p * Complex::from_polar(T::one(), -self.kappa * x))
            .collect()
    }

    /// `∂_x^order ψ` on the grid, computed through `φ`.
    pub fn physical_derivative(&self, grid: &Grid<T>, order: u32) -> Vec<Complex<T>> {
        let mut hat = grid.fft(&self.phi);
        for (j, h) in hat.iter_mut().enumerate() {
            let m = if j == grid.n() / 2 {
                Complex::new(T::zero(), T::zero())
            } else {
                Complex::new(T::zero(), grid.wavenumbers()[j] - self.kappa).powu(order)
            };
            *h = *h * m;
        }
        let d = grid.ifft(&hat);
        d.iter()
            .zip(grid.x())
            .map(|(&p, &x)| p * Complex::from_polar(T::one(), -self.kappa * x))
            .collect()
    }

    pub fn density(&self) -> Vec<T> {
        self.phi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Multiplies by a constant phase `e^{iθ}`.
    pub fn rotated(&self, theta: T) -> Self {
        let r = Complex::from_polar(T::one(), theta);
        Self { phi: self.phi.iter().map(|&z| z * r).collect(), kappa: self.kappa }
    }
}

/// `d(ψ₁, ψ₂) = ‖ψ₁-ψ₂‖_{L∞([-1,1])} + ‖η₁-η₂‖_{L²} + ‖ψ₁'-ψ₂'‖_{L²}`.
pub fn metric_d<T: Real>(grid: &Grid<T>, a: &TwistedField<T>, b: &TwistedField<T>) -> T {
    let pa = a.physical(grid);
    let pb = b.physical(grid);
    let sup = grid
        .x()
        .iter()
        .zip(pa.iter().zip(&pb))
        .filter(|(x, _)| x.abs() <= T::one())
        .map(|(_, (&p, &q))| (p - q).norm())
        .fold(T::zero(), T::max);
    let deta: Vec<T> = a.density().iter().zip(b.density()).map(|(&p, q)| q - p).collect();
    let l2_eta = grid.inner(&deta, &deta).sqrt();
    let da = a.physical_derivative(grid, 1);
    let db = b.physical_derivative(grid, 1);
    let l2_d = (da.iter().zip(&db).map(|(&p, &q)| (p - q).norm_sqr()).sum::<T>() * grid.dx()).sqrt();
    sup + l2_eta + l2_d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(n: usize, l: f64) -> Grid<f64> {
        Grid::new(n, l).unwrap()
    }

    #[test]
    fn rejects_bad_sizes() {
        assert_eq!(Grid::<f64>::new(300, 1.0).unwrap_err(), GridError::BadSize(300));
        assert_eq!(Grid::<f64>::new(128, 1.0).unwrap_err(), GridError::BadSize(128));
        assert!(Grid::<f64>::new(256, -1.0).is_err());
    }

    #[test]
    fn layout() {
        let g = grid(256, 10.0);
        assert_eq!(g.x()[0], -10.0);
        assert_eq!(g.x()[g.origin()], 0.0);
        assert!((g.dx() - 20.0 / 256.0).abs() < 1e-15);
        assert!((g.wavenumbers()[1] - std::f64::consts::PI / 10.0).abs() < 1e-15);
        assert!(g.wavenumbers()[255] < 0.0);
    }

    #[test]
    fn derivative_of_single_mode() {
        let g = grid(512, 7.0);
        let w = std::f64::consts::PI / 7.0;
        let u: Vec<f64> = g.x().iter().map(|&x| (w * x).sin()).collect();
        let du = g.derivative(&u, 1);
        for (d, &x) in du.iter().zip(g.x()) {
            assert!((d - w * (w * x).cos()).abs() < 1e-12);
        }
        let c = g.derivative(&vec![3.0; 512], 2);
        assert!(c.iter().all(|v| v.abs() < 1e-13));
    }

    #[test]
    fn derivative_composition() {
        let g = grid(512, 20.0);
        let u: Vec<f64> = g.x().iter().map(|&x| (-(x - 1.0) * (x - 1.0) / 3.0).exp() * x.cos()).collect();
        let a = g.derivative(&g.derivative(&u, 1), 2);
        let b = g.derivative(&u, 3);
        assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-10));
    }

    #[test]
    fn gaussian_energy_norm() {
        // ∫e^{-2x²} = ∫(2x e^{-x²})² = √(π/2).
        let g = grid(1024, 20.0);
        let eta: Vec<f64> = g.x().iter().map(|&x| (-x * x).exp()).collect();
        let v = vec![0.0; 1024];
        let exact = (2.0 * std::f64::consts::PI).sqrt();
        assert!((x_norm_sq(&g, &eta, &v, 0.0, 0) - exact).abs() < 1e-8);
        assert_eq!(x_norm(&g, &vec![0.0; 1024], &v, 2.0, 1), 0.0);
    }

    #[test]
    fn weight_monotonicity_on_crafted_states() {
        let g = grid(1024, 20.0);
        let narrow: Vec<f64> = g.x().iter().map(|&x| (-4.0 * x * x).exp()).collect();
        let wide: Vec<f64> = g.x().iter().map(|&x| (-(x - 3.0).powi(2)).exp()).collect();
        let z = vec![0.0; 1024];
        assert!(x_norm(&g, &narrow, &z, 2.0, -1) < x_norm(&g, &narrow, &z, 0.0, -1));
        assert!(x_norm(&g, &wide, &z, 2.0, -1) > x_norm(&g, &wide, &z, 0.0, -1));
    }

    #[test]
    fn shift_and_cumulative_integral() {
        let g = grid(512, 30.0);
        let u: Vec<f64> = g.x().iter().map(|&x| 1.0 / x.cosh().powi(2)).collect();
        let s = g.shift(&u, 0.37);
        for (&y, &x) in s.iter().zip(g.x()) {
            assert!((y - 1.0 / (x + 0.37).cosh().powi(2)).abs() < 1e-12);
        }
        let ci = g.cumulative_integral(&u);
        for (&y, &x) in ci.iter().zip(g.x()).skip(1) {
            assert!((y - x.tanh()).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn dealias_keeps_low_modes() {
        let g = grid(256, 5.0);
        let w = std::f64::consts::PI / 5.0;
        let mut u: Vec<f64> = g.x().iter().map(|&x| (3.0 * w * x).cos() + (100.0 * w * x).cos()).collect();
        g.dealias(&mut u);
        for (&y, &x) in u.iter().zip(g.x()) {
            assert!((y - (3.0 * w * x).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_sees_phase() {
        let g = grid(256, 10.0);
        let phi: Vec<Complex<f64>> =
            g.x().iter().map(|&x| Complex::new(1.0 - 0.5 / x.cosh().powi(2), 0.1 * x.tanh())).collect();
        let a = TwistedField { phi, kappa: 0.01 };
        assert_eq!(metric_d(&g, &a, &a), 0.0);
        assert!(metric_d(&g, &a, &a.rotated(0.3)) > 0.0);
    }

    #[test]
    fn twisted_derivative_matches_physical_field() {
        let g = grid(512, 20.0);
        let kappa = 0.05;
        let psi = |x: f64| {
            Complex::new(1.0 - 0.5 / x.cosh().powi(2), 0.2 / x.cosh()) * Complex::from_polar(1.0, -kappa * x)
        };
        let phi: Vec<Complex<f64>> =
            g.x().iter().map(|&x| psi(x) * Complex::from_polar(1.0, kappa * x)).collect();
        let f = TwistedField { phi, kappa };
        let d = f.physical_derivative(&g, 1);
        let h = 1e-5;
        for (j, &x) in g.x().iter().enumerate().filter(|(_, x)| x.abs() < 15.0) {
            let fd = (psi(x + h) - psi(x - h)) / (2.0 * h);
            assert!((d[j] - fd).norm() < 1e-8, "x={x}");
        }
    }

    proptest! {
        #[test]
        fn quadrature_of_fourier_modes(m in 0usize..128, l in 1.0f64..50.0) {
            let g = grid(256, l);
            let w = std::f64::consts::PI * m as f64 / l;
            let u: Vec<f64> = g.x().iter().map(|&x| (w * x).cos()).collect();
            let expected = if m == 0 { 2.0 * l } else { 0.0 };
            prop_assert!((g.integrate(&u) - expected).abs() < 1e-12 * l.max(1.0));
        }

        #[test]
        fn norm_monotone_in_order(a in 0.1f64..2.0, b in -1.0f64..1.0) {
            let g = grid(256, 15.0);
            let eta: Vec<f64> = g.x().iter().map(|&x| a * (-(x - b) * (x - b)).exp()).collect();
            let v: Vec<f64> = g.x().iter().map(|&x| b * x * (-x * x).exp()).collect();
            let n0 = x_norm(&g, &eta, &v, 0.0, -1);
            let n1 = x_norm(&g, &eta, &v, 0.0, 0);
            let n2 = x_norm(&g, &eta, &v, 0.0, 1);
            prop_assert!(n0 <= n1 && n1 <= n2);
        }
    }
}
