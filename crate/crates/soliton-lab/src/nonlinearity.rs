//! Nonlinearities `f` of the defocusing equation `iΨ_t + Ψ_xx + Ψ f(|Ψ|²) = 0`.
//!
//! A model must satisfy `f(1) = 0` and `f'(1) < 0`. Besides `f` and its first three
//! derivatives, the profile construction needs the reduced potential
//! `Z(η) = (4(1-η)F(1-η) - c_s²η²)/η³`, which stays finite at `η = 0`.
//! Models with a closed form for `F` should override the provided methods so that no
//! cancellation occurs for small `η`.

use std::fmt::Debug;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{adaptive_quad, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearityError {
    #[error("f(1) = {0} but the background condition requires f(1) = 0")]
    BackgroundNotZero(f64),
    #[error("model is not defocusing: f'(1) = {0} must be negative")]
    NotDefocusing(f64),
    #[error("invalid model parameters: {0}")]
    InvalidParameter(String),
}

pub trait Nonlinearity<T: Real>: Debug + Send + Sync {
    fn name(&self) -> String;

    fn params(&self) -> Vec<(String, f64)>;

    /// Returns `(f, f', f'', f''')` at `rho`.
    fn eval(&self, rho: T) -> [T; 4];

    fn f(&self, rho: T) -> T {
        self.eval(rho)[0]
    }

    /// `F(ρ) = ∫_ρ^1 f(r) dr`.
    fn potential(&self, rho: T) -> T {
        let one = T::one();
        if rho == one {
            return T::zero();
        }
        let (a, b, sign) = if rho < one { (rho, one, T::one()) } else { (one, rho, -T::one()) };
        let scale = (b - a) * (self.f(a).abs() + self.f(b).abs() + T::one());
        let tol = scale * T::epsilon() * T::lit(16.0);
        sign * adaptive_quad(a, b, tol, &mut |r| self.f(r))
    }

    /// Reduced potential `Z(η) = (4(1-η)F(1-η) - c_s²η²)/η³`; `Z(0) = k/3`.
    fn excess(&self, eta: T) -> T {
        let [_, f1, f2, f3] = self.eval(T::one());
        if eta.abs() < T::lit(1e-5) {
            // Taylor coefficients of f(1-t) = a1 t + a2 t² + a3 t³ + ...
            let a1 = -f1;
            let a2 = f2 / T::lit(2.0);
            let a3 = -f3 / T::lit(6.0);
            let four = T::lit(4.0);
            return -T::lit(2.0) * a1 + four * (T::one() - eta) * (a2 / T::lit(3.0) + a3 * eta / four);
        }
        let cs2 = -T::lit(2.0) * f1;
        let big = T::lit(4.0) * (T::one() - eta) * self.potential(T::one() - eta);
        (big - cs2 * eta * eta) / (eta * eta * eta)
    }

    /// `Z'(η)`, by a fourth-order central difference unless overridden.
    fn excess_derivative(&self, eta: T) -> T {
        let h = T::lit(1e-3);
        let z = |e: T| self.excess(e);
        (z(eta - h - h) - T::lit(8.0) * z(eta - h) + T::lit(8.0) * z(eta + h) - z(eta + h + h))
            / (T::lit(12.0) * h)
    }
}

/// Polynomial model `f(s) = Σ_j a_j (1-s)^j`, `j ≥ 1`.
///
/// Gross-Pitaevskii is `a = [1]`; the β-family `f(s) = (1-s) + β(1-s)²` is `a = [1, β]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolynomialModel<T> {
    name: String,
    coeffs: Vec<T>,
}

impl<T: Real> PolynomialModel<T> {
    /// `coeffs[j-1]` multiplies `(1-s)^j`.
    pub fn new(name: impl Into<String>, coeffs: Vec<T>) -> Result<Self, NonlinearityError> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(NonlinearityError::InvalidParameter(
                "coefficient list must be non-empty and finite".into(),
            ));
        }
        let model = Self { name: name.into(), coeffs };
        validate(&model)?;
        Ok(model)
    }

    pub fn gross_pitaevskii() -> Self {
        Self::new("gp", vec![T::one()]).expect("GP is defocusing")
    }

    pub fn beta_family(beta: T) -> Result<Self, NonlinearityError> {
        Self::new("beta", vec![T::one(), beta])
    }

    pub fn coeffs(&self) -> &[T] {
        &self.coeffs
    }
}

impl<T: Real> Nonlinearity<T> for PolynomialModel<T> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn params(&self) -> Vec<(String, f64)> {
        if self.name == "beta" && self.coeffs.len() == 2 {
            return vec![("beta".into(), self.coeffs[1].as_f64())];
        }
        self.coeffs
            .iter()
            .enumerate()
            .map(|(j, a)| (format!("a{}", j + 1), a.as_f64()))
            .collect()
    }

    fn eval(&self, rho: T) -> [T; 4] {
        // f(s) = p(t) with t = 1 - s, so d/ds = -d/dt.
        let t = T::one() - rho;
        let mut out = [T::zero(); 4];
        for (idx, &a) in self.coeffs.iter().enumerate() {
            let j = idx + 1;
            let mut falling = T::one();
            for (order, slot) in out.iter_mut().enumerate() {
                if order > j {
                    break;
                }
                let term = a * falling * t.powi((j - order) as i32);
                *slot += if order % 2 == 0 { term } else { -term };
                falling *= T::of(j - order);
            }
        }
        out
    }

    fn f(&self, rho: T) -> T {
        let t = T::one() - rho;
        self.coeffs.iter().rev().fold(T::zero(), |acc, &a| (acc + a) * t)
    }

    fn potential(&self, rho: T) -> T {
        let t = T::one() - rho;
        self.coeffs
            .iter()
            .enumerate()
            .map(|(idx, &a)| a * t.powi(idx as i32 + 2) / T::of(idx + 2))
            .sum()
    }

    fn excess(&self, eta: T) -> T {
        let four = T::lit(4.0);
        let tail: T = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(idx, &a)| a * eta.powi(idx as i32 - 1) / T::of(idx + 2))
            .sum();
        -T::lit(2.0) * self.coeffs[0] + four * (T::one() - eta) * tail
    }

    fn excess_derivative(&self, eta: T) -> T {
        let four = T::lit(4.0);
        let mut tail = T::zero();
        let mut tail_d = T::zero();
        for (idx, &a) in self.coeffs.iter().enumerate().skip(1) {
            let p = idx as i32 - 1;
            let w = a / T::of(idx + 2);
            tail += w * eta.powi(p);
            if p > 0 {
                tail_d += w * T::lit(p as f64) * eta.powi(p - 1);
            }
        }
        four * ((T::one() - eta) * tail_d - tail)
    }
}

/// Checks the background condition and the defocusing sign.
pub fn validate<T: Real>(model: &dyn Nonlinearity<T>) -> Result<(), NonlinearityError> {
    let [f0, f1, _, _] = model.eval(T::one());
    if f0 != T::zero() {
        return Err(NonlinearityError::BackgroundNotZero(f0.as_f64()));
    }
    if !(f1 < T::zero()) {
        return Err(NonlinearityError::NotDefocusing(f1.as_f64()));
    }
    Ok(())
}

pub fn potential_f<T: Real>(model: &dyn Nonlinearity<T>, rho: T) -> T {
    model.potential(rho)
}

/// `c_s = √(-2 f'(1))`.
pub fn sound_speed<T: Real>(model: &dyn Nonlinearity<T>) -> Result<T, NonlinearityError> {
    let f1 = model.eval(T::one())[1];
    if !(f1 < T::zero()) {
        return Err(NonlinearityError::NotDefocusing(f1.as_f64()));
    }
    Ok((-T::lit(2.0) * f1).sqrt())
}

/// `k = 2 f''(1) + 6 f'(1)`.
pub fn transonic_coefficient<T: Real>(model: &dyn Nonlinearity<T>) -> T {
    let [_, f1, f2, _] = model.eval(T::one());
    T::lit(2.0) * f2 + T::lit(6.0) * f1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub h0_sampled_ok: bool,
    pub h1_ok: bool,
    pub h2_ok: bool,
    pub h3_ok: bool,
    /// Sample with the most negative H1 margin `F(ρ) - c_s²(1-ρ)²/4`.
    pub worst_violation: (f64, f64),
    /// Fitted `(C₀, α₁)` of `|f''(ρ)| ≤ C₀ ρ^{α₁-3}` on `ρ ≥ 1`.
    pub h0_fit: (f64, f64),
    /// Fitted `(M, q*)` of `F(ρ) ≤ M|1-ρ|^{q*}` on `ρ ≥ 2`.
    pub h2_fit: (f64, f64),
    pub k: f64,
}

const FIT_SLACK: f64 = 1.01;

/// Least-squares line `y = b + s x`; returns `(b, s)`.
fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let s = sxy / sxx;
    Some((my - s * mx, s))
}

/// Fits `log y ≤ log C + p log x` with `p ≥ p_min`, then checks that the bound covers
/// every sample with 1% slack. Returns `(ok, C, p)`.
fn fit_power_bound(samples: &[(f64, f64)], p_min: f64) -> (bool, f64, f64) {
    let positive: Vec<(f64, f64)> =
        samples.iter().filter(|s| s.1 > 0.0 && s.0 > 0.0).map(|s| (s.0.ln(), s.1.ln())).collect();
    if positive.is_empty() {
        return (true, 0.0, p_min);
    }
    let s = fit_line(&positive).map_or(p_min, |(_, s)| s);
    let p = s.max(p_min);
    let refit = positive.iter().map(|q| q.1 - p * q.0).sum::<f64>() / positive.len() as f64;
    let c = refit.exp();
    let ok = samples.iter().all(|&(x, y)| y <= FIT_SLACK * c * x.powf(p) + 1e-14);
    (ok, c, p)
}

/// Samples (H0)-(H3) on `rho_samples`, which should cover `[0, ρ_max]` with `ρ_max ≥ 4`.
pub fn check_hypotheses<T: Real>(model: &dyn Nonlinearity<T>, rho_samples: &[T]) -> HypothesisReport {
    let f1 = model.eval(T::one())[1].as_f64();
    let cs2 = -2.0 * f1;
    let mut worst = (f64::NAN, f64::INFINITY);
    for &r in rho_samples {
        let rf = r.as_f64();
        let big_f = model.potential(r).as_f64();
        let margin = big_f - cs2 / 4.0 * (1.0 - rf).powi(2);
        if margin < worst.1 {
            worst = (rf, margin);
        }
    }
    let h1_scale = rho_samples
        .iter()
        .map(|&r| model.potential(r).as_f64().abs())
        .fold(1.0, f64::max);
    let h1_ok = worst.1 >= -1e-12 * h1_scale;

    let h0_samples: Vec<(f64, f64)> = rho_samples
        .iter()
        .filter(|r| r.as_f64() >= 1.0)
        .map(|&r| (r.as_f64(), model.eval(r)[2].as_f64().abs()))
        .collect();
    // |f''| ≤ C₀ ρ^{α₁-3} with α₁ ≥ 1, i.e. exponent ≥ -2.
    let (h0_ok, c0, p0) = fit_power_bound(&h0_samples, -2.0);

    let h2_samples: Vec<(f64, f64)> = rho_samples
        .iter()
        .filter(|r| r.as_f64() >= 2.0)
        .map(|&r| ((r.as_f64() - 1.0).abs(), model.potential(r).as_f64()))
        .collect();
    let (h2_ok, m, q) = fit_power_bound(&h2_samples, 2.0);

    let k = transonic_coefficient(model).as_f64();
    HypothesisReport {
        h0_sampled_ok: h0_ok,
        h1_ok,
        h2_ok,
        h3_ok: k < 0.0,
        worst_violation: worst,
        h0_fit: (c0, p0 + 3.0),
        h2_fit: (m, q),
        k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// f(s) = 1 - e^{s-1}, with F(ρ) = e^{ρ-1} - ρ; exercises the provided trait methods.
    #[derive(Debug)]
    struct Exponential;

    impl Nonlinearity<f64> for Exponential {
        fn name(&self) -> String {
            "exp".into()
        }
        fn params(&self) -> Vec<(String, f64)> {
            vec![]
        }
        fn eval(&self, rho: f64) -> [f64; 4] {
            let e = (rho - 1.0).exp();
            [1.0 - e, -e, -e, -e]
        }
    }

    fn gp() -> PolynomialModel<f64> {
        PolynomialModel::gross_pitaevskii()
    }

    #[test]
    fn gp_potential_values() {
        assert_eq!(potential_f(&gp(), 1.0), 0.0);
        assert!((potential_f(&gp(), 0.0) - 0.5).abs() < 1e-15);
        assert!((potential_f(&gp(), 3.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sound_speeds() {
        assert!((sound_speed(&gp()).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let doubled = PolynomialModel::new("poly", vec![2.0]).unwrap();
        assert!((sound_speed(&doubled).unwrap() - 2.0_f64).abs() < 1e-15);
    }

    #[test]
    fn focusing_model_is_rejected() {
        // f(s) = s - 1 has f'(1) = +1.
        let err = PolynomialModel::new("poly", vec![-1.0]).unwrap_err();
        assert_eq!(err, NonlinearityError::NotDefocusing(1.0));
    }

    #[test]
    fn transonic_coefficients() {
        assert_eq!(transonic_coefficient(&gp()), -6.0);
        // f(s) = (1-s) + (1-s)²: f'(1) = -1, f''(1) = 2, so k = 4 - 6.
        let m = PolynomialModel::beta_family(1.0).unwrap();
        assert_eq!(transonic_coefficient(&m), -2.0);
        let m = PolynomialModel::beta_family(2.0).unwrap();
        assert!(!check_hypotheses(&m, &[0.0, 1.0, 4.0]).h3_ok);
    }

    #[test]
    fn polynomial_derivatives_match_expansion() {
        let m = PolynomialModel::new("poly", vec![1.0, -0.5, 0.25]).unwrap();
        let rho = 0.3_f64;
        let t = 1.0 - rho;
        let [f, f1, f2, f3] = m.eval(rho);
        assert!((f - (t - 0.5 * t * t + 0.25 * t.powi(3))).abs() < 1e-15);
        assert!((f1 - (-1.0 + t - 0.75 * t * t)).abs() < 1e-15);
        assert!((f2 - (-1.0 + 1.5 * t)).abs() < 1e-15);
        assert!((f3 + 1.5).abs() < 1e-15);
    }

    #[test]
    fn quadrature_potential_matches_closed_form() {
        for &rho in &[0.0, 0.4, 0.999, 1.0, 2.5, 6.0] {
            let exact = (rho - 1.0_f64).exp() - rho;
            assert!((Exponential.potential(rho) - exact).abs() < 1e-13, "rho={rho}");
        }
    }

    #[test]
    fn default_excess_matches_closed_form() {
        // 4(1-η)F(1-η) with F(1-η) = e^{-η} - 1 + η, and c_s² = 2.
        let z = |e: f64| (4.0 * (1.0 - e) * ((-e).exp() - 1.0 + e) - 2.0 * e * e) / e.powi(3);
        for &e in &[0.02, 0.1, 0.5, -0.3] {
            assert!((Exponential.excess(e) - z(e)).abs() < 1e-9, "eta={e}");
        }
        let k = transonic_coefficient(&Exponential);
        assert!((Exponential.excess(1e-7) - k / 3.0).abs() < 1e-6);
        let dz = (z(0.3 + 1e-5) - z(0.3 - 1e-5)) / 2e-5;
        assert!((Exponential.excess_derivative(0.3) - dz).abs() < 1e-6);
    }

    #[test]
    fn polynomial_excess_agrees_with_definition() {
        let m = PolynomialModel::new("poly", vec![1.3, 0.7, -0.2]).unwrap();
        let cs2 = 2.6;
        for &e in &[0.05_f64, 0.3, 0.8, -0.5] {
            let direct = (4.0 * (1.0 - e) * m.potential(1.0 - e) - cs2 * e * e) / e.powi(3);
            assert!((m.excess(e) - direct).abs() < 1e-10, "eta={e}");
            let h = 1e-5;
            let fd = (m.excess(e + h) - m.excess(e - h)) / (2.0 * h);
            assert!((m.excess_derivative(e) - fd).abs() < 1e-8, "eta={e}");
        }
    }

    #[test]
    fn gp_satisfies_all_hypotheses() {
        let samples: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let r = check_hypotheses(&gp(), &samples);
        assert!(r.h0_sampled_ok && r.h1_ok && r.h2_ok && r.h3_ok, "{r:?}");
        assert!(r.worst_violation.1.abs() < 1e-12);
        assert!((r.h2_fit.1 - 2.0).abs() < 1e-9);
    }

    #[test]
    fn beta_family_reports_h1_failure() {
        let samples: Vec<f64> = (0..=100).map(|i| i as f64 * 0.05).collect();
        let r = check_hypotheses(&PolynomialModel::beta_family(-0.5).unwrap(), &samples);
        assert!(!r.h1_ok);
        assert!(r.worst_violation.1 < 0.0 && r.worst_violation.0 < 1.0);
        assert!(r.h3_ok);
    }

    #[test]
    fn single_precision_instantiation() {
        let m = PolynomialModel::<f32>::gross_pitaevskii();
        assert!((sound_speed(&m).unwrap() - 2f32.sqrt()).abs() < 1e-6);
        assert_eq!(m.excess(0.3), -2.0);
    }
}
