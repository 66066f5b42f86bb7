//! Traveling-wave profiles `Q_c = (η_c, v_c)` and their transonic asymptotics.
//!
//! The profile solves `-(η')² = 𝒩_c(η)` with `𝒩_c(ξ) = c²ξ² - 4(1-ξ)F(1-ξ)`. Writing
//! `𝒩_c(η) = -η² G(η)` with `G(η) = ν_c² + η Z(η)`, the half-profile `x ≥ 0` is the
//! inverse of `x(η) = ∫_η^{ξ_c} dξ / (ξ √G(ξ))`. Near the turning point we integrate in
//! `s` with `η = ξ_c - s²`, and in the tail in `t = ln η`; both integrands are smooth.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nonlinearity::{sound_speed, transonic_coefficient, Nonlinearity, NonlinearityError};
use crate::scalar::{gauss_legendre, Real};
use crate::spectral_grid::{Grid, HydroState, TwistedField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error(transparent)]
    Model(#[from] NonlinearityError),
    #[error("speed {c} outside (0, c_s) with c_s = {c_s}")]
    SpeedOutOfRange { c: f64, c_s: f64 },
    #[error("no transonic wave at speed {0}: 𝒩_c has no sign change in (0, 1)")]
    NoTransonicWave(f64),
    #[error("degenerate turning point at ξ_c = {0}")]
    DegenerateTurningPoint(f64),
    #[error("grid half-length {l} is below the required {required} (40/ν_c)")]
    GridTooShort { l: f64, required: f64 },
    #[error("profile residual too large: ODE {ode:e}, first integral {first_integral:e} at x = {at}")]
    ResidualTooLarge { ode: f64, first_integral: f64, at: f64 },
    #[error("amplitude integral is not finite at speed {0}")]
    DivergentAmplitude(f64),
}

/// `𝒩_c(ξ) = c²ξ² - 4(1-ξ)F(1-ξ)`.
pub fn n_c<T: Real>(model: &dyn Nonlinearity<T>, c: T, xi: T) -> T {
    c * c * xi * xi - T::lit(4.0) * (T::one() - xi) * model.potential(T::one() - xi)
}

/// `ν_c = √(c_s² - c²)`, after checking `0 < c < c_s`.
pub fn nu_c<T: Real>(model: &dyn Nonlinearity<T>, c: T) -> Result<T, ProfileError> {
    let cs = sound_speed(model)?;
    if !(c > T::zero() && c < cs) {
        return Err(ProfileError::SpeedOutOfRange { c: c.as_f64(), c_s: cs.as_f64() });
    }
    Ok((cs * cs - c * c).sqrt())
}

/// The function `G = -𝒩_c/η²` and its derivative, free of cancellation at small `η`.
#[derive(Debug, Clone, Copy)]
pub struct Branch<'a, T: Real> {
    pub model: &'a dyn Nonlinearity<T>,
    pub c: T,
    pub nu2: T,
    pub xi: T,
}

impl<'a, T: Real> Branch<'a, T> {
    pub fn new(model: &'a dyn Nonlinearity<T>, c: T) -> Result<Self, ProfileError> {
        let nu = nu_c(model, c)?;
        let mut b = Self { model, c, nu2: nu * nu, xi: T::zero() };
        b.xi = b.find_xi()?;
        Ok(b)
    }

    pub fn g(&self, eta: T) -> T {
        self.nu2 + eta * self.model.excess(eta)
    }

    pub fn g_prime(&self, eta: T) -> T {
        self.model.excess(eta) + eta * self.model.excess_derivative(eta)
    }

    fn find_xi(&self) -> Result<T, ProfileError> {
        // Log-spaced scan from 1e-12, then linear spacing up to 1.
        let mut prev = T::zero();
        let mut found = None;
        let mut pts: Vec<T> = (0..=240).map(|i| T::lit(10f64.powf(-12.0 + 12.0 * i as f64 / 240.0))).collect();
        pts.extend((1..=2000).map(|i| T::lit(i as f64 / 2000.0)));
        pts.sort_by(|a, b| a.partial_cmp(b).expect("finite scan points"));
        for &p in &pts {
            if p >= T::one() {
                break;
            }
            if self.g(p) <= T::zero() {
                found = Some((prev, p));
                break;
            }
            prev = p;
        }
        let (mut lo, mut hi) = found.ok_or(ProfileError::NoTransonicWave(self.c.as_f64()))?;
        for _ in 0..200 {
            let mid = (lo + hi) / T::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.g(mid) > T::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let xi = if self.g(hi).abs() < self.g(lo).abs() { hi } else { lo };
        if !(self.g_prime(xi) < T::zero()) {
            return Err(ProfileError::DegenerateTurningPoint(xi.as_f64()));
        }
        Ok(xi)
    }

    /// `G(ξ_c - s²)/s²`, computed as `-∫₀¹ G'(ξ_c - s²u) du` near the turning point.
    pub fn g_over_s2(&self, s: T) -> T {
        let s2 = s * s;
        if s2 < self.xi / T::lit(4.0) {
            -gauss_legendre(T::zero(), T::one(), |u| self.g_prime(self.xi - s2 * u))
        } else {
            self.g(self.xi - s2) / s2
        }
    }

    /// `dx/ds` on the core branch `η = ξ_c - s²`.
    fn dx_ds(&self, s: T) -> T {
        T::lit(2.0) / ((self.xi - s * s) * self.g_over_s2(s).sqrt())
    }

    /// `-dx/dt` on the tail branch `η = e^t`.
    fn dx_dt(&self, t: T) -> T {
        T::one() / self.g(t.exp()).sqrt()
    }

    fn s_split(&self) -> T {
        (self.xi / T::lit(2.0)).sqrt()
    }

    /// Evaluates `(η, G(η))` at the sorted non-negative abscissae `xs`.
    pub fn half_profile(&self, xs: &[T]) -> Vec<(T, T)> {
        let tol = T::epsilon() * T::lit(8.0);
        let s_star = self.s_split();
        let x_star = composite(T::zero(), s_star, T::lit(0.05) * self.xi.sqrt(), |s| self.dx_ds(s));
        let s_cap = self.xi.sqrt() * T::lit(0.999);
        let mut out = Vec::with_capacity(xs.len());
        let (mut s_cur, mut x_cur) = (T::zero(), T::zero());
        let mut t_cur = (self.xi - s_star * s_star).ln();
        let mut x_tail = x_star;
        for &target in xs {
            if target <= x_star {
                let mut s = (s_cur + (target - x_cur) / self.dx_ds(s_cur)).min(s_cap).max(s_cur);
                for _ in 0..60 {
                    let val = x_cur + composite(s_cur, s, T::lit(0.05) * self.xi.sqrt(), |q| self.dx_ds(q));
                    let err = val - target;
                    let step = err / self.dx_ds(s);
                    s = (s - step).min(s_cap).max(s_cur);
                    if err.abs() <= tol * target.max(T::one()) {
                        break;
                    }
                }
                s_cur = s;
                x_cur = target;
                let eta = self.xi - s * s;
                out.push((eta, s * s * self.g_over_s2(s)));
            } else {
                let h = T::lit(0.25);
                let mut t = t_cur - (target - x_tail) / self.dx_dt(t_cur);
                for _ in 0..60 {
                    let val = x_tail + composite(t, t_cur, h, |q| self.dx_dt(q));
                    let err = val - target;
                    let step = err / self.dx_dt(t);
                    t = (t + step).min(t_cur);
                    if err.abs() <= tol * target.max(T::one()) {
                        break;
                    }
                }
                t_cur = t;
                x_tail = target;
                let eta = t.exp().max(T::min_positive_value());
                out.push((eta, self.g(eta)));
            }
        }
        out
    }
}

/// Composite 16-point Gauss-Legendre with panels no longer than `h`.
fn composite<T: Real>(a: T, b: T, h: T, f: impl Fn(T) -> T) -> T {
    if a == b {
        return T::zero();
    }
    let panels = ((b - a).abs() / h).ceil().to_usize().unwrap_or(1).max(1);
    let w = (b - a) / T::of(panels);
    (0..panels).map(|i| gauss_legendre(a + w * T::of(i), a + w * T::of(i + 1), &f)).sum()
}

/// `ξ_c`: smallest root of `𝒩_c` in `(0, 1)`.
pub fn xi_c<T: Real>(model: &dyn Nonlinearity<T>, c: T) -> Result<T, ProfileError> {
    Ok(Branch::new(model, c)?.xi)
}

/// Transonic equivalent `-3ν_c²/k` of `ξ_c`.
pub fn xi_c_asymptotic<T: Real>(model: &dyn Nonlinearity<T>, c: T) -> Result<T, ProfileError> {
    let nu = nu_c(model, c)?;
    Ok(-T::lit(3.0) * nu * nu / transonic_coefficient(model))
}

/// `M_c = ξ_c exp(∫₀^{ξ_c} -Z/(√G(√G + ν_c)) dξ)`, the constant in `η_c ~ M_c e^{-ν_c|x|}`.
pub fn amplitude_mc<T: Real>(model: &dyn Nonlinearity<T>, c: T) -> Result<T, ProfileError> {
    let b = Branch::new(model, c)?;
    let nu = b.nu2.sqrt();
    // ξ = ξ_c - s², √G = s h(s): the integrand becomes -2Z/(h(s h + ν)).
    let integrand = |s: T| {
        let h = b.g_over_s2(s).sqrt();
        -T::lit(2.0) * model.excess(b.xi - s * s) / (h * (s * h + nu))
    };
    let integral = composite(T::zero(), b.xi.sqrt(), T::lit(0.02) * b.xi.sqrt(), integrand);
    let m = b.xi * integral.exp();
    if !m.is_finite() {
        return Err(ProfileError::DivergentAmplitude(c.as_f64()));
    }
    Ok(m)
}

/// `p(Q_c) = ½∫η_c v_c`, by quadrature in `η` (no grid).
pub fn momentum_of_speed<T: Real>(model: &dyn Nonlinearity<T>, c: T) -> Result<T, ProfileError> {
    let b = Branch::new(model, c)?;
    // p = (c/2) ∫₀^ξ η/((1-η)√G) dη, and dη/√G = 2 ds/h(s).
    let integrand = |s: T| {
        let eta = b.xi - s * s;
        T::lit(2.0) * eta / ((T::one() - eta) * b.g_over_s2(s).sqrt())
    };
    Ok(c / T::lit(2.0) * composite(T::zero(), b.xi.sqrt(), T::lit(0.02) * b.xi.sqrt(), integrand))
}

/// Centered difference of `c ↦ p(Q_c)`.
pub fn momentum_speed_derivative<T: Real>(
    model: &dyn Nonlinearity<T>,
    c: T,
    dc: T,
) -> Result<T, ProfileError> {
    let hi = momentum_of_speed(model, c + dc)?;
    let lo = momentum_of_speed(model, c - dc)?;
    Ok((hi - lo) / (T::lit(2.0) * dc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub ode_tol: f64,
    pub first_integral_tol: f64,
    /// Require `L ≥ 40/ν_c`.
    pub enforce_length: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { ode_tol: 1e-6, first_integral_tol: 1e-8, enforce_length: true }
    }
}

#[derive(Debug, Clone)]
pub struct TravelingWave<T: Real> {
    pub c: T,
    pub c_s: T,
    pub nu: T,
    pub xi: T,
    /// `k = 2f''(1) + 6f'(1)`.
    pub k: T,
    pub grid: Grid<T>,
    pub eta: Vec<T>,
    pub eta_x: Vec<T>,
    pub eta_xx: Vec<T>,
    pub eta_xxx: Vec<T>,
    pub v: Vec<T>,
    pub v_x: Vec<T>,
    /// `G(η_c)` and `G'(η_c)` at the grid points.
    pub g: Vec<T>,
    pub g_prime: Vec<T>,
    /// `f'(1 - η_c)` at the grid points.
    pub f_prime: Vec<T>,
    pub decay_rate_fit: T,
    pub tail_amplitude_fit: T,
    pub amplitude_mc: T,
    pub ode_residual: T,
    pub first_integral_residual: T,
    pub model_name: String,
}

impl<T: Real> TravelingWave<T> {
    pub fn state(&self) -> HydroState<T> {
        HydroState::new(self.eta.clone(), self.v.clone(), T::zero())
    }

    /// `∂_x Q_c` from the spectral derivatives.
    pub fn derivative_state(&self) -> HydroState<T> {
        HydroState::new(self.eta_x.clone(), self.v_x.clone(), T::zero())
    }

    /// `η'` and `η''` from the first integral: `η' = -sgn(x) η √G`, `η'' = ηG + η²G'/2`.
    pub fn exact_derivatives(&self) -> (Vec<T>, Vec<T>) {
        let n = self.eta.len();
        let mut d1 = Vec::with_capacity(n);
        let mut d2 = Vec::with_capacity(n);
        for j in 0..n {
            let (e, g, gp) = (self.eta[j], self.g[j], self.g_prime[j]);
            let sign = -self.grid.x()[j].signum();
            let sign = if self.grid.x()[j] == T::zero() { T::zero() } else { sign };
            d1.push(sign * e * g.max(T::zero()).sqrt());
            d2.push(e * g + e * e * gp / T::lit(2.0));
        }
        (d1, d2)
    }

    /// `p(Q_c) = ½∫η_c v_c` on the grid.
    pub fn momentum(&self) -> T {
        self.grid.inner(&self.eta, &self.v) / T::lit(2.0)
    }

    /// Total phase jump `Θ = ∫ v_c`.
    pub fn phase_jump(&self) -> T {
        self.grid.integrate(&self.v)
    }

    pub fn cache_key(&self) -> String {
        format!("{}-c{:.15e}-{}", self.model_name, self.c.as_f64(), self.grid.key())
    }

    /// Long-form CSV with columns `x, eta, eta_x, eta_xx, eta_xxx, v, v_x`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "eta", "eta_x", "eta_xx", "eta_xxx", "v", "v_x"])?;
        for j in 0..self.eta.len() {
            let row = [
                self.grid.x()[j],
                self.eta[j],
                self.eta_x[j],
                self.eta_xx[j],
                self.eta_xxx[j],
                self.v[j],
                self.v_x[j],
            ];
            wr.write_record(row.iter().map(|u| format!("{:.17e}", u.as_f64())))?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn build_profile<T: Real>(
    model: &dyn Nonlinearity<T>,
    c: T,
    grid: &Grid<T>,
) -> Result<TravelingWave<T>, ProfileError> {
    build_profile_with(model, c, grid, &ProfileOptions::default())
}

pub fn build_profile_with<T: Real>(
    model: &dyn Nonlinearity<T>,
    c: T,
    grid: &Grid<T>,
    opts: &ProfileOptions,
) -> Result<TravelingWave<T>, ProfileError> {
    let branch = Branch::new(model, c)?;
    let nu = branch.nu2.sqrt();
    let required = T::lit(40.0) / nu;
    if opts.enforce_length && grid.half_length() < required {
        return Err(ProfileError::GridTooShort {
            l: grid.half_length().as_f64(),
            required: required.as_f64(),
        });
    }
    let n = grid.n();
    let o = grid.origin();
    let xs: Vec<T> = (0..=n / 2).map(|m| T::of(m) * grid.dx()).collect();
    let half = branch.half_profile(&xs);
    let at = |j: usize| if j >= o { half[j - o] } else { half[o - j] };
    let mut eta = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for j in 0..n {
        let (e, gv) = at(j);
        eta.push(e);
        g.push(gv);
    }
    let g_prime: Vec<T> = eta.iter().map(|&e| branch.g_prime(e)).collect();
    let f_prime: Vec<T> = eta.iter().map(|&e| model.eval(T::one() - e)[1]).collect();
    let two = T::lit(2.0);
    let v: Vec<T> = eta.iter().map(|&e| c * e / (two * (T::one() - e))).collect();
    let eta_hat = grid.fft_real(&eta);
    let eta_x = grid.derivative_from_hat(&eta_hat, 1);
    let eta_xx = grid.derivative_from_hat(&eta_hat, 2);
    let eta_xxx = grid.derivative_from_hat(&eta_hat, 3);
    let v_x = grid.derivative(&v, 1);

    // Residuals of -η'' = ½𝒩'(η) and (η')² + 𝒩(η) = 0, with 𝒩 = -η²G.
    let mut ode = T::zero();
    let mut fi = T::zero();
    let mut worst_at = T::zero();
    for j in 0..n {
        let (e, gv, gp) = (eta[j], g[j], g_prime[j]);
        let n_prime = -two * e * gv - e * e * gp;
        let r_ode = (-eta_xx[j] - n_prime / two).abs();
        let r_fi = (eta_x[j] * eta_x[j] - e * e * gv).abs();
        if r_ode > ode {
            ode = r_ode;
            worst_at = grid.x()[j];
        }
        fi = fi.max(r_fi);
    }
    if ode.as_f64() > opts.ode_tol || fi.as_f64() > opts.first_integral_tol {
        return Err(ProfileError::ResidualTooLarge {
            ode: ode.as_f64(),
            first_integral: fi.as_f64(),
            at: worst_at.as_f64(),
        });
    }

    let (decay_rate_fit, tail_amplitude_fit) = fit_tail(grid, &eta, branch.xi);
    Ok(TravelingWave {
        c,
        c_s: sound_speed(model)?,
        nu,
        xi: branch.xi,
        k: transonic_coefficient(model),
        grid: grid.clone(),
        eta,
        eta_x,
        eta_xx,
        eta_xxx,
        v,
        v_x,
        g,
        g_prime,
        f_prime,
        decay_rate_fit,
        tail_amplitude_fit,
        amplitude_mc: amplitude_mc(model, c)?,
        ode_residual: ode,
        first_integral_residual: fi,
        model_name: model.name(),
    })
}

/// Least-squares fit of `ln η = ln M - νx` on the right tail. Returns `(ν, M)`.
fn fit_tail<T: Real>(grid: &Grid<T>, eta: &[T], xi: T) -> (T, T) {
    let cap = grid.half_length() * T::lit(0.9);
    let pick = |lo: f64, hi: f64| -> Vec<(f64, f64)> {
        grid.x()
            .iter()
            .zip(eta)
            .filter(|(&x, &e)| x > T::zero() && x < cap && e < xi * T::lit(hi) && e > xi * T::lit(lo))
            .map(|(&x, &e)| (x.as_f64(), e.as_f64().ln()))
            .collect()
    };
    let mut pts = pick(1e-13, 1e-5);
    if pts.len() < 4 {
        pts = pick(0.0, 1e-3);
    }
    if pts.len() < 2 {
        return (T::nan(), T::nan());
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    (T::lit(-slope), T::lit((my - slope * mx).exp()))
}

/// `𝔲_c = √(1-η_c) exp(-i∫₀ˣ v_c)`, stored with the twist `κ = Θ/(2L)` that makes it periodic.
pub fn classical_wave<T: Real>(wave: &TravelingWave<T>) -> TwistedField<T> {
    crate::dynamics::hydro_to_classical(&wave.grid, &wave.state())
}

/// `∂_c Q_c` by centered differences with `Δc = 1e-4 ν_c`.
pub fn speed_derivative<T: Real>(
    model: &dyn Nonlinearity<T>,
    c: T,
    grid: &Grid<T>,
) -> Result<HydroState<T>, ProfileError> {
    let opts = ProfileOptions { enforce_length: false, ..ProfileOptions::default() };
    let dc = T::lit(1e-4) * nu_c(model, c)?;
    let hi = build_profile_with(model, c + dc, grid, &opts)?;
    let lo = build_profile_with(model, c - dc, grid, &opts)?;
    let inv = T::one() / (T::lit(2.0) * dc);
    Ok(HydroState::new(
        hi.eta.iter().zip(&lo.eta).map(|(&a, &b)| (a - b) * inv).collect(),
        hi.v.iter().zip(&lo.v).map(|(&a, &b)| (a - b) * inv).collect(),
        T::zero(),
    ))
}

/// Lower end `c₁` of the validated speed window: the largest speed below which one of
/// `ξ_c < 1`, `M_c > 0`, or positivity of `q₁/η_c` and `q̃₁/η_c` fails.
/// Returns `0` when no failure is found on `(0.01 c_s, c_s)`.
pub fn admissible_window<T: Real>(model: &dyn Nonlinearity<T>) -> Result<(T, T), ProfileError> {
    let cs = sound_speed(model)?;
    let ok = |c: T| -> bool {
        let Ok(b) = Branch::new(model, c) else { return false };
        if !(b.xi < T::one()) {
            return false;
        }
        if !amplitude_mc(model, c).map(|m| m > T::zero()).unwrap_or(false) {
            return false;
        }
        (0..=200).all(|i| {
            let eta = b.xi * T::lit(i.max(1) as f64 / 200.0);
            let (q1, q1t) = crate::operators::q_ratios(&b, eta);
            q1 > T::zero() && q1t > T::zero()
        })
    };
    let steps = 400;
    let mut last_ok = cs;
    for i in 1..steps {
        let c = cs * T::lit(1.0 - i as f64 / steps as f64);
        if ok(c) {
            last_ok = c;
            continue;
        }
        let (mut lo, mut hi) = (c, last_ok);
        for _ in 0..40 {
            let mid = (lo + hi) / T::lit(2.0);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        return Ok((hi, cs));
    }
    Ok((T::zero(), cs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::PolynomialModel;
    use proptest::prelude::*;

    fn gp() -> PolynomialModel<f64> {
        PolynomialModel::gross_pitaevskii()
    }

    #[test]
    fn n_c_closed_form_values() {
        assert_eq!(n_c(&gp(), 0.7, 0.0), 0.0);
        assert!(n_c(&gp(), 1.0, 0.5).abs() < 1e-15);
        assert!((n_c(&gp(), 1.0, 0.25) + 0.03125).abs() < 1e-15);
    }

    #[test]
    fn g_matches_definition() {
        let m = PolynomialModel::beta_family(0.6).unwrap();
        let b = Branch::<f64>::new(&m, 1.1).unwrap();
        for &e in &[0.01, 0.1, 0.3] {
            assert!((b.g(e) + n_c(&m, 1.1, e) / (e * e)).abs() < 1e-12);
        }
    }

    #[test]
    fn xi_c_gp_values() {
        assert!((xi_c(&gp(), 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((xi_c(&gp(), 1.4).unwrap() - 0.02).abs() < 1e-15);
        assert!(matches!(xi_c(&gp(), 1.5), Err(ProfileError::SpeedOutOfRange { .. })));
    }

    #[test]
    fn gp_xi_equals_its_equivalent() {
        for &c in &[0.5, 1.0, 1.3, 1.41] {
            let r = xi_c(&gp(), c).unwrap() / xi_c_asymptotic(&gp(), c).unwrap();
            assert!((r - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn beta_family_xi_ratio_tends_to_one_monotonically() {
        let m = PolynomialModel::beta_family(0.5).unwrap();
        let cs = 2f64.sqrt();
        let ratios: Vec<f64> = [0.1, 0.03, 0.01, 0.003, 0.001]
            .iter()
            .map(|&nu2| {
                let c = (cs * cs - nu2).sqrt();
                (xi_c(&m, c).unwrap() / xi_c_asymptotic(&m, c).unwrap() - 1.0).abs()
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
        assert!(ratios[4] < 5e-3);
    }

    #[test]
    fn gp_profile_matches_sech2() {
        let grid = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.0, &grid).unwrap();
        let mut err: f64 = 0.0;
        for (&e, &x) in w.eta.iter().zip(grid.x()) {
            err = err.max((e - 0.5 / (x / 2.0).cosh().powi(2)).abs());
        }
        assert!(err < 1e-12, "sup error {err:e}");
        assert!((w.v[grid.origin()] - 0.5).abs() < 1e-14);
        assert!(w.eta_x[grid.origin()].abs() < 1e-13);
        assert!((w.decay_rate_fit - 1.0).abs() < 1e-3);
        assert!((w.amplitude_mc - 2.0).abs() < 1e-12);
        assert!((w.tail_amplitude_fit / w.amplitude_mc - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exact_derivatives_agree_with_spectral_ones() {
        let m = PolynomialModel::beta_family(-0.4).unwrap();
        let grid = Grid::new(1024, 80.0).unwrap();
        let w: TravelingWave<f64> = build_profile(&m, 1.2, &grid).unwrap();
        let (d1, d2) = w.exact_derivatives();
        for j in 0..1024 {
            assert!((d1[j] - w.eta_x[j]).abs() < 1e-11);
            assert!((d2[j] - w.eta_xx[j]).abs() < 1e-10);
        }
    }

    #[test]
    fn grid_too_short_is_rejected() {
        let grid = Grid::new(512, 20.0).unwrap();
        assert!(matches!(build_profile(&gp(), 1.38, &grid), Err(ProfileError::GridTooShort { .. })));
    }

    #[test]
    fn gp_phase_jump_and_momentum_closed_forms() {
        // Θ = 2 atan(ν/c) and p(c) = atan(ν/c) - cν/2, so dp/dc = -ν.
        let grid = Grid::new(2048, 100.0).unwrap();
        let w = build_profile(&gp(), 1.0, &grid).unwrap();
        assert!((w.phase_jump() - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        for &c in &[0.8f64, 1.2, 1.35] {
            let nu = (2.0 - c * c).sqrt();
            let p = momentum_of_speed(&gp(), c).unwrap();
            assert!((p - ((nu / c).atan() - c * nu / 2.0)).abs() < 1e-13, "c={c}");
        }
        let d = momentum_speed_derivative(&gp(), 1.2, 1e-3).unwrap();
        let nu = (2.0 - 1.44f64).sqrt();
        assert!(d < 0.0 && ((d + nu) / nu).abs() < 1e-5);
    }

    #[test]
    fn momentum_derivative_is_second_order() {
        let m = PolynomialModel::beta_family(0.3).unwrap();
        let d1: f64 = momentum_speed_derivative(&m, 1.2, 2e-2).unwrap();
        let d2 = momentum_speed_derivative(&m, 1.2, 1e-2).unwrap();
        let d3 = momentum_speed_derivative(&m, 1.2, 5e-3).unwrap();
        let ratio = (d1 - d2) / (d2 - d3);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn amplitude_tail_fit_agrees_with_formula() {
        let grid = Grid::new(2048, 200.0).unwrap();
        let w = build_profile(&gp(), 1.35, &grid).unwrap();
        assert!((w.tail_amplitude_fit / w.amplitude_mc - 1.0).abs() < 0.02);
        assert!(w.amplitude_mc > 0.0);
    }

    #[test]
    fn amplitude_ratio_in_transonic_limit() {
        // The integral tends to 2 ln 2 for any model with k < 0, so M_c/ξ_c → 4.
        let m = PolynomialModel::beta_family(0.5).unwrap();
        let cs = 2f64.sqrt();
        for &(nu2, tol) in &[(1e-3, 0.05), (1e-5, 0.005)] {
            let c = (cs * cs - nu2).sqrt();
            let r = amplitude_mc(&m, c).unwrap() / xi_c(&m, c).unwrap();
            assert!((r - 4.0).abs() < tol, "nu2={nu2} ratio={r}");
        }
    }

    #[test]
    fn classical_wave_modulus_and_origin() {
        let grid = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.0, &grid).unwrap();
        let u = classical_wave(&w);
        let psi = u.physical(&grid);
        let o = grid.origin();
        assert!((psi[o].re - 0.5f64.sqrt()).abs() < 1e-14 && psi[o].im.abs() < 1e-14);
        for (z, &e) in psi.iter().zip(&w.eta) {
            assert!((z.norm_sqr() + e - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn single_precision_profile() {
        let m = PolynomialModel::<f32>::gross_pitaevskii();
        let grid = Grid::new(512, 45.0f32).unwrap();
        let opts = ProfileOptions { ode_tol: 1e-3, first_integral_tol: 1e-3, enforce_length: true };
        let w = build_profile_with(&m, 1.0f32, &grid, &opts).unwrap();
        assert!((w.eta[grid.origin()] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn gp_window_covers_whole_branch() {
        let (c1, cs) = admissible_window(&gp()).unwrap();
        assert!(c1 < 0.05 && (cs - 2f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn profile_invariants(beta in -0.8f64..1.2, frac in 0.55f64..0.97) {
            let m = PolynomialModel::beta_family(beta).unwrap();
            let c = frac * 2f64.sqrt();
            let nu = (2.0 - c * c).sqrt();
            let l = (40.0 / nu).max(40.0);
            let grid = Grid::new(2048, l).unwrap();
            let w = build_profile(&m, c, &grid).unwrap();
            let o = grid.origin();
            prop_assert!(w.eta.iter().all(|&e| e > 0.0 && e <= w.xi && w.xi < 1.0));
            prop_assert_eq!(w.eta[o], w.xi);
            for j in 1..o {
                prop_assert!((w.eta[o + j] - w.eta[o - j]).abs() <= 1e-14);
            }
            for (&v, &e) in w.v.iter().zip(&w.eta) {
                prop_assert!((v - c * e / (2.0 * (1.0 - e))).abs() < 1e-15);
            }
            prop_assert!((w.decay_rate_fit / nu - 1.0).abs() < 0.01);
        }
    }
}
