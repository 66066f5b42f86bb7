//! Time integration in hydrodynamic variables (RK4, spectral) and classical variables
//! (Strang split-step on the twisted periodic field).

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nonlinearity::Nonlinearity;
use crate::scalar::Real;
use crate::spectral_grid::{energy_norm, Grid, HydroState, TwistedField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("time step {dt} exceeds the stability bound {bound} = C_stab/k_max²")]
    UnstableStep { dt: f64, bound: f64 },
    #[error("near-vacuum guard tripped at t = {t}: max η = {max_eta}")]
    NearVacuum { t: f64, max_eta: f64 },
    #[error("field vanishes at x = {0}; the hydrodynamic lifting is undefined")]
    Vacuum(f64),
    #[error("non-finite values at t = {0}")]
    NotFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    NearVacuumAbort,
    NotFiniteAbort,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunGuard {
    pub eta_max_threshold: f64,
}

impl Default for RunGuard {
    fn default() -> Self {
        Self { eta_max_threshold: 0.9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dt: f64,
    pub t_snap: f64,
    /// `dt ≤ c_stab / k_max²` is enforced for the explicit hydrodynamic scheme.
    pub c_stab: f64,
    pub guard: RunGuard,
}

impl RunConfig {
    pub fn new(dt: f64, t_snap: f64) -> Self {
        Self { dt, t_snap, c_stab: 1.0, guard: RunGuard::default() }
    }

    /// Largest stable step for `grid`, rounded down so that it divides `t_snap`.
    pub fn stable(grid: &Grid<f64>, t_snap: f64, c_stab: f64) -> Self {
        let bound = c_stab / grid.k_max().powi(2);
        let steps = (t_snap / bound).ceil().max(1.0);
        Self { dt: t_snap / steps, t_snap, c_stab, guard: RunGuard::default() }
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub snapshots: Vec<HydroState<T>>,
    pub energy_series: Vec<T>,
    pub momentum_series: Vec<T>,
    pub classical_snapshots: Option<Vec<TwistedField<T>>>,
    pub status: RunStatus,
    pub dt: T,
}

impl<T: Real> Trajectory<T> {
    pub fn times(&self) -> Vec<T> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn energy_drift(&self) -> T {
        let e0 = self.energy_series[0];
        self.energy_series.iter().map(|&e| ((e - e0) / e0).abs()).fold(T::zero(), T::max)
    }

    pub fn momentum_drift(&self) -> T {
        let p0 = self.momentum_series[0];
        self.momentum_series.iter().map(|&p| (p - p0).abs()).fold(T::zero(), T::max)
    }

    /// Long-form CSV with columns `t, x, eta, v`.
    pub fn write_csv<W: std::io::Write>(&self, grid: &Grid<T>, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "x", "eta", "v"])?;
        for s in &self.snapshots {
            for j in 0..grid.n() {
                wr.write_record([
                    format!("{:.17e}", s.time.as_f64()),
                    format!("{:.17e}", grid.x()[j].as_f64()),
                    format!("{:.17e}", s.eta[j].as_f64()),
                    format!("{:.17e}", s.v[j].as_f64()),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Energy `E = ∫ η'²/(8(1-η)) + ½(1-η)v² + ½F(1-η)`.
pub fn energy<T: Real>(grid: &Grid<T>, state: &HydroState<T>, model: &dyn Nonlinearity<T>) -> T {
    let d = grid.derivative(&state.eta, 1);
    let half = T::lit(0.5);
    let dens: Vec<T> = (0..grid.n())
        .map(|j| {
            let b = T::one() - state.eta[j];
            d[j] * d[j] / (T::lit(8.0) * b) + half * b * state.v[j] * state.v[j] + half * model.potential(b)
        })
        .collect();
    grid.integrate(&dens)
}

/// Momentum `p = ½∫ηv`.
pub fn momentum<T: Real>(grid: &Grid<T>, state: &HydroState<T>) -> T {
    grid.inner(&state.eta, &state.v) / T::lit(2.0)
}

/// `F̃(η) = ηf(1-η) - F(1-η)`.
pub fn f_tilde<T: Real>(model: &dyn Nonlinearity<T>, eta: T) -> T {
    let b = T::one() - eta;
    eta * model.f(b) - model.potential(b)
}

/// Momentum flux `Φ` with `∂_t(ηv) = -∂_xΦ`:
/// `Φ = (1-2η)(v² + η'²/(4B²)) + F̃(η) - ηη''/(2B)`, `B = 1-η`.
pub fn momentum_flux<T: Real>(grid: &Grid<T>, model: &dyn Nonlinearity<T>, state: &HydroState<T>) -> Vec<T> {
    let hat = grid.fft_real(&state.eta);
    let d1 = grid.derivative_from_hat(&hat, 1);
    let d2 = grid.derivative_from_hat(&hat, 2);
    let (two, four) = (T::lit(2.0), T::lit(4.0));
    (0..grid.n())
        .map(|j| {
            let (e, v) = (state.eta[j], state.v[j]);
            let b = T::one() - e;
            (T::one() - two * e) * (v * v + d1[j] * d1[j] / (four * b * b)) + f_tilde(model, e)
                - e * d2[j] / (two * b)
        })
        .collect()
}

/// Right-hand side of the hydrodynamic system, with every product filtered by the 2/3 rule.
pub fn hydro_rhs<T: Real>(
    grid: &Grid<T>,
    model: &dyn Nonlinearity<T>,
    eta: &[T],
    v: &[T],
) -> (Vec<T>, Vec<T>) {
    let n = grid.n();
    let k = grid.wavenumbers();
    let zero = Complex::new(T::zero(), T::zero());
    let eta_hat = grid.fft_real(eta);
    // η' and η'' packed into one complex transform: both are real.
    let mut packed: Vec<Complex<T>> = eta_hat
        .iter()
        .zip(k)
        .map(|(&h, &kj)| h * (-kj * kj - kj))
        .collect();
    packed[n / 2] = zero;
    let packed = grid.ifft(&packed);
    let two = T::lit(2.0);
    let four = T::lit(4.0);
    let mut both = Vec::with_capacity(n);
    for j in 0..n {
        let (d2, d1) = (packed[j].re, packed[j].im);
        let b = T::one() - eta[j];
        let pressure = model.f(b) - v[j] * v[j] - d2 / (two * b) - d1 * d1 / (four * b * b);
        both.push(Complex::new(v[j] * b, pressure));
    }
    // Transform flux + i·pressure together, filter, differentiate and split again.
    let mut hat = grid.fft(&both);
    let cut = n / 3;
    for (j, h) in hat.iter_mut().enumerate() {
        let m = if j <= n / 2 { j } else { n - j };
        *h = if m >= cut { zero } else { *h * Complex::new(T::zero(), k[j]) };
    }
    let d = grid.ifft(&hat);
    (d.iter().map(|z| -two * z.re).collect(), d.iter().map(|z| -z.im).collect())
}

/// One classical RK4 step.
pub fn step_hydro<T: Real>(
    grid: &Grid<T>,
    model: &dyn Nonlinearity<T>,
    state: &HydroState<T>,
    dt: T,
    guard: &RunGuard,
) -> Result<HydroState<T>, DynamicsError> {
    let max_eta = state.max_eta();
    if max_eta.as_f64() > guard.eta_max_threshold {
        return Err(DynamicsError::NearVacuum { t: state.time.as_f64(), max_eta: max_eta.as_f64() });
    }
    let half = dt / T::lit(2.0);
    let axpy = |a: &[T], b: &[T], s: T| -> Vec<T> { a.iter().zip(b).map(|(&p, &q)| p + s * q).collect() };
    let (k1e, k1v) = hydro_rhs(grid, model, &state.eta, &state.v);
    let (k2e, k2v) = hydro_rhs(grid, model, &axpy(&state.eta, &k1e, half), &axpy(&state.v, &k1v, half));
    let (k3e, k3v) = hydro_rhs(grid, model, &axpy(&state.eta, &k2e, half), &axpy(&state.v, &k2v, half));
    let (k4e, k4v) = hydro_rhs(grid, model, &axpy(&state.eta, &k3e, dt), &axpy(&state.v, &k3v, dt));
    let sixth = dt / T::lit(6.0);
    let two = T::lit(2.0);
    let combine = |u: &[T], a: &[T], b: &[T], c: &[T], d: &[T]| -> Vec<T> {
        (0..u.len()).map(|j| u[j] + sixth * (a[j] + two * b[j] + two * c[j] + d[j])).collect()
    };
    let next = HydroState::new(
        combine(&state.eta, &k1e, &k2e, &k3e, &k4e),
        combine(&state.v, &k1v, &k2v, &k3v, &k4v),
        state.time + dt,
    );
    if !next.is_finite() {
        return Err(DynamicsError::NotFinite(next.time.as_f64()));
    }
    Ok(next)
}

/// One Strang step of `iψ_t + ψ_xx + ψ f(|ψ|²) = 0` for `ψ = φ e^{-iκx}`.
///
/// The linear flow of the twisted field is the multiplier `e^{-i(k-κ)²dt}`.
pub fn step_classical<T: Real>(
    grid: &Grid<T>,
    model: &dyn Nonlinearity<T>,
    field: &TwistedField<T>,
    dt: T,
) -> TwistedField<T> {
    let half = dt / T::lit(2.0);
    let nonlinear = |phi: &mut [Complex<T>]| {
        for z in phi.iter_mut() {
            *z = *z * Complex::from_polar(T::one(), model.f(z.norm_sqr()) * half);
        }
    };
    let mut phi = field.phi.clone();
    nonlinear(&mut phi);
    let mut hat = grid.fft(&phi);
    for (h, &k) in hat.iter_mut().zip(grid.wavenumbers()) {
        let q = k - field.kappa;
        *h = *h * Complex::from_polar(T::one(), -q * q * dt);
    }
    let mut phi = grid.ifft(&hat);
    nonlinear(&mut phi);
    TwistedField { phi, kappa: field.kappa }
}

/// Lifts `(η, v)` to `ψ = √(1-η) e^{-i∫₀ˣ v}`.
///
/// With `κ = Θ/(2L)` and `Θ = ∫v`, the phase of `φ = ψe^{iκx}` is the periodic
/// antiderivative of `κ - v`.
pub fn hydro_to_classical<T: Real>(grid: &Grid<T>, state: &HydroState<T>) -> TwistedField<T> {
    let kappa = grid.integrate(&state.v) / (T::lit(2.0) * grid.half_length());
    let minus_v: Vec<T> = state.v.iter().map(|&v| -v).collect();
    let phase = grid.antiderivative(&minus_v);
    let phi = state
        .eta
        .iter()
        .zip(&phase)
        .map(|(&e, &p)| Complex::from_polar((T::one() - e).sqrt(), p))
        .collect();
    TwistedField { phi, kappa }
}

/// `η = 1 - |ψ|²`, `v = -Im(ψ̄ψ_x)/|ψ|²`.
pub fn classical_to_hydro<T: Real>(
    grid: &Grid<T>,
    field: &TwistedField<T>,
    time: T,
) -> Result<HydroState<T>, DynamicsError> {
    let d = grid.derivative_complex(&field.phi, 1);
    let floor = T::lit(1e-10);
    let mut eta = Vec::with_capacity(grid.n());
    let mut v = Vec::with_capacity(grid.n());
    for j in 0..grid.n() {
        let z = field.phi[j];
        let rho = z.norm_sqr();
        if rho < floor {
            return Err(DynamicsError::Vacuum(grid.x()[j].as_f64()));
        }
        eta.push(T::one() - rho);
        v.push(field.kappa - (z.conj() * d[j]).im / rho);
    }
    Ok(HydroState::new(eta, v, time))
}

fn steps_per_snapshot(cfg: &RunConfig) -> (usize, f64) {
    let steps = (cfg.t_snap / cfg.dt).round().max(1.0) as usize;
    (steps, cfg.t_snap / steps as f64)
}

/// Integrates the hydrodynamic system up to `t_final`, recording snapshots every `t_snap`.
pub fn run<T: Real>(
    grid: &Grid<T>,
    model: &dyn Nonlinearity<T>,
    initial: &HydroState<T>,
    t_final: f64,
    cfg: &RunConfig,
) -> Result<Trajectory<T>, DynamicsError> {
    let bound = cfg.c_stab / grid.k_max().as_f64().powi(2);
    if cfg.dt > bound * (1.0 + 1e-12) {
        return Err(DynamicsError::UnstableStep { dt: cfg.dt, bound });
    }
    let (steps, dt) = steps_per_snapshot(cfg);
    let n_snap = (t_final / cfg.t_snap).round() as usize;
    let dt_t = T::lit(dt);
    let mut state = initial.clone();
    let mut traj = Trajectory {
        snapshots: vec![state.clone()],
        energy_series: vec![energy(grid, &state, model)],
        momentum_series: vec![momentum(grid, &state)],
        classical_snapshots: None,
        status: RunStatus::Ok,
        dt: dt_t,
    };
    for s in 1..=n_snap {
        for _ in 0..steps {
            match step_hydro(grid, model, &state, dt_t, &cfg.guard) {
                Ok(next) => state = next,
                Err(DynamicsError::NearVacuum { .. }) => {
                    traj.status = RunStatus::NearVacuumAbort;
                    return Ok(traj);
                }
                Err(DynamicsError::NotFinite(_)) => {
                    traj.status = RunStatus::NotFiniteAbort;
                    return Ok(traj);
                }
                Err(e) => return Err(e),
            }
        }
        // Pin the clock to the snapshot lattice to avoid drift from repeated additions.
        state.time = T::lit(s as f64 * cfg.t_snap) + initial.time;
        traj.energy_series.push(energy(grid, &state, model));
        traj.momentum_series.push(momentum(grid, &state));
        traj.snapshots.push(state.clone());
    }
    Ok(traj)
}

/// Split-step counterpart of [`run`]; hydrodynamic snapshots are recovered from `ψ`.
pub fn run_classical<T: Real>(
    grid: &Grid<T>,
    model: &dyn Nonlinearity<T>,
    initial: &TwistedField<T>,
    t0: T,
    t_final: f64,
    cfg: &RunConfig,
) -> Result<Trajectory<T>, DynamicsError> {
    let (steps, dt) = steps_per_snapshot(cfg);
    let n_snap = (t_final / cfg.t_snap).round() as usize;
    let dt_t = T::lit(dt);
    let mut field = initial.clone();
    let first = classical_to_hydro(grid, &field, t0)?;
    let mut traj = Trajectory {
        energy_series: vec![classical_energy(grid, &field, model)],
        momentum_series: vec![momentum(grid, &first)],
        snapshots: vec![first],
        classical_snapshots: Some(vec![field.clone()]),
        status: RunStatus::Ok,
        dt: dt_t,
    };
    for s in 1..=n_snap {
        for _ in 0..steps {
            field = step_classical(grid, model, &field, dt_t);
        }
        let t = t0 + T::lit(s as f64 * cfg.t_snap);
        let hydro = match classical_to_hydro(grid, &field, t) {
            Ok(h) if h.is_finite() => h,
            Ok(_) => {
                traj.status = RunStatus::NotFiniteAbort;
                return Ok(traj);
            }
            Err(_) => {
                traj.status = RunStatus::NearVacuumAbort;
                return Ok(traj);
            }
        };
        traj.energy_series.push(classical_energy(grid, &field, model));
        traj.momentum_series.push(momentum(grid, &hydro));
        traj.snapshots.push(hydro);
        if let Some(c) = traj.classical_snapshots.as_mut() {
            c.push(field.clone());
        }
    }
    Ok(traj)
}

/// `E = ½∫|ψ'|² + ½∫F(|ψ|²)`.
pub fn classical_energy<T: Real>(grid: &Grid<T>, field: &TwistedField<T>, model: &dyn Nonlinearity<T>) -> T {
    let d = field.physical_derivative(grid, 1);
    let half = T::lit(0.5);
    let dens: Vec<T> =
        d.iter().zip(&field.phi).map(|(dz, z)| half * dz.norm_sqr() + half * model.potential(z.norm_sqr())).collect();
    grid.integrate(&dens)
}

/// Localized perturbations added to a hydrodynamic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Perturbation {
    /// Gaussian bumps `w_η e^{-(x-x₀)²/σ²}` on `η` and `w_v e^{-(x-x₀)²/σ²}` on `v`.
    Gaussian { center: f64, width: f64, eta_weight: f64, v_weight: f64 },
    /// Wave packet moving against the soliton, `v ≈ -(c_s/2)η`.
    RadiationPacket { center: f64, width: f64, wavenumber: f64, sound_speed: f64 },
    /// Sum of smooth random bumps drawn from a seeded generator.
    RandomBumps { count: usize, spread: f64, seed: u64 },
}

impl Perturbation {
    /// Unnormalized perturbation fields on `grid`.
    pub fn fields(&self, grid: &Grid<f64>) -> HydroState<f64> {
        let x = grid.x();
        match *self {
            Perturbation::Gaussian { center, width, eta_weight, v_weight } => {
                let g: Vec<f64> = x.iter().map(|&y| (-((y - center) / width).powi(2)).exp()).collect();
                HydroState::new(
                    g.iter().map(|u| eta_weight * u).collect(),
                    g.iter().map(|u| v_weight * u).collect(),
                    0.0,
                )
            }
            Perturbation::RadiationPacket { center, width, wavenumber, sound_speed } => {
                let e: Vec<f64> = x
                    .iter()
                    .map(|&y| (-((y - center) / width).powi(2)).exp() * (wavenumber * (y - center)).cos())
                    .collect();
                let v = e.iter().map(|u| -0.5 * sound_speed * u).collect();
                HydroState::new(e, v, 0.0)
            }
            Perturbation::RandomBumps { count, spread, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut eta = vec![0.0; grid.n()];
                let mut v = vec![0.0; grid.n()];
                for _ in 0..count {
                    let (a, b): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let c0 = rng.gen_range(-spread..spread);
                    let w = rng.gen_range(1.0..3.0);
                    for j in 0..grid.n() {
                        let g = (-((x[j] - c0) / w).powi(2)).exp();
                        eta[j] += a * g;
                        v[j] += b * g;
                    }
                }
                HydroState::new(eta, v, 0.0)
            }
        }
    }

    /// `base + α‖base‖_X · δ/‖δ‖_X`.
    pub fn apply(&self, grid: &Grid<f64>, base: &HydroState<f64>, alpha: f64) -> HydroState<f64> {
        let d = self.fields(grid);
        let scale = alpha * energy_norm(grid, base) / energy_norm(grid, &d);
        base.add_scaled(&d, scale)
    }
}

/// Measures the oscillation frequency of a small standing wave `η = ε cos(kx)` on the
/// unit background with the split-step scheme. Returns `(measured, √(k⁴ + c_s²k²))`.
pub fn dispersion_frequency(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    mode: usize,
    amplitude: f64,
    periods: f64,
    steps_per_period: usize,
) -> (f64, f64) {
    let k = std::f64::consts::PI * mode as f64 / grid.half_length();
    let cs2 = -2.0 * model.eval(1.0)[1];
    let omega = (k.powi(4) + cs2 * k * k).sqrt();
    let eta: Vec<f64> = grid.x().iter().map(|&x| amplitude * (k * x).cos()).collect();
    let state = HydroState::new(eta, vec![0.0; grid.n()], 0.0);
    let mut field = hydro_to_classical(grid, &state);
    let period = 2.0 * std::f64::consts::PI / omega;
    let dt = period / steps_per_period as f64;
    let total = (periods * steps_per_period as f64).round() as usize;
    let weight: Vec<f64> = grid.x().iter().map(|&x| (k * x).cos()).collect();
    let amp = |f: &TwistedField<f64>| -> f64 {
        let dens: Vec<f64> = f.phi.iter().zip(&weight).map(|(z, w)| (1.0 - z.norm_sqr()) * w).collect();
        grid.integrate(&dens)
    };
    let mut prev = amp(&field);
    let mut crossings = Vec::new();
    for s in 1..=total {
        field = step_classical(grid, model, &field, dt);
        let cur = amp(&field);
        if prev.signum() != cur.signum() && cur != 0.0 {
            let frac = prev / (prev - cur);
            crossings.push((s as f64 - 1.0 + frac) * dt);
        }
        prev = cur;
    }
    if crossings.len() < 2 {
        return (f64::NAN, omega);
    }
    let span = crossings[crossings.len() - 1] - crossings[0];
    let half_periods = (crossings.len() - 1) as f64;
    (std::f64::consts::PI * half_periods / span, omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonlinearity::PolynomialModel;
    use crate::profile::{build_profile, classical_wave};
    use crate::spectral_grid::metric_d;

    fn gp() -> PolynomialModel<f64> {
        PolynomialModel::gross_pitaevskii()
    }

    #[test]
    fn zero_state_is_fixed() {
        let g = Grid::new(256, 20.0).unwrap();
        let s = HydroState::zeros(256);
        let next = step_hydro(&g, &gp(), &s, 1e-3, &RunGuard::default()).unwrap();
        assert!(next.eta.iter().chain(&next.v).all(|&u| u == 0.0));
    }

    #[test]
    fn plane_background_is_invariant() {
        let g = Grid::new(256, 20.0).unwrap();
        let f = TwistedField::untwisted(vec![Complex::new(1.0, 0.0); 256]);
        let next = step_classical(&g, &gp(), &f, 0.1);
        assert!(next.phi.iter().all(|z| (z - Complex::new(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn traveling_wave_one_step() {
        let g = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.0, &g).unwrap();
        let dt = 1e-4;
        let next = step_hydro(&g, &gp(), &w.state(), dt, &RunGuard::default()).unwrap();
        let back = next.shifted(&g, 1.0 * dt);
        let err = energy_norm(&g, &back.sub(&w.state()));
        assert!(err < 1e-9, "{err:e}");
    }

    #[test]
    fn mirror_symmetry() {
        let g = Grid::new(512, 40.0).unwrap();
        let w = build_profile(&gp(), 0.9, &g).unwrap();
        let p = Perturbation::Gaussian { center: 3.0, width: 2.0, eta_weight: 1.0, v_weight: -0.5 };
        let s = p.apply(&g, &w.state(), 0.05);
        let guard = RunGuard::default();
        let a = step_hydro(&g, &gp(), &s.mirrored(), 2e-3, &guard).unwrap();
        let b = step_hydro(&g, &gp(), &s, 2e-3, &guard).unwrap().mirrored();
        for j in 0..512 {
            assert!((a.eta[j] - b.eta[j]).abs() < 1e-13 && (a.v[j] - b.v[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn guard_trips_near_vacuum() {
        let g = Grid::new(256, 30.0).unwrap();
        let eta: Vec<f64> = g.x().iter().map(|&x: &f64| 0.95 * (-x * x).exp()).collect();
        let s = HydroState::new(eta, vec![0.0; 256], 0.0);
        let cfg = RunConfig::stable(&g, 0.1, 1.0);
        let traj = run(&g, &gp(), &s, 1.0, &cfg).unwrap();
        assert_eq!(traj.status, RunStatus::NearVacuumAbort);
        assert_eq!(traj.snapshots.len(), 1);
    }

    #[test]
    fn unstable_step_is_rejected() {
        let g = Grid::new(256, 10.0).unwrap();
        let cfg = RunConfig::new(1.0, 1.0);
        assert!(matches!(
            run(&g, &gp(), &HydroState::zeros(256), 1.0, &cfg),
            Err(DynamicsError::UnstableStep { .. })
        ));
    }

    #[test]
    fn round_trip_through_classical_variables() {
        let g = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.1, &g).unwrap();
        let back = classical_to_hydro(&g, &hydro_to_classical(&g, &w.state()), 0.0).unwrap();
        assert!(energy_norm(&g, &back.sub(&w.state())) < 1e-10);
        let one = TwistedField::untwisted(vec![Complex::new(1.0, 0.0); 1024]);
        let h = classical_to_hydro(&g, &one, 0.0).unwrap();
        assert!(h.eta.iter().chain(&h.v).all(|u| u.abs() < 1e-15));
        let zero = TwistedField::untwisted(vec![Complex::new(0.0, 0.0); 1024]);
        assert!(matches!(classical_to_hydro(&g, &zero, 0.0), Err(DynamicsError::Vacuum(_))));
    }

    #[test]
    fn gp_soliton_split_step() {
        let g = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.0, &g).unwrap();
        let u = classical_wave(&w);
        let mut f = u.clone();
        for _ in 0..1000 {
            f = step_classical(&g, &gp(), &f, 1e-3);
        }
        let back = TwistedField { phi: shift_complex(&g, &f.phi, 1.0), kappa: f.kappa };
        let o = g.origin();
        let theta = (back.phi[o] / u.phi[o]).arg();
        let d = metric_d(&g, &back.rotated(-theta), &u);
        assert!(d < 1e-6, "{d:e}");
    }

    fn shift_complex(g: &Grid<f64>, u: &[Complex<f64>], s: f64) -> Vec<Complex<f64>> {
        let re: Vec<f64> = u.iter().map(|z| z.re).collect();
        let im: Vec<f64> = u.iter().map(|z| z.im).collect();
        g.shift(&re, s).into_iter().zip(g.shift(&im, s)).map(|(a, b)| Complex::new(a, b)).collect()
    }

    #[test]
    fn dispersion_relation() {
        let g = Grid::new(256, 20.0).unwrap();
        for &m in &[2usize, 5, 9] {
            let (w, exact) = dispersion_frequency(&g, &gp(), m, 1e-6, 20.0, 400);
            assert!(((w - exact) / exact).abs() < 5e-3, "mode {m}: {w} vs {exact}");
        }
    }

    #[test]
    fn momentum_flux_closes_the_balance() {
        let g = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.2, &g).unwrap();
        let s = Perturbation::RandomBumps { count: 4, spread: 5.0, seed: 9 }.apply(&g, &w.state(), 0.05);
        let (de, dv) = hydro_rhs(&g, &gp(), &s.eta, &s.v);
        let lhs: Vec<f64> = (0..1024).map(|j| de[j] * s.v[j] + s.eta[j] * dv[j]).collect();
        let rhs = g.derivative(&momentum_flux(&g, &gp(), &s), 1);
        let scale = lhs.iter().map(|u| u.abs()).fold(0.0, f64::max);
        for j in 0..1024 {
            assert!((lhs[j] + rhs[j]).abs() < 1e-8 * scale, "{j}: {} {}", lhs[j], -rhs[j]);
        }
    }

    #[test]
    fn energy_matches_classical_energy() {
        let g = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), 1.2, &g).unwrap();
        let p = Perturbation::RandomBumps { count: 4, spread: 5.0, seed: 7 };
        let s = p.apply(&g, &w.state(), 0.05);
        let e1 = energy(&g, &s, &gp());
        let e2 = classical_energy(&g, &hydro_to_classical(&g, &s), &gp());
        assert!((e1 - e2).abs() < 1e-10 * e1.abs().max(1.0));
    }
}
