//! Time-dependent stability diagnostics in the soliton frame.

use serde::{Deserialize, Serialize};

use crate::dynamics::{momentum_flux, Trajectory};
use crate::modulation::{centered_rate, mollify, ModulationTrack};
use crate::nonlinearity::Nonlinearity;
use crate::operators::{dual_variable, virial_matrix};
use crate::profile::{build_profile_with, ProfileError, ProfileOptions, TravelingWave};
use crate::spectral_grid::{energy_norm, Grid, HydroState};

/// `χ(y) = ½(1 + tanh(τy/2))`.
pub fn chi(y: f64, tau: f64) -> f64 {
    0.5 * (1.0 + (0.5 * tau * y).tanh())
}

pub fn chi_prime(y: f64, tau: f64) -> f64 {
    let s = 1.0 / (0.5 * tau * y).cosh();
    0.25 * tau * s * s
}

/// Default cutoff steepness `τ = ν/2`.
pub fn default_tau(nu: f64) -> f64 {
    nu / 2.0
}

/// `x - center` wrapped into the periodic box `[-L, L)`.
pub fn frame_offset(grid: &Grid<f64>, x: f64, center: f64) -> f64 {
    let l = grid.half_length();
    (x - center + l).rem_euclid(2.0 * l) - l
}

/// `p_R = ½∫ηv χ(· - R - a)`.
pub fn localized_momentum(grid: &Grid<f64>, state: &HydroState<f64>, a: f64, r: f64, tau: f64) -> f64 {
    let dens: Vec<f64> =
        (0..grid.n()).map(|j| state.eta[j] * state.v[j] * chi(frame_offset(grid, grid.x()[j], r + a), tau)).collect();
    0.5 * grid.integrate(&dens)
}

/// `d/dt p_{R+σt} = ½∫Φχ̃' - ½(a' + σ)∫ηvχ̃'` with `χ̃ = χ(· - a - R - σt)`.
pub fn localized_momentum_rate(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    state: &HydroState<f64>,
    a: f64,
    a_dot: f64,
    shift: f64,
    sigma: f64,
    tau: f64,
) -> f64 {
    let flux = momentum_flux(grid, model, state);
    let dens: Vec<f64> = (0..grid.n())
        .map(|j| {
            let w = chi_prime(frame_offset(grid, grid.x()[j], a + shift), tau);
            (flux[j] - (a_dot + sigma) * state.eta[j] * state.v[j]) * w
        })
        .collect();
    0.5 * grid.integrate(&dens)
}

/// `∫((∂_xη)² + η² + v²)χ'(· - a - shift)`.
fn local_energy_weight(grid: &Grid<f64>, state: &HydroState<f64>, a: f64, shift: f64, tau: f64) -> f64 {
    let d = grid.derivative(&state.eta, 1);
    let dens: Vec<f64> = (0..grid.n())
        .map(|j| {
            (d[j] * d[j] + state.eta[j] * state.eta[j] + state.v[j] * state.v[j]) * chi_prime(frame_offset(grid, grid.x()[j], a + shift), tau)
        })
        .collect();
    grid.integrate(&dens)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub times: Vec<f64>,
    pub p_r: Vec<f64>,
    pub rate_analytic: Vec<f64>,
    pub rate_fd: Vec<f64>,
    pub lower_bound: Vec<f64>,
    pub tail_allowance: Vec<f64>,
    /// `inf_t (rate + allowance)/W` with `W = ∫((∂_xη)² + η² + v²)χ'`.
    pub kappa_hat: f64,
    pub kappa: f64,
    /// Tail constant `C` fitted on the unperturbed profile.
    pub tail_constant: f64,
    /// Fraction of snapshots with `rate ≥ κW - allowance`.
    pub verdict: f64,
    /// `max |analytic - fd| / max |analytic|` over interior snapshots.
    pub rate_mismatch: f64,
}

/// Pure-soliton tail constant: `sup_t |rate|·e^{τ|R+σt|}` for `Q_c` in its own frame.
fn tail_constant(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    wave: &TravelingWave<f64>,
    times: &[f64],
    r: f64,
    sigma: f64,
    tau: f64,
) -> f64 {
    let s = wave.state();
    times
        .iter()
        .map(|&t| {
            let shift = r + sigma * t;
            localized_momentum_rate(grid, model, &s, 0.0, wave.c, shift, sigma, tau).abs() * (tau * shift.abs()).exp()
        })
        .fold(0.0, f64::max)
}

pub fn monotonicity_report(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    traj: &Trajectory<f64>,
    track: &ModulationTrack,
    r: f64,
    sigma: f64,
    tau: f64,
) -> Result<MonotonicityReport, ProfileError> {
    let n = track.len();
    let times = track.times.clone();
    let a_dot = centered_rate(&times, &track.a);
    let mut rep = MonotonicityReport { times: times.clone(), ..Default::default() };
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let s = &traj.snapshots[i];
        let shift = r + sigma * times[i];
        rep.p_r.push(localized_momentum(grid, s, track.a[i] + sigma * times[i], r, tau));
        rep.rate_analytic.push(localized_momentum_rate(grid, model, s, track.a[i], a_dot[i], shift, sigma, tau));
        weights.push(local_energy_weight(grid, s, track.a[i], shift, tau));
    }
    rep.rate_fd = centered_rate(&times, &rep.p_r);
    let opts = ProfileOptions { enforce_length: false, ..ProfileOptions::default() };
    let wave = build_profile_with(model, track.c[0], grid, &opts)?;
    rep.tail_constant = tail_constant(grid, model, &wave, &times, r, sigma, tau);
    rep.tail_allowance = times.iter().map(|&t| rep.tail_constant * (-(tau * (r + sigma * t).abs())).exp()).collect();
    rep.kappa_hat = (0..n)
        .map(|i| (rep.rate_analytic[i] + rep.tail_allowance[i]) / weights[i])
        .fold(f64::INFINITY, f64::min);
    rep.kappa = rep.kappa_hat / 2.0;
    rep.lower_bound = (0..n).map(|i| rep.kappa * weights[i] - rep.tail_allowance[i]).collect();
    let holds = (0..n).filter(|&i| rep.rate_analytic[i] >= rep.lower_bound[i]).count();
    rep.verdict = if n == 0 { 0.0 } else { holds as f64 / n as f64 };
    let scale = rep.rate_analytic.iter().map(|u| u.abs()).fold(0.0, f64::max);
    rep.rate_mismatch = (1..n.saturating_sub(1))
        .map(|i| (rep.rate_analytic[i] - rep.rate_fd[i]).abs())
        .fold(0.0, f64::max)
        / scale;
    Ok(rep)
}

/// Per-window values of `∫_t^{t+1}∫ w(s, x + a(s))|x|^ρ dx ds`, trapezoidal in time.
fn windowed(times: &[f64], values: &[f64]) -> Vec<(f64, f64)> {
    let Some(&t0) = times.first() else { return Vec::new() };
    let t_end = *times.last().unwrap_or(&t0);
    let mut out = Vec::new();
    let mut start = t0;
    while start + 1.0 <= t_end + 1e-9 {
        let mut acc = 0.0;
        for i in 1..times.len() {
            let (lo, hi) = (times[i - 1], times[i]);
            if lo >= start - 1e-9 && hi <= start + 1.0 + 1e-9 {
                acc += 0.5 * (hi - lo) * (values[i - 1] + values[i]);
            }
        }
        out.push((start, acc));
        start += 1.0;
    }
    out
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct WindowReport {
    /// `(window start, integral)`.
    pub windows: Vec<(f64, f64)>,
    pub sup: f64,
}

impl WindowReport {
    fn from_windows(windows: Vec<(f64, f64)>) -> Self {
        let sup = windows.iter().map(|w| w.1).fold(0.0, f64::max);
        Self { windows, sup }
    }
}

pub fn weighted_decay_report(
    grid: &Grid<f64>,
    traj: &Trajectory<f64>,
    track: &ModulationTrack,
    rho: f64,
) -> WindowReport {
    let w = grid.weight(rho);
    let values: Vec<f64> = (0..track.len())
        .map(|i| {
            let s = traj.snapshots[i].shifted(grid, track.a[i]);
            let d = grid.derivative(&s.eta, 1);
            let dens: Vec<f64> =
                (0..grid.n()).map(|j| (d[j] * d[j] + s.eta[j] * s.eta[j] + s.v[j] * s.v[j]) * w[j]).collect();
            grid.integrate(&dens)
        })
        .collect();
    WindowReport::from_windows(windowed(&track.times, &values))
}

/// Windows of `∫∫|∂_x^l ψ(s, x + a(s))|²(1 + |x|^r)`; needs classical snapshots.
pub fn smoothing_report(
    grid: &Grid<f64>,
    traj: &Trajectory<f64>,
    track: &ModulationTrack,
    l: u32,
    r: f64,
) -> Option<WindowReport> {
    let fields = traj.classical_snapshots.as_ref()?;
    let weight: Vec<f64> = grid.x().iter().map(|&x| 1.0 + x.abs().powf(r)).collect();
    let values: Vec<f64> = (0..track.len())
        .map(|i| {
            let d = fields[i].physical_derivative(grid, l);
            let dens: Vec<f64> = d.iter().map(|z| z.norm_sqr()).collect();
            let moved = grid.shift(&dens, track.a[i]);
            grid.integrate(&moved.iter().zip(&weight).map(|(u, w)| u * w).collect::<Vec<_>>())
        })
        .collect();
    Some(WindowReport::from_windows(windowed(&track.times, &values)))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct VirialSeries {
    pub gamma: f64,
    pub times: Vec<f64>,
    pub n: Vec<f64>,
    pub n_rate: Vec<f64>,
    pub e_tilde_xnorm: Vec<f64>,
    /// `n'/‖ẽ‖²_X`.
    pub ratio: Vec<f64>,
    /// `2‖√|x| ẽ‖² + 2γ‖M_c‖_∞‖ẽ‖²`, an upper bound for `|n|`.
    pub n_bound: Vec<f64>,
}

impl VirialSeries {
    /// `min n'/‖ẽ‖²_X` over `t ≥ t₀ + transient`, excluding the one-sided end points.
    pub fn min_ratio_after(&self, transient: f64) -> f64 {
        let t0 = self.times.first().copied().unwrap_or(0.0);
        let last = self.times.len().saturating_sub(1);
        (1..last)
            .filter(|&i| self.times[i] >= t0 + transient)
            .map(|i| self.ratio[i])
            .fold(f64::INFINITY, f64::min)
    }

    /// `∫‖ẽ‖²_X dt` by the trapezoidal rule.
    pub fn e_tilde_integral(&self) -> f64 {
        (1..self.times.len())
            .map(|i| {
                0.5 * (self.times[i] - self.times[i - 1])
                    * (self.e_tilde_xnorm[i].powi(2) + self.e_tilde_xnorm[i - 1].powi(2))
            })
            .sum()
    }

    pub fn sup_abs_n(&self) -> f64 {
        self.n.iter().map(|u| u.abs()).fold(0.0, f64::max)
    }
}

pub fn virial_series(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    track: &ModulationTrack,
    gamma: f64,
) -> Result<VirialSeries, ProfileError> {
    let opts = ProfileOptions { enforce_length: false, ..ProfileOptions::default() };
    let mut out = VirialSeries { gamma, times: track.times.clone(), ..Default::default() };
    let sqrt_x: Vec<f64> = grid.x().iter().map(|x| x.abs().sqrt()).collect();
    for (eps, &c) in track.eps.iter().zip(&track.c) {
        let wave = build_profile_with(model, c, grid, &opts)?;
        let e = dual_variable(&wave, eps);
        let nm = virial_matrix(&wave, gamma);
        out.n.push(nm.form(grid, &e));
        let en = energy_norm(grid, &e);
        out.e_tilde_xnorm.push(en);
        let weighted: Vec<f64> = e.eta.iter().chain(&e.v).zip(sqrt_x.iter().chain(&sqrt_x)).map(|(u, s)| u * s).collect();
        let l2: f64 = e.eta.iter().chain(&e.v).map(|u| u * u).sum::<f64>() * grid.dx();
        out.n_bound.push(2.0 * weighted.iter().map(|u| u * u).sum::<f64>() * grid.dx() + 2.0 * gamma * nm.m_sup() * l2);
    }
    out.n_rate = centered_rate(&out.times, &out.n);
    out.ratio = out.n_rate.iter().zip(&out.e_tilde_xnorm).map(|(r, e)| r / (e * e)).collect();
    Ok(out)
}

/// Smallest `γ` in `scan` whose series has a positive minimum ratio after `transient`.
pub fn select_gamma(series: &[VirialSeries], transient: f64) -> Option<f64> {
    series.iter().find(|s| s.min_ratio_after(transient) > 0.0).map(|s| s.gamma)
}

pub const GAMMA_SCAN: [f64; 5] = [1.0, 3.0, 10.0, 30.0, 100.0];

/// Energy-space norm of `ε` restricted to `|x| ≤ half_width` in the soliton frame.
pub fn localized_x_norm(grid: &Grid<f64>, eps: &HydroState<f64>, half_width: f64) -> f64 {
    let d = grid.derivative(&eps.eta, 1);
    let dens: Vec<f64> = (0..grid.n())
        .map(|j| {
            if grid.x()[j].abs() <= half_width {
                d[j] * d[j] + eps.eta[j] * eps.eta[j] + eps.v[j] * eps.v[j]
            } else {
                0.0
            }
        })
        .collect();
    grid.integrate(&dens).sqrt()
}

/// Long-time signature of a modulated run: local decay of `ε`, settling of `c`, and `θ'`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AsymptoticReport {
    pub times: Vec<f64>,
    pub local_norm: Vec<f64>,
    pub theta_rate: Vec<f64>,
    pub window: f64,
    /// Maximum of the local norm after the transient.
    pub peak: f64,
    pub final_local: f64,
    /// `1 - final/peak`.
    pub decay_fraction: f64,
    pub c_variation_total: f64,
    pub c_variation_last_quarter: f64,
    /// `sup |θ'|` over the last tenth of the run.
    pub theta_rate_tail: f64,
}

/// `θ` is mollified over `mollifier` time units before differentiation.
pub fn asymptotic_report(
    grid: &Grid<f64>,
    track: &ModulationTrack,
    window: f64,
    transient: f64,
    mollifier: f64,
) -> AsymptoticReport {
    let n = track.len();
    let times = track.times.clone();
    let local_norm: Vec<f64> = track.eps.iter().map(|e| localized_x_norm(grid, e, window)).collect();
    let t0 = times.first().copied().unwrap_or(0.0);
    let t_end = times.last().copied().unwrap_or(0.0);
    let peak = (0..n).filter(|&i| times[i] >= t0 + transient).map(|i| local_norm[i]).fold(0.0, f64::max);
    let final_local = local_norm.last().copied().unwrap_or(f64::NAN);
    let theta_rate = centered_rate(&times, &mollify(&times, &track.theta, mollifier));
    let tail_start = t_end - 0.1 * (t_end - t0);
    let theta_rate_tail = (0..n)
        .filter(|&i| times[i] >= tail_start)
        .map(|i| theta_rate[i].abs())
        .fold(0.0, f64::max);
    AsymptoticReport {
        decay_fraction: 1.0 - final_local / peak,
        c_variation_total: track.c_variation(0..n),
        c_variation_last_quarter: track.c_variation(3 * n / 4..n),
        times,
        local_norm,
        theta_rate,
        window,
        peak,
        final_local,
        theta_rate_tail,
    }
}
