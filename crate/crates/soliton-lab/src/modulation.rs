//! Modulation parameters `(a, c, θ)` and the residual `ε` along a trajectory.

use num_complex::Complex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Trajectory;
use crate::nonlinearity::Nonlinearity;
use crate::operators::{apply_h_spectral, kernel_direction, momentum_gradient};
use crate::profile::{build_profile_with, classical_wave, ProfileError, ProfileOptions, TravelingWave};
use crate::spectral_grid::{energy_norm, Grid, HydroState, TwistedField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error("left modulation neighborhood at t = {t}: last iterate a = {a}, c = {c}, residual {residual:e}")]
    LeftNeighborhood { t: f64, a: f64, c: f64, residual: f64 },
    #[error(transparent)]
    Profile(#[from] ProfileError),
}

pub const NEWTON_TOL: f64 = 1e-12;
pub const NEWTON_MAX_ITER: usize = 25;
/// Largest accepted `‖ε‖_X` after the solve.
pub const NEIGHBORHOOD: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub a: f64,
    pub c: f64,
    pub eps: HydroState<f64>,
    /// `(⟨ε, ∂_x Q_c⟩, ∇p(Q_c)·ε)`.
    pub ortho: (f64, f64),
    pub iterations: usize,
    pub wave: TravelingWave<f64>,
}

fn profile_at(model: &dyn Nonlinearity<f64>, c: f64, grid: &Grid<f64>) -> Result<TravelingWave<f64>, ProfileError> {
    let opts = ProfileOptions { enforce_length: false, ..ProfileOptions::default() };
    build_profile_with(model, c, grid, &opts)
}

/// The two orthogonality functionals of `ε`.
pub fn orthogonality(grid: &Grid<f64>, wave: &TravelingWave<f64>, eps: &HydroState<f64>) -> (f64, f64) {
    let k = kernel_direction(wave);
    let g = momentum_gradient(wave);
    (
        grid.inner(&eps.eta, &k.eta) + grid.inner(&eps.v, &k.v),
        grid.inner(&eps.eta, &g.eta) + grid.inner(&eps.v, &g.v),
    )
}

/// `Q(· + a) - Q_c`.
pub fn residual(grid: &Grid<f64>, state: &HydroState<f64>, a: f64, wave: &TravelingWave<f64>) -> HydroState<f64> {
    state.shifted(grid, a).sub(&wave.state())
}

/// Newton solve for `(a, c)` enforcing both orthogonality conditions.
///
/// The Jacobian is a centered finite difference with steps `(dx/4, 1e-4 ν_c)`.
pub fn decompose(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    state: &HydroState<f64>,
    guess: (f64, f64),
) -> Result<Decomposition, ModulationError> {
    let (mut a, mut c) = guess;
    let eval = |a: f64, wave: &TravelingWave<f64>| orthogonality(grid, wave, &residual(grid, state, a, wave));
    let mut wave = profile_at(model, c, grid)?;
    let mut r = eval(a, &wave);
    let fail = |a: f64, c: f64, r: (f64, f64)| ModulationError::LeftNeighborhood {
        t: state.time,
        a,
        c,
        residual: r.0.hypot(r.1),
    };
    for it in 0..=NEWTON_MAX_ITER {
        if r.0.hypot(r.1) <= NEWTON_TOL {
            let eps = residual(grid, state, a, &wave);
            if energy_norm(grid, &eps) > NEIGHBORHOOD {
                return Err(fail(a, c, r));
            }
            return Ok(Decomposition { a, c, eps, ortho: r, iterations: it, wave });
        }
        if it == NEWTON_MAX_ITER {
            break;
        }
        let ha = grid.dx() / 4.0;
        let hc = 1e-4 * wave.nu;
        let (ap, am) = (eval(a + ha, &wave), eval(a - ha, &wave));
        let (cp, cm) = (eval(a, &profile_at(model, c + hc, grid)?), eval(a, &profile_at(model, c - hc, grid)?));
        let j = [
            [(ap.0 - am.0) / (2.0 * ha), (cp.0 - cm.0) / (2.0 * hc)],
            [(ap.1 - am.1) / (2.0 * ha), (cp.1 - cm.1) / (2.0 * hc)],
        ];
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !det.is_finite() || det == 0.0 {
            return Err(fail(a, c, r));
        }
        let da = (j[1][1] * r.0 - j[0][1] * r.1) / det;
        let dc = (j[0][0] * r.1 - j[1][0] * r.0) / det;
        a -= da;
        c -= dc;
        if !(c.abs() < wave.c_s) {
            return Err(fail(a, c, r));
        }
        wave = profile_at(model, c, grid)?;
        r = eval(a, &wave);
    }
    Err(fail(a, c, r))
}

/// Modulation parameters sampled along a trajectory.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ModulationTrack {
    pub times: Vec<f64>,
    pub a: Vec<f64>,
    pub c: Vec<f64>,
    /// Unwrapped phase; `NaN` when no classical snapshots are available.
    pub theta: Vec<f64>,
    pub eps_xnorm: Vec<f64>,
    pub a_dot_minus_c: Vec<f64>,
    pub c_dot: Vec<f64>,
    pub ortho_residuals: Vec<(f64, f64)>,
    /// Times where `|∫χψ|` fell below `|𝔡|/2`.
    pub theta_flags: Vec<f64>,
    /// Set when a decomposition failed and the track stops early.
    pub truncated: Option<String>,
    #[serde(skip)]
    pub eps: Vec<HydroState<f64>>,
}

/// Centered differences in the interior, one-sided at the ends.
pub fn centered_rate(t: &[f64], y: &[f64]) -> Vec<f64> {
    let n = t.len();
    (0..n)
        .map(|i| match n {
            0 | 1 => 0.0,
            _ if i == 0 => (y[1] - y[0]) / (t[1] - t[0]),
            _ if i == n - 1 => (y[n - 1] - y[n - 2]) / (t[n - 1] - t[n - 2]),
            _ => (y[i + 1] - y[i - 1]) / (t[i + 1] - t[i - 1]),
        })
        .collect()
}

impl ModulationTrack {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn max_ortho_residual(&self) -> f64 {
        self.ortho_residuals.iter().map(|r| r.0.abs().max(r.1.abs())).fold(0.0, f64::max)
    }

    pub fn sup_eps(&self) -> f64 {
        self.eps_xnorm.iter().copied().fold(0.0, f64::max)
    }

    pub fn sup_c_dot(&self) -> f64 {
        self.c_dot.iter().map(|u| u.abs()).fold(0.0, f64::max)
    }

    /// `sup(|a' - c|² + |c'|) / sup‖ε‖²_X`.
    pub fn modulation_ratio(&self) -> f64 {
        let num = self
            .a_dot_minus_c
            .iter()
            .zip(&self.c_dot)
            .map(|(d, cd)| d * d + cd.abs())
            .fold(0.0, f64::max);
        num / self.sup_eps().powi(2)
    }

    /// Total variation of `c` over the samples with index in `range`.
    pub fn c_variation(&self, range: std::ops::Range<usize>) -> f64 {
        self.c[range].windows(2).map(|w| (w[1] - w[0]).abs()).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "a", "c", "theta", "eps_xnorm", "a_dot_minus_c", "c_dot"])?;
        for i in 0..self.len() {
            wr.write_record(
                [
                    self.times[i],
                    self.a[i],
                    self.c[i],
                    self.theta[i],
                    self.eps_xnorm[i],
                    self.a_dot_minus_c[i],
                    self.c_dot[i],
                ]
                .map(|u| format!("{u:.17e}")),
            )?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Warm-started decomposition of every snapshot. The initial guess applies at `t₀`.
pub fn track(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    traj: &Trajectory<f64>,
    guess: (f64, f64),
) -> Result<ModulationTrack, ModulationError> {
    let mut out = ModulationTrack::default();
    let mut g = guess;
    let mut prev_t = traj.snapshots.first().map(|s| s.time).unwrap_or(0.0);
    for (i, s) in traj.snapshots.iter().enumerate() {
        // Predict the translation from the last speed.
        let pred = (g.0 + g.1 * (s.time - prev_t), g.1);
        let d = match decompose(grid, model, s, pred) {
            Ok(d) => d,
            Err(e) if i == 0 => return Err(e),
            Err(e) => {
                out.truncated = Some(e.to_string());
                break;
            }
        };
        out.times.push(s.time);
        out.a.push(d.a);
        out.c.push(d.c);
        out.eps_xnorm.push(energy_norm(grid, &d.eps));
        out.ortho_residuals.push(d.ortho);
        out.eps.push(d.eps);
        g = (d.a, d.c);
        prev_t = s.time;
    }
    let a_dot = centered_rate(&out.times, &out.a);
    out.a_dot_minus_c = a_dot.iter().zip(&out.c).map(|(d, c)| d - c).collect();
    out.c_dot = centered_rate(&out.times, &out.c);
    out.theta = vec![f64::NAN; out.len()];
    if let Some(fields) = &traj.classical_snapshots {
        if let Some(reference) = out.c.first() {
            let wave = profile_at(model, *reference, grid)?;
            let phase = phase_theta(grid, &wave, &fields[..out.len()], &out.a, 5.0);
            out.theta = phase.theta;
            out.theta_flags = phase.flagged.iter().map(|&i| out.times[i]).collect();
        }
    }
    Ok(out)
}

/// `exp(1 - 1/(1 - (x/w)²))` on `|x| < w`.
pub fn bump(x: f64, w: f64) -> f64 {
    let r = x / w;
    if r.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - r * r)).exp()
    }
}

#[derive(Debug, Clone)]
pub struct PhaseSeries {
    pub theta: Vec<f64>,
    /// Indices where `|∫χψ| < |𝔡|/2`.
    pub flagged: Vec<usize>,
    /// Bump half-width after shrinking.
    pub width: f64,
    pub d_ref: Complex<f64>,
}

fn bump_integral(grid: &Grid<f64>, psi: &[Complex<f64>], w: f64) -> Complex<f64> {
    grid.x().iter().zip(psi).map(|(&x, z)| z * bump(x, w)).sum::<Complex<f64>>() * grid.dx()
}

/// `ψ(x + a)` from a twisted field.
fn physical_shifted(grid: &Grid<f64>, field: &TwistedField<f64>, a: f64) -> Vec<Complex<f64>> {
    let re: Vec<f64> = field.phi.iter().map(|z| z.re).collect();
    let im: Vec<f64> = field.phi.iter().map(|z| z.im).collect();
    let (re, im) = (grid.shift(&re, a), grid.shift(&im, a));
    grid.x()
        .iter()
        .enumerate()
        .map(|(j, &x)| Complex::new(re[j], im[j]) * Complex::from_polar(1.0, -field.kappa * (x + a)))
        .collect()
}

/// `θ(t) = arg ∫χψ(t, · + a(t)) - arg 𝔡`, `𝔡 = ∫χ𝔲_c`, unwrapped in time.
///
/// The bump width is halved until `|𝔡| ≥ ½|𝔲_c(0)|∫χ`.
pub fn phase_theta(
    grid: &Grid<f64>,
    wave: &TravelingWave<f64>,
    fields: &[TwistedField<f64>],
    a: &[f64],
    width: f64,
) -> PhaseSeries {
    let u = classical_wave(wave).physical(grid);
    let u0 = u[grid.origin()].norm();
    let mut w = width;
    let mut d_ref = bump_integral(grid, &u, w);
    let mass = |w: f64| grid.x().iter().map(|&x| bump(x, w)).sum::<f64>() * grid.dx();
    while d_ref.norm() < 0.5 * u0 * mass(w) && w > 4.0 * grid.dx() {
        w /= 2.0;
        d_ref = bump_integral(grid, &u, w);
    }
    let mut theta = Vec::with_capacity(fields.len());
    let mut flagged = Vec::new();
    let mut last = 0.0;
    for (i, (f, &ai)) in fields.iter().zip(a).enumerate() {
        let z = bump_integral(grid, &physical_shifted(grid, f, ai), w);
        if z.norm() < d_ref.norm() / 2.0 {
            flagged.push(i);
        }
        let raw = (z / d_ref).arg();
        let unwrapped = if i == 0 {
            raw
        } else {
            let k = ((last - raw) / std::f64::consts::TAU).round();
            raw + k * std::f64::consts::TAU
        };
        theta.push(unwrapped);
        last = unwrapped;
    }
    PhaseSeries { theta, flagged, width: w, d_ref }
}

/// Gaussian smoothing with standard deviation `width` (in time units), truncated at 3σ.
pub fn mollify(t: &[f64], y: &[f64], width: f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..t.len() {
                let d = (t[j] - t[i]) / width;
                if d.abs() <= 3.0 + 1e-9 {
                    let w = (-0.5 * d * d).exp();
                    num += w * y[j];
                    den += w;
                }
            }
            num / den
        })
        .collect()
}

/// `⟨H_c ε, ε⟩ / ‖ε‖²_X` for every accepted snapshot, with `H_c` at the tracked speed.
pub fn coercivity_ratios(
    grid: &Grid<f64>,
    model: &dyn Nonlinearity<f64>,
    track: &ModulationTrack,
) -> Result<Vec<f64>, ModulationError> {
    track
        .eps
        .iter()
        .zip(&track.c)
        .map(|(e, &c)| {
            let wave = profile_at(model, c, grid)?;
            let h = apply_h_spectral(&wave, e);
            let form = grid.inner(&h.eta, &e.eta) + grid.inner(&h.v, &e.v);
            Ok(form / energy_norm(grid, e).powi(2))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run, run_classical, Perturbation, RunConfig};
    use crate::nonlinearity::PolynomialModel;
    use crate::profile::build_profile;

    fn gp() -> PolynomialModel<f64> {
        PolynomialModel::gross_pitaevskii()
    }

    fn setup(c: f64) -> (Grid<f64>, TravelingWave<f64>) {
        let g = Grid::new(1024, 60.0).unwrap();
        let w = build_profile(&gp(), c, &g).unwrap();
        (g, w)
    }

    #[test]
    fn exact_wave_decomposes_exactly() {
        let (g, w) = setup(1.1);
        let s = w.state().shifted(&g, -2.5);
        let d = decompose(&g, &gp(), &s, (2.3, 1.08)).unwrap();
        assert!((d.a - 2.5).abs() < 1e-10 && (d.c - 1.1).abs() < 1e-10, "{} {}", d.a, d.c);
        assert!(energy_norm(&g, &d.eps) < 1e-10);
    }

    #[test]
    fn perturbed_wave_satisfies_constraints() {
        let (g, w) = setup(1.2);
        let p = Perturbation::RandomBumps { count: 5, spread: 6.0, seed: 42 };
        let s = w.state().add_scaled(&p.fields(&g), 1e-3);
        let d = decompose(&g, &gp(), &s, (0.0, 1.2)).unwrap();
        assert!(d.ortho.0.abs() <= NEWTON_TOL && d.ortho.1.abs() <= NEWTON_TOL);
        let e = energy_norm(&g, &d.eps);
        assert!(e > 1e-5 && e < 1e-2, "{e}");
    }

    #[test]
    fn translation_equivariance() {
        let (g, w) = setup(1.2);
        let p = Perturbation::RandomBumps { count: 5, spread: 6.0, seed: 1 };
        let s = w.state().add_scaled(&p.fields(&g), 1e-3);
        let d0 = decompose(&g, &gp(), &s, (0.0, 1.2)).unwrap();
        let d1 = decompose(&g, &gp(), &s.shifted(&g, -3.0), (3.0, 1.2)).unwrap();
        assert!((d1.a - d0.a - 3.0).abs() < 1e-9);
        assert!((d1.c - d0.c).abs() < 1e-10);
        assert!(energy_norm(&g, &d1.eps.sub(&d0.eps)) < 1e-9);
    }

    #[test]
    fn far_away_state_is_rejected() {
        let (g, _) = setup(1.2);
        let s = HydroState::new(
            g.x().iter().map(|&x| 0.6 * (-(x / 3.0).powi(2)).exp()).collect(),
            vec![0.0; 1024],
            0.0,
        );
        assert!(decompose(&g, &gp(), &s, (0.0, 1.2)).is_err());
    }

    #[test]
    fn unperturbed_track_is_affine() {
        let (g, w) = setup(1.2);
        let cfg = RunConfig::stable(&g, 0.25, 1.0);
        let traj = run(&g, &gp(), &w.state(), 2.0, &cfg).unwrap();
        let tr = track(&g, &gp(), &traj, (0.0, 1.2)).unwrap();
        for i in 0..tr.len() {
            assert!((tr.c[i] - 1.2).abs() < 1e-8);
            assert!((tr.a[i] - 1.2 * tr.times[i]).abs() < 1e-6);
        }
        assert!(tr.max_ortho_residual() <= 1e-9);
    }

    #[test]
    fn phase_of_rotated_wave() {
        let (g, w) = setup(1.0);
        let u = classical_wave(&w);
        let fields = vec![u.rotated(0.7), u.rotated(0.7 + 2.0 * std::f64::consts::PI - 0.1)];
        let p = phase_theta(&g, &w, &fields, &[0.0, 0.0], 5.0);
        assert!((p.theta[0] - 0.7).abs() < 1e-12);
        // Unwrapping keeps the series continuous.
        assert!((p.theta[1] - p.theta[0] + 0.1).abs() < 1e-12);
        let q = phase_theta(&g, &w, &fields[..1], &[0.0], 2.5);
        assert!((q.theta[0] - 0.7).abs() < 1e-6);
        assert!(p.flagged.is_empty());
    }

    #[test]
    fn classical_track_has_steady_phase() {
        let (g, w) = setup(1.2);
        let cfg = RunConfig::new(2e-3, 0.25);
        let traj = run_classical(&g, &gp(), &classical_wave(&w), 0.0, 2.0, &cfg).unwrap();
        let tr = track(&g, &gp(), &traj, (0.0, 1.2)).unwrap();
        let rate = centered_rate(&tr.times, &tr.theta);
        assert!(rate.iter().all(|r| r.abs() < 1e-3), "{rate:?}");
    }

    #[test]
    fn mollify_preserves_constants_and_lines() {
        let t: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = t.iter().map(|&s| 2.0 * s + 1.0).collect();
        let m = mollify(&t, &y, 0.3);
        assert!((m[25] - y[25]).abs() < 1e-12);
        assert!(mollify(&t, &vec![3.0; 50], 0.3).iter().all(|&u| (u - 3.0).abs() < 1e-14));
    }

    #[test]
    fn csv_has_declared_columns() {
        let (g, w) = setup(1.2);
        let traj = run(&g, &gp(), &w.state(), 0.5, &RunConfig::stable(&g, 0.25, 1.0)).unwrap();
        let tr = track(&g, &gp(), &traj, (0.0, 1.2)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,a,c,theta,eps_xnorm,a_dot_minus_c,c_dot\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
