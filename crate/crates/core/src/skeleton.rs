//! Controlled skeleton equations and recovery of minimal-norm controls.
//!
//! A control `g` realizing a trajectory is read off from the residual
//! `r = du/dt - F(u)` of the uncontrolled drift. For Cahn-Hilliard,
//! `-sqrt(2) g' = r` has the mean-zero solution as its minimal-norm
//! solution. For the Kac equation the control enters as `sqrt(w) g` with
//! `w = 1 - gamma^{2/3} u^2`, and the minimal-norm control is
//! `sqrt(w) Psi'` with `(w Psi')' = -r / sqrt(2)`.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;

use crate::ch::{CHParams, ChScheme, ChSolver, NoiseMode};
use crate::error::{Error, Result};
use crate::grid::{antiderivative_mean_zero, integrate_in_place, Field, SpectralGrid};
use crate::ikk::{ControlCoupling, IKKParams, IkkSolver};
use crate::trajectory::{ControlField, Trajectory};

/// Smallest mobility weight accepted by the weighted recovery.
pub const WEIGHT_FLOOR: f64 = 1e-6;
/// Largest residual mean tolerated before recovery is refused.
pub const RESIDUAL_MEAN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateValue {
    /// `1/2 ||g||^2_{L^2 L^2}`, midpoint rule over the snapshot intervals.
    pub value: f64,
    /// Largest residual of the defining identity over the slices, relative
    /// to the slice's right-hand side.
    pub residual_norm: f64,
    /// Largest residual mean discarded before inversion.
    pub mean_removed: f64,
}

pub fn solve_skeleton_ch(u0: &Field, g: &ControlField, p: &CHParams) -> Result<Trajectory> {
    let mut q = p.clone();
    q.noise = NoiseMode::Off;
    q.scheme = ChScheme::SemiImplicit;
    ChSolver::new(&q)?.run(u0, None, Some(g))
}

/// Kac skeleton with `epsilon = 0` and the control entering as `sqrt(w) g`.
pub fn solve_skeleton_ikk(u0: &Field, g: &ControlField, p: &IKKParams) -> Result<Trajectory> {
    let mut q = p.clone();
    q.epsilon = 0.0;
    IkkSolver::new(&q)?.run(u0, None, Some((g, ControlCoupling::SquareRoot)))
}

/// Midpoint states and centered difference quotients between snapshots.
struct Slices {
    times: Vec<f64>,
    widths: Vec<f64>,
    states: Vec<Vec<f64>>,
    rates: Vec<Vec<f64>>,
}

fn slices(traj: &Trajectory) -> Result<Slices> {
    if traj.len() < 2 {
        return Err(Error::Parameter("need at least two snapshots".into()));
    }
    let t = traj.times();
    let f = traj.fields();
    let mut out = Slices {
        times: Vec::new(),
        widths: Vec::new(),
        states: Vec::new(),
        rates: Vec::new(),
    };
    for m in 0..traj.len() - 1 {
        let h = t[m + 1] - t[m];
        let (a, b) = (f[m].values(), f[m + 1].values());
        out.times.push(0.5 * (t[m] + t[m + 1]));
        out.widths.push(h);
        out.states.push(a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect());
        out.rates.push(a.iter().zip(b).map(|(x, y)| (y - x) / h).collect());
    }
    Ok(out)
}

fn centered(r: &mut [f64]) -> Result<f64> {
    let mean = r.iter().sum::<f64>() / r.len() as f64;
    if mean.abs() > RESIDUAL_MEAN_TOLERANCE {
        return Err(Error::ResidualMass { mean });
    }
    r.iter_mut().for_each(|v| *v -= mean);
    Ok(mean.abs())
}

fn l2(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn recover_control_ch(traj: &Trajectory, p: &CHParams) -> Result<(ControlField, RateValue)> {
    if traj.n() != p.n {
        return Err(Error::GridMismatch {
            left: traj.n(),
            right: p.n,
        });
    }
    let solver = ChSolver::new(p)?;
    let grid = SpectralGrid::new(p.n)?;
    let s = slices(traj)?;
    let mut rate = RateValue {
        value: 0.0,
        residual_norm: 0.0,
        mean_removed: 0.0,
    };
    let mut controls = Vec::with_capacity(s.times.len());
    for (m, (state, dudt)) in s.states.iter().zip(&s.rates).enumerate() {
        let mut r: Vec<f64> = dudt.iter().zip(solver.drift(state)).map(|(d, f)| d - f).collect();
        rate.mean_removed = rate.mean_removed.max(centered(&mut r)?);
        let g = &antiderivative_mean_zero(&Field::new(r.clone())?)? * (-1.0 / SQRT_2);
        // identity check: -sqrt(2) g' = r
        let mut c = grid.forward(g.values());
        grid.differentiate_in_place(&mut c, 1);
        let back = grid.inverse(&c);
        let defect: Vec<f64> = back.iter().zip(&r).map(|(b, r)| -SQRT_2 * b - r).collect();
        rate.residual_norm = rate.residual_norm.max(l2(&defect) / l2(&r).max(1e-300));
        rate.value += 0.5 * s.widths[m] * g.l2_norm_sq();
        controls.push(g);
    }
    Ok((ControlField::new(s.times, controls)?, rate))
}

/// Periodic weighted problem `(w Psi')' = b` for mean-zero `b`.
///
/// In one dimension the flux `q = w Psi'` is a mean-zero antiderivative of
/// `b` plus one constant, fixed by periodicity of `Psi`: `int q / w = 0`.
/// The antiderivative is spectral, so the solve is exact up to roundoff.
/// Returns `q` and the residual `||q' - b|| / ||b||`.
pub(crate) fn weighted_flux(grid: &SpectralGrid, w: &[f64], b: &[f64]) -> Result<(Vec<f64>, f64)> {
    let mut c = grid.forward(b);
    c[0] = Complex64::default();
    integrate_in_place(grid, &mut c);
    let mut q = grid.inverse(&c);
    let inv: f64 = w.iter().map(|w| 1.0 / w).sum();
    if !inv.is_finite() || inv <= 0.0 {
        return Err(Error::Parameter("singular weighted elliptic problem".into()));
    }
    let shift = -q.iter().zip(w).map(|(q, w)| q / w).sum::<f64>() / inv;
    q.iter_mut().for_each(|v| *v += shift);
    let mut c = grid.forward(&q);
    grid.differentiate_in_place(&mut c, 1);
    let back = grid.inverse(&c);
    let defect: Vec<f64> = back.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok((q, l2(&defect) / l2(b).max(1e-300)))
}

pub fn recover_control_ikk(traj: &Trajectory, p: &IKKParams) -> Result<(ControlField, RateValue)> {
    if traj.n() != p.n {
        return Err(Error::GridMismatch {
            left: traj.n(),
            right: p.n,
        });
    }
    let mut q = p.clone();
    q.epsilon = 0.0;
    let solver = IkkSolver::new(&q)?;
    let grid = SpectralGrid::new(p.n)?;
    let g23 = p.gamma.powf(2.0 / 3.0);
    let s = slices(traj)?;
    let dx = 1.0 / p.n as f64;
    let mut rate = RateValue {
        value: 0.0,
        residual_norm: 0.0,
        mean_removed: 0.0,
    };
    let mut controls = Vec::with_capacity(s.times.len());
    for (m, (state, dudt)) in s.states.iter().zip(&s.rates).enumerate() {
        let w: Vec<f64> = state.iter().map(|u| 1.0 - g23 * u * u).collect();
        if let Some((index, &weight)) = w.iter().enumerate().find(|(_, w)| !(**w >= WEIGHT_FLOOR)) {
            return Err(Error::WeightBelowFloor {
                time: s.times[m],
                index,
                weight,
            });
        }
        let mut r: Vec<f64> = dudt.iter().zip(solver.drift(state)).map(|(d, f)| d - f).collect();
        rate.mean_removed = rate.mean_removed.max(centered(&mut r)?);
        let b: Vec<f64> = r.iter().map(|r| -r / SQRT_2).collect();
        let (flux, residual) = weighted_flux(&grid, &w, &b)?;
        rate.residual_norm = rate.residual_norm.max(residual);
        let density: f64 = flux.iter().zip(&w).map(|(q, w)| q * q / w).sum::<f64>() * dx;
        rate.value += 0.5 * s.widths[m] * density;
        controls.push(Field::new(flux.iter().zip(&w).map(|(q, w)| q / w.sqrt()).collect())?);
    }
    Ok((ControlField::new(s.times, controls)?, rate))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityRow {
    pub m: u32,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// Largest per-slice mean removed from `g` before solving.
    pub mean_removed: f64,
}

/// Samples per oscillation period when building `g_m`.
const SAMPLES_PER_PERIOD: usize = 32;

/// `g_m(t) = g(t) + sin(2 pi m t) h` sampled on a grid fine enough for the
/// oscillation.
pub fn oscillating_control(g: &ControlField, h: &Field, m: u32) -> Result<ControlField> {
    if g.n() != h.n() {
        return Err(Error::GridMismatch {
            left: g.n(),
            right: h.n(),
        });
    }
    let (t0, t1) = (g.times()[0], *g.times().last().unwrap());
    let count = (g.times().len() - 1).max(SAMPLES_PER_PERIOD * m as usize * ((t1 - t0).ceil() as usize).max(1));
    let times: Vec<f64> = (0..=count).map(|i| t0 + (t1 - t0) * i as f64 / count as f64).collect();
    let slices = times
        .iter()
        .map(|&t| g.at(t).lincomb(1.0, h, (2.0 * PI * m as f64 * t).sin()))
        .collect::<Result<Vec<_>>>()?;
    ControlField::new(times, slices)
}

/// Distances `||u_m - u||_{L^2 L^2}` between Cahn-Hilliard skeleton solves
/// driven by `g_m = g + sin(2 pi m t) h` and by `g`.
pub fn stability_experiment(
    u0: &Field,
    g: &ControlField,
    h: &Field,
    m_values: &[u32],
    p: &CHParams,
) -> Result<StabilityReport> {
    if m_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Parameter("m values must be increasing".into()));
    }
    let mut g = g.clone();
    let mean_removed = g.project_mean_zero();
    let reference = solve_skeleton_ch(u0, &g, p)?;
    let rows = m_values
        .iter()
        .map(|&m| {
            let gm = oscillating_control(&g, h, m)?;
            let um = solve_skeleton_ch(u0, &gm, p)?;
            Ok(StabilityRow {
                m,
                distance: um.l2l2_distance(&reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityReport { rows, mean_removed })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaRow {
    pub gamma: f64,
    pub distance: f64,
    pub rate_ikk: f64,
    pub rate_ch: f64,
    pub relative_gap: f64,
    pub residual_ikk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaReport {
    pub rows: Vec<GammaRow>,
    pub rate_ch: RateValue,
    pub mean_removed: f64,
}

/// Recovery sequence `u_gamma = solve_skeleton_ikk(u_{gamma,0}, g)` against
/// the Cahn-Hilliard skeleton `u = solve_skeleton_ch(u0, g)`.
///
/// `ch.d` is taken from the Kac kernel when unset, so both models share the
/// surface tension. Both solves must use the same snapshot times.
pub fn gamma_convergence_experiment(
    template: &IKKParams,
    ch: &CHParams,
    u0: &Field,
    initial: impl Fn(f64) -> Result<Field>,
    g: &ControlField,
    gammas: &[f64],
) -> Result<GammaReport> {
    let mut ch = ch.clone();
    if ch.d.is_none() {
        ch.d = Some(IkkSolver::new(template)?.surface_tension());
    }
    let mut g = g.clone();
    let mean_removed = g.project_mean_zero();
    let u = solve_skeleton_ch(u0, &g, &ch)?;
    let (_, rate_ch) = recover_control_ch(&u, &ch)?;
    let rows = gammas
        .iter()
        .map(|&gamma| {
            let mut p = template.clone();
            p.gamma = gamma;
            let ug = solve_skeleton_ikk(&initial(gamma)?, &g, &p)?;
            let (_, rate) = recover_control_ikk(&ug, &p)?;
            Ok(GammaRow {
                gamma,
                distance: ug.l2l2_distance(&u)?,
                rate_ikk: rate.value,
                rate_ch: rate_ch.value,
                relative_gap: (rate.value - rate_ch.value).abs() / rate_ch.value.max(1e-8),
                residual_ikk: rate.residual_norm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GammaReport {
        rows,
        rate_ch,
        mean_removed,
    })
}
