//! The rescaled fluctuating Ising-Kac-Kawasaki equation in Ito form,
//!
//! ```text
//! du = g^{-2/3} u'' - g^{-2/3} c ( w J_g * u' )' dt
//!      + 4 eps ( F1 sigma'(w)^2 g^{4/3} u^2 u' )' dt
//!      - sqrt(2 eps) ( sigma(w) dW_delta )'
//!      - sqrt(2) ( s(w) h )' dt,          w = 1 - g^{2/3} u^2,  c = 1 + a g^{2/3},
//! ```
//!
//! with an optional deterministic control `h`. The nonlocal linear part is
//! diagonal in Fourier space and is integrated exactly (exponential Euler);
//! the cubic Kac transport, the Ito correction, the control and the noise are
//! explicit.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::entropy::DiffusionCoefficient;
use crate::error::{Error, Result};
use crate::grid::{check_grid_size, sobolev_norm_coeffs, Field, SpectralGrid};
use crate::kernel::{make_bump_kernel, moment, rescale, spectrally_under_resolved, Kernel, DEFAULT_KERNEL_RADIUS};
use crate::noise::{
    assemble_increment, mode_count, mode_multipliers, MollifierSpec, NoiseStream, DEFAULT_MOLLIFIER_RADIUS,
};
use crate::trajectory::{trapezoid_weights, ClampEvent, ControlField, StepReport, Trajectory};

pub(crate) fn default_one() -> f64 {
    1.0
}
pub(crate) fn default_margin() -> f64 {
    1e-6
}
pub(crate) fn default_snapshots() -> usize {
    50
}
pub(crate) fn default_kernel_radius() -> f64 {
    DEFAULT_KERNEL_RADIUS
}
pub(crate) fn default_mollifier_radius() -> f64 {
    DEFAULT_MOLLIFIER_RADIUS
}
pub(crate) fn default_true() -> bool {
    true
}
pub(crate) fn default_c_stab() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IKKParams {
    pub gamma: f64,
    pub delta: f64,
    pub a: f64,
    /// Noise intensity.
    #[serde(default = "default_one")]
    pub epsilon: f64,
    #[serde(default)]
    pub coefficient: DiffusionCoefficient,
    /// Time step; `None` uses the stability rule.
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_final: f64,
    pub n: usize,
    /// Noise truncation; `None` means `N/3`.
    #[serde(default)]
    pub k_trunc: Option<usize>,
    /// Clamp margin relative to `gamma^{-1/3}`.
    #[serde(default = "default_margin")]
    pub clamp_margin: f64,
    /// Number of snapshot intervals on `[0, t_final]`.
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_kernel_radius")]
    pub kernel_radius: f64,
    #[serde(default = "default_mollifier_radius")]
    pub mollifier_radius: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
    #[serde(default = "default_c_stab")]
    pub c_stab: f64,
}

impl IKKParams {
    pub fn new(gamma: f64, delta: f64, a: f64, t_final: f64, n: usize) -> Self {
        Self {
            gamma,
            delta,
            a,
            epsilon: 1.0,
            coefficient: DiffusionCoefficient::Smooth,
            dt: None,
            t_final,
            n,
            k_trunc: None,
            clamp_margin: default_margin(),
            snapshots: default_snapshots(),
            kernel_radius: DEFAULT_KERNEL_RADIUS,
            mollifier_radius: DEFAULT_MOLLIFIER_RADIUS,
            dealias: true,
            c_stab: default_c_stab(),
        }
    }

    pub fn truncation(&self) -> usize {
        self.k_trunc.unwrap_or(self.n / 3)
    }

    pub fn bound(&self) -> f64 {
        self.gamma.powf(-1.0 / 3.0)
    }

    pub fn mollifier(&self) -> MollifierSpec {
        MollifierSpec {
            delta: self.delta,
            base_radius: self.mollifier_radius,
        }
    }

    /// `1 + a gamma^{2/3}`.
    pub fn kac_factor(&self) -> f64 {
        1.0 + self.a * self.gamma.powf(2.0 / 3.0)
    }

    pub fn validate(&self) -> Result<()> {
        check_grid_size(self.n)?;
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Parameter(format!("gamma {} outside (0, 1]", self.gamma)));
        }
        if !(self.delta > 0.0) || !self.a.is_finite() || !(self.epsilon >= 0.0) {
            return Err(Error::Parameter(format!(
                "need delta > 0, finite a, epsilon >= 0 (got {}, {}, {})",
                self.delta, self.a, self.epsilon
            )));
        }
        if !(self.t_final > 0.0) || self.snapshots == 0 {
            return Err(Error::Parameter("need t_final > 0 and at least one snapshot".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Parameter(format!("dt {dt} must be > 0")));
            }
        }
        if !(self.clamp_margin > 0.0 && self.clamp_margin < 0.5) {
            return Err(Error::Parameter(format!(
                "clamp margin {} outside (0, 1/2)",
                self.clamp_margin
            )));
        }
        if !(self.c_stab > 0.0) {
            return Err(Error::Parameter("c_stab must be > 0".into()));
        }
        if self.truncation() > self.n / 2 {
            return Err(Error::Parameter(format!(
                "truncation {} exceeds N/2",
                self.truncation()
            )));
        }
        self.coefficient.validate()
    }

    /// `c_stab dx^2 / (1 + c gamma^{-2/3})`: the explicit Kac transport with
    /// `|u|` at the admissibility bound.
    pub fn default_dt(&self) -> f64 {
        let dx = 1.0 / self.n as f64;
        let transport = self.kac_factor().abs() * self.gamma.powf(-2.0 / 3.0);
        self.c_stab * dx * dx / (1.0 + transport)
    }
}

/// Uniform steps with snapshots at `t_final * m / snapshots`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
    pub per_snapshot: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, snapshots: usize, dt_max: f64) -> Self {
        let per_snapshot = (t_final / (snapshots as f64 * dt_max) - 1e-9).ceil().max(1.0) as usize;
        let steps = per_snapshot * snapshots;
        Self {
            dt: t_final / steps as f64,
            steps,
            per_snapshot,
        }
    }
}

/// How the control enters: `sigma(w) h` for the stochastic control
/// equation, `sqrt(w) h` for the skeleton equation. `Mobility` enters as
/// `w h`, i.e. the skeleton control `sqrt(w) h` with `h` rescaled by
/// `sqrt(w)` along the solution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlCoupling {
    Coefficient,
    SquareRoot,
    Mobility,
}

/// Mass-preserving clamp into `[-limit, limit]`.
///
/// Mass cut from overshooting points is spread over the remaining points in
/// proportion to their headroom. Returns the number of clamped points.
pub(crate) fn clamp_conserving(
    u: &mut [f64],
    limit: f64,
    step: usize,
    time: f64,
    events: &mut Vec<ClampEvent>,
) -> Result<usize> {
    let mut excess = 0.0;
    let mut count = 0;
    for (index, v) in u.iter_mut().enumerate() {
        let c = v.clamp(-limit, limit);
        if c != *v {
            let magnitude = *v - c;
            excess += magnitude;
            events.push(ClampEvent {
                step,
                time,
                index,
                magnitude,
            });
            *v = c;
            count += 1;
        }
    }
    if excess != 0.0 {
        let up = excess > 0.0;
        let room: f64 = u.iter().map(|v| if up { limit - v } else { limit + v }).sum();
        if room < excess.abs() {
            return Err(Error::Parameter(format!(
                "mean {} cannot be represented inside the admissible interval",
                u.iter().sum::<f64>() / u.len() as f64
            )));
        }
        let scale = excess / room;
        for v in u.iter_mut() {
            let cap = if up { limit - *v } else { limit + *v };
            *v += scale * cap;
        }
    }
    Ok(count)
}

pub(crate) fn etd_coefficients(lin: &[f64], dt: f64) -> (Vec<f64>, Vec<f64>) {
    let e: Vec<f64> = lin.iter().map(|l| (l * dt).exp()).collect();
    let phi = lin
        .iter()
        .zip(&e)
        .map(|(l, e)| {
            let z = l * dt;
            if z.abs() < 1e-8 {
                dt * (1.0 + 0.5 * z)
            } else {
                (e - 1.0) / l
            }
        })
        .collect();
    (e, phi)
}

/// Explicit diffusion below this CFL ratio needs no stabilization.
const STABLE_CFL: f64 = 0.5;
const STAB_BASE: f64 = 1.0 / 64.0;

pub(crate) type StabilizerCache = Vec<Option<(Vec<f64>, Vec<f64>)>>;

/// Picks the stabilizing diffusion `S` for one step and the matching
/// exponential coefficients.
///
/// When the explicit diffusion is stiff at the current state, `S u''` is
/// moved into the exact part and subtracted explicitly; with
/// `S >= mu_max / 2` the step is stable for any `dt`. `S` is rounded up to a
/// power of two so coefficient tables can be cached in `levels`.
pub(crate) fn stabilized_tables<'a>(
    lin: &[f64],
    kappa: &[f64],
    dt: f64,
    plain: (&'a [f64], &'a [f64]),
    cfl: f64,
    diffusivity: f64,
    levels: &'a mut StabilizerCache,
) -> (f64, &'a [f64], &'a [f64]) {
    if cfl <= STABLE_CFL {
        return (0.0, plain.0, plain.1);
    }
    let j = (0.5 * diffusivity / STAB_BASE).log2().ceil().max(0.0) as usize;
    let s = STAB_BASE * (1u64 << j.min(62)) as f64;
    if levels.len() <= j {
        levels.resize(j + 1, None);
    }
    let entry = levels[j].get_or_insert_with(|| {
        let shifted: Vec<f64> = lin.iter().zip(kappa).map(|(l, k)| l - s * k * k).collect();
        etd_coefficients(&shifted, dt)
    });
    (s, &entry.0, &entry.1)
}

/// Buffers reused across steps.
struct Workspace {
    levels: StabilizerCache,
    uh: Vec<Complex64>,
    ch: Vec<Complex64>,
    work: Vec<Complex64>,
    du: Vec<f64>,
    jdu: Vec<f64>,
    flux: Vec<f64>,
    nflux: Vec<f64>,
    gauss: Vec<f64>,
    dw: Vec<f64>,
    ctrl: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, modes: usize) -> Self {
        let z = Complex64::default();
        Self {
            levels: Vec::new(),
            uh: vec![z; n],
            ch: vec![z; n],
            work: vec![z; n],
            du: vec![0.0; n],
            jdu: vec![0.0; n],
            flux: vec![0.0; n],
            nflux: vec![0.0; n],
            gauss: vec![0.0; modes],
            dw: vec![0.0; n],
            ctrl: vec![0.0; n],
        }
    }
}

/// Precomputed operators for one parameter set.
#[derive(Debug, Clone)]
pub struct IkkSolver {
    params: IKKParams,
    grid: SpectralGrid,
    kernel: Kernel,
    jhat: Vec<f64>,
    lin: Vec<f64>,
    e: Vec<f64>,
    phi: Vec<f64>,
    mult: Vec<f64>,
    f1: f64,
    time: TimeGrid,
    surface_tension: f64,
}

impl IkkSolver {
    pub fn new(p: &IKKParams) -> Result<Self> {
        p.validate()?;
        let base = make_bump_kernel(p.kernel_radius, p.n)?;
        let surface_tension = moment(&base, 2)?;
        let kernel = rescale(&base, p.gamma)?;
        let grid = SpectralGrid::new(p.n)?;
        let jhat = kernel.fourier()?;
        let g23 = p.gamma.powf(2.0 / 3.0);
        let c = p.kac_factor();
        let lin: Vec<f64> = grid
            .kappa()
            .iter()
            .zip(&jhat)
            .map(|(k, j)| -k * k * (1.0 - c * j) / g23)
            .collect();
        let mult = mode_multipliers(&p.mollifier(), p.n, p.truncation())?;
        let f1 = mult[0] * mult[0] + 2.0 * mult[1..].iter().map(|m| m * m).sum::<f64>();
        let time = TimeGrid::new(p.t_final, p.snapshots, p.dt.unwrap_or_else(|| p.default_dt()));
        let (e, phi) = etd_coefficients(&lin, time.dt);
        Ok(Self {
            params: p.clone(),
            grid,
            kernel,
            jhat,
            lin,
            e,
            phi,
            mult,
            f1,
            time,
            surface_tension,
        })
    }

    pub fn params(&self) -> &IKKParams {
        &self.params
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn dt(&self) -> f64 {
        self.time.dt
    }

    pub fn steps(&self) -> usize {
        self.time.steps
    }

    /// `F1 = sum_j |f_j|^2` of the truncated noise.
    pub fn f1(&self) -> f64 {
        self.f1
    }

    /// Second moment `D` of the unscaled kernel on this grid.
    pub fn surface_tension(&self) -> f64 {
        self.surface_tension
    }

    pub fn multipliers(&self) -> &[f64] {
        &self.mult
    }

    /// Linear symbol per FFT index.
    pub fn symbol(&self) -> &[f64] {
        &self.lin
    }

    fn stabilizer<'a>(
        &'a self,
        cfl: f64,
        diffusivity: f64,
        levels: &'a mut StabilizerCache,
    ) -> (f64, &'a [f64], &'a [f64]) {
        stabilized_tables(
            &self.lin,
            self.grid.kappa(),
            self.time.dt,
            (&self.e, &self.phi),
            cfl,
            diffusivity,
            levels,
        )
    }

    fn limit(&self) -> f64 {
        self.params.bound() * (1.0 - self.params.clamp_margin)
    }

    /// One explicit/exponential step. `dw` is the physical noise increment,
    /// `ctrl` the control slice at the step midpoint.
    #[allow(clippy::too_many_arguments)]
    fn advance(
        &self,
        u: &mut [f64],
        dw: Option<&[f64]>,
        ctrl: Option<(&[f64], ControlCoupling)>,
        ws: &mut Workspace,
        step: usize,
        time: f64,
        events: &mut Vec<ClampEvent>,
    ) -> Result<StepReport> {
        let p = &self.params;
        let grid = &self.grid;
        let n = p.n;
        let g23 = p.gamma.powf(2.0 / 3.0);
        let g43 = g23 * g23;
        let c = p.kac_factor();
        let corr_scale = 4.0 * p.epsilon * self.f1 * g43;
        let noise_scale = -(2.0 * p.epsilon).sqrt();
        let dt = self.time.dt;

        grid.forward_into(u, &mut ws.uh);
        for (idx, (d, u)) in ws.ch.iter_mut().zip(&ws.uh).enumerate() {
            *d = if grid.is_nyquist(idx) {
                Complex64::default()
            } else {
                u * Complex64::new(0.0, grid.kappa()[idx])
            };
        }
        grid.inverse_into(&ws.ch, &mut ws.work, &mut ws.du);
        for (d, j) in ws.ch.iter_mut().zip(&self.jhat) {
            *d *= *j;
        }
        grid.inverse_into(&ws.ch, &mut ws.work, &mut ws.jdu);

        let mut rep = StepReport::default();
        let mut diffusivity = 0.0_f64;
        for i in 0..n {
            let v = u[i];
            let v2 = v * v;
            let w = (1.0 - g23 * v2).max(0.0);
            let transport = c * v2 * ws.jdu[i];
            let sp = p.coefficient.derivative(w);
            let corr_coeff = corr_scale * sp * sp * v2;
            let correction = corr_coeff * ws.du[i];
            let control = match ctrl {
                Some((g, ControlCoupling::Coefficient)) => -std::f64::consts::SQRT_2 * p.coefficient.value(w) * g[i],
                Some((g, ControlCoupling::SquareRoot)) => -std::f64::consts::SQRT_2 * w.sqrt() * g[i],
                Some((g, ControlCoupling::Mobility)) => -std::f64::consts::SQRT_2 * w * g[i],
                None => 0.0,
            };
            ws.flux[i] = transport + correction + control;
            ws.nflux[i] = match dw {
                Some(dw) => noise_scale * p.coefficient.value(w) * dw[i],
                None => 0.0,
            };
            rep.transport = rep.transport.max(transport.abs());
            rep.correction = rep.correction.max(correction.abs());
            rep.control = rep.control.max(control.abs());
            rep.noise = rep.noise.max(ws.nflux[i].abs());
            diffusivity = diffusivity.max(c.abs() * v2 + corr_coeff);
        }
        let kc = if p.dealias {
            grid.kappa()[grid.dealias_cutoff() as usize]
        } else {
            grid.kappa()[n / 2 - 1]
        };
        rep.cfl_ratio = 0.5 * dt * kc * kc * diffusivity;

        grid.forward_into(&ws.flux, &mut ws.ch);
        if p.dealias {
            grid.dealias_in_place(&mut ws.ch);
        }
        grid.differentiate_in_place(&mut ws.ch, 1);
        let (stab, e, phi) = self.stabilizer(rep.cfl_ratio, diffusivity, &mut ws.levels);
        for i in 0..n {
            let k2 = grid.kappa()[i] * grid.kappa()[i];
            ws.uh[i] = e[i] * ws.uh[i] + phi[i] * (ws.ch[i] + stab * k2 * ws.uh[i]);
        }
        if dw.is_some() {
            grid.forward_into(&ws.nflux, &mut ws.ch);
            if p.dealias {
                grid.dealias_in_place(&mut ws.ch);
            }
            grid.differentiate_in_place(&mut ws.ch, 1);
            // the stabilizer is part of the deterministic split only
            for i in 0..n {
                ws.uh[i] += self.e[i] * ws.ch[i];
            }
        }
        grid.inverse_into(&ws.uh, &mut ws.work, u);
        if let Some((index, value)) = u.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value: *value });
        }
        rep.clamp_count = clamp_conserving(u, self.limit(), step, time + dt, events)?;
        rep.max_abs = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        Ok(rep)
    }

    /// Deterministic drift at `u` without noise or control: the exact linear
    /// part plus the divergence of the Kac transport and the Ito correction.
    pub fn drift(&self, u: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let grid = &self.grid;
        let g23 = p.gamma.powf(2.0 / 3.0);
        let c = p.kac_factor();
        let corr_scale = 4.0 * p.epsilon * self.f1 * g23 * g23;
        let uh = grid.forward(u);
        let mut d = uh.clone();
        grid.differentiate_in_place(&mut d, 1);
        let du = grid.inverse(&d);
        for (x, j) in d.iter_mut().zip(&self.jhat) {
            *x *= *j;
        }
        let jdu = grid.inverse(&d);
        let flux: Vec<f64> = (0..p.n)
            .map(|i| {
                let v2 = u[i] * u[i];
                let sp = p.coefficient.derivative((1.0 - g23 * v2).max(0.0));
                c * v2 * jdu[i] + corr_scale * sp * sp * v2 * du[i]
            })
            .collect();
        let mut fh = grid.forward(&flux);
        if p.dealias {
            grid.dealias_in_place(&mut fh);
        }
        grid.differentiate_in_place(&mut fh, 1);
        for ((f, u), l) in fh.iter_mut().zip(&uh).zip(&self.lin) {
            *f += u * *l;
        }
        grid.inverse(&fh)
    }

    /// Runs the solver from `u0`. Without a stream the noise is off; the
    /// control, if any, is sampled at step midpoints.
    pub fn run(
        &self,
        u0: &Field,
        stream: Option<&NoiseStream>,
        control: Option<(&ControlField, ControlCoupling)>,
    ) -> Result<Trajectory> {
        let p = &self.params;
        if u0.n() != p.n {
            return Err(Error::GridMismatch {
                left: u0.n(),
                right: p.n,
            });
        }
        crate::entropy::check_admissible(u0, p.bound())?;
        if let Some((g, _)) = control {
            if g.n() != p.n {
                return Err(Error::GridMismatch {
                    left: g.n(),
                    right: p.n,
                });
            }
        }
        let k_trunc = p.truncation();
        let noisy = stream.is_some() && p.epsilon > 0.0;
        let mut ws = Workspace::new(p.n, mode_count(k_trunc));
        let mut meta = serde_json::json!({ "model": "ikk", "params": p, "dt": self.time.dt });
        if let Some(s) = stream {
            meta["seed"] = s.seed.into();
            meta["replicate"] = s.replicate.into();
        }
        let mut traj = Trajectory::new(meta);
        let mut u = u0.values().to_vec();
        traj.push(0.0, u0.clone())?;
        let dt = self.time.dt;
        let mut spec = vec![Complex64::default(); p.n];
        for step in 0..self.time.steps {
            let t = step as f64 * dt;
            if noisy {
                let s = stream.unwrap();
                s.fill_gaussians(step as u64, &mut ws.gauss);
                assemble_increment(&ws.gauss, dt.sqrt(), Some(&self.mult), &mut spec);
                self.grid.inverse_into(&spec, &mut ws.work, &mut ws.dw);
            }
            let ctrl = control.map(|(g, c)| {
                g.sample_into(t + 0.5 * dt, &mut ws.ctrl);
                c
            });
            let dw = std::mem::take(&mut ws.dw);
            let ctrl_buf = std::mem::take(&mut ws.ctrl);
            let before = u.clone();
            let res = self.advance(
                &mut u,
                noisy.then_some(&dw[..]),
                ctrl.map(|c| (&ctrl_buf[..], c)),
                &mut ws,
                step,
                t,
                &mut traj.events,
            );
            ws.dw = dw;
            ws.ctrl = ctrl_buf;
            match res {
                Ok(rep) => traj.max_cfl = traj.max_cfl.max(rep.cfl_ratio),
                Err(e) => {
                    if t > *traj.times().last().unwrap() {
                        traj.push(t, Field::from_raw(before))?;
                    }
                    return Err(Error::Abort {
                        step,
                        time: t,
                        reason: e.to_string(),
                        last_good: Box::new(traj),
                    });
                }
            }
            if (step + 1) % self.time.per_snapshot == 0 {
                let m = (step + 1) / self.time.per_snapshot;
                traj.push(p.t_final * m as f64 / p.snapshots as f64, Field::from_raw(u.clone()))?;
            }
        }
        Ok(traj)
    }
}

/// `-gamma^{-2/3} (2 pi k)^2 [1 - (1 + a gamma^{2/3}) J_gamma^(k)]`.
pub fn linear_symbol(k: i64, p: &IKKParams, j_gamma: &Kernel) -> Result<f64> {
    let n = j_gamma.n();
    if k.unsigned_abs() as usize > n / 2 {
        return Err(Error::Parameter(format!("wavenumber {k} exceeds N/2")));
    }
    let jhat = j_gamma.fourier()?;
    let idx = k.rem_euclid(n as i64) as usize;
    let kap = 2.0 * std::f64::consts::PI * k as f64;
    Ok(-kap * kap * (1.0 - p.kac_factor() * jhat[idx]) / p.gamma.powf(2.0 / 3.0))
}

/// One step from `u` with a supplied physical noise increment `dW_delta`
/// and optional control slice (entering as `sigma(w) h`).
pub fn step(
    u: &Field,
    p: &IKKParams,
    noise_increment: &Field,
    control_slice: Option<&Field>,
) -> Result<(Field, StepReport)> {
    let solver = IkkSolver::new(p)?;
    crate::entropy::check_admissible(u, p.bound())?;
    let mut ws = Workspace::new(p.n, mode_count(p.truncation()));
    let mut v = u.values().to_vec();
    let mut events = Vec::new();
    let rep = solver.advance(
        &mut v,
        Some(noise_increment.values()),
        control_slice.map(|g| (g.values(), ControlCoupling::Coefficient)),
        &mut ws,
        0,
        0.0,
        &mut events,
    )?;
    Ok((Field::new(v)?, rep))
}

pub fn simulate(p: &IKKParams, u0: &Field, stream: &NoiseStream, control: Option<&ControlField>) -> Result<Trajectory> {
    IkkSolver::new(p)?.run(u0, Some(stream), control.map(|g| (g, ControlCoupling::Coefficient)))
}

#[derive(Debug, Clone)]
pub struct Remainders {
    pub r1: Field,
    pub r2: Field,
    pub r3: Field,
    pub r4: Field,
    pub under_resolved: bool,
}

/// The four remainder fields of the rewrite form at one time.
pub fn remainder_fields(u: &Field, p: &IKKParams, j_gamma: &Kernel) -> Result<Remainders> {
    p.validate()?;
    crate::grid::same_grid(u, j_gamma.samples())?;
    let d = moment(&make_bump_kernel(p.kernel_radius, u.n())?, 2)?;
    let mult = mode_multipliers(&p.mollifier(), p.n, p.truncation())?;
    let f1 = mult[0] * mult[0] + 2.0 * mult[1..].iter().map(|m| m * m).sum::<f64>();
    remainders_with(u, p, &j_gamma.fourier()?, d, f1)
}

fn remainders_with(u: &Field, p: &IKKParams, jhat: &[f64], d: f64, f1: f64) -> Result<Remainders> {
    let n = u.n();
    let grid = SpectralGrid::new(n)?;
    let g23 = p.gamma.powf(2.0 / 3.0);
    let c = p.kac_factor();
    let uh = grid.forward(u.values());
    let under_resolved = spectrally_under_resolved(&grid, &uh);
    let deriv = |c: &[Complex64], order: u32| {
        let mut c = c.to_vec();
        grid.differentiate_in_place(&mut c, order);
        c
    };
    let du_h = deriv(&uh, 1);
    let du = grid.inverse(&du_h);
    let jdu_h: Vec<Complex64> = du_h.iter().zip(jhat).map(|(a, j)| a * j).collect();
    let jdu = grid.inverse(&jdu_h);

    let cube: Vec<f64> = u.values().iter().map(|v| v * v * v).collect();
    let d4 = deriv(&uh, 4);
    let cube2 = deriv(&grid.forward(&cube), 2);
    let r1h: Vec<Complex64> = d4
        .iter()
        .zip(&cube2)
        .map(|(a, b)| -0.5 * d * p.a * g23 * a + p.a / 3.0 * g23 * b)
        .collect();

    let q2: Vec<f64> = u
        .values()
        .iter()
        .zip(du.iter().zip(&jdu))
        .map(|(v, (d, j))| v * v * (j - d))
        .collect();
    let r2h: Vec<Complex64> = deriv(&grid.forward(&q2), 1).iter().map(|z| z * c).collect();

    let mut defect = vec![Complex64::default(); n];
    for (idx, z) in defect.iter_mut().enumerate() {
        let k = grid.kappa()[idx];
        *z = (jhat[idx] - 1.0 + g23 * 0.5 * d * k * k) * du_h[idx];
        if grid.is_nyquist(idx) {
            *z = Complex64::default();
        }
    }
    let r3h: Vec<Complex64> = deriv(&defect, 1).iter().map(|z| -z * c / g23).collect();

    let q4: Vec<f64> = u
        .values()
        .iter()
        .zip(&du)
        .map(|(v, d)| {
            let sp = p.coefficient.derivative(1.0 - g23 * v * v);
            4.0 * f1 * sp * sp * g23 * g23 * v * v * d
        })
        .collect();
    let r4h = deriv(&grid.forward(&q4), 1);

    Ok(Remainders {
        r1: Field::new(grid.inverse(&r1h))?,
        r2: Field::new(grid.inverse(&r2h))?,
        r3: Field::new(grid.inverse(&r3h))?,
        r4: Field::new(grid.inverse(&r4h))?,
        under_resolved,
    })
}

/// `int_0^T ||R_i(s)||_{H^{-beta}} ds` for each remainder, trapezoid over
/// the snapshots.
pub fn remainder_norms(traj: &Trajectory, p: &IKKParams, beta: f64) -> Result<[f64; 4]> {
    if traj.len() < 2 {
        return Err(Error::Parameter("need at least two snapshots".into()));
    }
    let solver = IkkSolver::new(&IKKParams {
        n: traj.n(),
        ..p.clone()
    })?;
    let grid = SpectralGrid::new(traj.n())?;
    let w = trapezoid_weights(traj.times());
    let mut out = [0.0; 4];
    for (wi, u) in w.iter().zip(traj.fields()) {
        let r = remainders_with(u, p, &solver.jhat, solver.surface_tension, solver.f1)?;
        for (o, f) in out.iter_mut().zip([&r.r1, &r.r2, &r.r3, &r.r4]) {
            *o += wi * sobolev_norm_coeffs(&grid, &grid.forward(f.values()), -beta);
        }
    }
    Ok(out)
}

/// Discrete `W^{alpha,2}([0,T]; H^{-beta})` norm over the snapshots.
pub fn time_regularity_norm(traj: &Trajectory, alpha: f64, beta: f64) -> Result<f64> {
    if traj.len() < 4 {
        return Err(Error::Parameter(format!(
            "time regularity needs at least 4 snapshots, got {}",
            traj.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 0.5) || !(beta > 0.0) {
        return Err(Error::Parameter(format!(
            "need alpha in (0, 1/2), beta > 0 (got {alpha}, {beta})"
        )));
    }
    let grid = SpectralGrid::new(traj.n())?;
    let weight: Vec<f64> = grid.kappa().iter().map(|k| (1.0 + k * k).powf(-beta)).collect();
    let spectra: Vec<Vec<Complex64>> = traj.fields().iter().map(|f| grid.forward(f.values())).collect();
    let w = trapezoid_weights(traj.times());
    let t = traj.times();
    let mut l2 = 0.0;
    let mut gag = 0.0;
    for m in 0..spectra.len() {
        l2 += w[m]
            * spectra[m]
                .iter()
                .zip(&weight)
                .map(|(c, q)| q * c.norm_sqr())
                .sum::<f64>();
        for k in 0..spectra.len() {
            if k == m {
                continue;
            }
            let d: f64 = spectra[m]
                .iter()
                .zip(&spectra[k])
                .zip(&weight)
                .map(|((a, b), q)| q * (a - b).norm_sqr())
                .sum();
            gag += d / (t[m] - t[k]).abs().powf(1.0 + 2.0 * alpha) * w[m] * w[k];
        }
    }
    Ok((l2 + gag).sqrt())
}
