//! Stochastic Cahn-Hilliard equation
//!
//! ```text
//! du = ( V'(u) - (D/2) u'' )'' dt - sqrt(2) (dW)' - sqrt(2) h' dt,   V(u) = u^4/4 - a u^2/2,
//! ```
//!
//! driven by truncated white noise, mollified noise, or nothing, with an
//! optional deterministic control `h`. The biharmonic part is integrated
//! exactly; `(V'(u))''` and the noise are explicit. The linear stochastic
//! part can be split off and advanced by exact Ornstein-Uhlenbeck updates.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grid_size, Field, SpectralGrid};
use crate::ikk::{
    default_c_stab, default_kernel_radius, default_snapshots, default_true, etd_coefficients, stabilized_tables,
    StabilizerCache, TimeGrid,
};
use crate::kernel::surface_tension;
use crate::noise::{
    assemble_increment, mode_count, mode_multipliers, MollifierSpec, NoiseStream, DEFAULT_MOLLIFIER_RADIUS,
};
use crate::trajectory::{ControlField, Trajectory};

fn default_mollifier_radius() -> f64 {
    DEFAULT_MOLLIFIER_RADIUS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseMode {
    Off,
    White,
    Mollified {
        delta: f64,
        #[serde(default = "default_mollifier_radius")]
        base_radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChScheme {
    /// Exponential Euler on the full equation.
    #[default]
    SemiImplicit,
    /// Exact OU updates for the linear stochastic part plus exponential
    /// Euler for the remainder; returns their sum.
    OuSplitting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CHParams {
    pub a: f64,
    /// Surface tension; `None` takes the second moment of the bump kernel.
    #[serde(default)]
    pub d: Option<f64>,
    pub noise: NoiseMode,
    #[serde(default)]
    pub scheme: ChScheme,
    #[serde(default)]
    pub dt: Option<f64>,
    pub t_final: f64,
    pub n: usize,
    #[serde(default)]
    pub k_trunc: Option<usize>,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    #[serde(default = "default_true")]
    pub dealias: bool,
    #[serde(default = "default_kernel_radius")]
    pub kernel_radius: f64,
    #[serde(default = "default_c_stab")]
    pub c_stab: f64,
}

impl CHParams {
    pub fn new(a: f64, noise: NoiseMode, t_final: f64, n: usize) -> Self {
        Self {
            a,
            d: None,
            noise,
            scheme: ChScheme::SemiImplicit,
            dt: None,
            t_final,
            n,
            k_trunc: None,
            snapshots: default_snapshots(),
            dealias: true,
            kernel_radius: default_kernel_radius(),
            c_stab: default_c_stab(),
        }
    }

    pub fn truncation(&self) -> usize {
        self.k_trunc.unwrap_or(self.n / 3)
    }

    pub fn surface_tension(&self) -> Result<f64> {
        match self.d {
            Some(d) => Ok(d),
            None => surface_tension(self.kernel_radius, self.n),
        }
    }

    /// `c_stab dx^2 / (1 + |a|)`.
    pub fn default_dt(&self) -> f64 {
        let dx = 1.0 / self.n as f64;
        self.c_stab * dx * dx / (1.0 + self.a.abs())
    }

    pub fn validate(&self) -> Result<()> {
        check_grid_size(self.n)?;
        if let Some(d) = self.d {
            if !(d > 0.0) {
                return Err(Error::Parameter(format!("surface tension {d} must be > 0")));
            }
        }
        if !self.a.is_finite() {
            return Err(Error::Parameter("a must be finite".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::Parameter(format!("dt {dt} must be > 0")));
            }
        }
        if !(self.t_final > 0.0) || self.snapshots == 0 {
            return Err(Error::Parameter("need t_final > 0 and at least one snapshot".into()));
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
        if let NoiseMode::Mollified { delta, base_radius } = self.noise {
            if !(delta > 0.0 && base_radius > 0.0) {
                return Err(Error::Parameter(
                    "mollified noise needs delta > 0 and radius > 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// Per-wavenumber noise multipliers `0..=K`, or `None` without noise.
    pub fn multipliers(&self) -> Result<Option<Vec<f64>>> {
        let k = self.truncation();
        Ok(match self.noise {
            NoiseMode::Off => None,
            NoiseMode::White => Some(vec![1.0; k + 1]),
            NoiseMode::Mollified { delta, base_radius } => {
                Some(mode_multipliers(&MollifierSpec { delta, base_radius }, self.n, k)?)
            }
        })
    }
}

/// `E(u) = integral (D/4) |u'|^2 + u^4/4 - a u^2/2 dx`.
pub fn free_energy(u: &Field, a: f64, d: f64) -> Result<f64> {
    let grid = SpectralGrid::new(u.n())?;
    let mut c = grid.forward(u.values());
    grid.differentiate_in_place(&mut c, 1);
    let du = grid.inverse(&c);
    let n = u.n() as f64;
    Ok(u.values()
        .iter()
        .zip(&du)
        .map(|(v, g)| 0.25 * d * g * g + 0.25 * v.powi(4) - 0.5 * a * v * v)
        .sum::<f64>()
        / n)
}

/// Biharmonic rate `(D/2) kappa^4`.
fn rate(kappa: f64, d: f64) -> f64 {
    0.5 * d * kappa.powi(4)
}

/// Standard deviation factor `sqrt((1 - exp(-2 lambda dt)) / (2 lambda))`.
fn ou_amplitude(lambda: f64, dt: f64) -> f64 {
    if lambda * dt < 1e-8 {
        dt.sqrt()
    } else {
        ((1.0 - (-2.0 * lambda * dt).exp()) / (2.0 * lambda)).sqrt()
    }
}

fn ou_update_with(z: Complex64, kappa: f64, lambda: f64, mult: f64, gaussian: Complex64, dt: f64) -> Complex64 {
    let decay = (-lambda * dt).exp();
    let kick = Complex64::new(0.0, -std::f64::consts::SQRT_2 * kappa * mult * ou_amplitude(lambda, dt));
    z * decay + kick * gaussian
}

/// Exact transition of one Fourier coefficient of `dz = -(D/2) z'''' dt - sqrt(2) (dW)'`.
///
/// `gaussian` is a standard complex normal (`E|g|^2 = 1`). The added
/// variance is `2 kappa^2 m_k^2 (1 - exp(-2 lambda dt)) / (2 lambda)`.
pub fn ou_mode_update(z_hat: Complex64, k: i64, p: &CHParams, gaussian: Complex64, dt: f64) -> Result<Complex64> {
    if k.unsigned_abs() as usize > p.truncation() {
        return Err(Error::Parameter(format!(
            "wavenumber {k} beyond truncation {}",
            p.truncation()
        )));
    }
    if k == 0 {
        return Ok(z_hat);
    }
    let ka = k.unsigned_abs() as usize;
    let mult = match p.noise {
        NoiseMode::Off => 0.0,
        NoiseMode::White => 1.0,
        NoiseMode::Mollified { delta, base_radius } => {
            mode_multipliers(&MollifierSpec { delta, base_radius }, p.n, ka)?[ka]
        }
    };
    let kappa = 2.0 * std::f64::consts::PI * k as f64;
    Ok(ou_update_with(
        z_hat,
        kappa,
        rate(kappa, p.surface_tension()?),
        mult,
        gaussian,
        dt,
    ))
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub z: Trajectory,
    pub w: Trajectory,
}

struct Workspace {
    levels: StabilizerCache,
    uh: Vec<Complex64>,
    zh: Vec<Complex64>,
    nl: Vec<Complex64>,
    work: Vec<Complex64>,
    phys: Vec<f64>,
    gauss: Vec<f64>,
    inc: Vec<Complex64>,
    ctrl: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, modes: usize) -> Self {
        let z = Complex64::default();
        Self {
            levels: Vec::new(),
            uh: vec![z; n],
            zh: vec![z; n],
            nl: vec![z; n],
            work: vec![z; n],
            phys: vec![0.0; n],
            gauss: vec![0.0; modes],
            inc: vec![z; n],
            ctrl: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChSolver {
    params: CHParams,
    grid: SpectralGrid,
    d: f64,
    lin: Vec<f64>,
    e: Vec<f64>,
    phi: Vec<f64>,
    mult: Option<Vec<f64>>,
    /// Exact OU decay and amplitude over one noise substep.
    ou_decay: Vec<f64>,
    ou_amp: Vec<f64>,
    substeps: usize,
    time: TimeGrid,
}

impl ChSolver {
    pub fn new(p: &CHParams) -> Result<Self> {
        p.validate()?;
        let d = p.surface_tension()?;
        let grid = SpectralGrid::new(p.n)?;
        let lin: Vec<f64> = grid.kappa().iter().map(|&k| -rate(k, d)).collect();
        let time = TimeGrid::new(p.t_final, p.snapshots, p.dt.unwrap_or_else(|| p.default_dt()));
        let (e, phi) = etd_coefficients(&lin, time.dt);
        let ou_amp = lin.iter().map(|l| ou_amplitude(-l, time.dt)).collect();
        Ok(Self {
            params: p.clone(),
            grid,
            d,
            lin,
            e: e.clone(),
            phi,
            mult: p.multipliers()?,
            ou_decay: e,
            ou_amp,
            substeps: 1,
            time,
        })
    }

    /// Builds each step's Brownian increment from `s` consecutive stream
    /// increments of length `dt / s`, so a run with `(dt, s)` shares its
    /// noise path with a run at `(dt / s, 1)`.
    pub fn with_noise_substeps(mut self, s: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Parameter("need at least one noise substep".into()));
        }
        let h = self.time.dt / s as f64;
        let rates: Vec<f64> = self.grid.kappa().iter().map(|&k| rate(k, self.d)).collect();
        self.ou_decay = rates.iter().map(|l| (-l * h).exp()).collect();
        self.ou_amp = rates.iter().map(|&l| ou_amplitude(l, h)).collect();
        self.substeps = s;
        Ok(self)
    }

    pub fn params(&self) -> &CHParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.time.dt
    }

    pub fn steps(&self) -> usize {
        self.time.steps
    }

    pub fn surface_tension(&self) -> f64 {
        self.d
    }

    fn meta(&self, stream: Option<&NoiseStream>, part: &str) -> serde_json::Value {
        let mut meta = serde_json::json!({
            "model": "ch", "part": part, "params": self.params, "dt": self.time.dt, "d": self.d,
        });
        if let Some(s) = stream {
            meta["seed"] = s.seed.into();
            meta["replicate"] = s.replicate.into();
        }
        meta
    }

    fn noisy(&self, stream: Option<&NoiseStream>) -> bool {
        stream.is_some() && self.mult.is_some()
    }

    /// Increment spectrum for one solver step: the normalized sum of the
    /// substep Gaussians, scaled by `scale`.
    fn increment(&self, stream: &NoiseStream, step: usize, scale: f64, ws: &mut Workspace) {
        if self.substeps == 1 {
            stream.fill_gaussians(step as u64, &mut ws.gauss);
        } else {
            let norm = (self.substeps as f64).sqrt();
            ws.gauss.iter_mut().for_each(|g| *g = 0.0);
            let mut sub = vec![0.0; ws.gauss.len()];
            for j in 0..self.substeps {
                stream.fill_gaussians((self.substeps * step + j) as u64, &mut sub);
                for (g, s) in ws.gauss.iter_mut().zip(&sub) {
                    *g += s / norm;
                }
            }
        }
        assemble_increment(&ws.gauss, scale, self.mult.as_deref(), &mut ws.inc);
    }

    /// Substep Gaussians as unit-variance spectral coefficients.
    fn substep_increment(&self, stream: &NoiseStream, sub: usize, ws: &mut Workspace) {
        stream.fill_gaussians(sub as u64, &mut ws.gauss);
        assemble_increment(&ws.gauss, 1.0, self.mult.as_deref(), &mut ws.inc);
    }

    /// `-kappa^2 FFT(u^3 - a u)` at physical state `ws.phys`, plus the
    /// control. Returns the largest explicit diffusivity `V''(u)`.
    fn explicit_term(&self, ws: &mut Workspace, ctrl: bool) -> f64 {
        let a = self.params.a;
        let mut diffusivity = 0.0_f64;
        for v in ws.phys.iter_mut() {
            diffusivity = diffusivity.max(3.0 * *v * *v - a);
            *v = *v * *v * *v - a * *v;
        }
        self.grid.forward_into(&ws.phys, &mut ws.nl);
        if self.params.dealias {
            self.grid.dealias_in_place(&mut ws.nl);
        }
        for (c, k) in ws.nl.iter_mut().zip(self.grid.kappa()) {
            *c *= -k * k;
        }
        if ctrl {
            self.grid.forward_into(&ws.ctrl, &mut ws.work);
            for (i, (c, g)) in ws.nl.iter_mut().zip(&ws.work).enumerate() {
                if !self.grid.is_nyquist(i) {
                    *c += Complex64::new(0.0, -std::f64::consts::SQRT_2 * self.grid.kappa()[i]) * g;
                }
            }
        }
        diffusivity
    }

    /// Exponential-Euler update of `ws.uh` with the explicit term in
    /// `ws.nl`, stabilized when `V''` is stiff at this step.
    fn deterministic_update(&self, ws: &mut Workspace, diffusivity: f64) {
        let kc = if self.params.dealias {
            self.grid.kappa()[self.grid.dealias_cutoff() as usize]
        } else {
            self.grid.kappa()[self.params.n / 2 - 1]
        };
        let cfl = 0.5 * self.time.dt * kc * kc * diffusivity;
        let (s, e, phi) = stabilized_tables(
            &self.lin,
            self.grid.kappa(),
            self.time.dt,
            (&self.e, &self.phi),
            cfl,
            diffusivity,
            &mut ws.levels,
        );
        for i in 0..self.params.n {
            let k2 = self.grid.kappa()[i] * self.grid.kappa()[i];
            ws.uh[i] = e[i] * ws.uh[i] + phi[i] * (ws.nl[i] + s * k2 * ws.uh[i]);
        }
    }

    fn check_finite(&self, v: &[f64]) -> Result<()> {
        match v.iter().enumerate().find(|(_, x)| !x.is_finite()) {
            Some((index, value)) => Err(Error::NonFinite { index, value: *value }),
            None => Ok(()),
        }
    }

    fn abort(&self, step: usize, time: f64, e: Error, mut traj: Trajectory, before: Vec<f64>) -> Error {
        if time > *traj.times().last().unwrap() {
            let _ = traj.push(time, Field::from_raw(before));
        }
        Error::Abort {
            step,
            time,
            reason: e.to_string(),
            last_good: Box::new(traj),
        }
    }

    /// `(V'(u) - (D/2) u'')''` with the same dealiasing as the stepper.
    pub fn drift(&self, u: &[f64]) -> Vec<f64> {
        let a = self.params.a;
        let cubic: Vec<f64> = u.iter().map(|v| v * v * v - a * v).collect();
        let mut c = self.grid.forward(&cubic);
        if self.params.dealias {
            self.grid.dealias_in_place(&mut c);
        }
        let uh = self.grid.forward(u);
        for ((c, u), (k, l)) in c.iter_mut().zip(&uh).zip(self.grid.kappa().iter().zip(&self.lin)) {
            *c = *c * (-k * k) + u * *l;
        }
        self.grid.inverse(&c)
    }

    /// Direct exponential-Euler run with optional noise and control.
    pub fn run(&self, u0: &Field, stream: Option<&NoiseStream>, control: Option<&ControlField>) -> Result<Trajectory> {
        self.check_inputs(u0, control)?;
        let p = &self.params;
        if p.scheme == ChScheme::OuSplitting {
            if control.is_some() {
                return Err(Error::Parameter("the OU splitting scheme takes no control".into()));
            }
            let dec = self.decompose(u0, stream)?;
            let mut out = dec.w.add(&dec.z)?;
            out.meta = self.meta(stream, "sum");
            return Ok(out);
        }
        let dt = self.time.dt;
        let noisy = self.noisy(stream);
        let mut ws = Workspace::new(p.n, mode_count(p.truncation()));
        let mut traj = Trajectory::new(self.meta(stream, "u"));
        traj.push(0.0, u0.clone())?;
        let mut u = u0.values().to_vec();
        self.grid.forward_into(&u, &mut ws.uh);
        for step in 0..self.time.steps {
            let t = step as f64 * dt;
            ws.phys.copy_from_slice(&u);
            if let Some(g) = control {
                g.sample_into(t + 0.5 * dt, &mut ws.ctrl);
            }
            let diffusivity = self.explicit_term(&mut ws, control.is_some());
            self.deterministic_update(&mut ws, diffusivity);
            if noisy {
                self.increment(stream.unwrap(), step, dt.sqrt(), &mut ws);
                for i in 0..p.n {
                    if !self.grid.is_nyquist(i) {
                        let k = self.grid.kappa()[i];
                        ws.uh[i] += self.e[i] * Complex64::new(0.0, -std::f64::consts::SQRT_2 * k) * ws.inc[i];
                    }
                }
            }
            let before = std::mem::take(&mut u);
            let mut next = vec![0.0; p.n];
            self.grid.inverse_into(&ws.uh, &mut ws.work, &mut next);
            if let Err(e) = self.check_finite(&next) {
                return Err(self.abort(step, t, e, traj, before));
            }
            u = next;
            if (step + 1) % self.time.per_snapshot == 0 {
                let m = (step + 1) / self.time.per_snapshot;
                traj.push(p.t_final * m as f64 / p.snapshots as f64, Field::from_raw(u.clone()))?;
            }
        }
        Ok(traj)
    }

    /// Splits `u = w + z`: `z` is the linear stochastic convolution advanced
    /// by exact OU updates, `w` the nonlinear remainder with `z` frozen at
    /// the start of each step.
    pub fn decompose(&self, u0: &Field, stream: Option<&NoiseStream>) -> Result<Decomposition> {
        self.check_inputs(u0, None)?;
        let p = &self.params;
        let dt = self.time.dt;
        let noisy = self.noisy(stream);
        let mut ws = Workspace::new(p.n, mode_count(p.truncation()));
        let mut zt = Trajectory::new(self.meta(stream, "z"));
        let mut wt = Trajectory::new(self.meta(stream, "w"));
        zt.push(0.0, Field::zeros(p.n)?)?;
        wt.push(0.0, u0.clone())?;
        let mut w = u0.values().to_vec();
        let mut z = vec![0.0; p.n];
        self.grid.forward_into(&w, &mut ws.uh);
        for step in 0..self.time.steps {
            let t = step as f64 * dt;
            for i in 0..p.n {
                ws.phys[i] = w[i] + z[i];
            }
            let diffusivity = self.explicit_term(&mut ws, false);
            self.deterministic_update(&mut ws, diffusivity);
            if noisy {
                for j in 0..self.substeps {
                    self.substep_increment(stream.unwrap(), self.substeps * step + j, &mut ws);
                    for i in 0..p.n {
                        let k = self.grid.kappa()[i];
                        ws.zh[i] *= self.ou_decay[i];
                        if !self.grid.is_nyquist(i) {
                            ws.zh[i] += Complex64::new(0.0, -std::f64::consts::SQRT_2 * k * self.ou_amp[i]) * ws.inc[i];
                        }
                    }
                }
            }
            let before = std::mem::take(&mut w);
            let mut next = vec![0.0; p.n];
            self.grid.inverse_into(&ws.uh, &mut ws.work, &mut next);
            if let Err(e) = self.check_finite(&next) {
                return Err(self.abort(step, t, e, wt, before));
            }
            w = next;
            self.grid.inverse_into(&ws.zh, &mut ws.work, &mut z);
            if (step + 1) % self.time.per_snapshot == 0 {
                let tm = p.t_final * ((step + 1) / self.time.per_snapshot) as f64 / p.snapshots as f64;
                wt.push(tm, Field::from_raw(w.clone()))?;
                zt.push(tm, Field::from_raw(z.clone()))?;
            }
        }
        Ok(Decomposition { z: zt, w: wt })
    }

    fn check_inputs(&self, u0: &Field, control: Option<&ControlField>) -> Result<()> {
        let n = self.params.n;
        for m in [Some(u0.n()), control.map(|g| g.n())].into_iter().flatten() {
            if m != n {
                return Err(Error::GridMismatch { left: m, right: n });
            }
        }
        self.check_finite(u0.values())
    }
}

pub fn simulate_ch(p: &CHParams, u0: &Field, stream: &NoiseStream) -> Result<Trajectory> {
    ChSolver::new(p)?.run(u0, Some(stream), None)
}

pub fn decompose(p: &CHParams, u0: &Field, stream: &NoiseStream) -> Result<Decomposition> {
    ChSolver::new(p)?.decompose(u0, Some(stream))
}

/// Which wavenumbers and rates the Parseval sum uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsevalConvention {
    /// Integer wavenumbers `k` with rate `k^4`, as in the displayed sum.
    Integer,
    /// The model's `kappa = 2 pi k` with rate `(D/2) kappa^4`.
    Model { d: f64 },
}

impl ParsevalConvention {
    fn symbol(&self, k: usize) -> (f64, f64) {
        match *self {
            Self::Integer => (k as f64, (k as f64).powi(4)),
            Self::Model { d } => {
                let kap = 2.0 * std::f64::consts::PI * k as f64;
                (kap, rate(kap, d))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParsevalSum {
    pub closed_form: f64,
    pub quadrature: f64,
}

/// `sum_{k=1..K} k^2 (1 - exp(-2 lambda_k T)) / (2 lambda_k)` in closed form
/// and as a quadrature of `integral_0^T sum_k k^2 exp(-2 lambda_k s) ds`.
pub fn parseval_gradient_integral(t: f64, k_trunc: usize, conv: ParsevalConvention) -> Result<ParsevalSum> {
    if k_trunc == 0 {
        return Err(Error::Parameter("K must be >= 1".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::Parameter(format!("T = {t} must be >= 0")));
    }
    let terms: Vec<(f64, f64)> = (1..=k_trunc).map(|k| conv.symbol(k)).collect();
    let closed_form = terms
        .iter()
        .map(|(k, l)| k * k * (-(-2.0 * l * t).exp_m1()) / (2.0 * l))
        .sum();
    let integrand = |s: f64| terms.iter().map(|(k, l)| k * k * (-2.0 * l * s).exp()).sum::<f64>();
    // dyadic panels resolve the boundary layer of the fastest modes at s = 0
    let mut quadrature = 0.0;
    let mut hi = t;
    for _ in 0..80 {
        let lo = 0.5 * hi;
        quadrature += simpson(&integrand, lo, hi, 256);
        hi = lo;
    }
    quadrature += simpson(&integrand, 0.0, hi, 256);
    Ok(ParsevalSum {
        closed_form,
        quadrature,
    })
}

fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_err: f64,
}

fn mean_and_error(samples: &[f64]) -> MonteCarloEstimate {
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (m - 1.0)
    } else {
        0.0
    };
    MonteCarloEstimate {
        mean,
        std_err: (var / m).sqrt(),
    }
}

/// Monte Carlo estimate of the displayed Parseval sum at `T` under `conv`.
///
/// Each stream carries `z(T)` with a cosine and a sine component per
/// wavenumber, each with variance `2 k^2 (1 - exp(-2 lambda T)) / (2 lambda)`;
/// the sum counts one term per wavenumber, so the estimator is `E|z(T)|^2 / 4`.
/// `z` is advanced by `steps` exact OU updates.
pub fn parseval_monte_carlo(
    t: f64,
    k_trunc: usize,
    conv: ParsevalConvention,
    streams: &[NoiseStream],
    steps: usize,
) -> Result<MonteCarloEstimate> {
    if streams.is_empty() || steps == 0 || k_trunc == 0 {
        return Err(Error::Parameter("need streams, steps and K >= 1".into()));
    }
    let dt = t / steps as f64;
    let mut gauss = vec![0.0; mode_count(k_trunc)];
    let samples: Vec<f64> = streams
        .iter()
        .map(|s| {
            let mut z = vec![Complex64::default(); k_trunc + 1];
            for step in 0..steps {
                s.fill_gaussians(step as u64, &mut gauss);
                for (k, zk) in z.iter_mut().enumerate().skip(1) {
                    let (kap, lam) = conv.symbol(k);
                    let g = Complex64::new(gauss[2 * k - 1], -gauss[2 * k]) / std::f64::consts::SQRT_2;
                    *zk = ou_update_with(*zk, kap, lam, 1.0, g, dt);
                }
            }
            // |z|^2 over both signs of k
            0.25 * z.iter().skip(1).map(|c| 2.0 * c.norm_sqr()).sum::<f64>()
        })
        .collect();
    Ok(mean_and_error(&samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub monte_carlo: MonteCarloEstimate,
    pub closed_form: f64,
}

/// `E ||z_delta - z||^2_{L^2 L^2}` for coupled white and mollified OU processes.
///
/// The difference is itself an OU process with multipliers `m_k - 1`, so it
/// is advanced directly; `p` supplies `D`, `T`, `dt` and `K`, its noise mode
/// is ignored. The time integral is a trapezoid over the steps.
pub fn noise_mollification_gap(p: &CHParams, delta: f64, streams: &[NoiseStream]) -> Result<GapEstimate> {
    p.validate()?;
    if streams.is_empty() {
        return Err(Error::Parameter("empty stream ensemble".into()));
    }
    let k_trunc = p.truncation();
    let d = p.surface_tension()?;
    let moll = mode_multipliers(
        &MollifierSpec {
            delta,
            base_radius: DEFAULT_MOLLIFIER_RADIUS,
        },
        p.n,
        k_trunc,
    )?;
    let time = TimeGrid::new(p.t_final, 1, p.dt.unwrap_or_else(|| p.default_dt()));
    let dt = time.dt;
    let sym: Vec<(f64, f64, f64)> = (0..=k_trunc)
        .map(|k| {
            let kap = 2.0 * std::f64::consts::PI * k as f64;
            (kap, rate(kap, d), moll[k] - 1.0)
        })
        .collect();
    let closed_form = sym
        .iter()
        .skip(1)
        .map(|&(kap, lam, m)| {
            let inner = p.t_final + (-2.0 * lam * p.t_final).exp_m1() / (2.0 * lam);
            2.0 * kap * kap * m * m * inner / lam
        })
        .sum();
    let mut gauss = vec![0.0; mode_count(k_trunc)];
    let samples: Vec<f64> = streams
        .iter()
        .map(|s| {
            let mut z = vec![Complex64::default(); k_trunc + 1];
            let mut acc = 0.0;
            let mut prev = 0.0;
            for step in 0..time.steps {
                s.fill_gaussians(step as u64, &mut gauss);
                for (k, zk) in z.iter_mut().enumerate().skip(1) {
                    let (kap, lam, m) = sym[k];
                    let g = Complex64::new(gauss[2 * k - 1], -gauss[2 * k]) / std::f64::consts::SQRT_2;
                    *zk = ou_update_with(*zk, kap, lam, m, g, dt);
                }
                let now: f64 = z.iter().skip(1).map(|c| 2.0 * c.norm_sqr()).sum();
                acc += 0.5 * dt * (prev + now);
                prev = now;
            }
            acc
        })
        .collect();
    Ok(GapEstimate {
        monte_carlo: mean_and_error(&samples),
        closed_form,
    })
}
