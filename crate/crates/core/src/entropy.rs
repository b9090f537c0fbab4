//! Rescaled mixing entropy, diffusion coefficients, and the entropy
//! dissipation diagnostics of a trajectory.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grid_size, Field, SpectralGrid};
use crate::kernel::{bump_profile, Kernel};
use crate::trajectory::{trapezoid_weights, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyParams {
    pub gamma: f64,
    /// Regularization `bar delta >= 0`; zero is the plain entropy.
    #[serde(default)]
    pub reg: f64,
}

impl EntropyParams {
    pub fn new(gamma: f64) -> Result<Self> {
        Self::regularized(gamma, 0.0)
    }

    pub fn regularized(gamma: f64, reg: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Parameter(format!("gamma {gamma} outside (0, 1]")));
        }
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::Parameter(format!("regularization {reg} must be >= 0")));
        }
        Ok(Self { gamma, reg })
    }

    /// Half-width `gamma^{-1/3}` of the admissible interval.
    pub fn bound(&self) -> f64 {
        self.gamma.powf(-1.0 / 3.0)
    }

    fn check(&self, zeta: f64) -> Result<f64> {
        let b = self.bound();
        if !(zeta.abs() <= b * (1.0 + 1e-14)) {
            return Err(Error::Inadmissible {
                index: 0,
                value: zeta,
                bound: b,
            });
        }
        Ok((self.gamma.cbrt() * zeta).clamp(-1.0, 1.0))
    }
}

fn xlogx(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

fn psi_scaled(s: f64, p: &EntropyParams) -> f64 {
    let e = 1.0 + p.reg;
    p.gamma.powf(-1.0 / 3.0) / (2.0 * e) * (xlogx(e + s) + xlogx(e - s) - 2.0)
}

/// Rescaled entropy `Psi_gamma(zeta)`.
pub fn psi(zeta: f64, p: &EntropyParams) -> Result<f64> {
    Ok(psi_scaled(p.check(zeta)?, p))
}

/// `psi_gamma = Psi_gamma'`; infinite at the unregularized boundary.
pub fn psi_prime(zeta: f64, p: &EntropyParams) -> Result<f64> {
    let s = p.check(zeta)?;
    let e = 1.0 + p.reg;
    Ok(0.5 / e * ((e + s) / (e - s)).ln())
}

/// `psi_gamma' = gamma^{1/3} / ((1 + bar delta)^2 - gamma^{2/3} zeta^2)`.
pub fn psi_second(zeta: f64, p: &EntropyParams) -> Result<f64> {
    let s = p.check(zeta)?;
    let e = 1.0 + p.reg;
    Ok(p.gamma.cbrt() / (e * e - s * s))
}

/// Admissibility scan; the error names the worst offender.
pub fn check_admissible(u: &Field, bound: f64) -> Result<()> {
    let (idx, worst) =
        u.values().iter().enumerate().fold(
            (0, 0.0_f64),
            |(i, w), (j, v)| if v.abs() > w { (j, v.abs()) } else { (i, w) },
        );
    if worst > bound * (1.0 + 1e-14) {
        return Err(Error::Inadmissible {
            index: idx,
            value: u.values()[idx],
            bound,
        });
    }
    Ok(())
}

/// `integral Psi_gamma(u) dx` by grid quadrature.
pub fn entropy_integral(u: &Field, p: &EntropyParams) -> Result<f64> {
    check_admissible(u, p.bound())?;
    let g = p.gamma.cbrt();
    Ok(u.values()
        .iter()
        .map(|v| psi_scaled((g * v).clamp(-1.0, 1.0), p))
        .sum::<f64>()
        / u.n() as f64)
}

/// Initial datum `gamma^{-1/3} rho(gamma^{-1/3} x)` with `rho` a bump of the
/// given amplitude (at most one) and support radius.
///
/// Returns the field and the achieved ratio
/// `(integral Psi_gamma(u) + gamma^{-1/3}) / gamma^{1/3}`.
pub fn mollified_initial(n: usize, gamma: f64, amplitude: f64, radius: f64) -> Result<(Field, f64)> {
    check_grid_size(n)?;
    let p = EntropyParams::new(gamma)?;
    if !(amplitude.abs() <= 1.0) || !(radius > 0.0 && radius < 0.5) {
        return Err(Error::Parameter(format!(
            "profile amplitude {amplitude} or radius {radius} out of range"
        )));
    }
    let scale = gamma.cbrt();
    // the bump peaks at exp(-1)
    let peak = (-1.0_f64).exp();
    let u = Field::from_fn(n, |x| amplitude / scale * bump_profile(x / scale, radius) / peak)?;
    let ratio = (entropy_integral(&u, &p)? + p.bound()) / scale;
    Ok((u, ratio))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionCoefficient {
    /// The family member with `n = 64`.
    #[default]
    Smooth,
    FamilyN {
        n: u32,
    },
    /// `sqrt(zeta)`, with its derivative evaluated at `max(zeta, 1e-12)`;
    /// experimental.
    SquareRoot,
}

const SQRT_FLOOR: f64 = 1e-12;
const SMOOTH_N: u32 = 64;

fn bump_h(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

fn bump_h_prime(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp() / (t * t)
    }
}

/// Smooth cutoff: 1 on `[0, 2]`, 0 beyond 3.
fn cutoff(z: f64) -> (f64, f64) {
    if z <= 2.0 {
        return (1.0, 0.0);
    }
    if z >= 3.0 {
        return (0.0, 0.0);
    }
    let (a, b) = (bump_h(3.0 - z), bump_h(z - 2.0));
    let (da, db) = (-bump_h_prime(3.0 - z), bump_h_prime(z - 2.0));
    let s = a + b;
    (a / s, (da * s - a * (da + db)) / (s * s))
}

impl DiffusionCoefficient {
    pub fn validate(&self) -> Result<()> {
        if let Self::FamilyN { n } = self {
            if *n < 2 {
                return Err(Error::Parameter(format!("coefficient family index {n} must be >= 2")));
            }
        }
        Ok(())
    }

    fn family_n(&self) -> Option<f64> {
        match self {
            Self::Smooth => Some(SMOOTH_N as f64),
            Self::FamilyN { n } => Some(*n as f64),
            Self::SquareRoot => None,
        }
    }

    /// Evaluation for `zeta >= 0`; callers inside the solvers pass weights
    /// already clamped to be nonnegative.
    pub(crate) fn value(&self, zeta: f64) -> f64 {
        let zeta = zeta.max(0.0);
        match self.family_n() {
            Some(n) => {
                let r = (1.0 / n).sqrt();
                let amp = 1.0 / ((1.0 + 1.0 / n).sqrt() - r);
                amp * cutoff(zeta).0 * ((zeta + 1.0 / n).sqrt() - r)
            }
            None => zeta.sqrt(),
        }
    }

    pub(crate) fn derivative(&self, zeta: f64) -> f64 {
        let zeta = zeta.max(0.0);
        match self.family_n() {
            Some(n) => {
                let r = (1.0 / n).sqrt();
                let amp = 1.0 / ((1.0 + 1.0 / n).sqrt() - r);
                let q = (zeta + 1.0 / n).sqrt();
                let (c, dc) = cutoff(zeta);
                amp * (dc * (q - r) + c * 0.5 / q)
            }
            None => 0.5 / zeta.max(SQRT_FLOOR).sqrt(),
        }
    }

    /// `sup |sigma'|` over `[0, 3]`.
    pub fn derivative_sup(&self) -> f64 {
        let grid = (0..=3000).map(|i| self.derivative(i as f64 * 1e-3));
        grid.fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub fn sigma_eval(coeff: &DiffusionCoefficient, zeta: f64) -> Result<f64> {
    coeff.validate()?;
    if !(zeta >= 0.0) {
        return Err(Error::Parameter(format!("coefficient argument {zeta} < 0")));
    }
    Ok(coeff.value(zeta))
}

pub fn sigma_prime_eval(coeff: &DiffusionCoefficient, zeta: f64) -> Result<f64> {
    coeff.validate()?;
    if !(zeta >= 0.0) {
        return Err(Error::Parameter(format!("coefficient argument {zeta} < 0")));
    }
    Ok(coeff.derivative(zeta))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DissipationRow {
    pub time: f64,
    pub entropy: f64,
    /// `gamma^{-1/3} integral |u'|^2 / (1 - gamma^{2/3} u^2)`.
    pub dissipation: f64,
    /// `gamma^{-1/3} (1 + a gamma^{2/3}) integral u' (J * u')`.
    pub cross_term: f64,
    /// `||u'||^2`, the upper bound for `integral u' (J * u')`.
    pub gradient_sq: f64,
    /// `integral u'(J * u') <= ||u'||^2` held at this time.
    pub cross_bound_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationReport {
    pub rows: Vec<DissipationRow>,
    pub sup_entropy: f64,
    pub dissipation_integral: f64,
    pub cross_integral: f64,
    /// `sup_t ||u||^2 / 2`.
    pub sup_half_l2: f64,
    /// `int int u^2 |u'|^2 / w`.
    pub weighted_gradient_integral: f64,
    /// `int ||u'||^2`.
    pub gradient_integral: f64,
    /// `sup_half_l2 + weighted_gradient_integral - a gradient_integral`.
    pub energy_functional: f64,
    /// Entropy increased between consecutive snapshots by more than `1e-6`.
    pub entropy_increase: bool,
    pub cross_bound_violated: bool,
}

/// Entropy dissipation functionals along a trajectory.
pub fn dissipation_report(traj: &Trajectory, p: &EntropyParams, j_gamma: &Kernel, a: f64) -> Result<DissipationReport> {
    if traj.is_empty() {
        return Err(Error::Parameter("empty trajectory".into()));
    }
    let n = traj.n();
    let grid = SpectralGrid::new(n)?;
    let jhat = j_gamma.fourier()?;
    let g13 = p.gamma.cbrt();
    let g23 = g13 * g13;
    let mut rows = Vec::with_capacity(traj.len());
    let mut weighted = Vec::with_capacity(traj.len());
    let mut half_l2 = 0.0_f64;
    for (&t, u) in traj.times().iter().zip(traj.fields()) {
        let entropy = entropy_integral(u, p)?;
        let mut c = grid.forward(u.values());
        grid.differentiate_in_place(&mut c, 1);
        let du = grid.inverse(&c);
        for (ck, jk) in c.iter_mut().zip(&jhat) {
            *ck *= *jk;
        }
        let jdu = grid.inverse(&c);
        let inv_n = 1.0 / n as f64;
        let mut diss = 0.0;
        let mut cross = 0.0;
        let mut grad = 0.0;
        let mut wgt = 0.0;
        for ((d, jd), v) in du.iter().zip(&jdu).zip(u.values()) {
            let w = (1.0 - g23 * v * v).max(1e-12);
            diss += d * d / w;
            cross += d * jd;
            grad += d * d;
            wgt += v * v * d * d / w;
        }
        let cross_raw = cross * inv_n;
        let grad = grad * inv_n;
        rows.push(DissipationRow {
            time: t,
            entropy,
            dissipation: diss * inv_n / g13,
            cross_term: (1.0 + a * g23) * cross_raw / g13,
            gradient_sq: grad,
            cross_bound_ok: cross_raw <= grad * (1.0 + 1e-12) + 1e-14,
        });
        weighted.push((wgt * inv_n, grad));
        half_l2 = half_l2.max(0.5 * u.l2_norm_sq());
    }
    let w = trapezoid_weights(traj.times());
    let dissipation_integral = rows.iter().zip(&w).map(|(r, w)| w * r.dissipation).sum();
    let cross_integral = rows.iter().zip(&w).map(|(r, w)| w * r.cross_term).sum();
    let weighted_gradient_integral: f64 = weighted.iter().zip(&w).map(|((q, _), w)| w * q).sum();
    let gradient_integral: f64 = weighted.iter().zip(&w).map(|((_, g), w)| w * g).sum();
    let energy_functional = half_l2 + weighted_gradient_integral - a * gradient_integral;
    Ok(DissipationReport {
        sup_entropy: rows.iter().map(|r| r.entropy).fold(f64::NEG_INFINITY, f64::max),
        entropy_increase: rows.windows(2).any(|r| r[1].entropy > r[0].entropy + 1e-6),
        cross_bound_violated: rows.iter().any(|r| !r.cross_bound_ok),
        rows,
        dissipation_integral,
        cross_integral,
        sup_half_l2: half_l2,
        weighted_gradient_integral,
        gradient_integral,
        energy_functional,
    })
}
