//! Fourier-mode construction of the driving noise.
//!
//! The basis is the real trigonometric system enumerated canonically:
//! mode `0` is the constant `1`, mode `2k - 1` is `sqrt(2) cos(2 pi k x)` and
//! mode `2k` is `sqrt(2) sin(2 pi k x)`. The correlated noise is
//! `W_delta = sum_j (eta_delta * e_j) B^j`; convolving a basis function with the
//! even mollifier multiplies it by the real coefficient `eta_delta^(k)`.
//!
//! Gaussians are counter-based: the draw for `(seed, replicate, step, mode)`
//! does not depend on anything else, so white and correlated samplers, runs
//! with different `gamma` or `delta`, and runs with different truncations all
//! see the same Brownian increments.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grid_size, grid_point, Field, SpectralGrid};
use crate::kernel::{bump_profile, check_resolved, normalized_bump};

/// Default support radius of the base mollifier `eta`.
pub const DEFAULT_MOLLIFIER_RADIUS: f64 = 0.4;

/// Number of basis modes used for truncation `k`: the constant plus a
/// cosine/sine pair per wavenumber.
pub fn mode_count(k_trunc: usize) -> usize {
    2 * k_trunc + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MollifierSpec {
    pub delta: f64,
    /// Support radius of the unscaled bump `eta`.
    #[serde(default = "default_mollifier_radius")]
    pub base_radius: f64,
}

fn default_mollifier_radius() -> f64 {
    DEFAULT_MOLLIFIER_RADIUS
}

impl MollifierSpec {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            base_radius: DEFAULT_MOLLIFIER_RADIUS,
        }
    }

    /// Support radius of `eta_delta`, i.e. `delta^{1/3} r`.
    pub fn support_radius(&self) -> f64 {
        self.delta.cbrt() * self.base_radius
    }

    fn validate(&self, n: usize) -> Result<()> {
        check_grid_size(n)?;
        if !(self.delta > 0.0) {
            return Err(Error::Parameter(format!("delta {} must be > 0", self.delta)));
        }
        if !(self.base_radius > 0.0 && self.base_radius < 0.5) {
            return Err(Error::Parameter(format!(
                "mollifier radius {} outside (0, 1/2)",
                self.base_radius
            )));
        }
        if self.support_radius() >= 0.5 {
            return Err(Error::Parameter(format!(
                "mollifier support {} does not fit in one period",
                self.support_radius()
            )));
        }
        check_resolved("mollifier", self.support_radius(), n)
    }

    /// `eta_delta` sampled on an `n`-point grid with unit grid mass.
    pub fn sample(&self, n: usize) -> Result<Field> {
        self.validate(n)?;
        Ok(normalized_bump(n, self.support_radius()).0)
    }
}

fn check_truncation(n: usize, k_trunc: usize) -> Result<()> {
    if k_trunc > n / 2 {
        return Err(Error::Parameter(format!(
            "truncation {k_trunc} exceeds N/2 = {}",
            n / 2
        )));
    }
    Ok(())
}

const MULTIPLIER_PANELS: usize = 4096;

/// `eta_delta^(k)` for `k = 0..=k_trunc`, by trapezoid quadrature of the
/// continuous Fourier integral over the half support.
///
/// The grid size only enters through the resolvability and truncation checks.
pub fn mode_multipliers(spec: &MollifierSpec, n: usize, k_trunc: usize) -> Result<Vec<f64>> {
    check_truncation(n, k_trunc)?;
    spec.validate(n)?;
    let r = spec.support_radius();
    let h = r / MULTIPLIER_PANELS as f64;
    let samples: Vec<(f64, f64)> = (0..MULTIPLIER_PANELS)
        .map(|i| {
            let x = i as f64 * h;
            let w = if i == 0 { 0.5 } else { 1.0 };
            (x, w * bump_profile(x, r))
        })
        .collect();
    let mass: f64 = samples.iter().map(|(_, b)| b).sum();
    Ok((0..=k_trunc)
        .map(|k| {
            let kap = 2.0 * PI * k as f64;
            samples.iter().map(|(x, b)| b * (kap * x).cos()).sum::<f64>() / mass
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct NoiseCoefficients {
    /// `sum_j |f_j|^2`, reported as its spatial mean.
    pub f1: f64,
    /// `max - min` of `F1` over the grid.
    pub f1_spread: f64,
    /// `(1/2) sum_j d/dx f_j^2`, identically zero for the trigonometric basis.
    pub f2: Field,
    /// `sum_j |d/dx f_j|^2`, reported as its spatial mean.
    pub f3: f64,
    pub f3_spread: f64,
    pub k_trunc: usize,
}

/// Evaluates `F1`, `F2`, `F3` pointwise from the basis functions
/// `f_j = eta_delta * e_j`.
pub fn coefficients(spec: &MollifierSpec, n: usize, k_trunc: usize) -> Result<NoiseCoefficients> {
    let m = mode_multipliers(spec, n, k_trunc)?;
    coefficients_from_multipliers(&m, n)
}

pub(crate) fn coefficients_from_multipliers(m: &[f64], n: usize) -> Result<NoiseCoefficients> {
    check_grid_size(n)?;
    let mut f1 = vec![m[0] * m[0]; n];
    let mut f2 = vec![0.0; n];
    let mut f3 = vec![0.0; n];
    for (j, x) in (0..n).map(|j| (j, grid_point(n, j))) {
        for (k, &mk) in m.iter().enumerate().skip(1) {
            let kap = 2.0 * PI * k as f64;
            let (s, c) = (kap * x).sin_cos();
            let fc = mk * SQRT_2 * c;
            let fs = mk * SQRT_2 * s;
            let dfc = -mk * SQRT_2 * kap * s;
            let dfs = mk * SQRT_2 * kap * c;
            f1[j] += fc * fc + fs * fs;
            f2[j] += fc * dfc + fs * dfs;
            f3[j] += dfc * dfc + dfs * dfs;
        }
    }
    let spread = |v: &[f64]| {
        let (lo, hi) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        hi - lo
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(NoiseCoefficients {
        f1: mean(&f1),
        f1_spread: spread(&f1),
        f2: Field::new(f2)?,
        f3: mean(&f3),
        f3_spread: spread(&f3),
        k_trunc: m.len() - 1,
    })
}

/// Coordinates of one reproducible noise path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    pub seed: u64,
    pub replicate: u64,
    pub k_trunc: usize,
    /// Test hook: every Gaussian is exactly zero.
    #[serde(default)]
    pub zeroed: bool,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

impl NoiseStream {
    pub fn new(seed: u64, replicate: u64, k_trunc: usize) -> Self {
        Self {
            seed,
            replicate,
            k_trunc,
            zeroed: false,
        }
    }

    pub fn zeroed(mut self) -> Self {
        self.zeroed = true;
        self
    }

    pub fn with_truncation(mut self, k_trunc: usize) -> Self {
        self.k_trunc = k_trunc;
        self
    }

    fn rng(&self, step: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let a = splitmix(self.seed ^ 0x6b61_636c_6162_0001);
        let b = splitmix(self.replicate.wrapping_add(a));
        for (i, w) in [a, b, splitmix(a ^ b), splitmix(b.rotate_left(17))].iter().enumerate() {
            key[8 * i..8 * i + 8].copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(step);
        rng
    }

    fn draw(rng: &mut ChaCha8Rng) -> f64 {
        let u1 = unit_open(rng.next_u64());
        let u2 = unit_open(rng.next_u64());
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }

    /// Standard Gaussian for basis mode `mode` at time step `step`.
    pub fn gaussian(&self, step: u64, mode: usize) -> f64 {
        if self.zeroed {
            return 0.0;
        }
        let mut rng = self.rng(step);
        // each mode owns four 32-bit words
        rng.set_word_pos(4 * mode as u128);
        Self::draw(&mut rng)
    }

    /// Gaussians for modes `0..out.len()`; identical to calling
    /// [`NoiseStream::gaussian`] per mode.
    pub fn fill_gaussians(&self, step: u64, out: &mut [f64]) {
        if self.zeroed {
            out.iter_mut().for_each(|g| *g = 0.0);
            return;
        }
        let mut rng = self.rng(step);
        for g in out.iter_mut() {
            *g = Self::draw(&mut rng);
        }
    }

    /// Spectral coefficients of `sum_j m_{k(j)} e_j dB_j` for one step.
    ///
    /// `multipliers[k]` scales wavenumber `k`; `None` gives white noise.
    pub fn increment_spectrum(
        &self,
        step: u64,
        dt: f64,
        n: usize,
        multipliers: Option<&[f64]>,
    ) -> Result<Vec<Complex64>> {
        check_grid_size(n)?;
        check_truncation(n, self.k_trunc)?;
        let mut g = vec![0.0; mode_count(self.k_trunc)];
        self.fill_gaussians(step, &mut g);
        let mut out = vec![Complex64::default(); n];
        assemble_increment(&g, dt.sqrt(), multipliers, &mut out);
        Ok(out)
    }
}

/// Writes `sum_j m_k e_j (scale * g_j)` into spectral coefficients.
pub(crate) fn assemble_increment(gauss: &[f64], scale: f64, multipliers: Option<&[f64]>, out: &mut [Complex64]) {
    let n = out.len();
    out.iter_mut().for_each(|c| *c = Complex64::default());
    let k_trunc = (gauss.len() - 1) / 2;
    let mult = |k: usize| multipliers.map_or(1.0, |m| m[k]);
    out[0] = Complex64::new(mult(0) * scale * gauss[0], 0.0);
    for k in 1..=k_trunc {
        let m = mult(k) * scale;
        let (bc, bs) = (gauss[2 * k - 1], gauss[2 * k]);
        if k == n / 2 {
            // the sine mode vanishes at the grid points
            out[k] = Complex64::new(SQRT_2 * m * bc, 0.0);
        } else {
            let c = Complex64::new(bc, -bs) * (m / SQRT_2);
            out[k] = c;
            out[n - k] = c.conj();
        }
    }
}

pub fn sample_correlated_increment(
    stream: &NoiseStream,
    step: u64,
    spec: &MollifierSpec,
    n: usize,
    dt: f64,
) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt {dt} must be > 0")));
    }
    let m = mode_multipliers(spec, n, stream.k_trunc)?;
    let c = stream.increment_spectrum(step, dt, n, Some(&m))?;
    Field::new(SpectralGrid::new(n)?.inverse(&c))
}

/// Truncated white-noise increment sharing the correlated sampler's Gaussians.
pub fn sample_white_increment(stream: &NoiseStream, step: u64, n: usize, dt: f64) -> Result<Field> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("dt {dt} must be > 0")));
    }
    let c = stream.increment_spectrum(step, dt, n, None)?;
    Field::new(SpectralGrid::new(n)?.inverse(&c))
}
