//! Uniform periodic grid on the unit torus `[-1/2, 1/2)`.
//!
//! Sample `j` of an `N`-point field sits at `x_j = -1/2 + j/N`. Fourier
//! coefficients use the unit-torus convention
//!
//! ```text
//! f(x) = sum_k c_k exp(2 pi i k x),    c_k = integral f(x) exp(-2 pi i k x) dx
//! ```
//!
//! so `d/dx` acts on mode `k` as multiplication by `2 pi i k` and the torus has
//! volume one. Coefficients are stored in FFT order (`k = 0, 1, .., N/2,
//! -N/2 + 1, .., -1`). Odd-order operators drop the Nyquist mode.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

const FIELD_MAGIC: &[u8; 8] = b"KHFIELD1";

/// Real samples on the uniform periodic grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
}

/// Complex Fourier coefficients of a [`Field`] in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    coeffs: Vec<Complex64>,
}

pub(crate) fn check_grid_size(n: usize) -> Result<()> {
    if n < 8 || !n.is_power_of_two() {
        return Err(Error::InvalidGridSize(n));
    }
    Ok(())
}

/// Position of grid point `j` on an `n`-point grid.
pub fn grid_point(n: usize, j: usize) -> f64 {
    -0.5 + j as f64 / n as f64
}

/// Signed wavenumber stored at FFT index `idx`.
pub fn wavenumber(n: usize, idx: usize) -> i64 {
    if idx <= n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

fn index_of(n: usize, k: i64) -> Option<usize> {
    let half = (n / 2) as i64;
    if k.abs() > half {
        return None;
    }
    Some(if k >= 0 { k as usize } else { (n as i64 + k) as usize })
}

impl Field {
    /// Wraps samples after checking the grid size and finiteness.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_grid_size(values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Result<Self> {
        check_grid_size(n)?;
        Ok(Self { values: vec![0.0; n] })
    }

    pub fn constant(n: usize, c: f64) -> Result<Self> {
        Self::new(vec![c; n])
    }

    /// Samples `f` at the grid points.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_grid_size(n)?;
        Self::new((0..n).map(|j| f(grid_point(n, j))).collect())
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n() as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n();
        (0..n).map(move |j| grid_point(n, j))
    }

    /// Pointwise map; the result is checked for finiteness.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::new(self.values.iter().map(|&v| f(v)).collect())
    }

    /// Spatial mean, which is also the integral over the unit torus.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n() as f64
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.n() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_sq().sqrt()
    }

    pub fn l2_norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() / self.n() as f64
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `L^2` inner product on the torus.
    pub fn dot(&self, other: &Field) -> Result<f64> {
        same_grid(self, other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() / self.n() as f64)
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &Field, b: f64) -> Result<Field> {
        same_grid(self, other)?;
        Ok(Field::from_raw(
            self.values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        ))
    }

    /// Writes the binary record: magic, `u32` LE size, `f64` LE samples.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.n() as u32).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Field> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format(format!("bad field magic {magic:?}")));
        }
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let n = u32::from_le_bytes(len) as usize;
        check_grid_size(n)?;
        let mut buf = vec![0u8; 8 * n];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Field::new(values)
    }
}

pub(crate) fn same_grid(a: &Field, b: &Field) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::GridMismatch {
            left: a.n(),
            right: b.n(),
        });
    }
    Ok(())
}

impl Add for &Field {
    type Output = Field;
    fn add(self, rhs: &Field) -> Field {
        self.lincomb(1.0, rhs, 1.0).expect("fields on the same grid")
    }
}

impl Sub for &Field {
    type Output = Field;
    fn sub(self, rhs: &Field) -> Field {
        self.lincomb(1.0, rhs, -1.0).expect("fields on the same grid")
    }
}

impl Mul<f64> for &Field {
    type Output = Field;
    fn mul(self, rhs: f64) -> Field {
        Field::from_raw(self.values.iter().map(|v| v * rhs).collect())
    }
}

impl Spectrum {
    pub fn from_coeffs(coeffs: Vec<Complex64>) -> Result<Self> {
        check_grid_size(coeffs.len())?;
        Ok(Self { coeffs })
    }

    pub fn zeros(n: usize) -> Result<Self> {
        check_grid_size(n)?;
        Ok(Self {
            coeffs: vec![Complex64::new(0.0, 0.0); n],
        })
    }

    pub fn n(&self) -> usize {
        self.coeffs.len()
    }

    /// Coefficient of `exp(2 pi i k x)`; zero outside `|k| <= N/2`.
    pub fn coeff(&self, k: i64) -> Complex64 {
        index_of(self.n(), k).map(|i| self.coeffs[i]).unwrap_or_default()
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Largest relative violation of `c_{-k} = conj(c_k)`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n();
        let scale = self.coeffs.iter().fold(0.0_f64, |m, c| m.max(c.norm()));
        if scale == 0.0 {
            return 0.0;
        }
        (1..n)
            .map(|i| (self.coeffs[i] - self.coeffs[n - i].conj()).norm())
            .fold(self.coeffs[0].im.abs(), f64::max)
            / scale
    }

    /// `sum_k |c_k|^2`.
    pub fn energy(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }
}

thread_local! {
    static PLANNER: RefCell<(FftPlanner<f64>, HashMap<usize, SpectralGrid>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

/// FFT plans and wavenumber tables for one grid size.
///
/// Cheap to clone; all heavy state is shared.
#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `2 pi k` per FFT index.
    kappa: Arc<Vec<f64>>,
    /// `(-1)^k`, the phase from the grid starting at `x = -1/2`.
    sign: Arc<Vec<f64>>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid").field("n", &self.n).finish()
    }
}

impl SpectralGrid {
    /// Returns the (thread-locally cached) grid for `n` points.
    pub fn new(n: usize) -> Result<Self> {
        check_grid_size(n)?;
        Ok(PLANNER.with(|cell| {
            let mut guard = cell.borrow_mut();
            let (planner, cache) = &mut *guard;
            if let Some(g) = cache.get(&n) {
                return g.clone();
            }
            let g = SpectralGrid {
                n,
                forward: planner.plan_fft_forward(n),
                inverse: planner.plan_fft_inverse(n),
                kappa: Arc::new((0..n).map(|i| 2.0 * PI * wavenumber(n, i) as f64).collect()),
                sign: Arc::new(
                    (0..n)
                        .map(|i| if wavenumber(n, i) % 2 == 0 { 1.0 } else { -1.0 })
                        .collect(),
                ),
            };
            cache.insert(n, g.clone());
            g
        }))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `2 pi k` for each FFT index.
    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn wavenumber(&self, idx: usize) -> i64 {
        wavenumber(self.n, idx)
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        idx == self.n / 2
    }

    /// Highest wavenumber kept by the 2/3 rule.
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    pub fn forward_into(&self, values: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(values.len(), self.n);
        for (o, v) in out.iter_mut().zip(values) {
            *o = Complex64::new(*v, 0.0);
        }
        self.forward.process(out);
        let scale = 1.0 / self.n as f64;
        for (o, s) in out.iter_mut().zip(self.sign.iter()) {
            *o *= scale * s;
        }
    }

    /// Inverse transform; `work` is overwritten, the real part lands in `out`.
    pub fn inverse_into(&self, coeffs: &[Complex64], work: &mut [Complex64], out: &mut [f64]) {
        for ((w, c), s) in work.iter_mut().zip(coeffs).zip(self.sign.iter()) {
            *w = c * s;
        }
        self.inverse.process(work);
        for (o, w) in out.iter_mut().zip(work.iter()) {
            *o = w.re;
        }
    }

    pub fn forward(&self, values: &[f64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::default(); self.n];
        self.forward_into(values, &mut out);
        out
    }

    pub fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut work = vec![Complex64::default(); self.n];
        let mut out = vec![0.0; self.n];
        self.inverse_into(coeffs, &mut work, &mut out);
        out
    }

    /// Multiplies coefficients in place by `(2 pi i k)^order`.
    pub fn differentiate_in_place(&self, coeffs: &mut [Complex64], order: u32) {
        let i_pow = match order % 4 {
            0 => Complex64::new(1.0, 0.0),
            1 => Complex64::new(0.0, 1.0),
            2 => Complex64::new(-1.0, 0.0),
            _ => Complex64::new(0.0, -1.0),
        };
        for (idx, c) in coeffs.iter_mut().enumerate() {
            if order % 2 == 1 && self.is_nyquist(idx) {
                *c = Complex64::default();
            } else {
                *c *= i_pow * self.kappa[idx].powi(order as i32);
            }
        }
    }

    /// Zeroes every mode above the 2/3-rule cutoff.
    pub fn dealias_in_place(&self, coeffs: &mut [Complex64]) {
        let cut = self.dealias_cutoff();
        for (idx, c) in coeffs.iter_mut().enumerate() {
            if self.wavenumber(idx).abs() > cut {
                *c = Complex64::default();
            }
        }
    }
}

pub fn to_spectrum(f: &Field) -> Result<Spectrum> {
    if let Some((index, &value)) = f.values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite { index, value });
    }
    let grid = SpectralGrid::new(f.n())?;
    Ok(Spectrum {
        coeffs: grid.forward(&f.values),
    })
}

/// Inverse transform. Any anti-Hermitian part is discarded.
pub fn from_spectrum(s: &Spectrum) -> Result<Field> {
    let grid = SpectralGrid::new(s.n())?;
    Field::new(grid.inverse(&s.coeffs))
}

pub fn derivative(f: &Field, order: u32) -> Result<Field> {
    if !(1..=5).contains(&order) {
        return Err(Error::DerivativeOrder(order));
    }
    let grid = SpectralGrid::new(f.n())?;
    let mut c = grid.forward(&f.values);
    grid.differentiate_in_place(&mut c, order);
    Field::new(grid.inverse(&c))
}

/// Periodic convolution `(f * g)(x) = integral f(x - y) g(y) dy`.
pub fn convolve(f: &Field, g: &Field) -> Result<Field> {
    same_grid(f, g)?;
    let grid = SpectralGrid::new(f.n())?;
    let a = grid.forward(&f.values);
    let b = grid.forward(&g.values);
    let prod: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
    Field::new(grid.inverse(&prod))
}

/// `H^s` norm with weight `(1 + (2 pi k)^2)^s`.
pub fn sobolev_norm(f: &Field, s: f64) -> Result<f64> {
    if !(-10.0..=10.0).contains(&s) {
        return Err(Error::SobolevIndex(s));
    }
    let grid = SpectralGrid::new(f.n())?;
    let c = grid.forward(&f.values);
    Ok(sobolev_norm_coeffs(&grid, &c, s))
}

pub(crate) fn sobolev_norm_coeffs(grid: &SpectralGrid, c: &[Complex64], s: f64) -> f64 {
    c.iter()
        .zip(grid.kappa())
        .map(|(ck, kap)| (1.0 + kap * kap).powf(s) * ck.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Mean-zero `F` with `F' = f`, for mean-zero `f`.
pub fn antiderivative_mean_zero(f: &Field) -> Result<Field> {
    let mean = f.mean();
    let l2 = f.l2_norm();
    if l2 == 0.0 {
        return Field::zeros(f.n());
    }
    if mean.abs() >= 1e-8 * l2 {
        return Err(Error::NotMeanZero { mean, l2 });
    }
    let grid = SpectralGrid::new(f.n())?;
    let mut c = grid.forward(&f.values);
    integrate_in_place(&grid, &mut c);
    Field::new(grid.inverse(&c))
}

/// Divides by `2 pi i k`, zeroing the mean and Nyquist modes.
pub(crate) fn integrate_in_place(grid: &SpectralGrid, c: &mut [Complex64]) {
    for (idx, ck) in c.iter_mut().enumerate() {
        if idx == 0 || grid.is_nyquist(idx) {
            *ck = Complex64::default();
        } else {
            *ck /= Complex64::new(0.0, grid.kappa()[idx]);
        }
    }
}
