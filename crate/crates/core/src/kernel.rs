//! Kac interaction kernels: a smooth even bump of unit mass, its
//! `gamma^{-1/3} J(gamma^{-1/3} x)` rescalings, moments, and the Taylor
//! defect that feeds the remainder terms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_grid_size, Field, SpectralGrid};

/// Default support radius of the unscaled kernel.
pub const DEFAULT_KERNEL_RADIUS: f64 = 0.25;

/// Unnormalized bump `exp(-1 / (1 - (x/r)^2))` on `|x| < r`.
pub fn bump_profile(x: f64, radius: f64) -> f64 {
    let s = x / radius;
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (-1.0 / q).exp()
    }
}

/// One-line JSON descriptor stored next to kernel samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDescriptor {
    /// Support radius of the unscaled kernel.
    pub radius: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone)]
pub struct Kernel {
    samples: Field,
    descriptor: KernelDescriptor,
    /// Grid normalization constant: samples are `bump / normalization`.
    normalization: f64,
}

/// Smallest admissible power-of-two grid resolving a bump of this radius.
pub fn required_grid(support_radius: f64) -> usize {
    let mut n = 8usize;
    while support_radius * (n as f64) < 4.0 {
        n *= 2;
    }
    n
}

pub(crate) fn check_resolved(what: &'static str, support_radius: f64, n: usize) -> Result<()> {
    let cells = support_radius * n as f64;
    if cells < 4.0 {
        return Err(Error::UnderResolved {
            what,
            support_cells: cells,
            required_n: required_grid(support_radius),
        });
    }
    Ok(())
}

/// Even bump of the given support radius, normalized to unit grid mass.
pub(crate) fn normalized_bump(n: usize, support: f64) -> (Field, f64) {
    let raw: Vec<f64> = (0..n)
        .map(|j| bump_profile(crate::grid::grid_point(n, j).abs(), support))
        .collect();
    let z = raw.iter().sum::<f64>() / n as f64;
    (Field::from_raw(raw.iter().map(|v| v / z).collect()), z)
}

/// Smooth compactly supported even bump of unit mass on an `n`-point grid.
pub fn make_bump_kernel(radius: f64, n: usize) -> Result<Kernel> {
    check_grid_size(n)?;
    if !(radius > 0.0 && radius < 0.5) {
        return Err(Error::Parameter(format!("kernel radius {radius} outside (0, 1/2)")));
    }
    check_resolved("kernel", radius, n)?;
    let (samples, normalization) = normalized_bump(n, radius);
    Ok(Kernel {
        samples,
        descriptor: KernelDescriptor { radius, gamma: 1.0 },
        normalization,
    })
}

/// `gamma^{-1/3} J(gamma^{-1/3} x)`, sampled on the same grid.
///
/// The support stays inside one period, so periodization is the identity.
pub fn rescale(kernel: &Kernel, gamma: f64) -> Result<Kernel> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Parameter(format!("gamma {gamma} outside (0, 1]")));
    }
    let n = kernel.samples.n();
    let total = kernel.descriptor.gamma * gamma;
    let support = kernel.descriptor.radius * total.cbrt();
    check_resolved("rescaled kernel", support, n)?;
    let (samples, normalization) = normalized_bump(n, support);
    Ok(Kernel {
        samples,
        descriptor: KernelDescriptor {
            radius: kernel.descriptor.radius,
            gamma: total,
        },
        normalization,
    })
}

impl Kernel {
    pub fn samples(&self) -> &Field {
        &self.samples
    }

    pub fn descriptor(&self) -> KernelDescriptor {
        self.descriptor
    }

    pub fn gamma(&self) -> f64 {
        self.descriptor.gamma
    }

    /// Current support radius `gamma^{1/3} r`.
    pub fn support_radius(&self) -> f64 {
        self.descriptor.radius * self.descriptor.gamma.cbrt()
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn n(&self) -> usize {
        self.samples.n()
    }

    pub fn mass(&self) -> f64 {
        self.samples.mean()
    }

    /// Fourier coefficients, real by evenness, in FFT order.
    pub fn fourier(&self) -> Result<Vec<f64>> {
        let grid = SpectralGrid::new(self.n())?;
        Ok(grid.forward(self.samples.values()).iter().map(|c| c.re).collect())
    }

    pub fn descriptor_json(&self) -> String {
        serde_json::to_string(&self.descriptor).expect("descriptor serializes")
    }
}

/// `integral J(x) |x|^p dx` by grid quadrature.
pub fn moment(kernel: &Kernel, p: u32) -> Result<f64> {
    if p > 4 {
        return Err(Error::Parameter(format!("moment order {p} outside 0..=4")));
    }
    let f = &kernel.samples;
    Ok(f.points()
        .zip(f.values())
        .map(|(x, j)| j * x.abs().powi(p as i32))
        .sum::<f64>()
        / f.n() as f64)
}

/// Second moment `D` of the unscaled kernel with this radius.
pub fn surface_tension(radius: f64, n: usize) -> Result<f64> {
    moment(&make_bump_kernel(radius, n)?, 2)
}

#[derive(Debug, Clone)]
pub struct TaylorDefect {
    pub field: Field,
    /// The input carried more than `1e-8` of its peak in the top third of modes.
    pub under_resolved: bool,
}

/// `J_gamma * f' - f' - gamma^{2/3} (D/2) f'''`.
pub fn taylor_defect(j_gamma: &Kernel, f: &Field, gamma: f64, d: f64) -> Result<TaylorDefect> {
    crate::grid::same_grid(j_gamma.samples(), f)?;
    let grid = SpectralGrid::new(f.n())?;
    let jhat = j_gamma.fourier()?;
    let mut c = grid.forward(f.values());
    let under_resolved = spectrally_under_resolved(&grid, &c);
    let g23 = gamma.powf(2.0 / 3.0);
    for (idx, ck) in c.iter_mut().enumerate() {
        let kap = grid.kappa()[idx];
        let mult = jhat[idx] - 1.0 + g23 * 0.5 * d * kap * kap;
        *ck *= Complex64::new(0.0, kap) * mult;
        if grid.is_nyquist(idx) {
            *ck = Complex64::default();
        }
    }
    Ok(TaylorDefect {
        field: Field::new(grid.inverse(&c))?,
        under_resolved,
    })
}

/// True when modes above `N/3` exceed `1e-8` of the peak coefficient.
pub(crate) fn spectrally_under_resolved(grid: &SpectralGrid, c: &[Complex64]) -> bool {
    let peak = c.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    if peak == 0.0 {
        return false;
    }
    let cut = grid.dealias_cutoff();
    c.iter()
        .enumerate()
        .filter(|(i, _)| grid.wavenumber(*i).abs() > cut)
        .any(|(_, z)| z.norm() > 1e-8 * peak)
}
