//! Scalar fields on the periodic square `[-L, L)²`.
//!
//! Nodes sit at `x = -L + i h`, `h = 2L/n`, with `values[i1 * n + i2]`.
//! The box centre is node `(n/2, n/2)`. Convolutions, the Helmholtz solve and
//! gradients are spectral; interpolation at particle positions is bilinear.

mod fft;
pub mod io;

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::potential::MollifierSpec;

pub use io::{read_snapshot, write_snapshot, SnapshotHeader};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid mismatch: {0:?} vs {1:?}")]
    GridMismatch(Grid2D, Grid2D),
    #[error("kernel density estimate needs at least one point")]
    EmptyEnsemble,
    #[error("bandwidth {bandwidth} is below twice the grid spacing {h}")]
    Bandwidth { bandwidth: f64, h: f64 },
    #[error("value buffer has {got} entries, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Periodic square grid with `n` points per axis on `[-L, L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid2D {
    pub half_width: f64,
    pub n: usize,
}

impl Grid2D {
    pub fn new(half_width: f64, n: usize) -> Result<Self, FieldError> {
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(FieldError::InvalidGrid(format!(
                "half width must be positive, got {half_width}"
            )));
        }
        if n < 64 || !n.is_power_of_two() {
            return Err(FieldError::InvalidGrid(format!(
                "n must be a power of two >= 64, got {n}"
            )));
        }
        Ok(Self { half_width, n })
    }

    #[inline]
    pub fn h(&self) -> f64 {
        2.0 * self.half_width / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.h()
    }

    /// Node position for the flat index `idx`.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 2] {
        [self.coord(idx / self.n), self.coord(idx % self.n)]
    }

    /// Signed integer frequency of FFT index `m`.
    #[inline]
    fn frequency(&self, m: usize) -> f64 {
        let n = self.n;
        if m < n / 2 {
            m as f64
        } else {
            m as f64 - n as f64
        }
    }

    #[inline]
    fn wavenumber_unit(&self) -> f64 {
        PI / self.half_width
    }

    /// Calls `f(k1, k2)` for every stored spectral coefficient, in storage order.
    fn spectral_map<T: Send>(&self, f: impl Fn(f64, f64) -> T + Sync) -> Vec<T> {
        let n = self.n;
        let unit = self.wavenumber_unit();
        (0..(n / 2 + 1) * n)
            .into_par_iter()
            .map(|idx| {
                let j2 = idx / n;
                let i1 = idx % n;
                f(unit * self.frequency(i1), unit * j2 as f64)
            })
            .collect()
    }

    fn check_same(&self, other: &Grid2D) -> Result<(), FieldError> {
        if self == other {
            Ok(())
        } else {
            Err(FieldError::GridMismatch(*self, *other))
        }
    }
}

/// What a field represents; only affects validation and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldRole {
    Density,
    Concentration,
    Generic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    grid: Grid2D,
    values: Vec<f64>,
    role: FieldRole,
}

impl DensityField {
    pub fn new(grid: Grid2D, values: Vec<f64>, role: FieldRole) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::Length {
                got: values.len(),
                expected: grid.len(),
            });
        }
        Ok(Self { grid, values, role })
    }

    pub fn zeros(grid: Grid2D, role: FieldRole) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            role,
        }
    }

    pub fn from_fn(grid: Grid2D, role: FieldRole, f: impl Fn([f64; 2]) -> f64 + Sync) -> Self {
        let values = (0..grid.len())
            .into_par_iter()
            .map(|idx| f(grid.position(idx)))
            .collect();
        Self { grid, values, role }
    }

    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn role(&self) -> FieldRole {
        self.role
    }

    pub fn with_role(mut self, role: FieldRole) -> Self {
        self.role = role;
        self
    }

    pub fn get(&self, i1: usize, i2: usize) -> f64 {
        self.values[i1 * self.grid.n + i2]
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            role: self.role,
        }
    }

    /// Pointwise `f(a, b)`; the role of `self` is kept.
    pub fn zip_map(
        &self,
        other: &DensityField,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, FieldError> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            role: self.role,
        })
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `h² Σ values`, accumulated in index order.
    pub fn integral(&self) -> f64 {
        let h = self.grid.h();
        h * h * self.values.iter().sum::<f64>()
    }

    /// Unnormalized spectrum in the transposed half-spectrum layout.
    pub(crate) fn spectrum(&self) -> Vec<Complex64> {
        fft::plan(self.grid.n).forward(&self.values)
    }

    pub(crate) fn from_spectrum(grid: Grid2D, spec: Vec<Complex64>, role: FieldRole) -> Self {
        let values = fft::plan(grid.n).inverse(spec);
        Self { grid, values, role }
    }
}

/// A spectral multiplier on a grid, stored in the half-spectrum layout.
#[derive(Debug, Clone)]
pub struct Multiplier {
    grid: Grid2D,
    values: Vec<Complex64>,
}

impl Multiplier {
    pub fn grid(&self) -> &Grid2D {
        &self.grid
    }

    /// Multiplier from a real function of the wavevector `(k1, k2)`.
    pub fn from_symbol(grid: Grid2D, f: impl Fn(f64, f64) -> f64 + Sync) -> Self {
        let values = grid.spectral_map(|k1, k2| Complex64::new(f(k1, k2), 0.0));
        Self { grid, values }
    }

    /// Multiplier of a radial symbol `g(|k|)`. `g` is evaluated once per
    /// distinct integer `|m|²`.
    pub fn from_radial_symbol(grid: Grid2D, g: impl Fn(f64) -> f64 + Sync) -> Self {
        let half = grid.n / 2;
        let q_max = 2 * half * half;
        let mut used = vec![false; q_max + 1];
        for a in 0..=half {
            for b in 0..=half {
                used[a * a + b * b] = true;
            }
        }
        let unit = grid.wavenumber_unit();
        let table: Vec<f64> = used
            .par_iter()
            .enumerate()
            .map(|(q, &u)| if u { g(unit * (q as f64).sqrt()) } else { 0.0 })
            .collect();
        let n = grid.n;
        let values = (0..(half + 1) * n)
            .map(|idx| {
                let j2 = idx / n;
                let m1 = grid.frequency(idx % n).abs() as usize;
                Complex64::new(table[m1 * m1 + j2 * j2], 0.0)
            })
            .collect();
        Self { grid, values }
    }

    /// Multiplier of convolution with a kernel sampled at the periodic grid
    /// offsets: `(K ∗ f)(x_i) = h² Σ_j K(x_i - x_j) f(x_j)`.
    pub fn from_kernel(grid: Grid2D, kernel: impl Fn([f64; 2]) -> f64 + Sync) -> Self {
        let field = kernel_field(grid, kernel);
        let h = grid.h();
        let mut values = field.spectrum();
        for v in values.iter_mut() {
            *v *= h * h;
        }
        Self { grid, values }
    }

    /// Multiplier of periodic convolution with `field`, whose nodes sit at
    /// their grid positions `x = -L + i h`.
    pub fn from_field(field: &DensityField) -> Self {
        let grid = field.grid;
        let n = grid.n;
        let h = grid.h();
        // Moving the origin from the box centre to node 0 is a shift by n/2
        // along both axes, i.e. a factor (-1)^(m1 + m2).
        let values = field
            .spectrum()
            .into_iter()
            .enumerate()
            .map(|(idx, v)| {
                let sign = if (idx / n + idx % n) % 2 == 0 { 1.0 } else { -1.0 };
                v * (sign * h * h)
            })
            .collect();
        Self { grid, values }
    }

    /// Convolution with the grid-sampled mollifier `j^ε`.
    pub fn mollifier_sampled(grid: Grid2D, spec: &MollifierSpec) -> Self {
        Self::from_kernel(grid, |x| spec.eval(x))
    }

    /// Convolution with `j^ε` through its exact Fourier transform.
    pub fn mollifier_exact(grid: Grid2D, spec: &MollifierSpec) -> Self {
        Self::from_radial_symbol(grid, |k| spec.symbol(k))
    }

    /// `1 / (1 + |k|²)`, the periodic inverse of `-Δ + 1`.
    pub fn helmholtz(grid: Grid2D) -> Self {
        Self::from_symbol(grid, |k1, k2| 1.0 / (1.0 + k1 * k1 + k2 * k2))
    }

    /// Pointwise product of two multipliers on the same grid.
    pub fn compose(&self, other: &Multiplier) -> Result<Self, FieldError> {
        self.grid.check_same(&other.grid)?;
        Ok(Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * a).collect(),
        }
    }

    pub(crate) fn apply_to_spectrum(&self, spec: &[Complex64]) -> Vec<Complex64> {
        spec.iter().zip(&self.values).map(|(s, m)| s * m).collect()
    }
}

/// Samples `kernel` at the periodic offsets of each node from the origin,
/// i.e. node `i` holds `kernel(wrap(x_i - x_center))` shifted so the kernel
/// centre sits at index 0.
fn kernel_field(grid: Grid2D, kernel: impl Fn([f64; 2]) -> f64 + Sync) -> DensityField {
    let n = grid.n;
    let h = grid.h();
    let offset = |m: usize| if m < n / 2 { m as f64 * h } else { (m as f64 - n as f64) * h };
    let values = (0..grid.len())
        .into_par_iter()
        .map(|idx| kernel([offset(idx / n), offset(idx % n)]))
        .collect();
    DensityField {
        grid,
        values,
        role: FieldRole::Generic,
    }
}

/// Periodic convolution `f ∗ K` where `K` is given by its multiplier.
pub fn convolve(f: &DensityField, kernel: &Multiplier) -> Result<DensityField, FieldError> {
    f.grid.check_same(&kernel.grid)?;
    let spec = kernel.apply_to_spectrum(&f.spectrum());
    Ok(DensityField::from_spectrum(f.grid, spec, f.role))
}

/// Periodic convolution of two fields, `h² Σ_j f(x_i - x_j) g(x_j)`.
pub fn convolve_fields(f: &DensityField, g: &DensityField) -> Result<DensityField, FieldError> {
    f.grid.check_same(&g.grid)?;
    let out = convolve(g, &Multiplier::from_field(f))?;
    Ok(out.with_role(FieldRole::Generic))
}

/// Solves `-Δv + v = rhs` on the periodic box.
pub fn helmholtz_solve(rhs: &DensityField) -> DensityField {
    let m = Multiplier::helmholtz(rhs.grid);
    let spec = m.apply_to_spectrum(&rhs.spectrum());
    DensityField::from_spectrum(rhs.grid, spec, FieldRole::Concentration)
}

/// Spectral gradient `(∂₁f, ∂₂f)`. Nyquist modes are dropped.
pub fn gradient(f: &DensityField) -> (DensityField, DensityField) {
    let spec = f.spectrum();
    gradient_from_spectrum(f.grid, &spec)
}

pub(crate) fn gradient_from_spectrum(
    grid: Grid2D,
    spec: &[Complex64],
) -> (DensityField, DensityField) {
    let n = grid.n;
    let unit = grid.wavenumber_unit();
    let d1: Vec<Complex64> = spec
        .iter()
        .enumerate()
        .map(|(idx, s)| {
            let i1 = idx % n;
            if i1 == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                s * Complex64::new(0.0, unit * grid.frequency(i1))
            }
        })
        .collect();
    let d2: Vec<Complex64> = spec
        .iter()
        .enumerate()
        .map(|(idx, s)| {
            let j2 = idx / n;
            if j2 == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                s * Complex64::new(0.0, unit * j2 as f64)
            }
        })
        .collect();
    (
        DensityField::from_spectrum(grid, d1, FieldRole::Generic),
        DensityField::from_spectrum(grid, d2, FieldRole::Generic),
    )
}

/// Wraps a coordinate into `[-L, L)`.
#[inline]
pub fn wrap_coord(x: f64, half_width: f64) -> f64 {
    let w = 2.0 * half_width;
    let y = (x + half_width).rem_euclid(w);
    // rem_euclid can round up to exactly w.
    if y >= w {
        -half_width
    } else {
        y - half_width
    }
}

/// Bilinear interpolation of the four surrounding nodes, periodic in both axes.
#[inline]
pub fn interpolate(f: &DensityField, p: [f64; 2]) -> f64 {
    let g = &f.grid;
    let n = g.n;
    let h = g.h();
    let locate = |x: f64| -> (usize, f64) {
        let s = (wrap_coord(x, g.half_width) + g.half_width) / h;
        let i = (s.floor() as usize).min(n - 1);
        (i, (s - i as f64).clamp(0.0, 1.0))
    };
    let (i, tx) = locate(p[0]);
    let (j, ty) = locate(p[1]);
    let i1 = (i + 1) % n;
    let j1 = (j + 1) % n;
    let v = &f.values;
    let f00 = v[i * n + j];
    let f01 = v[i * n + j1];
    let f10 = v[i1 * n + j];
    let f11 = v[i1 * n + j1];
    (1.0 - tx) * ((1.0 - ty) * f00 + ty * f01) + tx * ((1.0 - ty) * f10 + ty * f11)
}

/// Kernel cut-off, in bandwidths, for KDE deposition.
const KDE_CUTOFF: f64 = 9.0;

/// Gaussian kernel density estimate deposited on `grid`, renormalized to
/// unit mass. Deposition is separable and periodic; points are processed in
/// input order.
pub fn kde(points: &[[f64; 2]], bandwidth: f64, grid: Grid2D) -> Result<DensityField, FieldError> {
    if points.is_empty() {
        return Err(FieldError::EmptyEnsemble);
    }
    let h = grid.h();
    if !(bandwidth >= 2.0 * h) {
        return Err(FieldError::Bandwidth { bandwidth, h });
    }
    let n = grid.n as i64;
    let reach = (KDE_CUTOFF * bandwidth / h).ceil() as i64;
    let reach = reach.min((n - 1) / 2);
    let inv2b2 = 0.5 / (bandwidth * bandwidth);
    let mut values = vec![0.0; grid.len()];
    let mut wx = Vec::with_capacity(2 * reach as usize + 1);
    let mut wy = Vec::with_capacity(2 * reach as usize + 1);
    let weights = |x: f64, out: &mut Vec<(usize, f64)>| {
        out.clear();
        let s = (wrap_coord(x, grid.half_width) + grid.half_width) / h;
        let c = s.round() as i64;
        for m in (c - reach)..=(c + reach) {
            let d = (m as f64 - s) * h;
            out.push((m.rem_euclid(n) as usize, (-d * d * inv2b2).exp()));
        }
    };
    for p in points {
        weights(p[0], &mut wx);
        weights(p[1], &mut wy);
        for &(i, a) in &wx {
            let row = &mut values[i * grid.n..(i + 1) * grid.n];
            for &(j, b) in &wy {
                row[j] += a * b;
            }
        }
    }
    let mut field = DensityField {
        grid,
        values,
        role: FieldRole::Density,
    };
    let mass = field.integral();
    for v in field.values.iter_mut() {
        *v /= mass;
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(l: f64, n: usize) -> Grid2D {
        Grid2D::new(l, n).unwrap()
    }

    fn gaussian(var: f64, c: [f64; 2]) -> impl Fn([f64; 2]) -> f64 + Sync {
        move |x| {
            let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            (-r2 / (2.0 * var)).exp() / (2.0 * PI * var)
        }
    }

    fn linf(a: &DensityField, b: &DensityField) -> f64 {
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn grid_validation() {
        assert!(Grid2D::new(16.0, 256).is_ok());
        assert!(Grid2D::new(16.0, 32).is_err());
        assert!(Grid2D::new(16.0, 100).is_err());
        assert!(Grid2D::new(0.0, 64).is_err());
        let g = grid(16.0, 256);
        assert_eq!(g.h(), 0.125);
        assert_eq!(g.position(128 * 256 + 128), [0.0, 0.0]);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let g = grid(3.0, 64);
        let f = DensityField::from_fn(g, FieldRole::Generic, |x| {
            (x[0] * 1.3).sin() * (x[1] - 0.2).cos() + 0.1 * x[0] * x[1]
        });
        let back = DensityField::from_spectrum(g, f.spectrum(), FieldRole::Generic);
        let scale = f.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(linf(&f, &back) <= 1e-12 * scale);
    }

    #[test]
    fn helmholtz_constant_and_single_mode() {
        let g = grid(16.0, 64);
        let c = DensityField::from_fn(g, FieldRole::Density, |_| 0.7);
        let v = helmholtz_solve(&c);
        assert!(v.values().iter().all(|x| (x - 0.7).abs() < 1e-14));

        let k1 = 3.0 * PI / 16.0;
        let k2 = 5.0 * PI / 16.0;
        let rhs = DensityField::from_fn(g, FieldRole::Generic, |x| (k1 * x[0] + k2 * x[1]).cos());
        let v = helmholtz_solve(&rhs);
        let expect = rhs.scale(1.0 / (1.0 + k1 * k1 + k2 * k2));
        assert!(linf(&v, &expect) < 1e-12);
    }

    #[test]
    fn gradient_of_single_mode_and_constant() {
        let g = grid(8.0, 64);
        let k1 = 4.0 * PI / 8.0;
        let f = DensityField::from_fn(g, FieldRole::Generic, |x| (k1 * x[0]).sin());
        let (d1, d2) = gradient(&f);
        let expect = DensityField::from_fn(g, FieldRole::Generic, |x| k1 * (k1 * x[0]).cos());
        assert!(linf(&d1, &expect) < 1e-10);
        assert!(d2.values().iter().all(|v| v.abs() < 1e-10));

        let c = DensityField::from_fn(g, FieldRole::Generic, |_| 2.5);
        let (c1, c2) = gradient(&c);
        assert!(c1.values().iter().chain(c2.values()).all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn interpolation_contract() {
        let g = grid(4.0, 64);
        let f = DensityField::from_fn(g, FieldRole::Generic, |x| x[0] * x[0] + 3.0 * x[1]);
        let h = g.h();
        assert_eq!(interpolate(&f, [g.coord(10), g.coord(33)]), f.get(10, 33));
        let centre = [g.coord(10) + 0.5 * h, g.coord(33) + 0.5 * h];
        let mean = 0.25 * (f.get(10, 33) + f.get(11, 33) + f.get(10, 34) + f.get(11, 34));
        assert!((interpolate(&f, centre) - mean).abs() < 1e-13);
        let c = DensityField::from_fn(g, FieldRole::Generic, |_| 1.75);
        for p in [[0.3, -2.2], [3.99, 3.99], [-4.0, 0.0], [9.1, -13.7]] {
            assert!((interpolate(&c, p) - 1.75).abs() < 1e-15);
        }
    }

    #[test]
    fn kde_single_point_is_sampled_gaussian() {
        let g = grid(8.0, 128);
        let b = 0.5;
        let est = kde(&[[0.0, 0.0]], b, g).unwrap();
        assert!((est.integral() - 1.0).abs() < 1e-12);
        let expect = DensityField::from_fn(g, FieldRole::Density, gaussian(b * b, [0.0, 0.0]));
        // The sampled Gaussian integrates to one up to spectral accuracy.
        assert!(linf(&est, &expect) < 1e-12);
    }

    #[test]
    fn kde_errors() {
        let g = grid(8.0, 128);
        assert!(matches!(kde(&[], 0.5, g), Err(FieldError::EmptyEnsemble)));
        assert!(matches!(
            kde(&[[0.0, 0.0]], 0.1, g),
            Err(FieldError::Bandwidth { .. })
        ));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = DensityField::zeros(grid(8.0, 64), FieldRole::Generic);
        let m = Multiplier::helmholtz(grid(8.0, 128));
        assert!(matches!(convolve(&a, &m), Err(FieldError::GridMismatch(..))));
    }

    #[test]
    fn wrap_is_periodic() {
        assert_eq!(wrap_coord(0.5, 4.0), 0.5);
        assert_eq!(wrap_coord(4.0, 4.0), -4.0);
        assert!((wrap_coord(9.5, 4.0) - 1.5).abs() < 1e-15);
        assert!((wrap_coord(-4.5, 4.0) - 3.5).abs() < 1e-15);
    }
}
