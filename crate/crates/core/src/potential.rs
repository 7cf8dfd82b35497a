//! Yukawa interaction, compactly supported mollifiers, and the radial table
//! of the mollified interaction used by particle pair sums.
//!
//! The interaction is `Φ(x) = χ K₀(|x|) / 2π`, the free-space Green function
//! of `-Δ + 1` scaled by the coupling. `Φ^ε = Φ ∗ j^ε` is smooth and bounded,
//! and is tabulated once per `(χ, ε)` on a radial grid that is uniform near
//! the origin and geometric further out.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Ratio between the last and first tabulated value.
pub const TAIL_RATIO: f64 = 1e-12;

/// Minimum number of radial samples accepted by [`PotentialTable::build`].
pub const MIN_TABLE_SAMPLES: usize = 256;

/// Default number of radial samples.
pub const DEFAULT_TABLE_SAMPLES: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PotentialError {
    #[error("argument {0} is outside the domain (must be > 0)")]
    Domain(f64),
    #[error("invalid mollifier: {0}")]
    InvalidMollifier(String),
    #[error("invalid table request: {0}")]
    InvalidTable(String),
    #[error("quadrature did not converge at r = {radius} (estimate {value:e}, error {error:e})")]
    Quadrature { radius: f64, value: f64, error: f64 },
}

/// Modified Bessel function of the second kind, order zero.
pub fn bessel_k0(x: f64) -> Result<f64, PotentialError> {
    if x > 0.0 {
        Ok(k0(x))
    } else {
        Err(PotentialError::Domain(x))
    }
}

/// Unchecked `K₀` for inner loops. Returns `+∞` at zero and NaN below.
pub(crate) fn k0(x: f64) -> f64 {
    if x <= 2.0 {
        k0_series(x)
    } else {
        (-x).exp() / x.sqrt() * k0_scaled_tail(x)
    }
}

// K₀(x) = -(ln(x/2) + γ) I₀(x) + Σ_{k≥1} H_k (x²/4)^k / (k!)²
fn k0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut i0 = 1.0;
    let mut harmonic = 0.0;
    let mut tail = 0.0;
    for k in 1..=18 {
        let kf = k as f64;
        term *= q / (kf * kf);
        harmonic += 1.0 / kf;
        i0 += term;
        tail += harmonic * term;
    }
    -((0.5 * x).ln() + EULER_GAMMA) * i0 + tail
}

const TAIL_COEFFS: usize = 64;

fn tail_chebyshev() -> &'static [f64] {
    static COEFFS: OnceLock<Vec<f64>> = OnceLock::new();
    COEFFS.get_or_init(|| {
        // g(x) = √x eˣ K₀(x) on x > 2, expanded in s = 4/x - 1 ∈ (-1, 1).
        let m = TAIL_COEFFS;
        let samples: Vec<f64> = (0..m)
            .map(|j| {
                let s = (PI * (j as f64 + 0.5) / m as f64).cos();
                scaled_k0_by_trapezoid(4.0 / (s + 1.0))
            })
            .collect();
        let mut coeffs: Vec<f64> = (0..m)
            .map(|order| {
                let sum: f64 = samples
                    .iter()
                    .enumerate()
                    .map(|(j, g)| g * (PI * order as f64 * (j as f64 + 0.5) / m as f64).cos())
                    .sum();
                2.0 * sum / m as f64
            })
            .collect();
        coeffs[0] *= 0.5;
        while coeffs.len() > 1 && coeffs.last().is_some_and(|c| c.abs() < 1e-18) {
            coeffs.pop();
        }
        coeffs
    })
}

// √x eˣ K₀(x) = ∫₀^∞ exp(-x (cosh(τ/√x) - 1)) dτ. The integrand is close to
// a Gaussian in τ for every x ≥ 2, where the trapezoid rule converges
// geometrically.
fn scaled_k0_by_trapezoid(x: f64) -> f64 {
    let h = 0.05;
    let rx = x.sqrt();
    let mut sum = 0.5;
    let mut k = 1;
    loop {
        let tau = k as f64 * h;
        let v = (-x * ((tau / rx).cosh() - 1.0)).exp();
        sum += v;
        if v < 1e-20 {
            break;
        }
        k += 1;
    }
    sum * h
}

fn k0_scaled_tail(x: f64) -> f64 {
    let c = tail_chebyshev();
    let s = 4.0 / x - 1.0;
    // Clenshaw recurrence.
    let (mut b1, mut b2) = (0.0, 0.0);
    for &ck in c[1..].iter().rev() {
        let b0 = 2.0 * s * b1 - b2 + ck;
        b2 = b1;
        b1 = b0;
    }
    s * b1 - b2 + c[0]
}

/// `Φ(r) = χ K₀(r) / 2π`.
pub fn yukawa_eval(chi: f64, r: f64) -> Result<f64, PotentialError> {
    if !(chi > 0.0) {
        return Err(PotentialError::Domain(chi));
    }
    Ok(chi * bessel_k0(r)? / (2.0 * PI))
}

/// Bessel `J₀` via the trapezoid rule on its periodic integral representation.
pub(crate) fn bessel_j0(x: f64) -> f64 {
    let x = x.abs();
    let n = 40 + 2 * x.ceil() as usize;
    let sum: f64 = (0..n)
        .map(|j| (x * (2.0 * PI * j as f64 / n as f64).sin()).cos())
        .sum();
    sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MollifierKind {
    /// `exp(-1/(1-|x|²))` on the unit disk.
    SmoothBump,
    /// Gaussian with standard deviation 1/3 cut off at the unit circle.
    TruncatedGaussian,
}

const TRUNCATED_GAUSSIAN_SIGMA: f64 = 1.0 / 3.0;

impl MollifierKind {
    fn unnormalized(self, r: f64) -> f64 {
        if r >= 1.0 {
            return 0.0;
        }
        match self {
            MollifierKind::SmoothBump => (-1.0 / (1.0 - r * r)).exp(),
            MollifierKind::TruncatedGaussian => {
                (-0.5 * r * r / (TRUNCATED_GAUSSIAN_SIGMA * TRUNCATED_GAUSSIAN_SIGMA)).exp()
            }
        }
    }

    /// Constant making the unit kernel integrate to one over the plane.
    fn normalization(self) -> f64 {
        static BUMP: OnceLock<f64> = OnceLock::new();
        match self {
            MollifierKind::SmoothBump => *BUMP.get_or_init(|| {
                let est = quadrature::integrate(
                    |r| MollifierKind::SmoothBump.unnormalized(r) * r,
                    0.0,
                    1.0,
                    1e-17,
                    1e-15,
                    200,
                )
                .expect("bump normalization converges");
                1.0 / (2.0 * PI * est.value)
            }),
            MollifierKind::TruncatedGaussian => {
                let s2 = TRUNCATED_GAUSSIAN_SIGMA * TRUNCATED_GAUSSIAN_SIGMA;
                1.0 / (2.0 * PI * s2 * (1.0 - (-0.5 / s2).exp()))
            }
        }
    }

    /// Normalized unit-scale profile `j(r)`.
    pub fn profile(self, r: f64) -> f64 {
        self.normalization() * self.unnormalized(r)
    }
}

/// Mollifier `j^ε(x) = ε⁻² j(x/ε)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub kind: MollifierKind,
    pub epsilon: f64,
}

impl MollifierSpec {
    pub fn new(kind: MollifierKind, epsilon: f64) -> Result<Self, PotentialError> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(PotentialError::InvalidMollifier(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        Ok(Self { kind, epsilon })
    }

    /// `j^ε` as a function of the radius.
    #[inline]
    pub fn eval_radius(&self, r: f64) -> f64 {
        let e = self.epsilon;
        self.kind.profile(r / e) / (e * e)
    }

    /// `j^ε(x)`; zero for `|x| ≥ ε`.
    #[inline]
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        self.eval_radius(x[0].hypot(x[1]))
    }

    /// Fourier transform `∫ j^ε(x) e^{-ik·x} dx` at `|k| = rho`.
    pub fn symbol(&self, rho: f64) -> f64 {
        let q = self.epsilon * rho;
        if q == 0.0 {
            return 1.0;
        }
        let kind = self.kind;
        let est = quadrature::integrate(
            |r| kind.profile(r) * bessel_j0(q * r) * r,
            0.0,
            1.0,
            1e-15,
            1e-13,
            400,
        )
        .unwrap_or_else(|e| e.estimate);
        2.0 * PI * est.value
    }

    /// Second radial moment `∫ |x|² j^ε(x) dx`.
    pub fn second_moment(&self) -> f64 {
        let kind = self.kind;
        let est = quadrature::integrate(|r| kind.profile(r) * r * r * r, 0.0, 1.0, 1e-16, 1e-14, 200)
            .unwrap_or_else(|e| e.estimate);
        2.0 * PI * est.value * self.epsilon * self.epsilon
    }
}

/// Radial tabulation of `Φ^ε = Φ ∗ j^ε`.
#[derive(Debug, Clone)]
pub struct PotentialTable {
    chi: f64,
    spec: MollifierSpec,
    radii: Vec<f64>,
    values: Vec<f64>,
    r_max: f64,
    // radii[k] = scale * (exp(k * ds) - 1)
    scale: f64,
    ds: f64,
}

impl PotentialTable {
    /// Tabulates `Φ^ε` at `n_samples` radii by two-dimensional quadrature in
    /// polar coordinates centred on the logarithmic singularity of `K₀`.
    pub fn build(chi: f64, spec: MollifierSpec, n_samples: usize) -> Result<Self, PotentialError> {
        if !(chi > 0.0) || !chi.is_finite() {
            return Err(PotentialError::InvalidTable(format!(
                "chi must be positive, got {chi}"
            )));
        }
        if n_samples < MIN_TABLE_SAMPLES {
            return Err(PotentialError::InvalidTable(format!(
                "need at least {MIN_TABLE_SAMPLES} samples, got {n_samples}"
            )));
        }
        let eps = spec.epsilon;
        let origin = mollified_value(chi, &spec, 0.0)?;
        // Φ^ε(r) ≤ Φ(r - ε) for r > ε.
        let tail_target = TAIL_RATIO * origin * 2.0 * PI / chi;
        let r_tail = solve_k0_below(tail_target);
        let r_max = eps + r_tail;

        let scale = 0.25 * eps;
        let ds = (1.0 + r_max / scale).ln() / (n_samples - 1) as f64;
        let mut radii: Vec<f64> = (0..n_samples)
            .map(|k| scale * ((k as f64 * ds).exp() - 1.0))
            .collect();
        radii[0] = 0.0;
        radii[n_samples - 1] = r_max;

        let mut values = Vec::with_capacity(n_samples);
        values.push(origin);
        for &r in &radii[1..] {
            values.push(mollified_value(chi, &spec, r)?);
        }
        for (k, w) in values.windows(2).enumerate() {
            if !(w[1] <= w[0]) || !(w[1] > 0.0) {
                return Err(PotentialError::Quadrature {
                    radius: radii[k + 1],
                    value: w[1],
                    error: (w[1] - w[0]).abs(),
                });
            }
        }
        Ok(Self {
            chi,
            spec,
            radii,
            values,
            r_max,
            scale,
            ds,
        })
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn spec(&self) -> &MollifierSpec {
        &self.spec
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// `Φ^ε(0)`, the largest tabulated value.
    pub fn origin_value(&self) -> f64 {
        self.values[0]
    }

    /// Piecewise-linear interpolation in the radius; zero beyond `r_max`.
    #[inline]
    pub fn lookup_radius(&self, r: f64) -> f64 {
        if r >= self.r_max {
            return 0.0;
        }
        let last = self.radii.len() - 2;
        let mut k = (((r / self.scale).ln_1p() / self.ds) as usize).min(last);
        while k > 0 && r < self.radii[k] {
            k -= 1;
        }
        while k < last && r >= self.radii[k + 1] {
            k += 1;
        }
        let (r0, r1) = (self.radii[k], self.radii[k + 1]);
        let (v0, v1) = (self.values[k], self.values[k + 1]);
        let t = (r - r0) / (r1 - r0);
        v0 + t * (v1 - v0)
    }

    /// `Φ^ε(x)` for a planar displacement.
    #[inline]
    pub fn lookup(&self, x: [f64; 2]) -> f64 {
        self.lookup_radius((x[0] * x[0] + x[1] * x[1]).sqrt())
    }

    /// Writes `radius,value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "radius,value")?;
        for (r, v) in self.radii.iter().zip(&self.values) {
            writeln!(w, "{r:.16e},{v:.16e}")?;
        }
        Ok(())
    }
}

/// Same as [`PotentialTable::lookup`], kept as a free function for symmetry
/// with the other operations of this module.
pub fn phi_eps_lookup(table: &PotentialTable, x: [f64; 2]) -> f64 {
    table.lookup(x)
}

/// `j^ε(x)`.
pub fn mollifier_eval(spec: &MollifierSpec, x: [f64; 2]) -> f64 {
    spec.eval(x)
}

// Smallest r with K₀(r) < target, by bisection.
fn solve_k0_below(target: f64) -> f64 {
    let mut hi = 1.0;
    while k0(hi) >= target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if k0(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi {
            break;
        }
    }
    hi
}

/// `Φ^ε(r)` by nested adaptive quadrature. With `z = ρ e_θ` the integrand is
/// `χ/(2π) ρ K₀(ρ) j^ε(|r e₁ - z|)`, whose only remaining singularity is the
/// integrable `ρ ln ρ` at the origin.
fn mollified_value(chi: f64, spec: &MollifierSpec, r: f64) -> Result<f64, PotentialError> {
    let eps = spec.epsilon;
    let peak = spec.eval_radius(0.0);
    let angular = |rho: f64| -> f64 {
        if r == 0.0 {
            return 2.0 * PI * spec.eval_radius(rho);
        }
        let c = (r * r + rho * rho - eps * eps) / (2.0 * r * rho);
        if c >= 1.0 {
            return 0.0;
        }
        let theta_max = if c <= -1.0 { PI } else { c.acos() };
        let est = quadrature::integrate(
            |theta| {
                let d2 = r * r + rho * rho - 2.0 * r * rho * theta.cos();
                spec.eval_radius(d2.max(0.0).sqrt())
            },
            0.0,
            theta_max,
            1e-14 * peak,
            1e-12,
            400,
        )
        .unwrap_or_else(|e| e.estimate);
        2.0 * est.value
    };
    let radial = |rho: f64| -> f64 {
        if rho <= 0.0 {
            return 0.0;
        }
        rho * k0(rho) * angular(rho)
    };
    let lo = (r - eps).max(0.0);
    let hi = r + eps;
    let mut breaks = vec![lo];
    if r > 0.0 && r < eps {
        breaks.push(eps - r);
    }
    if lo < r && r < hi {
        breaks.push(r);
    }
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    match quadrature::integrate_pieces(radial, &breaks, 1e-16, 1e-11, 2000) {
        Ok(est) => Ok(chi / (2.0 * PI) * est.value),
        Err(e) => Err(PotentialError::Quadrature {
            radius: r,
            value: chi / (2.0 * PI) * e.estimate.value,
            error: chi / (2.0 * PI) * e.estimate.error,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: ∫₀^T exp(-x cosh t) dt by adaptive Gauss–Kronrod.
    fn k0_integral_oracle(x: f64) -> f64 {
        let upper = (800.0 / x).acosh().max(1.0);
        quadrature::integrate(|t| (-x * t.cosh()).exp(), 0.0, upper, 1e-300, 1e-14, 5000)
            .unwrap()
            .value
    }

    #[test]
    fn k0_at_one_matches_integral_representation() {
        let oracle = k0_integral_oracle(1.0);
        assert!((oracle - 0.421_024_438_240_708_3).abs() < 1e-13);
        assert!((bessel_k0(1.0).unwrap() - oracle).abs() < 1e-9 * oracle);
    }

    #[test]
    fn k0_small_argument_log_behaviour() {
        // The leading term alone is off by (x²/4)(1 - ln(x/2) - γ) ≈ 2e-6 here,
        // so the check carries the next series term.
        let x = 1e-3;
        let lead = -(x / 2.0_f64).ln() - EULER_GAMMA;
        let q = 0.25 * x * x;
        let two_term = lead * (1.0 + q) + q;
        let k = bessel_k0(x).unwrap();
        assert!((k - two_term).abs() < 1e-10);
        assert!((k - lead).abs() < 2.1e-6);
    }

    #[test]
    fn k0_large_argument_asymptotics() {
        let x = 10.0_f64;
        let asym = (PI / (2.0 * x)).sqrt() * (-x).exp() * (1.0 - 1.0 / (8.0 * x));
        let k = bessel_k0(x).unwrap();
        assert!(((k - asym) / k).abs() < 0.01);
    }

    #[test]
    fn k0_relative_accuracy_over_range() {
        let mut x = 1e-6;
        while x <= 60.0 {
            let oracle = k0_integral_oracle(x);
            let rel = ((k0(x) - oracle) / oracle).abs();
            assert!(rel < 1e-9, "x = {x}: rel err {rel:e}");
            x *= 1.37;
        }
        for x in [2.0 - 1e-12, 2.0, 2.0 + 1e-12, 60.0] {
            let oracle = k0_integral_oracle(x);
            assert!(((k0(x) - oracle) / oracle).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn k0_rejects_nonpositive() {
        assert_eq!(bessel_k0(0.0), Err(PotentialError::Domain(0.0)));
        assert!(bessel_k0(-1.0).is_err());
    }

    #[test]
    fn yukawa_values() {
        let v = yukawa_eval(1.0, 1.0).unwrap();
        assert!((v - 0.421_024_438_240_708_3 / (2.0 * PI)).abs() < 1e-12);
        assert!((v - 0.067_008).abs() < 1e-6);
        for r in [0.01, 0.5, 3.0, 17.0] {
            assert_eq!(yukawa_eval(2.0, r).unwrap(), 2.0 * yukawa_eval(1.0, r).unwrap());
        }
        assert!(yukawa_eval(1.0, 30.0).unwrap() < 1e-13);
        assert!(yukawa_eval(1.0, 0.0).is_err());
    }

    #[test]
    fn j0_known_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((bessel_j0(2.404_825_557_695_773).abs()) < 1e-13);
        assert!((bessel_j0(30.0) - (-0.086_367_983_581_040_2)).abs() < 1e-13);
    }

    fn radial_mass(spec: &MollifierSpec) -> f64 {
        let e = spec.epsilon;
        2.0 * PI
            * quadrature::integrate(|r| spec.eval_radius(r) * r, 0.0, e, 1e-16, 1e-13, 500)
                .unwrap()
                .value
    }

    #[test]
    fn mollifiers_have_unit_mass() {
        for kind in [MollifierKind::SmoothBump, MollifierKind::TruncatedGaussian] {
            for eps in [0.01, 0.05, 0.1, 0.3, 1.0] {
                let spec = MollifierSpec::new(kind, eps).unwrap();
                assert!((radial_mass(&spec) - 1.0).abs() < 1e-8, "{kind:?} {eps}");
            }
        }
    }

    #[test]
    fn mollifier_support_and_scaling() {
        let spec = MollifierSpec::new(MollifierKind::SmoothBump, 0.4).unwrap();
        assert_eq!(spec.eval([0.6, 0.0]), 0.0);
        assert_eq!(spec.eval([0.0, 0.4]), 0.0);
        let half = MollifierSpec::new(MollifierKind::SmoothBump, 0.5).unwrap();
        let unit = MollifierSpec::new(MollifierKind::SmoothBump, 1.0).unwrap();
        assert!((half.eval([0.0, 0.0]) - 4.0 * unit.eval([0.0, 0.0])).abs() < 1e-14);
        assert!(MollifierSpec::new(MollifierKind::SmoothBump, 0.0).is_err());
        assert!(MollifierSpec::new(MollifierKind::SmoothBump, -1.0).is_err());
    }

    #[test]
    fn symbol_is_one_at_origin_and_matches_gaussian_limit() {
        let spec = MollifierSpec::new(MollifierKind::SmoothBump, 0.2).unwrap();
        assert_eq!(spec.symbol(0.0), 1.0);
        assert!((spec.symbol(1e-6) - 1.0).abs() < 1e-10);
        // small-k expansion 1 - k² M₂ / 4
        let m2 = spec.second_moment();
        let k = 0.05;
        assert!((spec.symbol(k) - (1.0 - k * k * m2 / 4.0)).abs() < 1e-9);
    }
}
