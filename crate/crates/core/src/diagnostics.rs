//! Discrete functionals of density/concentration pairs, error norms and
//! log-log rate fits.
//!
//! All integrals are `h² Σ` over nodes in index order, so values do not depend
//! on the rayon pool size. Moments are taken about the box centre.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{gradient, DensityField, FieldError};

/// Nodes below this value are dropped from `∫ u log u`.
pub const ENTROPY_FLOOR: f64 = 1e-30;
/// Nodes below this value are dropped from the dissipation and relative entropy.
pub const LOG_FLOOR: f64 = 1e-12;
/// Largest fraction of mass a mask may exclude.
pub const MASK_MASS_TOLERANCE: f64 = 1e-6;
/// Largest mass allowed outside `|x|∞ ≤ L/2`.
pub const TAIL_MASS_LIMIT: f64 = 1e-6;

pub const CSV_HEADER: &str = "t,mass,m2,ulogu,F_lyap,F_weighted,l2,l4,sup,dissipation,min_u";

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("mask excludes {excluded:e} of mass {mass:e}")]
    MaskTooSmall { excluded: f64, mass: f64 },
    #[error("rate fit needs at least two points with positive entries: {0}")]
    Degenerate(String),
    #[error("p must be >= 1, got {0}")]
    InvalidExponent(f64),
}

fn cell(f: &DensityField) -> f64 {
    let h = f.grid().h();
    h * h
}

pub fn mass(f: &DensityField) -> f64 {
    f.integral()
}

/// `∫ |x|² f`.
pub fn second_moment(f: &DensityField) -> f64 {
    let g = *f.grid();
    let s: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let x = g.position(idx);
            (x[0] * x[0] + x[1] * x[1]) * v
        })
        .sum();
    cell(f) * s
}

/// Mass outside the inner box `|x|∞ ≤ L/2`.
pub fn tail_mass(f: &DensityField) -> f64 {
    let g = *f.grid();
    let half = 0.5 * g.half_width;
    let s: f64 = f
        .values()
        .iter()
        .enumerate()
        .filter(|(idx, _)| {
            let x = g.position(*idx);
            x[0].abs() > half || x[1].abs() > half
        })
        .map(|(_, v)| v.abs())
        .sum();
    cell(f) * s
}

/// `∫ f log f` with `0 log 0 = 0`; nodes below [`ENTROPY_FLOOR`] are skipped.
pub fn entropy(f: &DensityField) -> f64 {
    let s: f64 = f
        .values()
        .iter()
        .filter(|&&v| v >= ENTROPY_FLOOR)
        .map(|&v| v * v.ln())
        .sum();
    cell(f) * s
}

/// `log H(x)` with `H(x) = 1 / (π (1 + |x|²)²)`.
#[inline]
pub fn log_weight(x: [f64; 2]) -> f64 {
    -PI.ln() - 2.0 * (1.0 + x[0] * x[0] + x[1] * x[1]).ln()
}

/// `∫ f log H`.
pub fn weight_moment(f: &DensityField) -> f64 {
    let g = *f.grid();
    let s: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| v * log_weight(g.position(idx)))
        .sum();
    cell(f) * s
}

/// `𝓕 = ∫ (u log u + |∇v|²/2 + v²/2 - uv/2 - χ u (v∗j^ε)/2)`.
/// Without `mollified_v` the local functional is evaluated (`v∗j^ε := v`).
pub fn lyapunov_f(
    u: &DensityField,
    v: &DensityField,
    chi: f64,
    mollified_v: Option<&DensityField>,
) -> Result<f64, DiagnosticsError> {
    if u.grid() != v.grid() {
        return Err(FieldError::GridMismatch(*u.grid(), *v.grid()).into());
    }
    let vj = mollified_v.unwrap_or(v);
    if vj.grid() != u.grid() {
        return Err(FieldError::GridMismatch(*u.grid(), *vj.grid()).into());
    }
    let (g1, g2) = gradient(v);
    let s: f64 = (0..u.values().len())
        .map(|i| {
            let (uu, vv) = (u.values()[i], v.values()[i]);
            let grad2 = g1.values()[i].powi(2) + g2.values()[i].powi(2);
            0.5 * grad2 + 0.5 * vv * vv - 0.5 * uu * vv - 0.5 * chi * uu * vj.values()[i]
        })
        .sum();
    Ok(entropy(u) + cell(u) * s)
}

/// `F = 𝓕 - ∫ u log H`.
pub fn weighted_f(
    u: &DensityField,
    v: &DensityField,
    chi: f64,
    mollified_v: Option<&DensityField>,
) -> Result<f64, DiagnosticsError> {
    Ok(lyapunov_f(u, v, chi, mollified_v)? - weight_moment(u))
}

fn check_mask(u: &DensityField, floor: f64) -> Result<(), DiagnosticsError> {
    let total: f64 = u.values().iter().filter(|v| **v > 0.0).sum();
    let excluded: f64 = u.values().iter().filter(|v| **v > 0.0 && **v < floor).sum();
    if excluded > MASK_MASS_TOLERANCE * total {
        return Err(DiagnosticsError::MaskTooSmall {
            excluded: cell(u) * excluded,
            mass: cell(u) * total,
        });
    }
    Ok(())
}

/// `∫ u e^{-v} |∇ log u - ∇v|²` over nodes with `u ≥` [`LOG_FLOOR`].
pub fn dissipation(u: &DensityField, v: &DensityField) -> Result<f64, DiagnosticsError> {
    dissipation_impl(u, v, false)
}

/// Variant with the weight shift: `∫ u e^{-v} |∇(log u - v + log(1+|x|²))|²`.
pub fn weighted_dissipation(u: &DensityField, v: &DensityField) -> Result<f64, DiagnosticsError> {
    dissipation_impl(u, v, true)
}

fn dissipation_impl(
    u: &DensityField,
    v: &DensityField,
    weighted: bool,
) -> Result<f64, DiagnosticsError> {
    if u.grid() != v.grid() {
        return Err(FieldError::GridMismatch(*u.grid(), *v.grid()).into());
    }
    check_mask(u, LOG_FLOOR)?;
    let g = *u.grid();
    let (u1, u2) = gradient(u);
    let (v1, v2) = gradient(v);
    let s: f64 = (0..u.values().len())
        .filter(|&i| u.values()[i] >= LOG_FLOOR)
        .map(|i| {
            let uu = u.values()[i];
            let mut a = u1.values()[i] / uu - v1.values()[i];
            let mut b = u2.values()[i] / uu - v2.values()[i];
            if weighted {
                let x = g.position(i);
                let d = 1.0 + x[0] * x[0] + x[1] * x[1];
                a += 2.0 * x[0] / d;
                b += 2.0 * x[1] / d;
            }
            uu * (-v.values()[i]).exp() * (a * a + b * b)
        })
        .sum();
    Ok(cell(u) * s)
}

/// `‖f‖_p = (∫ |f|^p)^{1/p}`.
pub fn lp_norm(f: &DensityField, p: f64) -> Result<f64, DiagnosticsError> {
    if !(p >= 1.0) {
        return Err(DiagnosticsError::InvalidExponent(p));
    }
    let s: f64 = f.values().iter().map(|v| v.abs().powf(p)).sum();
    Ok((cell(f) * s).powf(1.0 / p))
}

pub fn sup_norm(f: &DensityField) -> f64 {
    f.values().iter().fold(0.0, |m: f64, v| m.max(v.abs()))
}

pub fn l1_distance(f: &DensityField, g: &DensityField) -> Result<f64, DiagnosticsError> {
    let d = f.zip_map(g, |a, b| a - b)?;
    lp_norm(&d, 1.0)
}

pub fn l2_distance(f: &DensityField, g: &DensityField) -> Result<f64, DiagnosticsError> {
    let d = f.zip_map(g, |a, b| a - b)?;
    lp_norm(&d, 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeEntropy {
    /// `∫ f log(f/g)` over the mask.
    pub value: f64,
    pub l1: f64,
    /// `2 H(f|g) - ‖f - g‖₁²`; nonnegative by the Csiszár–Kullback–Pinsker inequality.
    pub ckp_slack: f64,
    /// Mass of `f` outside the mask.
    pub masked_mass: f64,
}

/// Relative entropy of `f` with respect to `g`, masked where `g <` [`LOG_FLOOR`].
pub fn relative_entropy(
    f: &DensityField,
    g: &DensityField,
) -> Result<RelativeEntropy, DiagnosticsError> {
    if f.grid() != g.grid() {
        return Err(FieldError::GridMismatch(*f.grid(), *g.grid()).into());
    }
    let mut inside = 0.0;
    let mut outside = 0.0;
    let mut total = 0.0;
    for (&a, &b) in f.values().iter().zip(g.values()) {
        if a <= 0.0 {
            continue;
        }
        total += a;
        if b >= LOG_FLOOR {
            inside += a * (a / b).ln();
        } else {
            outside += a;
        }
    }
    if outside > MASK_MASS_TOLERANCE * total {
        return Err(DiagnosticsError::MaskTooSmall {
            excluded: cell(f) * outside,
            mass: cell(f) * total,
        });
    }
    let value = cell(f) * inside;
    let l1 = l1_distance(f, g)?;
    Ok(RelativeEntropy {
        value,
        l1,
        ckp_slack: 2.0 * value - l1 * l1,
        masked_mass: cell(f) * outside,
    })
}

/// Least-squares line through `(ln scale, ln error)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit, DiagnosticsError> {
    if points.len() < 2 {
        return Err(DiagnosticsError::Degenerate(format!("{} point(s)", points.len())));
    }
    if let Some(p) = points.iter().find(|(s, e)| !(*s > 0.0 && *e > 0.0)) {
        return Err(DiagnosticsError::Degenerate(format!("nonpositive entry {p:?}")));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(DiagnosticsError::Degenerate("all scales are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    Ok(RateFit {
        slope,
        intercept,
        residual: (ss / n).sqrt(),
    })
}

/// Time-stamped functionals of a `(u, v)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub m2: f64,
    pub ulogu: f64,
    pub f_lyap: f64,
    pub f_weighted: f64,
    pub l2: f64,
    pub l4: f64,
    pub sup: f64,
    pub dissipation: f64,
    pub min_u: f64,
    /// Not part of the CSV row; feeds the tail-mass validity monitor.
    #[serde(default)]
    pub tail_mass: f64,
}

impl DiagnosticsRecord {
    pub fn evaluate(
        t: f64,
        u: &DensityField,
        v: &DensityField,
        chi: f64,
        mollified_v: Option<&DensityField>,
    ) -> Result<Self, DiagnosticsError> {
        let f_lyap = lyapunov_f(u, v, chi, mollified_v)?;
        Ok(Self {
            t,
            mass: mass(u),
            m2: second_moment(u),
            ulogu: entropy(u),
            f_lyap,
            f_weighted: f_lyap - weight_moment(u),
            l2: lp_norm(u, 2.0)?,
            l4: lp_norm(u, 4.0)?,
            sup: sup_norm(u),
            dissipation: dissipation(u, v)?,
            min_u: u.min(),
            tail_mass: tail_mass(u),
        })
    }

    /// The CSV row matching [`CSV_HEADER`], 17 significant digits per value.
    pub fn csv_row(&self) -> String {
        [
            self.t,
            self.mass,
            self.m2,
            self.ulogu,
            self.f_lyap,
            self.f_weighted,
            self.l2,
            self.l4,
            self.sup,
            self.dissipation,
            self.min_u,
        ]
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(",")
    }
}

/// 17 significant digits, enough for a bit-exact round trip.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_records_csv<W: Write>(mut w: W, records: &[DiagnosticsRecord]) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in records {
        writeln!(w, "{}", r.csv_row())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{helmholtz_solve, FieldRole, Grid2D};

    fn gaussian_field(grid: Grid2D, var: f64, c: [f64; 2]) -> DensityField {
        DensityField::from_fn(grid, FieldRole::Density, |x| {
            let r2 = (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2);
            (-r2 / (2.0 * var)).exp() / (2.0 * PI * var)
        })
    }

    fn box16() -> Grid2D {
        Grid2D::new(16.0, 256).unwrap()
    }

    #[test]
    fn mass_of_uniform_and_gaussian() {
        let g = Grid2D::new(3.0, 64).unwrap();
        let c = DensityField::from_fn(g, FieldRole::Generic, |_| 0.25);
        assert!((mass(&c) - 0.25 * 36.0).abs() < 1e-12);
        let u = gaussian_field(box16(), 1.0, [0.0, 0.0]);
        assert!((mass(&u) - 1.0).abs() < 1e-8);
        let mut rev = u.values().to_vec();
        rev.reverse();
        let h = box16().h();
        let reversed: f64 = h * h * rev.iter().sum::<f64>();
        assert!((reversed - mass(&u)).abs() < 1e-12);
    }

    #[test]
    fn second_moment_oracles() {
        let g = box16();
        let u = gaussian_field(g, 0.8, [0.0, 0.0]);
        assert!((second_moment(&u) - 1.6).abs() < 1e-6 * 1.6);
        let shifted = gaussian_field(g, 0.8, [1.5, 0.0]);
        assert!((second_moment(&shifted) - (1.6 + 2.25)).abs() < 1e-6);
        let mut delta = DensityField::zeros(g, FieldRole::Density);
        delta.values_mut()[128 * 256 + 128] = 1.0 / (g.h() * g.h());
        assert_eq!(second_moment(&delta), 0.0);
    }

    #[test]
    fn entropy_oracles() {
        let g = box16();
        for var in [0.5, 1.0, 2.0] {
            let u = gaussian_field(g, var, [0.0, 0.0]);
            let expect = -1.0 - (2.0 * PI * var).ln();
            assert!((entropy(&u) - expect).abs() < 1e-6, "var {var}");
        }
        let small = Grid2D::new(2.0, 64).unwrap();
        let c = 0.3;
        let uni = DensityField::from_fn(small, FieldRole::Density, |_| c);
        assert!((entropy(&uni) - c * 16.0 * c.ln()).abs() < 1e-12);
        // H has a slow tail: the box [-16,16)² holds only 1 - 3.19e-3 of its mass.
        let h = DensityField::from_fn(g, FieldRole::Density, |x| log_weight(x).exp());
        let l = g.half_width;
        let inner = |x: f64| {
            let a2 = 1.0 + x * x;
            let a = a2.sqrt();
            (l / (a2 * (a2 + l * l)) + (l / a).atan() / (a2 * a)) / PI
        };
        let in_box = crate::quadrature::integrate(inner, -l, l, 1e-14, 1e-13, 200)
            .unwrap()
            .value;
        assert!((mass(&h) - in_box).abs() < 1e-6, "{} vs {in_box}", mass(&h));
        assert!((1.0 - in_box - 3.186e-3).abs() < 1e-5);
    }

    #[test]
    fn lyapunov_reduces_to_entropy_without_signal() {
        let g = box16();
        let u = gaussian_field(g, 1.0, [0.0, 0.0]);
        let zero = DensityField::zeros(g, FieldRole::Concentration);
        assert_eq!(lyapunov_f(&u, &zero, 1.0, None).unwrap(), entropy(&u));
        assert_eq!(lyapunov_f(&u, &zero, 3.0, Some(&zero)).unwrap(), entropy(&u));
    }

    #[test]
    fn lyapunov_cross_term_is_bilinear() {
        let g = box16();
        let u = gaussian_field(g, 1.0, [0.0, 0.0]);
        let v = helmholtz_solve(&u);
        // With the gradient and v² parts removed, only -uv/2 - χuv/2 remains.
        let base = |v: &DensityField| {
            lyapunov_f(&u, v, 0.0, None).unwrap() - entropy(&u) - {
                let (a, b) = gradient(v);
                let h = g.h();
                0.5 * h * h
                    * (0..v.values().len())
                        .map(|i| a.values()[i].powi(2) + b.values()[i].powi(2) + v.values()[i].powi(2))
                        .sum::<f64>()
            }
        };
        let once = base(&v);
        let twice = base(&v.scale(2.0));
        assert!((twice - 2.0 * once).abs() < 1e-12 * once.abs());
    }

    #[test]
    fn weighted_f_of_concentrated_mass() {
        let g = Grid2D::new(16.0, 1024).unwrap();
        let u = gaussian_field(g, 1e-3, [0.0, 0.0]);
        let zero = DensityField::zeros(g, FieldRole::Concentration);
        let diff = weighted_f(&u, &zero, 1.0, None).unwrap() - lyapunov_f(&u, &zero, 1.0, None).unwrap();
        assert!((diff - PI.ln()).abs() < 1e-2);
        assert!((diff + weight_moment(&u)).abs() < 1e-12);
    }

    #[test]
    fn fisher_information_of_gaussian() {
        let g = box16();
        let var = 1.0;
        let u = gaussian_field(g, var, [0.0, 0.0]);
        let zero = DensityField::zeros(g, FieldRole::Concentration);
        let d = dissipation(&u, &zero).unwrap();
        assert!(((d - 2.0 / var) / (2.0 / var)).abs() < 1e-4, "{d}");
    }

    #[test]
    fn dissipation_vanishes_at_equilibrium_profile() {
        let g = box16();
        let v = DensityField::from_fn(g, FieldRole::Concentration, |x| {
            0.8 * (-0.5 * (x[0] * x[0] + x[1] * x[1])).exp()
        });
        let u = v.map(|s| s.exp() / 1024.0).with_role(FieldRole::Density);
        let d = dissipation(&u, &v).unwrap();
        assert!(d.abs() < 1e-8, "{d}");
    }

    #[test]
    fn lyapunov_agrees_with_refined_grid() {
        let eval = |n: usize| {
            let g = Grid2D::new(16.0, n).unwrap();
            let u = gaussian_field(g, 1.0, [0.0, 0.0]);
            let v = helmholtz_solve(&u);
            lyapunov_f(&u, &v, 1.0, None).unwrap()
        };
        let (coarse, fine) = (eval(256), eval(512));
        assert!((coarse - fine).abs() < 1e-6 * fine.abs(), "{coarse} vs {fine}");
    }

    #[test]
    fn dissipation_log_derivative_scale_invariance() {
        // Small box so every node stays above the mask floor.
        let g = Grid2D::new(4.0, 64).unwrap();
        let u = gaussian_field(g, 1.0, [0.0, 0.0]);
        assert!(u.min() > LOG_FLOOR);
        let zero = DensityField::zeros(g, FieldRole::Concentration);
        let a = dissipation(&u, &zero).unwrap();
        let b = dissipation(&u.scale(2.0), &zero).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * a);
    }

    #[test]
    fn dissipation_rejects_thin_mask() {
        let g = Grid2D::new(2.0, 64).unwrap();
        let u = DensityField::from_fn(g, FieldRole::Density, |_| 1e-13);
        let zero = DensityField::zeros(g, FieldRole::Concentration);
        assert!(matches!(
            dissipation(&u, &zero),
            Err(DiagnosticsError::MaskTooSmall { .. })
        ));
    }

    #[test]
    fn norms() {
        let g = Grid2D::new(2.0, 64).unwrap();
        let c = DensityField::from_fn(g, FieldRole::Generic, |_| 0.5);
        for p in [1.0, 2.0, 4.0] {
            let expect = 0.5 * 16.0_f64.powf(1.0 / p);
            assert!((lp_norm(&c, p).unwrap() - expect).abs() < 1e-12);
        }
        assert_eq!(l1_distance(&c, &c).unwrap(), 0.0);
        assert_eq!(sup_norm(&c.scale(-3.0)), 1.5);
        assert!(lp_norm(&c, 0.5).is_err());
    }

    #[test]
    fn relative_entropy_of_gaussians() {
        let g = box16();
        let (s1, s2) = (0.8_f64, 1.3_f64);
        let f = gaussian_field(g, s1, [0.0, 0.0]);
        let h = gaussian_field(g, s2, [0.0, 0.0]);
        let re = relative_entropy(&f, &h).unwrap();
        let expect = 2.0 * ((s2 / s1).sqrt().ln() + s1 / (2.0 * s2) - 0.5);
        assert!((re.value - expect).abs() < 1e-4, "{} vs {expect}", re.value);
        assert!(re.ckp_slack >= -1e-8);
        let same = relative_entropy(&f, &f).unwrap();
        assert_eq!(same.value, 0.0);
        assert_eq!(same.l1, 0.0);
    }

    #[test]
    fn rate_fit_exact_and_degenerate() {
        let fit = fit_rate(&[(1.0, 1.0), (0.5, 0.5), (0.25, 0.25)]).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-12);
        let fit = fit_rate(&[(1.0, 1.0), (0.5, 0.25), (0.25, 0.0625)]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!(fit.residual < 1e-12);
        assert!(fit_rate(&[(1.0, 1.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (0.5, 0.0)]).is_err());
        assert!(fit_rate(&[(1.0, 1.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn csv_row_round_trips() {
        let r = DiagnosticsRecord {
            t: 0.1,
            mass: 1.0 - 1e-15,
            m2: 1.0 / 3.0,
            ulogu: -2.1,
            f_lyap: -2.2,
            f_weighted: 1.0e-300,
            l2: 0.3,
            l4: 0.4,
            sup: 0.5,
            dissipation: 6.0,
            min_u: -1e-18,
            tail_mass: 0.0,
        };
        let row = r.csv_row();
        let parsed: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(parsed[1].to_bits(), r.mass.to_bits());
        assert_eq!(parsed[2].to_bits(), r.m2.to_bits());
        assert_eq!(parsed[10].to_bits(), r.min_u.to_bits());
        assert_eq!(CSV_HEADER.split(',').count(), parsed.len());
    }
}
