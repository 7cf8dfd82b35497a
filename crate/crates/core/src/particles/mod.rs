//! Euler–Maruyama integration of the three particle systems
//!
//! ```text
//! interacting:   dX_i = (2 exp(-(1/N) Σ_j Φ^ε(X_i - X_j)) + 2)^{1/2} dB_i
//! intermediate:  dX_i = (2 exp(-v^ε(t, X_i)) + 2)^{1/2} dB_i
//! limiting:      dX_i = (2 exp(-v(t, X_i)) + 2)^{1/2} dB_i
//! ```
//!
//! Coefficients are frozen at the start of each step. The increment of
//! particle stream `i` at step `k` depends only on `(seed, i, k)`, so all three
//! systems can be driven by the same Brownian paths. Particles live on the
//! plane; no periodic wrap is applied.

pub mod coupling;
pub mod io;
pub mod rng;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{convolve, interpolate, kde, DensityField, FieldError, FieldRole, Grid2D, Multiplier};
use crate::mixture::{GaussianMixture, MixtureError};
use crate::potential::{MollifierSpec, PotentialTable};

pub use coupling::{coupled_run, ConcentrationSeries, CouplingOptions, CouplingResult};

/// Slack on the upper coefficient bound 2, absorbing slightly negative
/// spectral concentrations.
pub const COEFFICIENT_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ParticleError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mixture(#[from] MixtureError),
    #[error("ensemble needs at least one particle")]
    Empty,
    #[error("particle {index} left the finite range at step {step}")]
    NonFinite { index: usize, step: u64 },
    #[error("diffusion coefficient {value} of particle {index} is outside (sqrt 2, 2]")]
    Coefficient { index: usize, value: f64 },
    #[error("time grid mismatch: {0}")]
    TimeGrid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("corrupt ensemble file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemTag {
    Interacting,
    Intermediate,
    Limiting,
}

/// How `S_i = (1/N) Σ_j Φ^ε(X_i - X_j)` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PairSumMethod {
    /// Direct O(N²) sum over the radial table.
    #[default]
    Direct,
    /// Cloud-in-cell deposition, spectral convolution, bilinear read-back.
    GridDeposit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    pub n_particles: usize,
    /// Used when `lambda` is absent.
    pub epsilon: f64,
    pub chi: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// When set, `ε = (λ ln N)^{-1/4}`.
    pub lambda: Option<f64>,
    pub n_replicas: usize,
}

impl SdeConfig {
    pub fn validate(&self) -> Result<(), ParticleError> {
        let bad = |m: String| Err(ParticleError::Config(m));
        if self.n_particles == 0 {
            return bad("n_particles must be at least 1".into());
        }
        if self.n_replicas == 0 {
            return bad("n_replicas must be at least 1".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 1.0 {
            return bad(format!("t_end / dt = {ratio} is not a positive integer"));
        }
        if !(self.chi > 0.0) || !self.chi.is_finite() {
            return bad(format!("chi must be positive, got {}", self.chi));
        }
        match self.lambda {
            Some(l) if !(l > 0.0) || !l.is_finite() => bad(format!("lambda must be positive, got {l}")),
            Some(_) if self.n_particles < 2 => bad("lambda scaling needs at least 2 particles".into()),
            None if !(self.epsilon > 0.0) || !self.epsilon.is_finite() => {
                bad(format!("epsilon must be positive, got {}", self.epsilon))
            }
            _ => Ok(()),
        }
    }

    /// `ε`, derived from `λ` when it is set.
    pub fn effective_epsilon(&self) -> f64 {
        match self.lambda {
            Some(l) => cutoff_epsilon(l, self.n_particles),
            None => self.epsilon,
        }
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }
}

/// `(λ ln N)^{-1/4}`.
pub fn cutoff_epsilon(lambda: f64, n: usize) -> f64 {
    (lambda * (n as f64).ln()).powf(-0.25)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<[f64; 2]>,
    /// Noise-stream index of each particle.
    pub ids: Vec<u64>,
    pub t: f64,
    pub step: u64,
    pub system: SystemTag,
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn with_system(mut self, system: SystemTag) -> Self {
        self.system = system;
        self
    }

    /// Largest `|x|∞` over all particles.
    pub fn max_abs_coordinate(&self) -> f64 {
        self.positions
            .iter()
            .fold(0.0, |m: f64, p| m.max(p[0].abs()).max(p[1].abs()))
    }

    // Positions sorted by stream id, so pair sums do not depend on labels.
    fn by_id(&self) -> Vec<[f64; 2]> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&j| self.ids[j]);
        order.iter().map(|&j| self.positions[j]).collect()
    }
}

/// `N` i.i.d. draws from `mixture`: a uniform picks the component, Box–Muller
/// the offset. Particle `i` uses stream `i` of a key derived from `seed`.
pub fn sample_initial(
    mixture: &GaussianMixture,
    n: usize,
    seed: u64,
) -> Result<ParticleEnsemble, ParticleError> {
    mixture.validate()?;
    if n == 0 {
        return Err(ParticleError::Empty);
    }
    let key = rng::initial_seed(seed);
    let positions = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let c = &mixture.components[mixture.select(rng::uniform_pair(key, i, 1)[0])];
            let z = rng::normal_pair(key, i, 0);
            let s = c.variance.sqrt();
            [c.center[0] + s * z[0], c.center[1] + s * z[1]]
        })
        .collect();
    Ok(ParticleEnsemble {
        positions,
        ids: (0..n as u64).collect(),
        t: 0.0,
        step: 0,
        system: SystemTag::Interacting,
        seed,
    })
}

/// `S_i` for every particle by direct summation in ascending stream-id order.
pub fn pair_sums(ens: &ParticleEnsemble, table: &PotentialTable, include_self: bool) -> Vec<f64> {
    let sorted = ens.by_id();
    let inv_n = 1.0 / ens.len() as f64;
    let self_term = table.origin_value();
    ens.positions
        .par_iter()
        .map(|xi| {
            let mut s = 0.0;
            for xj in &sorted {
                s += table.lookup([xi[0] - xj[0], xi[1] - xj[1]]);
            }
            if !include_self {
                // Every self pair sits at distance exactly 0.
                s -= self_term;
            }
            s * inv_n
        })
        .collect()
}

/// Grid-deposition approximation of [`pair_sums`], self term included.
pub struct DepositPairSums {
    grid: Grid2D,
    kernel: Multiplier,
}

impl DepositPairSums {
    pub fn new(grid: Grid2D, chi: f64, spec: &MollifierSpec) -> Result<Self, FieldError> {
        let kernel = Multiplier::helmholtz(grid)
            .scaled(chi)
            .compose(&Multiplier::mollifier_exact(grid, spec))?;
        Ok(Self { grid, kernel })
    }

    pub fn pair_sums(&self, ens: &ParticleEnsemble) -> Result<Vec<f64>, FieldError> {
        let g = self.grid;
        let n = g.n;
        let h = g.h();
        let w = 1.0 / (ens.len() as f64 * h * h);
        let mut rho = vec![0.0; g.len()];
        for p in ens.by_id() {
            let sx = (crate::field::wrap_coord(p[0], g.half_width) + g.half_width) / h;
            let sy = (crate::field::wrap_coord(p[1], g.half_width) + g.half_width) / h;
            let (i, j) = ((sx.floor() as usize).min(n - 1), (sy.floor() as usize).min(n - 1));
            let (tx, ty) = (sx - i as f64, sy - j as f64);
            let (i1, j1) = ((i + 1) % n, (j + 1) % n);
            rho[i * n + j] += w * (1.0 - tx) * (1.0 - ty);
            rho[i * n + j1] += w * (1.0 - tx) * ty;
            rho[i1 * n + j] += w * tx * (1.0 - ty);
            rho[i1 * n + j1] += w * tx * ty;
        }
        let rho = DensityField::new(g, rho, FieldRole::Density)?;
        let s = convolve(&rho, &self.kernel)?;
        Ok(ens.positions.iter().map(|p| interpolate(&s, *p)).collect())
    }
}

/// `(2 e^{-s} + 2)^{1/2}`.
#[inline]
pub fn coefficient(s: f64) -> f64 {
    (2.0 * (-s).exp() + 2.0).sqrt()
}

fn check_coefficient(index: usize, value: f64) -> Result<(), ParticleError> {
    if value >= std::f64::consts::SQRT_2 && value <= 2.0 * (1.0 + COEFFICIENT_SLACK) {
        Ok(())
    } else {
        Err(ParticleError::Coefficient { index, value })
    }
}

/// Diffusion coefficient of particle `i` in the interacting system, with the
/// self pair included.
pub fn diffusion_coeff_interacting(ens: &ParticleEnsemble, table: &PotentialTable, i: usize) -> f64 {
    let xi = ens.positions[i];
    let s: f64 = ens
        .by_id()
        .iter()
        .map(|xj| table.lookup([xi[0] - xj[0], xi[1] - xj[1]]))
        .sum();
    coefficient(s / ens.len() as f64)
}

/// Moves every particle by `coeff[i] · ΔB(seed, id_i, step_index)`.
pub fn advance(
    ens: &ParticleEnsemble,
    coeffs: &[f64],
    dt: f64,
    step_index: u64,
) -> Result<ParticleEnsemble, ParticleError> {
    let positions: Vec<[f64; 2]> = ens
        .positions
        .par_iter()
        .zip(&ens.ids)
        .zip(coeffs)
        .map(|((x, &id), &c)| {
            let db = rng::brownian_increment(ens.seed, id, step_index, dt);
            [x[0] + c * db[0], x[1] + c * db[1]]
        })
        .collect();
    if let Some(index) = positions.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(ParticleError::NonFinite { index, step: step_index });
    }
    Ok(ParticleEnsemble {
        positions,
        ids: ens.ids.clone(),
        t: (step_index + 1) as f64 * dt,
        step: step_index + 1,
        system: ens.system,
        seed: ens.seed,
    })
}

/// One Euler–Maruyama step of the interacting system.
pub fn step_interacting(
    ens: &ParticleEnsemble,
    table: &PotentialTable,
    dt: f64,
    step_index: u64,
) -> Result<ParticleEnsemble, ParticleError> {
    step_interacting_with(ens, &pair_sums(ens, table, true), dt, step_index)
}

/// Interacting step from precomputed pair sums.
pub fn step_interacting_with(
    ens: &ParticleEnsemble,
    sums: &[f64],
    dt: f64,
    step_index: u64,
) -> Result<ParticleEnsemble, ParticleError> {
    let coeffs: Vec<f64> = sums.iter().map(|&s| coefficient(s)).collect();
    for (i, &c) in coeffs.iter().enumerate() {
        check_coefficient(i, c)?;
    }
    advance(ens, &coeffs, dt, step_index)
}

/// One Euler–Maruyama step driven by a concentration field.
pub fn step_meanfield(
    ens: &ParticleEnsemble,
    v_field: &DensityField,
    dt: f64,
    step_index: u64,
) -> Result<ParticleEnsemble, ParticleError> {
    let coeffs: Vec<f64> = ens
        .positions
        .par_iter()
        .map(|p| coefficient(interpolate(v_field, *p)))
        .collect();
    for (i, &c) in coeffs.iter().enumerate() {
        check_coefficient(i, c)?;
    }
    advance(ens, &coeffs, dt, step_index)
}

/// `‖kde(positions) - reference‖₁` on the reference grid.
pub fn marginal_l1_distance(
    ens: &ParticleEnsemble,
    reference: &DensityField,
    bandwidth: f64,
) -> Result<f64, ParticleError> {
    let est = kde(&ens.positions, bandwidth, *reference.grid())?;
    let d = est.zip_map(reference, |a, b| a - b)?;
    let h = d.grid().h();
    Ok(h * h * d.values().iter().map(|x| x.abs()).sum::<f64>())
}
