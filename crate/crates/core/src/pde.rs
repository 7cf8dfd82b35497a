//! Time integration of the signal-dependent Keller–Segel system
//!
//! ```text
//! ∂t u = Δ(e^{-v} u + u),   -Δv + v = χ u        (local, ε = 0)
//! ∂t u = Δ(e^{-v} u + u),   -Δv + v = χ u ∗ j^ε  (nonlocal, ε > 0)
//! ```
//!
//! on the periodic box. `v` is always the exact spectral solve of the current
//! `u`. The default scheme splits `Δ(m u) = 2Δu + Δ((e^{-v} - 1) u)`, integrates
//! the constant-coefficient part exactly in Fourier space and freezes the
//! remainder over the step (first order, unconditionally stable). Every update
//! is a Fourier multiplier vanishing at `k = 0`, so mass is conserved to
//! round-off.

use std::collections::BTreeMap;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{
    self, tail_mass, DiagnosticsError, DiagnosticsRecord, TAIL_MASS_LIMIT,
};
use crate::field::{convolve, gradient, DensityField, FieldError, FieldRole, Grid2D, Multiplier};
use crate::potential::{MollifierKind, MollifierSpec, PotentialError};

/// `max |u|` above this value aborts the run.
pub const BLOW_UP_THRESHOLD: f64 = 1e6;
/// Initial mass must be within this distance of 1 before renormalization.
pub const INITIAL_MASS_TOLERANCE: f64 = 1e-6;
/// `χ` at or above this value violates a necessary condition for the
/// entropy bounds (`χ² < 8π - 1`).
pub const CHI_NECESSARY_BOUND: f64 = 4.912_508_649_225_805;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("initial data has negative value {value:e} at node {index}")]
    NegativeInitialData { index: usize, value: f64 },
    #[error("initial mass {0} is not within 1e-6 of 1")]
    InitialMass(f64),
    #[error("initial data has mass {0:e} outside the inner half box")]
    TailMass(f64),
    #[error("blow-up guard tripped at t = {t}: max |u| = {max_abs:e}")]
    BlowUp { t: f64, max_abs: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Potential(#[from] PotentialError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact integration of `2Δu`, explicit `Δ((e^{-v} - 1) u)`; first order.
    Imex,
    /// Heun's method on the full right-hand side; second order, conditionally stable.
    ExplicitRk2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeConfig {
    pub chi: f64,
    /// `0` selects the local system.
    pub epsilon: f64,
    pub mollifier: MollifierKind,
    pub dt: f64,
    pub t_end: f64,
    pub grid: Grid2D,
    pub scheme: Scheme,
    pub snapshot_stride: usize,
}

impl PdeConfig {
    /// Largest stable step for [`Scheme::ExplicitRk2`]: the spectral Laplacian
    /// reaches `2 (π/h)²` and the effective diffusivity reaches 2.
    pub fn rk2_dt_limit(&self) -> f64 {
        let h = self.grid.h();
        h * h / (2.0 * std::f64::consts::PI.powi(2))
    }

    /// Checks the configuration and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, PdeError> {
        let bad = |m: String| Err(PdeError::Config(m));
        if !(self.chi > 0.0) || !self.chi.is_finite() {
            return bad(format!("chi must be positive, got {}", self.chi));
        }
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return bad(format!("epsilon must be nonnegative, got {}", self.epsilon));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return bad(format!("t_end must be positive, got {}", self.t_end));
        }
        if self.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1".into());
        }
        Grid2D::new(self.grid.half_width, self.grid.n).map_err(|e| PdeError::Config(e.to_string()))?;
        let ratio = self.t_end / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 1.0 {
            return bad(format!("t_end / dt = {ratio} is not a positive integer"));
        }
        if self.scheme == Scheme::ExplicitRk2 && self.dt > self.rk2_dt_limit() {
            return bad(format!(
                "explicit-rk2 needs dt <= {:e} on this grid, got {}",
                self.rk2_dt_limit(),
                self.dt
            ));
        }
        let mut warnings = Vec::new();
        if self.chi >= CHI_NECESSARY_BOUND {
            warnings.push(format!(
                "chi = {} violates chi^2 < 8*pi - 1; the entropy bounds do not apply",
                self.chi
            ));
        }
        Ok(warnings)
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    pub fn mollifier_spec(&self) -> Result<Option<MollifierSpec>, PdeError> {
        if self.epsilon == 0.0 {
            Ok(None)
        } else {
            Ok(Some(MollifierSpec::new(self.mollifier, self.epsilon)?))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeState {
    pub u: DensityField,
    pub v: DensityField,
    pub t: f64,
    pub step: u64,
}

/// Precomputed multipliers for one configuration.
pub struct PdeSolver {
    config: PdeConfig,
    /// `u ↦ v`.
    potential: Multiplier,
    mollifier: Option<Multiplier>,
    decay: Multiplier,
    forcing: Multiplier,
    laplacian: Multiplier,
}

impl PdeSolver {
    pub fn new(config: PdeConfig) -> Result<Self, PdeError> {
        config.validate()?;
        let grid = config.grid;
        let mollifier = config
            .mollifier_spec()?
            .map(|spec| Multiplier::mollifier_exact(grid, &spec));
        let helmholtz = Multiplier::helmholtz(grid).scaled(config.chi);
        let potential = match &mollifier {
            Some(m) => helmholtz.compose(m)?,
            None => helmholtz,
        };
        let dt = config.dt;
        let decay = Multiplier::from_symbol(grid, |k1, k2| (-2.0 * dt * (k1 * k1 + k2 * k2)).exp());
        let forcing =
            Multiplier::from_symbol(grid, |k1, k2| 0.5 * (-2.0 * dt * (k1 * k1 + k2 * k2)).exp_m1());
        let laplacian = Multiplier::from_symbol(grid, |k1, k2| -(k1 * k1 + k2 * k2));
        Ok(Self {
            config,
            potential,
            mollifier,
            decay,
            forcing,
            laplacian,
        })
    }

    pub fn config(&self) -> &PdeConfig {
        &self.config
    }

    /// `v` for a given `u`.
    pub fn concentration(&self, u: &DensityField) -> DensityField {
        let spec = self.potential.apply_to_spectrum(&u.spectrum());
        DensityField::from_spectrum(u.grid().to_owned(), spec, FieldRole::Concentration)
    }

    /// `v ∗ j^ε`, or `None` for the local system.
    pub fn mollified(&self, v: &DensityField) -> Result<Option<DensityField>, PdeError> {
        match &self.mollifier {
            Some(m) => Ok(Some(convolve(v, m)?)),
            None => Ok(None),
        }
    }

    /// Validates `u0`, rescales it to unit mass and computes `v`.
    pub fn init_state(&self, u0: &DensityField) -> Result<PdeState, PdeError> {
        if u0.grid() != &self.config.grid {
            return Err(FieldError::GridMismatch(*u0.grid(), self.config.grid).into());
        }
        if let Some((index, &value)) = u0.values().iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(PdeError::NegativeInitialData { index, value });
        }
        let m = u0.integral();
        // The slack absorbs rounding in the sum for masses exactly at the tolerance.
        if !((m - 1.0).abs() <= INITIAL_MASS_TOLERANCE + 1e-12) {
            return Err(PdeError::InitialMass(m));
        }
        let tail = tail_mass(u0);
        if tail > TAIL_MASS_LIMIT {
            return Err(PdeError::TailMass(tail));
        }
        let u = u0.scale(1.0 / m).with_role(FieldRole::Density);
        let v = self.concentration(&u);
        Ok(PdeState { u, v, t: 0.0, step: 0 })
    }

    /// Advances one step of length `dt`.
    pub fn step(&self, state: &PdeState) -> Result<PdeState, PdeError> {
        let grid = self.config.grid;
        let u = match self.config.scheme {
            Scheme::Imex => {
                let w = state.u.zip_map(&state.v, |u, v| (-v).exp_m1() * u)?;
                let a = self.decay.apply_to_spectrum(&state.u.spectrum());
                let b = self.forcing.apply_to_spectrum(&w.spectrum());
                let spec: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
                DensityField::from_spectrum(grid, spec, FieldRole::Density)
            }
            Scheme::ExplicitRk2 => {
                let dt = self.config.dt;
                let f0 = self.rhs(&state.u, &state.v)?;
                let u1 = state.u.zip_map(&f0, |u, f| u + dt * f)?;
                let v1 = self.concentration(&u1);
                let f1 = self.rhs(&u1, &v1)?;
                let avg = f0.zip_map(&f1, |a, b| 0.5 * (a + b))?;
                state.u.zip_map(&avg, |u, f| u + dt * f)?
            }
        };
        let step = state.step + 1;
        let t = step as f64 * self.config.dt;
        let max_abs = u.values().iter().fold(0.0_f64, |m, x| {
            if x.is_finite() {
                m.max(x.abs())
            } else {
                f64::INFINITY
            }
        });
        if !(max_abs <= BLOW_UP_THRESHOLD) {
            return Err(PdeError::BlowUp { t, max_abs });
        }
        let v = self.concentration(&u);
        Ok(PdeState { u, v, t, step })
    }

    // Δ((e^{-v} + 1) u)
    fn rhs(&self, u: &DensityField, v: &DensityField) -> Result<DensityField, PdeError> {
        let flux = u.zip_map(v, |u, v| ((-v).exp() + 1.0) * u)?;
        Ok(convolve(&flux, &self.laplacian)?.with_role(FieldRole::Generic))
    }

    pub fn record(&self, state: &PdeState) -> Result<DiagnosticsRecord, PdeError> {
        let vj = self.mollified(&state.v)?;
        Ok(DiagnosticsRecord::evaluate(
            state.t,
            &state.u,
            &state.v,
            self.config.chi,
            vj.as_ref(),
        )?)
    }
}

/// [`PdeSolver::init_state`] for a one-off configuration.
pub fn init_state(u0: &DensityField, config: &PdeConfig) -> Result<PdeState, PdeError> {
    PdeSolver::new(*config)?.init_state(u0)
}

/// [`PdeSolver::step`] for a one-off configuration.
pub fn step(state: &PdeState, config: &PdeConfig) -> Result<PdeState, PdeError> {
    PdeSolver::new(*config)?.step(state)
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub config: PdeConfig,
    /// States at step 0, every `snapshot_stride` steps, and the final step.
    pub snapshots: Vec<PdeState>,
    pub records: Vec<DiagnosticsRecord>,
    pub warnings: Vec<String>,
    /// Some snapshot had mass above the tail limit outside the inner half box.
    pub tail_flagged: bool,
}

impl Trajectory {
    /// Largest `‖u(t)‖_p - ‖u(0)‖_p` over the records, for `p ∈ {2, 4}`.
    pub fn lp_growth(&self) -> [f64; 2] {
        let first = &self.records[0];
        self.records.iter().fold([0.0, 0.0], |acc, r| {
            [acc[0].max(r.l2 - first.l2), acc[1].max(r.l4 - first.l4)]
        })
    }
}

/// Runs to `t_end`, calling `observe` at every snapshot.
pub fn solve_with(
    solver: &PdeSolver,
    u0: &DensityField,
    mut observe: impl FnMut(&PdeState, &DiagnosticsRecord) -> Result<(), PdeError>,
) -> Result<Vec<String>, PdeError> {
    let cfg = solver.config();
    let warnings = cfg.validate()?;
    let n_steps = cfg.n_steps();
    let stride = cfg.snapshot_stride as u64;
    let mut state = solver.init_state(u0)?;
    observe(&state, &solver.record(&state)?)?;
    while state.step < n_steps {
        state = solver.step(&state)?;
        if state.step % stride == 0 || state.step == n_steps {
            observe(&state, &solver.record(&state)?)?;
        }
    }
    Ok(warnings)
}

pub fn solve(u0: &DensityField, config: &PdeConfig) -> Result<Trajectory, PdeError> {
    let solver = PdeSolver::new(*config)?;
    let mut snapshots = Vec::new();
    let mut records = Vec::new();
    let warnings = solve_with(&solver, u0, |s, r| {
        snapshots.push(s.clone());
        records.push(*r);
        Ok(())
    })?;
    let tail_flagged = records.iter().any(|r| r.tail_mass > TAIL_MASS_LIMIT);
    Ok(Trajectory {
        config: *config,
        snapshots,
        records,
        warnings,
        tail_flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsErrorRow {
    pub epsilon: f64,
    /// `sup_t ‖u^ε - u‖₁`.
    pub sup_l1: f64,
    /// `sup_t ‖u^ε - u‖₂`.
    pub sup_l2: f64,
    /// `(∫₀ᵀ ‖∇(u^ε - u)‖₂² dt)^{1/2}`, trapezoidal in time.
    pub h1: f64,
    /// Some snapshot of either run tripped the tail monitor.
    pub tail_flagged: bool,
}

#[derive(Default, Clone, Copy)]
struct ErrorAccumulator {
    sup_l1: f64,
    sup_l2: f64,
    grad_integral: f64,
    last_grad: f64,
    tail_flagged: bool,
}

/// Solves the local system and the nonlocal system for each `ε` in lockstep
/// and reports the difference norms. `ε = 0` entries reproduce the local run.
/// The list must be nonincreasing; repeated values give identical rows.
pub fn eps_convergence_study(
    u0: &DensityField,
    base: &PdeConfig,
    eps_list: &[f64],
) -> Result<Vec<EpsErrorRow>, PdeError> {
    if eps_list.is_empty() {
        return Err(PdeError::Config("eps_list is empty".into()));
    }
    if eps_list.windows(2).any(|w| !(w[1] <= w[0])) {
        return Err(PdeError::Config(format!(
            "eps_list must be nonincreasing, got {eps_list:?}"
        )));
    }
    let mut distinct: BTreeMap<u64, usize> = BTreeMap::new();
    let mut configs = Vec::new();
    for &eps in eps_list {
        distinct.entry(eps.to_bits()).or_insert_with(|| {
            configs.push(PdeConfig { epsilon: eps, ..*base });
            configs.len() - 1
        });
    }
    let reference = PdeSolver::new(PdeConfig { epsilon: 0.0, ..*base })?;
    let solvers = configs
        .iter()
        .map(|c| PdeSolver::new(*c))
        .collect::<Result<Vec<_>, _>>()?;

    let mut ref_state = reference.init_state(u0)?;
    let mut states = solvers
        .iter()
        .map(|s| s.init_state(u0))
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = vec![ErrorAccumulator::default(); solvers.len()];
    let dt = base.dt;

    let measure = |a: &PdeState, b: &PdeState| -> Result<(f64, f64, f64, bool), PdeError> {
        let d = a.u.zip_map(&b.u, |x, y| x - y)?;
        let l1 = diagnostics::lp_norm(&d, 1.0)?;
        let l2 = diagnostics::lp_norm(&d, 2.0)?;
        let (g1, g2) = gradient(&d);
        let h = d.grid().h();
        let grad2 = h * h
            * g1.values()
                .iter()
                .zip(g2.values())
                .map(|(a, b)| a * a + b * b)
                .sum::<f64>();
        let tail = tail_mass(&a.u) > TAIL_MASS_LIMIT || tail_mass(&b.u) > TAIL_MASS_LIMIT;
        Ok((l1, l2, grad2, tail))
    };
    let update = |acc: &mut ErrorAccumulator, m: (f64, f64, f64, bool), first: bool| {
        acc.sup_l1 = acc.sup_l1.max(m.0);
        acc.sup_l2 = acc.sup_l2.max(m.1);
        if !first {
            acc.grad_integral += 0.5 * dt * (acc.last_grad + m.2);
        }
        acc.last_grad = m.2;
        acc.tail_flagged |= m.3;
    };

    for (a, s) in acc.iter_mut().zip(&states) {
        update(a, measure(s, &ref_state)?, true);
    }
    for _ in 0..base.n_steps() {
        ref_state = reference.step(&ref_state)?;
        states = solvers
            .par_iter()
            .zip(states.par_iter())
            .map(|(solver, s)| solver.step(s))
            .collect::<Result<Vec<_>, _>>()?;
        for (a, s) in acc.iter_mut().zip(&states) {
            update(a, measure(s, &ref_state)?, false);
        }
    }

    Ok(eps_list
        .iter()
        .map(|eps| {
            let a = acc[distinct[&eps.to_bits()]];
            EpsErrorRow {
                epsilon: *eps,
                sup_l1: a.sup_l1,
                sup_l2: a.sup_l2,
                h1: a.grad_integral.sqrt(),
                tail_flagged: a.tail_flagged,
            }
        })
        .collect())
}
