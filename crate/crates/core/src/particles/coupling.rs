//! Pathwise coupling of the interacting, intermediate and limiting systems.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    pair_sums, sample_initial, step_interacting_with, step_meanfield, DepositPairSums,
    PairSumMethod, ParticleEnsemble, ParticleError, SdeConfig, SystemTag,
};
use crate::diagnostics::fmt_f64;
use crate::field::{DensityField, FieldRole, Grid2D};
use crate::mixture::GaussianMixture;
use crate::pde::Trajectory;
use crate::potential::PotentialTable;

const TIME_TOLERANCE: f64 = 1e-9;

pub const COUPLING_CSV_HEADER: &str = "t,err_int_vs_mid,err_mid_vs_lim";

/// Concentration snapshots with linear interpolation in time.
#[derive(Debug, Clone)]
pub struct ConcentrationSeries {
    times: Vec<f64>,
    fields: Vec<DensityField>,
}

impl ConcentrationSeries {
    pub fn new(times: Vec<f64>, fields: Vec<DensityField>) -> Result<Self, ParticleError> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(ParticleError::TimeGrid(format!(
                "{} times for {} fields",
                times.len(),
                fields.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ParticleError::TimeGrid("snapshot times must increase".into()));
        }
        let grid = *fields[0].grid();
        if fields.iter().any(|f| *f.grid() != grid) {
            return Err(ParticleError::TimeGrid("snapshots live on different grids".into()));
        }
        Ok(Self { times, fields })
    }

    /// The `v` snapshots of a PDE trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Self {
        Self {
            times: traj.snapshots.iter().map(|s| s.t).collect(),
            fields: traj.snapshots.iter().map(|s| s.v.clone()).collect(),
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn grid(&self) -> &Grid2D {
        self.fields[0].grid()
    }

    /// The field at time `t`; snapshot times are returned unchanged.
    pub fn at(&self, t: f64) -> Result<DensityField, ParticleError> {
        let (first, last) = (self.times[0], *self.times.last().expect("nonempty"));
        if t < first - TIME_TOLERANCE || t > last + TIME_TOLERANCE {
            return Err(ParticleError::TimeGrid(format!(
                "t = {t} outside snapshot range [{first}, {last}]"
            )));
        }
        if let Some(k) = self.times.iter().position(|&s| (s - t).abs() <= TIME_TOLERANCE) {
            return Ok(self.fields[k].clone());
        }
        let k = self.times.partition_point(|&s| s <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.fields[k]
            .zip_map(&self.fields[k + 1], |a, b| (1.0 - w) * a + w * b)?
            .with_role(FieldRole::Concentration))
    }

    fn check_covers(&self, t_end: f64) -> Result<(), ParticleError> {
        if self.times[0].abs() > TIME_TOLERANCE {
            return Err(ParticleError::TimeGrid(format!(
                "snapshots start at {}, not 0",
                self.times[0]
            )));
        }
        let last = *self.times.last().expect("nonempty");
        if last < t_end - TIME_TOLERANCE {
            return Err(ParticleError::TimeGrid(format!(
                "snapshots end at {last}, before t_end = {t_end}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptions {
    /// Run the interacting system (O(N²) per step).
    pub include_interacting: bool,
    pub include_self: bool,
    pub pair_sum: PairSumMethod,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            include_interacting: true,
            include_self: true,
            pair_sum: PairSumMethod::Direct,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReplicaFinal {
    pub interacting: Option<ParticleEnsemble>,
    pub intermediate: ParticleEnsemble,
    pub limiting: ParticleEnsemble,
}

/// Mean and standard error of a replica statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Statistic {
    pub mean: f64,
    pub std_err: f64,
}

impl Statistic {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std_err = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std_err }
    }

    /// `self` exceeds `other` by more than their combined standard error.
    pub fn exceeds(&self, other: &Statistic) -> bool {
        self.mean - other.mean > self.std_err.hypot(other.std_err)
    }
}

#[derive(Debug, Clone)]
pub struct CouplingResult {
    pub epsilon: f64,
    pub times: Vec<f64>,
    /// `max_i` of the replica mean of `sup_{s≤t} |X_i - X̄_i|²`.
    pub err_int_vs_mid: Vec<f64>,
    /// Particle and replica mean of `sup_{s≤t} |X̄_i - X̂_i|²`.
    pub err_mid_vs_lim: Vec<f64>,
    /// Final `sup_t |X_i - X̄_i|²`, indexed `[replica][particle]`.
    pub int_mid_sup: Vec<Vec<f64>>,
    /// Final `sup_t |X̄_i - X̂_i|²`, indexed `[replica][particle]`.
    pub mid_lim_sup: Vec<Vec<f64>>,
    pub finals: Vec<ReplicaFinal>,
    /// Some particle left `|x|∞ ≤ L/2`.
    pub escaped: bool,
}

impl CouplingResult {
    /// `max_i Ê sup_t |X_i - X̄_i|²` with the standard error of the maximizing particle.
    pub fn max_int_vs_mid(&self) -> Statistic {
        max_over_particles(&self.int_mid_sup)
    }

    /// `max_i Ê sup_t |X̄_i - X̂_i|²` with the standard error of the maximizing particle.
    pub fn max_mid_vs_lim(&self) -> Statistic {
        max_over_particles(&self.mid_lim_sup)
    }

    /// `Ê sup_t |X̄_i - X̂_i|²` averaged over particles, with the replica standard error.
    pub fn mean_mid_vs_lim(&self) -> Statistic {
        let per_replica: Vec<f64> = self
            .mid_lim_sup
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect();
        Statistic::from_samples(&per_replica)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{COUPLING_CSV_HEADER}")?;
        for ((t, a), b) in self.times.iter().zip(&self.err_int_vs_mid).zip(&self.err_mid_vs_lim) {
            writeln!(w, "{},{},{}", fmt_f64(*t), fmt_f64(*a), fmt_f64(*b))?;
        }
        Ok(())
    }
}

fn max_over_particles(sup: &[Vec<f64>]) -> Statistic {
    let n = sup[0].len();
    let mut best = Statistic { mean: f64::NEG_INFINITY, std_err: 0.0 };
    for i in 0..n {
        let xs: Vec<f64> = sup.iter().map(|r| r[i]).collect();
        let s = Statistic::from_samples(&xs);
        if s.mean > best.mean {
            best = s;
        }
    }
    best
}

struct ReplicaRun {
    // [step][particle] running sups, step 0 included.
    int_mid: Vec<Vec<f64>>,
    mid_lim: Vec<Vec<f64>>,
    last: ReplicaFinal,
    escaped: bool,
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Advances the three systems from identical initial positions with identical
/// increments. `nonlocal` supplies `v^ε` for the intermediate system, `local`
/// supplies `v` for the limiting one.
pub fn coupled_run(
    config: &SdeConfig,
    initial: &GaussianMixture,
    local: &ConcentrationSeries,
    nonlocal: &ConcentrationSeries,
    table: &PotentialTable,
    options: CouplingOptions,
) -> Result<CouplingResult, ParticleError> {
    config.validate()?;
    local.check_covers(config.t_end)?;
    nonlocal.check_covers(config.t_end)?;
    if local.grid() != nonlocal.grid() {
        return Err(ParticleError::TimeGrid("local and nonlocal grids differ".into()));
    }
    let n_steps = config.n_steps();
    let dt = config.dt;
    let limit = 0.5 * local.grid().half_width;
    let deposit = match options.pair_sum {
        PairSumMethod::Direct => None,
        PairSumMethod::GridDeposit => Some(DepositPairSums::new(
            *local.grid(),
            table.chi(),
            table.spec(),
        )?),
    };

    let fields: Vec<(DensityField, DensityField)> = (0..n_steps)
        .map(|k| {
            let t = k as f64 * dt;
            Ok((nonlocal.at(t)?, local.at(t)?))
        })
        .collect::<Result<_, ParticleError>>()?;

    let run_replica = |r: u64| -> Result<ReplicaRun, ParticleError> {
        let seed = super::rng::replica_seed(config.seed, r);
        let start = sample_initial(initial, config.n_particles, seed)?;
        let mut int = options
            .include_interacting
            .then(|| start.clone().with_system(SystemTag::Interacting));
        let mut mid = start.clone().with_system(SystemTag::Intermediate);
        let mut lim = start.with_system(SystemTag::Limiting);
        let n = config.n_particles;
        let mut sup_im = vec![0.0; n];
        let mut sup_ml = vec![0.0; n];
        let mut int_mid = vec![sup_im.clone()];
        let mut mid_lim = vec![sup_ml.clone()];
        let mut escaped = mid.max_abs_coordinate() > limit;
        for (k, (v_mid, v_lim)) in fields.iter().enumerate() {
            let k = k as u64;
            if let Some(e) = int.as_ref() {
                let sums = match &deposit {
                    None => pair_sums(e, table, options.include_self),
                    Some(d) => d.pair_sums(e)?,
                };
                int = Some(step_interacting_with(e, &sums, dt, k)?);
            }
            mid = step_meanfield(&mid, v_mid, dt, k)?;
            lim = step_meanfield(&lim, v_lim, dt, k)?;
            for i in 0..n {
                if let Some(e) = int.as_ref() {
                    sup_im[i] = f64::max(sup_im[i], dist2(&e.positions[i], &mid.positions[i]));
                }
                sup_ml[i] = f64::max(sup_ml[i], dist2(&mid.positions[i], &lim.positions[i]));
            }
            escaped |= mid.max_abs_coordinate() > limit
                || lim.max_abs_coordinate() > limit
                || int.as_ref().is_some_and(|e| e.max_abs_coordinate() > limit);
            int_mid.push(sup_im.clone());
            mid_lim.push(sup_ml.clone());
        }
        Ok(ReplicaRun {
            int_mid,
            mid_lim,
            last: ReplicaFinal {
                interacting: int,
                intermediate: mid,
                limiting: lim,
            },
            escaped,
        })
    };

    let runs = (0..config.n_replicas as u64)
        .into_par_iter()
        .map(run_replica)
        .collect::<Result<Vec<_>, _>>()?;

    let n_rep = runs.len() as f64;
    let n = config.n_particles;
    let times: Vec<f64> = (0..=n_steps).map(|k| k as f64 * dt).collect();
    let mut err_int_vs_mid = Vec::with_capacity(times.len());
    let mut err_mid_vs_lim = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let max_mean = (0..n)
            .map(|i| runs.iter().map(|r| r.int_mid[k][i]).sum::<f64>() / n_rep)
            .fold(0.0, f64::max);
        let mean = runs
            .iter()
            .map(|r| r.mid_lim[k].iter().sum::<f64>())
            .sum::<f64>()
            / (n_rep * n as f64);
        err_int_vs_mid.push(max_mean);
        err_mid_vs_lim.push(mean);
    }
    let escaped = runs.iter().any(|r| r.escaped);
    let mut int_mid_sup = Vec::new();
    let mut mid_lim_sup = Vec::new();
    let mut finals = Vec::new();
    for r in runs {
        int_mid_sup.push(r.int_mid.last().expect("step 0 recorded").clone());
        mid_lim_sup.push(r.mid_lim.last().expect("step 0 recorded").clone());
        finals.push(r.last);
    }
    Ok(CouplingResult {
        epsilon: table.spec().epsilon,
        times,
        err_int_vs_mid,
        err_mid_vs_lim,
        int_mid_sup,
        mid_lim_sup,
        finals,
        escaped,
    })
}
