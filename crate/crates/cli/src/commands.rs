//! The study subcommands. Each writes its outputs under the run directory and
//! returns what goes into the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ksmf_core::diagnostics::{
    fit_rate, fmt_f64, l1_distance, l2_distance, relative_entropy, write_records_csv,
    DiagnosticsError, DiagnosticsRecord, RateFit, TAIL_MASS_LIMIT,
};
use ksmf_core::field::io::{read_snapshot, write_snapshot};
use ksmf_core::field::{kde, DensityField, FieldRole};
use ksmf_core::particles::coupling::{coupled_run, ConcentrationSeries, CouplingOptions, Statistic};
use ksmf_core::particles::io::write_ensemble;
use ksmf_core::particles::ParticleEnsemble;
use ksmf_core::pde::{eps_convergence_study, solve, solve_with, PdeConfig, PdeSolver, PdeState, Scheme, Trajectory};
use ksmf_core::potential::{MollifierKind, MollifierSpec, PotentialTable};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::{prepare_dir, write_text, ValidityFlags};

pub const RATES_FILE: &str = "rates.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const DISTANCES_FILE: &str = "distances.csv";

/// What a finished (or guard-stopped) command reports.
#[derive(Debug, Default)]
pub struct Outcome {
    pub flags: ValidityFlags,
    pub warnings: Vec<String>,
    pub summary: Value,
    /// Set when a guard stopped the run after partial outputs were written.
    pub failure: Option<CliError>,
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Slope fit over `(scale, error)` pairs, or `None` with fewer than two usable points.
fn fit(points: &[(f64, f64)]) -> Option<RateFit> {
    let mut seen = BTreeMap::new();
    for &(s, e) in points {
        if s > 0.0 && e > 0.0 {
            seen.entry(s.to_bits()).or_insert((s, e));
        }
    }
    let pts: Vec<(f64, f64)> = seen.into_values().collect();
    fit_rate(&pts).ok()
}

fn u_meta(cfg: &PdeConfig, step: u64) -> Value {
    json!({
        "quantity": "u",
        "chi": cfg.chi,
        "epsilon": cfg.epsilon,
        "mollifier": cfg.mollifier,
        "step": step,
    })
}

fn initial_density(config: &ExperimentConfig) -> Result<DensityField, CliError> {
    Ok(config.initial_data.sample_to_grid(config.grid()?)?)
}

pub fn solve_pde(config: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let pde = config.pde_config(config.mollifier.epsilon.unwrap_or(0.0))?;
    let solver = PdeSolver::new(pde)?;
    let u0 = initial_density(config)?;
    prepare_dir(out, &["fields"])?;
    let fields = out.join("fields");
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let result = solve_with(&solver, &u0, |s, r| {
        records.push(*r);
        if config.study.write_fields {
            write_snapshot(
                &fields.join(format!("u_{:07}.json", s.step)),
                &s.u,
                s.t,
                Some(u_meta(&pde, s.step)),
            )?;
            write_snapshot(&fields.join(format!("v_{:07}.json", s.step)), &s.v, s.t, None)?;
        }
        Ok(())
    });
    let mut csv = Vec::new();
    write_records_csv(&mut csv, &records).map_err(CliError::io(out.join(DIAGNOSTICS_FILE)))?;
    write_text(out.join(DIAGNOSTICS_FILE), &String::from_utf8(csv).expect("ascii"))?;

    let mut outcome = Outcome::default();
    match result {
        Ok(w) => outcome.warnings = w,
        Err(e) => {
            let e = CliError::from(e);
            match e {
                CliError::BlowUp(_) => {
                    outcome.flags.blow_up = true;
                    outcome.failure = Some(e);
                }
                e => return Err(e),
            }
        }
    }
    outcome.flags.tail_mass = records.iter().any(|r| r.tail_mass > TAIL_MASS_LIMIT);
    let max_mass_error = records.iter().map(|r| (r.mass - 1.0).abs()).fold(0.0, f64::max);
    let max_f_increment = records
        .windows(2)
        .map(|w| w[1].f_lyap - w[0].f_lyap)
        .fold(f64::NEG_INFINITY, f64::max);
    let m2_rates: Vec<f64> = records
        .windows(2)
        .map(|w| (w[1].m2 - w[0].m2) / (w[1].t - w[0].t))
        .collect();
    outcome.summary = json!({
        "epsilon": pde.epsilon,
        "n_snapshots": records.len(),
        "final_t": records.last().map(|r| r.t),
        "max_mass_error": max_mass_error,
        "max_f_lyap_increment": max_f_increment,
        "m2_rate_min": m2_rates.iter().copied().fold(f64::INFINITY, f64::min),
        "m2_rate_max": m2_rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "max_sup": records.iter().map(|r| r.sup).fold(0.0, f64::max),
    });
    Ok(outcome)
}

pub fn eps_convergence(config: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let list = config.mollifier.epsilon_list.clone().unwrap_or_default();
    let u0 = initial_density(config)?;
    let base = config.pde_config(0.0)?;
    let rows = eps_convergence_study(&u0, &base, &list)?;
    prepare_dir(out, &[])?;
    let mut csv = String::from("epsilon,sup_l1,sup_l2,h1,tail_flagged,valid\n");
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(r.epsilon),
            fmt_f64(r.sup_l1),
            fmt_f64(r.sup_l2),
            fmt_f64(r.h1),
            r.tail_flagged,
            !r.tail_flagged
        );
    }
    write_text(out.join(RATES_FILE), &csv)?;

    let valid: Vec<_> = rows.iter().filter(|r| !r.tail_flagged).collect();
    let fits = |f: fn(&ksmf_core::pde::EpsErrorRow) -> f64| {
        fit(&valid.iter().map(|r| (r.epsilon, f(r))).collect::<Vec<_>>())
    };
    let mut slopes = serde_json::Map::new();
    for (name, f) in [
        ("sup_l1", (|r| r.sup_l1) as fn(&ksmf_core::pde::EpsErrorRow) -> f64),
        ("sup_l2", |r| r.sup_l2),
        ("h1", |r| r.h1),
    ] {
        if let Some(fit) = fits(f) {
            slopes.insert(name.into(), serde_json::to_value(fit).expect("fit serializes"));
        }
    }
    Ok(Outcome {
        flags: ValidityFlags {
            tail_mass: rows.iter().any(|r| r.tail_flagged),
            ..Default::default()
        },
        warnings: base.validate()?,
        summary: json!({ "rows": rows, "fits": slopes }),
        failure: None,
    })
}

fn write_replica_ensembles(dir: &Path, prefix: &str, ensembles: &[&ParticleEnsemble]) -> Result<(), CliError> {
    for e in ensembles {
        let tag = serde_json::to_value(e.system).expect("tag serializes");
        let path = dir.join(format!("{prefix}_{}.json", tag.as_str().unwrap_or("system")));
        write_ensemble(&path, e)?;
    }
    Ok(())
}

fn nonlocal_run(
    config: &ExperimentConfig,
    u0: &DensityField,
    eps: f64,
) -> Result<(Trajectory, PotentialTable), CliError> {
    let traj = solve(u0, &config.pde_config(eps)?)?;
    let spec = MollifierSpec::new(config.mollifier.kind, eps)?;
    let table = PotentialTable::build(config.pde.chi, spec, config.study.table_samples)?;
    Ok((traj, table))
}

#[derive(Debug, Clone, Serialize)]
struct CouplingRow {
    epsilon: f64,
    /// `max_i Ê sup_t |X̄_i - X̂_i|²`.
    err_mid_vs_lim: Statistic,
    /// Particle average of `Ê sup_t |X̄_i - X̂_i|²`.
    err_mid_vs_lim_mean: Statistic,
    err_int_vs_mid: Option<Statistic>,
    escaped: bool,
    tail_flagged: bool,
}

impl CouplingRow {
    fn valid(&self) -> bool {
        !(self.escaped || self.tail_flagged)
    }
}

pub fn coupling_study(config: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let list = config.mollifier.epsilon_list.clone().unwrap_or_default();
    let n = config.particles.n.unwrap_or(crate::config::DEFAULT_N_COUPLING);
    let u0 = initial_density(config)?;
    let local = if config.study.same_v {
        None
    } else {
        Some(solve(&u0, &config.pde_config(0.0)?)?)
    };
    let local_series = local.as_ref().map(ConcentrationSeries::from_trajectory);
    prepare_dir(out, &["ensembles"])?;
    let options = CouplingOptions {
        include_interacting: config.study.include_interacting,
        include_self: config.particles.include_self,
        pair_sum: config.particles.pair_sum,
    };

    let mut done: BTreeMap<u64, CouplingRow> = BTreeMap::new();
    let mut rows = Vec::new();
    for &eps in &list {
        if let Some(row) = done.get(&eps.to_bits()) {
            rows.push(row.clone());
            continue;
        }
        let (traj, table) = nonlocal_run(config, &u0, eps)?;
        let nonlocal = ConcentrationSeries::from_trajectory(&traj);
        let limiting = local_series.as_ref().unwrap_or(&nonlocal);
        let sde = config.sde_config(n, eps);
        let result = coupled_run(&sde, &config.initial_data, limiting, &nonlocal, &table, options)?;
        let mut csv = Vec::new();
        result
            .write_csv(&mut csv)
            .map_err(CliError::io(out.join("coupling.csv")))?;
        write_text(
            out.join(format!("coupling_eps{eps}.csv")),
            &String::from_utf8(csv).expect("ascii"),
        )?;
        if config.study.write_ensembles {
            let f = &result.finals[0];
            let mut all = vec![&f.intermediate, &f.limiting];
            all.extend(f.interacting.as_ref());
            write_replica_ensembles(&out.join("ensembles"), &format!("eps{eps}_r0"), &all)?;
        }
        let row = CouplingRow {
            epsilon: eps,
            err_mid_vs_lim: result.max_mid_vs_lim(),
            err_mid_vs_lim_mean: result.mean_mid_vs_lim(),
            err_int_vs_mid: options.include_interacting.then(|| result.max_int_vs_mid()),
            escaped: result.escaped,
            tail_flagged: traj.tail_flagged || local.as_ref().is_some_and(|t| t.tail_flagged),
        };
        done.insert(eps.to_bits(), row.clone());
        rows.push(row);
    }

    let mut csv = String::from(
        "epsilon,err_mid_vs_lim,err_mid_vs_lim_se,err_mid_vs_lim_mean,err_mid_vs_lim_mean_se,err_int_vs_mid,err_int_vs_mid_se,escaped,tail_flagged,valid\n",
    );
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            fmt_f64(r.epsilon),
            fmt_f64(r.err_mid_vs_lim.mean),
            fmt_f64(r.err_mid_vs_lim.std_err),
            fmt_f64(r.err_mid_vs_lim_mean.mean),
            fmt_f64(r.err_mid_vs_lim_mean.std_err),
            csv_opt(r.err_int_vs_mid.map(|s| s.mean)),
            csv_opt(r.err_int_vs_mid.map(|s| s.std_err)),
            r.escaped,
            r.tail_flagged,
            r.valid()
        );
    }
    write_text(out.join(RATES_FILE), &csv)?;

    let valid: Vec<&CouplingRow> = rows.iter().filter(|r| r.valid()).collect();
    let slope = fit(&valid.iter().map(|r| (r.epsilon, r.err_mid_vs_lim.mean)).collect::<Vec<_>>());
    let slope_mean = fit(&valid.iter().map(|r| (r.epsilon, r.err_mid_vs_lim_mean.mean)).collect::<Vec<_>>());
    let mut warnings = config.pde_config(0.0)?.validate()?;
    if !options.include_interacting {
        warnings.push("interacting system skipped; err_int_vs_mid is empty".into());
    }
    Ok(Outcome {
        flags: ValidityFlags {
            tail_mass: rows.iter().any(|r| r.tail_flagged),
            escape: rows.iter().any(|r| r.escaped),
            blow_up: false,
        },
        warnings,
        summary: json!({
            "n_particles": n,
            "same_v": config.study.same_v,
            "rows": rows,
            "fit_err_mid_vs_lim": slope,
            "fit_err_mid_vs_lim_mean": slope_mean,
        }),
        failure: None,
    })
}

#[derive(Debug, Clone, Serialize)]
struct ChaosRow {
    n: usize,
    epsilon: f64,
    err_int_vs_mid: Statistic,
    kde_l1: Statistic,
    min_ckp_slack: Option<f64>,
    ckp_pairs_evaluated: usize,
    ckp_pairs_skipped: usize,
    escaped: bool,
    tail_flagged: bool,
}

impl ChaosRow {
    fn valid(&self) -> bool {
        !(self.escaped || self.tail_flagged)
    }
}

/// Strictly decreasing beyond one combined standard error, or `None` below two rows.
fn decreasing(stats: &[Statistic]) -> Option<bool> {
    (stats.len() >= 2).then(|| stats.windows(2).all(|w| w[0].exceeds(&w[1])))
}

pub fn chaos_study(config: &ExperimentConfig, out: &Path) -> Result<Outcome, CliError> {
    let sizes = config.particles.n_list.clone().unwrap_or_default();
    let u0 = initial_density(config)?;
    prepare_dir(out, &["ensembles"])?;
    let options = CouplingOptions {
        include_interacting: true,
        include_self: config.particles.include_self,
        pair_sum: config.particles.pair_sum,
    };
    let bandwidth = config.study.kde_bandwidth;
    let mut cache: BTreeMap<u64, (ConcentrationSeries, DensityField, bool, PotentialTable)> = BTreeMap::new();
    let mut rows = Vec::new();
    for &n in &sizes {
        let eps = config.chaos_epsilon(n);
        if !cache.contains_key(&eps.to_bits()) {
            let (traj, table) = nonlocal_run(config, &u0, eps)?;
            let final_u = traj.snapshots.last().expect("at least one snapshot").u.clone();
            cache.insert(
                eps.to_bits(),
                (ConcentrationSeries::from_trajectory(&traj), final_u, traj.tail_flagged, table),
            );
        }
        let (series, u_end, tail_flagged, table) = &cache[&eps.to_bits()];
        // Only the interacting and intermediate systems matter here, so the
        // limiting system is driven by the same field.
        let result = coupled_run(&config.sde_config(n, eps), &config.initial_data, series, series, table, options)?;
        let mut l1 = Vec::new();
        let mut min_slack = f64::INFINITY;
        let (mut evaluated, mut skipped) = (0usize, 0usize);
        for f in &result.finals {
            let ens = f.interacting.as_ref().expect("interacting system requested");
            let est = kde(&ens.positions, bandwidth, *u_end.grid())?;
            l1.push(l1_distance(&est, u_end)?);
            // A KDE tail where u(T) underflows makes H(f|g) undefined; such
            // pairs are counted but not evaluated.
            match relative_entropy(&est, u_end) {
                Ok(re) => {
                    min_slack = min_slack.min(re.ckp_slack);
                    evaluated += 1;
                }
                Err(DiagnosticsError::MaskTooSmall { .. }) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
        if config.study.write_ensembles {
            let f = &result.finals[0];
            let mut all = vec![&f.intermediate];
            all.extend(f.interacting.as_ref());
            write_replica_ensembles(&out.join("ensembles"), &format!("n{n}_r0"), &all)?;
        }
        rows.push(ChaosRow {
            n,
            epsilon: eps,
            err_int_vs_mid: result.max_int_vs_mid(),
            kde_l1: Statistic::from_samples(&l1),
            min_ckp_slack: (evaluated > 0).then_some(min_slack),
            ckp_pairs_evaluated: evaluated,
            ckp_pairs_skipped: skipped,
            escaped: result.escaped,
            tail_flagged: *tail_flagged,
        });
    }

    let mut csv = String::from(
        "n,epsilon,err_int_vs_mid,err_int_vs_mid_se,kde_l1,kde_l1_se,min_ckp_slack,escaped,tail_flagged,valid\n",
    );
    for r in &rows {
        csv += &format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.n,
            fmt_f64(r.epsilon),
            fmt_f64(r.err_int_vs_mid.mean),
            fmt_f64(r.err_int_vs_mid.std_err),
            fmt_f64(r.kde_l1.mean),
            fmt_f64(r.kde_l1.std_err),
            csv_opt(r.min_ckp_slack),
            r.escaped,
            r.tail_flagged,
            r.valid()
        );
    }
    write_text(out.join(RATES_FILE), &csv)?;

    let valid: Vec<&ChaosRow> = rows.iter().filter(|r| r.valid()).collect();
    let err_trend = decreasing(&valid.iter().map(|r| r.err_int_vs_mid).collect::<Vec<_>>());
    let kde_trend = decreasing(&valid.iter().map(|r| r.kde_l1).collect::<Vec<_>>());
    let epsilon_by_n: BTreeMap<String, f64> = rows.iter().map(|r| (r.n.to_string(), r.epsilon)).collect();
    Ok(Outcome {
        flags: ValidityFlags {
            tail_mass: rows.iter().any(|r| r.tail_flagged),
            escape: rows.iter().any(|r| r.escaped),
            blow_up: false,
        },
        warnings: config.pde_config(0.0)?.validate()?,
        summary: json!({
            "kde_bandwidth": bandwidth,
            "epsilon_by_n": epsilon_by_n,
            "rows": rows,
            "err_int_vs_mid_decreasing": err_trend,
            "kde_l1_decreasing": kde_trend,
            "min_ckp_slack": rows.iter().filter_map(|r| r.min_ckp_slack).reduce(f64::min),
            "ckp_pairs_evaluated": rows.iter().map(|r| r.ckp_pairs_evaluated).sum::<usize>(),
            "ckp_pairs_skipped": rows.iter().map(|r| r.ckp_pairs_skipped).sum::<usize>(),
        }),
        failure: None,
    })
}

/// Recomputes the record of a stored density snapshot.
pub fn diagnose_snapshot(path: &Path) -> Result<(DensityField, DiagnosticsRecord), CliError> {
    let (header, u) = read_snapshot(path)?;
    if u.role() != FieldRole::Density {
        return Err(CliError::Config(format!("{} is not a density snapshot", path.display())));
    }
    let meta = header
        .meta
        .as_ref()
        .ok_or_else(|| CliError::Corrupt(format!("{}: missing solver metadata", path.display())))?;
    let field = |k: &str| {
        meta.get(k)
            .cloned()
            .ok_or_else(|| CliError::Corrupt(format!("{}: metadata lacks {k}", path.display())))
    };
    let parse = |k: &str| -> Result<f64, CliError> {
        field(k)?
            .as_f64()
            .ok_or_else(|| CliError::Corrupt(format!("{}: {k} is not a number", path.display())))
    };
    let mollifier: MollifierKind = serde_json::from_value(field("mollifier")?)
        .map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))?;
    let step = field("step")?.as_u64().unwrap_or(0);
    // Only chi, epsilon and the grid enter the record; the step size is irrelevant.
    let cfg = PdeConfig {
        chi: parse("chi")?,
        epsilon: parse("epsilon")?,
        mollifier,
        dt: 1.0,
        t_end: 1.0,
        grid: *u.grid(),
        scheme: Scheme::Imex,
        snapshot_stride: 1,
    };
    let solver = PdeSolver::new(cfg).map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))?;
    let v = solver.concentration(&u);
    let state = PdeState {
        u,
        v,
        t: header.time,
        step,
    };
    let record = solver.record(&state)?;
    Ok((state.u, record))
}

/// Records for one or two snapshots, plus distances for a pair.
pub fn diagnose(paths: &[PathBuf]) -> Result<(String, Option<String>, Value), CliError> {
    let mut fields = Vec::new();
    let mut records = Vec::new();
    for p in paths {
        let (u, r) = diagnose_snapshot(p)?;
        fields.push(u);
        records.push(r);
    }
    let mut csv = Vec::new();
    write_records_csv(&mut csv, &records).expect("writing to memory");
    let records_csv = String::from_utf8(csv).expect("ascii");
    let mut summary = json!({ "snapshots": paths, "records": records.len() });
    let distances = if let [f, g] = fields.as_slice() {
        let re = relative_entropy(f, g)?;
        let l1 = l1_distance(f, g)?;
        let l2 = l2_distance(f, g)?;
        summary["ckp_slack"] = json!(re.ckp_slack);
        Some(format!(
            "l1,l2,relative_entropy,ckp_slack,masked_mass\n{},{},{},{},{}\n",
            fmt_f64(l1),
            fmt_f64(l2),
            fmt_f64(re.value),
            fmt_f64(re.ckp_slack),
            fmt_f64(re.masked_mass)
        ))
    } else {
        None
    };
    Ok((records_csv, distances, summary))
}
