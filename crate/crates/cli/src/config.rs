//! Experiment configuration: TOML on disk, with a JSON mirror.
//!
//! Every section has defaults, so an empty file is a valid configuration.
//! Unknown keys are rejected at every level.

use std::fs;
use std::path::{Path, PathBuf};

use ksmf_core::field::Grid2D;
use ksmf_core::mixture::GaussianMixture;
use ksmf_core::particles::{PairSumMethod, SdeConfig};
use ksmf_core::pde::{PdeConfig, Scheme};
use ksmf_core::potential::{MollifierKind, MollifierSpec, DEFAULT_TABLE_SAMPLES};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DEFAULT_EPS_CONVERGENCE: [f64; 4] = [0.4, 0.2, 0.1, 0.05];
pub const DEFAULT_EPS_COUPLING: [f64; 3] = [0.4, 0.2, 0.1];
pub const DEFAULT_N_COUPLING: usize = 2000;
pub const DEFAULT_N_CHAOS: [usize; 3] = [250, 1000, 4000];
pub const DEFAULT_EPS_CHAOS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    SolvePde,
    EpsConvergence,
    CouplingStudy,
    ChaosStudy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Half width: the domain is `[-L, L)²`.
    #[serde(rename = "L")]
    pub half_width: f64,
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            half_width: 16.0,
            n: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdeSection {
    pub chi: f64,
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub snapshot_stride: usize,
}

impl Default for PdeSection {
    fn default() -> Self {
        Self {
            chi: 1.0,
            dt: 2e-4,
            t_end: 0.5,
            scheme: Scheme::Imex,
            snapshot_stride: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MollifierSection {
    pub kind: MollifierKind,
    /// `0` or absent selects the local system where a single `ε` is used.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_list: Option<Vec<f64>>,
}

impl Default for MollifierSection {
    fn default() -> Self {
        Self {
            kind: MollifierKind::SmoothBump,
            epsilon: None,
            epsilon_list: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSection {
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "N_list", skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// When set, `ε = (λ ln N)^{-1/4}` per ensemble size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub dt: f64,
    pub n_replicas: usize,
    pub seed: u64,
    pub pair_sum: PairSumMethod,
    pub include_self: bool,
}

impl Default for ParticleSection {
    fn default() -> Self {
        Self {
            n: None,
            n_list: None,
            lambda: None,
            dt: 0.01,
            n_replicas: 5,
            seed: 42,
            pair_sum: PairSumMethod::Direct,
            include_self: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    /// Gaussian KDE bandwidth for marginal distances; at least `2h`.
    pub kde_bandwidth: f64,
    pub table_samples: usize,
    /// Run the interacting system in `coupling-study`.
    pub include_interacting: bool,
    /// Drive the limiting system with `v^ε` too; the intermediate-vs-limiting
    /// error must then vanish.
    pub same_v: bool,
    pub write_fields: bool,
    pub write_ensembles: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            kde_bandwidth: 0.3,
            table_samples: DEFAULT_TABLE_SAMPLES,
            include_interacting: true,
            same_v: false,
            write_fields: true,
            write_ensembles: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub grid: GridSection,
    pub pde: PdeSection,
    pub mollifier: MollifierSection,
    pub particles: ParticleSection,
    pub initial_data: GaussianMixture,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub study: StudySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            grid: GridSection::default(),
            pde: PdeSection::default(),
            mollifier: MollifierSection::default(),
            particles: ParticleSection::default(),
            initial_data: GaussianMixture::single(0.5),
            output_dir: None,
            study: StudySection::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        let is_json = path.extension().and_then(|e| e.to_str()) == Some("json");
        if is_json {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable in TOML")
    }

    pub fn grid(&self) -> Result<Grid2D, CliError> {
        Grid2D::new(self.grid.half_width, self.grid.n).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn pde_config(&self, epsilon: f64) -> Result<PdeConfig, CliError> {
        Ok(PdeConfig {
            chi: self.pde.chi,
            epsilon,
            mollifier: self.mollifier.kind,
            dt: self.pde.dt,
            t_end: self.pde.t_end,
            grid: self.grid()?,
            scheme: self.pde.scheme,
            snapshot_stride: self.pde.snapshot_stride,
        })
    }

    pub fn sde_config(&self, n: usize, epsilon: f64) -> SdeConfig {
        SdeConfig {
            n_particles: n,
            epsilon,
            chi: self.pde.chi,
            dt: self.particles.dt,
            t_end: self.pde.t_end,
            seed: self.particles.seed,
            lambda: None,
            n_replicas: self.particles.n_replicas,
        }
    }

    /// `ε` for one ensemble size, from `λ` when it is set.
    pub fn chaos_epsilon(&self, n: usize) -> f64 {
        match self.particles.lambda {
            Some(l) => ksmf_core::particles::cutoff_epsilon(l, n),
            None => self.mollifier.epsilon.unwrap_or(DEFAULT_EPS_CHAOS),
        }
    }

    /// Fills command-specific defaults so the manifest echoes what actually ran.
    pub fn resolve(mut self, command: Command) -> Self {
        match command {
            Command::SolvePde => {
                self.mollifier.epsilon.get_or_insert(0.0);
            }
            Command::EpsConvergence => {
                self.mollifier
                    .epsilon_list
                    .get_or_insert_with(|| DEFAULT_EPS_CONVERGENCE.to_vec());
            }
            Command::CouplingStudy => {
                self.mollifier
                    .epsilon_list
                    .get_or_insert_with(|| DEFAULT_EPS_COUPLING.to_vec());
                self.particles.n.get_or_insert(DEFAULT_N_COUPLING);
            }
            Command::ChaosStudy => {
                self.particles.n_list.get_or_insert_with(|| DEFAULT_N_CHAOS.to_vec());
                if self.particles.lambda.is_none() {
                    self.mollifier.epsilon.get_or_insert(DEFAULT_EPS_CHAOS);
                }
            }
        }
        self
    }

    /// Checks a resolved configuration for `command`; returns warnings.
    pub fn validate(&self, command: Command) -> Result<Vec<String>, CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let grid = self.grid()?;
        self.initial_data.validate()?;
        let mut warnings = self.pde_config(0.0)?.validate()?;
        let check_eps = |eps: f64, allow_zero: bool| -> Result<(), CliError> {
            if eps == 0.0 && allow_zero {
                return Ok(());
            }
            MollifierSpec::new(self.mollifier.kind, eps)?;
            Ok(())
        };
        match command {
            Command::SolvePde => check_eps(self.mollifier.epsilon.unwrap_or(0.0), true)?,
            Command::EpsConvergence | Command::CouplingStudy => {
                let list = self.mollifier.epsilon_list.as_deref().unwrap_or(&[]);
                if list.is_empty() {
                    return bad("mollifier.epsilon_list is empty".into());
                }
                let allow_zero = command == Command::EpsConvergence;
                for &e in list {
                    check_eps(e, allow_zero)?;
                }
                if list.windows(2).any(|w| !(w[1] <= w[0])) {
                    return bad(format!("mollifier.epsilon_list must be nonincreasing, got {list:?}"));
                }
            }
            Command::ChaosStudy => {}
        }
        if matches!(command, Command::CouplingStudy | Command::ChaosStudy) {
            let sizes: Vec<usize> = match command {
                Command::CouplingStudy => self.particles.n.into_iter().collect(),
                _ => self.particles.n_list.clone().unwrap_or_default(),
            };
            if sizes.is_empty() {
                return bad("no ensemble size given".into());
            }
            if command == Command::ChaosStudy && sizes.windows(2).any(|w| !(w[1] > w[0])) {
                return bad(format!("particles.N_list must be increasing, got {sizes:?}"));
            }
            for &n in &sizes {
                let eps = match command {
                    Command::ChaosStudy => self.chaos_epsilon(n),
                    _ => self.mollifier.epsilon_list.as_ref().map_or(0.3, |l| l[0]),
                };
                self.sde_config(n, eps).validate()?;
                check_eps(eps, false)?;
            }
            if let Some(l) = self.particles.lambda {
                if !(l > 0.0) || !l.is_finite() {
                    return bad(format!("particles.lambda must be positive, got {l}"));
                }
            }
            if self.study.kde_bandwidth < 2.0 * grid.h() {
                return bad(format!(
                    "study.kde_bandwidth = {} is below twice the grid spacing {}",
                    self.study.kde_bandwidth,
                    grid.h()
                ));
            }
            if self.study.table_samples < ksmf_core::potential::MIN_TABLE_SAMPLES {
                return bad(format!(
                    "study.table_samples must be at least {}",
                    ksmf_core::potential::MIN_TABLE_SAMPLES
                ));
            }
            let ratio = self.particles.dt / self.pde.dt;
            if (ratio - ratio.round()).abs() > 1e-6 * ratio {
                warnings.push(format!(
                    "particle dt {} is not a multiple of the PDE dt {}; v is interpolated between snapshots",
                    self.particles.dt, self.pde.dt
                ));
            }
        }
        Ok(warnings)
    }
}
