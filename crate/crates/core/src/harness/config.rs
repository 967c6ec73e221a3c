use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{domain_wall_config, neel_config, parse_bitstring};
use crate::error::{Error, Result};
use crate::evolve::TimeGrid;
use crate::model::DeviceParams;

pub const DEFAULT_SEED: u64 = 20180101;
pub const DEFAULT_SWEEP: [f64; 8] = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0];
pub const DEFAULT_WINDOW: [f64; 2] = [0.25, 1.0];
pub const DEFAULT_T_PHI_SCAN: [f64; 4] = [30.0, 20.0, 10.0, 5.0];
/// Step bound for quantum-jump runs, μs.
pub const DEFAULT_TRAJECTORY_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ImbalanceNeel,
    ImbalanceDomainWall,
    EthMatrices,
    HalfChainEntropy,
    EntropyComparison,
    DephasingCalibration,
    PostSelection,
    CouplingMatrix,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 8] = [
        ExperimentKind::ImbalanceNeel,
        ExperimentKind::ImbalanceDomainWall,
        ExperimentKind::EthMatrices,
        ExperimentKind::HalfChainEntropy,
        ExperimentKind::EntropyComparison,
        ExperimentKind::DephasingCalibration,
        ExperimentKind::PostSelection,
        ExperimentKind::CouplingMatrix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ImbalanceNeel => "imbalance-neel",
            ExperimentKind::ImbalanceDomainWall => "imbalance-domain-wall",
            ExperimentKind::EthMatrices => "eth-matrices",
            ExperimentKind::HalfChainEntropy => "half-chain-entropy",
            ExperimentKind::EntropyComparison => "entropy-comparison",
            ExperimentKind::DephasingCalibration => "dephasing-calibration",
            ExperimentKind::PostSelection => "post-selection",
            ExperimentKind::CouplingMatrix => "coupling-matrix",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ExperimentKind::ImbalanceNeel => {
                "site probabilities, even/odd imbalance and delta-n across a disorder sweep"
            }
            ExperimentKind::ImbalanceDomainWall => {
                "left/right imbalance from the domain-wall state across a disorder sweep"
            }
            ExperimentKind::EthMatrices => {
                "ensemble-averaged 1-, 2- and 5-qubit reduced density matrices"
            }
            ExperimentKind::HalfChainEntropy => {
                "half-chain entropy series, log fits and site-averaged entropy versus N"
            }
            ExperimentKind::EntropyComparison => {
                "interacting versus nearest-neighbour (free-fermion) entropy on paired disorder"
            }
            ExperimentKind::DephasingCalibration => {
                "damped Q7-Q8 and Q7-Q8-Q9 swaps for a range of dephasing times"
            }
            ExperimentKind::PostSelection => {
                "raw and excitation-post-selected site probabilities under decoherence"
            }
            ExperimentKind::CouplingMatrix => "derived coupling matrix, fields and their ranges",
        }
    }

    fn default_bounds(self) -> Vec<f64> {
        match self {
            ExperimentKind::EthMatrices => vec![0.0, 12.0],
            ExperimentKind::EntropyComparison => vec![12.0],
            ExperimentKind::PostSelection => vec![0.0, 12.0],
            ExperimentKind::DephasingCalibration | ExperimentKind::CouplingMatrix => vec![0.0],
            _ => DEFAULT_SWEEP.to_vec(),
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialState {
    Neel,
    DomainWall,
    /// Site 1 first.
    Bitstring(String),
}

impl InitialState {
    /// Configuration integer (site 1 is the most significant bit).
    pub fn config(&self, n_sites: usize) -> Result<usize> {
        match self {
            InitialState::Neel => Ok(neel_config(n_sites)),
            InitialState::DomainWall => Ok(domain_wall_config(n_sites)),
            InitialState::Bitstring(bits) => {
                if bits.len() != n_sites {
                    return Err(Error::Config(format!(
                        "bitstring '{bits}' has {} sites, device has {n_sites}",
                        bits.len()
                    )));
                }
                parse_bitstring(bits).map_err(|e| Error::Config(e.to_string()))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    Linear,
    /// `start` is the first positive sample; `t = 0` is prepended.
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub n_points: usize,
    pub spacing: Spacing,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            start: 0.0,
            stop: 1.0,
            n_points: 101,
            spacing: Spacing::Linear,
        }
    }
}

impl GridSpec {
    pub fn log_default() -> Self {
        GridSpec {
            start: 0.01,
            stop: 1.0,
            n_points: 30,
            spacing: Spacing::Log,
        }
    }

    pub fn build(&self) -> Result<TimeGrid> {
        let grid = match self.spacing {
            Spacing::Linear => {
                if self.start != 0.0 {
                    return Err(Error::Config("linear grids start at 0".into()));
                }
                TimeGrid::linear(self.stop, self.n_points)
            }
            Spacing::Log => TimeGrid::log(self.start, self.stop, self.n_points),
        };
        grid.map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EvolutionMode {
    /// Closed system in the initial state's excitation sector.
    UnitarySector,
    /// Dense RK4 on the master equation.
    LindbladDense {
        #[serde(default = "default_dense_step")]
        max_step: f64,
    },
    LindbladTrajectory {
        n_traj: usize,
        #[serde(default = "default_trajectory_step")]
        max_step: f64,
    },
}

fn default_dense_step() -> f64 {
    crate::evolve::DEFAULT_MAX_STEP
}

fn default_trajectory_step() -> f64 {
    DEFAULT_TRAJECTORY_STEP
}

impl EvolutionMode {
    pub fn is_open(&self) -> bool {
        !matches!(self, EvolutionMode::UnitarySector)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubsystemPreset {
    #[serde(rename = "q3-q7")]
    Q3Q7,
    #[serde(rename = "q1-q5")]
    Q1Q5,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Subsystem {
    Preset(SubsystemPreset),
    /// 1-based sites.
    Sites(Vec<usize>),
}

impl Default for Subsystem {
    fn default() -> Self {
        Subsystem::Preset(SubsystemPreset::Q3Q7)
    }
}

impl Subsystem {
    pub fn sites(&self) -> Vec<usize> {
        match self {
            Subsystem::Preset(SubsystemPreset::Q3Q7) => (3..=7).collect(),
            Subsystem::Preset(SubsystemPreset::Q1Q5) => (1..=5).collect(),
            Subsystem::Sites(s) => s.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShotSpec {
    pub enabled: bool,
    pub n_shots: u64,
}

impl Default for ShotSpec {
    fn default() -> Self {
        ShotSpec {
            enabled: false,
            n_shots: 3000,
        }
    }
}

/// One experiment run. Every field except `experiment` has a default;
/// `initial_state` and `disorder_bounds` default per experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub initial_state: Option<InitialState>,
    #[serde(default)]
    pub disorder_bounds: Option<Vec<f64>>,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub time_grid: GridSpec,
    /// Secondary grid for entropy experiments.
    #[serde(default = "GridSpec::log_default")]
    pub log_grid: GridSpec,
    #[serde(default = "default_evolution")]
    pub evolution: EvolutionMode,
    #[serde(default)]
    pub subsystem: Subsystem,
    #[serde(default = "default_window")]
    pub quasi_steady_window: [f64; 2],
    /// Times (μs) at which reduced density matrices are stored.
    #[serde(default = "default_matrix_times")]
    pub matrix_times: Vec<f64>,
    #[serde(default)]
    pub shots: ShotSpec,
    #[serde(default = "default_t_phi_scan")]
    pub t_phi_values: Vec<f64>,
    #[serde(default)]
    pub device: DeviceParams,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_realizations() -> usize {
    30
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

fn default_evolution() -> EvolutionMode {
    EvolutionMode::UnitarySector
}

fn default_window() -> [f64; 2] {
    DEFAULT_WINDOW
}

fn default_matrix_times() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn default_t_phi_scan() -> Vec<f64> {
    DEFAULT_T_PHI_SCAN.to_vec()
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            initial_state: None,
            disorder_bounds: None,
            n_realizations: default_realizations(),
            seed: DEFAULT_SEED,
            time_grid: GridSpec::default(),
            log_grid: GridSpec::log_default(),
            evolution: EvolutionMode::UnitarySector,
            subsystem: Subsystem::default(),
            quasi_steady_window: DEFAULT_WINDOW,
            matrix_times: default_matrix_times(),
            shots: ShotSpec::default(),
            t_phi_values: default_t_phi_scan(),
            device: DeviceParams::default(),
            output_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn initial_state(&self) -> InitialState {
        self.initial_state.clone().unwrap_or(match self.experiment {
            ExperimentKind::ImbalanceDomainWall => InitialState::DomainWall,
            _ => InitialState::Neel,
        })
    }

    pub fn bounds(&self) -> Vec<f64> {
        self.disorder_bounds
            .clone()
            .unwrap_or_else(|| self.experiment.default_bounds())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(self.experiment.name()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |msg: String| Err(Error::Config(msg));
        self.device
            .validate()
            .map_err(|e| Error::Config(format!("device: {e}")))?;
        let n = self.device.n_sites;
        self.initial_state().config(n)?;
        if self.n_realizations == 0 {
            return cfg_err("n_realizations must be positive".into());
        }
        if let Some(b) = self.bounds().iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return cfg_err(format!("disorder bound {b} must be finite and non-negative"));
        }
        if self.bounds().is_empty() {
            return cfg_err("disorder_bounds is empty".into());
        }
        let grid = self.time_grid.build()?;
        self.log_grid.build()?;
        let [lo, hi] = self.quasi_steady_window;
        if !(lo < hi) || lo < 0.0 {
            return cfg_err(format!("quasi-steady window [{lo}, {hi}] is empty"));
        }
        if !grid.times().iter().any(|&t| in_window(t, lo, hi)) {
            return cfg_err(format!("no grid point inside window [{lo}, {hi}]"));
        }
        let sites = self.subsystem.sites();
        if sites.is_empty() || sites.iter().any(|&s| s == 0 || s > n) {
            return cfg_err(format!("subsystem {sites:?} outside 1..={n}"));
        }
        let mut sorted = sites.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != sites.len() {
            return cfg_err(format!("subsystem {sites:?} repeats a site"));
        }
        if self.matrix_times.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
            return cfg_err("matrix_times must be non-negative".into());
        }
        if self.shots.enabled && self.shots.n_shots == 0 {
            return cfg_err("shot sampling enabled with n_shots = 0".into());
        }
        match &self.evolution {
            EvolutionMode::UnitarySector => {}
            EvolutionMode::LindbladDense { max_step } => {
                if !(*max_step > 0.0) {
                    return cfg_err("lindblad-dense max_step must be positive".into());
                }
            }
            EvolutionMode::LindbladTrajectory { n_traj, max_step } => {
                if *n_traj == 0 || !(*max_step > 0.0) {
                    return cfg_err("lindblad-trajectory needs n_traj > 0 and max_step > 0".into());
                }
            }
        }
        match self.experiment {
            ExperimentKind::PostSelection if !self.evolution.is_open() => cfg_err(
                "post-selection needs a lindblad evolution mode; a closed system keeps every shot"
                    .into(),
            ),
            ExperimentKind::EthMatrices if sites.len() < 2 => {
                cfg_err("eth-matrices needs a subsystem of at least 2 sites".into())
            }
            ExperimentKind::DephasingCalibration => {
                if n < 9 {
                    return cfg_err("dephasing-calibration uses sites 7 to 9".into());
                }
                if self.t_phi_values.iter().any(|&t| !(t > 0.0)) {
                    return cfg_err("t_phi_values must be positive".into());
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Inclusive window membership with a little slack for accumulated grid
/// rounding.
pub(crate) fn in_window(t: f64, lo: f64, hi: f64) -> bool {
    t >= lo - 1e-9 && t <= hi + 1e-9
}
