//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::geometry::ConvexSet;
use crate::problem::{make_demand_response, pair_toy, scalar_toy, ProblemInstance};
use crate::schedules::{validate_consensus_schedules, validate_optimizer_schedules, NoiseChannels, NoiseSchedule, Schedule};
use crate::topology::{parse_edge_list, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Consensus,
    Optimize,
    Compare,
    Accountant,
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Consensus => "consensus",
            Mode::Optimize => "optimize",
            Mode::Compare => "compare",
            Mode::Accountant => "accountant",
            Mode::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InstanceSpec {
    DemandResponse {
        agents: usize,
        periods: usize,
        #[serde(default = "one")]
        price_peak: f64,
        #[serde(default = "one")]
        price_shortfall: f64,
        #[serde(default)]
        seed: u64,
    },
    PairToy,
    ScalarToy,
    /// Instance JSON written by the `oracle` mode or [`ProblemInstance::to_json`].
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TopologySpec {
    ErdosRenyi {
        /// Required in consensus mode; otherwise taken from the instance.
        #[serde(default)]
        agents: Option<usize>,
        probability: f64,
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Edge-list file with `i j weight` lines.
    Edges {
        path: PathBuf,
        #[serde(default)]
        agents: Option<usize>,
    },
    Ring {
        #[serde(default)]
        agents: Option<usize>,
        weight: f64,
    },
    Complete {
        #[serde(default)]
        agents: Option<usize>,
        weight: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSet {
    pub chi: Schedule,
    pub gamma: Schedule,
    /// Unused in consensus mode.
    #[serde(default)]
    pub theta: Option<Schedule>,
}

impl Default for ScheduleSet {
    fn default() -> Self {
        ScheduleSet {
            chi: Schedule::Power { scale: 1.0, offset: 0.1, exponent: 0.9 },
            gamma: Schedule::Power { scale: 0.1, offset: 0.1, exponent: 1.0 },
            theta: Some(Schedule::Power { scale: 0.1, offset: 0.1, exponent: 0.96 }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub base: f64,
    pub growth: f64,
    pub exponent: f64,
    /// Per-channel overrides of the shared scale.
    #[serde(default)]
    pub lambda: Option<NoiseSchedule>,
    #[serde(default)]
    pub y: Option<NoiseSchedule>,
    #[serde(default)]
    pub z: Option<NoiseSchedule>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { enabled: true, base: 1.0, growth: 0.1, exponent: 0.2, lambda: None, y: None, z: None }
    }
}

impl NoiseSpec {
    pub fn shared(&self) -> NoiseSchedule {
        NoiseSchedule { base: self.base, growth: self.growth, exponent: self.exponent }
    }

    pub fn channels(&self) -> NoiseChannels {
        let s = self.shared();
        NoiseChannels { lambda: self.lambda.unwrap_or(s), y: self.y.unwrap_or(s), z: self.z.unwrap_or(s) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSpec {
    /// Defaults to the instance cap.
    #[serde(default)]
    pub rho1: Option<f64>,
    #[serde(default)]
    pub rho2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Zero,
    /// One vector per agent.
    Constant { values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsensusSpec {
    pub set: ConvexSet,
    #[serde(default = "zero_input")]
    pub input: InputSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Proposed,
    Pdp,
    GeoDp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::Pdp => "pdp",
            Method::GeoDp => "geo_dp",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSpec {
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    /// Geometric ratio of the budget-matched baseline.
    #[serde(default = "geo_ratio")]
    pub geo_ratio: f64,
    /// First-step value `γ_geo(1)`; defaults to the proposed method's `γ(1)`.
    #[serde(default)]
    pub geo_first_step: Option<f64>,
}

impl Default for CompareSpec {
    fn default() -> Self {
        CompareSpec { methods: all_methods(), geo_ratio: geo_ratio(), geo_first_step: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "oracle_step")]
    pub step: f64,
    #[serde(default = "oracle_iterations")]
    pub max_iterations: usize,
    #[serde(default = "oracle_tol")]
    pub tol: f64,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec { step: oracle_step(), max_iterations: oracle_iterations(), tol: oracle_tol() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    /// Adjacency constant `C` (or `C_r` in consensus mode).
    #[serde(default = "one")]
    pub sensitivity: f64,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        PrivacySpec { sensitivity: 1.0 }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional here; the CLI subcommand supplies it otherwise.
    #[serde(default)]
    pub mode: Option<Mode>,
    pub horizon: usize,
    #[serde(default = "one_usize")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub instance: Option<InstanceSpec>,
    pub topology: TopologySpec,
    #[serde(default)]
    pub schedules: ScheduleSet,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub steps: StepSpec,
    #[serde(default)]
    pub privacy: PrivacySpec,
    #[serde(default)]
    pub consensus: Option<ConsensusSpec>,
    #[serde(default)]
    pub compare: CompareSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub override_certificates: bool,
    #[serde(default)]
    pub override_step_caps: bool,
    /// Not part of the config hash.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Not part of the config hash.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Directory against which relative paths are resolved; not serialized.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn yes() -> bool {
    true
}
fn zero_input() -> InputSpec {
    InputSpec::Zero
}
fn all_methods() -> Vec<Method> {
    vec![Method::Proposed, Method::Pdp, Method::GeoDp]
}
fn geo_ratio() -> f64 {
    0.999
}
fn oracle_step() -> f64 {
    0.01
}
fn oracle_iterations() -> usize {
    500_000
}
fn oracle_tol() -> f64 {
    1e-9
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        Ok(config)
    }

    /// Fixes the mode, rejecting a conflicting `mode` key.
    pub fn with_mode(mut self, mode: Mode) -> Result<Self, HarnessError> {
        match self.mode {
            Some(m) if m != mode => Err(HarnessError::Config(format!("config declares mode {} but {} was requested", m.name(), mode.name()))),
            _ => {
                self.mode = Some(mode);
                Ok(self)
            }
        }
    }

    pub fn mode(&self) -> Result<Mode, HarnessError> {
        self.mode.ok_or_else(|| HarnessError::Config("no mode given".into()))
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// Hex SHA-256 of the canonical JSON of every semantic field.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("out_dir");
            map.remove("workers");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let mode = self.mode()?;
        if self.horizon == 0 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.seeds == 0 {
            return Err(HarnessError::Config("seeds must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(HarnessError::Config("workers must be at least 1".into()));
        }
        for s in [Some(self.schedules.chi), Some(self.schedules.gamma), self.schedules.theta].into_iter().flatten() {
            s.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.noise.enabled {
            let ch = self.noise.channels();
            for n in [ch.lambda, ch.y, ch.z] {
                n.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
            }
        }
        if !(self.privacy.sensitivity >= 0.0 && self.privacy.sensitivity.is_finite()) {
            return Err(HarnessError::Config("privacy.sensitivity must be a nonnegative number".into()));
        }
        match mode {
            Mode::Consensus => {
                let spec = self.consensus.as_ref().ok_or_else(|| HarnessError::Config("consensus mode needs a [consensus] table".into()))?;
                spec.set.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                if !spec.set.is_compact() {
                    return Err(HarnessError::Config("consensus set must be compact".into()));
                }
                if !self.override_certificates {
                    let cert = validate_consensus_schedules(&self.schedules.chi, &self.schedules.gamma);
                    if !cert.valid() {
                        return Err(HarnessError::Config(format!("schedule certificate failed: {}", cert.failed().join("; "))));
                    }
                }
                let w = self.weights(None)?;
                if let InputSpec::Constant { values } = &spec.input {
                    if values.len() != w.size() || values.iter().any(|v| v.len() != spec.set.dim()) {
                        return Err(HarnessError::Config("consensus inputs need one vector of the set dimension per agent".into()));
                    }
                }
            }
            Mode::Accountant => {
                let agents = match &self.instance {
                    Some(_) => Some(self.instance()?.num_agents()),
                    None => None,
                };
                self.weights(agents)?;
            }
            Mode::Optimize | Mode::Compare | Mode::Oracle => {
                let theta = self.schedules.theta.ok_or_else(|| HarnessError::Config("schedules.theta is required".into()))?;
                if mode != Mode::Oracle && !self.override_certificates {
                    let cert = validate_optimizer_schedules(&self.schedules.chi, &self.schedules.gamma, &theta);
                    if !cert.valid() {
                        return Err(HarnessError::Config(format!("schedule certificate failed: {}", cert.failed().join("; "))));
                    }
                }
                if mode == Mode::Compare {
                    if self.compare.methods.is_empty() {
                        return Err(HarnessError::Config("compare.methods must not be empty".into()));
                    }
                    if !(self.compare.geo_ratio > 0.0 && self.compare.geo_ratio < 1.0) {
                        return Err(HarnessError::Config("compare.geo_ratio must lie in (0, 1)".into()));
                    }
                }
                let inst = self.instance()?;
                self.weights(Some(inst.num_agents()))?;
            }
        }
        if let Some(InstanceSpec::File { path }) = &self.instance {
            if !self.resolve(path).exists() {
                return Err(HarnessError::Config(format!("instance file {} does not exist", path.display())));
            }
        }
        Ok(())
    }

    pub fn instance(&self) -> Result<ProblemInstance, HarnessError> {
        let spec = self.instance.as_ref().ok_or_else(|| HarnessError::Config("an [instance] table is required".into()))?;
        Ok(match spec {
            InstanceSpec::DemandResponse { agents, periods, price_peak, price_shortfall, seed } => {
                make_demand_response(*agents, *periods, *price_peak, *price_shortfall, *seed)?
            }
            InstanceSpec::PairToy => pair_toy(),
            InstanceSpec::ScalarToy => scalar_toy(),
            InstanceSpec::File { path } => {
                let full = self.resolve(path);
                let text = std::fs::read_to_string(&full).map_err(|e| HarnessError::Io(format!("{}: {e}", full.display())))?;
                ProblemInstance::from_json(&text)?
            }
        })
    }

    /// Weight matrix; `agents` is the instance size when one exists.
    pub fn weights(&self, agents: Option<usize>) -> Result<WeightMatrix, HarnessError> {
        let size = |declared: Option<usize>| -> Result<usize, HarnessError> {
            match (declared, agents) {
                (Some(d), Some(a)) if d != a => Err(HarnessError::Config(format!("topology has {d} agents but the instance has {a}"))),
                (Some(d), _) => Ok(d),
                (None, Some(a)) => Ok(a),
                (None, None) => Err(HarnessError::Config("topology.agents is required here".into())),
            }
        };
        let w = match &self.topology {
            TopologySpec::ErdosRenyi { agents: d, probability, scale, seed } => WeightMatrix::erdos_renyi(size(*d)?, *probability, *scale, *seed)?,
            TopologySpec::Ring { agents: d, weight } => WeightMatrix::ring(size(*d)?, *weight)?,
            TopologySpec::Complete { agents: d, weight } => WeightMatrix::complete(size(*d)?, *weight)?,
            TopologySpec::Edges { path, agents: d } => {
                let full = self.resolve(path);
                let text = std::fs::read_to_string(&full).map_err(|e| HarnessError::Io(format!("{}: {e}", full.display())))?;
                let edges = parse_edge_list(&text)?;
                let inferred = edges.iter().map(|e| e.i.max(e.j) + 1).max().unwrap_or(0);
                let m = match d.or(agents) {
                    Some(m) => m,
                    None => inferred,
                };
                WeightMatrix::from_edges(&edges, size(Some(m))?)?
            }
        };
        Ok(w)
    }

    pub fn theta(&self) -> Schedule {
        self.schedules.theta.unwrap_or(Schedule::Constant { value: 0.0 })
    }

    pub fn inputs(&self) -> Option<Vec<DVector<f64>>> {
        match self.consensus.as_ref()?.input {
            InputSpec::Zero => None,
            InputSpec::Constant { ref values } => Some(values.iter().map(|v| DVector::from_column_slice(v)).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
mode = "optimize"
horizon = 100
seeds = 2
[instance]
kind = "pair_toy"
[topology]
kind = "ring"
weight = 0.5
"#;

    #[test]
    fn minimal_config_parses_and_validates() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.validate().unwrap();
        assert_eq!(c.schedules, ScheduleSet::default());
        assert!(c.noise.enabled);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("seeds = 2", "seeds = 2\nhorizn = 5");
        assert!(ExperimentConfig::from_toml(&text).is_err());
        let text = MINIMAL.replace("weight = 0.5", "weight = 0.5\nwieght = 1");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_ignores_output_fields_only() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        b.workers = Some(7);
        assert_eq!(a.hash(), b.hash());
        b.base_seed = 1;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.noise.growth = 0.2;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn mode_conflicts_are_errors() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert!(c.clone().with_mode(Mode::Compare).is_err());
        assert_eq!(c.with_mode(Mode::Optimize).unwrap().mode, Some(Mode::Optimize));
    }

    #[test]
    fn missing_files_and_zero_seeds_fail_validation() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.seeds = 0;
        assert!(c.validate().is_err());
        let text = MINIMAL.replace("kind = \"pair_toy\"", "kind = \"file\"\npath = \"/nonexistent/instance.json\"");
        assert!(ExperimentConfig::from_toml(&text).unwrap().validate().is_err());
    }
}
