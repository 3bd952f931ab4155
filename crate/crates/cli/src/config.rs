use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dai_core::controller::{Checkpoint, ControllerSet, LinearPolicy, NetParams, Policy, PolicySpec, RawPolicy, ZeroPolicy};
use dai_core::cost::{CostModel, CostSpec};
use dai_core::dynamics::{Integrator, Mode, Scenario, SystemState, DEFAULT_SYNTHETIC_M};
use dai_core::grid::{self, PowerNetwork};
use dai_core::lyapunov::{SearchOptions, Tolerances};
use dai_core::training::TrainConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Name that selects the bundled 39-bus system instead of a file.
pub const BUILTIN_CASE39: &str = "case39";

/// Everything a subcommand needs. Input paths are made absolute and the
/// disturbance is inlined during [`RunConfig::resolve`], so a resolved
/// config replays from any working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub network: String,
    /// Replace the communication graph with all pairs at this weight.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complete_comm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub costs: Option<CostSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceInput>,
    pub policy: PolicyChoice,
    pub scenario: ScenarioSection,
    pub train: TrainConfig,
    pub certify: CertifySection,
    pub output_dir: String,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: BUILTIN_CASE39.into(),
            complete_comm: None,
            costs: None,
            disturbance: None,
            policy: PolicyChoice::default(),
            scenario: ScenarioSection::default(),
            train: TrainConfig::default(),
            certify: CertifySection::default(),
            output_dir: "out".into(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DisturbanceInput {
    File(String),
    Inline(DisturbanceSpec),
}

/// Disturbance file contents: a full vector or per-bus steps (1-based).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DisturbanceSpec {
    Vector(VectorDisturbance),
    Steps(StepDisturbance),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VectorDisturbance {
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepDisturbance {
    pub steps: Vec<BusStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusStep {
    pub bus: usize,
    pub p: f64,
}

impl DisturbanceSpec {
    pub fn to_vector(&self, n: usize) -> Result<Vec<f64>> {
        match self {
            DisturbanceSpec::Vector(v) => {
                if v.p.len() != n {
                    return Err(CliError::usage(format!(
                        "disturbance has {} entries for a {n}-bus network",
                        v.p.len()
                    )));
                }
                Ok(v.p.clone())
            }
            DisturbanceSpec::Steps(s) => {
                let mut p = vec![0.0; n];
                let mut seen = vec![false; n];
                for step in &s.steps {
                    if step.bus == 0 || step.bus > n {
                        return Err(CliError::usage(format!("disturbance bus {} outside 1..={n}", step.bus)));
                    }
                    if std::mem::replace(&mut seen[step.bus - 1], true) {
                        return Err(CliError::usage(format!("disturbance bus {} listed twice", step.bus)));
                    }
                    p[step.bus - 1] = step.p;
                }
                Ok(p)
            }
        }
    }
}

/// Controller used by `simulate`, `certify` and `equilibrium`, and the
/// warm start for `train` when it names a raw checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Zero,
    Linear(f64),
    Checkpoint(String),
}

impl Default for PolicyChoice {
    fn default() -> Self {
        PolicyChoice::Linear(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub mode: Mode,
    pub h: f64,
    pub horizon: f64,
    pub integrator: Integrator,
    pub stride: usize,
    /// Fill the `W` column of the trajectory CSV.
    pub lyapunov: bool,
    pub synthetic_m: f64,
    /// Starting state; the pre-disturbance equilibrium with s = 0 when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<SystemState>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            mode: Mode::DaiGeneral,
            // Forward Euler at 1 ms is unstable on the 39-bus system.
            h: 0.0005,
            horizon: 40.0,
            integrator: Integrator::Euler,
            stride: 1,
            lyapunov: false,
            synthetic_m: DEFAULT_SYNTHETIC_M,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifySection {
    /// Certify this CSV instead of re-simulating the scenario.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
    pub epsilon_grid: Vec<f64>,
    pub samples: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_rel: Option<f64>,
    pub fd_floor: f64,
}

impl Default for CertifySection {
    fn default() -> Self {
        let opts = SearchOptions::default();
        let tol = Tolerances::default();
        Self {
            trajectory: None,
            epsilon_grid: opts.grid,
            samples: opts.samples,
            tol_abs: tol.tol_abs,
            tol_rel: tol.tol_rel,
            fd_rel: tol.fd_rel,
            fd_floor: tol.fd_floor,
        }
    }
}

impl CertifySection {
    pub fn tolerances(&self) -> Tolerances {
        Tolerances {
            tol_abs: self.tol_abs,
            tol_rel: self.tol_rel,
            fd_rel: self.fd_rel,
            fd_floor: self.fd_floor,
        }
    }

    pub fn search_options(&self, seed: u64) -> SearchOptions {
        SearchOptions {
            grid: self.epsilon_grid.clone(),
            samples: self.samples,
            seed,
        }
    }
}

/// Reads a run config, or the config embedded in a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::input(path.display().to_string(), e.into()))?;
    let value = match value {
        serde_json::Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => {
            map.remove("config").expect("checked above")
        }
        other => other,
    };
    serde_json::from_value(value).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn absolute(path: &str) -> Result<String> {
    let p = PathBuf::from(path);
    let abs = std::fs::canonicalize(&p).map_err(|e| CliError::io(&p, e))?;
    Ok(abs.display().to_string())
}

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_digest(path: &str) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunConfig {
    /// Absolute input paths, inlined disturbance, and explicit seeds for
    /// every consumer. Returns the digests of the files still referenced.
    pub fn resolve(&mut self) -> Result<BTreeMap<String, String>> {
        let mut inputs = BTreeMap::new();
        if self.network != BUILTIN_CASE39 {
            self.network = absolute(&self.network)?;
            inputs.insert(self.network.clone(), file_digest(&self.network)?);
        }
        if let Some(DisturbanceInput::File(path)) = &self.disturbance {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let spec: DisturbanceSpec = serde_json::from_str(&text).map_err(|e| {
                CliError::usage(format!("{path}: expected {{\"p\": [...]}} or {{\"steps\": [...]}} ({e})"))
            })?;
            self.disturbance = Some(DisturbanceInput::Inline(spec));
        }
        if let PolicyChoice::Checkpoint(path) = &self.policy {
            let abs = absolute(path)?;
            inputs.insert(abs.clone(), file_digest(&abs)?);
            self.policy = PolicyChoice::Checkpoint(abs);
        }
        if let Some(path) = &self.certify.trajectory {
            let abs = absolute(path)?;
            inputs.insert(abs.clone(), file_digest(&abs)?);
            self.certify.trajectory = Some(abs);
        }
        let seed = self.seed;
        let costs = self.costs.get_or_insert_with(|| CostSpec {
            seed: Some(seed),
            ..CostSpec::default()
        });
        if costs.seed.is_none() {
            costs.seed = Some(seed);
        }
        self.train.seed = seed;
        Ok(inputs)
    }

    pub fn load_network(&self) -> Result<PowerNetwork> {
        let net = if self.network == BUILTIN_CASE39 {
            grid::case39()
        } else {
            grid::load_network(&self.network).map_err(|e| CliError::input(&self.network, e))?
        };
        match self.complete_comm {
            Some(q) => net.with_complete_comm(q).map_err(|e| CliError::input("complete_comm", e)),
            None => Ok(net),
        }
    }

    /// Cost model, drawing any missing coefficients from the cost seed.
    pub fn build_costs(&self, n: usize) -> Result<CostModel> {
        let spec = self.costs.clone().unwrap_or_default();
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.unwrap_or(self.seed));
        spec.build(n, &mut rng).map_err(|e| CliError::input("costs", e))
    }

    pub fn disturbance(&self, n: usize) -> Result<Vec<f64>> {
        match &self.disturbance {
            Some(DisturbanceInput::Inline(spec)) => spec.to_vector(n),
            Some(DisturbanceInput::File(_)) => unreachable!("disturbance files are inlined by resolve"),
            None => Err(CliError::usage("no disturbance given (use --p FILE or a \"disturbance\" section)")),
        }
    }

    pub fn load_policy(&self, n: usize) -> Result<LoadedPolicy> {
        let loaded = match &self.policy {
            PolicyChoice::Zero => LoadedPolicy::Zero(ZeroPolicy(n)),
            PolicyChoice::Linear(k) => {
                let set = ControllerSet::uniform(n, NetParams::linear(*k));
                set.check_constraints().map_err(|e| CliError::input("linear policy", e))?;
                LoadedPolicy::Net(set)
            }
            PolicyChoice::Checkpoint(path) => {
                let ck = Checkpoint::load(path).map_err(|e| CliError::input(path, e))?;
                match ck.policy {
                    PolicySpec::Raw(raw) => {
                        raw.validate().map_err(|e| CliError::input(path, e))?;
                        let set = raw.controllers();
                        LoadedPolicy::Raw(raw, set)
                    }
                    PolicySpec::Net(set) => {
                        set.check_constraints().map_err(|e| CliError::input(path, e))?;
                        LoadedPolicy::Net(set)
                    }
                    PolicySpec::Linear(lin) => LoadedPolicy::Linear(lin),
                }
            }
        };
        if loaded.policy().n() != n {
            return Err(CliError::usage(format!(
                "policy covers {} buses, network has {n}",
                loaded.policy().n()
            )));
        }
        Ok(loaded)
    }

    pub fn scenario(&self, p: Vec<f64>) -> Scenario {
        let s = &self.scenario;
        let scenario = Scenario::new(p, s.horizon, s.h, s.mode)
            .with_integrator(s.integrator)
            .with_stride(s.stride);
        match &s.initial {
            Some(x) => scenario.with_initial(x.clone()),
            None => scenario,
        }
    }
}

pub enum LoadedPolicy {
    Zero(ZeroPolicy),
    Linear(LinearPolicy),
    Net(ControllerSet),
    Raw(RawPolicy, ControllerSet),
}

impl LoadedPolicy {
    pub fn policy(&self) -> &dyn Policy {
        match self {
            LoadedPolicy::Zero(p) => p,
            LoadedPolicy::Linear(p) => p,
            LoadedPolicy::Net(p) => p,
            LoadedPolicy::Raw(_, p) => p,
        }
    }

    pub fn raw(&self) -> Option<&RawPolicy> {
        match self {
            LoadedPolicy::Raw(raw, _) => Some(raw),
            _ => None,
        }
    }
}
