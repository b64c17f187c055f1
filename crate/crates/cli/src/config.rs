//! Run configuration: profiles, overrides and seed derivation.

use std::path::{Path, PathBuf};

use graybox::control::ControlSettings;
use graybox::noise::TimeGrid;
use graybox::pulses::TOTAL_TIME;
use graybox::training::TrainConfig;
use graybox::{Gate, ModelConfig, NoiseKind, NoiseModel, RngSeed, SimConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-scale runs: 5000 records (10000 at g ≥ 0.5), M = 3000, K = 2000, 200 epochs.
    Paper,
    /// Quick runs: 500 records, M = 1000, K = 500, 50 epochs.
    Desk,
}

impl Profile {
    pub fn dataset_size(self, coupling: f64) -> usize {
        match self {
            Profile::Paper if coupling >= 0.5 => 10_000,
            Profile::Paper => 5000,
            Profile::Desk => 500,
        }
    }

    pub fn time_steps(self) -> usize {
        match self {
            Profile::Paper => 3000,
            Profile::Desk => 1000,
        }
    }

    pub fn realizations(self) -> usize {
        match self {
            Profile::Paper => 2000,
            Profile::Desk => 500,
        }
    }

    pub fn epochs(self) -> usize {
        match self {
            Profile::Paper => 200,
            Profile::Desk => 50,
        }
    }
}

/// Everything needed to reproduce a run. Optional fields override the profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub noise: NoiseKind,
    pub couplings: Vec<f64>,
    /// RTN switching rate; OU parameters follow by spectrum matching.
    pub gamma: f64,
    pub profile: Profile,
    pub dataset_size: Option<usize>,
    pub time_steps: Option<usize>,
    pub realizations: Option<usize>,
    pub epochs: Option<usize>,
    pub gates: Vec<Gate>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub control: ControlSettings,
    pub seed: u64,
    /// Output directory; not part of the recorded configuration.
    #[serde(skip)]
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "graybox".into(),
            noise: NoiseKind::Rtn,
            couplings: vec![0.1],
            gamma: 1.0,
            profile: Profile::Desk,
            dataset_size: None,
            time_steps: None,
            realizations: None,
            epochs: None,
            gates: Gate::ALL.to_vec(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            control: ControlSettings::default(),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.couplings.is_empty() {
            return Err(CliError::Usage("at least one coupling g is required".into()));
        }
        if let Some(g) = self.couplings.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
            return Err(CliError::Usage(format!("coupling g must be positive, got {g}")));
        }
        if self.gates.is_empty() {
            return Err(CliError::Usage("at least one gate is required".into()));
        }
        self.model.validate()?;
        self.train_config().validate()?;
        self.control.validate()?;
        NoiseModel::from_kind(self.noise, self.gamma)?;
        Ok(())
    }

    pub fn noise_model(&self) -> CliResult<NoiseModel> {
        Ok(NoiseModel::from_kind(self.noise, self.gamma)?)
    }

    pub fn dataset_size(&self, coupling: f64) -> usize {
        self.dataset_size.unwrap_or_else(|| self.profile.dataset_size(coupling))
    }

    fn grid(&self) -> CliResult<TimeGrid> {
        Ok(TimeGrid::new(TOTAL_TIME, self.time_steps.unwrap_or(self.profile.time_steps()))?)
    }

    /// Monte-Carlo settings for generating data at `coupling`.
    pub fn sim_config(&self, coupling: f64) -> CliResult<SimConfig> {
        Ok(SimConfig {
            grid: self.grid()?,
            realizations: self.realizations.unwrap_or(self.profile.realizations()),
            coupling,
            noise: self.noise_model()?,
            seed: RngSeed(self.seed),
        })
    }

    /// Copy with profile-derived values written out, as embedded in outputs.
    /// Dataset sizes stay per-coupling and are recorded next to each dataset.
    pub fn resolved(&self) -> RunConfig {
        let train = self.train_config();
        RunConfig {
            time_steps: Some(self.time_steps.unwrap_or(self.profile.time_steps())),
            realizations: Some(self.realizations.unwrap_or(self.profile.realizations())),
            epochs: Some(train.epochs),
            train,
            ..self.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { epochs: self.epochs.unwrap_or(self.profile.epochs()), ..self.train.clone() }
    }

    fn coupling_seed(&self, stream: u64, coupling: f64) -> RngSeed {
        RngSeed(self.seed).derive(stream).derive(coupling.to_bits()).derive(self.noise as u64)
    }

    pub fn dataset_seed(&self, coupling: f64) -> RngSeed {
        self.coupling_seed(1, coupling)
    }

    pub fn train_seed(&self, coupling: f64) -> RngSeed {
        self.coupling_seed(2, coupling)
    }

    pub fn control_seed(&self, coupling: f64, gate: Gate) -> RngSeed {
        self.coupling_seed(3, coupling).derive(gate.index() as u64)
    }

    pub fn verify_seed(&self, coupling: f64, gate: Gate) -> RngSeed {
        self.coupling_seed(4, coupling).derive(gate.index() as u64)
    }

    /// File stem shared by all artifacts of one (noise, g) pair.
    pub fn stem(&self, coupling: f64) -> String {
        format!("{}_g{coupling}", self.noise.name())
    }

    pub fn dataset_path(&self, coupling: f64) -> PathBuf {
        self.out.join("data").join(format!("{}.jsonl", self.stem(coupling)))
    }

    pub fn checkpoint_path(&self, coupling: f64) -> PathBuf {
        self.out.join("models").join(format!("{}.ckpt", self.stem(coupling)))
    }

    pub fn metrics_path(&self, coupling: f64) -> PathBuf {
        self.out.join("metrics").join(format!("{}.json", self.stem(coupling)))
    }

    pub fn control_path(&self, coupling: f64) -> PathBuf {
        self.out.join("results").join(format!("{}_control.json", self.stem(coupling)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_resolve() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.dataset_size(0.1), 500);
        assert_eq!(cfg.train_config().epochs, 50);
        let sim = cfg.sim_config(0.1).unwrap();
        assert_eq!((sim.grid.steps(), sim.realizations), (1000, 500));
        cfg.profile = Profile::Paper;
        assert_eq!(cfg.dataset_size(0.5), 10_000);
        assert_eq!(cfg.dataset_size(0.4), 5000);
        assert_eq!(cfg.train_config().epochs, 200);
        cfg.dataset_size = Some(7);
        assert_eq!(cfg.dataset_size(0.5), 7);
    }

    #[test]
    fn resolved_is_a_fixed_point() {
        let cfg = RunConfig { epochs: Some(3), ..Default::default() };
        let r = cfg.resolved();
        assert_eq!((r.time_steps, r.realizations, r.epochs, r.train.epochs), (Some(1000), Some(500), Some(3), 3));
        assert_eq!(r.resolved(), r);
        assert_eq!(r.sim_config(0.1).unwrap(), cfg.sim_config(0.1).unwrap());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"couplings": [0.2, 0.3], "noise": "ou"}"#).unwrap();
        assert_eq!(cfg.couplings, vec![0.2, 0.3]);
        assert_eq!(cfg.noise, NoiseKind::Ou);
        assert_eq!(cfg.model, ModelConfig::default());
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn seeds_differ_by_coupling_and_role() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.dataset_seed(0.1), cfg.dataset_seed(0.2));
        assert_ne!(cfg.dataset_seed(0.1), cfg.train_seed(0.1));
        assert_eq!(cfg.control_seed(0.3, Gate::X), cfg.control_seed(0.3, Gate::X));
    }

    #[test]
    fn invalid_couplings_rejected() {
        let cfg = RunConfig { couplings: vec![0.1, -0.2], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(CliError::Usage(_))));
    }
}
