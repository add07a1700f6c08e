use std::path::{Path, PathBuf};

use ikp_core::bench::BenchConfig;
use ikp_core::rng::derive_seed;
use ikp_core::synth::SurrogateConfig;
use ikp_core::{EmConfig, Error, GaConfig, MassSpringConfig, Result};
use serde::{Deserialize, Serialize};

/// One JSON document per run, one section per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. When set, every stage seed is derived from it.
    pub rng_seed: Option<u64>,
    pub paths: Paths,
    pub simulate: SimulateSection,
    pub identify: IdentifySection,
    pub optimize: OptimizeSection,
    pub bench: BenchSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Trajectory CSV: measurements for `identify`/`predict`, ground truth
    /// for `bench`.
    pub trajectory: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub schedule: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    #[default]
    MassSpring,
    Surrogate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub source: Source,
    pub mass_spring: MassSpringConfig,
    pub surrogate: SurrogateConfig,
    /// Measurement-noise variance added to the surrogate (mm²).
    pub surrogate_noise_sigma2: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifySection {
    pub em: EmConfig,
    /// When non-empty, the state dimension is selected from these.
    pub order_candidates: Vec<usize>,
    /// Only the first `train_steps` rows are used, when set.
    pub train_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    #[default]
    Genetic,
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizeSection {
    pub horizon_t: usize,
    pub budget_n: usize,
    pub warmup_t0: usize,
    pub method: SearchMethod,
    pub ga: GaConfig,
}

impl Default for OptimizeSection {
    fn default() -> Self {
        Self {
            horizon_t: 6000,
            budget_n: 20,
            warmup_t0: 0,
            method: SearchMethod::Genetic,
            ga: GaConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub protocol: BenchConfig,
    /// Ground truth when `paths.trajectory` is not given.
    pub surrogate: SurrogateConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("config {}: {e}", path.display())))
    }

    /// Replaces every stage seed by one derived from the master seed.
    pub fn apply_master_seed(&mut self) {
        let Some(master) = self.rng_seed else {
            return;
        };
        self.simulate.mass_spring.rng_seed = derive_seed(master, &[1]);
        self.simulate.surrogate.rng_seed = derive_seed(master, &[2]);
        self.identify.em.rng_seed = derive_seed(master, &[3]);
        self.optimize.ga.rng_seed = derive_seed(master, &[4]);
        self.bench.protocol.rng_seed = derive_seed(master, &[5]);
        self.bench.surrogate.rng_seed = derive_seed(master, &[6]);
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths
            .out_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("ikp-out"))
    }

    pub fn require(path: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
        let path = path
            .clone()
            .ok_or_else(|| Error::InvalidInput(format!("no {what} path given")))?;
        if !path.exists() {
            return Err(Error::InvalidInput(format!(
                "{what} file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }
}
