use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clt::{Mode, TestFunction};
use crate::error::{Error, Result};
use crate::fptest::Sided;
use crate::models::{AncillaryKind, Dist, PopulationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Model,
    Scenario,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioId {
    I,
    II,
    III,
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ScenarioId::I),
            "II" | "2" => Ok(ScenarioId::II),
            "III" | "3" => Ok(ScenarioId::III),
            _ => Err(Error::Config(format!("unknown scenario '{s}' (expected I, II or III)"))),
        }
    }
}

impl std::fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioId::I => "I",
            ScenarioId::II => "II",
            ScenarioId::III => "III",
        })
    }
}

/// Source of `m̲_n^0` for the CLT centering and moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderChoice {
    /// Fixed point with the population spectrum.
    Theory,
    /// Average of empirical transforms over independent sample covariances.
    Averaged { samples: usize },
}

/// Where the test takes `E|X|⁴` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourthMoment {
    Declared,
    Plugin,
}

/// Population, ancillary matrix and entry law of a custom CLT experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    pub population: PopulationKind,
    pub ancillary: AncillaryKind,
    pub dist: Dist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<ScenarioId>,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    /// Replications per experiment (per grid point for scenarios at φ = 0).
    #[serde(rename = "M")]
    pub reps: usize,
    /// Replications per grid point with φ > 0; defaults to `M`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_reps: Option<usize>,
    pub seed: u64,
    pub functions: Vec<TestFunction>,
    pub alpha: f64,
    pub delta: f64,
    /// Rotation angles as fractions of π/2.
    pub phi_grid: Vec<f64>,
    pub rank_grid: Vec<usize>,
    /// Spike sizes for Scenario I and the single-shot test.
    pub spikes: Vec<f64>,
    pub dists: Vec<Dist>,
    pub sided: Sided,
    pub fourth_moment: FourthMoment,
    pub provider: ProviderChoice,
    /// Seed of the Wigner realization in Models 5, 6 and 8.
    pub wigner_seed: u64,
    pub hist_bins: usize,
    pub hist_range: [f64; 2],
    /// Largest tolerated fraction of failed replications.
    pub failure_budget: f64,
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub custom: Option<CustomModel>,
    /// Evaluation points `[re, im]` for the `stieltjes` command.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub points: Vec<[f64; 2]>,
    /// Optional n × N data matrix (CSV) for `fp-test` and `glss`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<PathBuf>,
    /// Optional Z0 for `fp-test`: an n × r basis or an n × n projection (CSV).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z0_file: Option<PathBuf>,
}

fn percent_grid(upto: usize) -> Vec<f64> {
    (1..=upto).map(|k| k as f64 / 100.0).collect()
}

impl ExperimentConfig {
    fn base(experiment: ExperimentKind) -> Self {
        ExperimentConfig {
            experiment,
            model: None,
            scenario: None,
            n: 500,
            big_n: 500,
            reps: 500,
            power_reps: None,
            seed: 20240601,
            functions: vec![TestFunction::monomial(2)],
            alpha: 0.1,
            delta: 0.1,
            phi_grid: vec![0.0],
            rank_grid: vec![3],
            spikes: vec![9.0, 5.0, 2.0],
            dists: vec![Dist::Gaussian],
            sided: Sided::TwoSided,
            fourth_moment: FourthMoment::Declared,
            provider: ProviderChoice::Theory,
            wigner_seed: 1,
            hist_bins: 40,
            hist_range: [-4.0, 4.0],
            failure_budget: 0.01,
            out: PathBuf::from("out"),
            threads: 0,
            custom: None,
            points: Vec::new(),
            data_file: None,
            z0_file: None,
        }
    }

    /// Desk-scale Table-1 model `k`.
    pub fn model(k: u8) -> Result<Self> {
        if !(1..=8).contains(&k) {
            return Err(Error::Config(format!("model must be 1..=8, got {k}")));
        }
        Ok(ExperimentConfig { model: Some(k), ..Self::base(ExperimentKind::Model) })
    }

    /// Desk-scale scenario: n = N = 300, 500 replications at φ = 0.
    pub fn scenario(id: ScenarioId) -> Self {
        let mut c = ExperimentConfig {
            scenario: Some(id),
            n: 300,
            big_n: 300,
            reps: 500,
            power_reps: Some(300),
            functions: vec![TestFunction::monomial(2), TestFunction::monomial(3)],
            ..Self::base(ExperimentKind::Scenario)
        };
        match id {
            ScenarioId::I => {
                c.phi_grid = vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8];
                c.dists = vec![Dist::Gaussian, Dist::StudentT10];
            }
            ScenarioId::II => {
                c.phi_grid = vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.6, 0.8];
                c.rank_grid = vec![7, 11];
            }
            ScenarioId::III => {
                c.phi_grid = vec![0.0, 0.25];
                c.rank_grid = (1..=15).collect();
            }
        }
        c
    }

    pub fn custom(model: CustomModel) -> Self {
        ExperimentConfig { custom: Some(model), ..Self::base(ExperimentKind::Custom) }
    }

    /// Dimensions, replication counts and grids used for the published tables and figures.
    pub fn apply_paper_scale(&mut self) {
        match self.experiment {
            ExperimentKind::Model | ExperimentKind::Custom => {
                self.n = 1000;
                self.big_n = 1000;
                self.reps = 1000;
            }
            ExperimentKind::Scenario => {
                self.n = 500;
                self.big_n = 500;
                self.reps = 1000;
                self.power_reps = Some(100);
                if self.scenario != Some(ScenarioId::III) {
                    let mut g = vec![0.0];
                    g.extend(percent_grid(80));
                    self.phi_grid = g;
                }
            }
        }
    }

    pub fn power_reps(&self) -> usize {
        self.power_reps.unwrap_or(self.reps)
    }

    pub fn label(&self) -> String {
        match self.experiment {
            ExperimentKind::Model => format!("model_{}", self.model.unwrap_or(0)),
            ExperimentKind::Scenario => format!("scenario_{}", self.scenario.map(|s| s.to_string()).unwrap_or_default()),
            ExperimentKind::Custom => "custom".into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match self.experiment {
            ExperimentKind::Model if !matches!(self.model, Some(1..=8)) => return bad("model experiments need model = 1..8".into()),
            ExperimentKind::Scenario if self.scenario.is_none() => return bad("scenario experiments need scenario = I, II or III".into()),
            ExperimentKind::Custom if self.custom.is_none() => return bad("custom experiments need a [custom] table".into()),
            _ => {}
        }
        if self.n == 0 || self.big_n == 0 {
            return bad("n and N must be positive".into());
        }
        if self.reps == 0 || self.power_reps == Some(0) {
            return bad("M must be at least 1".into());
        }
        if self.functions.is_empty() {
            return bad("functions must not be empty".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if self.experiment == ExperimentKind::Scenario {
            if self.phi_grid.is_empty() || self.dists.is_empty() {
                return bad("phi_grid and dists must not be empty".into());
            }
            if self.phi_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("phi_grid entries are fractions of π/2 in [0, 1]".into());
            }
            if self.scenario != Some(ScenarioId::I) {
                if self.rank_grid.is_empty() || self.rank_grid.contains(&0) {
                    return bad("rank_grid must hold positive ranks".into());
                }
                if self.rank_grid.iter().any(|&r| r >= self.n) {
                    return bad("every rank must be below n".into());
                }
            }
        }
        if self.spikes.is_empty() || self.spikes.iter().any(|d| !(*d > 0.0)) {
            return bad("spikes must be positive".into());
        }
        if self.hist_bins == 0 || !(self.hist_range[0] < self.hist_range[1]) {
            return bad("histogram needs bins > 0 and an increasing range".into());
        }
        if !(0.0..=1.0).contains(&self.failure_budget) {
            return bad("failure_budget must lie in [0, 1]".into());
        }
        if let ProviderChoice::Averaged { samples: 0 } = self.provider {
            return bad("averaged provider needs samples > 0".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// `self` with every key present in `text` replaced.
    pub fn merged_with(&self, text: &str) -> Result<Self> {
        let overrides: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut base: toml::Table = toml::Table::try_from(self).map_err(|e| Error::Config(e.to_string()))?;
        for (k, v) in overrides {
            base.insert(k, v);
        }
        toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn merged_with_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merged_with(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        let mut all: Vec<ExperimentConfig> = (1..=8).map(|k| ExperimentConfig::model(k).unwrap()).collect();
        all.extend([ScenarioId::I, ScenarioId::II, ScenarioId::III].map(ExperimentConfig::scenario));
        all.push(ExperimentConfig::custom(CustomModel {
            population: PopulationKind::Spiked { d: vec![3.0, 1.5], v: None },
            ancillary: AncillaryKind::Wigner { seed: 4 },
            dist: Dist::StudentT10,
            mode: Some(Mode::LowRank),
        }));
        for mut c in all {
            for paper in [false, true] {
                if paper {
                    c.apply_paper_scale();
                }
                c.points = vec![[1.5, 0.25]];
                c.validate().unwrap();
                let text = c.to_toml().unwrap();
                assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c, "{text}");
            }
        }
    }

    #[test]
    fn overrides_replace_single_keys() {
        let base = ExperimentConfig::scenario(ScenarioId::II);
        let c = base.merged_with("M = 7\nrank_grid = [5]\nfunctions = [\"x^3\"]\n").unwrap();
        assert_eq!(c.reps, 7);
        assert_eq!(c.rank_grid, vec![5]);
        assert_eq!(c.functions, vec![TestFunction::monomial(3)]);
        assert_eq!(c.phi_grid, base.phi_grid);
        assert!(base.merged_with("bogus = 1").is_err());
        assert!(base.merged_with("M = 0").unwrap().validate().is_err());
    }

    #[test]
    fn bad_models_are_config_errors() {
        assert!(matches!(ExperimentConfig::model(9), Err(Error::Config(_))));
        let mut c = ExperimentConfig::model(1).unwrap();
        c.alpha = 1.5;
        assert_eq!(c.validate().unwrap_err().exit_code(), 1);
    }
}
