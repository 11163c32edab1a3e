//! Experiment configuration: one TOML-loadable struct that, together with
//! the master seed, fully determines a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackKind;
use crate::code::{BiasSpec, CodeParameters};
use crate::crypto::SecurityLevel;
use crate::error::{Error, Result};
use crate::simnet::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasKind {
    DiscreteNuida,
    ClippedArcsine,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CodeSection {
    pub num_codewords: u32,
    pub c0: u32,
    pub epsilon: f64,
    pub codeword_length: u32,
    pub bias: BiasKind,
    /// Fresh codebook per segment position instead of one shared book.
    #[serde(default)]
    pub per_position: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutSection {
    pub num_segments: usize,
    pub set_size: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PopulationSection {
    pub generations: usize,
    pub parents_min: usize,
    pub parents_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSection {
    pub kinds: Vec<AttackKind>,
    pub coalitions: usize,
    pub coalition_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum ThresholdMode {
    Fixed { value: f64 },
    Auto,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub code: CodeSection,
    pub layout: LayoutSection,
    pub population: PopulationSection,
    pub backend: SecurityLevel,
    pub attack: AttackSection,
    pub threshold: ThresholdMode,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Desk-scale defaults: K=7 (N=640), 50 coalitions per attack, mock
    /// crypto — full experiment in minutes.
    Desk,
    /// Published-setup shape: K=10 (N=5120), 1000 coalitions per attack,
    /// mock crypto for the database.
    Paper,
    /// Crypto-verification: tiny code, real Paillier backend.
    Crypto,
}

impl std::str::FromStr for Profile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            "crypto" => Ok(Profile::Crypto),
            other => Err(Error::Config(format!("unknown profile {other}"))),
        }
    }
}

impl ExperimentConfig {
    pub fn profile(p: Profile) -> Self {
        let base = ExperimentConfig {
            code: CodeSection {
                num_codewords: 10,
                c0: 4,
                epsilon: 1e-3,
                codeword_length: 788,
                bias: BiasKind::DiscreteNuida,
                per_position: false,
            },
            layout: LayoutSection { num_segments: 74, set_size: 14 },
            population: PopulationSection { generations: 7, parents_min: 2, parents_max: 4 },
            backend: SecurityLevel::Mock,
            attack: AttackSection {
                kinds: AttackKind::ALL.to_vec(),
                coalitions: 50,
                coalition_size: 4,
            },
            threshold: ThresholdMode::Fixed { value: 12.0 },
            master_seed: 1,
            output_dir: PathBuf::from("out"),
        };
        match p {
            Profile::Desk => base,
            Profile::Paper => ExperimentConfig {
                population: PopulationSection { generations: 10, ..base.population },
                attack: AttackSection { coalitions: 1000, ..base.attack.clone() },
                ..base
            },
            Profile::Crypto => ExperimentConfig {
                code: CodeSection { codeword_length: 32, ..base.code },
                layout: LayoutSection { num_segments: 6, set_size: 2 },
                population: PopulationSection { generations: 3, ..base.population },
                backend: SecurityLevel::Paillier1024,
                attack: AttackSection { coalitions: 2, ..base.attack.clone() },
                threshold: ThresholdMode::Auto,
                ..base
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn code_parameters(&self) -> CodeParameters {
        let bias_spec = match self.code.bias {
            BiasKind::DiscreteNuida => BiasSpec::DiscreteNuida,
            BiasKind::ClippedArcsine => BiasSpec::default_arcsine(self.code.c0),
        };
        CodeParameters {
            c0: self.code.c0,
            epsilon: self.code.epsilon,
            num_codewords: self.code.num_codewords,
            codeword_length: self.code.codeword_length,
            bias_spec,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            num_segments: self.layout.num_segments,
            set_size: self.layout.set_size,
            parents_min: self.population.parents_min,
            parents_max: self.population.parents_max,
            security: self.backend,
        }
    }

    pub fn expected_population(&self) -> usize {
        self.code.num_codewords as usize * (1usize << (self.population.generations - 1))
    }

    /// Hard consistency checks; returns warnings for soft ones.
    pub fn validate(&self) -> Result<Vec<String>> {
        self.code_parameters().validate()?;
        if self.layout.num_segments < self.layout.set_size {
            return Err(Error::parameter("layout.set_size", "exceeds num_segments"));
        }
        if self.population.parents_min < 2 || self.population.parents_max < self.population.parents_min
        {
            return Err(Error::parameter("population.parents", "need 2 <= min <= max"));
        }
        if self.population.generations < 1 {
            return Err(Error::parameter("population.generations", "must be >= 1"));
        }
        if self.attack.coalition_size < 1 {
            return Err(Error::parameter("attack.coalition_size", "must be >= 1"));
        }
        if let ThresholdMode::Fixed { value } = self.threshold {
            if value <= 0.0 {
                return Err(Error::parameter("threshold.value", "must be positive"));
            }
        }
        let mut warnings = Vec::new();
        if self.code.num_codewords < 2 * self.code.c0 {
            warnings.push(format!(
                "num_codewords M={} below 2*c0={}; score separation degrades",
                self.code.num_codewords,
                2 * self.code.c0
            ));
        }
        if self.attack.coalition_size as u32 > self.code.c0 {
            warnings.push(format!(
                "coalition size {} exceeds code capacity c0={} (out-of-warranty run)",
                self.attack.coalition_size, self.code.c0
            ));
        }
        Ok(warnings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for p in [Profile::Desk, Profile::Paper, Profile::Crypto] {
            let cfg = ExperimentConfig::profile(p);
            assert!(cfg.validate().unwrap().is_empty(), "{p:?}");
        }
    }

    #[test]
    fn desk_and_paper_populations() {
        assert_eq!(ExperimentConfig::profile(Profile::Desk).expected_population(), 640);
        assert_eq!(ExperimentConfig::profile(Profile::Paper).expected_population(), 5120);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = ExperimentConfig::profile(Profile::Desk);
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.master_seed, cfg.master_seed);
        assert_eq!(back.attack.kinds, cfg.attack.kinds);
        assert_eq!(back.threshold, cfg.threshold);
    }

    #[test]
    fn invalid_layout_rejected() {
        let mut cfg = ExperimentConfig::profile(Profile::Desk);
        cfg.layout.set_size = 100;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn oversized_coalition_is_warning_not_error() {
        let mut cfg = ExperimentConfig::profile(Profile::Desk);
        cfg.attack.coalition_size = 6;
        let warnings = cfg.validate().unwrap();
        assert_eq!(warnings.len(), 1);
    }
}
