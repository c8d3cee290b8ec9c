//! Run configuration: profile defaults, then a TOML key/value file, then
//! explicit overrides.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::inference::{BinPolicy, DecodeConfig};
use crate::model::ModelConfig;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    #[default]
    Toy,
    RotowireLike,
    MlbLike,
}

impl FromStr for Profile {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Profile::Toy),
            "rotowire-like" => Ok(Profile::RotowireLike),
            "mlb-like" => Ok(Profile::MlbLike),
            _ => Err(ModelError::Input(format!("unknown profile {s:?} (toy, rotowire-like, mlb-like)"))),
        }
    }
}

impl Profile {
    pub fn train_defaults(self) -> TrainConfig {
        let base = TrainConfig::default();
        match self {
            Profile::Toy => TrainConfig { slope: 1.0 / 3000.0, batch_size: 1, epochs: 20, ..base },
            Profile::RotowireLike => TrainConfig { slope: 1.0 / 50_000.0, batch_size: 5, ..base },
            Profile::MlbLike => TrainConfig { slope: 1.0 / 100_000.0, batch_size: 8, ..base },
        }
    }

    pub fn decode_defaults(self) -> DecodeConfig {
        let base = DecodeConfig::default();
        match self {
            Profile::Toy => DecodeConfig { max_paragraphs: 8, ..base },
            Profile::RotowireLike => DecodeConfig { max_paragraphs: 15, block_plan_bigrams: false, ..base },
            Profile::MlbLike => DecodeConfig { max_paragraphs: 20, ..base },
        }
    }
}

/// Every optional setting; used both for config files and for flag overrides.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub profile: Option<Profile>,
    pub seed: Option<u64>,
    pub learning_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub slope: Option<f64>,
    pub temperature: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub clip_norm: Option<f64>,
    pub embed_dim: Option<usize>,
    pub hidden: Option<usize>,
    pub bins: Option<usize>,
    pub min_count: Option<usize>,
    pub max_paragraphs: Option<usize>,
    pub beam_size: Option<usize>,
    pub max_paragraph_len: Option<usize>,
    pub block_plan_bigrams: Option<bool>,
    pub block_consecutive_unigram: Option<bool>,
    pub max_unigram_repeats: Option<usize>,
    /// Fixed inference bin; unset means the tuned per-kind bins.
    pub fixed_bin: Option<usize>,
    pub threads: Option<usize>,
    pub schema: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl Overrides {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| ModelError::Input(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub profile: Profile,
    pub seed: u64,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub model: ModelConfig,
    pub min_count: usize,
    pub threads: usize,
    pub schema: Option<PathBuf>,
    pub train_path: Option<PathBuf>,
    pub valid_path: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        RunConfig {
            profile,
            seed: 1,
            train: profile.train_defaults(),
            decode: profile.decode_defaults(),
            model: ModelConfig::default(),
            min_count: 1,
            threads: 1,
            schema: None,
            train_path: None,
            valid_path: None,
            checkpoint: None,
        }
    }

    /// Profile defaults overlaid with `layers` in order, later layers winning.
    pub fn resolve(layers: &[&Overrides]) -> Result<Self> {
        let profile = layers.iter().rev().find_map(|l| l.profile).unwrap_or_default();
        let mut cfg = RunConfig::for_profile(profile);
        for l in layers {
            cfg.apply(l);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
            if let Some(v) = src {
                *dst = v.clone();
            }
        }
        set(&mut self.seed, &o.seed);
        set(&mut self.train.learning_rate, &o.learning_rate);
        set(&mut self.train.lambda, &o.lambda);
        set(&mut self.train.slope, &o.slope);
        set(&mut self.train.temperature, &o.temperature);
        set(&mut self.train.batch_size, &o.batch_size);
        set(&mut self.train.epochs, &o.epochs);
        set(&mut self.train.clip_norm, &o.clip_norm);
        set(&mut self.model.embed_dim, &o.embed_dim);
        set(&mut self.model.hidden, &o.hidden);
        set(&mut self.model.bins, &o.bins);
        set(&mut self.min_count, &o.min_count);
        set(&mut self.decode.max_paragraphs, &o.max_paragraphs);
        set(&mut self.decode.beam_size, &o.beam_size);
        set(&mut self.decode.max_paragraph_len, &o.max_paragraph_len);
        set(&mut self.decode.block_plan_bigrams, &o.block_plan_bigrams);
        set(&mut self.decode.block_consecutive_unigram, &o.block_consecutive_unigram);
        set(&mut self.decode.max_unigram_repeats, &o.max_unigram_repeats);
        if let Some(b) = o.fixed_bin {
            self.decode.bin_policy = BinPolicy::Fixed(b);
        }
        set(&mut self.threads, &o.threads);
        if o.schema.is_some() {
            self.schema = o.schema.clone();
        }
        if o.train.is_some() {
            self.train_path = o.train.clone();
        }
        if o.valid.is_some() {
            self.valid_path = o.valid.clone();
        }
        if o.checkpoint.is_some() {
            self.checkpoint = o.checkpoint.clone();
        }
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.decode.validate()?;
        if self.model.embed_dim == 0 || self.model.hidden == 0 || self.model.bins == 0 {
            return Err(ModelError::Input(format!("invalid model size {:?}", self.model)));
        }
        if let BinPolicy::Fixed(b) = self.decode.bin_policy {
            if b >= self.model.bins {
                return Err(ModelError::Input(format!("fixed bin {b} outside {} bins", self.model.bins)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_caps() {
        let caps: Vec<usize> = [Profile::Toy, Profile::RotowireLike, Profile::MlbLike]
            .iter()
            .map(|p| p.decode_defaults().max_paragraphs)
            .collect();
        assert_eq!(caps, vec![8, 15, 20]);
        assert_eq!(Profile::RotowireLike.train_defaults().slope, 1.0 / 50_000.0);
        assert_eq!(Profile::MlbLike.train_defaults().slope, 1.0 / 100_000.0);
        assert_eq!("mlb-like".parse::<Profile>().unwrap(), Profile::MlbLike);
        assert!("nba".parse::<Profile>().is_err());
    }

    #[test]
    fn later_layers_win() {
        let file = Overrides::from_toml("profile = \"mlb-like\"\nepochs = 3\nbeam_size = 2\n").unwrap();
        let flags = Overrides { epochs: Some(7), seed: Some(9), ..Overrides::default() };
        let cfg = RunConfig::resolve(&[&file, &flags]).unwrap();
        assert_eq!(cfg.profile, Profile::MlbLike);
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.decode.beam_size, 2);
        assert_eq!(cfg.decode.max_paragraphs, 20);
        assert_eq!((cfg.seed, cfg.train.seed), (9, 9));
    }

    #[test]
    fn bad_files_and_values_are_rejected() {
        assert!(Overrides::from_toml("epoch = 3").is_err());
        assert!(Overrides::from_toml("epochs = \"many\"").is_err());
        let o = Overrides { batch_size: Some(0), ..Overrides::default() };
        assert!(RunConfig::resolve(&[&o]).is_err());
        let o = Overrides { fixed_bin: Some(4), ..Overrides::default() };
        assert!(RunConfig::resolve(&[&o]).is_err());
    }
}
