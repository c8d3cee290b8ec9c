//! Parameter container, game encoding and checkpoints.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::corpus::{BinAssignment, Document, MacroPlan, PlanKind, PlanPool, Vocab};
use crate::encoders::EncoderParams;
use crate::error::{ModelError, Result};
use crate::generator::DecoderParams;
use crate::planner::PlannerParams;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    /// Per-direction BiLSTM size `H`; every other state has size `2H`.
    pub hidden: usize,
    /// Number of paragraph-length bins.
    pub bins: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { embed_dim: 32, hidden: 32, bins: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub encoder: EncoderParams,
    pub planner: PlannerParams,
    pub decoder: DecoderParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub bins: BinAssignment,
    /// Bin used at inference for each plan kind, indexed by [`PlanKind::index`].
    pub kind_bins: [usize; 3],
    pub params: ParamStore,
    pub layout: Layout,
}

/// A game in vocabulary ids, ready for the loss or for decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedGame {
    pub pool: Vec<Vec<usize>>,
    pub kinds: Vec<PlanKind>,
    pub paragraphs: Vec<Vec<usize>>,
    /// Oracle pool index per paragraph.
    pub oracle: Vec<usize>,
    /// Length bin per paragraph.
    pub bins: Vec<usize>,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let v = vocab.len();
        let encoder = EncoderParams::register(&mut params, v, config.embed_dim, config.hidden, &mut rng);
        let planner = PlannerParams::register(&mut params, config.hidden, &mut rng);
        let decoder = DecoderParams::register(
            &mut params,
            encoder.embed,
            v,
            config.embed_dim,
            config.hidden,
            config.bins,
            &mut rng,
        );
        Model {
            config,
            vocab,
            bins: BinAssignment::single(),
            kind_bins: [0; 3],
            params,
            layout: Layout { encoder, planner, decoder },
        }
    }

    pub fn encode_pool(&self, pool: &PlanPool) -> (Vec<Vec<usize>>, Vec<PlanKind>) {
        let ids = pool.plans.iter().map(|p| self.vocab.encode(&p.tokens)).collect();
        let kinds = pool.plans.iter().map(|p| p.kind).collect();
        (ids, kinds)
    }

    /// Encodes a game; `plan` may be empty when only decoding is needed.
    pub fn encode_game(&self, pool: &PlanPool, doc: &Document, plan: &MacroPlan) -> Result<EncodedGame> {
        if !plan.steps.is_empty() && plan.steps.len() != doc.paragraphs.len() {
            return Err(ModelError::Data(format!(
                "plan has {} steps but the summary has {} paragraphs",
                plan.steps.len(),
                doc.paragraphs.len()
            )));
        }
        if let Some(&bad) = plan.steps.iter().find(|&&s| s >= pool.len()) {
            return Err(ModelError::Data(format!("plan step {bad} outside pool of {}", pool.len())));
        }
        if pool.is_empty() {
            return Err(ModelError::Data("empty plan pool".into()));
        }
        let (ids, kinds) = self.encode_pool(pool);
        let paragraphs: Vec<Vec<usize>> = doc.paragraphs.iter().map(|p| self.vocab.encode(p)).collect();
        if paragraphs.iter().any(Vec::is_empty) {
            return Err(ModelError::Data("empty paragraph".into()));
        }
        let bins = paragraphs.iter().map(|p| self.bins.bin(p.len()).min(self.config.bins.max(1) - 1)).collect();
        Ok(EncodedGame { pool: ids, kinds, paragraphs, oracle: plan.steps.clone(), bins })
    }

    pub fn to_checkpoint(&self, train: Option<serde_json::Value>) -> Checkpoint {
        Checkpoint {
            manifest: Manifest {
                version: CHECKPOINT_VERSION,
                config: self.config,
                vocab_hash: self.vocab.hash(),
                train,
            },
            vocab: self.vocab.clone(),
            bins: self.bins.clone(),
            kind_bins: self.kind_bins,
            tensors: self
                .params
                .iter()
                .map(|p| NamedTensor { name: p.name.clone(), shape: p.shape.clone(), values: p.values.clone() })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.manifest.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ck.manifest.version)));
        }
        if ck.vocab.hash() != ck.manifest.vocab_hash {
            return Err(ModelError::Checkpoint("vocabulary hash mismatch".into()));
        }
        let mut m = Model::new(ck.manifest.config, ck.vocab, 0);
        if ck.tensors.len() != m.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                m.params.len(),
                ck.tensors.len()
            )));
        }
        for t in ck.tensors {
            let id = m
                .params
                .find(&t.name)
                .ok_or_else(|| ModelError::Checkpoint(format!("unknown tensor {}", t.name)))?;
            let p = m.params.get_mut(id);
            if p.shape != t.shape || p.values.len() != t.values.len() {
                return Err(ModelError::Checkpoint(format!("shape mismatch for {}", t.name)));
            }
            p.values = t.values;
        }
        if ck.kind_bins.iter().any(|&b| b >= m.config.bins.max(1)) {
            return Err(ModelError::Checkpoint("inference bin out of range".into()));
        }
        m.bins = ck.bins;
        m.kind_bins = ck.kind_bins;
        Ok(m)
    }

    pub fn save(&self, path: &Path, train: Option<serde_json::Value>) -> Result<()> {
        let json = serde_json::to_string(&self.to_checkpoint(train)).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        Model::from_checkpoint(ck)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    #[serde(default)]
    pub train: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Self-describing JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub vocab: Vocab,
    pub bins: BinAssignment,
    pub kind_bins: [usize; 3],
    pub tensors: Vec<NamedTensor>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_toy_corpus, ToyParams};

    #[test]
    fn checkpoint_round_trip() {
        let m = Model::new(ModelConfig { embed_dim: 4, hidden: 2, bins: 3 }, Vocab::reserved(), 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save(&path, None).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(std::fs::read(&path).unwrap(), serde_json::to_vec(&back.to_checkpoint(None)).unwrap());
    }

    #[test]
    fn tampered_checkpoints_are_rejected() {
        let m = Model::new(ModelConfig { embed_dim: 4, hidden: 2, bins: 1 }, Vocab::reserved(), 5);
        let mut ck = m.to_checkpoint(None);
        ck.manifest.vocab_hash = "0".into();
        assert!(Model::from_checkpoint(ck).is_err());
        let mut ck = m.to_checkpoint(None);
        ck.tensors[0].values.pop();
        assert!(Model::from_checkpoint(ck).is_err());
    }

    #[test]
    fn encode_game_checks_alignment() {
        let corpus = generate_toy_corpus(2, 1, &ToyParams::default()).unwrap();
        let g = &corpus.games[0];
        let m = Model::new(ModelConfig::default(), Vocab::reserved(), 0);
        let enc = m.encode_game(&g.pool, &g.document, &g.plan).unwrap();
        assert_eq!(enc.paragraphs.len(), enc.oracle.len());
        let short = MacroPlan { steps: vec![0], terminated: true };
        if g.document.paragraphs.len() != 1 {
            assert!(matches!(m.encode_game(&g.pool, &g.document, &short), Err(ModelError::Data(_))));
        }
    }
}
