//! Glue from corpus records to a fitted model and encoded games.

use crate::corpus::{
    assign_length_bins, build_plan_pool, build_vocab, extract_oracle_plan, Document, GameRecord, MacroPlan, PlanKind,
    PlanPool, Schema, Table,
};
use crate::error::{ModelError, Result};
use crate::model::{EncodedGame, Model, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedGame {
    pub id: String,
    pub table: Table,
    pub pool: PlanPool,
    pub document: Document,
    pub plan: MacroPlan,
}

/// Builds pools and oracle plans. A stored plan is used when present.
pub fn prepare(records: &[GameRecord], schema: &Schema) -> Result<Vec<PreparedGame>> {
    records
        .iter()
        .map(|r| {
            r.table.validate(schema)?;
            let pool = build_plan_pool(&r.table, schema)?;
            let document = r.document();
            let plan = match &r.plan {
                Some(steps) => MacroPlan { steps: steps.clone(), terminated: true },
                None => extract_oracle_plan(&r.table, &document, &pool)?,
            };
            if plan.steps.len() != document.paragraphs.len() || plan.steps.iter().any(|&s| s >= pool.len()) {
                return Err(ModelError::Data(format!("game {}: plan does not fit its summary and pool", r.id)));
            }
            Ok(PreparedGame { id: r.id.clone(), table: r.table.clone(), pool, document, plan })
        })
        .collect()
}

/// Fresh model whose vocabulary, length bins and per-kind inference bins
/// come from the training games.
pub fn build_model(train: &[PreparedGame], config: ModelConfig, min_count: usize, seed: u64) -> Result<Model> {
    if train.is_empty() {
        return Err(ModelError::Data("no training games".into()));
    }
    let seqs = train.iter().flat_map(|g| {
        g.pool.plans.iter().map(|p| p.tokens.as_slice()).chain(g.document.paragraphs.iter().map(Vec::as_slice))
    });
    let vocab = build_vocab(seqs, min_count);
    let mut model = Model::new(config, vocab, seed);
    let lengths: Vec<usize> = train.iter().flat_map(|g| g.document.paragraphs.iter().map(Vec::len)).collect();
    model.bins = assign_length_bins(&lengths, config.bins.max(1))?;
    model.kind_bins = mode_bins(&model, train);
    Ok(model)
}

/// Most frequent gold bin of each plan kind; ties go to the lower bin.
fn mode_bins(model: &Model, train: &[PreparedGame]) -> [usize; 3] {
    let nb = model.config.bins.max(1);
    let mut counts = [vec![0usize; nb], vec![0usize; nb], vec![0usize; nb]];
    for g in train {
        for (para, &step) in g.document.paragraphs.iter().zip(&g.plan.steps) {
            let kind = g.pool.plans[step].kind;
            counts[kind.index()][model.bins.bin(para.len()).min(nb - 1)] += 1;
        }
    }
    let mut out = [0; 3];
    for k in PlanKind::ALL {
        let c = &counts[k.index()];
        out[k.index()] = (0..nb).max_by_key(|&b| (c[b], std::cmp::Reverse(b))).unwrap_or(0);
    }
    out
}

pub fn encode_all(model: &Model, games: &[PreparedGame]) -> Result<Vec<EncodedGame>> {
    games.iter().map(|g| model.encode_game(&g.pool, &g.document, &g.plan)).collect()
}
