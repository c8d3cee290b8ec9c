//! Document generation: greedy plan choice from the prior with repetition
//! blocking, paragraph decoding, and EOP or length-cap stopping.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::corpus::{Document, MacroPlan, PlanKind};
use crate::error::{ModelError, Result};
use crate::generator::generate_paragraph;
use crate::metrics::bleu;
use crate::model::{EncodedGame, Model};
use crate::planner::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinPolicy {
    /// The model's per-kind bins.
    Tuned,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_paragraphs: usize,
    pub beam_size: usize,
    /// Token cap per paragraph, EOS excluded.
    pub max_paragraph_len: usize,
    pub block_consecutive_unigram: bool,
    pub block_plan_bigrams: bool,
    /// Uses allowed per pool index; 0 disables the limit.
    pub max_unigram_repeats: usize,
    pub bin_policy: BinPolicy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_paragraphs: 8,
            beam_size: 5,
            max_paragraph_len: 60,
            block_consecutive_unigram: true,
            block_plan_bigrams: true,
            max_unigram_repeats: 2,
            bin_policy: BinPolicy::Tuned,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_paragraphs == 0 || self.beam_size == 0 || self.max_paragraph_len == 0 {
            return Err(ModelError::Input(format!("invalid decoding configuration {self:?}")));
        }
        Ok(())
    }
}

/// Whether choosing `candidate` after `history` breaks an enabled rule.
pub fn is_blocked(history: &[usize], candidate: usize, cfg: &DecodeConfig) -> bool {
    let Some(&last) = history.last() else { return false };
    if cfg.block_consecutive_unigram && candidate == last {
        return true;
    }
    if cfg.block_plan_bigrams && history.windows(2).any(|w| w[0] == last && w[1] == candidate) {
        return true;
    }
    cfg.max_unigram_repeats > 0 && history.iter().filter(|&&h| h == candidate).count() >= cfg.max_unigram_repeats
}

/// Masks blocked plans in a prior over `pool + 1` entries (EOP last) and
/// renormalizes. EOP is never masked; if every plan is masked EOP gets all
/// the mass.
pub fn apply_blocking(history: &[usize], probs: &[f64], cfg: &DecodeConfig) -> Vec<f64> {
    let n = probs.len() - 1;
    let mut out: Vec<f64> = probs
        .iter()
        .enumerate()
        .map(|(j, &p)| if j < n && is_blocked(history, j, cfg) { 0.0 } else { p })
        .collect();
    let plans_left: f64 = out[..n].iter().sum();
    if plans_left <= 0.0 {
        out.iter_mut().for_each(|p| *p = 0.0);
        out[n] = 1.0;
        return out;
    }
    let z: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= z);
    out
}

/// Every rule broken by a finished plan sequence, checked step by step
/// against its own prefix.
pub fn violations(plan: &[usize], cfg: &DecodeConfig) -> Vec<String> {
    let mut out = vec![];
    for t in 1..plan.len() {
        let (prefix, z) = (&plan[..t], plan[t]);
        if cfg.block_consecutive_unigram && prefix[t - 1] == z {
            out.push(format!("step {t}: {z} repeats the previous plan"));
        }
        if cfg.block_plan_bigrams && (1..t).any(|s| prefix[s - 1] == prefix[t - 1] && prefix[s] == z) {
            out.push(format!("step {t}: bigram ({}, {z}) used before", prefix[t - 1]));
        }
    }
    if cfg.max_unigram_repeats > 0 {
        let mut seen: Vec<usize> = plan.to_vec();
        seen.sort_unstable();
        seen.dedup();
        for z in seen {
            let c = plan.iter().filter(|&&x| x == z).count();
            if c > cfg.max_unigram_repeats {
                out.push(format!("plan {z} used {c} times"));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDocument {
    pub document: Document,
    pub plan: MacroPlan,
    pub paragraph_ids: Vec<Vec<usize>>,
    /// Paragraphs that hit the token cap before EOS.
    pub truncated: usize,
}

/// Generates one document for a pool given in vocabulary ids.
pub fn generate_document(model: &Model, pool: &[Vec<usize>], kinds: &[PlanKind], cfg: &DecodeConfig) -> Result<GeneratedDocument> {
    cfg.validate()?;
    if pool.is_empty() || kinds.len() != pool.len() {
        return Err(ModelError::Input("pool and plan kinds must be non-empty and aligned".into()));
    }
    let (enc, pl, dec) = (&model.layout.encoder, &model.layout.planner, &model.layout.decoder);
    let mut g = Graph::new();
    let p = model.params.bind(&mut g)?;
    let plans = pool.iter().map(|ids| enc.encode_plan(&mut g, &p, ids)).collect::<Result<Vec<_>>>()?;
    let r_zs: Vec<_> = plans.iter().map(|e| e.r_z).collect();
    let keys = pl.pool_keys(&mut g, &p, &r_zs)?;
    let n = pool.len();

    let mut plan = MacroPlan::default();
    let (mut paragraphs, mut ids_out, mut truncated) = (vec![], vec![], 0);
    let mut state = enc.initial_state(&mut g);
    while plan.steps.len() < cfg.max_paragraphs {
        let prior = pl.prior(&mut g, &p, state.h_z.h, state.h_y.h, keys)?;
        let probs = apply_blocking(&plan.steps, &prior.probs(&g), cfg);
        let z = argmax(&probs);
        if z == n {
            plan.terminated = true;
            break;
        }
        let bin = match cfg.bin_policy {
            BinPolicy::Tuned => model.kind_bins[kinds[z].index()],
            BinPolicy::Fixed(b) => b,
        };
        let r_z = plans[z].r_z;
        let (ctx, ds) = dec.init_decoder(&mut g, &p, r_z, bin, state.h_y.h, plans[z].states, &pool[z])?;
        let out = generate_paragraph(dec, &mut g, &p, &ctx, ds, cfg.beam_size, cfg.max_paragraph_len)?;
        truncated += out.truncated as usize;
        let r_y = enc.encode_paragraph(&mut g, &p, &out.tokens)?;
        state = enc.step_text_state(&mut g, &p, r_y, state)?;
        state = enc.step_plan_state(&mut g, &p, r_z, state)?;
        paragraphs.push(model.vocab.decode(&out.tokens));
        ids_out.push(out.tokens);
        plan.steps.push(z);
    }
    Ok(GeneratedDocument { document: Document::new(paragraphs), plan, paragraph_ids: ids_out, truncated })
}

/// Generates documents for many games on up to `threads` threads; output
/// order and content do not depend on the thread count.
pub fn generate_all(model: &Model, games: &[EncodedGame], cfg: &DecodeConfig, threads: usize) -> Result<Vec<GeneratedDocument>> {
    let threads = threads.clamp(1, games.len().max(1));
    if threads == 1 {
        return games.iter().map(|g| generate_document(model, &g.pool, &g.kinds, cfg)).collect();
    }
    let chunk = games.len().div_ceil(threads);
    let parts: Vec<Result<Vec<GeneratedDocument>>> = std::thread::scope(|s| {
        let handles: Vec<_> = games
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || part.iter().map(|g| generate_document(model, &g.pool, &g.kinds, cfg)).collect())
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decoder thread panicked")).collect()
    });
    let mut out = vec![];
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

/// Corpus BLEU of generations against the gold paragraphs of `games`.
pub fn validation_bleu(model: &Model, games: &[EncodedGame], cfg: &DecodeConfig, threads: usize) -> Result<f64> {
    let docs = generate_all(model, games, cfg, threads)?;
    let cands: Vec<Vec<String>> = docs.iter().map(|d| model.vocab.decode(&d.paragraph_ids.concat())).collect();
    let refs: Vec<Vec<String>> = games.iter().map(|g| model.vocab.decode(&g.paragraphs.concat())).collect();
    Ok(bleu(&cands, &refs)?)
}

/// Picks each kind's inference bin by validation BLEU, one kind at a time
/// with the others held fixed. Ties keep the lower bin.
pub fn tune_bins(model: &mut Model, valid: &[EncodedGame], cfg: &DecodeConfig, threads: usize) -> Result<[f64; 3]> {
    let cfg = DecodeConfig { bin_policy: BinPolicy::Tuned, ..*cfg };
    let mut best_scores = [0.0; 3];
    for kind in PlanKind::ALL {
        let k = kind.index();
        let mut best: Option<(usize, f64)> = None;
        for b in 0..model.config.bins.max(1) {
            model.kind_bins[k] = b;
            let score = validation_bleu(model, valid, &cfg, threads)?;
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((b, score));
            }
        }
        let (b, s) = best.expect("at least one bin");
        model.kind_bins[k] = b;
        best_scores[k] = s;
    }
    Ok(best_scores)
}
