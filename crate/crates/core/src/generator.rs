//! Plan-conditioned paragraph decoder with copy attention and length bins.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Var};
use crate::corpus::{BOS, EOS};
use crate::error::{ModelError, Result};
use crate::nn::{bilinear_scores, Linear, Lstm, LstmState, INIT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderParams {
    /// Token embeddings, shared with the encoders.
    pub embed: ParamId,
    /// Input is the previous token embedding; `wy` projects the paragraph context.
    pub lstm: Lstm,
    pub wy: ParamId,
    pub w_attn: ParamId,
    pub out: Linear,
    pub gate: Linear,
    pub bins: ParamId,
    pub bin_count: usize,
    pub vocab: usize,
}

/// Everything a paragraph's decoding steps share.
#[derive(Debug, Clone)]
pub struct DecoderContext {
    /// `[1 + l, 2H]`: bin embedding, then plan token states.
    pub memory: Var,
    /// Vocabulary ids of the plan tokens.
    pub copy_ids: Vec<usize>,
    /// `h_y^{t-1}·Wy + b`, added to every input projection.
    pub context_proj: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub lstm: LstmState,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    pub probs: Var,
    pub gen: Var,
    pub copy: Var,
    pub gate: Var,
}

/// `(1 − g)·gen + g·copy`, with `g` a one-element tensor.
pub fn mix_distribution(g: &mut Graph, gen: Var, copy: Var, gate: Var) -> Result<Var> {
    let keep = g.affine(gate, -1.0, 1.0);
    let a = g.mul(gen, keep)?;
    let b = g.mul(copy, gate)?;
    Ok(g.add(a, b)?)
}

impl DecoderParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        embed: ParamId,
        vocab: usize,
        embed_dim: usize,
        hidden: usize,
        bin_count: usize,
        rng: &mut R,
    ) -> Self {
        let d = 2 * hidden;
        let lstm = Lstm::register(store, "dec.lstm", embed_dim, d, rng);
        DecoderParams {
            embed,
            lstm,
            wy: store.add_uniform("dec.wy", &[d, 4 * d], INIT_SCALE, rng),
            w_attn: store.add_uniform("dec.w_attn", &[d, d], INIT_SCALE, rng),
            out: Linear::register(store, "dec.out", 2 * d, vocab, rng),
            gate: Linear::register(store, "dec.gate", d, 1, rng),
            bins: store.add_uniform("dec.bins", &[bin_count.max(1), d], INIT_SCALE, rng),
            bin_count: bin_count.max(1),
            vocab,
        }
    }

    /// Starts a paragraph: the LSTM state begins at `r_z` and the bin
    /// embedding is prepended to the attention memory.
    pub fn init_decoder(
        &self,
        g: &mut Graph,
        p: &Bound,
        r_z: Var,
        bin: usize,
        h_y_prev: Var,
        plan_states: Var,
        plan_ids: &[usize],
    ) -> Result<(DecoderContext, DecoderState)> {
        if bin >= self.bin_count {
            return Err(ModelError::Input(format!("bin {bin} out of range for {} bins", self.bin_count)));
        }
        if plan_ids.is_empty() || g.shape(plan_states)[0] != plan_ids.len() {
            return Err(ModelError::Input("plan token states must match a non-empty plan".into()));
        }
        let bin_row = g.row(p[self.bins], bin)?;
        let bin_row = g.stack_rows(&[bin_row])?;
        let memory = self.stack_memory(g, bin_row, plan_states)?;
        let cy = g.matmul(h_y_prev, p[self.wy])?;
        let context_proj = g.add(cy, p[self.lstm.b])?;
        let c0 = g.zeros(self.lstm.hidden);
        let ctx = DecoderContext { memory, copy_ids: plan_ids.to_vec(), context_proj };
        Ok((ctx, DecoderState { lstm: LstmState { h: r_z, c: c0 } }))
    }

    fn stack_memory(&self, g: &mut Graph, bin_row: Var, plan_states: Var) -> Result<Var> {
        let n = g.shape(plan_states)[0];
        let mut rows = vec![g.row(bin_row, 0)?];
        for i in 0..n {
            rows.push(g.row(plan_states, i)?);
        }
        Ok(g.stack_rows(&rows)?)
    }

    /// Output distribution given the LSTM output `s`.
    fn output(&self, g: &mut Graph, p: &Bound, ctx: &DecoderContext, s: Var) -> Result<StepOutput> {
        let scores = bilinear_scores(g, s, p[self.w_attn], ctx.memory)?;
        let weights = g.softmax(scores)?;
        let c = g.matmul(weights, ctx.memory)?;
        let sc = g.concat(&[s, c]);
        let logits = self.out.forward(g, p, sc)?;
        let gen = g.softmax(logits)?;
        let plan_scores = g.slice(scores, 1, ctx.copy_ids.len())?;
        let copy_w = g.softmax(plan_scores)?;
        let copy = g.scatter(copy_w, &ctx.copy_ids, self.vocab)?;
        let gz = self.gate.forward(g, p, s)?;
        let gate = g.sigmoid(gz);
        let probs = mix_distribution(g, gen, copy, gate)?;
        Ok(StepOutput { probs, gen, copy, gate })
    }

    /// One decoding step from token `prev`.
    pub fn decode_step(
        &self,
        g: &mut Graph,
        p: &Bound,
        prev: usize,
        state: DecoderState,
        ctx: &DecoderContext,
    ) -> Result<(StepOutput, DecoderState)> {
        if prev >= self.vocab {
            return Err(ModelError::Input(format!("token {prev} outside vocabulary of {}", self.vocab)));
        }
        let x = g.row(p[self.embed], prev)?;
        let xz = g.matmul(x, p[self.lstm.wx])?;
        let xz = g.add(xz, ctx.context_proj)?;
        let lstm = self.lstm.step(g, p, xz, state.lstm)?;
        let out = self.output(g, p, ctx, lstm.h)?;
        Ok((out, DecoderState { lstm }))
    }

    /// Teacher-forced `Σ log p(target_i)` over `tokens` followed by EOS.
    pub fn log_likelihood(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &[usize],
        state: DecoderState,
        ctx: &DecoderContext,
    ) -> Result<Var> {
        let mut inputs = Vec::with_capacity(tokens.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(tokens);
        let xs = g.gather_rows(p[self.embed], &inputs)?;
        let xz = g.matmul(xs, p[self.lstm.wx])?;
        let xz = g.add(xz, ctx.context_proj)?;
        let mut s = state.lstm;
        let mut terms = Vec::with_capacity(inputs.len());
        for (i, &target) in tokens.iter().chain(std::iter::once(&EOS)).enumerate() {
            let row = g.row(xz, i)?;
            s = self.lstm.step(g, p, row, s)?;
            let out = self.output(g, p, ctx, s.h)?;
            let pt = g.pick(out.probs, target)?;
            terms.push(g.log(pt)?);
        }
        let all = g.concat(&terms);
        Ok(g.sum(all))
    }
}

/// Outcome of [`generate_paragraph`].
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities, EOS included when present.
    pub log_prob: f64,
    /// Length-normalized score used for ranking.
    pub score: f64,
    /// No hypothesis reached EOS within `max_len`.
    pub truncated: bool,
}

struct Hyp {
    tokens: Vec<usize>,
    log_prob: f64,
    state: DecoderState,
}

fn normalized(log_prob: f64, len: usize) -> f64 {
    log_prob / len.max(1) as f64
}

/// Beam search ranked by mean token log-probability. EOS is disallowed at
/// the first step so every paragraph has at least one token.
pub fn generate_paragraph(
    dec: &DecoderParams,
    g: &mut Graph,
    p: &Bound,
    ctx: &DecoderContext,
    init: DecoderState,
    beam_size: usize,
    max_len: usize,
) -> Result<Generated> {
    let beam_size = beam_size.max(1);
    let mut live = vec![Hyp { tokens: vec![], log_prob: 0.0, state: init }];
    let mut finished: Vec<Generated> = vec![];
    for step in 0..max_len.max(1) {
        let mut cands: Vec<(f64, usize, usize, DecoderState)> = vec![];
        for (h, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let (out, state) = dec.decode_step(g, p, prev, hyp.state, ctx)?;
            let probs = g.value(out.probs);
            let mut order: Vec<usize> = (0..probs.len()).filter(|&t| !(step == 0 && t == EOS)).collect();
            order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
            for &t in order.iter().take(beam_size) {
                cands.push((hyp.log_prob + probs[t].ln(), h, t, state));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = vec![];
        for (lp, h, t, state) in cands.into_iter().take(beam_size) {
            let mut tokens = live[h].tokens.clone();
            if t == EOS {
                finished.push(Generated {
                    score: normalized(lp, tokens.len() + 1),
                    tokens,
                    log_prob: lp,
                    truncated: false,
                });
            } else {
                tokens.push(t);
                next.push(Hyp { tokens, log_prob: lp, state });
            }
        }
        live = next;
        if live.is_empty() || finished.len() >= beam_size {
            break;
        }
    }
    if finished.is_empty() {
        finished = live
            .into_iter()
            .map(|h| Generated {
                score: normalized(h.log_prob, h.tokens.len()),
                tokens: h.tokens,
                log_prob: h.log_prob,
                truncated: true,
            })
            .collect();
    }
    let best = finished
        .into_iter()
        .reduce(|a, b| if b.score > a.score { b } else { a })
        .expect("beam keeps at least one hypothesis");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Model, ModelConfig};
    use crate::corpus::Vocab;

    fn model(vocab: usize) -> Model {
        let mut tokens: Vec<String> = Vocab::reserved().tokens().to_vec();
        tokens.extend((tokens.len()..vocab).map(|i| format!("w{i}")));
        let cfg = ModelConfig { embed_dim: 6, hidden: 3, bins: 2 };
        Model::new(cfg, tokens.into(), 11)
    }

    fn context(m: &Model, g: &mut Graph, p: &Bound, plan: &[usize], bin: usize) -> (DecoderContext, DecoderState) {
        let enc = m.layout.encoder.encode_plan(g, p, plan).unwrap();
        let hy = g.zeros(6);
        m.layout.decoder.init_decoder(g, p, enc.r_z, bin, hy, enc.states, plan).unwrap()
    }

    #[test]
    fn distributions_normalize_and_copy_stays_on_plan_tokens() {
        let m = model(12);
        let mut g = Graph::new();
        let p = m.params.bind(&mut g).unwrap();
        let plan = [7, 9, 7];
        let (ctx, s) = context(&m, &mut g, &p, &plan, 0);
        let (out, _) = m.layout.decoder.decode_step(&mut g, &p, BOS, s, &ctx).unwrap();
        let probs = g.value(out.probs);
        assert!(probs.iter().all(|&x| x >= 0.0));
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (i, &c) in g.value(out.copy).iter().enumerate() {
            assert_eq!(c > 0.0, i == 7 || i == 9);
        }
    }

    #[test]
    fn gate_limits() {
        let mut m = model(12);
        let gb = m.layout.decoder.gate.b;
        m.params.get_mut(gb).values[0] = -1e4;
        let mut g = Graph::new();
        let p = m.params.bind(&mut g).unwrap();
        let (ctx, s) = context(&m, &mut g, &p, &[8], 0);
        let (out, _) = m.layout.decoder.decode_step(&mut g, &p, BOS, s, &ctx).unwrap();
        assert_eq!(g.value(out.probs), g.value(out.gen));

        m.params.get_mut(gb).values[0] = 1e4;
        let mut g = Graph::new();
        let p = m.params.bind(&mut g).unwrap();
        let (ctx, s) = context(&m, &mut g, &p, &[8], 0);
        let (out, _) = m.layout.decoder.decode_step(&mut g, &p, BOS, s, &ctx).unwrap();
        let probs = g.value(out.probs);
        assert_eq!(probs[8], 1.0);
        assert_eq!(probs.iter().sum::<f64>(), 1.0);
    }

    #[test]
    fn mixture_arithmetic() {
        let mut g = Graph::new();
        let gen = g.vector(vec![0.2, 0.2, 0.2, 0.2, 0.2]);
        let copy = g.vector(vec![0.0, 0.5, 0.0, 0.5, 0.0]);
        let gate = g.vector(vec![0.4]);
        let mix = mix_distribution(&mut g, gen, copy, gate).unwrap();
        let expected = [0.12, 0.32, 0.12, 0.32, 0.12];
        for (a, b) in g.value(mix).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bins_change_attention_memory() {
        let m = model(12);
        let mut g = Graph::new();
        let p = m.params.bind(&mut g).unwrap();
        let (a, _) = context(&m, &mut g, &p, &[7, 8], 0);
        let (b, _) = context(&m, &mut g, &p, &[7, 8], 1);
        assert_ne!(g.value(a.memory), g.value(b.memory));
        let enc = m.layout.encoder.encode_plan(&mut g, &p, &[7]).unwrap();
        let hy = g.zeros(6);
        assert!(m.layout.decoder.init_decoder(&mut g, &p, enc.r_z, 2, hy, enc.states, &[7]).is_err());
    }

    #[test]
    fn beam_one_is_greedy_and_beam_is_deterministic() {
        let m = model(14);
        let mut g = Graph::new();
        let p = m.params.bind(&mut g).unwrap();
        let (ctx, s) = context(&m, &mut g, &p, &[7, 8, 9], 1);
        let dec = &m.layout.decoder;
        let beam1 = generate_paragraph(dec, &mut g, &p, &ctx, s, 1, 12).unwrap();

        let (mut prev, mut state, mut greedy, mut lp) = (BOS, s, vec![], 0.0);
        for step in 0..12 {
            let (out, next) = dec.decode_step(&mut g, &p, prev, state, &ctx).unwrap();
            let probs = g.value(out.probs).to_vec();
            let mut best = 0;
            for t in 0..probs.len() {
                if (step > 0 || t != EOS) && probs[t] > probs[best] {
                    best = t;
                }
            }
            lp += probs[best].ln();
            if best == EOS {
                break;
            }
            greedy.push(best);
            prev = best;
            state = next;
        }
        assert_eq!(beam1.tokens, greedy);
        assert!((beam1.log_prob - lp).abs() < 1e-12);

        let b5 = generate_paragraph(dec, &mut g, &p, &ctx, s, 5, 12).unwrap();
        let again = generate_paragraph(dec, &mut g, &p, &ctx, s, 5, 12).unwrap();
        assert_eq!(b5, again);
        assert!(!b5.tokens.is_empty());
    }
}
