//! Paragraph and plan encoders and the two running states over the
//! document: one over generated paragraphs, one over selected plans.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Var};
use crate::error::{ModelError, Result};
use crate::nn::{attend, BiLstm, Lstm, LstmState, INIT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub embed: ParamId,
    pub text: BiLstm,
    pub plan: BiLstm,
    pub q_text: ParamId,
    pub w_text: ParamId,
    pub q_plan: ParamId,
    pub w_plan: ParamId,
    pub lstm_text: Lstm,
    pub lstm_plan: Lstm,
    pub hidden: usize,
}

/// Running document state: `h_y` over paragraphs, `h_z` over plans.
#[derive(Debug, Clone, Copy)]
pub struct ContextState {
    pub h_y: LstmState,
    pub h_z: LstmState,
    /// Paragraphs folded into `h_y`.
    pub t_y: usize,
    /// Plans folded into `h_z`.
    pub t_z: usize,
}

#[derive(Debug, Clone)]
pub struct PlanEncoding {
    /// Pooled plan vector.
    pub r_z: Var,
    /// `[len, 2H]` per-token states.
    pub states: Var,
    pub weights: Var,
}

impl EncoderParams {
    pub fn register<R: Rng>(store: &mut ParamStore, vocab: usize, embed_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let d = 2 * hidden;
        EncoderParams {
            embed: store.add_uniform("embed", &[vocab, embed_dim], INIT_SCALE, rng),
            text: BiLstm::register(store, "enc.text", embed_dim, hidden, rng),
            plan: BiLstm::register(store, "enc.plan", embed_dim, hidden, rng),
            q_text: store.add_uniform("enc.q_text", &[d], INIT_SCALE, rng),
            w_text: store.add_uniform("enc.w_text", &[d, d], INIT_SCALE, rng),
            q_plan: store.add_uniform("enc.q_plan", &[d], INIT_SCALE, rng),
            w_plan: store.add_uniform("enc.w_plan", &[d, d], INIT_SCALE, rng),
            lstm_text: Lstm::register(store, "ctx.text", d, d, rng),
            lstm_plan: Lstm::register(store, "ctx.plan", d, d, rng),
            hidden,
        }
    }

    pub fn dim(&self) -> usize {
        2 * self.hidden
    }

    fn embed(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(ModelError::Input("cannot encode an empty sequence".into()));
        }
        Ok(g.gather_rows(p[self.embed], ids)?)
    }

    /// `r_y`: self-attention with `q_text` over the BiLSTM states of a paragraph.
    pub fn encode_paragraph(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<Var> {
        let xs = self.embed(g, p, ids)?;
        let states = self.text.run(g, p, xs)?;
        Ok(attend(g, p[self.q_text], p[self.w_text], states)?.output)
    }

    pub fn encode_plan(&self, g: &mut Graph, p: &Bound, ids: &[usize]) -> Result<PlanEncoding> {
        let xs = self.embed(g, p, ids)?;
        let states = self.plan.run(g, p, xs)?;
        let a = attend(g, p[self.q_plan], p[self.w_plan], states)?;
        Ok(PlanEncoding { r_z: a.output, states, weights: a.weights })
    }

    pub fn initial_state(&self, g: &mut Graph) -> ContextState {
        ContextState {
            h_y: LstmState::zeros(g, self.dim()),
            h_z: LstmState::zeros(g, self.dim()),
            t_y: 0,
            t_z: 0,
        }
    }

    pub fn step_text_state(&self, g: &mut Graph, p: &Bound, r_y: Var, s: ContextState) -> Result<ContextState> {
        let xz = self.lstm_text.project_one(g, p, r_y)?;
        let h_y = self.lstm_text.step(g, p, xz, s.h_y)?;
        Ok(ContextState { h_y, t_y: s.t_y + 1, ..s })
    }

    pub fn step_plan_state(&self, g: &mut Graph, p: &Bound, r_z: Var, s: ContextState) -> Result<ContextState> {
        let xz = self.lstm_plan.project_one(g, p, r_z)?;
        let h_z = self.lstm_plan.step(g, p, xz, s.h_z)?;
        Ok(ContextState { h_z, t_z: s.t_z + 1, ..s })
    }
}
