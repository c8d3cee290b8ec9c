//! Prior and posterior over the plan pool, plan sampling and the
//! scheduled-sampling rate.
//!
//! Both distributions are attention over the same pool encodings with a
//! shared bilinear scorer; they differ in the feed-forward layer building
//! the query and in which paragraph state the query reads. The prior also
//! scores a learned end-of-plan row appended after the pool.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Var};
use crate::error::{ModelError, Result};
use crate::nn::{bilinear_scores, Linear, INIT_SCALE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannerParams {
    pub ff_plan: Linear,
    pub ff_v: Linear,
    pub w_pool: ParamId,
    pub eop: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Source {
    Prior,
    Posterior,
}

#[derive(Debug, Clone, Copy)]
pub struct PlanDistribution {
    /// Log-probabilities over the pool, plus EOP last for the prior.
    pub log_probs: Var,
    pub source: Source,
    /// Number of pool plans (EOP excluded).
    pub plans: usize,
}

impl PlanDistribution {
    /// Index of EOP, present on prior distributions only.
    pub fn eop(&self) -> Option<usize> {
        (self.source == Source::Prior).then_some(self.plans)
    }

    pub fn probs(&self, g: &Graph) -> Vec<f64> {
        g.value(self.log_probs).iter().map(|x| x.exp()).collect()
    }
}

/// Sampling mode for [`PlannerParams::sample_plan`].
#[derive(Debug, Clone, Copy)]
pub enum Sampling<'a> {
    /// Gumbel-Softmax relaxation with standard Gumbel `noise`, one value per entry.
    Gumbel { temperature: f64, noise: &'a [f64] },
    Greedy,
}

#[derive(Debug, Clone, Copy)]
pub struct PlanSample {
    pub index: usize,
    /// Relaxed (or exact) one-hot weights over the distribution's support.
    pub weights: Var,
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl PlannerParams {
    pub fn register<R: Rng>(store: &mut ParamStore, hidden: usize, rng: &mut R) -> Self {
        let d = 2 * hidden;
        PlannerParams {
            ff_plan: Linear::register(store, "plan.ff_plan", 2 * d, d, rng),
            ff_v: Linear::register(store, "plan.ff_v", 2 * d, d, rng),
            w_pool: store.add_uniform("plan.w_pool", &[d, d], INIT_SCALE, rng),
            eop: store.add_uniform("plan.eop", &[d], INIT_SCALE, rng),
        }
    }

    /// `[N + 1, 2H]` key matrix: pool encodings in pool order, then EOP.
    pub fn pool_keys(&self, g: &mut Graph, p: &Bound, encodings: &[Var]) -> Result<Var> {
        if encodings.is_empty() {
            return Err(ModelError::Input("plan pool is empty".into()));
        }
        let mut rows = encodings.to_vec();
        rows.push(p[self.eop]);
        Ok(g.stack_rows(&rows)?)
    }

    fn query(&self, g: &mut Graph, p: &Bound, ff: Linear, h_z: Var, h_y: Var) -> Result<Var> {
        let x = g.concat(&[h_z, h_y]);
        let z = ff.forward(g, p, x)?;
        Ok(g.tanh(z))
    }

    /// `p(z^t | y^{<t}, z^{<t})` from the states before step `t`.
    pub fn prior(&self, g: &mut Graph, p: &Bound, h_z_prev: Var, h_y_prev: Var, keys: Var) -> Result<PlanDistribution> {
        let q = self.query(g, p, self.ff_plan, h_z_prev, h_y_prev)?;
        let scores = bilinear_scores(g, q, p[self.w_pool], keys)?;
        Ok(PlanDistribution {
            log_probs: g.log_softmax(scores)?,
            source: Source::Prior,
            plans: g.shape(keys)[0] - 1,
        })
    }

    /// `q(z^t | y^{1:t}, z^{<t})`, reading the state that has already seen paragraph `t`.
    /// Its support is the pool without EOP.
    pub fn posterior(&self, g: &mut Graph, p: &Bound, h_z_prev: Var, h_y_curr: Var, keys: Var) -> Result<PlanDistribution> {
        let q = self.query(g, p, self.ff_v, h_z_prev, h_y_curr)?;
        let scores = bilinear_scores(g, q, p[self.w_pool], keys)?;
        let plans = g.shape(keys)[0] - 1;
        let scores = g.slice(scores, 0, plans)?;
        Ok(PlanDistribution {
            log_probs: g.log_softmax(scores)?,
            source: Source::Posterior,
            plans,
        })
    }
}

/// Prior restricted to pool plans and renormalized, together with
/// `log(1 - p(EOP))`.
pub fn without_eop(g: &mut Graph, prior: &PlanDistribution) -> Result<(Var, Var)> {
    let plans = g.slice(prior.log_probs, 0, prior.plans)?;
    let renorm = g.log_softmax(plans)?;
    let a = g.pick(prior.log_probs, 0)?;
    let b = g.pick(renorm, 0)?;
    let log_continue = g.sub(a, b)?;
    Ok((renorm, log_continue))
}

/// Exact `KL(q ‖ p) = Σ_j q_j (log q_j − log p_j)` from log-probabilities.
pub fn kl_divergence(g: &mut Graph, log_q: Var, log_p: Var) -> Result<Var> {
    let q = g.exp(log_q);
    let diff = g.sub(log_q, log_p)?;
    Ok(g.dot(q, diff)?)
}

pub fn sample_plan(g: &mut Graph, dist: &PlanDistribution, mode: Sampling<'_>) -> Result<PlanSample> {
    match mode {
        Sampling::Gumbel { temperature, noise } => {
            let weights = g.gumbel_softmax_sample(dist.log_probs, temperature, noise)?;
            Ok(PlanSample { index: argmax(g.value(weights)), weights })
        }
        Sampling::Greedy => {
            let lp = g.value(dist.log_probs);
            let index = argmax(lp);
            let mut one_hot = vec![0.0; lp.len()];
            one_hot[index] = 1.0;
            Ok(PlanSample { index, weights: g.vector(one_hot) })
        }
    }
}

/// Linear decay `max(0, 1 − c·k)` of the oracle-plan rate at update `k`.
pub fn scheduled_sampling_rate(k: u64, c: f64) -> f64 {
    (1.0 - c * k as f64).clamp(0.0, 1.0)
}
