//! Variational objective with plan supervision, AdaGrad and the epoch loop.
//!
//! The minimized loss for one summary is
//! `−(reconstruction − KL + λ·supervision)` where, per paragraph `t`,
//! reconstruction adds the teacher-forced token log-likelihood under the
//! chosen plan and the prior's log-probability of not stopping; after the
//! last paragraph it adds the prior's log-probability of EOP.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, gumbel_from_uniform, Bound, GradCheckReport, Graph, ParamStore, Var};
use crate::error::{ModelError, Result};
use crate::model::{EncodedGame, Layout, Model};
use crate::planner::{argmax, kl_divergence, sample_plan, scheduled_sampling_rate, without_eop, Sampling};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Weight of the plan-supervision term.
    pub lambda: f64,
    /// Slope `c` of the oracle-rate decay, per optimizer update.
    pub slope: f64,
    pub temperature: f64,
    /// Summaries per update.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub adagrad_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.15,
            lambda: 2.0,
            slope: 1.0 / 50_000.0,
            temperature: 0.1,
            batch_size: 5,
            epochs: 20,
            seed: 1,
            clip_norm: 5.0,
            adagrad_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.lambda >= 0.0
            && self.slope > 0.0
            && self.temperature > 0.0
            && self.clip_norm > 0.0
            && self.adagrad_eps > 0.0;
        if !ok {
            return Err(ModelError::Input(format!("invalid training configuration {self:?}")));
        }
        if self.batch_size == 0 {
            return Err(ModelError::Input("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub reconstruction: f64,
    pub kl: f64,
    pub supervision: f64,
    pub total: f64,
    /// Exact KL of every step.
    pub step_kl: Vec<f64>,
    /// Steps that used the oracle plan, and steps that used a Gumbel sample.
    pub oracle_steps: usize,
    pub sampled_steps: usize,
    /// Posterior argmax per step.
    pub posterior_argmax: Vec<usize>,
}

/// Loss settings that do not depend on the update counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub lambda: f64,
    pub temperature: f64,
    /// Probability of substituting the oracle plan at each step.
    pub epsilon: f64,
}

/// Builds the loss of one summary on `g`. Randomness comes only from `rng`.
pub fn build_loss<R: Rng>(
    layout: &Layout,
    g: &mut Graph,
    p: &Bound,
    game: &EncodedGame,
    cfg: LossConfig,
    rng: &mut R,
) -> Result<(Var, LossBreakdown)> {
    let t_max = game.paragraphs.len();
    if game.oracle.len() != t_max {
        return Err(ModelError::Data(format!(
            "oracle plan has {} steps for {} paragraphs",
            game.oracle.len(),
            t_max
        )));
    }
    let (enc, pl, dec) = (&layout.encoder, &layout.planner, &layout.decoder);
    let plans = game
        .pool
        .iter()
        .map(|ids| enc.encode_plan(g, p, ids))
        .collect::<Result<Vec<_>>>()?;
    let r_zs: Vec<Var> = plans.iter().map(|e| e.r_z).collect();
    let keys = pl.pool_keys(g, p, &r_zs)?;
    let pool_matrix = g.stack_rows(&r_zs)?;
    let n = r_zs.len();

    let mut bd = LossBreakdown::default();
    let (mut recon, mut kls, mut sups) = (vec![], vec![], vec![]);
    let mut state = enc.initial_state(g);
    for t in 0..t_max {
        let y = &game.paragraphs[t];
        let r_y = enc.encode_paragraph(g, p, y)?;
        let prior = pl.prior(g, p, state.h_z.h, state.h_y.h, keys)?;
        let (prior_plans, log_continue) = without_eop(g, &prior)?;
        let next = enc.step_text_state(g, p, r_y, state)?;
        let post = pl.posterior(g, p, state.h_z.h, next.h_y.h, keys)?;
        let kl = kl_divergence(g, post.log_probs, prior_plans)?;
        bd.step_kl.push(g.scalar(kl));
        bd.posterior_argmax.push(argmax(g.value(post.log_probs)));
        kls.push(kl);
        sups.push(g.pick(post.log_probs, game.oracle[t])?);

        let (index, weights) = if rng.gen::<f64>() < cfg.epsilon {
            bd.oracle_steps += 1;
            let mut one_hot = vec![0.0; n];
            one_hot[game.oracle[t]] = 1.0;
            (game.oracle[t], g.vector(one_hot))
        } else {
            bd.sampled_steps += 1;
            let noise: Vec<f64> = (0..n).map(|_| gumbel_from_uniform(rng.gen())).collect();
            let s = sample_plan(g, &post, Sampling::Gumbel { temperature: cfg.temperature, noise: &noise })?;
            (s.index, s.weights)
        };
        let r_z = g.matmul(weights, pool_matrix)?;
        let (ctx, ds) = dec.init_decoder(g, p, r_z, game.bins[t], state.h_y.h, plans[index].states, &game.pool[index])?;
        recon.push(dec.log_likelihood(g, p, y, ds, &ctx)?);
        recon.push(log_continue);
        state = enc.step_plan_state(g, p, r_z, next)?;
    }
    let prior = pl.prior(g, p, state.h_z.h, state.h_y.h, keys)?;
    recon.push(g.pick(prior.log_probs, n)?);

    let recon = {
        let c = g.concat(&recon);
        g.sum(c)
    };
    let kl = if kls.is_empty() {
        g.zeros(1)
    } else {
        let c = g.concat(&kls);
        g.sum(c)
    };
    let sup = if sups.is_empty() {
        g.zeros(1)
    } else {
        let c = g.concat(&sups);
        g.sum(c)
    };
    let elbo = g.sub(recon, kl)?;
    let weighted = g.scale(sup, cfg.lambda);
    let objective = g.add(elbo, weighted)?;
    let total = g.scale(objective, -1.0);

    bd.reconstruction = g.scalar(recon);
    bd.kl = g.scalar(kl);
    bd.supervision = g.scalar(sup);
    bd.total = g.scalar(total);
    Ok((total, bd))
}

/// Loss of one summary at update `k`, without gradients.
pub fn compute_loss<R: Rng>(model: &Model, game: &EncodedGame, k: u64, cfg: &TrainConfig, rng: &mut R) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g)?;
    let lc = LossConfig {
        lambda: cfg.lambda,
        temperature: cfg.temperature,
        epsilon: scheduled_sampling_rate(k, cfg.slope),
    };
    Ok(build_loss(&model.layout, &mut g, &p, game, lc, rng)?.1)
}

/// Loss and parameter gradients of one summary.
pub fn loss_and_gradients<R: Rng>(
    model: &Model,
    game: &EncodedGame,
    cfg: LossConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g)?;
    let (total, bd) = build_loss(&model.layout, &mut g, &p, game, cfg, rng)?;
    g.backward(total)?;
    Ok((bd, model.params.grads(&g, &p)))
}

/// Central-difference check of the full loss of one game. The noise
/// stream is reseeded with `seed` on every evaluation so all evaluations
/// see the same oracle/sample choices and Gumbel noise.
pub fn check_loss_gradients(model: &mut Model, game: &EncodedGame, cfg: LossConfig, h: f64, seed: u64) -> Result<GradCheckReport> {
    let layout = model.layout;
    grad_check(&mut model.params, h, |g, p| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(build_loss(&layout, g, p, game, cfg, &mut rng)?.0)
    })
}

/// AdaGrad with per-entry squared-gradient accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaGrad {
    pub lr: f64,
    pub eps: f64,
    pub acc: Vec<Vec<f64>>,
}

impl AdaGrad {
    pub fn new(params: &ParamStore, lr: f64, eps: f64) -> Self {
        AdaGrad { lr, eps, acc: params.iter().map(|p| vec![0.0; p.values.len()]).collect() }
    }

    /// `acc += g²; θ −= lr·g / √(acc + eps)`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) {
        for ((values, acc), grad) in params.values_mut().zip(&mut self.acc).zip(grads) {
            for ((v, a), &gr) in values.iter_mut().zip(acc.iter_mut()).zip(grad) {
                *a += gr * gr;
                *v -= self.lr * gr / (*a + self.eps).sqrt();
            }
        }
    }
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub updates: u64,
    pub epsilon: f64,
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub supervision: f64,
    pub valid_accuracy: f64,
    pub valid_loss: f64,
}

pub const LOSS_LOG_HEADER: &str =
    "epoch,updates,epsilon,total,reconstruction,kl,supervision,valid_accuracy,valid_loss";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch,
            self.updates,
            self.epsilon,
            self.total,
            self.reconstruction,
            self.kl,
            self.supervision,
            self.valid_accuracy,
            self.valid_loss
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Row 0 holds the untrained model's loss under oracle plans; its
    /// component columns are NaN.
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept (0 means the initialization).
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub updates: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOSS_LOG_HEADER}\n");
        for e in &self.epochs {
            out.push_str(&e.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Share of steps where the posterior's argmax is the oracle plan, with
/// oracle plans fed back, and the mean loss under those plans.
pub fn posterior_accuracy(model: &Model, games: &[EncodedGame], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let lc = LossConfig { lambda: cfg.lambda, temperature: cfg.temperature, epsilon: 1.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut hits, mut steps, mut loss) = (0usize, 0usize, 0.0);
    for game in games {
        let mut g = Graph::new();
        let p = model.params.bind(&mut g)?;
        let (_, bd) = build_loss(&model.layout, &mut g, &p, game, lc, &mut rng)?;
        hits += bd.posterior_argmax.iter().zip(&game.oracle).filter(|(a, b)| a == b).count();
        steps += game.oracle.len();
        loss += bd.total;
    }
    let acc = if steps == 0 { 0.0 } else { 100.0 * hits as f64 / steps as f64 };
    let mean = if games.is_empty() { 0.0 } else { loss / games.len() as f64 };
    Ok((acc, mean))
}

fn check_finite(bd: &LossBreakdown, epoch: usize, game: usize) -> Result<()> {
    if !bd.total.is_finite() {
        return Err(ModelError::Numeric(format!(
            "loss became {} at epoch {epoch}, game {game} (reconstruction {}, kl {}, supervision {})",
            bd.total, bd.reconstruction, bd.kl, bd.supervision
        )));
    }
    if let Some(k) = bd.step_kl.iter().find(|&&k| k < -1e-9) {
        return Err(ModelError::Numeric(format!("negative KL {k} at epoch {epoch}, game {game}")));
    }
    Ok(())
}

/// Trains `model` in place and keeps the parameters with the best
/// validation posterior accuracy. Ties are settled by `tiebreak` (higher
/// wins, e.g. validation BLEU), which only runs on tied epochs; remaining
/// ties keep the earlier epoch.
pub fn train(
    model: &mut Model,
    train_set: &[EncodedGame],
    valid_set: &[EncodedGame],
    cfg: &TrainConfig,
    tiebreak: &mut dyn FnMut(&Model) -> Result<f64>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(ModelError::Data("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdaGrad::new(&model.params, cfg.learning_rate, cfg.adagrad_eps);
    let (mut best_acc, init_vloss) = posterior_accuracy(model, valid_set, cfg)?;
    let (_, init_loss) = posterior_accuracy(model, train_set, cfg)?;
    let mut best_tie: Option<f64> = None;
    let mut best = (0usize, model.params.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut k: u64 = 0;
    let mut logs = vec![EpochLog {
        epoch: 0,
        updates: 0,
        epsilon: 1.0,
        total: init_loss,
        reconstruction: f64::NAN,
        kl: f64::NAN,
        supervision: f64::NAN,
        valid_accuracy: best_acc,
        valid_loss: init_vloss,
    }];
    on_epoch(&logs[0]);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        for batch in order.chunks(cfg.batch_size) {
            let lc = LossConfig {
                lambda: cfg.lambda,
                temperature: cfg.temperature,
                epsilon: scheduled_sampling_rate(k, cfg.slope),
            };
            let mut grads: Option<Vec<Vec<f64>>> = None;
            for &i in batch {
                let (bd, gr) = loss_and_gradients(model, &train_set[i], lc, &mut rng)?;
                check_finite(&bd, epoch, i)?;
                for (s, v) in sums.iter_mut().zip([bd.total, bd.reconstruction, bd.kl, bd.supervision]) {
                    *s += v;
                }
                match &mut grads {
                    None => grads = Some(gr),
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().flatten().zip(gr.iter().flatten()) {
                            *a += b;
                        }
                    }
                }
            }
            let mut grads = grads.expect("batches are non-empty");
            let norm = clip_global_norm(&mut grads, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(ModelError::Numeric(format!("gradient norm {norm} at epoch {epoch}")));
            }
            opt.update(&mut model.params, &grads);
            k += 1;
        }
        let (acc, vloss) = posterior_accuracy(model, valid_set, cfg)?;
        let n = train_set.len() as f64;
        let log = EpochLog {
            epoch,
            updates: k,
            epsilon: scheduled_sampling_rate(k, cfg.slope),
            total: sums[0] / n,
            reconstruction: sums[1] / n,
            kl: sums[2] / n,
            supervision: sums[3] / n,
            valid_accuracy: acc,
            valid_loss: vloss,
        };
        on_epoch(&log);
        logs.push(log);
        let better = if acc > best_acc {
            best_tie = None;
            true
        } else if acc == best_acc {
            let old = match best_tie {
                Some(t) => t,
                None => {
                    let current = std::mem::replace(&mut model.params, best.1.clone());
                    let t = tiebreak(model);
                    model.params = current;
                    t?
                }
            };
            best_tie = Some(old);
            let new = tiebreak(model)?;
            if new > old {
                best_tie = Some(new);
                true
            } else {
                false
            }
        } else {
            false
        };
        if better {
            best_acc = acc;
            best = (epoch, model.params.clone());
        }
    }
    model.params = best.1;
    Ok(TrainReport { epochs: logs, best_epoch: best.0, best_accuracy: best_acc, updates: k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, generate_toy_corpus, ToyParams};
    use crate::model::ModelConfig;

    #[test]
    fn adagrad_closed_forms() {
        let mut store = ParamStore::new();
        let id = store.add("x", &[2], vec![1.0, -2.0]);
        let mut opt = AdaGrad::new(&store, 0.15, 1e-8);
        opt.update(&mut store, &[vec![0.0, 0.0]]);
        assert_eq!(store.get(id).values, vec![1.0, -2.0]);

        let mut store = ParamStore::new();
        let id = store.add("x", &[1], vec![0.5]);
        let mut opt = AdaGrad::new(&store, 0.15, 1e-8);
        let gs = [0.3, -0.1, 0.7];
        let (mut x, mut acc) = (0.5f64, 0.0f64);
        for (i, &gr) in gs.iter().enumerate() {
            opt.update(&mut store, &[vec![gr]]);
            acc += gr * gr;
            x -= 0.15 * gr / (acc + 1e-8).sqrt();
            if i == 0 {
                assert!((store.get(id).values[0] - (0.5 - 0.15 * 0.3 / (0.09f64 + 1e-8).sqrt())).abs() < 1e-15);
            }
        }
        assert_eq!(store.get(id).values[0], x);
    }

    #[test]
    fn clipping() {
        let mut g = vec![vec![3.0], vec![4.0]];
        assert_eq!(clip_global_norm(&mut g, 10.0), 5.0);
        assert_eq!(g, vec![vec![3.0], vec![4.0]]);
        clip_global_norm(&mut g, 1.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }

    fn tiny_setup() -> (Model, Vec<EncodedGame>) {
        let corpus = generate_toy_corpus(3, 6, &ToyParams::default()).unwrap();
        let mut seqs: Vec<Vec<String>> = vec![];
        for g in &corpus.games {
            seqs.extend(g.pool.plans.iter().map(|p| p.tokens.clone()));
            seqs.extend(g.document.paragraphs.iter().cloned());
        }
        let vocab = build_vocab(seqs.iter().map(Vec::as_slice), 1);
        let model = Model::new(ModelConfig { embed_dim: 8, hidden: 4, bins: 1 }, vocab, 1);
        let games = corpus
            .games
            .iter()
            .map(|g| model.encode_game(&g.pool, &g.document, &g.plan).unwrap())
            .collect();
        (model, games)
    }

    #[test]
    fn lambda_zero_drops_supervision() {
        let (model, games) = tiny_setup();
        let mk = |lambda| TrainConfig { lambda, ..TrainConfig::default() };
        let a = compute_loss(&model, &games[0], 0, &mk(0.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.total, -(a.reconstruction - a.kl));
        let b = compute_loss(&model, &games[0], 0, &mk(2.0), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!((b.total - -(b.reconstruction - b.kl + 2.0 * b.supervision)).abs() < 1e-9);
        assert!(b.step_kl.iter().all(|&k| k >= -1e-9));
    }

    #[test]
    fn oracle_rate_one_never_samples() {
        let (model, games) = tiny_setup();
        let cfg = TrainConfig::default();
        for g in &games {
            let bd = compute_loss(&model, g, 0, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            assert_eq!(bd.sampled_steps, 0);
            assert_eq!(bd.oracle_steps, g.paragraphs.len());
        }
        let late = compute_loss(&model, &games[0], 1 << 40, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(late.oracle_steps, 0);
    }

    #[test]
    fn misaligned_plan_is_a_data_error() {
        let (model, games) = tiny_setup();
        let mut bad = games[0].clone();
        bad.oracle.pop();
        let r = compute_loss(&model, &bad, 0, &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(r, Err(ModelError::Data(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let (mut model, games) = tiny_setup();
        let before = model.params.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, batch_size: 2, ..TrainConfig::default() };
        train(&mut model, &games, &games[..2], &cfg, &mut |_| Ok(0.0), |_| {}).unwrap();
        assert_eq!(model.params, before);
    }

    #[test]
    fn training_lowers_loss_and_is_deterministic() {
        let run = || {
            let (mut model, games) = tiny_setup();
            let cfg = TrainConfig { epochs: 3, batch_size: 1, slope: 1.0 / 30.0, ..TrainConfig::default() };
            let rep = train(&mut model, &games, &games, &cfg, &mut |_| Ok(0.0), |_| {}).unwrap();
            (model, rep)
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(m1.params, m2.params);
        assert_eq!(r1.to_csv(), r2.to_csv());
        let (first, last) = (&r1.epochs[0], r1.epochs.last().unwrap());
        assert_eq!(first.epoch, 0);
        assert!(last.valid_loss < first.valid_loss, "{}", r1.to_csv());
        assert!(r1.epochs.iter().skip(1).any(|e| e.epsilon < 1.0));
    }
}
