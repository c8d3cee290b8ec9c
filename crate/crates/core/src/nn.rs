//! Recurrent cells, bilinear attention and dense layers on top of the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Bound, Graph, ParamId, ParamStore, Result, Var};

/// Uniform init half-width for every weight.
pub const INIT_SCALE: f64 = 0.1;
pub const FORGET_BIAS: f64 = 1.0;

/// LSTM with gate order input, forget, candidate, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(g: &mut Graph, hidden: usize) -> Self {
        LstmState { h: g.zeros(hidden), c: g.zeros(hidden) }
    }
}

impl Lstm {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = store.add_uniform(format!("{name}.wx"), &[input, 4 * hidden], INIT_SCALE, rng);
        let wh = store.add_uniform(format!("{name}.wh"), &[hidden, 4 * hidden], INIT_SCALE, rng);
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|x| *x = FORGET_BIAS);
        let b = store.add(format!("{name}.b"), &[4 * hidden], bias);
        Lstm { wx, wh, b, input, hidden }
    }

    /// Input projections `X·Wx + b` for a whole `[len, input]` sequence.
    pub fn project(&self, g: &mut Graph, p: &Bound, xs: Var) -> Result<Var> {
        let z = g.matmul(xs, p[self.wx])?;
        g.add(z, p[self.b])
    }

    /// Input projection of a single vector.
    pub fn project_one(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let z = g.matmul(x, p[self.wx])?;
        g.add(z, p[self.b])
    }

    /// One step from an already projected input.
    pub fn step(&self, g: &mut Graph, p: &Bound, xz: Var, s: LstmState) -> Result<LstmState> {
        let n = self.hidden;
        let hz = g.matmul(s.h, p[self.wh])?;
        let z = g.add(xz, hz)?;
        let i = g.slice(z, 0, n)?;
        let i = g.sigmoid(i);
        let f = g.slice(z, n, n)?;
        let f = g.sigmoid(f);
        let c_hat = g.slice(z, 2 * n, n)?;
        let c_hat = g.tanh(c_hat);
        let o = g.slice(z, 3 * n, n)?;
        let o = g.sigmoid(o);
        let keep = g.mul(f, s.c)?;
        let write = g.mul(i, c_hat)?;
        let c = g.add(keep, write)?;
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok(LstmState { h, c })
    }

    /// Hidden states over a `[len, input]` sequence, in order of processing.
    pub fn run(&self, g: &mut Graph, p: &Bound, xs: Var, reverse: bool) -> Result<Vec<Var>> {
        let len = g.shape(xs)[0];
        let proj = self.project(g, p, xs)?;
        let mut s = LstmState::zeros(g, self.hidden);
        let mut out = Vec::with_capacity(len);
        for k in 0..len {
            let t = if reverse { len - 1 - k } else { k };
            let row = g.row(proj, t)?;
            s = self.step(g, p, row, s)?;
            out.push(s.h);
        }
        if reverse {
            out.reverse();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

impl BiLstm {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        BiLstm {
            fwd: Lstm::register(store, &format!("{name}.fwd"), input, hidden, rng),
            bwd: Lstm::register(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// `[len, 2·hidden]` matrix of concatenated forward and backward states.
    pub fn run(&self, g: &mut Graph, p: &Bound, xs: Var) -> Result<Var> {
        let f = self.fwd.run(g, p, xs, false)?;
        let b = self.bwd.run(g, p, xs, true)?;
        let rows: Vec<Var> = f.into_iter().zip(b).map(|(f, b)| g.concat(&[f, b])).collect();
        g.stack_rows(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn register<R: Rng>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = store.add_uniform(format!("{name}.w"), &[input, output], INIT_SCALE, rng);
        let b = store.add(format!("{name}.b"), &[output], vec![0.0; output]);
        Linear { w, b }
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let z = g.matmul(x, p[self.w])?;
        g.add(z, p[self.b])
    }
}

/// Result of attending over a `[n, d]` key matrix.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub scores: Var,
    pub weights: Var,
    pub output: Var,
}

/// Bilinear scores `qᵀ·W·k_j`, softmax weights and the weighted sum of keys.
pub fn attend(g: &mut Graph, q: Var, w: Var, keys: Var) -> Result<Attention> {
    let scores = bilinear_scores(g, q, w, keys)?;
    let weights = g.softmax(scores)?;
    let output = g.matmul(weights, keys)?;
    Ok(Attention { scores, weights, output })
}

pub fn bilinear_scores(g: &mut Graph, q: Var, w: Var, keys: Var) -> Result<Var> {
    let qw = g.matmul(q, w)?;
    g.matmul(keys, qw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_input_step_has_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let lstm = Lstm::register(&mut store, "l", 3, 2, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g).unwrap();
        let x = g.zeros(3);
        let xz = lstm.project_one(&mut g, &p, x).unwrap();
        let s0 = LstmState::zeros(&mut g, 2);
        let s1 = lstm.step(&mut g, &p, xz, s0).unwrap();
        // Biases only: c = σ(0)·tanh(0) = 0, so h = 0 as well.
        assert_eq!(g.value(s1.c), &[0.0, 0.0]);
        let s2 = lstm.step(&mut g, &p, xz, s1).unwrap();
        assert_eq!(g.value(s2.h), &[0.0, 0.0]);
    }

    #[test]
    fn one_step_matches_manual_arithmetic() {
        let mut store = ParamStore::new();
        let lstm = Lstm {
            wx: store.add("wx", &[1, 4], vec![0.5, -0.3, 0.8, 0.2]),
            wh: store.add("wh", &[1, 4], vec![0.1, 0.2, -0.4, 0.7]),
            b: store.add("b", &[4], vec![0.0, 1.0, 0.1, -0.1]),
            input: 1,
            hidden: 1,
        };
        let mut g = Graph::new();
        let p = store.bind(&mut g).unwrap();
        let x = g.vector(vec![2.0]);
        let xz = lstm.project_one(&mut g, &p, x).unwrap();
        let s0 = LstmState { h: g.vector(vec![0.5]), c: g.vector(vec![-1.0]) };
        let s1 = lstm.step(&mut g, &p, xz, s0).unwrap();
        let z = [1.0 + 0.05, -0.6 + 1.0 + 0.1, 1.6 + 0.1 - 0.2, 0.4 - 0.1 + 0.35];
        let c = sigmoid(z[1]) * -1.0 + sigmoid(z[0]) * z[2].tanh();
        let h = sigmoid(z[3]) * c.tanh();
        assert!((g.value(s1.c)[0] - c).abs() < 1e-12);
        assert!((g.value(s1.h)[0] - h).abs() < 1e-12);
    }

    #[test]
    fn attention_weights_normalize_and_singleton_is_identity() {
        let mut g = Graph::new();
        let q = g.vector(vec![0.3, -0.2]);
        let w = g.constant(&[2, 2], vec![1.0, 0.5, -0.5, 2.0]).unwrap();
        let keys = g.constant(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 2.0]).unwrap();
        let a = attend(&mut g, q, w, keys).unwrap();
        assert!((g.value(a.weights).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let one = g.constant(&[1, 2], vec![0.7, -0.4]).unwrap();
        let a = attend(&mut g, q, w, one).unwrap();
        assert_eq!(g.value(a.output), &[0.7, -0.4]);
    }

    #[test]
    fn bilstm_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let bi = BiLstm::register(&mut store, "bi", 3, 4, &mut rng);
        let mut g = Graph::new();
        let p = store.bind(&mut g).unwrap();
        let xs = g.constant(&[5, 3], (0..15).map(|i| i as f64 / 10.0).collect()).unwrap();
        let out = bi.run(&mut g, &p, xs).unwrap();
        assert_eq!(g.shape(out), &[5, 8]);
    }
}
