//! Two-hidden-layer ReLU Q-network with hand-written backprop and Adam.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::{Error, Result};

/// Hidden layer widths the network may be built with.
pub const HIDDEN_WIDTHS: [usize; 3] = [32, 64, 128];

/// One Q-value per action, indexed by [`crate::env::Action::index`].
pub const N_ACTIONS: usize = 2;

pub type QValues = [f64; N_ACTIONS];

/// Weights are row-major `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub input_dim: usize,
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = MlpParams;

impl MlpParams {
    /// All-zero parameters. Does not restrict `hidden` to [`HIDDEN_WIDTHS`].
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            w1: vec![0.0; hidden * input_dim],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * hidden],
            b2: vec![0.0; hidden],
            w3: vec![0.0; N_ACTIONS * hidden],
            b3: vec![0.0; N_ACTIONS],
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig("input_dim must be ≥ 1".into()));
        }
        check_width(hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(input_dim, hidden);
        let mut glorot = |w: &mut [f64], fan_in: usize, fan_out: usize| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w.iter_mut() {
                *x = rng.random_range(-limit..=limit);
            }
        };
        glorot(&mut p.w1, input_dim, hidden);
        glorot(&mut p.w2, hidden, hidden);
        glorot(&mut p.w3, hidden, N_ACTIONS);
        Ok(p)
    }

    /// Checks shapes and the hidden width.
    pub fn validate(&self) -> Result<()> {
        check_width(self.hidden)?;
        let (i, h) = (self.input_dim, self.hidden);
        let expected = [h * i, h, h * h, h, N_ACTIONS * h, N_ACTIONS];
        for (t, n) in self.tensors().iter().zip(expected) {
            if t.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: t.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.w3,
            &mut self.b3,
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn forward(&self, state: &[f64]) -> Result<QValues> {
        if state.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: state.len(),
            });
        }
        Ok(self.forward_trace(state).q)
    }

    fn forward_trace(&self, s: &[f64]) -> Trace {
        let h = self.hidden;
        let z1 = affine(&self.w1, &self.b1, s, h);
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let z2 = affine(&self.w2, &self.b2, &a1, h);
        let a2: Vec<f64> = z2.iter().map(|&z| z.max(0.0)).collect();
        let q = affine(&self.w3, &self.b3, &a2, N_ACTIONS);
        Trace {
            z1,
            a1,
            z2,
            a2,
            q: [q[0], q[1]],
        }
    }
}

fn check_width(hidden: usize) -> Result<()> {
    if HIDDEN_WIDTHS.contains(&hidden) {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "hidden width must be one of {HIDDEN_WIDTHS:?}, got {hidden}"
        )))
    }
}

struct Trace {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    q: QValues,
}

fn affine(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    (0..out)
        .map(|o| {
            let row = &w[o * n..(o + 1) * n];
            b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Largest Q-value.
pub fn max_q(q: &QValues) -> f64 {
    q[0].max(q[1])
}

/// `y_j = r_j + γ·max_a Q(s'_j, a; target)`, or `r_j` for terminal transitions.
pub fn td_targets(batch: &[&Transition], gamma: f64, target: &MlpParams) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidConfig(format!("γ must lie in [0, 1), got {gamma}")));
    }
    batch
        .iter()
        .map(|t| {
            if t.terminal {
                Ok(t.reward)
            } else {
                Ok(t.reward + gamma * max_q(&target.forward(&t.next_state)?))
            }
        })
        .collect()
}

/// Mean squared TD error over the batch and its gradient with respect to the
/// online parameters. Targets are constants; only the taken action's output
/// receives error.
pub fn loss_and_grads(p: &MlpParams, batch: &[&Transition], y: &[f64]) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: batch.len(),
            actual: y.len(),
        });
    }
    let (n_in, h) = (p.input_dim, p.hidden);
    let scale = 1.0 / batch.len() as f64;
    let mut g = MlpParams::zeros(n_in, h);
    let mut loss = 0.0;
    let mut d1 = vec![0.0; h];
    let mut d2 = vec![0.0; h];

    for (t, &target) in batch.iter().zip(y) {
        if t.state.len() != n_in {
            return Err(Error::DimensionMismatch {
                expected: n_in,
                actual: t.state.len(),
            });
        }
        let tr = p.forward_trace(&t.state);
        let a = t.action.index();
        let err = target - tr.q[a];
        loss += err * err;
        let dq = -2.0 * err * scale;

        // output layer: only row `a` carries error
        g.b3[a] += dq;
        let w3_row = &p.w3[a * h..(a + 1) * h];
        let g3_row = &mut g.w3[a * h..(a + 1) * h];
        for k in 0..h {
            g3_row[k] += dq * tr.a2[k];
            d2[k] = if tr.z2[k] > 0.0 { dq * w3_row[k] } else { 0.0 };
        }

        d1.fill(0.0);
        for o in 0..h {
            let d = d2[o];
            if d == 0.0 {
                continue;
            }
            g.b2[o] += d;
            let w_row = &p.w2[o * h..(o + 1) * h];
            let g_row = &mut g.w2[o * h..(o + 1) * h];
            for k in 0..h {
                g_row[k] += d * tr.a1[k];
                d1[k] += d * w_row[k];
            }
        }

        for o in 0..h {
            if tr.z1[o] <= 0.0 {
                continue;
            }
            let d = d1[o];
            g.b1[o] += d;
            let g_row = &mut g.w1[o * n_in..(o + 1) * n_in];
            for (gk, sk) in g_row.iter_mut().zip(&t.state) {
                *gk += d * sk;
            }
        }
    }
    Ok((loss * scale, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: MlpParams,
    pub v: MlpParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(like: &MlpParams, config: AdamConfig) -> Self {
        Self {
            config,
            m: MlpParams::zeros(like.input_dim, like.hidden),
            v: MlpParams::zeros(like.input_dim, like.hidden),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update of `p` in place.
pub fn adam_step(p: &mut MlpParams, grads: &Gradients, opt: &mut AdamState) -> Result<()> {
    if p.input_dim != grads.input_dim || p.hidden != grads.hidden {
        return Err(Error::DimensionMismatch {
            expected: p.n_params(),
            actual: grads.n_params(),
        });
    }
    opt.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = opt.config;
    let c1 = 1.0 - b1.powi(opt.step as i32);
    let c2 = 1.0 - b2.powi(opt.step as i32);

    let params = p.tensors_mut();
    let ms = opt.m.tensors_mut();
    let vs = opt.v.tensors_mut();
    for (((w, g), m), v) in params.into_iter().zip(grads.tensors()).zip(ms).zip(vs) {
        for k in 0..w.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            w[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Frozen copy of the online parameters for bootstrapped targets.
pub fn sync_target(online: &MlpParams) -> MlpParams {
    online.clone()
}
