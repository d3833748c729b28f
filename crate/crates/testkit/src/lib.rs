//! Reference implementations used as test oracles.
//!
//! Nothing here calls into `folio-core` algorithms; only its data types are
//! borrowed for reading inputs. Each routine recomputes its answer by the
//! most direct route available (explicit loops, enumeration, dynamic
//! programming over the full horizon, dollar-denominated bookkeeping).

#![allow(clippy::needless_range_loop)]

use folio_core::{MlpParams, ReturnMatrix};

/// Upper 0.1% quantile of the chi-square distribution with 9 degrees of freedom.
pub const CHI2_DF9_CRIT_001: f64 = 27.877_164_871_256_56;

/// Q-values by explicit index arithmetic over the weight layout.
pub fn reference_forward(p: &MlpParams, s: &[f64]) -> [f64; 2] {
    let (_, z2) = reference_hidden(p, s);
    let mut q = [0.0; 2];
    for (a, qa) in q.iter_mut().enumerate() {
        let mut acc = p.b3[a];
        for k in 0..p.hidden {
            acc += p.w3[a * p.hidden + k] * z2[k].max(0.0);
        }
        *qa = acc;
    }
    q
}

/// Pre-activations of both hidden layers.
pub fn reference_hidden(p: &MlpParams, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = p.hidden;
    let mut z1 = p.b1.clone();
    for o in 0..h {
        for k in 0..p.input_dim {
            z1[o] += p.w1[o * p.input_dim + k] * s[k];
        }
    }
    let mut z2 = p.b2.clone();
    for o in 0..h {
        for k in 0..h {
            z2[o] += p.w2[o * h + k] * z1[k].max(0.0);
        }
    }
    (z1, z2)
}

/// Sign pattern of every hidden unit, for detecting ReLU kink crossings.
pub fn activation_pattern(p: &MlpParams, s: &[f64]) -> Vec<bool> {
    let (z1, z2) = reference_hidden(p, s);
    z1.iter().chain(&z2).map(|&z| z > 0.0).collect()
}

/// One training example for the reference loss.
#[derive(Debug, Clone)]
pub struct Sample {
    pub state: Vec<f64>,
    pub action: usize,
    pub target: f64,
}

/// Mean squared error of the taken action's Q-value against a fixed target.
pub fn reference_loss(p: &MlpParams, batch: &[Sample]) -> f64 {
    batch
        .iter()
        .map(|b| (b.target - reference_forward(p, &b.state)[b.action]).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

/// Flat coordinate view of the parameter tensors, in w1, b1, w2, b2, w3, b3 order.
pub fn coord_mut(p: &mut MlpParams, mut k: usize) -> &mut f64 {
    for t in [
        &mut p.w1, &mut p.b1, &mut p.w2, &mut p.b2, &mut p.w3, &mut p.b3,
    ] {
        if k < t.len() {
            return &mut t[k];
        }
        k -= t.len();
    }
    panic!("coordinate out of range")
}

/// Central finite difference of the reference loss at flat coordinate `k`.
/// Returns `None` when the ±h perturbation moves any sample across a ReLU
/// kink, where the derivative is not defined.
pub fn central_difference(p: &MlpParams, batch: &[Sample], k: usize, h: f64) -> Option<f64> {
    let mut plus = p.clone();
    *coord_mut(&mut plus, k) += h;
    let mut minus = p.clone();
    *coord_mut(&mut minus, k) -= h;
    for b in batch {
        let base = activation_pattern(p, &b.state);
        if activation_pattern(&plus, &b.state) != base || activation_pattern(&minus, &b.state) != base {
            return None;
        }
    }
    Some((reference_loss(&plus, batch) - reference_loss(&minus, batch)) / (2.0 * h))
}

/// Adam over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct ReferenceAdam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl ReferenceAdam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            b1: 0.9,
            b2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], g: &[f64]) {
        self.t += 1;
        for k in 0..theta.len() {
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g[k];
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g[k] * g[k];
            let mh = self.m[k] / (1.0 - self.b1.powi(self.t));
            let vh = self.v[k] / (1.0 - self.b2.powi(self.t));
            theta[k] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Average of row `t` over assets other than `i`, by explicit enumeration.
pub fn peer_mean(r: &ReturnMatrix, i: usize, t: usize) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..r.n_assets() {
        if j != i {
            sum += r.get(t, j);
            count += 1;
        }
    }
    sum / count as f64
}

/// Σ chosen-leg returns − C·(number of position changes) for an action
/// sequence starting in cash at row `t0`; action `k` earns row `t0 + k + 1`.
pub fn episode_value(r: &ReturnMatrix, asset: usize, t0: usize, actions: &[u8], cost: f64) -> f64 {
    let mut legs = 0.0;
    let mut switches = 0u32;
    let mut prev = 0u8;
    for (k, &a) in actions.iter().enumerate() {
        let t = t0 + k + 1;
        legs += if a == 1 { r.get(t, asset) } else { peer_mean(r, asset, t) };
        if a != prev {
            switches += 1;
        }
        prev = a;
    }
    legs - cost * f64::from(switches)
}

/// Best achievable compounded wealth − 1 for one asset from row `t0` (in cash)
/// to the last row, by backward dynamic programming over the previous action.
pub fn optimal_compounded_return(r: &ReturnMatrix, asset: usize, t0: usize, cost: f64) -> f64 {
    let last = r.n_rows() - 1;
    // value[prev] = best log-wealth from the current row onward
    let mut value = [0.0f64; 2];
    for t in (t0..last).rev() {
        let hold = r.get(t + 1, asset);
        let cash = peer_mean(r, asset, t + 1);
        let mut next = [f64::NEG_INFINITY; 2];
        for prev in 0..2 {
            for a in 0..2 {
                let switch = if a != prev { cost } else { 0.0 };
                let reward = if a == 1 { hold } else { cash } - switch;
                let v = (1.0 + reward).ln() + value[a];
                if v > next[prev] {
                    next[prev] = v;
                }
            }
        }
        value = next;
    }
    value[0].exp() - 1.0
}

/// Mean over assets of [`optimal_compounded_return`] starting at row `window`.
pub fn optimal_validation_score(r: &ReturnMatrix, window: usize, cost: f64) -> f64 {
    (0..r.n_assets())
        .map(|i| optimal_compounded_return(r, i, window, cost))
        .sum::<f64>()
        / r.n_assets() as f64
}

/// Greedy-policy score recomputed with the reference forward pass.
pub fn reference_evaluate(p: &MlpParams, r: &ReturnMatrix, window: usize, cost: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..r.n_assets() {
        let mut prev = 0u8;
        let mut wealth = 1.0;
        for t in window..r.n_rows() - 1 {
            let mut s: Vec<f64> = (t + 1 - window..=t).map(|u| r.get(u, i)).collect();
            s.push(f64::from(prev));
            let q = reference_forward(p, &s);
            let a = u8::from(q[1] > q[0]);
            let switch = if a != prev { cost } else { 0.0 };
            let leg = if a == 1 { r.get(t + 1, i) } else { peer_mean(r, i, t + 1) };
            wealth *= 1.0 + leg - switch;
            prev = a;
        }
        total += wealth - 1.0;
    }
    total / r.n_assets() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    BuyAndHold,
    Momentum,
    Reversion,
}

/// Dollar-denominated backtest of a baseline from decision row `start`.
/// Positions are tracked as currency amounts; cost is `C` times the traded
/// notional as a fraction of portfolio value, deducted before returns accrue.
pub fn dollar_backtest(r: &ReturnMatrix, baseline: Baseline, cost: f64, start: usize) -> f64 {
    let n = r.n_assets();
    let mut dollars = vec![0.0; n];
    let mut cash = 1.0;
    for t in start..r.n_rows() - 1 {
        let value: f64 = cash + dollars.iter().sum::<f64>();
        let target: Option<Vec<f64>> = match baseline {
            Baseline::BuyAndHold if t == start => Some(vec![value / n as f64; n]),
            Baseline::BuyAndHold => None,
            Baseline::Momentum | Baseline::Reversion => {
                let picks: Vec<bool> = (0..n)
                    .map(|i| {
                        let mut s = 0.0;
                        for u in t - 4..=t {
                            s += r.get(u, i);
                        }
                        if baseline == Baseline::Momentum {
                            s / 5.0 > 0.0
                        } else {
                            s / 5.0 < 0.0
                        }
                    })
                    .collect();
                let m = picks.iter().filter(|&&b| b).count();
                Some(
                    picks
                        .iter()
                        .map(|&b| if b { value / m as f64 } else { 0.0 })
                        .collect(),
                )
            }
        };
        if let Some(target) = target {
            let traded: f64 = target.iter().zip(&dollars).map(|(a, b)| (a - b).abs()).sum();
            let keep = 1.0 - cost * traded / value;
            let invested: f64 = target.iter().sum();
            dollars = target.iter().map(|d| d * keep).collect();
            cash = (value - invested) * keep;
        }
        for (i, d) in dollars.iter_mut().enumerate() {
            *d *= 1.0 + r.get(t + 1, i);
        }
    }
    cash + dollars.iter().sum::<f64>() - 1.0
}

/// Wealth of a portfolio rebalanced to equal weights every step, without costs.
pub fn equal_weight_rebalanced(r: &ReturnMatrix, start: usize) -> f64 {
    let n = r.n_assets() as f64;
    let mut wealth = 1.0;
    for t in start + 1..r.n_rows() {
        let mean: f64 = r.row(t).iter().sum::<f64>() / n;
        wealth *= 1.0 + mean;
    }
    wealth - 1.0
}

/// Uniform returns in `[-scale, scale]` on a weekday calendar from 2015-01-01.
pub fn random_returns(rows: usize, assets: usize, scale: f64, seed: u64) -> ReturnMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * assets)
        .map(|_| rng.random_range(-scale..=scale))
        .collect();
    matrix_from(rows, assets, data)
}

/// Returns that are multiples of 2⁻¹⁰ so that sums, differences and halvings
/// are exact in binary floating point.
pub fn dyadic_returns(rows: usize, assets: usize, seed: u64) -> ReturnMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * assets)
        .map(|_| f64::from(rng.random_range(-64i32..=64)) / 1024.0)
        .collect();
    matrix_from(rows, assets, data)
}

pub fn matrix_from(rows: usize, assets: usize, data: Vec<f64>) -> ReturnMatrix {
    let dates = folio_core::data::weekday_calendar(
        "2015-01-01".parse().expect("valid date"),
        rows,
    );
    let tickers = (0..assets).map(|i| format!("A{i:02}")).collect();
    ReturnMatrix::new(dates, tickers, data).expect("valid fixture")
}

/// Train and validation matrices of a noiseless sign-follow market with
/// 4 assets and 2,000 days. The validation slice carries `window` leading
/// rows so that its first decision falls on its first in-range date.
pub fn sign_follow_split(market_seed: u64, window: usize) -> (ReturnMatrix, ReturnMatrix) {
    use folio_core::data::{compute_returns, gen_synthetic, split, DateRange, SplitSpec, SynthSpec};
    let spec = SynthSpec {
        n_assets: 4,
        n_days: 2000,
        signal_strength: 0.01,
        noise_scale: 0.0,
        ..SynthSpec::default()
    };
    let prices = gen_synthetic(&spec, market_seed).expect("valid synthetic spec");
    let r = compute_returns(&prices).expect("positive prices");
    let d = |s: &str| s.parse().expect("valid date");
    let s = SplitSpec {
        train: DateRange::new(d("2010-01-01"), d("2015-12-31")),
        validation: DateRange::new(d("2016-01-01"), d("2016-12-31")),
        test: DateRange::new(d("2017-01-01"), d("2017-08-31")),
    };
    let (train, _, _) = split(&r, &s).expect("valid split");
    let val = r
        .slice_with_lookback(s.validation, window)
        .expect("validation rows");
    (train, val)
}
