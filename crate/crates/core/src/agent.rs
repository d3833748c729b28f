//! DQN training over per-asset environments.
//!
//! Each episode samples one asset and a start row, acts ε-greedily, and feeds
//! the replay memory. Every `gradient_step_interval` environment steps the
//! online network takes one Adam step on a replayed batch; every
//! `evaluation_interval` steps the greedy policy is scored on validation data
//! and the parameters are kept when the score strictly improves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ReturnMatrix;
use crate::env::{Action, EnvConfig, TradingEnv};
use crate::error::{Error, Result};
use crate::net::{
    adam_step, loss_and_grads, sync_target, td_targets, AdamConfig, AdamState, MlpParams, QValues,
};
use crate::replay::ReplayBuffer;

/// Number of independently seeded agents combined at test time.
pub const ENSEMBLE_SIZE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub epsilon: f64,
    /// Environment steps.
    pub total_iterations: u64,
    pub memory_capacity: usize,
    pub gradient_step_interval: u64,
    pub evaluation_interval: u64,
    pub batch_size: usize,
    pub hidden_width: usize,
    /// Per-member widths for [`train_ensemble`]; `None` trains every member
    /// at `hidden_width`.
    pub member_widths: Option<[usize; ENSEMBLE_SIZE]>,
    pub learning_rate: f64,
    /// Gradient steps between target refreshes; 1 bootstraps from the
    /// immediately preceding parameters.
    pub target_sync_interval: u64,
    pub episode_length: usize,
    pub warmup_threshold: usize,
    pub window: usize,
    pub cost: f64,
    pub zscore: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            epsilon: 0.3,
            total_iterations: 3_000_000,
            memory_capacity: 300_000,
            gradient_step_interval: 20,
            evaluation_interval: 10_000,
            batch_size: 1024,
            hidden_width: 64,
            member_widths: None,
            learning_rate: 1e-3,
            target_sync_interval: 1,
            episode_length: 250,
            warmup_threshold: 10_000,
            window: 30,
            cost: 0.0005,
            zscore: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Checks every field, naming the first offender.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::InvalidConfig(format!("{field}: {why}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma", "must satisfy 0 ≤ γ < 1");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad("epsilon", "must satisfy 0 ≤ ε ≤ 1");
        }
        if self.memory_capacity == 0 {
            return bad("memory_capacity", "must be positive");
        }
        if self.gradient_step_interval == 0 {
            return bad("gradient_step_interval", "must be positive");
        }
        if self.evaluation_interval == 0 {
            return bad("evaluation_interval", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !crate::net::HIDDEN_WIDTHS.contains(&self.hidden_width) {
            return bad("hidden_width", "must be 32, 64 or 128");
        }
        if let Some(ws) = self.member_widths {
            if ws.iter().any(|w| !crate::net::HIDDEN_WIDTHS.contains(w)) {
                return bad("member_widths", "each must be 32, 64 or 128");
            }
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return bad("learning_rate", "must be a finite value ≥ 0");
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval", "must be positive");
        }
        if self.episode_length == 0 {
            return bad("episode_length", "must be positive");
        }
        if self.warmup_threshold > self.memory_capacity {
            return bad("warmup_threshold", "must not exceed memory_capacity");
        }
        if self.window == 0 {
            return bad("window", "must be positive");
        }
        if !self.cost.is_finite() || self.cost < 0.0 {
            return bad("cost", "must be ≥ 0");
        }
        Ok(())
    }

    /// Hidden width of ensemble member `k` (0-based).
    pub fn member_width(&self, k: usize) -> usize {
        self.member_widths.map_or(self.hidden_width, |ws| ws[k])
    }

    /// Environment settings for training episodes.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            cost: self.cost,
            window: self.window,
            episode_len: Some(self.episode_length),
            zscore: self.zscore,
        }
    }

    /// Environment settings for whole-period evaluation.
    pub fn eval_config(&self) -> EnvConfig {
        EnvConfig {
            episode_len: None,
            ..self.env_config()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub validation_score: f64,
    pub iteration: u64,
}

/// One line of the progress log, written after every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub iteration: u64,
    pub validation_score: f64,
    pub best_so_far: f64,
    pub saved: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub env_steps: u64,
    pub gradient_steps: u64,
    pub target_syncs: u64,
    pub random_actions: u64,
    pub episodes: u64,
    /// Environment steps taken before the replay memory reached the warm-up size.
    pub steps_before_warmup: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub progress: Vec<ProgressRecord>,
    pub stats: TrainStats,
}

/// Argmax with ties going to cash.
pub fn greedy_action(q: &QValues) -> Action {
    if q[1] > q[0] {
        Action::Hold
    } else {
        Action::Cash
    }
}

/// With probability `epsilon` a uniformly random action, otherwise the argmax
/// (exact ties broken uniformly). The flag reports whether the random branch
/// was taken.
pub fn epsilon_greedy<R: Rng + ?Sized>(q: &QValues, epsilon: f64, rng: &mut R) -> (Action, bool) {
    let coin = |rng: &mut R| {
        if rng.random_bool(0.5) {
            Action::Hold
        } else {
            Action::Cash
        }
    };
    if rng.random::<f64>() < epsilon {
        return (coin(rng), true);
    }
    let action = if q[0] == q[1] {
        coin(rng)
    } else {
        greedy_action(q)
    };
    (action, false)
}

/// Mean over assets of the greedy policy's compounded return across the whole
/// matrix, each asset starting in cash at row `window`.
pub fn evaluate(params: &MlpParams, returns: &ReturnMatrix, cfg: &EnvConfig) -> Result<f64> {
    let cfg = EnvConfig {
        episode_len: None,
        ..*cfg
    };
    if params.input_dim != cfg.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: cfg.input_dim(),
            actual: params.input_dim,
        });
    }
    let env = TradingEnv::new(returns, cfg)?;
    let mut total = 0.0;
    for asset in 0..returns.n_assets() {
        let mut state = env.reset(asset, cfg.window)?;
        let mut wealth = 1.0;
        while !state.is_terminal() {
            let action = greedy_action(&params.forward(&state.features)?);
            let (tr, next) = env.step(&state, action)?;
            wealth *= 1.0 + tr.reward;
            state = next;
        }
        total += wealth - 1.0;
    }
    Ok(total / returns.n_assets() as f64)
}

/// Runs one training loop and returns the best validation checkpoint along
/// with the progress log and step counters.
pub fn train(
    cfg: &TrainConfig,
    train_returns: &ReturnMatrix,
    val_returns: &ReturnMatrix,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_returns.tickers() != val_returns.tickers() {
        return Err(Error::TickerMismatch);
    }
    let env = TradingEnv::new(train_returns, cfg.env_config())?;
    let eval_cfg = cfg.eval_config();
    // fail early rather than at the first evaluation
    TradingEnv::new(val_returns, eval_cfg)?;

    let mut params = MlpParams::init(cfg.window + 1, cfg.hidden_width, cfg.seed)?;
    let mut target = sync_target(&params);
    let mut opt = AdamState::new(&params, cfg.adam());
    let mut memory = ReplayBuffer::new(cfg.memory_capacity)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let initial = evaluate(&params, val_returns, &eval_cfg)?;
    let mut best = Checkpoint {
        params: params.clone(),
        validation_score: initial,
        iteration: 0,
    };
    let mut progress = vec![ProgressRecord {
        iteration: 0,
        validation_score: initial,
        best_so_far: initial,
        saved: true,
    }];
    let mut stats = TrainStats::default();

    let (lo, hi) = env.start_rows();
    let n_assets = train_returns.n_assets();
    let mut state = None;
    for n in 1..=cfg.total_iterations {
        let current = match state.take() {
            Some(s) => s,
            None => {
                let asset = rng.random_range(0..n_assets);
                let t0 = rng.random_range(lo..=hi);
                stats.episodes += 1;
                env.reset(asset, t0)?
            }
        };
        let q = params.forward(&current.features)?;
        let (action, explored) = epsilon_greedy(&q, cfg.epsilon, &mut rng);
        stats.random_actions += u64::from(explored);
        let (transition, next) = env.step(&current, action)?;
        let terminal = transition.terminal;
        memory.push(transition);
        stats.env_steps = n;
        if !memory.warmup_reached(cfg.warmup_threshold) {
            stats.steps_before_warmup = n;
        }
        state = (!terminal).then_some(next);

        if n % cfg.gradient_step_interval == 0 && memory.warmup_reached(cfg.warmup_threshold) {
            let batch = memory.sample(cfg.batch_size, &mut rng)?;
            let y = td_targets(&batch, cfg.gamma, &target)?;
            let (_, grads) = loss_and_grads(&params, &batch, &y)?;
            adam_step(&mut params, &grads, &mut opt)?;
            stats.gradient_steps += 1;
            if stats.gradient_steps % cfg.target_sync_interval == 0 {
                target = sync_target(&params);
                stats.target_syncs += 1;
            }
        }

        if n % cfg.evaluation_interval == 0 {
            let score = evaluate(&params, val_returns, &eval_cfg)?;
            let saved = score > best.validation_score;
            if saved {
                best = Checkpoint {
                    params: params.clone(),
                    validation_score: score,
                    iteration: n,
                };
            }
            progress.push(ProgressRecord {
                iteration: n,
                validation_score: score,
                best_so_far: best.validation_score,
                saved,
            });
        }
    }

    Ok(TrainOutcome {
        checkpoint: best,
        progress,
        stats,
    })
}

/// Trains one agent per seed, in parallel; results follow seed order.
pub fn train_ensemble(
    cfg: &TrainConfig,
    train_returns: &ReturnMatrix,
    val_returns: &ReturnMatrix,
    seeds: [u64; ENSEMBLE_SIZE],
) -> Result<Vec<TrainOutcome>> {
    for (k, s) in seeds.iter().enumerate() {
        if seeds[..k].contains(s) {
            return Err(Error::InvalidConfig(format!("duplicate ensemble seed {s}")));
        }
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .enumerate()
            .map(|(k, &seed)| {
                let member = TrainConfig {
                    seed,
                    hidden_width: cfg.member_width(k),
                    member_widths: None,
                    ..cfg.clone()
                };
                scope.spawn(move || train(&member, train_returns, val_returns))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{compute_returns, gen_synthetic, SynthSpec};

    #[test]
    fn pure_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(epsilon_greedy(&[0.1, 0.5], 0.0, &mut rng), (Action::Hold, false));
        }
    }

    #[test]
    fn uniform_when_epsilon_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let holds = (0..10_000)
            .filter(|_| epsilon_greedy(&[0.0, 1.0], 1.0, &mut rng).0 == Action::Hold)
            .count();
        assert!((holds as f64 / 10_000.0 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn ties_are_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let holds = (0..10_000)
            .filter(|_| epsilon_greedy(&[0.3, 0.3], 0.0, &mut rng).0 == Action::Hold)
            .count();
        assert!((holds as f64 / 10_000.0 - 0.5).abs() <= 0.02);
        assert_eq!(greedy_action(&[0.3, 0.3]), Action::Cash);
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = TrainConfig {
            epsilon: 1.5,
            ..TrainConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("epsilon"), "{msg}");
        TrainConfig::default().validate().unwrap();
    }

    fn market(seed: u64) -> (ReturnMatrix, ReturnMatrix) {
        let spec = SynthSpec {
            n_assets: 3,
            n_days: 200,
            ..SynthSpec::default()
        };
        let r = compute_returns(&gen_synthetic(&spec, seed).unwrap()).unwrap();
        (r.slice_rows(0..140).unwrap(), r.slice_rows(140..199).unwrap())
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            total_iterations: 600,
            memory_capacity: 500,
            evaluation_interval: 200,
            batch_size: 16,
            hidden_width: 32,
            episode_length: 50,
            warmup_threshold: 100,
            window: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_iterations_keeps_initial_params() {
        let (tr, va) = market(0);
        let cfg = TrainConfig {
            total_iterations: 0,
            ..small_cfg()
        };
        let out = train(&cfg, &tr, &va).unwrap();
        let init = MlpParams::init(6, 32, cfg.seed).unwrap();
        assert_eq!(out.checkpoint.params, init);
        assert_eq!(
            out.checkpoint.validation_score,
            evaluate(&init, &va, &cfg.eval_config()).unwrap()
        );
        assert_eq!(out.checkpoint.iteration, 0);
    }

    #[test]
    fn training_is_deterministic() {
        let (tr, va) = market(0);
        let a = train(&small_cfg(), &tr, &va).unwrap();
        let b = train(&small_cfg(), &tr, &va).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.progress.len(), 4);
    }

    #[test]
    fn rejects_ticker_mismatch() {
        let (tr, _) = market(0);
        let va = tr.select_tickers(&tr.tickers()[..2]).unwrap();
        assert!(matches!(train(&small_cfg(), &tr, &va), Err(Error::TickerMismatch)));
    }

    #[test]
    fn ensemble_rejects_duplicate_seeds() {
        let (tr, va) = market(0);
        assert!(train_ensemble(&small_cfg(), &tr, &va, [1, 2, 1]).is_err());
    }
}
