//! Deep Q-learning for portfolio management.
//!
//! Every asset of a portfolio is trained as its own two-action environment
//! (cash or hold) whose cash leg earns the average return of the other
//! assets. An ensemble of three independently seeded Q-networks then drives a
//! long-only portfolio out of sample, benchmarked against buy-and-hold,
//! momentum and reversion baselines under several transaction-cost levels.
//!
//! - [`data`]: price loading, returns, date splits, cap-based portfolios, synthetic markets
//! - [`env`]: the per-asset environment and its reward
//! - [`replay`]: FIFO experience memory
//! - [`net`]: the Q-network, TD targets, backprop and Adam
//! - [`agent`]: the training loop, validation checkpointing and the ensemble
//! - [`backtest`]: portfolio simulation, baselines, phases and the results table
//! - [`checkpoint`]: checkpoint file format

#![allow(clippy::needless_range_loop)]

pub mod agent;
pub mod backtest;
pub mod checkpoint;
pub mod data;
pub mod env;
pub mod error;
pub mod net;
pub mod replay;

pub use agent::{
    epsilon_greedy, evaluate, greedy_action, train, train_ensemble, Checkpoint, ProgressRecord,
    TrainConfig, TrainOutcome, TrainStats, ENSEMBLE_SIZE,
};
pub use backtest::{
    agent_allocation, phase_split, report_table, run, AllocationMode, BacktestReport, CostModel,
    EnsembleCombine, GridEntry, PolicySpec, ReportTable, Strategy,
};
pub use data::{
    compute_returns, gen_synthetic, group_by_cap, load_caps, load_prices, split, DateRange,
    PortfolioKind, PortfolioSpec, PriceTable, ReturnMatrix, SplitSpec, SynthModel, SynthSpec,
};
pub use env::{Action, EnvConfig, EnvState, TradingEnv, Transition};
pub use error::{Error, Result};
pub use net::{AdamConfig, AdamState, MlpParams, QValues};
pub use replay::ReplayBuffer;
