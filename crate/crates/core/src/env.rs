//! Single-asset trading environment.
//!
//! Each asset of a portfolio is its own environment with two actions: hold
//! cash or hold the asset. Holding earns the asset's next-day return; cash
//! earns the average next-day return of the *other* assets in the portfolio,
//! which makes the reward relative to the asset's peers. Changing position
//! costs `C`.

use serde::{Deserialize, Serialize};

use crate::data::ReturnMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Cash = 0,
    Hold = 1,
}

impl Action {
    pub const ALL: [Action; 2] = [Action::Cash, Action::Hold];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

impl TryFrom<u8> for Action {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Action::Cash),
            1 => Ok(Action::Hold),
            other => Err(Error::InvalidAction(other)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    /// Cost charged whenever the position changes, as a fraction.
    pub cost: f64,
    /// Number of lagged own-asset returns in the state.
    pub window: usize,
    /// Episode length in steps; `None` runs to the end of the data.
    pub episode_len: Option<usize>,
    /// Standardize the return window to zero mean, unit variance.
    pub zscore: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            cost: 0.0,
            window: 30,
            episode_len: Some(250),
            zscore: false,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.cost.is_finite() || self.cost < 0.0 {
            return Err(Error::InvalidConfig(format!("cost must be ≥ 0, got {}", self.cost)));
        }
        if self.window == 0 {
            return Err(Error::InvalidConfig("window must be ≥ 1".into()));
        }
        if self.episode_len == Some(0) {
            return Err(Error::InvalidConfig("episode length must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.window + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub asset: usize,
    pub t: usize,
    pub prev_action: Action,
    pub features: Vec<f64>,
    /// Last row of the episode; the state is terminal once `t == end`.
    pub end: usize,
}

impl EnvState {
    pub fn is_terminal(&self) -> bool {
        self.t >= self.end
    }
}

/// The replay quintuple.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Mean of row `t` over every asset except `i`.
pub fn cash_return(r: &ReturnMatrix, i: usize, t: usize) -> Result<f64> {
    let n = r.n_assets();
    if n < 2 {
        return Err(Error::InsufficientData(
            "cash return needs at least 2 assets".into(),
        ));
    }
    if i >= n || t >= r.n_rows() {
        return Err(Error::OutOfRange(format!("asset {i}, row {t}")));
    }
    let others: f64 = r
        .row(t)
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, v)| v)
        .sum();
    Ok(others / (n - 1) as f64)
}

/// One-step reward. Holding pays `r_hold - (1 - a_prev)·C`; cash pays
/// `r_cash - a_prev·C`. Either way `C` is paid exactly when the position changes.
pub fn reward(action: Action, prev: Action, r_hold: f64, r_cash: f64, cost: f64) -> f64 {
    match action {
        Action::Hold => r_hold - (1.0 - prev.as_f64()) * cost,
        Action::Cash => r_cash - prev.as_f64() * cost,
    }
}

/// `[r[t-W+1,i], …, r[t,i], a_prev]`.
pub fn make_features(
    r: &ReturnMatrix,
    i: usize,
    t: usize,
    prev: Action,
    window: usize,
) -> Result<Vec<f64>> {
    if t < window || t >= r.n_rows() {
        return Err(Error::OutOfRange(format!(
            "feature row {t} needs {window} ≤ t < {}",
            r.n_rows()
        )));
    }
    if i >= r.n_assets() {
        return Err(Error::OutOfRange(format!("asset {i}")));
    }
    let mut f = Vec::with_capacity(window + 1);
    f.extend((t + 1 - window..=t).map(|u| r.get(u, i)));
    f.push(prev.as_f64());
    Ok(f)
}

pub(crate) fn zscore_in_place(window: &mut [f64]) {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in window.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

/// An environment over one shared return matrix; the asset is picked at reset.
#[derive(Debug, Clone, Copy)]
pub struct TradingEnv<'a> {
    returns: &'a ReturnMatrix,
    cfg: EnvConfig,
}

impl<'a> TradingEnv<'a> {
    pub fn new(returns: &'a ReturnMatrix, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if returns.n_assets() < 2 {
            return Err(Error::InsufficientData(
                "environment needs at least 2 assets".into(),
            ));
        }
        if returns.n_rows() < cfg.window + 2 {
            return Err(Error::InsufficientData(format!(
                "{} rows, window {} needs at least {}",
                returns.n_rows(),
                cfg.window,
                cfg.window + 2
            )));
        }
        Ok(Self { returns, cfg })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn returns(&self) -> &'a ReturnMatrix {
        self.returns
    }

    /// Valid episode start rows, inclusive.
    pub fn start_rows(&self) -> (usize, usize) {
        (self.cfg.window, self.returns.n_rows() - 2)
    }

    pub fn features(&self, i: usize, t: usize, prev: Action) -> Result<Vec<f64>> {
        let mut f = make_features(self.returns, i, t, prev, self.cfg.window)?;
        if self.cfg.zscore {
            let w = self.cfg.window;
            zscore_in_place(&mut f[..w]);
        }
        Ok(f)
    }

    /// Starts an episode in cash at row `t0`.
    pub fn reset(&self, asset: usize, t0: usize) -> Result<EnvState> {
        let (lo, hi) = self.start_rows();
        if t0 < lo || t0 > hi {
            return Err(Error::OutOfRange(format!(
                "episode start {t0} outside [{lo}, {hi}]"
            )));
        }
        let last = self.returns.n_rows() - 1;
        let end = match self.cfg.episode_len {
            Some(len) => (t0 + len).min(last),
            None => last,
        };
        Ok(EnvState {
            asset,
            t: t0,
            prev_action: Action::Cash,
            features: self.features(asset, t0, Action::Cash)?,
            end,
        })
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<(Transition, EnvState)> {
        if state.is_terminal() {
            return Err(Error::OutOfRange(format!(
                "stepping terminal state at row {}",
                state.t
            )));
        }
        let next_t = state.t + 1;
        let r_hold = self.returns.get(next_t, state.asset);
        let r_cash = cash_return(self.returns, state.asset, next_t)?;
        let reward = reward(action, state.prev_action, r_hold, r_cash, self.cfg.cost);
        let next = EnvState {
            asset: state.asset,
            t: next_t,
            prev_action: action,
            features: self.features(state.asset, next_t, action)?,
            end: state.end,
        };
        let transition = Transition {
            state: state.features.clone(),
            action,
            reward,
            next_state: next.features.clone(),
            terminal: next.is_terminal(),
        };
        Ok((transition, next))
    }
}
