//! Out-of-sample portfolio simulation.
//!
//! At each decision row `t` a policy chooses target weights using returns up
//! to and including row `t`. The portfolio then earns row `t+1`:
//!
//! ```text
//! turnover_t  = Σ_i |w_target,i − w_drifted,i|
//! wealth_t+1  = wealth_t · (1 + Σ_i w_target,i · r_t+1,i) · (1 − C · turnover_t)
//! ```
//!
//! Uninvested weight is cash and earns nothing.

use std::fmt::Write as _;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::agent::ENSEMBLE_SIZE;
use crate::data::{PortfolioKind, ReturnMatrix};
use crate::env::{make_features, zscore_in_place, Action};
use crate::error::{Error, Result};
use crate::net::{MlpParams, QValues};

/// Trailing window of the momentum and reversion baselines.
pub const SIGNAL_LOOKBACK: usize = 5;

/// Transaction cost levels of the standard report grid, in basis points.
pub const COST_GRID_BPS: [f64; 3] = [1.0, 5.0, 10.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Agent,
    BuyAndHold,
    Momentum,
    Reversion,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Agent,
        Strategy::BuyAndHold,
        Strategy::Momentum,
        Strategy::Reversion,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Agent => "Agent",
            Strategy::BuyAndHold => "Buy-and-hold",
            Strategy::Momentum => "Momentum",
            Strategy::Reversion => "Reversion",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Strategy::Agent => "agent",
            Strategy::BuyAndHold => "buy_and_hold",
            Strategy::Momentum => "momentum",
            Strategy::Reversion => "reversion",
        }
    }
}

/// How ensemble Q-values become portfolio weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AllocationMode {
    /// Equal weight over every asset whose hold value beats its cash value.
    Threshold,
    /// Equal `1/k` weight over the `k` largest positive hold-minus-cash margins.
    TopK { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleCombine {
    /// Average the members' Q-vectors.
    #[default]
    Mean,
    /// An asset qualifies when a majority of members prefer holding it.
    MajorityVote,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Agent {
        members: Vec<MlpParams>,
        mode: AllocationMode,
        combine: EnsembleCombine,
        zscore: bool,
    },
    BuyAndHold,
    Momentum { lookback: usize },
    Reversion { lookback: usize },
}

impl PolicySpec {
    pub fn strategy(&self) -> Strategy {
        match self {
            PolicySpec::Agent { .. } => Strategy::Agent,
            PolicySpec::BuyAndHold => Strategy::BuyAndHold,
            PolicySpec::Momentum { .. } => Strategy::Momentum,
            PolicySpec::Reversion { .. } => Strategy::Reversion,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Cost per unit of turnover, as a fraction.
    pub cost: f64,
}

impl CostModel {
    pub fn new(cost: f64) -> Result<Self> {
        // turnover is at most 2, so C < 0.5 keeps wealth positive
        if !(0.0..0.5).contains(&cost) {
            return Err(Error::InvalidConfig(format!(
                "transaction cost must lie in [0, 0.5), got {cost}"
            )));
        }
        Ok(Self { cost })
    }

    pub fn from_bps(bps: f64) -> Result<Self> {
        Self::new(bps * 1e-4)
    }

    pub fn bps(&self) -> f64 {
        self.cost * 1e4
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub strategy: Strategy,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub allocation_mode: Option<AllocationMode>,
    pub cost: f64,
    pub tickers: Vec<String>,
    /// Dates of the wealth curve; `dates[0]` is the first decision date.
    pub dates: Vec<NaiveDate>,
    /// Target weights chosen on `dates[k]`, one row per step.
    pub weights: Vec<Vec<f64>>,
    pub turnover: Vec<f64>,
    /// Starts at 1.0; `wealth[k+1]` is the value after the step decided on `dates[k]`.
    pub wealth: Vec<f64>,
    pub cumulative_return: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub phase_returns: Option<[f64; 3]>,
}

/// Chooses target weights at a decision row.
pub trait Allocator {
    /// `drifted` holds the current (pre-trade) weights.
    fn target(&mut self, returns: &ReturnMatrix, t: usize, drifted: &[f64]) -> Result<Vec<f64>>;
}

/// Replays a fixed weight trajectory, one row per step.
#[derive(Debug, Clone)]
pub struct FixedWeights {
    rows: Vec<Vec<f64>>,
    next: usize,
}

impl FixedWeights {
    pub fn new(rows: Vec<Vec<f64>>) -> Self {
        Self { rows, next: 0 }
    }
}

impl Allocator for FixedWeights {
    fn target(&mut self, _: &ReturnMatrix, _: usize, _: &[f64]) -> Result<Vec<f64>> {
        let row = self
            .rows
            .get(self.next)
            .cloned()
            .ok_or_else(|| Error::OutOfRange(format!("no weights for step {}", self.next)))?;
        self.next += 1;
        Ok(row)
    }
}

struct BuyAndHoldAllocator {
    started: bool,
}

impl Allocator for BuyAndHoldAllocator {
    fn target(&mut self, returns: &ReturnMatrix, _: usize, drifted: &[f64]) -> Result<Vec<f64>> {
        if self.started {
            Ok(drifted.to_vec())
        } else {
            self.started = true;
            buy_hold_weights(returns.n_assets())
        }
    }
}

#[derive(Clone, Copy)]
enum SignalRule {
    Momentum,
    Reversion,
}

struct SignalAllocator {
    rule: SignalRule,
    lookback: usize,
}

impl Allocator for SignalAllocator {
    fn target(&mut self, returns: &ReturnMatrix, t: usize, _: &[f64]) -> Result<Vec<f64>> {
        let flags = (0..returns.n_assets())
            .map(|i| {
                let past: Vec<f64> = (t + 1 - self.lookback..=t).map(|u| returns.get(u, i)).collect();
                match self.rule {
                    SignalRule::Momentum => momentum_signal(&past, self.lookback),
                    SignalRule::Reversion => reversion_signal(&past, self.lookback),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(signal_weights(&flags))
    }
}

struct AgentAllocator<'a> {
    members: &'a [MlpParams],
    mode: AllocationMode,
    combine: EnsembleCombine,
    zscore: bool,
    window: usize,
    held: Vec<Action>,
}

impl Allocator for AgentAllocator<'_> {
    fn target(&mut self, returns: &ReturnMatrix, t: usize, _: &[f64]) -> Result<Vec<f64>> {
        let n = returns.n_assets();
        if self.held.len() != n {
            self.held = vec![Action::Cash; n];
        }
        let mut q_per_asset = Vec::with_capacity(n);
        for i in 0..n {
            let mut features = make_features(returns, i, t, self.held[i], self.window)?;
            if self.zscore {
                zscore_in_place(&mut features[..self.window]);
            }
            let qs = self
                .members
                .iter()
                .map(|m| m.forward(&features))
                .collect::<Result<Vec<_>>>()?;
            q_per_asset.push(qs);
        }
        let weights = agent_allocation(&q_per_asset, self.mode, self.combine)?;
        for (h, w) in self.held.iter_mut().zip(&weights) {
            *h = if *w > 0.0 { Action::Hold } else { Action::Cash };
        }
        Ok(weights)
    }
}

/// Combines three members' Q-vectors per asset into long-only weights.
pub fn agent_allocation(
    q_per_asset: &[Vec<QValues>],
    mode: AllocationMode,
    combine: EnsembleCombine,
) -> Result<Vec<f64>> {
    let mut margins = Vec::with_capacity(q_per_asset.len());
    for qs in q_per_asset {
        if qs.len() != ENSEMBLE_SIZE {
            return Err(Error::InvalidConfig(format!(
                "expected {ENSEMBLE_SIZE} ensemble members, got {}",
                qs.len()
            )));
        }
        let m = qs.len() as f64;
        let hold = qs.iter().map(|q| q[1]).sum::<f64>() / m;
        let cash = qs.iter().map(|q| q[0]).sum::<f64>() / m;
        let margin = hold - cash;
        let qualifies = match combine {
            EnsembleCombine::Mean => margin > 0.0,
            EnsembleCombine::MajorityVote => {
                2 * qs.iter().filter(|q| q[1] > q[0]).count() > qs.len()
            }
        };
        margins.push((margin, qualifies));
    }

    let mut chosen: Vec<usize> = (0..margins.len()).filter(|&i| margins[i].1).collect();
    if let AllocationMode::TopK { k } = mode {
        if k == 0 {
            return Err(Error::InvalidConfig("top-k needs k ≥ 1".into()));
        }
        if combine == EnsembleCombine::Mean {
            chosen.retain(|&i| margins[i].0 > 0.0);
        }
        chosen.sort_by(|&a, &b| margins[b].0.total_cmp(&margins[a].0).then(a.cmp(&b)));
        chosen.truncate(k);
    }
    let mut w = vec![0.0; margins.len()];
    if !chosen.is_empty() {
        let each = 1.0 / chosen.len() as f64;
        for i in chosen {
            w[i] = each;
        }
    }
    Ok(w)
}

fn trailing_mean(past: &[f64], lookback: usize) -> Result<f64> {
    if lookback == 0 || past.len() != lookback {
        return Err(Error::DimensionMismatch {
            expected: lookback,
            actual: past.len(),
        });
    }
    Ok(past.iter().sum::<f64>() / lookback as f64)
}

/// True when the trailing mean return is strictly positive.
pub fn momentum_signal(past: &[f64], lookback: usize) -> Result<bool> {
    Ok(trailing_mean(past, lookback)? > 0.0)
}

/// True when the trailing mean return is strictly negative.
pub fn reversion_signal(past: &[f64], lookback: usize) -> Result<bool> {
    Ok(trailing_mean(past, lookback)? < 0.0)
}

/// Equal weight across flagged assets; all cash when none are flagged.
pub fn signal_weights(flags: &[bool]) -> Vec<f64> {
    let m = flags.iter().filter(|&&f| f).count();
    flags
        .iter()
        .map(|&f| if f { 1.0 / m as f64 } else { 0.0 })
        .collect()
}

pub fn buy_hold_weights(n_assets: usize) -> Result<Vec<f64>> {
    if n_assets == 0 {
        return Err(Error::InsufficientData("buy-and-hold needs an asset".into()));
    }
    Ok(vec![1.0 / n_assets as f64; n_assets])
}

/// Drives `alloc` from decision row `start` to the second-to-last row.
pub fn simulate(
    alloc: &mut dyn Allocator,
    returns: &ReturnMatrix,
    cost: CostModel,
    start: usize,
) -> Result<BacktestReport> {
    let rows = returns.n_rows();
    if rows < start + 2 {
        return Err(Error::InsufficientData(format!(
            "{rows} rows cannot support a backtest starting at row {start}"
        )));
    }
    let n = returns.n_assets();
    let steps = rows - 1 - start;
    let mut drifted = vec![0.0; n];
    let mut wealth = Vec::with_capacity(steps + 1);
    let mut weights = Vec::with_capacity(steps);
    let mut turnover = Vec::with_capacity(steps);
    wealth.push(1.0);

    for t in start..rows - 1 {
        let target = alloc.target(returns, t, &drifted)?;
        check_weights(&target, n, t)?;
        let traded: f64 = target.iter().zip(&drifted).map(|(a, b)| (a - b).abs()).sum();
        let next = returns.row(t + 1);
        let growth = 1.0 + target.iter().zip(next).map(|(w, r)| w * r).sum::<f64>();
        let w_prev = *wealth.last().expect("seeded with 1.0");
        wealth.push(w_prev * growth * (1.0 - cost.cost * traded));
        for ((d, w), r) in drifted.iter_mut().zip(&target).zip(next) {
            *d = w * (1.0 + r) / growth;
        }
        weights.push(target);
        turnover.push(traded);
    }

    let final_wealth = *wealth.last().expect("non-empty");
    Ok(BacktestReport {
        strategy: Strategy::Agent,
        allocation_mode: None,
        cost: cost.cost,
        tickers: returns.tickers().to_vec(),
        dates: returns.dates()[start..].to_vec(),
        weights,
        turnover,
        wealth,
        cumulative_return: final_wealth - 1.0,
        phase_returns: None,
    })
}

fn check_weights(w: &[f64], n: usize, t: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: w.len(),
        });
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| x.is_nan() || *x < 0.0) || total > 1.0 + 1e-9 {
        return Err(Error::OutOfRange(format!(
            "weights at row {t} must be non-negative with sum ≤ 1 (sum {total})"
        )));
    }
    Ok(())
}

/// First decision row of `policy` given a feature window of `window` days.
pub fn start_row(policy: &PolicySpec, window: usize) -> usize {
    match policy {
        PolicySpec::Agent { .. } | PolicySpec::BuyAndHold => window,
        PolicySpec::Momentum { lookback } | PolicySpec::Reversion { lookback } => {
            window.max(*lookback)
        }
    }
}

/// Backtests one policy over `returns`, deciding from row `start_row(policy, window)` on.
pub fn run(
    policy: &PolicySpec,
    returns: &ReturnMatrix,
    cost: CostModel,
    window: usize,
) -> Result<BacktestReport> {
    let start = start_row(policy, window);
    let mut report = match policy {
        PolicySpec::Agent {
            members,
            mode,
            combine,
            zscore,
        } => {
            if members.len() != ENSEMBLE_SIZE {
                return Err(Error::InvalidConfig(format!(
                    "expected {ENSEMBLE_SIZE} ensemble members, got {}",
                    members.len()
                )));
            }
            for m in members {
                if m.input_dim != window + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: window + 1,
                        actual: m.input_dim,
                    });
                }
            }
            let mut alloc = AgentAllocator {
                members,
                mode: *mode,
                combine: *combine,
                zscore: *zscore,
                window,
                held: Vec::new(),
            };
            let mut r = simulate(&mut alloc, returns, cost, start)?;
            r.allocation_mode = Some(*mode);
            r
        }
        PolicySpec::BuyAndHold => {
            simulate(&mut BuyAndHoldAllocator { started: false }, returns, cost, start)?
        }
        PolicySpec::Momentum { lookback } | PolicySpec::Reversion { lookback } => {
            if *lookback == 0 {
                return Err(Error::InvalidConfig("signal lookback must be ≥ 1".into()));
            }
            let rule = match policy {
                PolicySpec::Momentum { .. } => SignalRule::Momentum,
                _ => SignalRule::Reversion,
            };
            let mut alloc = SignalAllocator {
                rule,
                lookback: *lookback,
            };
            simulate(&mut alloc, returns, cost, start)?
        }
    };
    report.strategy = policy.strategy();
    Ok(report)
}

/// Compounded returns of the three periods cut at `boundaries`. Each boundary
/// maps to the last curve date on or before it; every phase must span at
/// least one step.
pub fn phase_split(report: &BacktestReport, boundaries: [NaiveDate; 2]) -> Result<[f64; 3]> {
    let [b1, b2] = boundaries;
    let dates = &report.dates;
    let (first, last) = match (dates.first(), dates.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::InsufficientData("empty wealth curve".into())),
    };
    if b1 >= b2 {
        return Err(Error::InvalidConfig(format!(
            "phase boundaries must be ordered, got {b1} and {b2}"
        )));
    }
    if b1 < first || b2 > last {
        return Err(Error::OutOfRange(format!(
            "phase boundaries {b1}, {b2} outside {first}..{last}"
        )));
    }
    let idx = |b: NaiveDate| dates.partition_point(|d| *d <= b) - 1;
    let (i1, i2, end) = (idx(b1), idx(b2), dates.len() - 1);
    if !(0 < i1 && i1 < i2 && i2 < end) {
        return Err(Error::OutOfRange(format!(
            "each phase needs at least one step (cut points {i1}, {i2} of {end})"
        )));
    }
    let w = &report.wealth;
    Ok([w[i1] / w[0] - 1.0, w[i2] / w[i1] - 1.0, w[end] / w[i2] - 1.0])
}

/// One cell of the results grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub cost: f64,
    pub size: usize,
    pub kind: PortfolioKind,
    pub strategy: Strategy,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub size: usize,
    pub kind: PortfolioKind,
    /// Cumulative returns in [`Strategy::ALL`] order.
    pub values: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostSection {
    pub cost: f64,
    pub rows: Vec<TableRow>,
    pub mean: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportTable {
    pub sections: Vec<CostSection>,
}

/// Renders a return as a percentage with one decimal, e.g. `1.447` → `144.7%`.
pub fn format_pct(v: f64) -> String {
    let s = format!("{:.1}", v * 100.0);
    if s == "-0.0" {
        "0.0%".to_string()
    } else {
        format!("{s}%")
    }
}

/// `1 bp`, `5 bps`, `2.5 bps`.
pub fn cost_label(cost: f64) -> String {
    let bps = (cost * 1e4 * 1e6).round() / 1e6;
    if bps == 1.0 {
        "1 bp".into()
    } else {
        format!("{bps} bps")
    }
}

/// Arranges grid cells into per-cost sections ordered by portfolio size then
/// kind, with a per-strategy mean row. Every (size, kind) seen anywhere in
/// the grid must be complete under each requested cost.
pub fn report_table(entries: &[GridEntry], costs: &[f64]) -> Result<ReportTable> {
    if costs.is_empty() {
        return Err(Error::IncompleteGrid("no cost levels requested".into()));
    }
    let mut portfolios: Vec<(usize, PortfolioKind)> =
        entries.iter().map(|e| (e.size, e.kind)).collect();
    portfolios.sort_unstable();
    portfolios.dedup();

    let mut costs = costs.to_vec();
    costs.sort_by(f64::total_cmp);
    costs.dedup();

    let mut sections = Vec::with_capacity(costs.len());
    for &cost in &costs {
        let mut rows = Vec::with_capacity(portfolios.len());
        for &(size, kind) in &portfolios {
            let mut values = [0.0; 4];
            for (slot, strategy) in values.iter_mut().zip(Strategy::ALL) {
                let cell = entries.iter().find(|e| {
                    e.cost == cost && e.size == size && e.kind == kind && e.strategy == strategy
                });
                *slot = match cell {
                    Some(e) => e.value,
                    None => {
                        return Err(Error::IncompleteGrid(format!(
                            "{} / {size} {kind} / {}",
                            cost_label(cost),
                            strategy.label()
                        )))
                    }
                };
            }
            rows.push(TableRow { size, kind, values });
        }
        if rows.is_empty() {
            return Err(Error::IncompleteGrid(format!("{} has no portfolios", cost_label(cost))));
        }
        let mut mean = [0.0; 4];
        for (k, m) in mean.iter_mut().enumerate() {
            *m = rows.iter().map(|r| r.values[k]).sum::<f64>() / rows.len() as f64;
        }
        sections.push(CostSection { cost, rows, mean });
    }
    Ok(ReportTable { sections })
}

impl ReportTable {
    /// Machine-readable rendering; mean rows carry `size = mean`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cost_bps,size,kind,agent,buy_and_hold,momentum,reversion\n");
        for s in &self.sections {
            let bps = (s.cost * 1e4 * 1e6).round() / 1e6;
            for r in &s.rows {
                let _ = writeln!(
                    out,
                    "{bps},{},{},{},{},{},{}",
                    r.size, r.kind, r.values[0], r.values[1], r.values[2], r.values[3]
                );
            }
            let _ = writeln!(
                out,
                "{bps},mean,,{},{},{},{}",
                s.mean[0], s.mean[1], s.mean[2], s.mean[3]
            );
        }
        out
    }

    /// Aligned text table.
    pub fn to_text(&self) -> String {
        let header = [
            "Transaction costs",
            "Portfolio size",
            "Portfolio type",
            "Agent",
            "Buy-and-hold",
            "Momentum",
            "Reversion",
        ];
        let mut lines: Vec<[String; 7]> = Vec::new();
        for s in &self.sections {
            let mut last_size = None;
            for (k, r) in s.rows.iter().enumerate() {
                let cost = if k == 0 { cost_label(s.cost) } else { String::new() };
                let size = if last_size == Some(r.size) {
                    String::new()
                } else {
                    r.size.to_string()
                };
                last_size = Some(r.size);
                lines.push([
                    cost,
                    size,
                    r.kind.to_string(),
                    format_pct(r.values[0]),
                    format_pct(r.values[1]),
                    format_pct(r.values[2]),
                    format_pct(r.values[3]),
                ]);
            }
            lines.push([
                String::new(),
                "Mean".into(),
                String::new(),
                format_pct(s.mean[0]),
                format_pct(s.mean[1]),
                format_pct(s.mean[2]),
                format_pct(s.mean[3]),
            ]);
        }
        let mut widths = header.map(str::len);
        for l in &lines {
            for (w, c) in widths.iter_mut().zip(l) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut emit = |cells: &[String]| {
            let row: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(k, (c, w))| {
                    if k < 3 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", row.join("  ").trim_end());
        };
        emit(&header.map(String::from));
        for l in &lines {
            emit(l);
        }
        out
    }
}
