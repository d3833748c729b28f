//! The four pipeline stages.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use folio_core::backtest::{cost_label, format_pct};
use folio_core::checkpoint::{read_checkpoint, write_checkpoint};
use folio_core::data::{synthetic_caps, write_caps, write_prices};
use folio_core::{
    compute_returns, gen_synthetic, group_by_cap, load_caps, load_prices, phase_split,
    report_table, run, train_ensemble, BacktestReport, CostModel, Error, GridEntry, MlpParams,
    PolicySpec, PortfolioKind, PortfolioSpec, PriceTable, ReportTable, ReturnMatrix, Strategy,
    SynthModel, SynthSpec,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{hash_file, sha256_hex, RunManifest};

pub const TRAIN_STAGE: &str = "train";
pub const BACKTEST_STAGE: &str = "backtest";

/// Largest tolerated violation of the phase compounding identity.
pub const PHASE_IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub model: SynthModel,
    pub assets: usize,
    pub days: usize,
    pub drift: f64,
    pub volatility: f64,
    pub signal: f64,
    pub noise: f64,
    pub start: NaiveDate,
    pub seed: u64,
    pub out: PathBuf,
}

/// Writes `prices.csv` and `caps.csv` for a synthetic market and returns their paths.
pub fn synth(args: &SynthArgs) -> CliResult<[PathBuf; 2]> {
    let spec = SynthSpec {
        model: args.model,
        n_assets: args.assets,
        n_days: args.days,
        drift: args.drift,
        volatility: args.volatility,
        signal_strength: args.signal,
        noise_scale: args.noise,
        start: args.start,
    };
    let prices = gen_synthetic(&spec, args.seed).map_err(CliError::config)?;
    let caps = synthetic_caps(prices.tickers(), args.seed);
    fs::create_dir_all(&args.out).map_err(|e| CliError::output(&args.out, e))?;
    let prices_path = args.out.join("prices.csv");
    let caps_path = args.out.join("caps.csv");
    write_table(&prices_path, &prices)?;
    write_caps_file(&caps_path, &caps)?;
    Ok([prices_path, caps_path])
}

fn write_table(path: &Path, prices: &PriceTable) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::output(path, e))?;
    write_prices(prices, BufWriter::new(f)).map_err(|e| CliError::output(path, e))
}

fn write_caps_file(path: &Path, caps: &BTreeMap<String, f64>) -> CliResult<()> {
    let f = File::create(path).map_err(|e| CliError::output(path, e))?;
    write_caps(caps, BufWriter::new(f)).map_err(|e| CliError::output(path, e))
}

struct Market {
    prices: PriceTable,
    returns: ReturnMatrix,
    caps: BTreeMap<String, f64>,
    /// Content hashes of CSV inputs, when the market was read from disk.
    input_hashes: Option<[String; 2]>,
}

fn load_market(cfg: &RunConfig) -> CliResult<Market> {
    let (prices, caps, input_hashes) = match (&cfg.data, &cfg.synthetic) {
        (Some(d), _) => {
            let open = |p: &Path| {
                File::open(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
            };
            let prices = load_prices(open(&d.prices)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", d.prices.display())))?;
            let all_caps = load_caps(open(&d.caps)?)
                .map_err(|e| CliError::Data(format!("{}: {e}", d.caps.display())))?;
            let mut caps = BTreeMap::new();
            for t in prices.tickers() {
                let cap = all_caps.get(t).ok_or_else(|| {
                    CliError::Data(format!("{}: no market cap for {t}", d.caps.display()))
                })?;
                caps.insert(t.clone(), *cap);
            }
            let hash = |p: &Path| {
                hash_file(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
            };
            (prices, caps, Some([hash(&d.prices)?, hash(&d.caps)?]))
        }
        (None, Some(spec)) => {
            let prices = gen_synthetic(spec, cfg.seed).map_err(CliError::config)?;
            let caps = synthetic_caps(prices.tickers(), cfg.seed);
            (prices, caps, None)
        }
        (None, None) => unreachable!("validated config has a data source"),
    };
    let returns = compute_returns(&prices).map_err(CliError::data)?;
    Ok(Market {
        prices,
        returns,
        caps,
        input_hashes,
    })
}

#[derive(Serialize)]
struct TrainKey<'a> {
    seed: u64,
    synthetic: &'a Option<SynthSpec>,
    inputs: &'a Option<[String; 2]>,
    split: &'a folio_core::SplitSpec,
    train: &'a folio_core::TrainConfig,
}

#[derive(Serialize)]
struct ConfigKey<'a> {
    train: TrainKey<'a>,
    portfolios: &'a crate::config::PortfolioGrid,
    backtest: &'a crate::config::BacktestSection,
}

fn train_key<'a>(cfg: &'a RunConfig, m: &'a Market) -> TrainKey<'a> {
    TrainKey {
        seed: cfg.seed,
        synthetic: &cfg.synthetic,
        inputs: &m.input_hashes,
        split: &cfg.split,
        train: &cfg.train,
    }
}

fn hash_json<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("config serializes"))
}

fn keys(cfg: &RunConfig, m: &Market) -> (String, String) {
    let config = hash_json(&ConfigKey {
        train: train_key(cfg, m),
        portfolios: &cfg.portfolios,
        backtest: &cfg.backtest,
    });
    (config, hash_json(&train_key(cfg, m)))
}

fn split_error(e: Error) -> CliError {
    match e {
        Error::InvalidSplit(_) => CliError::Config(format!("split: {e}")),
        other => CliError::Data(format!("split: {other}")),
    }
}

fn checkpoint_path(k: usize) -> String {
    format!("checkpoints/agent_{k}.json")
}

fn progress_path(k: usize) -> String {
    format!("progress/agent_{k}.jsonl")
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::output(path, e))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::output(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemberSummary {
    pub seed: u64,
    pub validation_score: f64,
    pub iteration: u64,
}

/// Trains the ensemble on the full universe and writes checkpoints,
/// progress logs and a fresh manifest.
pub fn train(cfg: &RunConfig) -> CliResult<Vec<MemberSummary>> {
    let market = load_market(cfg)?;
    let (train_rows, _, _) = folio_core::split(&market.returns, &cfg.split).map_err(split_error)?;
    let val_rows = market
        .returns
        .slice_with_lookback(cfg.split.validation, cfg.lookback())
        .map_err(split_error)?;
    let seeds = cfg.member_seeds();
    let outcomes = train_ensemble(&cfg.train, &train_rows, &val_rows, seeds).map_err(|e| match e {
        Error::InvalidConfig(_) => CliError::Config(format!("train: {e}")),
        other => CliError::Data(other.to_string()),
    })?;

    let dir = &cfg.out_dir;
    create_dir(&dir.join("checkpoints"))?;
    create_dir(&dir.join("progress"))?;
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for (k, (out, seed)) in outcomes.iter().zip(seeds).enumerate() {
        let ck = checkpoint_path(k + 1);
        let mut buf = Vec::new();
        write_checkpoint(&out.checkpoint, &mut buf).map_err(CliError::integrity)?;
        write_file(&dir.join(&ck), &buf)?;
        let log = progress_path(k + 1);
        let mut lines = String::new();
        for rec in &out.progress {
            lines.push_str(&serde_json::to_string(rec).expect("record serializes"));
            lines.push('\n');
        }
        write_file(&dir.join(&log), lines.as_bytes())?;
        artifacts.push(ck);
        artifacts.push(log);
        summary.push(MemberSummary {
            seed,
            validation_score: out.checkpoint.validation_score,
            iteration: out.checkpoint.iteration,
        });
    }
    if market.input_hashes.is_none() {
        create_dir(&dir.join("data"))?;
        write_table(&dir.join("data/prices.csv"), &market.prices)?;
        write_caps_file(&dir.join("data/caps.csv"), &market.caps)?;
        artifacts.push("data/prices.csv".into());
        artifacts.push("data/caps.csv".into());
    }

    let (config_hash, train_hash) = keys(cfg, &market);
    let mut manifest = RunManifest::new(cfg.seed, config_hash, train_hash);
    manifest.record_stage(dir, TRAIN_STAGE, &artifacts)?;
    manifest.write(dir)?;
    Ok(summary)
}

/// One backtest in the grid, as written to `reports/`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub cost_bps: f64,
    pub size: usize,
    pub kind: PortfolioKind,
    #[serde(flatten)]
    pub report: BacktestReport,
}

fn report_path(cost_bps: f64, size: usize, kind: PortfolioKind, strategy: Strategy) -> String {
    let bps = cost_bps.to_string().replace('.', "p");
    format!("reports/{bps}bps_{size}_{kind}_{}.json", strategy.key())
}

fn load_members(cfg: &RunConfig, manifest: &RunManifest) -> CliResult<Vec<MlpParams>> {
    let dir = &cfg.out_dir;
    (1..=3)
        .map(|k| {
            let rel = checkpoint_path(k);
            let path = dir.join(&rel);
            let bytes = fs::read(&path)
                .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
            let recorded = manifest.artifact(TRAIN_STAGE, &rel).ok_or_else(|| {
                CliError::Artifact(format!("{rel} is not listed in the manifest"))
            })?;
            if recorded.sha256 != sha256_hex(&bytes) {
                return Err(CliError::Artifact(format!(
                    "{} differs from the checkpoint recorded at training",
                    path.display()
                )));
            }
            let ck = read_checkpoint(bytes.as_slice())
                .map_err(|e| CliError::Artifact(format!("{}: {e}", path.display())))?;
            let p = ck.params;
            let width = cfg.train.member_width(k - 1);
            if p.input_dim != cfg.train.window + 1 || p.hidden != width {
                return Err(CliError::Artifact(format!(
                    "{}: input {} × width {} does not match window {} × width {}",
                    path.display(),
                    p.input_dim,
                    p.hidden,
                    cfg.train.window,
                    width
                )));
            }
            Ok(p)
        })
        .collect()
}

/// Runs the (cost × portfolio × strategy) grid on the test period and
/// writes per-run reports, the results table and the manifest's backtest stage.
pub fn backtest(cfg: &RunConfig) -> CliResult<ReportTable> {
    let dir = &cfg.out_dir;
    let mut manifest = RunManifest::read(dir).map_err(|e| {
        CliError::Artifact(format!("no usable training run in {}: {e}", dir.display()))
    })?;
    let market = load_market(cfg)?;
    let (config_hash, train_hash) = keys(cfg, &market);
    if manifest.train_key != train_hash {
        return Err(CliError::Artifact(
            "checkpoints were trained under a different data, split, seed or train config".into(),
        ));
    }
    let members = load_members(cfg, &manifest)?;

    let mut portfolios: Vec<PortfolioSpec> = Vec::new();
    for &size in &cfg.portfolios.sizes {
        for &kind in &cfg.portfolios.kinds {
            let p = group_by_cap(&market.caps, size, kind, cfg.seed).map_err(CliError::data)?;
            portfolios.push(p);
        }
    }
    let slices = portfolios
        .iter()
        .map(|p| {
            market
                .returns
                .select_tickers(&p.tickers)
                .and_then(|r| r.slice_with_lookback(cfg.split.test, cfg.lookback()))
                .map_err(CliError::data)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let policy = |s: Strategy| match s {
        Strategy::Agent => PolicySpec::Agent {
            members: members.clone(),
            mode: cfg.backtest.allocation,
            combine: cfg.backtest.combine,
            zscore: cfg.train.zscore,
        },
        Strategy::BuyAndHold => PolicySpec::BuyAndHold,
        Strategy::Momentum => PolicySpec::Momentum {
            lookback: folio_core::backtest::SIGNAL_LOOKBACK,
        },
        Strategy::Reversion => PolicySpec::Reversion {
            lookback: folio_core::backtest::SIGNAL_LOOKBACK,
        },
    };
    let mut jobs = Vec::new();
    for &bps in &cfg.backtest.costs_bps {
        for k in 0..portfolios.len() {
            for s in Strategy::ALL {
                jobs.push((bps, k, s));
            }
        }
    }
    let runs = jobs
        .par_iter()
        .map(|&(bps, k, s)| {
            let cost = CostModel::from_bps(bps).map_err(CliError::config)?;
            let mut report =
                run(&policy(s), &slices[k], cost, cfg.train.window).map_err(CliError::data)?;
            let phases = phase_split(&report, cfg.backtest.phases)
                .map_err(|e| CliError::Config(format!("backtest.phases: {e}")))?;
            report.phase_returns = Some(phases);
            Ok(RunReport {
                cost_bps: bps,
                size: portfolios[k].size,
                kind: portfolios[k].kind,
                report,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let reports_dir = dir.join("reports");
    if reports_dir.exists() {
        fs::remove_dir_all(&reports_dir).map_err(|e| CliError::output(&reports_dir, e))?;
    }
    create_dir(&reports_dir)?;
    let mut artifacts = Vec::new();
    let mut entries = Vec::new();
    for r in &runs {
        let rel = report_path(r.cost_bps, r.size, r.kind, r.report.strategy);
        let json = serde_json::to_string_pretty(r).expect("report serializes");
        write_file(&dir.join(&rel), json.as_bytes())?;
        artifacts.push(rel);
        entries.push(grid_entry(r));
    }
    let table = table_for(&entries, &cfg.backtest.costs_bps).map_err(CliError::data)?;
    write_file(&dir.join("table.csv"), table.to_csv().as_bytes())?;
    write_file(&dir.join("table.txt"), table.to_text().as_bytes())?;
    artifacts.push("table.csv".into());
    artifacts.push("table.txt".into());

    manifest.config_hash = config_hash;
    manifest.record_stage(dir, BACKTEST_STAGE, &artifacts)?;
    manifest.write(dir)?;
    Ok(table)
}

fn grid_entry(r: &RunReport) -> GridEntry {
    GridEntry {
        cost: r.report.cost,
        size: r.size,
        kind: r.kind,
        strategy: r.report.strategy,
        value: r.report.cumulative_return,
    }
}

fn table_for(entries: &[GridEntry], costs_bps: &[f64]) -> folio_core::Result<ReportTable> {
    let costs: Vec<f64> = costs_bps
        .iter()
        .map(|&b| CostModel::from_bps(b).map(|c| c.cost))
        .collect::<folio_core::Result<_>>()?;
    report_table(entries, &costs)
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub table: ReportTable,
    pub text: String,
    /// Largest |(1+R1)(1+R2)(1+R3) − (1+R)| over every report.
    pub max_phase_error: f64,
    pub n_reports: usize,
}

/// Verifies a finished run directory and renders its results.
pub fn report(dir: &Path) -> CliResult<ReportSummary> {
    let manifest = RunManifest::read(dir)?;
    manifest.verify(dir)?;
    let stage = manifest
        .stages
        .get(BACKTEST_STAGE)
        .ok_or_else(|| CliError::Integrity("manifest has no backtest stage".into()))?;

    let mut runs = Vec::new();
    for a in stage.artifacts.iter().filter(|a| a.path.starts_with("reports/")) {
        let text = fs::read_to_string(dir.join(&a.path))
            .map_err(|e| CliError::Integrity(format!("{}: {e}", a.path)))?;
        let r: RunReport = serde_json::from_str(&text)
            .map_err(|e| CliError::Integrity(format!("{}: {e}", a.path)))?;
        runs.push((a.path.clone(), r));
    }
    if runs.is_empty() {
        return Err(CliError::Integrity("backtest stage lists no reports".into()));
    }

    let mut costs: Vec<f64> = runs.iter().map(|(_, r)| r.cost_bps).collect();
    costs.sort_by(f64::total_cmp);
    costs.dedup();
    let entries: Vec<GridEntry> = runs.iter().map(|(_, r)| grid_entry(r)).collect();
    let table = table_for(&entries, &costs).map_err(CliError::integrity)?;

    let mut max_err = 0.0f64;
    let mut phases_csv =
        String::from("cost_bps,size,kind,strategy,phase1,phase2,phase3,total,identity_error\n");
    let mut wealth_csv = String::from("cost_bps,size,kind,strategy,date,wealth\n");
    for (path, r) in &runs {
        let rep = &r.report;
        let p = rep
            .phase_returns
            .ok_or_else(|| CliError::Integrity(format!("{path} has no phase returns")))?;
        let err = ((1.0 + p[0]) * (1.0 + p[1]) * (1.0 + p[2]) - (1.0 + rep.cumulative_return)).abs();
        if err.is_nan() || err > PHASE_IDENTITY_TOL {
            return Err(CliError::Integrity(format!(
                "{path}: phase returns do not compound to the total (error {err:e})"
            )));
        }
        max_err = max_err.max(err);
        let key = format!("{},{},{},{}", r.cost_bps, r.size, r.kind, rep.strategy.key());
        let _ = writeln!(
            phases_csv,
            "{key},{},{},{},{},{err:e}",
            p[0], p[1], p[2], rep.cumulative_return
        );
        if rep.dates.len() != rep.wealth.len() {
            return Err(CliError::Integrity(format!("{path}: dates and wealth differ in length")));
        }
        for (d, w) in rep.dates.iter().zip(&rep.wealth) {
            let _ = writeln!(wealth_csv, "{key},{d},{w}");
        }
    }

    let mut text = table.to_text();
    text.push('\n');
    text.push_str(&phase_text(&runs));
    let _ = writeln!(
        text,
        "\nphase identity (1+R1)(1+R2)(1+R3) = 1+R holds over {} reports, max error {max_err:.1e}",
        runs.len()
    );

    let out = dir.join("summary");
    create_dir(&out)?;
    write_file(&out.join("table.txt"), table.to_text().as_bytes())?;
    write_file(&out.join("phases.csv"), phases_csv.as_bytes())?;
    write_file(&out.join("wealth.csv"), wealth_csv.as_bytes())?;
    Ok(ReportSummary {
        table,
        text,
        max_phase_error: max_err,
        n_reports: runs.len(),
    })
}

/// Phase returns averaged over portfolios, per cost level and strategy.
fn phase_text(runs: &[(String, RunReport)]) -> String {
    let mut groups: BTreeMap<(u64, Strategy), Vec<[f64; 4]>> = BTreeMap::new();
    for (_, r) in runs {
        let p = r.report.phase_returns.unwrap_or([f64::NAN; 3]);
        // non-negative costs order the same as their bit patterns
        groups
            .entry((r.report.cost.to_bits(), r.report.strategy))
            .or_default()
            .push([p[0], p[1], p[2], r.report.cumulative_return]);
    }
    let mut out = String::from("Phase returns (mean over portfolios)\n");
    let row = |cells: [&str; 6]| {
        format!(
            "{:<10} {:<14} {:>9} {:>9} {:>9} {:>9}\n",
            cells[0], cells[1], cells[2], cells[3], cells[4], cells[5]
        )
    };
    out.push_str(&row(["Cost", "Strategy", "Phase 1", "Phase 2", "Phase 3", "Total"]));
    for ((cost, strategy), rows) in &groups {
        let n = rows.len() as f64;
        let mean = |k: usize| format_pct(rows.iter().map(|r| r[k]).sum::<f64>() / n);
        out.push_str(&row([
            &cost_label(f64::from_bits(*cost)),
            strategy.label(),
            &mean(0),
            &mean(1),
            &mean(2),
            &mean(3),
        ]));
    }
    out
}
