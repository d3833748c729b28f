use chrono::NaiveDate;
use folio_core::backtest::{
    cost_label, format_pct, momentum_signal, reversion_signal, simulate, FixedWeights,
    COST_GRID_BPS, SIGNAL_LOOKBACK,
};
use folio_core::{
    agent_allocation, phase_split, report_table, run, AllocationMode, BacktestReport, CostModel,
    EnsembleCombine, GridEntry, MlpParams, PolicySpec, PortfolioKind, QValues, ReturnMatrix,
    Strategy,
};
use folio_testkit::{dollar_backtest, equal_weight_rebalanced, random_returns, Baseline};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn members(window: usize, seed: u64) -> Vec<MlpParams> {
    (1..=3)
        .map(|k| MlpParams::init(window + 1, 32, seed.wrapping_add(k)).unwrap())
        .collect()
}

fn agent(members: Vec<MlpParams>, mode: AllocationMode) -> PolicySpec {
    PolicySpec::Agent {
        members,
        mode,
        combine: EnsembleCombine::Mean,
        zscore: false,
    }
}

fn always_hold(window: usize) -> Vec<MlpParams> {
    let mut p = MlpParams::zeros(window + 1, 32);
    p.b3 = vec![0.0, 1.0];
    vec![p.clone(), p.clone(), p]
}

fn cost(bps: f64) -> CostModel {
    CostModel::from_bps(bps).unwrap()
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

fn weight_trajectory(rng: &mut impl Rng, steps: usize, n: usize) -> Vec<Vec<f64>> {
    (0..steps)
        .map(|_| {
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let invested = rng.random_range(0.0..=1.0);
            let total: f64 = raw.iter().sum();
            raw.iter().map(|x| x / total * invested).collect()
        })
        .collect()
}

fn brute_top_k(q: &[Vec<QValues>], k: usize) -> Vec<f64> {
    let margins: Vec<f64> = q
        .iter()
        .map(|qs| qs.iter().map(|x| x[1] - x[0]).sum::<f64>() / 3.0)
        .collect();
    let mut order: Vec<usize> = (0..q.len()).filter(|&i| margins[i] > 0.0).collect();
    order.sort_by(|&a, &b| margins[b].partial_cmp(&margins[a]).unwrap().then(a.cmp(&b)));
    order.truncate(k);
    let mut w = vec![0.0; q.len()];
    for &i in &order {
        w[i] = 1.0 / order.len() as f64;
    }
    w
}

#[test]
fn baselines_match_dollar_bookkeeping() {
    let r = random_returns(600, 10, 0.03, 77);
    for bps in COST_GRID_BPS {
        for (policy, oracle) in [
            (PolicySpec::BuyAndHold, Baseline::BuyAndHold),
            (PolicySpec::Momentum { lookback: 5 }, Baseline::Momentum),
            (PolicySpec::Reversion { lookback: 5 }, Baseline::Reversion),
        ] {
            let got = run(&policy, &r, cost(bps), 30).unwrap().cumulative_return;
            let want = dollar_backtest(&r, oracle, bps * 1e-4, 30);
            assert!(rel_close(got, want, 1e-12), "{oracle:?} at {bps} bps: {got} vs {want}");
        }
    }
}

#[test]
fn buy_and_hold_is_mean_of_asset_growth() {
    let r = random_returns(20, 4, 0.05, 3);
    let grown = (0..4)
        .map(|i| (1..20).map(|t| 1.0 + r.get(t, i)).product::<f64>())
        .sum::<f64>()
        / 4.0;
    let free = run(&PolicySpec::BuyAndHold, &r, cost(0.0), 0).unwrap();
    assert!(rel_close(free.cumulative_return + 1.0, grown, 1e-12));
    // only the initial purchase pays
    let paid = run(&PolicySpec::BuyAndHold, &r, cost(10.0), 0).unwrap();
    assert!(rel_close(paid.cumulative_return + 1.0, grown * (1.0 - 0.001), 1e-12));
    assert!(paid.turnover[1..].iter().all(|&x| x < 1e-15));
}

#[test]
fn all_hold_agent_is_equal_weight_rebalancing() {
    let r = random_returns(120, 6, 0.03, 8);
    let report = run(&agent(always_hold(10), AllocationMode::Threshold), &r, cost(0.0), 10).unwrap();
    let want = equal_weight_rebalanced(&r, 10);
    assert!(rel_close(report.cumulative_return, want, 1e-12));
    assert_eq!(report.allocation_mode, Some(AllocationMode::Threshold));
}

#[test]
fn majority_vote_counts_members() {
    let q = vec![
        vec![[0.0, 1.0], [0.0, 1.0], [5.0, 0.0]],
        vec![[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]],
        vec![[0.0, 0.1], [0.0, 0.1], [0.0, 0.1]],
    ];
    let vote = agent_allocation(&q, AllocationMode::Threshold, EnsembleCombine::MajorityVote).unwrap();
    assert_eq!(vote, vec![0.5, 0.0, 0.5]);
    let mean = agent_allocation(&q, AllocationMode::Threshold, EnsembleCombine::Mean).unwrap();
    assert_eq!(mean, vec![0.0, 0.0, 1.0]);
}

#[test]
fn table_has_a_mean_row_per_cost() {
    let mut entries = Vec::new();
    for bps in COST_GRID_BPS {
        for (size, kind) in [(5, PortfolioKind::Big), (5, PortfolioKind::Small), (10, PortfolioKind::Random)] {
            for (k, strategy) in Strategy::ALL.into_iter().enumerate() {
                entries.push(GridEntry {
                    cost: bps * 1e-4,
                    size,
                    kind,
                    strategy,
                    value: size as f64 * 0.1 + k as f64 - bps * 0.01,
                });
            }
        }
    }
    let costs: Vec<f64> = COST_GRID_BPS.iter().map(|b| b * 1e-4).collect();
    let table = report_table(&entries, &costs).unwrap();
    assert_eq!(table.sections.len(), 3);
    for s in &table.sections {
        assert_eq!(s.rows.len(), 3);
        let want = (s.rows[0].values[2] + s.rows[1].values[2] + s.rows[2].values[2]) / 3.0;
        assert!((s.mean[2] - want).abs() < 1e-15);
    }
    let csv = table.to_csv();
    assert_eq!(csv.lines().count(), 1 + 3 * 4);
    assert_eq!(csv.lines().filter(|l| l.contains(",mean,")).count(), 3);
    let text = table.to_text();
    assert_eq!(text.matches("Mean").count(), 3);
    for label in ["1 bp", "5 bps", "10 bps"] {
        assert!(text.contains(label));
    }
    assert_eq!(cost_label(5e-4), "5 bps");
    assert_eq!(format_pct(1.447), "144.7%");

    entries.pop();
    assert!(report_table(&entries, &costs).is_err());
}

#[test]
fn phase_boundaries_snap_to_earlier_dates() {
    let r = random_returns(60, 3, 0.02, 1);
    let report = run(&PolicySpec::BuyAndHold, &r, cost(5.0), 5).unwrap();
    // a weekend boundary falls back to the preceding Friday
    let dates = &report.dates;
    let sat = dates.iter().find(|d| d.format("%a").to_string() == "Fri").unwrap().succ_opt().unwrap();
    let fri = sat.pred_opt().unwrap();
    let i1 = dates.iter().position(|&d| d == fri).unwrap();
    let later = dates[i1 + 10];
    let a = phase_split(&report, [sat, later]).unwrap();
    let b = phase_split(&report, [fri, later]).unwrap();
    assert_eq!(a, b);
    let w = &report.wealth;
    assert!(rel_close(a[0] + 1.0, w[i1] / w[0], 1e-15));
    assert!(phase_split(&report, [later, fri]).is_err());
    assert!(phase_split(&report, [dates[0], later]).is_err());
}

fn mutate_after(r: &ReturnMatrix, u: usize, bump: f64) -> ReturnMatrix {
    let data = (0..r.n_rows())
        .flat_map(|t| {
            r.row(t)
                .iter()
                .map(|x| if t > u { (x + bump).max(-0.5) } else { *x })
                .collect::<Vec<_>>()
        })
        .collect();
    ReturnMatrix::new(r.dates().to_vec(), r.tickers().to_vec(), data).unwrap()
}

fn policies(window: usize, seed: u64) -> Vec<PolicySpec> {
    vec![
        PolicySpec::BuyAndHold,
        PolicySpec::Momentum { lookback: SIGNAL_LOOKBACK },
        PolicySpec::Reversion { lookback: SIGNAL_LOOKBACK },
        agent(members(window, seed), AllocationMode::Threshold),
        agent(members(window, seed), AllocationMode::TopK { k: 2 }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn top_k_matches_sort_and_select(
        seed in any::<u64>(),
        n in 1usize..9,
        k in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<Vec<QValues>> = (0..n)
            .map(|_| (0..3).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect())
            .collect();
        let got = agent_allocation(&q, AllocationMode::TopK { k }, EnsembleCombine::Mean).unwrap();
        prop_assert_eq!(got, brute_top_k(&q, k));
    }

    #[test]
    fn signals_are_mutually_exclusive(past in prop::collection::vec(-0.1f64..0.1, 5)) {
        let up = momentum_signal(&past, 5).unwrap();
        let down = reversion_signal(&past, 5).unwrap();
        prop_assert!(!(up && down));
        let mean = past.iter().sum::<f64>() / 5.0;
        prop_assert_eq!(up, mean > 0.0);
        prop_assert_eq!(down, mean < 0.0);
    }

    #[test]
    fn cost_factors_out_of_wealth(seed in any::<u64>(), k in 0usize..3) {
        let r = random_returns(80, 5, 0.04, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = weight_trajectory(&mut rng, 79 - 4, 5);
        let free = simulate(&mut FixedWeights::new(path.clone()), &r, cost(0.0), 4).unwrap();
        let c = COST_GRID_BPS[k] * 1e-4;
        let paid = simulate(&mut FixedWeights::new(path), &r, cost(COST_GRID_BPS[k]), 4).unwrap();
        prop_assert_eq!(&free.turnover, &paid.turnover);
        let factor: f64 = paid.turnover.iter().map(|x| 1.0 - c * x).product();
        let want = free.wealth.last().unwrap() * factor;
        prop_assert!(rel_close(*paid.wealth.last().unwrap(), want, 1e-12));
    }

    #[test]
    fn wealth_never_rises_with_cost(seed in any::<u64>()) {
        let r = random_returns(60, 4, 0.04, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let path = weight_trajectory(&mut rng, 55, 4);
        let mut last = f64::INFINITY;
        for bps in [0.0, 1.0, 5.0, 10.0, 50.0] {
            let w = *simulate(&mut FixedWeights::new(path.clone()), &r, cost(bps), 4)
                .unwrap()
                .wealth
                .last()
                .unwrap();
            prop_assert!(w <= last);
            last = w;
        }
        for policy in policies(5, seed) {
            let mut last = f64::INFINITY;
            for bps in COST_GRID_BPS {
                let w = run(&policy, &r, cost(bps), 5).unwrap().cumulative_return;
                prop_assert!(w <= last);
                last = w;
            }
        }
    }

    #[test]
    fn decisions_ignore_future_returns(
        seed in any::<u64>(),
        u in 5usize..58,
        bump in -0.2f64..0.2,
    ) {
        let r = random_returns(60, 4, 0.04, seed);
        let shocked = mutate_after(&r, u, bump);
        for policy in policies(5, seed) {
            let a = run(&policy, &r, cost(5.0), 5).unwrap();
            let b = run(&policy, &shocked, cost(5.0), 5).unwrap();
            // decision rows start at 5; the row at t uses data up to t
            let decided_by_u = u + 1 - 5;
            prop_assert_eq!(&a.weights[..decided_by_u], &b.weights[..decided_by_u]);
        }
    }

    #[test]
    fn weight_rows_are_long_only_and_funded(seed in any::<u64>()) {
        let r = random_returns(50, 6, 0.05, seed);
        for policy in policies(5, seed) {
            for row in run(&policy, &r, cost(1.0), 5).unwrap().weights {
                prop_assert!(row.iter().all(|&w| w >= 0.0));
                prop_assert!(row.iter().sum::<f64>() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn phases_compound_to_the_total(seed in any::<u64>(), a in 1usize..40, gap in 1usize..40) {
        let r = random_returns(100, 5, 0.04, seed);
        for policy in policies(5, seed) {
            let report = run(&policy, &r, cost(10.0), 5).unwrap();
            let end = report.dates.len() - 1;
            let (i1, i2) = (a, (a + gap).min(end - 1));
            prop_assume!(i1 < i2);
            let bounds = [report.dates[i1], report.dates[i2]];
            let p = phase_split(&report, bounds).unwrap();
            let total = (1.0 + p[0]) * (1.0 + p[1]) * (1.0 + p[2]);
            prop_assert!((total - (1.0 + report.cumulative_return)).abs() <= 1e-9);
            prop_assert!(rel_close(1.0 + p[1], step_product(&report, i1, i2), 1e-12));
        }
    }
}

/// Wealth growth over steps `from..to`, multiplied out step by step.
fn step_product(report: &BacktestReport, from: usize, to: usize) -> f64 {
    (from..to).map(|k| report.wealth[k + 1] / report.wealth[k]).product()
}

#[test]
fn report_dates_align_with_wealth() {
    let r = random_returns(40, 3, 0.02, 2);
    let report = run(&PolicySpec::Momentum { lookback: 5 }, &r, cost(1.0), 3).unwrap();
    assert_eq!(report.dates.len(), report.wealth.len());
    assert_eq!(report.weights.len(), report.wealth.len() - 1);
    assert_eq!(report.dates[0], r.dates()[5]);
    let d: NaiveDate = *r.dates().last().unwrap();
    assert_eq!(*report.dates.last().unwrap(), d);
}
