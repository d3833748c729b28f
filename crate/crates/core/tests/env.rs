use folio_core::env::{cash_return, make_features, reward};
use folio_core::{Action, EnvConfig, ReturnMatrix, TradingEnv};
use folio_testkit::{dyadic_returns, episode_value, matrix_from, peer_mean, random_returns};
use proptest::prelude::*;

fn action(bit: u8) -> Action {
    Action::try_from(bit).unwrap()
}

/// Runs `actions` through the environment from a cash start at `t0`.
fn rollout(r: &ReturnMatrix, cfg: EnvConfig, asset: usize, t0: usize, actions: &[u8]) -> f64 {
    let env = TradingEnv::new(r, cfg).unwrap();
    let mut state = env.reset(asset, t0).unwrap();
    let mut total = 0.0;
    for &a in actions {
        let (tr, next) = env.step(&state, action(a)).unwrap();
        total += tr.reward;
        state = next;
    }
    total
}

#[test]
fn cash_return_matches_peer_enumeration() {
    let r = random_returns(20, 10, 0.05, 4);
    for t in 0..20 {
        for i in 0..10 {
            let got = cash_return(&r, i, t).unwrap();
            assert!((got - peer_mean(&r, i, t)).abs() <= 1e-15);
        }
    }
}

#[test]
fn features_match_direct_indexing() {
    let r = random_returns(50, 3, 0.05, 9);
    for &w in &[1usize, 5, 30] {
        for t in w..50 {
            for i in 0..3 {
                let f = make_features(&r, i, t, Action::Hold, w).unwrap();
                assert_eq!(f.len(), w + 1);
                for k in 0..w {
                    assert_eq!(f[k], r.get(t - w + 1 + k, i));
                }
                assert_eq!(f[w], 1.0);
            }
        }
    }
}

#[test]
fn always_hold_at_zero_cost_sums_own_returns() {
    let r = random_returns(80, 4, 0.03, 2);
    let cfg = EnvConfig {
        window: 10,
        ..EnvConfig::default()
    };
    let total = rollout(&r, cfg, 1, 20, &[1; 40]);
    let direct: f64 = (21..=60).map(|t| r.get(t, 1)).sum();
    assert!((total - direct).abs() < 1e-14);
}

#[test]
fn episode_rewards_equal_enumeration_exactly() {
    for fixture in 0..10u64 {
        let assets = if fixture % 2 == 0 { 3 } else { 5 };
        let r = dyadic_returns(24, assets, fixture);
        let cost = f64::from(1 + fixture as u32) / 4096.0;
        let cfg = EnvConfig {
            cost,
            window: 4,
            ..EnvConfig::default()
        };
        let asset = fixture as usize % assets;
        for len in 1..=6usize {
            for bits in 0u32..1 << len {
                let actions: Vec<u8> = (0..len).map(|k| ((bits >> k) & 1) as u8).collect();
                let got = rollout(&r, cfg, asset, 5, &actions);
                let want = episode_value(&r, asset, 5, &actions, cost);
                assert_eq!(got, want, "fixture {fixture} actions {actions:?}");
            }
        }
    }
}

#[test]
fn episodes_truncate_at_data_end() {
    let r = random_returns(40, 2, 0.01, 0);
    let cfg = EnvConfig {
        window: 5,
        episode_len: Some(250),
        ..EnvConfig::default()
    };
    let env = TradingEnv::new(&r, cfg).unwrap();
    let mut s = env.reset(0, 30).unwrap();
    let mut steps = 0;
    loop {
        let (tr, next) = env.step(&s, Action::Hold).unwrap();
        steps += 1;
        if tr.terminal {
            break;
        }
        s = next;
    }
    assert_eq!(steps, 39 - 30);
}

#[test]
fn zscored_features_are_standardized() {
    let r = random_returns(60, 2, 0.05, 6);
    let cfg = EnvConfig {
        window: 20,
        zscore: true,
        ..EnvConfig::default()
    };
    let env = TradingEnv::new(&r, cfg).unwrap();
    let f = env.features(0, 40, Action::Cash).unwrap();
    let mean = f[..20].iter().sum::<f64>() / 20.0;
    let var = f[..20].iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 20.0;
    assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
    assert_eq!(f[20], 0.0);
}

proptest! {
    #[test]
    fn zero_cost_reward_ignores_previous_action(
        hold in -0.5f64..0.5,
        cash in -0.5f64..0.5,
        a in 0u8..2,
    ) {
        let a = action(a);
        prop_assert_eq!(
            reward(a, Action::Cash, hold, cash, 0.0),
            reward(a, Action::Hold, hold, cash, 0.0)
        );
    }

    #[test]
    fn switching_costs_exactly_c(
        hold in -0.5f64..0.5,
        cash in -0.5f64..0.5,
        k in 0u32..4096,
    ) {
        let c = f64::from(k) / 8192.0;
        let enter = reward(Action::Hold, Action::Cash, hold, cash, c);
        let stay = reward(Action::Hold, Action::Hold, hold, cash, c);
        prop_assert!((enter - (stay - c)).abs() <= 1e-16);
        let exit = reward(Action::Cash, Action::Hold, hold, cash, c);
        let idle = reward(Action::Cash, Action::Cash, hold, cash, c);
        prop_assert!((exit - (idle - c)).abs() <= 1e-16);
    }

    #[test]
    fn features_never_read_ahead(
        seed in any::<u64>(),
        t in 8usize..39,
        u_off in 1usize..10,
        bump in -0.5f64..0.5,
    ) {
        let r = random_returns(50, 3, 0.05, seed);
        let before = make_features(&r, 1, t, Action::Cash, 8).unwrap();
        let u = (t + u_off).min(49);
        let mut data: Vec<f64> = (0..50).flat_map(|k| r.row(k).to_vec()).collect();
        data[u * 3 + 1] += bump;
        let mutated = matrix_from(50, 3, data);
        prop_assert_eq!(before, make_features(&mutated, 1, t, Action::Cash, 8).unwrap());
    }

    #[test]
    fn random_sequences_decompose(
        seed in any::<u64>(),
        bits in prop::collection::vec(0u8..2, 1..30),
        k in 0u32..64,
    ) {
        let r = dyadic_returns(64, 5, seed);
        let cost = f64::from(k) / 4096.0;
        let cfg = EnvConfig { cost, window: 3, ..EnvConfig::default() };
        let asset = (seed % 5) as usize;
        let got = rollout(&r, cfg, asset, 3, &bits);
        prop_assert_eq!(got, episode_value(&r, asset, 3, &bits, cost));
    }
}
