use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regimenet_core::backtest::{buy_and_hold, simulate_corrected, simulate_paper, summarize};
use regimenet_core::pipeline::Month;

fn months(n: usize) -> Vec<Month> {
    std::iter::successors(Month::new(2000, 1), |m| Some(m.succ())).take(n).collect()
}

/// Piecewise-monotone price path: each segment rises, falls or stays flat.
fn monotone_regimes(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prices = vec![100.0];
    while prices.len() < n {
        let step = [-1.5, 0.0, 1.0][rng.random_range(0..3)];
        for _ in 0..rng.random_range(3..15) {
            if prices.len() == n {
                break;
            }
            let last = *prices.last().unwrap();
            prices.push(last + step * rng.random_range(0.5..2.0));
        }
    }
    prices
}

/// Signal for step `i - 1 -> i` from the realized change over that step.
fn perfect_signals(prices: &[f64]) -> Vec<usize> {
    std::iter::once(1)
        .chain(prices.windows(2).map(|w| match w[1].partial_cmp(&w[0]).unwrap() {
            std::cmp::Ordering::Greater => 2,
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => 1,
        }))
        .collect()
}

#[test]
fn perfect_foresight_matches_or_beats_buy_and_hold() {
    for seed in 0..50 {
        let prices = monotone_regimes(seed, 120);
        let d = months(prices.len());
        let signals = perfect_signals(&prices);
        let strat = simulate_corrected(&d, &prices, &signals).unwrap();
        let bench = buy_and_hold(&d, &prices).unwrap();
        let (s, b) = (summarize(&strat).unwrap(), summarize(&bench).unwrap());
        assert!(s.final_equity >= b.final_equity, "seed {seed}: {} < {}", s.final_equity, b.final_equity);
    }
}

proptest! {
    #[test]
    fn paper_equity_never_falls_while_flat(
        prices in prop::collection::vec(1.0f64..100.0, 2..40),
        raw in prop::collection::vec(0usize..3, 40),
    ) {
        let signals = &raw[..prices.len()];
        let l = simulate_paper(&months(prices.len()), &prices, signals).unwrap();
        prop_assert_eq!(l.equity[0], prices[0]);
        prop_assert_eq!(l.equity.len(), prices.len());
        for i in 1..l.len() {
            if !l.long[i - 1] {
                prop_assert!(l.equity[i] >= l.equity[i - 1]);
            }
        }
    }

    #[test]
    fn ledgers_are_pure(
        prices in prop::collection::vec(1.0f64..100.0, 2..30),
        raw in prop::collection::vec(0usize..3, 30),
    ) {
        let signals = &raw[..prices.len()];
        let d = months(prices.len());
        prop_assert_eq!(simulate_corrected(&d, &prices, signals).unwrap(), simulate_corrected(&d, &prices, signals).unwrap());
        if signals.iter().all(|&s| s != 0) {
            prop_assert_eq!(simulate_corrected(&d, &prices, signals).unwrap(), simulate_paper(&d, &prices, signals).unwrap());
        }
    }
}
