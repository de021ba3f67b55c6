use acvar::density::fit_kde;
use acvar::markov::{generate_random_chain, linear_reward_profile, simulate_step};
use acvar::rng::{stream, Stream};

fn stationary_rewards(n: usize) -> (Vec<f64>, f64) {
    let p = generate_random_chain(5, &mut stream(5, Stream::Matrix)).unwrap();
    let g = linear_reward_profile(5, 4.0).unwrap();
    let mut rng = stream(5, Stream::WarmStart);
    let mut x = 0;
    // burn in, then record
    for _ in 0..1_000 {
        x = simulate_step(&p, x, &mut rng).unwrap();
    }
    let samples = (0..n)
        .map(|_| {
            x = simulate_step(&p, x, &mut rng).unwrap();
            g[x]
        })
        .collect();
    (samples, g[1] - g[0])
}

#[test]
fn quantile_estimate_stabilizes() {
    let (samples, gap) = stationary_rewards(100_000);
    let small = fit_kde(&samples[..10_000], 0.02).unwrap().inverse_cdf(0.9).unwrap();
    let large = fit_kde(&samples, 0.02).unwrap().inverse_cdf(0.9).unwrap();
    assert!((small - large).abs() < gap, "{small} vs {large}");
}

#[test]
fn level_grid_round_trip_on_chain_rewards() {
    let (samples, _) = stationary_rewards(10_000);
    let kde = fit_kde(&samples, 0.02).unwrap();
    let mut last = f64::NEG_INFINITY;
    for i in 1..=19 {
        let c = 0.05 * i as f64;
        let x = kde.inverse_cdf(c).unwrap();
        assert!((kde.cdf(x) - c).abs() <= 1e-9);
        assert!(x > last);
        last = x;
    }
}

#[test]
fn extending_matches_refitting() {
    let (samples, _) = stationary_rewards(4_000);
    let mut grown = fit_kde(&samples[..1_000], 0.02).unwrap();
    grown.extend(&samples[1_000..]);
    let full = fit_kde(&samples, 0.02).unwrap();
    assert_eq!(grown, full);
}
