use acvar::markov::{generate_random_chain, linear_reward_profile, uniform_reward_profile};
use acvar::oracle::{self, acvar_oracle, log_mgf, perron_pair, tilted_matrix};
use acvar::rng::{stream, Stream};
use acvar::MarkovChain;

fn small_chain(seed: u64) -> MarkovChain {
    let s = 3 + (seed as usize % 5);
    let p = generate_random_chain(s, &mut stream(seed, Stream::Matrix)).unwrap();
    let g = uniform_reward_profile(s, 0.0, 4.0, &mut stream(seed, Stream::Rewards)).unwrap();
    MarkovChain::new(p, g).unwrap()
}

#[test]
fn log_mgf_is_convex_on_grid() {
    for seed in 0..10 {
        let chain = small_chain(seed);
        let lam: Vec<f64> = (0..=12).map(|i| log_mgf(&chain, 0.25 * i as f64).unwrap()).collect();
        for w in lam.windows(3) {
            assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-8, "seed {seed}");
        }
    }
}

#[test]
fn perron_pairs_have_small_residual() {
    for seed in 0..10 {
        let chain = small_chain(seed);
        for zeta in [0.0, 0.5, 1.5, 3.0] {
            let m = tilted_matrix(&chain, zeta).unwrap();
            let pair = perron_pair(&m, 0).unwrap();
            assert!(pair.relative_residual(&m) <= 1e-9, "seed {seed} zeta {zeta}");
            assert!(pair.v.iter().all(|&x| x > 0.0));
        }
    }
}

#[test]
fn interior_solutions_hit_the_threshold() {
    for seed in 0..10 {
        let chain = small_chain(seed);
        let mean = chain.stationary_mean().unwrap();
        let alpha = mean + 0.5 * (chain.max_reward() - mean);
        let sol = acvar_oracle(&chain, alpha).unwrap();
        assert!(sol.zeta_star > 0.0);
        assert!((sol.acvar - alpha).abs() <= 1e-6, "seed {seed}");
    }
}

#[test]
fn acvar_is_monotone_in_threshold() {
    let chain = small_chain(3);
    let mean = chain.stationary_mean().unwrap();
    let mut last = f64::NEG_INFINITY;
    for i in 0..40 {
        let alpha = mean - 1.0 + i as f64 * (chain.max_reward() - mean + 0.99) / 40.0;
        let v = acvar_oracle(&chain, alpha).unwrap().acvar;
        assert!(v >= last, "alpha {alpha}");
        last = v;
    }
}

#[test]
fn acvar_is_monotone_in_rewards() {
    let p = generate_random_chain(6, &mut stream(8, Stream::Matrix)).unwrap();
    let g = linear_reward_profile(6, 4.0).unwrap();
    let bumped: Vec<f64> = g.iter().enumerate().map(|(i, x)| x + 0.1 * (i % 3) as f64).collect();
    let base = MarkovChain::new(p.clone(), g).unwrap();
    let higher = MarkovChain::new(p, bumped).unwrap();
    // a common quantile level on a shared path of states
    let path = acvar::sa::warm_start(&base, &acvar::SaConfig::new(0.8, 0.5).unwrap(), 4).unwrap();
    let alpha = path.0.threshold;
    let alpha_higher = acvar::sa::warm_start(&higher, &acvar::SaConfig::new(0.8, 0.5).unwrap(), 4)
        .unwrap()
        .0
        .threshold;
    assert!(alpha_higher >= alpha);
    let a = acvar_oracle(&base, alpha).unwrap().acvar;
    let b = acvar_oracle(&higher, alpha_higher).unwrap().acvar;
    assert!(a <= b, "{a} > {b}");
}

#[test]
fn conditioned_kernel_rows_are_stochastic() {
    for seed in 0..10 {
        let chain = small_chain(seed);
        let kernel = oracle::tilted_kernel(&chain, 1.3).unwrap();
        for row in &kernel {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
