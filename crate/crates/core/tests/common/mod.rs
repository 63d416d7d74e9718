//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use routesim_core::channel::{init_channels, step_shadowing, small_scale_gain, ChannelConfig};

/// Fraction of `core` indices whose weight reaches `theta`, by counting.
pub fn brute_r1(w: &[f64], core: &[usize], theta: f64) -> f64 {
    if core.is_empty() {
        return 1.0;
    }
    let mut hits = 0;
    for &i in core {
        if w[i] >= theta {
            hits += 1;
        }
    }
    hits as f64 / core.len() as f64
}

pub fn brute_r2(w: &[f64], irrelevant: &[usize], theta: f64) -> f64 {
    if irrelevant.is_empty() {
        return 1.0;
    }
    let mut hits = 0;
    for &i in irrelevant {
        if w[i] >= theta {
            hits += 1;
        }
    }
    1.0 - hits as f64 / irrelevant.len() as f64
}

/// Core share times one minus the base-2 entropy over log2(N).
pub fn brute_r3(w: &[f64], core: &[usize]) -> f64 {
    let mut total = 0.0;
    for v in w {
        total += v;
    }
    if total <= 0.0 {
        return 0.0;
    }
    let mut core_mass = 0.0;
    for &i in core {
        core_mass += w[i];
    }
    let mut h = 0.0;
    for v in w {
        let p = v / total;
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    core_mass / total * (1.0 - h / (w.len() as f64).log2())
}

pub struct ChannelStats {
    /// Lag-1 autocorrelation of each link's shadowing.
    pub autocorrelation: Vec<f64>,
    /// Sample variance of shadowing over σ².
    pub variance_ratio: Vec<f64>,
    /// Sample mean of the small-scale power gain.
    pub fading_mean: f64,
}

/// Shadowing and fading statistics over `steps` AR(1) steps of `n` links.
pub fn channel_statistics(config: &ChannelConfig, n: usize, steps: usize, seed: u64) -> ChannelStats {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = init_channels(config, n, &mut rng).unwrap();
    let mut series = vec![Vec::with_capacity(steps); n];
    for _ in 0..steps {
        step_shadowing(&mut state, config, &mut rng);
        for (s, link) in series.iter_mut().zip(&state.links) {
            s.push(link.shadow);
        }
    }
    let mut autocorrelation = Vec::new();
    let mut variance_ratio = Vec::new();
    for (s, link) in series.iter().zip(&state.links) {
        let m = s.iter().sum::<f64>() / steps as f64;
        let var = s.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / steps as f64;
        let cov = s.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum::<f64>() / (steps - 1) as f64;
        autocorrelation.push(cov / var);
        variance_ratio.push(var / (link.shadow_std * link.shadow_std));
    }
    let mut fading = 0.0;
    for _ in 0..steps {
        fading += small_scale_gain(&mut rng);
    }
    ChannelStats {
        autocorrelation,
        variance_ratio,
        fading_mean: fading / steps as f64,
    }
}
