//! Gumbel-Softmax sampling and relaxed-categorical log-densities.

use rand::Rng;
use rand_distr::Open01;

use crate::error::{NnError, Result};
use crate::tape::{Tape, Var};

/// Standard Gumbel draws `−ln(−ln U)`, `U ~ Uniform(0, 1)` open at both ends.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u: f64 = rng.sample(Open01);
            -(-u.ln()).ln()
        })
        .collect()
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 && temperature.is_finite() {
        Ok(())
    } else {
        Err(NnError::Config(format!(
            "Gumbel-Softmax temperature must be positive, got {temperature}"
        )))
    }
}

/// `softmax((logits + noise) / temperature)` for one vector.
pub fn gumbel_softmax_with_noise(logits: &[f64], noise: &[f64], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if logits.len() != noise.len() {
        return Err(NnError::Config("noise length must match logits".into()));
    }
    let scaled: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, g)| (l + g) / temperature)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// One relaxed sample on the simplex.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(logits: &[f64], temperature: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let noise = sample_gumbel(rng, logits.len());
    gumbel_softmax_with_noise(logits, &noise, temperature)
}

/// Differentiable relaxed sample for a batch of logits `[B, n]` with fixed
/// Gumbel noise of the same shape. Returns `(sample, log_sample)`, where the
/// log is computed stably via log-softmax.
pub fn gumbel_softmax(tape: &mut Tape<'_>, logits: Var, noise: Vec<f64>, temperature: f64) -> Result<(Var, Var)> {
    check_temperature(temperature)?;
    let (r, c) = tape.shape(logits);
    if noise.len() != r * c {
        return Err(NnError::Config("noise shape must match logits".into()));
    }
    let g = tape.constant(r, c, noise);
    let perturbed = tape.add(logits, g);
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    let log_y = tape.log_softmax(scaled);
    let y = tape.exp(log_y);
    Ok((y, log_y))
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Log-density of the relaxed categorical (Concrete) distribution at a sample
/// `y` (given as `log_y`) for unnormalised logits `[B, n]` → `[B, 1]`:
///
/// `ln (n−1)! + (n−1) ln τ + Σ_i (l_i − (τ+1) ln y_i) − n · LSE_i(l_i − τ ln y_i)`
pub fn relaxed_log_density(tape: &mut Tape<'_>, logits: Var, log_y: Var, temperature: f64) -> Result<Var> {
    check_temperature(temperature)?;
    let n = tape.shape(logits).1;
    let weighted = tape.scale(log_y, temperature + 1.0);
    let diff = tape.sub(logits, weighted);
    let first = tape.row_sum(diff);
    let tl = tape.scale(log_y, temperature);
    let inner = tape.sub(logits, tl);
    let lse = tape.row_logsumexp(inner);
    let second = tape.scale(lse, n as f64);
    let body = tape.sub(first, second);
    let constant = ln_factorial(n - 1) + (n as f64 - 1.0) * temperature.ln();
    Ok(tape.offset(body, constant))
}

/// `Σ_i y_i · log_softmax(l)_i` → `[B, 1]`: the categorical log-probability
/// evaluated at a relaxed sample.
pub fn categorical_log_prob(tape: &mut Tape<'_>, logits: Var, y: Var) -> Var {
    let lp = tape.log_softmax(logits);
    let prod = tape.mul(y, lp);
    tape.row_sum(prod)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_nonpositive_temperature() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gumbel_softmax_sample(&[0.0, 1.0], 0.0, &mut rng).is_err());
        assert!(gumbel_softmax_sample(&[0.0, 1.0], -1.0, &mut rng).is_err());
    }

    #[test]
    fn zero_noise_is_tempered_softmax() {
        let logits = [0.5, -1.0, 2.0];
        let y = gumbel_softmax_with_noise(&logits, &[0.0; 3], 0.7).unwrap();
        let e: Vec<f64> = logits.iter().map(|l| (l / 0.7f64).exp()).collect();
        let s: f64 = e.iter().sum();
        for (a, b) in y.iter().zip(&e) {
            assert!((a - b / s).abs() < 1e-12);
        }
    }

    #[test]
    fn high_temperature_uniform_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let y = gumbel_softmax_sample(&[0.0; 5], 1e9, &mut rng).unwrap();
        assert!(y.iter().all(|v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn same_seed_same_sample() {
        let a = gumbel_softmax_sample(&[1.0, 2.0, 0.0], 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = gumbel_softmax_sample(&[1.0, 2.0, 0.0], 0.1, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_frequency_matches_gumbel_max_probability() {
        // Gumbel-max: P(argmax = 0) = softmax([5, 0, 0])_0 = e^5 / (e^5 + 2).
        let p = 5f64.exp() / (5f64.exp() + 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 1000;
        let hits = (0..n)
            .filter(|_| {
                let y = gumbel_softmax_sample(&[5.0, 0.0, 0.0], 0.1, &mut rng).unwrap();
                y[0] > y[1] && y[0] > y[2]
            })
            .count();
        let frac = hits as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - p).abs() < 4.0 * sd, "frac {frac} vs {p}");
        assert!(frac >= 0.97);
    }

    #[test]
    fn relaxed_density_two_categories_matches_closed_form() {
        // n = 2: density of y1 is the logistic-normal style closed form
        // p(y1) = τ α y1^{-τ-1} y2^{-τ-1} / (α y1^{-τ} + y2^{-τ})², α = e^{l1 − l2}
        let (l1, l2, tau) = (0.3, -0.4, 0.5);
        let y1: f64 = 0.8;
        let y2 = 1.0 - y1;
        let alpha = (l1 - l2 as f64).exp();
        let direct = (tau * alpha * y1.powf(-tau - 1.0) * y2.powf(-tau - 1.0)
            / (alpha * y1.powf(-tau) + y2.powf(-tau)).powi(2))
        .ln();
        let mut tape = Tape::new();
        let l = tape.constant(1, 2, vec![l1, l2]);
        let ly = tape.constant(1, 2, vec![y1.ln(), y2.ln()]);
        let lp = relaxed_log_density(&mut tape, l, ly, tau).unwrap();
        assert!((tape.value(lp)[0] - direct).abs() < 1e-12);
    }
}
