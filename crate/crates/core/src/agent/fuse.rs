#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub weights: Vec<f64>,
    /// The masked product was identically zero.
    pub degenerate: bool,
}

/// `normalize(w_e ⊙ w_c ⊙ m)` with `epsilon` as a floor on the L1 mass.
pub fn fuse_weights(w_expert: &[f64], w_channel: &[f64], mask: &[f64], epsilon: f64) -> Fused {
    let prod: Vec<f64> = w_expert
        .iter()
        .zip(w_channel)
        .zip(mask)
        .map(|((e, c), m)| e * c * m)
        .collect();
    let mass: f64 = prod.iter().sum();
    if !(mass > 0.0) {
        return Fused {
            weights: vec![0.0; prod.len()],
            degenerate: true,
        };
    }
    let denom = mass.max(epsilon);
    Fused {
        weights: prod.into_iter().map(|p| p / denom).collect(),
        degenerate: false,
    }
}

/// Uniform weights over the set bits of `mask`.
pub fn uniform_over_mask(mask: &[f64]) -> Vec<f64> {
    let k = mask.iter().filter(|m| **m > 0.0).count();
    mask.iter()
        .map(|m| if *m > 0.0 { 1.0 / k as f64 } else { 0.0 })
        .collect()
}
