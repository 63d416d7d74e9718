//! Synthetic task instances with category-centred image and text features.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::category::Category;
use crate::error::{Result, SimError};
use crate::router::{Corpus, TaskInstance};

pub const IMG_DIM: usize = 1024;
pub const TEXT_DIM: usize = 768;

const DIRECTION_SEED: u64 = 0x5eed_d1e5;
const TEMPLATES: [&str; 4] = [
    "please {} the {} and {} in the image",
    "{} {} {} in the image",
    "can you {} {} {} here in the image",
    "{} this {} then {} in the image",
];

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTask {
    pub task: TaskInstance,
    pub f_img: Vec<f64>,
    pub f_text: Vec<f64>,
}

/// Fixed ±1 pattern per category and feature width.
pub fn category_direction(category: Category, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(DIRECTION_SEED ^ ((dim as u64) << 8) ^ category.index() as u64);
    (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

#[derive(Debug, Clone)]
pub struct TaskGenerator {
    distribution: [f64; Category::COUNT],
    feature_scale: f64,
    feature_noise: f64,
    cross_word_prob: f64,
    lexicons: Vec<Vec<String>>,
    img_dirs: Vec<Vec<f64>>,
    text_dirs: Vec<Vec<f64>>,
}

impl TaskGenerator {
    pub fn new(
        distribution: [f64; Category::COUNT],
        feature_scale: f64,
        feature_noise: f64,
        cross_word_prob: f64,
        corpus: &Corpus,
    ) -> Result<Self> {
        let total: f64 = distribution.iter().sum();
        if distribution.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
            return Err(SimError::Config(format!("category distribution must sum to 1, got {total}")));
        }
        if !(feature_noise >= 0.0) || !(0.0..=1.0).contains(&cross_word_prob) {
            return Err(SimError::Config("invalid task feature settings".into()));
        }
        let lexicons: Vec<Vec<String>> = Category::ALL.iter().map(|c| corpus.lexicon(*c).to_vec()).collect();
        for (c, lex) in Category::ALL.iter().zip(&lexicons) {
            if distribution[c.index()] > 0.0 && lex.len() < 3 {
                return Err(SimError::Config(format!("lexicon for {c} needs at least 3 words")));
            }
        }
        Ok(Self {
            distribution,
            feature_scale,
            feature_noise,
            cross_word_prob,
            lexicons,
            img_dirs: Category::ALL.iter().map(|c| category_direction(*c, IMG_DIM)).collect(),
            text_dirs: Category::ALL.iter().map(|c| category_direction(*c, TEXT_DIM)).collect(),
        })
    }

    fn features<R: Rng + ?Sized>(&self, dir: &[f64], rng: &mut R) -> Vec<f64> {
        let noise = Normal::new(0.0, self.feature_noise).expect("finite noise");
        dir.iter().map(|d| self.feature_scale * d + noise.sample(rng)).collect()
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> GeneratedTask {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut category = *Category::ALL.iter().rev().find(|c| self.distribution[c.index()] > 0.0).expect("nonempty");
        for c in Category::ALL {
            acc += self.distribution[c.index()];
            if u < acc && self.distribution[c.index()] > 0.0 {
                category = c;
                break;
            }
        }
        let words: Vec<&String> = self.lexicons[category.index()].choose_multiple(rng, 3).collect();
        let template = TEMPLATES[rng.random_range(0..TEMPLATES.len())];
        let mut text = template.to_string();
        for w in &words {
            text = text.replacen("{}", w, 1);
        }
        if rng.random::<f64>() < self.cross_word_prob {
            let others: Vec<Category> = Category::ALL
                .into_iter()
                .filter(|c| *c != category && !self.lexicons[c.index()].is_empty())
                .collect();
            if let Some(other) = others.choose(rng) {
                if let Some(w) = self.lexicons[other.index()].choose(rng) {
                    text.push_str(" with ");
                    text.push_str(w);
                }
            }
        }
        let difficulty = rng.random::<f64>();
        let seed = rng.random::<u64>();
        let f_img = self.features(&self.img_dirs[category.index()], rng);
        let f_text = self.features(&self.text_dirs[category.index()], rng);
        GeneratedTask {
            task: TaskInstance {
                category,
                instruction_text: text,
                difficulty,
                seed,
            },
            f_img,
            f_text,
        }
    }
}
