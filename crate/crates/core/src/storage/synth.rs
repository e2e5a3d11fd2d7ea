//! Synthetic paired embeddings standing in for real encoder outputs.
//!
//! Each class gets a unit direction in observation space. The text side of
//! the class is that direction pushed through a fixed random cross-modal map
//! (an orthogonal rotation when the dimensions agree), so the two modalities
//! are alignable but not trivially identical.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub items_per_class: usize,
    pub dim_text: usize,
    pub dim_obs: usize,
    /// Per-coordinate standard deviation of observation noise.
    pub noise: f64,
    /// Classes are assigned to categories round-robin.
    pub n_categories: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 32,
            items_per_class: 50,
            dim_text: 64,
            dim_obs: 64,
            noise: 0.05,
            n_categories: 4,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("n_classes must be >= 2".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise must be finite and > 0, got {}",
                self.noise
            )));
        }
        if self.dim_text == 0 || self.dim_obs == 0 {
            return Err(Error::InvalidConfig("dimensions must be > 0".into()));
        }
        if self.n_categories == 0 {
            return Err(Error::InvalidConfig("n_categories must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// One item per class: the "species name" embedding.
    pub text: EmbeddingSet,
    /// `items_per_class` noisy samples per class, class-major order.
    pub obs: EmbeddingSet,
    /// The text queries as a shared-space encoder would embed them, i.e. the
    /// class directions in observation space. Used as the continuous
    /// cosine-retrieval reference.
    pub shared_text: EmbeddingSet,
    /// Nearest-class-mean accuracy over `obs`, measured at generation time.
    pub nearest_mean_accuracy: f64,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random `rows x cols` cross-modal map; orthogonal when square.
fn cross_modal_map(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng));
    if rows == cols {
        g.qr().q()
    } else {
        g / (cols as f64).sqrt()
    }
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let map = cross_modal_map(&mut rng, cfg.dim_text, cfg.dim_obs);

    let obs_means: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| unit_gaussian(&mut rng, cfg.dim_obs))
        .collect();
    let text_means: Vec<Vec<f64>> = obs_means
        .iter()
        .map(|m| {
            let t = &map * DMatrix::from_column_slice(cfg.dim_obs, 1, m);
            let n = t.norm().max(1e-12);
            t.iter().map(|x| x / n).collect()
        })
        .collect();

    let class_labels: Vec<u32> = (0..cfg.n_classes as u32).collect();
    let class_cats: Vec<u32> = class_labels
        .iter()
        .map(|&c| c % cfg.n_categories as u32)
        .collect();
    let label_names: Vec<String> = (0..cfg.n_classes)
        .map(|c| format!("class_{c:04}"))
        .collect();
    let category_names: Vec<String> = (0..cfg.n_categories)
        .map(|c| format!("category_{c}"))
        .collect();

    let to_f32 =
        |rows: &[Vec<f64>]| -> Vec<f32> { rows.iter().flatten().map(|&x| x as f32).collect() };

    let text = EmbeddingSet::new(
        cfg.n_classes,
        cfg.dim_text,
        to_f32(&text_means),
        class_labels.clone(),
        class_cats.clone(),
        Modality::Text,
    )?
    .with_names(label_names.clone(), category_names.clone());

    let shared_text = EmbeddingSet::new(
        cfg.n_classes,
        cfg.dim_obs,
        to_f32(&obs_means),
        class_labels,
        class_cats,
        Modality::Text,
    )?
    .with_names(label_names.clone(), category_names.clone());

    let n_obs = cfg.n_classes * cfg.items_per_class;
    let mut rows = Vec::with_capacity(n_obs * cfg.dim_obs);
    let mut labels = Vec::with_capacity(n_obs);
    let mut categories = Vec::with_capacity(n_obs);
    for (c, mean) in obs_means.iter().enumerate() {
        for _ in 0..cfg.items_per_class {
            for &m in mean {
                let eps: f64 = StandardNormal.sample(&mut rng);
                rows.push((m + cfg.noise * eps) as f32);
            }
            labels.push(c as u32);
            categories.push((c % cfg.n_categories) as u32);
        }
    }
    let obs = EmbeddingSet::new(
        n_obs,
        cfg.dim_obs,
        rows,
        labels,
        categories,
        Modality::Observation,
    )?
    .with_names(label_names, category_names);

    let nearest_mean_accuracy = nearest_mean_accuracy(&obs);
    Ok(SynthData {
        text,
        obs,
        shared_text,
        nearest_mean_accuracy,
    })
}

/// Fraction of items whose nearest (Euclidean) empirical class mean is
/// their own class.
pub fn nearest_mean_accuracy(set: &EmbeddingSet) -> f64 {
    if set.count() == 0 {
        return 0.0;
    }
    let dim = set.dim();
    let mut classes: Vec<u32> = set.labels().to_vec();
    classes.sort_unstable();
    classes.dedup();
    let means: Vec<Vec<f64>> = classes
        .iter()
        .map(|&c| {
            let mut m = vec![0.0; dim];
            let mut n = 0usize;
            for i in (0..set.count()).filter(|&i| set.labels()[i] == c) {
                for (a, &x) in m.iter_mut().zip(set.row(i)) {
                    *a += f64::from(x);
                }
                n += 1;
            }
            m.iter_mut().for_each(|a| *a /= n as f64);
            m
        })
        .collect();
    let correct = (0..set.count())
        .filter(|&i| {
            let row = set.row(i);
            let best = means
                .iter()
                .enumerate()
                .map(|(k, m)| {
                    let d: f64 = m
                        .iter()
                        .zip(row)
                        .map(|(a, &x)| (a - f64::from(x)).powi(2))
                        .sum();
                    (d, k)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, k)| classes[k]);
            best == Some(set.labels()[i])
        })
        .count();
    correct as f64 / set.count() as f64
}
