//! Planted-block interaction data with block-aligned content features.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::graph::{Interaction, InteractionTable};
use crate::spectral::Modality;
use crate::trainer::Dataset;

/// Share of each user's interactions drawn from their own block.
pub const WITHIN_BLOCK_SHARE: f64 = 0.9;
/// Interactions kept for a cold user.
pub const COLD_INTERACTIONS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    pub interactions_per_user: usize,
    /// Standard deviation of the per-item feature noise around the block centroid.
    pub modality_noise: f64,
    pub cold_fraction: f64,
    pub seed: u64,
    pub img_dim: usize,
    pub txt_dim: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_users: 400,
            n_items: 200,
            n_blocks: 4,
            interactions_per_user: 20,
            modality_noise: 0.5,
            cold_fraction: 0.2,
            seed: 42,
            img_dim: 32,
            txt_dim: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub interactions: InteractionTable,
    pub img: Array2<f64>,
    pub txt: Array2<f64>,
    pub user_blocks: Vec<usize>,
    pub item_blocks: Vec<usize>,
    pub cold_users: Vec<usize>,
}

impl SyntheticData {
    pub fn n_users(&self) -> usize {
        self.user_blocks.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_blocks.len()
    }

    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            n_users: self.n_users(),
            n_items: self.n_items(),
            interactions: self.interactions.clone(),
            content: vec![(Modality::Img, self.img.clone()), (Modality::Txt, self.txt.clone())],
        }
    }
}

impl SyntheticSpec {
    /// `(within-block, out-of-block)` interactions per warm user.
    fn mix(&self) -> (usize, usize) {
        if self.n_blocks == 1 {
            return (self.interactions_per_user, 0);
        }
        let within = (self.interactions_per_user as f64 * WITHIN_BLOCK_SHARE).round() as usize;
        (within, self.interactions_per_user - within)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SsrError::InvalidArgument(msg));
        if self.n_users == 0 || self.n_items == 0 || self.n_blocks == 0 {
            return bad("users, items and blocks must be positive".into());
        }
        if self.n_users % self.n_blocks != 0 || self.n_items % self.n_blocks != 0 {
            return bad(format!(
                "{} blocks must divide both {} users and {} items",
                self.n_blocks, self.n_users, self.n_items
            ));
        }
        if self.interactions_per_user == 0 {
            return bad("interactions_per_user must be positive".into());
        }
        if !(self.modality_noise >= 0.0 && self.modality_noise.is_finite()) {
            return bad(format!("modality noise {} must be finite and non-negative", self.modality_noise));
        }
        if !(0.0..1.0).contains(&self.cold_fraction) {
            return bad(format!("cold_fraction {} outside [0, 1)", self.cold_fraction));
        }
        if self.cold_fraction > 0.0 && self.interactions_per_user <= COLD_INTERACTIONS {
            return bad(format!(
                "cold users need warm users with more than {COLD_INTERACTIONS} interactions"
            ));
        }
        if self.img_dim == 0 || self.txt_dim == 0 {
            return bad("feature dimensions must be positive".into());
        }
        let block_items = self.n_items / self.n_blocks;
        let (within, outside) = self.mix();
        if within > block_items || outside > self.n_items - block_items {
            return bad(format!(
                "{} interactions per user do not fit blocks of {block_items} items without replacement",
                self.interactions_per_user
            ));
        }
        Ok(())
    }
}

fn block_features<R: Rng + ?Sized>(item_blocks: &[usize], n_blocks: usize, dim: usize, sigma: f64, rng: &mut R) -> Array2<f64> {
    let centroids = Array2::from_shape_simple_fn((n_blocks, dim), || rng.sample::<f64, _>(StandardNormal));
    let mut x = Array2::zeros((item_blocks.len(), dim));
    for (v, &b) in item_blocks.iter().enumerate() {
        for j in 0..dim {
            let noise: f64 = rng.sample(StandardNormal);
            x[[v, j]] = centroids[[b, j]] + sigma * noise;
        }
    }
    x
}

/// Generates users and items in contiguous equal blocks. Every user draws
/// distinct items, mostly from their own block, at increasing timestamps;
/// a `cold_fraction` share of users keeps only their first
/// [`COLD_INTERACTIONS`] interactions.
pub fn synth_generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let users_per_block = spec.n_users / spec.n_blocks;
    let items_per_block = spec.n_items / spec.n_blocks;
    let user_blocks: Vec<usize> = (0..spec.n_users).map(|u| u / users_per_block).collect();
    let item_blocks: Vec<usize> = (0..spec.n_items).map(|v| v / items_per_block).collect();

    let n_cold = (spec.cold_fraction * spec.n_users as f64).round() as usize;
    let mut cold_users: Vec<usize> = sample(&mut rng, spec.n_users, n_cold).into_vec();
    cold_users.sort_unstable();
    let mut is_cold = vec![false; spec.n_users];
    for &u in &cold_users {
        is_cold[u] = true;
    }

    let (within, outside) = spec.mix();
    let mut records = Vec::new();
    for u in 0..spec.n_users {
        let b = user_blocks[u];
        let start = b * items_per_block;
        let mut items: Vec<usize> = sample(&mut rng, items_per_block, within)
            .into_iter()
            .map(|i| start + i)
            .collect();
        items.extend(
            sample(&mut rng, spec.n_items - items_per_block, outside)
                .into_iter()
                .map(|i| if i < start { i } else { i + items_per_block }),
        );
        items.shuffle(&mut rng);
        if is_cold[u] {
            items.truncate(COLD_INTERACTIONS);
        }
        let mut t: i64 = rng.random_range(0..1000);
        for item in items {
            t += rng.random_range(1..=100);
            records.push(Interaction { user: u, item, timestamp: t });
        }
    }

    let img = block_features(&item_blocks, spec.n_blocks, spec.img_dim, spec.modality_noise, &mut rng);
    let txt = block_features(&item_blocks, spec.n_blocks, spec.txt_dim, spec.modality_noise, &mut rng);
    Ok(SyntheticData {
        interactions: InteractionTable::new(records),
        img,
        txt,
        user_blocks,
        item_blocks,
        cold_users,
    })
}
