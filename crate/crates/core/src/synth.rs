//! Synthetic worlds with known ground truth.
//!
//! Users and items get latent factors; the affinity of a pair is the
//! logistic of their scaled inner product. Each user's positives are the
//! top items by affinity after a small seeded jitter, and planted noise comes
//! from each user's bottom affinity decile. The same affinities back the
//! oracle scorer, so the whole denoising pipeline can be checked end to end.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    bottom_decile, planted_count, split, write_interactions, write_item_profiles, Affinity, DataError, Dataset,
    Interaction, ItemProfile, ProfileSet, SplitDataset, TooFewPolicy,
};
use crate::scorer::OracleBackend;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible world: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("world file {path}: {message}")]
    Format { path: std::path::PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub users: usize,
    pub items: usize,
    pub dim: usize,
    pub positives_per_user: usize,
    /// Planted noise as a fraction of the clean positives.
    pub noise_ratio: f64,
    pub seed: u64,
    /// Multiplier on the standardized inner product before the logistic.
    pub affinity_scale: f64,
    /// Standard deviation of the selection jitter, in standardized units.
    pub jitter: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            users: 500,
            items: 300,
            dim: 8,
            positives_per_user: 20,
            noise_ratio: 0.1,
            seed: 0,
            affinity_scale: 2.5,
            jitter: 0.01,
        }
    }
}

impl WorldParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Infeasible(m));
        if self.users == 0 || self.items == 0 || self.dim == 0 {
            return bad("users, items and dim must be positive".into());
        }
        if self.positives_per_user < 3 {
            return bad(format!("positives_per_user = {} (need at least 3)", self.positives_per_user));
        }
        let decile = self.items.div_ceil(10);
        if self.positives_per_user + decile >= self.items {
            return bad(format!(
                "{} positives per user leave no room among {} items",
                self.positives_per_user, self.items
            ));
        }
        if !(0.0..=0.5).contains(&self.noise_ratio) {
            return bad(format!("noise_ratio {} outside [0, 0.5]", self.noise_ratio));
        }
        if self.affinity_scale.is_nan() || self.affinity_scale <= 0.0 || self.jitter.is_nan() || self.jitter < 0.0 {
            return bad("affinity_scale must be positive and jitter nonnegative".into());
        }
        Ok(())
    }
}

/// Dense user × item affinity matrix.
#[derive(Debug, Clone)]
pub struct AffinityTable(pub Array2<f64>);

impl Affinity for AffinityTable {
    fn affinity(&self, user: usize, item: usize) -> f64 {
        self.0[[user, item]]
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub params: WorldParams,
    pub user_factors: Array2<f64>,
    pub item_factors: Array2<f64>,
    pub affinity: Arc<AffinityTable>,
    /// Clean positives (ratings 4–5) plus planted noise (ratings 1–2).
    pub dataset: Dataset,
    pub profiles: ProfileSet,
}

pub fn generate_world(
    users: usize,
    items: usize,
    dim: usize,
    positives_per_user: usize,
    noise_ratio: f64,
    seed: u64,
) -> Result<SyntheticWorld, SynthError> {
    SyntheticWorld::generate(&WorldParams {
        users,
        items,
        dim,
        positives_per_user,
        noise_ratio,
        seed,
        ..WorldParams::default()
    })
}

fn normal_table(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut *rng))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SyntheticWorld {
    pub fn generate(params: &WorldParams) -> Result<Self, SynthError> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let user_factors = normal_table(params.users, params.dim, &mut rng);
        let item_factors = normal_table(params.items, params.dim, &mut rng);
        let z = user_factors.dot(&item_factors.t()) / (params.dim as f64).sqrt();
        let affinity = z.mapv(|v| logistic(params.affinity_scale * v));

        let mut interactions = Vec::with_capacity(params.users * params.positives_per_user);
        for u in 0..params.users {
            let mut keyed: Vec<(f64, usize)> = (0..params.items)
                .map(|i| {
                    let jitter: f64 = StandardNormal.sample(&mut rng);
                    (z[[u, i]] + params.jitter * jitter, i)
                })
                .collect();
            keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            for &(_, i) in keyed.iter().take(params.positives_per_user) {
                interactions.push(Interaction {
                    user: u,
                    item: i,
                    label: 1,
                    rating: Some(rng.random_range(4..=5)),
                    planted_noise: Some(false),
                });
            }
        }

        let table = AffinityTable(affinity);
        let requested = planted_count(interactions.len(), params.noise_ratio);
        if requested > 0 {
            let mut positives = vec![std::collections::BTreeSet::new(); params.users];
            for x in &interactions {
                positives[x.user].insert(x.item);
            }
            let mut pool: Vec<(usize, usize)> = Vec::new();
            for (u, seen) in positives.iter().enumerate() {
                pool.extend(
                    bottom_decile(&table, u, params.items)
                        .into_iter()
                        .filter(|i| !seen.contains(i))
                        .map(|i| (u, i)),
                );
            }
            if pool.len() < requested {
                return Err(SynthError::Infeasible(format!(
                    "{requested} noisy interactions requested, only {} low-affinity pairs available",
                    pool.len()
                )));
            }
            let (chosen, _) = pool.partial_shuffle(&mut rng, requested);
            for &(u, i) in chosen.iter() {
                interactions.push(Interaction {
                    user: u,
                    item: i,
                    label: 1,
                    rating: Some(rng.random_range(1..=2)),
                    planted_noise: Some(true),
                });
            }
        }
        interactions.sort_by_key(|x| (x.user, x.item));

        let dataset = Dataset {
            interactions,
            user_count: params.users,
            item_count: params.items,
            user_ids: (0..params.users).map(|u| format!("u{u:04}")).collect(),
            item_ids: (0..params.items).map(|i| format!("i{i:04}")).collect(),
        };
        let profiles = ProfileSet {
            profiles: (0..params.items)
                .map(|i| (i, item_profile(i, &item_factors)))
                .collect(),
            missing: Vec::new(),
            unknown: 0,
        };
        Ok(Self {
            params: params.clone(),
            user_factors,
            item_factors,
            affinity: Arc::new(table),
            dataset,
            profiles,
        })
    }

    pub fn affinity(&self, user: usize, item: usize) -> f64 {
        self.affinity.0[[user, item]]
    }

    pub fn oracle(&self) -> OracleBackend {
        OracleBackend::new(self.affinity.clone())
    }

    pub fn planted(&self) -> usize {
        self.dataset.interactions.iter().filter(|x| x.is_planted()).count()
    }

    /// Per-user split; planted noise always lands in the training split.
    pub fn split(&self, ratios: [f64; 3], seed: u64) -> Result<SplitDataset, SynthError> {
        Ok(split(&self.dataset, ratios, seed, TooFewPolicy::Fail)?)
    }

    /// Writes `world.json`, `interactions.tsv` and `profiles.jsonl` to `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| SynthError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let params = dir.join("world.json");
        let text = serde_json::to_string_pretty(&self.params).expect("params serialize");
        fs::write(&params, text).map_err(io(&params))?;
        write_interactions(&dir.join("interactions.tsv"), &self.dataset)?;
        write_item_profiles(&dir.join("profiles.jsonl"), &self.dataset, &self.profiles)?;
        Ok(())
    }

    /// Regenerates a world from the `world.json` in `dir` (or a path to the
    /// file itself).
    pub fn load(path: &Path) -> Result<Self, SynthError> {
        let file = if path.is_dir() { path.join("world.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(|source| SynthError::Io {
            path: file.clone(),
            source,
        })?;
        let params: WorldParams = serde_json::from_str(&text).map_err(|e| SynthError::Format {
            path: file.clone(),
            message: e.to_string(),
        })?;
        Self::generate(&params)
    }
}

/// Templated profile naming the item's three strongest latent factors.
fn item_profile(item: usize, factors: &Array2<f64>) -> ItemProfile {
    let row = factors.row(item);
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
    let traits: Vec<String> = idx
        .iter()
        .take(3)
        .map(|&k| format!("f{k:02}{}", if row[k] >= 0.0 { '+' } else { '-' }))
        .collect();
    ItemProfile {
        item,
        title: format!("Item {item:04}"),
        description: format!("A catalogue item whose dominant traits are {}.", traits.join(" ")),
    }
}
