//! Experiment configuration files and the data/scorer plumbing they drive.
//!
//! A config is a TOML file with the sections `[data]`, `[train]`,
//! `[schedule]`, `[ablation]`, `[scorer]` (with `[scorer.endpoint]`) and
//! `[output]`. Unknown keys are rejected. Secrets never live in the file:
//! the endpoint names the environment variable that holds its token.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneKind, Optimizer};
use crate::data::{
    dataset_from_records, inject_noise, kcore_filter, load_item_profiles, read_records, split, Affinity,
    NoiseSource, ProfileSet, SplitDataset, TooFewPolicy,
};
use crate::denoise::ScheduleConfig;
use crate::error::{Error, Result};
use crate::loss::TrainMode;
use crate::scorer::{CachedBackend, EndpointConfig, OracleBackend, PreferenceBackend, RemoteBackend, ScoreCache};
use crate::synth::SyntheticWorld;
use crate::trainer::{Ablation, RunConfig, ScorerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Synthetic world directory (or its `world.json`). Takes precedence
    /// over `interactions`.
    pub world: Option<PathBuf>,
    pub interactions: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub delimiter: char,
    pub min_rating: Option<u8>,
    pub kcore: Option<usize>,
    /// Keep interactions rated below 3 and flag them as noise.
    pub noise_from_ratings: bool,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub too_few: TooFewPolicy,
    /// Extra planted noise as a fraction of training positives.
    pub inject_noise: f64,
    pub noise_seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            world: None,
            interactions: None,
            profiles: None,
            delimiter: '\t',
            min_rating: None,
            kcore: None,
            noise_from_ratings: false,
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
            too_few: TooFewPolicy::Fail,
            inject_noise: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub mode: TrainMode,
    pub backbone: BackboneKind,
    pub dim: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: u64,
    pub early_stop_patience: u64,
    pub seed: u64,
    pub eval_ks: Vec<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = RunConfig::default();
        Self {
            mode: d.mode,
            backbone: d.backbone,
            dim: d.dim,
            layers: d.layers,
            learning_rate: d.learning_rate,
            l2: d.l2,
            optimizer: d.optimizer,
            batch_size: d.batch_size,
            max_epochs: d.max_epochs,
            early_stop_patience: d.early_stop_patience,
            seed: d.seed,
            eval_ks: d.eval_ks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub kind: ScorerKind,
    /// Oracle only: pull of a listed item's perceived affinity toward 1.
    pub listed_weight: f64,
    /// Score cache file for `cached-remote`; defaults to the run directory.
    pub cache_path: Option<PathBuf>,
    pub endpoint: EndpointConfig,
}

impl Default for ScorerSection {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Oracle,
            listed_weight: 0.0,
            cache_path: None,
            endpoint: EndpointConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub train: TrainSection,
    pub schedule: ScheduleConfig,
    pub ablation: Ablation,
    pub scorer: ScorerSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths are resolved against the file's
    /// directory and made absolute, so a snapshot written elsewhere still
    /// points at the same data.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let base = std::path::absolute(base).map_err(|e| Error::io(base, e))?;
        for p in [&mut cfg.data.world, &mut cfg.data.interactions, &mut cfg.data.profiles, &mut cfg.scorer.cache_path]
            .into_iter()
            .flatten()
            .chain([&mut cfg.output.dir])
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn run_config(&self) -> RunConfig {
        let t = &self.train;
        RunConfig {
            mode: t.mode,
            backbone: t.backbone,
            dim: t.dim,
            layers: t.layers,
            learning_rate: t.learning_rate,
            l2: t.l2,
            optimizer: t.optimizer,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            early_stop_patience: t.early_stop_patience,
            seed: t.seed,
            eval_ks: t.eval_ks.clone(),
            schedule: self.schedule.clone(),
            scorer: self.scorer.kind,
            scorer_parallelism: self.scorer.endpoint.parallelism.max(1),
            ablation: self.ablation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.run_config().validate().map_err(Error::Config)?;
        if self.data.world.is_none() && self.data.interactions.is_none() {
            return Err(Error::Config("data: set either `world` or `interactions`".into()));
        }
        if self.scorer.kind != ScorerKind::Oracle {
            self.scorer.endpoint.validate().map_err(Error::Config)?;
        }
        if !(0.0..=1.0).contains(&self.scorer.listed_weight) {
            return Err(Error::Config(format!(
                "scorer.listed_weight must lie in [0, 1], got {}",
                self.scorer.listed_weight
            )));
        }
        Ok(())
    }
}

/// Split data plus everything needed to score it.
pub struct PreparedData {
    pub split: SplitDataset,
    pub profiles: ProfileSet,
    /// Ground-truth affinity; only synthetic worlds have one.
    pub affinity: Option<Arc<dyn Affinity>>,
}

pub fn prepare_data(section: &DataSection) -> Result<PreparedData> {
    if let Some(path) = &section.world {
        let world = SyntheticWorld::load(path)?;
        let mut data = split(&world.dataset, section.split, section.split_seed, section.too_few)?;
        if section.inject_noise > 0.0 {
            data = inject_noise(
                &data,
                section.inject_noise,
                NoiseSource::SyntheticLowAffinity(world.affinity.as_ref()),
                section.noise_seed,
            )?;
        }
        let affinity: Arc<dyn Affinity> = world.affinity.clone();
        return Ok(PreparedData {
            split: data,
            profiles: world.profiles,
            affinity: Some(affinity),
        });
    }

    let path = section
        .interactions
        .as_ref()
        .ok_or_else(|| Error::Config("data.interactions is not set".into()))?;
    let records = read_records(path, section.delimiter)?;
    let filter = if section.noise_from_ratings { None } else { section.min_rating };
    let mut dataset = dataset_from_records(&records, filter)?;
    if section.noise_from_ratings {
        for x in &mut dataset.interactions {
            x.planted_noise = Some(x.rating.is_some_and(|r| r < 3));
        }
    }
    if let Some(k) = section.kcore {
        dataset = kcore_filter(&dataset, k)?;
    }
    let mut data = split(&dataset, section.split, section.split_seed, section.too_few)?;
    if section.inject_noise > 0.0 {
        let pool = dataset.resolve(&records);
        data = inject_noise(&data, section.inject_noise, NoiseSource::RatedBelow3(&pool), section.noise_seed)?;
    }
    let profiles = match &section.profiles {
        Some(p) => load_item_profiles(p, &dataset)?,
        None => ProfileSet {
            missing: (0..dataset.item_count).collect(),
            ..ProfileSet::default()
        },
    };
    Ok(PreparedData {
        split: data,
        profiles,
        affinity: None,
    })
}

/// Builds the backend selected in `[scorer]`.
pub fn build_backend(
    section: &ScorerSection,
    affinity: Option<Arc<dyn Affinity>>,
    run_dir: &Path,
) -> Result<Arc<dyn PreferenceBackend>> {
    Ok(match section.kind {
        ScorerKind::Oracle => {
            let affinity = affinity.ok_or_else(|| {
                Error::Config("the oracle scorer needs a synthetic world (data.world)".into())
            })?;
            Arc::new(OracleBackend::new(affinity).with_listed_weight(section.listed_weight))
        }
        ScorerKind::Remote => Arc::new(RemoteBackend::new(section.endpoint.clone())?),
        ScorerKind::CachedRemote => {
            let path = section
                .cache_path
                .clone()
                .unwrap_or_else(|| run_dir.join("score_cache.jsonl"));
            let cache = ScoreCache::open(&path)?;
            Arc::new(CachedBackend::new(RemoteBackend::new(section.endpoint.clone())?, cache))
        }
    })
}
