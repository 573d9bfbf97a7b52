//! N-way K-shot episode construction.
//!
//! Episode `i` of a stream is a pure function of `(seed, i)`: its generator is
//! a ChaCha8 instance keyed by `seed` and positioned on stream `i`.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::DomainDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    /// Queries per class.
    pub n_query: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(n_way: usize, k_shot: usize, n_query: usize, seed: u64) -> Self {
        Self {
            n_way,
            k_shot,
            n_query,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 || self.k_shot < 1 || self.n_query < 1 {
            return Err(Error::validation(format!(
                "episode spec needs n_way >= 2, k_shot >= 1, n_query >= 1; got {}-way {}-shot {} queries",
                self.n_way, self.k_shot, self.n_query
            )));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.k_shot + self.n_query
    }
}

/// One support or query entry: a dataset example and its episode-local class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EpisodeItem {
    pub example: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeTask {
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
    /// Episode class index → dataset class name.
    pub class_map: Vec<String>,
}

impl EpisodeTask {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    pub fn support_labels(&self) -> Vec<usize> {
        self.support.iter().map(|s| s.label).collect()
    }

    pub fn query_labels(&self) -> Vec<usize> {
        self.query.iter().map(|s| s.label).collect()
    }

    /// Line-delimited record: `support` and `query` lists of
    /// `[class_name, ordinal within class]`.
    pub fn to_record(&self, dataset: &DomainDataset) -> String {
        let ordinals = class_ordinals(dataset);
        let pairs = |items: &[EpisodeItem]| -> Vec<(String, usize)> {
            items
                .iter()
                .map(|it| (self.class_map[it.label].clone(), ordinals[it.example]))
                .collect()
        };
        serde_json::json!({
            "support": pairs(&self.support),
            "query": pairs(&self.query),
        })
        .to_string()
    }
}

fn class_ordinals(dataset: &DomainDataset) -> Vec<usize> {
    let mut ord = vec![0; dataset.len()];
    for members in dataset.indices_by_class() {
        for (o, i) in members.into_iter().enumerate() {
            ord[i] = o;
        }
    }
    ord
}

/// Validated sampling plan over one dataset.
#[derive(Debug, Clone)]
pub struct EpisodeSampler<'a> {
    dataset: &'a DomainDataset,
    spec: EpisodeSpec,
    by_class: Vec<Vec<usize>>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(dataset: &'a DomainDataset, spec: EpisodeSpec) -> Result<Self> {
        spec.validate()?;
        if dataset.n_classes() < spec.n_way {
            return Err(Error::Capacity(format!(
                "{}-way episodes need {} classes, dataset {:?} has {}",
                spec.n_way,
                spec.n_way,
                dataset.domain_name(),
                dataset.n_classes()
            )));
        }
        let by_class = dataset.indices_by_class();
        for (c, members) in by_class.iter().enumerate() {
            if members.len() < spec.per_class() {
                return Err(Error::Capacity(format!(
                    "class {:?} has {} examples, episodes need {}",
                    dataset.class_vocabulary()[c],
                    members.len(),
                    spec.per_class()
                )));
            }
        }
        Ok(Self {
            dataset,
            spec,
            by_class,
        })
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    pub fn dataset(&self) -> &'a DomainDataset {
        self.dataset
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EpisodeTask {
        let EpisodeSpec {
            n_way,
            k_shot,
            n_query,
            ..
        } = self.spec;
        let classes = index::sample(rng, self.by_class.len(), n_way).into_vec();
        let mut support = Vec::with_capacity(n_way * k_shot);
        let mut query = Vec::with_capacity(n_way * n_query);
        let mut class_map = Vec::with_capacity(n_way);
        for (label, &c) in classes.iter().enumerate() {
            let members = &self.by_class[c];
            let picked = index::sample(rng, members.len(), k_shot + n_query);
            for (j, p) in picked.iter().enumerate() {
                let item = EpisodeItem {
                    example: members[p],
                    label,
                };
                if j < k_shot {
                    support.push(item);
                } else {
                    query.push(item);
                }
            }
            class_map.push(self.dataset.class_vocabulary()[c].clone());
        }
        EpisodeTask {
            support,
            query,
            class_map,
        }
    }

    /// Episode `i` of the stream keyed by `seed`.
    pub fn episode(&self, seed: u64, i: u64) -> EpisodeTask {
        self.sample(&mut episode_rng(seed, i))
    }
}

/// Generator for episode `i` of the stream keyed by `seed`.
pub fn episode_rng(seed: u64, i: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i);
    rng
}

/// Draws one episode, advancing `rng`.
pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &DomainDataset,
    spec: &EpisodeSpec,
    rng: &mut R,
) -> Result<EpisodeTask> {
    Ok(EpisodeSampler::new(dataset, *spec)?.sample(rng))
}

/// `count` episodes keyed by `spec.seed`; element `i` equals
/// `EpisodeSampler::episode(spec.seed, i)`.
pub fn sample_episode_stream(
    dataset: &DomainDataset,
    spec: &EpisodeSpec,
    count: usize,
) -> Result<Vec<EpisodeTask>> {
    let sampler = EpisodeSampler::new(dataset, *spec)?;
    Ok((0..count as u64)
        .map(|i| sampler.episode(spec.seed, i))
        .collect())
}
