//! Domain datasets, paired batching, synthetic generators, augmentations.

pub mod augment;
pub mod generators;
pub mod io;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, StreamTag};
use crate::tensor::{one_hot_to_labels, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

/// One domain's samples, with optional one-hot labels.
///
/// Training only ever reads source labels; target labels, when a generator
/// produced them, are held out for evaluation. The batching layer enforces
/// this by construction: target batches carry no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset<T> {
    pub samples: Tensor<T>,
    pub labels: Option<Tensor<T>>,
    pub domain: Domain,
    pub class_count: usize,
}

impl<T: Scalar> DomainDataset<T> {
    pub fn new(
        samples: Tensor<T>,
        labels: Option<Tensor<T>>,
        domain: Domain,
        class_count: usize,
    ) -> Result<Self> {
        let ds = DomainDataset {
            samples,
            labels,
            domain,
            class_count,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.rank() != 2 {
            return Err(Error::Validation(format!(
                "samples must be [N, d], got {:?}",
                self.samples.shape()
            )));
        }
        if let Some(labels) = &self.labels {
            let expect = [self.samples.shape()[0], self.class_count];
            if labels.shape() != expect {
                return Err(Error::dims("dataset labels", labels.shape(), &expect));
            }
            one_hot_to_labels(labels)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    /// Class indices, for evaluation. Errors if labels are absent.
    pub fn label_indices(&self) -> Result<Vec<usize>> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Validation("dataset has no labels".into()))?;
        one_hot_to_labels(labels)
    }
}

#[derive(Debug, Clone)]
pub struct LabeledBatch<T> {
    pub x: Tensor<T>,
    pub y: Tensor<T>,
}

impl<T: Scalar> LabeledBatch<T> {
    pub fn len(&self) -> usize {
        self.x.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct UnlabeledBatch<T> {
    pub x: Tensor<T>,
}

/// Equal-size batches drawn from the two domains by independent cursors.
#[derive(Debug, Clone)]
pub struct BatchPair<T> {
    pub source: LabeledBatch<T>,
    pub target: UnlabeledBatch<T>,
}

/// Paired batch stream over both domains.
///
/// Each domain reshuffles independently at its own epoch boundary; pairing
/// is positional after shuffling, which makes cross-domain pairs uniform.
/// Batches that would run past the end of an epoch are dropped, keeping the
/// batch size constant. Batches are a pure function of `(seed, step)`, so a
/// resumed run sees the identical stream.
pub struct PairSampler<'a, T> {
    source: &'a DomainDataset<T>,
    target: &'a DomainDataset<T>,
    batch_size: usize,
    seed: u64,
    src_cache: (u64, Vec<usize>),
    tgt_cache: (u64, Vec<usize>),
}

impl<'a, T: Scalar> PairSampler<'a, T> {
    pub fn new(
        source: &'a DomainDataset<T>,
        target: &'a DomainDataset<T>,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Config("both datasets must be non-empty".into()));
        }
        if source.labels.is_none() {
            return Err(Error::Validation("source dataset must be labeled".into()));
        }
        if batch_size == 0 || batch_size > source.len() || batch_size > target.len() {
            return Err(Error::Config(format!(
                "batch size {} must be in 1..=min({}, {})",
                batch_size,
                source.len(),
                target.len()
            )));
        }
        let mut sampler = PairSampler {
            source,
            target,
            batch_size,
            seed,
            src_cache: (u64::MAX, Vec::new()),
            tgt_cache: (u64::MAX, Vec::new()),
        };
        sampler.refresh(Domain::Source, 0);
        sampler.refresh(Domain::Target, 0);
        Ok(sampler)
    }

    /// Full batches per epoch for one domain.
    pub fn batches_per_epoch(&self, domain: Domain) -> u64 {
        let len = match domain {
            Domain::Source => self.source.len(),
            Domain::Target => self.target.len(),
        };
        (len / self.batch_size) as u64
    }

    fn refresh(&mut self, domain: Domain, epoch: u64) {
        let (len, tag, cache) = match domain {
            Domain::Source => (
                self.source.len(),
                StreamTag::ShuffleSource,
                &mut self.src_cache,
            ),
            Domain::Target => (
                self.target.len(),
                StreamTag::ShuffleTarget,
                &mut self.tgt_cache,
            ),
        };
        if cache.0 != epoch {
            let mut perm: Vec<usize> = (0..len).collect();
            perm.shuffle(&mut stream_rng(self.seed, tag, epoch));
            *cache = (epoch, perm);
        }
    }

    fn indices_at(&mut self, domain: Domain, step: u64) -> Vec<usize> {
        let bpe = self.batches_per_epoch(domain);
        let (epoch, slot) = (step / bpe, (step % bpe) as usize);
        self.refresh(domain, epoch);
        let cache = match domain {
            Domain::Source => &self.src_cache,
            Domain::Target => &self.tgt_cache,
        };
        cache.1[slot * self.batch_size..(slot + 1) * self.batch_size].to_vec()
    }

    /// The batch pair for a given global step.
    pub fn batch_at(&mut self, step: u64) -> BatchPair<T> {
        let src_idx = self.indices_at(Domain::Source, step);
        let tgt_idx = self.indices_at(Domain::Target, step);
        let labels = self.source.labels.as_ref().expect("checked in new");
        BatchPair {
            source: LabeledBatch {
                x: self.source.samples.gather_rows(&src_idx),
                y: labels.gather_rows(&src_idx),
            },
            target: UnlabeledBatch {
                x: self.target.samples.gather_rows(&tgt_idx),
            },
        }
    }
}
