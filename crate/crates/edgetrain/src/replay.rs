//! Latent replay: generate activations at the LR cut, keep a class-keyed
//! store of replay vectors under a per-class quota, and compose training
//! epochs that mix new and old latents at a configured ratio.
//!
//! The store has a file form (`LRBF`) so old latents can live on cheap
//! non-volatile storage while only the working set stays in memory.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::Tensor;
use crate::trainer::{train_batch, FisherState, TrainConfig};

const LRBF_MAGIC: [u8; 4] = *b"LRBF";
const LRBF_VERSION: u16 = 1;

/// How [`insert_class`] picks the stored subset when more latents arrive
/// than the quota allows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InsertStrategy {
    /// Keep the first `quota` vectors in arrival order.
    FirstK,
    /// Keep a seeded uniform sample of `quota` vectors.
    UniformRandom(u64),
}

/// Class-keyed store of latent activation vectors with a per-class quota.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    dims: Vec<usize>,
    quota: usize,
    classes: BTreeMap<u32, Vec<Vec<f32>>>,
    /// When set, [`save`](Self::save) / `learn_new_class` persist here.
    pub store_path: Option<PathBuf>,
}

impl ReplayBuffer {
    pub fn new(dims: Vec<usize>, quota: usize) -> Self {
        ReplayBuffer {
            dims,
            quota,
            classes: BTreeMap::new(),
            store_path: None,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn quota(&self) -> usize {
        self.quota
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn class_ids(&self) -> Vec<u32> {
        self.classes.keys().copied().collect()
    }

    pub fn count(&self, class_id: u32) -> usize {
        self.classes.get(&class_id).map(Vec::len).unwrap_or(0)
    }

    pub fn total_vectors(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    /// Store up to `quota` latents for a class. Re-inserting replaces the
    /// class entry, so the count never exceeds the quota.
    pub fn insert_class(
        &mut self,
        class_id: u32,
        latents: &[Tensor],
        strategy: InsertStrategy,
    ) -> Result<()> {
        for t in latents {
            t.require_dims(&self.dims)?;
        }
        let keep = self.quota.min(latents.len());
        let picked: Vec<Vec<f32>> = match strategy {
            InsertStrategy::FirstK => latents[..keep]
                .iter()
                .map(|t| t.data().to_vec())
                .collect(),
            InsertStrategy::UniformRandom(seed) => {
                let mut idx: Vec<usize> = (0..latents.len()).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ class_id as u64);
                idx.shuffle(&mut rng);
                let mut sel: Vec<usize> = idx.into_iter().take(keep).collect();
                sel.sort_unstable();
                sel.iter().map(|&i| latents[i].data().to_vec()).collect()
            }
        };
        self.classes.insert(class_id, picked);
        Ok(())
    }

    /// Serialize to the LRBF layout: a fixed header followed by one record
    /// per class with a raw little-endian FP32 payload.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&LRBF_MAGIC)?;
        f.write_all(&LRBF_VERSION.to_le_bytes())?;
        f.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for d in &self.dims {
            f.write_all(&(*d as u32).to_le_bytes())?;
        }
        f.write_all(&(self.quota as u32).to_le_bytes())?;
        f.write_all(&(self.classes.len() as u32).to_le_bytes())?;
        for (class_id, vecs) in &self.classes {
            f.write_all(&class_id.to_le_bytes())?;
            f.write_all(&(vecs.len() as u32).to_le_bytes())?;
            for v in vecs {
                for x in v {
                    f.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let take = |cur: &mut usize, n: usize| -> Result<&[u8]> {
            if *cur + n > bytes.len() {
                return Err(Error::Parse("truncated replay store".into()));
            }
            let s = &bytes[*cur..*cur + n];
            *cur += n;
            Ok(s)
        };
        let u16_at = |cur: &mut usize| -> Result<u16> {
            Ok(u16::from_le_bytes(take(cur, 2)?.try_into().unwrap()))
        };
        let u32_at = |cur: &mut usize| -> Result<u32> {
            Ok(u32::from_le_bytes(take(cur, 4)?.try_into().unwrap()))
        };
        if take(&mut cur, 4)? != LRBF_MAGIC {
            return Err(Error::Parse("bad magic, not an LRBF store".into()));
        }
        let version = u16_at(&mut cur)?;
        if version != LRBF_VERSION {
            return Err(Error::Parse(format!("unsupported LRBF version {version}")));
        }
        let ndims = u32_at(&mut cur)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u32_at(&mut cur)? as usize);
        }
        let quota = u32_at(&mut cur)? as usize;
        let n_classes = u32_at(&mut cur)? as usize;
        let vec_len: usize = dims.iter().product();
        let mut classes = BTreeMap::new();
        for _ in 0..n_classes {
            let class_id = u32_at(&mut cur)?;
            let count = u32_at(&mut cur)? as usize;
            let mut vecs = Vec::with_capacity(count);
            for _ in 0..count {
                let raw = take(&mut cur, 4 * vec_len)?;
                let v: Vec<f32> = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                vecs.push(v);
            }
            classes.insert(class_id, vecs);
        }
        Ok(ReplayBuffer {
            dims,
            quota,
            classes,
            store_path: Some(path.to_path_buf()),
        })
    }
}

/// Mixing plan for one incremental learning step.
#[derive(Debug, Clone, Copy)]
pub struct CLBatchPlan {
    /// New latent vectors per epoch.
    pub n_new: usize,
    /// Replayed old vectors per epoch.
    pub n_replay: usize,
    pub epochs: usize,
}

impl CLBatchPlan {
    /// The default 1:5 new-to-replay mixing ratio.
    pub fn with_default_ratio(n_new: usize, epochs: usize) -> Self {
        CLBatchPlan {
            n_new,
            n_replay: 5 * n_new,
            epochs,
        }
    }
}

/// Forward new inputs through the frozen prefix `[0, lr_cut)` and return
/// the activations at the cut. No tape is allocated below the cut. With
/// `lr_cut == 0` the latents are the raw inputs.
pub fn generate_latents(net: &mut Network, images: &[Tensor]) -> Result<Vec<Tensor>> {
    let cut = net.lr_cut;
    images
        .iter()
        .map(|img| {
            img.require_dims(&net.input_shape)?;
            net.forward_range(img, 0, cut)
        })
        .collect()
}

/// Per-epoch shuffled interleavings of all new latents and a class-balanced
/// sample of old latents. Deterministic for a fixed seed.
///
/// Balancing draws `n_replay / class_count` vectors per class (remainder
/// spread over the first classes) without replacement within an epoch. When
/// a class holds fewer vectors than its share, everything it has is used.
pub fn compose_batches(
    buffer: &ReplayBuffer,
    new_latents: &[Tensor],
    new_class: u32,
    plan: &CLBatchPlan,
    seed: u64,
) -> Result<Vec<Vec<(Tensor, usize)>>> {
    if plan.n_replay > 0 && buffer.class_count() == 0 {
        return Err(Error::Config(
            "replay requested but the buffer holds no classes".into(),
        ));
    }
    for t in new_latents {
        if !buffer.dims().is_empty() && buffer.class_count() > 0 {
            t.require_dims(buffer.dims())?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_ids = buffer.class_ids();
    let mut epochs = Vec::with_capacity(plan.epochs);
    for _ in 0..plan.epochs {
        let mut samples: Vec<(Tensor, usize)> = Vec::new();
        for t in new_latents.iter().take(plan.n_new) {
            samples.push((t.clone(), new_class as usize));
        }
        if plan.n_replay > 0 {
            let per_class = plan.n_replay / class_ids.len();
            let mut remainder = plan.n_replay % class_ids.len();
            for &cid in &class_ids {
                let mut share = per_class;
                if remainder > 0 {
                    share += 1;
                    remainder -= 1;
                }
                let stored = &buffer.classes[&cid];
                let take = share.min(stored.len());
                let mut idx: Vec<usize> = (0..stored.len()).collect();
                idx.shuffle(&mut rng);
                for &i in idx.iter().take(take) {
                    let t = Tensor::new(buffer.dims().to_vec(), stored[i].clone())?;
                    samples.push((t, cid as usize));
                }
            }
        }
        samples.shuffle(&mut rng);
        epochs.push(samples);
    }
    Ok(epochs)
}

/// Metrics log of one incremental learning step.
#[derive(Debug, Clone)]
pub struct LearnMetrics {
    /// Mean loss per epoch.
    pub epoch_loss: Vec<f32>,
    /// Samples presented per epoch.
    pub samples_per_epoch: Vec<usize>,
    pub latents_generated: usize,
    pub latents_stored: usize,
}

/// The full incremental step for one new class: generate latents at the
/// cut, compose mixed epochs, run AR1 training, then store up to `quota`
/// of the new latents in the buffer (and persist it if file-backed).
#[allow(clippy::too_many_arguments)]
pub fn learn_new_class(
    net: &mut Network,
    fisher: &mut FisherState,
    buffer: &mut ReplayBuffer,
    images: &[Tensor],
    class_id: u32,
    plan: &CLBatchPlan,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LearnMetrics> {
    cfg.validate()?;
    let latents = generate_latents(net, images)?;
    for t in &latents {
        t.require_dims(buffer.dims()).map_err(|_| {
            Error::Config(format!(
                "latent shape {:?} does not match the buffer shape {:?}; \
                 was the buffer created for a different cut?",
                t.dims(),
                buffer.dims()
            ))
        })?;
    }
    let epochs = compose_batches(buffer, &latents, class_id, plan, seed)?;
    let mut metrics = LearnMetrics {
        epoch_loss: Vec::with_capacity(epochs.len()),
        samples_per_epoch: Vec::with_capacity(epochs.len()),
        latents_generated: latents.len(),
        latents_stored: 0,
    };
    for epoch in &epochs {
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in epoch.chunks(cfg.batch_size) {
            loss_sum += train_batch(net, fisher, chunk, cfg)? as f64;
            batches += 1;
        }
        metrics
            .epoch_loss
            .push((loss_sum / batches.max(1) as f64) as f32);
        metrics.samples_per_epoch.push(epoch.len());
    }
    buffer.insert_class(class_id, &latents, InsertStrategy::FirstK)?;
    metrics.latents_stored = buffer.count(class_id);
    if let Some(path) = buffer.store_path.clone() {
        buffer.save(&path)?;
    }
    Ok(metrics)
}
