//! Joint training of the image and radiomics encoders: Dice+CE on the mask
//! head, cross-entropy on the class head, and multi-positive InfoNCE over
//! every embedding of the batch.

mod batch;
mod loss;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::model::{Model, ModelConfig, ModelError, Setting};
use crate::nn::{Adam, AdamConfig, Graph, ParamGrads, Var};
use crate::phantom::{derive_seed, PhantomError};
use crate::volume::VolumeError;

pub use batch::{build_batch, crop_input, crop_offset_range, radiomics_input, BatchPlan, CropPlan, RadiomicsPlan, RadiomicsVariant, CROPS_PER_TUMOR};
pub use loss::{classification_loss, dice_ce_loss, multi_positive_infonce, MIN_TEMPERATURE};

/// Backward passes are summed in chunks of this many samples, then the chunk
/// sums are added in order, so gradients do not depend on thread count.
pub const GRAD_CHUNK: usize = 8;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {logits} predictions vs {target} targets")]
    ShapeMismatch { logits: usize, target: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("temperature {0} is below the minimum")]
    InvalidTemperature(f64),
    #[error("embedding {index} has norm {norm}")]
    UnnormalizedInput { index: usize, norm: f64 },
    #[error("contrastive batch has no positive pairs")]
    SingletonBatch,
    #[error("{0}: empty mask")]
    EmptyMask(String),
    #[error("{id}: tumor does not fit in a {crop}-voxel crop")]
    TumorLargerThanCrop { id: String, crop: usize },
    #[error("non-finite loss or gradient in epoch {epoch} (batch seed {batch_seed})")]
    DivergenceDetected { epoch: usize, batch_seed: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Phantom(#[from] PhantomError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub seg: f64,
    pub con: f64,
    pub cls: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { seg: 1.0, con: 1.0, cls: 0.5, tau: 0.07 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub setting: Setting,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_tumors: usize,
    pub weights: LossWeights,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(setting: Setting, seed: u64) -> Self {
        TrainConfig {
            setting,
            model: ModelConfig { seed: derive_seed(seed, 0x30DE1), ..Default::default() },
            epochs: 30,
            batch_tumors: 40,
            weights: LossWeights::default(),
            adam: AdamConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_tumors < 2 {
            return Err(TrainError::InvalidConfig("a batch needs at least 2 tumors".into()));
        }
        if !(self.weights.tau >= MIN_TEMPERATURE) {
            return Err(TrainError::InvalidTemperature(self.weights.tau));
        }
        if !(self.adam.lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!("learning rate {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// Weighted loss terms; `total = seg·L_seg + con·L_con + cls·L_cls`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLosses {
    pub seg: f64,
    pub con: f64,
    pub cls: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub seg: f64,
    pub con: f64,
    pub cls: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochLosses>,
}

struct Job<'a> {
    graph: &'a Graph,
    seeds: Vec<(Var, Vec<f64>)>,
}

/// Losses and parameter gradients of one planned batch.
pub fn batch_gradients(
    model: &Model,
    data: &Dataset,
    plan: &BatchPlan,
    w: &LossWeights,
) -> Result<(StepLosses, ParamGrads), TrainError> {
    let cfg = model.config.image;
    let crops: Vec<_> = plan.crops.iter().map(|c| crop_input(data, c, &cfg)).collect::<Result<_, _>>()?;
    let image: Vec<_> = crops
        .par_iter()
        .map(|(input, _)| {
            let mut g = Graph::new();
            let v = model.image_forward(&mut g, input)?;
            Ok((g, v))
        })
        .collect::<Result<_, ModelError>>()?;
    let ape_of_crop: Vec<[f64; 3]> = crops.iter().map(|(input, _)| input.prompt_ape[0]).collect();
    let radiomics: Vec<_> = plan
        .radiomics
        .par_iter()
        .map(|r| {
            let mut g = Graph::new();
            let z = model.radiomics_forward(&mut g, &radiomics_input(data, r, &ape_of_crop))?;
            Ok((g, z))
        })
        .collect::<Result<_, ModelError>>()?;

    let nc = crops.len() as f64;
    let mut losses = StepLosses::default();
    let mut jobs = Vec::with_capacity(image.len() + radiomics.len());
    for ((g, v), ((_, target), c)) in image.iter().zip(crops.iter().zip(&plan.crops)) {
        let (ls, gs) = dice_ce_loss(g.value(v.mask_logits), target)?;
        let label = data.items[c.tumor].class.map(|k| k.index());
        let (lc, gc) = classification_loss(g.value(v.class_logits), label)?;
        losses.seg += ls / nc;
        losses.cls += lc / nc;
        jobs.push(Job {
            graph: g,
            seeds: vec![
                (v.mask_logits, gs.iter().map(|x| x * w.seg / nc).collect()),
                (v.class_logits, gc.iter().map(|x| x * w.cls / nc).collect()),
            ],
        });
    }
    for (g, _) in &radiomics {
        jobs.push(Job { graph: g, seeds: Vec::new() });
    }

    let mut z: Vec<Vec<f64>> = image.iter().map(|(g, v)| g.value(v.embedding).to_vec()).collect();
    z.extend(radiomics.iter().map(|(g, v)| g.value(*v).to_vec()));
    let ids: Vec<usize> =
        plan.crops.iter().map(|c| c.tumor).chain(plan.radiomics.iter().map(|r| r.tumor)).collect();
    let (lcon, gz) = multi_positive_infonce(&z, &ids, w.tau)?;
    losses.con = lcon;
    let emb = image.iter().map(|(_, v)| v.embedding).chain(radiomics.iter().map(|(_, z)| *z));
    for ((job, var), gzi) in jobs.iter_mut().zip(emb).zip(gz) {
        job.seeds.push((var, gzi.iter().map(|x| x * w.con).collect()));
    }
    losses.total = w.seg * losses.seg + w.con * losses.con + w.cls * losses.cls;

    let store = &model.store;
    let partial: Vec<ParamGrads> = jobs
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut acc = store.zero_grads();
            for job in chunk {
                let seeds: Vec<(Var, &[f64])> = job.seeds.iter().map(|(v, s)| (*v, s.as_slice())).collect();
                job.graph.backward(&seeds, store, &mut acc);
            }
            acc
        })
        .collect();
    let mut grads = store.zero_grads();
    for p in &partial {
        grads.add_assign(p);
    }
    Ok((losses, grads))
}

/// Tumor batches of one epoch: a seeded shuffle cut into chunks, dropping a
/// trailing chunk with fewer than 2 tumors.
pub fn epoch_batches(n: usize, batch: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 1_000_000 + epoch as u64)));
    order.chunks(batch).filter(|c| c.len() >= 2).map(|c| c.to_vec()).collect()
}

/// Runs one epoch, updating `model` in place.
pub fn train_epoch(
    model: &mut Model,
    adam: &mut Adam,
    data: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochLosses, TrainError> {
    let batches = epoch_batches(data.len(), cfg.batch_tumors, cfg.seed, epoch);
    let mut sum = StepLosses::default();
    for (b, tumors) in batches.iter().enumerate() {
        let batch_seed = derive_seed(cfg.seed, ((epoch as u64) << 32) | b as u64);
        let plan = build_batch(data, tumors, cfg.setting, model.config.image.crop, batch_seed)?;
        let (l, grads) = batch_gradients(model, data, &plan, &cfg.weights)?;
        if !l.total.is_finite() || !grads.is_finite() {
            return Err(TrainError::DivergenceDetected { epoch, batch_seed });
        }
        adam.step(&mut model.store, &grads);
        sum.seg += l.seg;
        sum.con += l.con;
        sum.cls += l.cls;
        sum.total += l.total;
    }
    let n = batches.len().max(1) as f64;
    Ok(EpochLosses { epoch, seg: sum.seg / n, con: sum.con / n, cls: sum.cls / n, total: sum.total / n })
}

/// Trains a fresh model for `cfg.epochs` epochs.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(data, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLosses),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(TrainError::SingletonBatch);
    }
    let mut model = Model::new(cfg.setting, cfg.model)?;
    let mut adam = Adam::new(&model.store, cfg.adam);
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let e = train_epoch(&mut model, &mut adam, data, cfg, epoch)?;
        log::info!("{} epoch {epoch}: total {:.4} seg {:.4} con {:.4} cls {:.4}", cfg.setting, e.total, e.seg, e.con, e.cls);
        on_epoch(&e);
        trace.push(e);
    }
    Ok(TrainOutcome { model, trace })
}

/// Writes `epoch,seg,con,cls,total` rows.
pub fn write_loss_trace<W: Write>(trace: &[EpochLosses], out: W) -> Result<(), TrainError> {
    let mut w = csv::Writer::from_writer(out);
    for e in trace {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}
