//! The victim side: supervised training to a target accuracy, and the two
//! metered query endpoints (top-1 labels, full softmax) that are the only
//! way the attack observes the victim.

pub mod ledger;

pub use ledger::{LedgerLog, QueryLedger, SharedLedger};

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array2, Array4, Axis};
use rand::seq::SliceRandom;

use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::losses::clone_ce_grad;
use crate::nn::{
    build_network, cosine_lr, read_archive, write_archive, Feature, Net, NetworkSpec, SgdMomentum,
};
use crate::rng::Rng;
use crate::tensor::{argmax_rows, softmax_rows};

/// A trained victim classifier with its interface contract.
pub struct VictimModel {
    pub net: Net,
    pub num_classes: usize,
    pub input_shape: (usize, usize, usize),
    /// Held-out accuracy reached during training.
    pub train_accuracy: f32,
    /// Set when the epoch cap was hit below the requested target.
    pub target_shortfall: bool,
    pub epochs_trained: usize,
}

#[derive(Debug, Clone)]
pub struct VictimTrainOpts {
    pub target_accuracy: f32,
    pub epochs_cap: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    /// Fraction of the dataset held out to measure the target.
    pub holdout_fraction: f32,
}

impl Default for VictimTrainOpts {
    fn default() -> Self {
        VictimTrainOpts {
            target_accuracy: 0.95,
            epochs_cap: 30,
            batch_size: 128,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            holdout_fraction: 0.1,
        }
    }
}

fn eval_accuracy(net: &Net, data: &LabeledImages, batch: usize) -> Result<f32> {
    if data.is_empty() {
        return Err(Error::validation("accuracy over an empty set"));
    }
    let n = data.len();
    let mut correct = 0usize;
    let mut start = 0;
    while start < n {
        let end = (start + batch).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let images = data.images.select(Axis(0), &idx);
        let scores = net.forward_eval(Feature::Map(images))?.into_flat()?;
        for (row, &i) in argmax_rows(&scores.view()).iter().zip(idx.iter()) {
            if *row == data.labels[i] {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f32 / n as f32)
}

/// Supervised training until the held-out accuracy reaches
/// `target_accuracy` or the epoch cap is hit (in which case the best model
/// seen is returned with `target_shortfall` set).
pub fn train_victim(
    dataset: &LabeledImages,
    spec: &NetworkSpec,
    opts: &VictimTrainOpts,
    rng: &mut Rng,
) -> Result<VictimModel> {
    if dataset.is_empty() {
        return Err(Error::validation("victim training set is empty"));
    }
    if !(0.0..=1.0).contains(&opts.target_accuracy) {
        return Err(Error::validation("target_accuracy must lie in [0, 1]"));
    }
    let k = spec
        .num_classes()
        .ok_or_else(|| Error::validation("victim spec must be a classifier"))?;
    if k != dataset.num_classes {
        return Err(Error::validation(format!(
            "spec emits {k} classes, dataset has {}",
            dataset.num_classes
        )));
    }
    let (c, h, w) = match spec.input {
        crate::nn::InputShape::Image { c, h, w } => (c, h, w),
        _ => return Err(Error::validation("victim input must be an image")),
    };
    if dataset.images.dim().1 != c || dataset.images.dim().2 != h || dataset.images.dim().3 != w {
        return Err(Error::shape(format!(
            "dataset images {:?} do not match spec input {c}x{h}x{w}",
            dataset.images.dim()
        )));
    }

    let mut net = build_network(spec, rng)?;

    // degenerate target: an untrained model already satisfies it
    if opts.target_accuracy == 0.0 {
        log::warn!("victim target accuracy 0: returning untrained model");
        let acc = 0.0;
        return Ok(VictimModel {
            net,
            num_classes: k,
            input_shape: (c, h, w),
            train_accuracy: acc,
            target_shortfall: false,
            epochs_trained: 0,
        });
    }

    // deterministic holdout split
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let holdout = ((n as f32 * opts.holdout_fraction) as usize).clamp(1, n.saturating_sub(1).max(1));
    let (held_idx, train_idx) = order.split_at(holdout);
    let held = dataset.select(held_idx);
    let train = dataset.select(train_idx);
    if train.is_empty() {
        return Err(Error::validation("victim training split is empty"));
    }

    let mut opt = SgdMomentum::new(opts.lr, opts.momentum, opts.weight_decay);
    let steps_per_epoch = train.len().div_ceil(opts.batch_size);
    let total_steps = (steps_per_epoch * opts.epochs_cap) as u64;
    let mut step = 0u64;
    let mut best_acc = 0.0f32;
    let mut best_params: Option<Vec<crate::nn::TensorEntry>> = None;
    let mut epochs_done = 0;

    for _epoch in 0..opts.epochs_cap {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        idx.shuffle(rng);
        for chunk in idx.chunks(opts.batch_size) {
            let images = train.images.select(Axis(0), chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            opt.set_lr(cosine_lr(opts.lr, step, total_steps));
            net.zero_grads();
            let scores = net.forward_train(Feature::Map(images), true)?.into_flat()?;
            let (_, grad) = clone_ce_grad(&scores.view(), &labels)?;
            net.backward(Feature::Flat(grad))?;
            opt.step(&mut net);
            step += 1;
        }
        epochs_done += 1;
        let acc = eval_accuracy(&net, &held, opts.batch_size)?;
        if acc > best_acc {
            best_acc = acc;
            best_params = Some(net.export_tensors("v"));
        }
        log::info!("victim epoch {epochs_done}: holdout accuracy {acc:.4}");
        if acc >= opts.target_accuracy {
            break;
        }
    }

    if let Some(best) = best_params {
        net.import_tensors("v", &best)?;
    }
    let shortfall = best_acc < opts.target_accuracy;
    if shortfall {
        log::warn!(
            "victim training capped at {} epochs with holdout accuracy {best_acc:.4} < target {}",
            opts.epochs_cap,
            opts.target_accuracy
        );
    }
    Ok(VictimModel {
        net,
        num_classes: k,
        input_shape: (c, h, w),
        train_accuracy: best_acc,
        target_shortfall: shortfall,
        epochs_trained: epochs_done,
    })
}

fn check_query_shape(victim: &VictimModel, batch: &Array4<f32>) -> Result<()> {
    let (n, c, h, w) = batch.dim();
    if n == 0 {
        return Err(Error::validation("query batch is empty"));
    }
    if (c, h, w) != victim.input_shape {
        return Err(Error::shape(format!(
            "query batch {:?} does not match victim input {:?}",
            (c, h, w),
            victim.input_shape
        )));
    }
    Ok(())
}

fn victim_scores(victim: &VictimModel, batch: &Array4<f32>) -> Result<Array2<f32>> {
    victim
        .net
        .forward_eval(Feature::Map(batch.clone()))?
        .into_flat()
}

/// Top-1 labels for the batch. Charges `batch` queries to `phase` after the
/// budget check passes; ties break toward the lowest class index; nothing
/// but the labels leaves this function.
pub fn hard_label_query(
    victim: &VictimModel,
    batch: &Array4<f32>,
    ledger: &mut QueryLedger,
    phase: &str,
) -> Result<Vec<usize>> {
    check_query_shape(victim, batch)?;
    let n = batch.dim().0 as u64;
    if !ledger.admits(n) {
        return Err(Error::BudgetExhausted {
            requested: n,
            remaining: ledger.remaining().unwrap_or(0),
        });
    }
    let scores = victim_scores(victim, batch)?;
    ledger.charge(phase, n)?;
    Ok(argmax_rows(&scores.view()))
}

/// Full softmax rows for the batch; same accounting as the hard endpoint.
pub fn soft_label_query(
    victim: &VictimModel,
    batch: &Array4<f32>,
    ledger: &mut QueryLedger,
    phase: &str,
) -> Result<Array2<f32>> {
    check_query_shape(victim, batch)?;
    let n = batch.dim().0 as u64;
    if !ledger.admits(n) {
        return Err(Error::BudgetExhausted {
            requested: n,
            remaining: ledger.remaining().unwrap_or(0),
        });
    }
    let scores = victim_scores(victim, batch)?;
    ledger.charge(phase, n)?;
    Ok(softmax_rows(&scores.view()))
}

/// Total query cost of a full run: both clone initializations plus the
/// alternating budget.
pub fn total_query_cost(n_c: u64, n_q: u64) -> u64 {
    2 * n_c + n_q
}

/// Alternating budget from epochs over a pool of `n_p` samples.
pub fn alternating_budget(epochs: u64, n_p: u64) -> u64 {
    epochs * n_p
}

const VICTIM_MAGIC: &[u8; 4] = b"MXVM";

/// Serializes the victim (spec text + parameters + metadata) with a format
/// version tag.
pub fn save_victim(victim: &VictimModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(VICTIM_MAGIC)?;
    f.write_all(&crate::FORMAT_VERSION.to_le_bytes())?;
    let header = serde_json::json!({
        "spec": victim.net.spec.to_text(),
        "num_classes": victim.num_classes,
        "input_shape": victim.input_shape,
        "train_accuracy": victim.train_accuracy,
        "target_shortfall": victim.target_shortfall,
        "epochs_trained": victim.epochs_trained,
    });
    let header = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
    f.write_all(&(header.len() as u64).to_le_bytes())?;
    f.write_all(&header)?;
    write_archive(&mut f, &victim.net.export_tensors("v"))?;
    Ok(())
}

pub fn load_victim(path: &Path) -> Result<VictimModel> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != VICTIM_MAGIC {
        return Err(Error::format("not a victim model file".to_string()));
    }
    let mut vbuf = [0u8; 4];
    f.read_exact(&mut vbuf)?;
    if u32::from_le_bytes(vbuf) != crate::FORMAT_VERSION {
        return Err(Error::format("victim model format version mismatch"));
    }
    let mut lbuf = [0u8; 8];
    f.read_exact(&mut lbuf)?;
    let mut header = vec![0u8; u64::from_le_bytes(lbuf) as usize];
    f.read_exact(&mut header)?;
    let header: serde_json::Value =
        serde_json::from_slice(&header).map_err(|e| Error::format(e.to_string()))?;
    let spec = NetworkSpec::parse(
        header["spec"]
            .as_str()
            .ok_or_else(|| Error::format("victim header missing spec"))?,
    )?;
    let mut rng = crate::rng::seed_rng(0);
    let mut net = build_network(&spec, &mut rng)?;
    let entries = read_archive(&mut f)?;
    net.import_tensors("v", &entries)?;
    let shape = header["input_shape"]
        .as_array()
        .ok_or_else(|| Error::format("victim header missing input_shape"))?;
    let dim = |i: usize| -> Result<usize> {
        shape
            .get(i)
            .and_then(|v| v.as_u64())
            .map(|v| v as usize)
            .ok_or_else(|| Error::format("bad input_shape"))
    };
    Ok(VictimModel {
        net,
        num_classes: header["num_classes"].as_u64().unwrap_or(0) as usize,
        input_shape: (dim(0)?, dim(1)?, dim(2)?),
        train_accuracy: header["train_accuracy"].as_f64().unwrap_or(0.0) as f32,
        target_shortfall: header["target_shortfall"].as_bool().unwrap_or(false),
        epochs_trained: header["epochs_trained"].as_u64().unwrap_or(0) as usize,
    })
}
