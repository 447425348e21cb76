//! Anchor drawing, per-member MAP training with Adam, ensemble assembly, and
//! member prediction (deterministic anchored passes or seeded MC-dropout
//! passes).
//!
//! Per-member objective (what Adam minimizes): the average negative
//! log-posterior `L_data + penalty / N`, where `L_data` is the mean
//! per-sample loss over the batch and `penalty` is the gate-wise quadratic
//! anchor term of [`crate::objectives::anchor_penalty`]. Every member's
//! randomness (anchor draw, shuffling, masks) derives from
//! `(base seed, member index)`, so parallel and sequential training produce
//! bit-identical ensembles.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::autodiff::Graph;
use crate::data::{NormStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::lstm::{
    batch_output_nodes, forward, param_nodes, sample_dropout_mask, DropoutMask, HeadOutput,
    MemberParams, NetworkConfig,
};
use crate::objectives::{
    anchor_penalty, anchor_penalty_nodes, sample_loss_nodes, PriorSpec, TNllConfig,
};

const STREAM_ANCHOR: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_MC: u64 = 4;

/// Stable seed derivation (splitmix64 mixing) for independent substreams.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(base ^ mix(stream ^ mix(index)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Anchored,
    McDropout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Ensemble size M (anchored mode trains M members; dropout mode one).
    pub members: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub mode: TrainMode,
    /// Stochastic passes S for MC-dropout inference.
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            members: 30,
            epochs: 300,
            batch_size: 32,
            adam: AdamConfig::default(),
            seed: 42,
            mode: TrainMode::Anchored,
            mc_samples: 30,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.members < 1 {
            bad.push(format!("members must be >= 1, got {}", self.members));
        }
        if self.epochs < 1 {
            bad.push(format!("epochs must be >= 1, got {}", self.epochs));
        }
        if self.batch_size < 1 {
            bad.push(format!("batch_size must be >= 1, got {}", self.batch_size));
        }
        if !(self.adam.learning_rate > 0.0) {
            bad.push(format!(
                "learning_rate must be > 0, got {}",
                self.adam.learning_rate
            ));
        }
        if self.mc_samples < 1 {
            bad.push(format!("mc_samples must be >= 1, got {}", self.mc_samples));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }
}

/// Mode/architecture cross checks shared by training and config loading.
pub fn validate_mode(net: &NetworkConfig, tcfg: &TrainConfig) -> Result<()> {
    match tcfg.mode {
        TrainMode::Anchored if net.dropout_rate != 0.0 => Err(Error::Config(format!(
            "anchored mode requires dropout_rate = 0, got {}",
            net.dropout_rate
        ))),
        TrainMode::McDropout if net.dropout_rate <= 0.0 => Err(Error::Config(
            "mc_dropout mode requires dropout_rate > 0".into(),
        )),
        _ => Ok(()),
    }
}

/// Per-member, per-block Gaussian anchor draws (prior mean zero).
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub members: Vec<MemberParams>,
}

/// Draw anchors `W_anc ~ N(0, sigma_g^2 I)` for every member and block.
/// Deterministic given the seed; member m uses its own substream.
pub fn draw_anchors(
    net: &NetworkConfig,
    prior: &PriorSpec,
    members: usize,
    seed: u64,
) -> Result<AnchorSet> {
    prior.validate()?;
    let drawn = (0..members)
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_ANCHOR, m as u64));
            let mut p = MemberParams::new_zeros(net);
            p.for_each_mut(|block, t| {
                let normal = Normal::new(0.0, prior.sigma2(block).sqrt()).expect("sigma > 0");
                for v in t.data_mut() {
                    *v = normal.sample(&mut rng);
                }
            });
            p
        })
        .collect();
    Ok(AnchorSet { members: drawn })
}

fn gaussian_init(net: &NetworkConfig, prior: &PriorSpec, seed: u64) -> MemberParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MemberParams::new_zeros(net);
    p.for_each_mut(|block, t| {
        let normal = Normal::new(0.0, prior.sigma2(block).sqrt()).expect("sigma > 0");
        for v in t.data_mut() {
            *v = normal.sample(&mut rng);
        }
    });
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub data: f64,
    pub penalty: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingLog {
    /// Full training-set objective before the first update.
    pub initial_objective: f64,
    /// Full training-set objective after the last update.
    pub final_objective: f64,
    /// Batch-averaged terms per epoch; total = data + penalty throughout.
    pub epochs: Vec<EpochStats>,
}

/// Trained ensemble plus everything needed to reproduce its predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub network: NetworkConfig,
    pub likelihood: TNllConfig,
    pub prior: PriorSpec,
    pub mode: TrainMode,
    pub mc_samples: usize,
    pub seed: u64,
    pub members: Vec<MemberParams>,
    pub anchors: Option<AnchorSet>,
    pub norm_stats: NormStats,
    pub logs: Vec<TrainingLog>,
}

/// Full-dataset objective of one member: (data term, penalty term, total).
/// Dropout masks are disabled here so the value is a deterministic measure
/// of the network itself.
pub fn dataset_objective(
    net: &NetworkConfig,
    lik: &TNllConfig,
    prior: &PriorSpec,
    params: &MemberParams,
    anchors: Option<&MemberParams>,
    data: &WindowedDataset,
) -> Result<(f64, f64, f64)> {
    let targets = data.targets_required()?;
    let mut acc = 0.0;
    let mut g = Graph::new();
    for (chunk_in, chunk_y) in data.inputs.chunks(256).zip(targets.chunks(256)) {
        g.reset();
        let gp = param_nodes(&mut g, params)?;
        let windows: Vec<&[f64]> = chunk_in.iter().map(|w| w.as_slice()).collect();
        let head = batch_output_nodes(&mut g, net, &gp, &windows, lik.scale_floor, None)?;
        let y_node = g.leaf_slice(chunk_y, 1, chunk_y.len());
        let loss_vec = sample_loss_nodes(&mut g, y_node, &head, lik.nu)?;
        let loss_sum = g.sum(loss_vec);
        acc += g.value_scalar(loss_sum);
    }
    let data_term = acc / data.len() as f64;
    let pen_term = match anchors {
        Some(anc) => anchor_penalty(params, anc, prior)? / data.len() as f64,
        None => 0.0,
    };
    Ok((data_term, pen_term, data_term + pen_term))
}

/// Train one member with Adam on the anchored MAP objective (or the plain
/// data term in dropout mode). Deterministic given (seed, member index).
pub fn train_member(
    member: usize,
    init: &MemberParams,
    anchors: Option<&MemberParams>,
    net: &NetworkConfig,
    lik: &TNllConfig,
    prior: &PriorSpec,
    tcfg: &TrainConfig,
    data: &WindowedDataset,
) -> Result<(MemberParams, TrainingLog)> {
    if data.is_empty() {
        return Err(Error::Contract("empty training dataset".into()));
    }
    let targets = data.targets_required()?.to_vec();
    let n_train = data.len();
    let inv_n = 1.0 / n_train as f64;

    let mut params = init.clone();
    let mut flat = params.to_flat();
    let mut adam = AdamState::new(flat.len());
    let mut grads: Vec<f64> = Vec::with_capacity(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(tcfg.seed, STREAM_TRAIN, member as u64));

    let mut log = TrainingLog::default();
    let (_, _, initial) = dataset_objective(net, lik, prior, &params, anchors, data)?;
    log.initial_objective = initial;

    let mut order: Vec<usize> = (0..n_train).collect();
    let mut g = Graph::new();
    for epoch in 1..=tcfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_data = 0.0;
        let mut epoch_pen = 0.0;
        let mut epoch_total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(tcfg.batch_size) {
            g.reset();
            let gp = param_nodes(&mut g, &params)?;
            let masks: Option<Vec<DropoutMask>> = match tcfg.mode {
                TrainMode::McDropout => Some(
                    chunk
                        .iter()
                        .map(|_| sample_dropout_mask(net, &mut rng))
                        .collect::<Result<_>>()?,
                ),
                TrainMode::Anchored => None,
            };
            let windows: Vec<&[f64]> = chunk.iter().map(|&wi| data.inputs[wi].as_slice()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&wi| targets[wi]).collect();
            let head = batch_output_nodes(
                &mut g,
                net,
                &gp,
                &windows,
                lik.scale_floor,
                masks.as_deref(),
            )?;
            let y_node = g.leaf_slice(&ys, 1, ys.len());
            let loss_vec = sample_loss_nodes(&mut g, y_node, &head, lik.nu)?;
            let loss_sum = g.sum(loss_vec);
            let data_node = g.mul_scalar(loss_sum, 1.0 / chunk.len() as f64);
            let (total_node, pen_value) = match anchors {
                Some(anc) => {
                    let pen_raw = anchor_penalty_nodes(&mut g, &gp, anc, prior)?;
                    let pen = g.mul_scalar(pen_raw, inv_n);
                    (g.add(data_node, pen)?, g.value_scalar(pen))
                }
                None => (data_node, 0.0),
            };
            let data_value = g.value_scalar(data_node);
            let total_value = g.value_scalar(total_node);
            if !total_value.is_finite() {
                return Err(Error::Train {
                    member,
                    epoch,
                    msg: format!("objective diverged to {total_value}"),
                });
            }
            g.backward(total_node)?;
            gp.collect_flat_grads(&g, &mut grads);
            adam_step(&mut flat, &grads, &mut adam, &tcfg.adam).map_err(|e| Error::Train {
                member,
                epoch,
                msg: e.to_string(),
            })?;
            params.copy_from_flat(&flat)?;

            epoch_data += data_value;
            epoch_pen += pen_value;
            epoch_total += total_value;
            batches += 1;
        }
        let k = batches as f64;
        let stats = EpochStats {
            data: epoch_data / k,
            penalty: epoch_pen / k,
            total: epoch_total / k,
        };
        eprintln!(
            "member={member} epoch={epoch} data={:.6e} penalty={:.6e}",
            stats.data, stats.penalty
        );
        log.epochs.push(stats);
    }

    let (_, _, final_obj) = dataset_objective(net, lik, prior, &params, anchors, data)?;
    log.final_objective = final_obj;
    Ok((params, log))
}

/// Train the full ensemble. Anchored mode trains M independent members (in
/// parallel, with results identical to sequential execution); dropout mode
/// trains a single network with masks active.
pub fn train_ensemble(
    data: &WindowedDataset,
    norm_stats: &NormStats,
    net: &NetworkConfig,
    lik: &TNllConfig,
    prior: &PriorSpec,
    tcfg: &TrainConfig,
) -> Result<EnsembleModel> {
    net.validate()?;
    lik.validate()?;
    prior.validate()?;
    tcfg.validate()?;
    validate_mode(net, tcfg)?;
    if data.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    if data.n_features != net.input_dim {
        return Err(Error::Config(format!(
            "dataset has {} features, network expects {}",
            data.n_features, net.input_dim
        )));
    }
    if data.window != net.window {
        return Err(Error::Config(format!(
            "dataset window {} != network window {}",
            data.window, net.window
        )));
    }

    let (members, anchors, logs) = match tcfg.mode {
        TrainMode::Anchored => {
            let anchors = draw_anchors(net, prior, tcfg.members, tcfg.seed)?;
            let results: Vec<Result<(MemberParams, TrainingLog)>> = (0..tcfg.members)
                .into_par_iter()
                .map(|m| {
                    train_member(
                        m,
                        &anchors.members[m],
                        Some(&anchors.members[m]),
                        net,
                        lik,
                        prior,
                        tcfg,
                        data,
                    )
                })
                .collect();
            let mut members = Vec::with_capacity(tcfg.members);
            let mut logs = Vec::with_capacity(tcfg.members);
            for r in results {
                let (p, l) = r?;
                members.push(p);
                logs.push(l);
            }
            (members, Some(anchors), logs)
        }
        TrainMode::McDropout => {
            let init = gaussian_init(net, prior, derive_seed(tcfg.seed, STREAM_INIT, 0));
            let (p, l) = train_member(0, &init, None, net, lik, prior, tcfg, data)?;
            (vec![p], None, vec![l])
        }
    };

    Ok(EnsembleModel {
        network: net.clone(),
        likelihood: *lik,
        prior: *prior,
        mode: tcfg.mode,
        mc_samples: tcfg.mc_samples,
        seed: tcfg.seed,
        members,
        anchors,
        norm_stats: norm_stats.clone(),
        logs,
    })
}

fn predict_impl(model: &EnsembleModel, window: &[f64], masks: bool) -> Result<Vec<HeadOutput>> {
    match model.mode {
        TrainMode::Anchored => model
            .members
            .iter()
            .map(|p| {
                forward(
                    &model.network,
                    p,
                    window,
                    model.likelihood.scale_floor,
                    None,
                )
            })
            .collect(),
        TrainMode::McDropout => {
            let net = &model.network;
            let p = &model.members[0];
            (0..model.mc_samples)
                .map(|s| {
                    let mask = if masks {
                        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                            model.seed,
                            STREAM_MC,
                            s as u64,
                        ));
                        Some(sample_dropout_mask(net, &mut rng)?)
                    } else {
                        None
                    };
                    forward(net, p, window, model.likelihood.scale_floor, mask.as_ref())
                })
                .collect()
        }
    }
}

/// Per-member head outputs for one normalized window. Anchored mode returns
/// M deterministic passes; dropout mode returns S passes with seeded masks
/// (mask s is a function of (model seed, s), shared across windows).
pub fn predict_members(model: &EnsembleModel, window: &[f64]) -> Result<Vec<HeadOutput>> {
    predict_impl(model, window, true)
}

/// Same as [`predict_members`] but with dropout masks disabled, for
/// diagnosing how much spread the masks contribute.
pub fn predict_members_masks_disabled(
    model: &EnsembleModel,
    window: &[f64],
) -> Result<Vec<HeadOutput>> {
    predict_impl(model, window, false)
}
