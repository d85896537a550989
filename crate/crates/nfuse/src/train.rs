//! SGD-with-momentum training loop, the transfer-learning regimes, and
//! cascaded-head training on frozen encodings.

use crate::arch::{CascadeHead, Network, Param, ENCODING_DIM};
use crate::data::augment::{center_crop, gaussian_blur, random_crop, sample_seed};
use crate::data::{Split, Volume};
use crate::error::{Error, Result};
use crate::labeling::Label;
use crate::metrics::{argmax_decision, auc_micro, PredictionSet};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// The transfer regimes: apply the pretrained weights unchanged, train the
/// fully connected head only, train everything, or train a cascade head on
/// frozen encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    Baseline,
    FineTune,
    Retrain,
    Cascade,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::Baseline => "baseline",
            TransferMode::FineTune => "fine_tune",
            TransferMode::Retrain => "retrain",
            TransferMode::Cascade => "cascade",
        }
    }

    /// Default epoch budget per regime.
    pub fn default_epochs(self) -> usize {
        match self {
            TransferMode::Baseline => 0,
            TransferMode::FineTune => 50,
            TransferMode::Retrain => 200,
            TransferMode::Cascade => 200,
        }
    }
}

impl std::str::FromStr for TransferMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(TransferMode::Baseline),
            "fine_tune" | "fine-tune" => Ok(TransferMode::FineTune),
            "retrain" => Ok(TransferMode::Retrain),
            "cascade" => Ok(TransferMode::Cascade),
            other => Err(Error::InvalidArgument(format!("unknown transfer mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub momentum: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub mode: TransferMode,
    /// Gaussian blur + random crop on training samples; evaluation always
    /// uses the deterministic center crop.
    pub augment: bool,
}

impl TrainConfig {
    pub fn new(mode: TransferMode) -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 4,
            epochs: mode.default_epochs(),
            seed: 0,
            mode,
            augment: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-parameter trainability for a regime. True = gradient-tracked and
/// updated; everything else stays bitwise untouched.
pub fn freeze_mask(network: &Network, mode: TransferMode) -> Result<Vec<bool>> {
    match mode {
        TransferMode::Baseline => Ok(vec![false; network.params.len()]),
        TransferMode::FineTune => Ok(network
            .params
            .iter()
            .map(|p| Network::is_fc_param(&p.name))
            .collect()),
        TransferMode::Retrain => Ok(vec![true; network.params.len()]),
        TransferMode::Cascade => Err(Error::InvalidArgument(
            "cascade mode trains a separate head; use train_cascade".into(),
        )),
    }
}

/// One velocity buffer per parameter, zero-initialized.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    velocities: Vec<Vec<f32>>,
}

impl OptimizerState {
    pub fn new(params: &[Param]) -> Self {
        OptimizerState {
            velocities: params.iter().map(|p| vec![0.0; p.tensor.numel()]).collect(),
        }
    }
}

/// v <- mu * v + g; theta <- theta - lr * v, skipping masked parameters
/// (their velocities are untouched too).
pub fn sgd_momentum_step(
    params: &mut [Param],
    grads: &[Option<&[f32]>],
    state: &mut OptimizerState,
    lr: f32,
    momentum: f32,
    mask: &[bool],
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != mask.len()
        || params.len() != state.velocities.len()
    {
        return Err(Error::shape_mismatch(
            "optimizer step",
            params.len(),
            (grads.len(), mask.len(), state.velocities.len()),
        ));
    }
    for i in 0..params.len() {
        if !mask[i] {
            continue;
        }
        let g = grads[i].ok_or_else(|| {
            Error::InvalidArgument(format!("missing gradient for parameter {:?}", params[i].name))
        })?;
        let theta = params[i].tensor.data_mut();
        let v = &mut state.velocities[i];
        if g.len() != theta.len() || v.len() != theta.len() {
            return Err(Error::shape_mismatch(&params[i].name, theta.len(), g.len()));
        }
        for j in 0..theta.len() {
            v[j] = momentum * v[j] + g[j];
            theta[j] -= lr * v[j];
        }
    }
    Ok(())
}

/// One labeled full-size volume.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub session_id: String,
    pub volume: Volume,
    pub label: Label,
}

/// Stochastic training view: blur with sigma ~ U[0, 1.5], random crop,
/// then per-volume min-max normalization. Everything derives from `seed`.
pub fn training_view(vol: &Volume, input_extent: usize, seed: u64) -> Result<Volume> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma: f32 = rng.gen_range(0.0..1.5);
    let blurred = gaussian_blur(vol, sigma)?;
    let cropped = random_crop(&blurred, input_extent, rng.gen::<u64>())?;
    Ok(cropped.min_max_normalized())
}

/// Deterministic evaluation view: center crop + min-max normalization.
pub fn evaluation_view(vol: &Volume, input_extent: usize) -> Result<Volume> {
    Ok(center_crop(vol, input_extent)?.min_max_normalized())
}

fn batch_tensor(volumes: &[Volume]) -> Result<Tensor> {
    let first = volumes
        .first()
        .ok_or_else(|| Error::EmptyDataset("batch".into()))?;
    let [d, h, w] = first.extents();
    let mut data = Vec::with_capacity(volumes.len() * d * h * w);
    for v in volumes {
        if v.extents() != [d, h, w] {
            return Err(Error::shape_mismatch("batch volumes", [d, h, w], v.extents()));
        }
        data.extend_from_slice(v.data());
    }
    Tensor::new(vec![volumes.len(), 1, d, h, w], data)
}

/// Rebuild a prediction set from f32 probability rows, renormalizing away
/// float rounding so downstream row-sum checks hold in f64.
pub fn prediction_set_from_rows(rows: &[[f64; 3]], labels: &[usize]) -> Result<PredictionSet> {
    let normed: Vec<[f64; 3]> = rows
        .iter()
        .map(|r| {
            let s: f64 = r.iter().sum();
            [r[0] / s, r[1] / s, r[2] / s]
        })
        .collect();
    PredictionSet::new(normed, labels.to_vec())
}

/// One training-log row.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub micro_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Checkpoint with the best validation micro-AUC across epochs, or the
    /// final parameters when no validation signal exists.
    pub network: Network,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_micro_auc: Option<f64>,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: PredictionSet,
}

fn summarize(rows: &[[f64; 3]], labels: &[usize], loss: f64) -> Result<EvalResult> {
    let correct = rows
        .iter()
        .zip(labels)
        .filter(|(r, &l)| argmax_decision(r) == l)
        .count();
    let predictions = prediction_set_from_rows(rows, labels)?;
    Ok(EvalResult {
        loss,
        accuracy: correct as f64 / labels.len().max(1) as f64,
        predictions,
    })
}

/// Forward-only evaluation with the deterministic view, preserving sample
/// order in the returned prediction set.
pub fn evaluate_network(
    network: &Network,
    samples: &[TrainSample],
    batch_size: usize,
) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset("evaluation set".into()));
    }
    let extent = network.spec.input_extent;
    let mut rows = Vec::with_capacity(samples.len());
    let mut labels = Vec::with_capacity(samples.len());
    let mut loss = 0.0f64;
    for chunk in samples.chunks(batch_size.max(1)) {
        let views: Vec<Volume> = chunk
            .iter()
            .map(|s| evaluation_view(&s.volume, extent))
            .collect::<Result<_>>()?;
        let batch = batch_tensor(&views)?;
        let probs = network.forward(&batch)?;
        for (i, s) in chunk.iter().enumerate() {
            let row = [
                probs.data()[i * 3] as f64,
                probs.data()[i * 3 + 1] as f64,
                probs.data()[i * 3 + 2] as f64,
            ];
            loss -= row[s.label.index()].max(f64::MIN_POSITIVE).ln();
            rows.push(row);
            labels.push(s.label.index());
        }
    }
    loss /= samples.len() as f64;
    summarize(&rows, &labels, loss)
}

/// Train `network` under the regime in `config`. Baseline performs zero
/// updates (the log still records the per-epoch evaluation). Returns the
/// best-validation checkpoint and the full log.
pub fn train(
    network: &Network,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mask = freeze_mask(network, config.mode)?;
    if train_set.is_empty() && config.epochs > 0 {
        return Err(Error::EmptyDataset("training set with epochs > 0".into()));
    }
    let any_trainable = mask.iter().any(|&m| m);
    let extent = network.spec.input_extent;

    let mut net = network.clone();
    let mut state = OptimizerState::new(&net.params);
    let mut log = Vec::new();
    let mut steps = 0usize;
    let mut best: Option<(usize, f64, Vec<Param>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(sample_seed(config.seed, epoch, u32::MAX as usize));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        let mut rows: Vec<[f64; 3]> = Vec::with_capacity(train_set.len());
        let mut labels: Vec<usize> = Vec::with_capacity(train_set.len());
        for chunk in order.chunks(config.batch_size) {
            let mut views = Vec::with_capacity(chunk.len());
            let mut targets = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &train_set[i];
                let view = if config.augment {
                    training_view(&s.volume, extent, sample_seed(config.seed, epoch, i))?
                } else {
                    evaluation_view(&s.volume, extent)?
                };
                views.push(view);
                targets.push(s.label.index());
            }
            let batch = batch_tensor(&views)?;
            let mut fp = net.forward_pass(&batch, Some(&mask))?;
            let (loss_id, probs) = fp.tape.softmax_cross_entropy(fp.logits, &targets)?;
            epoch_loss += fp.tape.value(loss_id).item() as f64 * chunk.len() as f64;
            for (i, &t) in targets.iter().enumerate() {
                rows.push([
                    probs.data()[i * 3] as f64,
                    probs.data()[i * 3 + 1] as f64,
                    probs.data()[i * 3 + 2] as f64,
                ]);
                labels.push(t);
            }
            if any_trainable {
                fp.tape.backward(loss_id)?;
                let grads: Vec<Option<&[f32]>> =
                    fp.param_ids.iter().map(|&id| fp.tape.grad(id)).collect();
                sgd_momentum_step(
                    &mut net.params,
                    &grads,
                    &mut state,
                    config.learning_rate,
                    config.momentum,
                    &mask,
                )?;
                steps += 1;
            }
        }
        epoch_loss /= train_set.len() as f64;
        let train_eval = summarize(&rows, &labels, epoch_loss)?;
        log.push(EpochLog {
            epoch,
            split: Split::Train,
            loss: epoch_loss,
            accuracy: train_eval.accuracy,
            micro_auc: auc_micro(&train_eval.predictions),
        });

        if !val_set.is_empty() {
            let val = evaluate_network(&net, val_set, config.batch_size)?;
            let val_auc = auc_micro(&val.predictions);
            log.push(EpochLog {
                epoch,
                split: Split::Validation,
                loss: val.loss,
                accuracy: val.accuracy,
                micro_auc: val_auc,
            });
            if let Some(auc) = val_auc {
                // strict improvement: earliest best epoch wins ties
                let improved = best.as_ref().map(|(_, b, _)| auc > *b).unwrap_or(true);
                if improved {
                    best = Some((epoch, auc, net.params.clone()));
                }
            }
        }
    }

    let (best_epoch, best_val_micro_auc, final_params) = match best {
        Some((e, a, p)) => (Some(e), Some(a), p),
        None => (None, None, net.params),
    };
    net = Network {
        spec: net.spec,
        params: final_params,
    };
    Ok(TrainOutcome {
        network: net,
        log,
        best_epoch,
        best_val_micro_auc,
        steps,
    })
}

/// Paired per-session encodings for the cascade head.
#[derive(Clone, Debug)]
pub struct EncodingPair {
    pub session_id: String,
    pub enc_t1: Vec<f32>,
    pub enc_fl: Vec<f32>,
    pub label: Label,
}

/// Join per-modality encoding lists by session. A session present on one
/// side only is an error naming that session.
pub fn pair_encodings(
    t1: &[(String, Vec<f32>, Label)],
    fl: &[(String, Vec<f32>, Label)],
) -> Result<Vec<EncodingPair>> {
    let mut fl_map: BTreeMap<&str, (&Vec<f32>, Label)> = BTreeMap::new();
    for (s, e, l) in fl {
        fl_map.insert(s.as_str(), (e, *l));
    }
    let mut pairs = Vec::with_capacity(t1.len());
    let mut seen = std::collections::BTreeSet::new();
    for (s, e, l) in t1 {
        let (fe, fll) = fl_map
            .get(s.as_str())
            .ok_or_else(|| Error::UnpairedSession(s.clone()))?;
        if *l != *fll {
            return Err(Error::MalformedRecord(format!(
                "session {s} labeled {} (t1) vs {} (flair)",
                l.as_str(),
                fll.as_str()
            )));
        }
        if e.len() != ENCODING_DIM || fe.len() != ENCODING_DIM {
            return Err(Error::shape_mismatch("encoding width", ENCODING_DIM, e.len()));
        }
        seen.insert(s.as_str());
        pairs.push(EncodingPair {
            session_id: s.clone(),
            enc_t1: e.clone(),
            enc_fl: (*fe).clone(),
            label: *l,
        });
    }
    if let Some((s, _, _)) = fl.iter().find(|(s, _, _)| !seen.contains(s.as_str())) {
        return Err(Error::UnpairedSession(s.clone()));
    }
    Ok(pairs)
}

fn encoding_batch(pairs: &[&EncodingPair]) -> Result<(Tensor, Tensor, Vec<usize>)> {
    let n = pairs.len();
    let mut t1 = Vec::with_capacity(n * ENCODING_DIM);
    let mut fl = Vec::with_capacity(n * ENCODING_DIM);
    let mut targets = Vec::with_capacity(n);
    for p in pairs {
        t1.extend_from_slice(&p.enc_t1);
        fl.extend_from_slice(&p.enc_fl);
        targets.push(p.label.index());
    }
    Ok((
        Tensor::new(vec![n, ENCODING_DIM], t1)?,
        Tensor::new(vec![n, ENCODING_DIM], fl)?,
        targets,
    ))
}

#[derive(Clone, Debug)]
pub struct CascadeOutcome {
    pub head: CascadeHead,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_val_micro_auc: Option<f64>,
    pub steps: usize,
}

/// Forward-only cascade-head evaluation, order-preserving.
pub fn evaluate_cascade(
    head: &CascadeHead,
    pairs: &[EncodingPair],
    batch_size: usize,
) -> Result<EvalResult> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("cascade evaluation set".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut labels = Vec::with_capacity(pairs.len());
    let mut loss = 0.0f64;
    let refs: Vec<&EncodingPair> = pairs.iter().collect();
    for chunk in refs.chunks(batch_size.max(1)) {
        let (t1, fl, targets) = encoding_batch(chunk)?;
        let probs = head.forward(&t1, &fl)?;
        for (i, &t) in targets.iter().enumerate() {
            let row = [
                probs.data()[i * 3] as f64,
                probs.data()[i * 3 + 1] as f64,
                probs.data()[i * 3 + 2] as f64,
            ];
            loss -= row[t].max(f64::MIN_POSITIVE).ln();
            rows.push(row);
            labels.push(t);
        }
    }
    loss /= pairs.len() as f64;
    summarize(&rows, &labels, loss)
}

/// Train the cascade head on frozen encodings. Only head parameters
/// change; the backbone encodings are inputs and never recomputed.
pub fn train_cascade(
    head: &CascadeHead,
    train_pairs: &[EncodingPair],
    val_pairs: &[EncodingPair],
    config: &TrainConfig,
) -> Result<CascadeOutcome> {
    config.validate()?;
    if train_pairs.is_empty() && config.epochs > 0 {
        return Err(Error::EmptyDataset("cascade training set with epochs > 0".into()));
    }
    let mut head = head.clone();
    let mut state = OptimizerState::new(&head.params);
    let mask = vec![true; head.params.len()];
    let mut log = Vec::new();
    let mut steps = 0usize;
    let mut best: Option<(usize, f64, Vec<Param>)> = None;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(sample_seed(config.seed, epoch, u32::MAX as usize));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0f64;
        let mut rows: Vec<[f64; 3]> = Vec::with_capacity(train_pairs.len());
        let mut labels: Vec<usize> = Vec::with_capacity(train_pairs.len());
        for chunk in order.chunks(config.batch_size) {
            let batch_refs: Vec<&EncodingPair> = chunk.iter().map(|&i| &train_pairs[i]).collect();
            let (t1, fl, targets) = encoding_batch(&batch_refs)?;
            let (mut tape, param_ids, logits) = head.forward_pass(&t1, &fl, true)?;
            let (loss_id, probs) = tape.softmax_cross_entropy(logits, &targets)?;
            epoch_loss += tape.value(loss_id).item() as f64 * chunk.len() as f64;
            for (i, &t) in targets.iter().enumerate() {
                rows.push([
                    probs.data()[i * 3] as f64,
                    probs.data()[i * 3 + 1] as f64,
                    probs.data()[i * 3 + 2] as f64,
                ]);
                labels.push(t);
            }
            tape.backward(loss_id)?;
            let grads: Vec<Option<&[f32]>> = param_ids.iter().map(|&id| tape.grad(id)).collect();
            sgd_momentum_step(
                &mut head.params,
                &grads,
                &mut state,
                config.learning_rate,
                config.momentum,
                &mask,
            )?;
            steps += 1;
        }
        epoch_loss /= train_pairs.len() as f64;
        let train_eval = summarize(&rows, &labels, epoch_loss)?;
        log.push(EpochLog {
            epoch,
            split: Split::Train,
            loss: epoch_loss,
            accuracy: train_eval.accuracy,
            micro_auc: auc_micro(&train_eval.predictions),
        });

        if !val_pairs.is_empty() {
            let val = evaluate_cascade(&head, val_pairs, config.batch_size)?;
            let val_auc = auc_micro(&val.predictions);
            log.push(EpochLog {
                epoch,
                split: Split::Validation,
                loss: val.loss,
                accuracy: val.accuracy,
                micro_auc: val_auc,
            });
            if let Some(auc) = val_auc {
                let improved = best.as_ref().map(|(_, b, _)| auc > *b).unwrap_or(true);
                if improved {
                    best = Some((epoch, auc, head.params.clone()));
                }
            }
        }
    }

    let (best_epoch, best_val_micro_auc, params) = match best {
        Some((e, a, p)) => (Some(e), Some(a), p),
        None => (None, None, head.params),
    };
    head = CascadeHead {
        mode: head.mode,
        params,
    };
    Ok(CascadeOutcome {
        head,
        log,
        best_epoch,
        best_val_micro_auc,
        steps,
    })
}

/// Training log CSV: epoch, split, loss, accuracy, micro_auc.
pub fn write_training_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "split", "loss", "accuracy", "micro_auc"])?;
    for r in log {
        w.write_record([
            r.epoch.to_string(),
            r.split.as_str().to_string(),
            format!("{:.6}", r.loss),
            format!("{:.6}", r.accuracy),
            r.micro_auc.map(|a| format!("{a:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
