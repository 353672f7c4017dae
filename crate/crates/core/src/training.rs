//! One-step supervised training: pair datasets, MSE, Adam, the minibatch
//! loop (with the one-block → four-block incremental schedule), and a
//! finite-difference gradient check.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{format_sig17, Vector};
use crate::net::{BiNNModel, ParamSet, Trainable};
use crate::rng::SeededRng;

/// Consecutive pairs `(x_n, x_{n+1})` sampled every `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDataset {
    inputs: Vec<Vector>,
    targets: Vec<Vector>,
    h: f64,
}

impl PairDataset {
    pub fn new(inputs: Vec<Vector>, targets: Vec<Vector>, h: f64) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::dim("pair dataset lengths", inputs.len(), targets.len()));
        }
        if inputs.is_empty() {
            return Err(Error::EmptyInput("pair dataset"));
        }
        let (di, dt) = (inputs[0].dim(), targets[0].dim());
        if inputs.iter().any(|v| v.dim() != di) || targets.iter().any(|v| v.dim() != dt) {
            return Err(Error::InvalidArgument("pair dataset has mixed dimensions".into()));
        }
        Ok(PairDataset { inputs, targets, h })
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn targets(&self) -> &[Vector] {
        &self.targets
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs[0].dim()
    }

    pub fn output_dim(&self) -> usize {
        self.targets[0].dim()
    }

    /// Splits off the last `fraction` of pairs (contiguous in time).
    pub fn split_tail(&self, fraction: f64) -> (PairDataset, Option<PairDataset>) {
        let n_val = (self.len() as f64 * fraction).floor() as usize;
        if n_val == 0 || n_val >= self.len() {
            return (self.clone(), None);
        }
        let cut = self.len() - n_val;
        let head = PairDataset {
            inputs: self.inputs[..cut].to_vec(),
            targets: self.targets[..cut].to_vec(),
            h: self.h,
        };
        let tail = PairDataset {
            inputs: self.inputs[cut..].to_vec(),
            targets: self.targets[cut..].to_vec(),
            h: self.h,
        };
        (head, Some(tail))
    }

    /// Concatenation of several datasets with the same step.
    pub fn concat(parts: &[PairDataset]) -> Result<PairDataset> {
        let first = parts.first().ok_or(Error::EmptyInput("pair dataset concat"))?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for p in parts {
            inputs.extend_from_slice(&p.inputs);
            targets.extend_from_slice(&p.targets);
        }
        PairDataset::new(inputs, targets, first.h)
    }
}

/// `N - 1` consecutive pairs from an `N`-state trajectory.
pub fn make_pairs(traj: &Trajectory) -> Result<PairDataset> {
    if traj.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two states to form pairs, got {}",
            traj.len()
        )));
    }
    let s = traj.states();
    PairDataset::new(s[..s.len() - 1].to_vec(), s[1..].to_vec(), traj.h())
}

/// Mean over the batch and the dimensions of the squared error.
pub fn mse_loss(pred: &[Vector], target: &[Vector]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::dim("mse_loss batch", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("mse_loss"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(target) {
        if p.dim() != t.dim() {
            return Err(Error::dim("mse_loss vector", t.dim(), p.dim()));
        }
        sum += p.iter().zip(t.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += p.dim();
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Train a one-block copy first, then continue with four blocks.
    pub incremental: bool,
    pub phase1_epochs: usize,
    pub shuffle: bool,
    /// Tail fraction of the pairs held out for best-epoch selection.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            epochs: 200,
            seed: 0,
            incremental: false,
            phase1_epochs: 20,
            shuffle: true,
            validation_fraction: 0.05,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.learning_rate,
            self.adam_beta1,
            self.adam_beta2,
            self.adam_eps,
        ];
        if rates.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::InvalidArgument("optimizer rates must be positive".into()));
        }
        if self.adam_beta1 >= 1.0 || self.adam_beta2 >= 1.0 {
            return Err(Error::InvalidArgument("Adam decay rates must be below 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument("validation_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new<P: ParamSet>(params: &P) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step.
pub fn adam_update<P: ParamSet>(params: &mut P, grads: &P, state: &mut AdamState, config: &TrainConfig) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let eps = config.adam_eps;
    let g_all = grads.tensors();
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g_all)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// Row index in the log; row 0 of each phase is the pre-training evaluation.
    pub epoch: usize,
    /// Depth of the residual network in this phase, 0 for other models.
    pub n_blocks: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Index of the first record of the four-block phase in incremental runs.
    pub phase2_start: Option<usize>,
    /// Record whose parameters were kept.
    pub best: usize,
}

impl TrainHistory {
    pub fn initial(&self) -> &EpochRecord {
        &self.records[0]
    }

    pub fn last(&self) -> &EpochRecord {
        self.records.last().expect("history is never empty")
    }

    pub fn best_record(&self) -> &EpochRecord {
        &self.records[self.best]
    }

    /// `epoch,train_mse,val_mse,seconds`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,train_mse,val_mse,seconds")?;
        for (row, r) in self.records.iter().enumerate() {
            writeln!(
                w,
                "{row},{},{},{:.3}",
                format_sig17(r.train_mse),
                format_sig17(r.val_mse),
                r.seconds
            )?;
        }
        Ok(())
    }
}

/// Scaled squared error of one sample; writes `dL/d(output)` (times `weight`)
/// into `g` when requested.
fn sample_loss(pred: &[f64], target: &[f64], scale: Option<&[f64]>, weight: f64, g: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    match g {
        Some(g) => {
            for j in 0..pred.len() {
                let inv = scale.map_or(1.0, |s| 1.0 / (s[j] * s[j]));
                let e = pred[j] - target[j];
                loss += e * e * inv;
                g[j] = 2.0 * weight * e * inv;
            }
        }
        None => {
            for j in 0..pred.len() {
                let inv = scale.map_or(1.0, |s| 1.0 / (s[j] * s[j]));
                let e = pred[j] - target[j];
                loss += e * e * inv;
            }
        }
    }
    loss
}

/// Mean scaled squared error over `idx`, accumulating its gradient into `grad`.
fn batch_loss<M: Trainable>(
    model: &M,
    tape: &mut M::Tape,
    data: &PairDataset,
    idx: &[usize],
    mut grad: Option<&mut M>,
    scratch: &mut (Vec<f64>, Vec<f64>),
) -> f64 {
    let d_out = model.output_dim();
    let weight = 1.0 / (idx.len() * d_out) as f64;
    let scale = model.loss_scale().map(<[f64]>::to_vec);
    let (g, dx) = scratch;
    let mut total = 0.0;
    for &i in idx {
        let pred = model.forward_tape(&data.inputs[i], tape);
        match grad.as_deref_mut() {
            Some(grad) => {
                total += sample_loss(pred, &data.targets[i], scale.as_deref(), weight, Some(g));
                model.backward_tape(tape, g, grad, dx);
            }
            None => total += sample_loss(pred, &data.targets[i], scale.as_deref(), weight, None),
        }
    }
    total * weight
}

/// Mean squared one-step error over a dataset, in the model's loss units
/// (standardized when the model carries normalization).
pub fn evaluate_mse<M: Trainable>(model: &M, data: &PairDataset) -> f64 {
    let mut tape = model.new_tape();
    let mut scratch = (vec![0.0; model.output_dim()], vec![0.0; model.input_dim()]);
    let idx: Vec<usize> = (0..data.len()).collect();
    batch_loss(model, &mut tape, data, &idx, None, &mut scratch)
}

/// Root mean squared one-step error in raw state units.
pub fn one_step_rmse<M: Trainable>(model: &M, data: &PairDataset) -> f64 {
    let mut tape = model.new_tape();
    let mut sum = 0.0;
    for (x, y) in data.inputs.iter().zip(&data.targets) {
        let p = model.forward_tape(x, &mut tape);
        sum += p.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    (sum / (data.len() * data.output_dim()) as f64).sqrt()
}

fn check_dims<M: Trainable>(model: &M, data: &PairDataset) -> Result<()> {
    if data.input_dim() != model.input_dim() {
        return Err(Error::dim("training inputs", model.input_dim(), data.input_dim()));
    }
    if data.output_dim() != model.output_dim() {
        return Err(Error::dim("training targets", model.output_dim(), data.output_dim()));
    }
    Ok(())
}

/// Minibatch Adam on the one-step loss. Keeps the parameters of the epoch
/// with the lowest validation error and returns them with the loss history.
pub fn train<M: Trainable>(model: M, data: &PairDataset, config: &TrainConfig) -> Result<(M, TrainHistory)> {
    let mut history = TrainHistory::default();
    let model = train_phase(model, data, config, config.epochs, "phase", 0, &mut history)?;
    Ok((model, history))
}

fn train_phase<M: Trainable>(
    mut model: M,
    data: &PairDataset,
    config: &TrainConfig,
    epochs: usize,
    label: &str,
    n_blocks: usize,
    history: &mut TrainHistory,
) -> Result<M> {
    config.validate()?;
    check_dims(&model, data)?;
    let (train_set, val_set) = data.split_tail(config.validation_fraction);
    let mut shuffle_rng = SeededRng::new(config.seed).derive(&format!("shuffle/{label}"));

    let started = Instant::now();
    let val_or_train = |m: &M| match &val_set {
        Some(v) => evaluate_mse(m, v),
        None => evaluate_mse(m, &train_set),
    };
    let first_row = history.records.len();
    let init_val = val_or_train(&model);
    history.records.push(EpochRecord {
        epoch: first_row,
        n_blocks,
        train_mse: evaluate_mse(&model, &train_set),
        val_mse: init_val,
        seconds: 0.0,
    });
    let mut best_val = init_val;
    let mut best_model = model.clone();
    history.best = first_row;

    let mut adam = AdamState::new(&model);
    let mut grad = model.zeroed();
    let mut tape = model.new_tape();
    let mut scratch = (vec![0.0; model.output_dim()], vec![0.0; model.input_dim()]);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=epochs {
        if config.shuffle {
            shuffle_rng.shuffle(&mut order);
        }
        let mut sq_sum = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grad.set_zero();
            let loss = batch_loss(&model, &mut tape, &train_set, batch, Some(&mut grad), &mut scratch);
            if !loss.is_finite() || !grad.all_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            sq_sum += loss * batch.len() as f64;
            adam_update(&mut model, &grad, &mut adam, config);
        }
        let train_mse = sq_sum / train_set.len() as f64;
        let val_mse = val_or_train(&model);
        if !val_mse.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        history.records.push(EpochRecord {
            epoch: history.records.len(),
            n_blocks,
            train_mse,
            val_mse,
            seconds: started.elapsed().as_secs_f64(),
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_model = model.clone();
            history.best = history.records.len() - 1;
        }
    }
    Ok(best_model)
}

/// Trains a bilinear residual network. With `config.incremental` and a
/// four-block model, a one-block copy is fitted first and its block seeds the
/// four-block phase.
pub fn train_binn(model: BiNNModel, data: &PairDataset, config: &TrainConfig) -> Result<(BiNNModel, TrainHistory)> {
    let tol = 1e-9 * model.dt.abs().max(data.h().abs());
    if (data.h() - model.dt).abs() > tol {
        return Err(Error::InvalidArgument(format!(
            "data step {} does not match model dt {}",
            data.h(),
            model.dt
        )));
    }
    let mut history = TrainHistory::default();
    if config.incremental && model.n_blocks == 4 {
        let euler = model.with_blocks(1)?;
        let euler = train_phase(euler, data, config, config.phase1_epochs, "phase1", 1, &mut history)?;
        history.phase2_start = Some(history.records.len());
        let rk = euler.with_blocks(4)?;
        let rk = train_phase(rk, data, config, config.epochs, "phase2", 4, &mut history)?;
        Ok((rk, history))
    } else {
        let n = model.n_blocks;
        let trained = train_phase(model, data, config, config.epochs, "phase", n, &mut history)?;
        Ok((trained, history))
    }
}

/// Denominator floor for relative gradient errors, so entries whose true
/// gradient vanishes are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;
pub const GRADCHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub n_params: usize,
}

/// Compares backpropagated gradients of the batch loss with central finite
/// differences, entry by entry. Relative error is
/// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn gradcheck_report<M: Trainable>(model: &M, sample: &PairDataset) -> Result<GradcheckReport> {
    check_dims(model, sample)?;
    let idx: Vec<usize> = (0..sample.len()).collect();
    let mut tape = model.new_tape();
    let mut scratch = (vec![0.0; model.output_dim()], vec![0.0; model.input_dim()]);
    let mut grad = model.zeroed();
    batch_loss(model, &mut tape, sample, &idx, Some(&mut grad), &mut scratch);
    let analytic = grad.flatten();

    let mut probe = model.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut flat = 0usize;
    let n_tensors = model.tensors().len();
    for t in 0..n_tensors {
        let len = model.tensors()[t].len();
        for e in 0..len {
            let orig = probe.tensors()[t][e];
            probe.tensors_mut()[t][e] = orig + GRADCHECK_STEP;
            let plus = batch_loss(&probe, &mut tape, sample, &idx, None, &mut scratch);
            probe.tensors_mut()[t][e] = orig - GRADCHECK_STEP;
            let minus = batch_loss(&probe, &mut tape, sample, &idx, None, &mut scratch);
            probe.tensors_mut()[t][e] = orig;
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            let a = analytic[flat];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
            flat += 1;
        }
    }
    Ok(GradcheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        n_params: flat,
    })
}
