//! Balanced multi-task triplet training with Adagrad and UCR recording.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalSet};
use crate::losses::{l2_normalize, l2_normalize_backward, relevance_regularizer, triplet_loss, Margins};
use crate::modulation::{task_vector, InsertionSpec, ModulationKind};
use crate::optim::AdagradState;
use crate::synthetic::{Dataset, LabelIndex, Triplet, TripletBatch};
use crate::ucr::{record_task_gradients, LedgerMode, UcrLedger};
use crate::variant::{build_variant, TaskModel, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: ArchSpec,
    pub insertion: InsertionSpec,
    pub margins: Margins,
    /// Feed the losses unit-norm embeddings.
    pub normalize_embeddings: bool,
    pub batch_size: usize,
    pub epochs: usize,
    pub tasks: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub epsilon: f64,
    pub ucr_enabled: bool,
    pub ledger_mode: LedgerMode,
    pub variant: Variant,
    /// Held-out triplets per task used for the per-epoch accuracy log.
    pub eval_triplets_per_task: usize,
    /// Seeds the train/held-out split and the evaluation triplets, so every
    /// training seed sees the same split.
    pub eval_seed: u64,
    /// Triples `(i, j, k)` declaring task pair (i, j) more related than (i, k).
    pub relevance: Vec<[usize; 3]>,
}

impl TrainConfig {
    /// Desk-scale defaults around `arch` for `tasks` tasks.
    pub fn new(arch: ArchSpec, tasks: usize) -> Self {
        Self {
            arch,
            insertion: InsertionSpec::new("fc", ModulationKind::ScalingVector),
            margins: Margins::default(),
            normalize_embeddings: false,
            batch_size: 10 * tasks.max(1),
            epochs: 30,
            tasks,
            seed: 0,
            learning_rate: 0.01,
            epsilon: 1e-8,
            ucr_enabled: true,
            ledger_mode: LedgerMode::Lean,
            variant: Variant::Modulated,
            eval_triplets_per_task: 500,
            eval_seed: 1,
            relevance: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::Config("tasks must be at least 1".to_string()));
        }
        if self.batch_size == 0 || !self.batch_size.is_multiple_of(self.tasks) {
            return Err(Error::Config(format!(
                "batch_size {} is not a positive multiple of tasks {}",
                self.batch_size, self.tasks
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config(format!("invalid epsilon {}", self.epsilon)));
        }
        self.margins.validate()?;
        for r in &self.relevance {
            if r.iter().any(|&t| t >= self.tasks) {
                return Err(Error::Config(format!("relevance triple {r:?} names an unknown task")));
            }
        }
        if self.margins.lambda > 0.0 && !self.relevance.is_empty() {
            let modulated = matches!(self.variant, Variant::Modulated | Variant::OnlyMask);
            if !modulated || self.insertion.kind != ModulationKind::ScalingVector {
                return Err(Error::Config(
                    "the relevance regularizer needs scaling-vector modulation".to_string(),
                ));
            }
        }
        self.arch.resolve()?;
        Ok(())
    }
}

/// `batch_size / T` triplets per task drawn from `pool`, tasks in order.
pub fn balanced_batch(ds: &Dataset, pool: &[usize], cfg: &TrainConfig, seed: u64) -> Result<TripletBatch> {
    cfg.validate()?;
    let indices = label_indices(ds, pool, cfg.tasks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_batch(&indices, cfg.batch_size / cfg.tasks, &mut rng))
}

fn label_indices(ds: &Dataset, pool: &[usize], tasks: usize) -> Result<Vec<LabelIndex>> {
    if tasks > ds.task_count() {
        return Err(Error::Config(format!(
            "{tasks} tasks requested but the dataset has {} attributes",
            ds.task_count()
        )));
    }
    (0..tasks).map(|t| LabelIndex::new(ds, pool, t)).collect()
}

fn draw_batch(indices: &[LabelIndex], per_task: usize, rng: &mut ChaCha8Rng) -> TripletBatch {
    let mut entries = Vec::with_capacity(per_task * indices.len());
    for index in indices {
        entries.extend((0..per_task).map(|_| index.sample(rng)));
    }
    TripletBatch { entries }
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Global step count at the end of the epoch.
    pub step: usize,
    pub task: usize,
    /// Mean per-triplet training loss over the epoch.
    pub loss: f64,
    /// Held-out retrieval accuracy after the epoch.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TaskModel,
    pub metrics: Vec<EpochMetrics>,
    pub ledger: Option<UcrLedger>,
    /// Global step range covered by each epoch.
    pub epoch_batches: Vec<Range<usize>>,
}

impl TrainOutcome {
    /// Mean held-out accuracy per task after the last epoch.
    pub fn final_accuracy(&self) -> Vec<Option<f64>> {
        let last = self.epoch_batches.len();
        self.metrics
            .iter()
            .filter(|m| m.epoch == last)
            .map(|m| m.accuracy)
            .collect()
    }
}

/// Builds the model for `cfg`, splits `ds` and trains on the training part,
/// logging accuracy on triplets drawn from the held-out part.
pub fn train(cfg: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.tasks > ds.task_count() {
        return Err(Error::Config(format!(
            "{} tasks requested but the dataset has {} attributes",
            cfg.tasks,
            ds.task_count()
        )));
    }
    let model = build_variant(&cfg.arch, &cfg.insertion, cfg.variant, cfg.tasks, cfg.seed)?;
    let (train_pool, _) = ds.split(cfg.eval_seed);
    let eval = if cfg.eval_triplets_per_task > 0 {
        Some(EvalSet::held_out(
            ds,
            cfg.tasks,
            cfg.eval_triplets_per_task,
            cfg.eval_seed,
        )?)
    } else {
        None
    };
    train_model(model, cfg, ds, &train_pool, eval.as_ref(), &mut |_, _| Ok(()))
}

fn embed(
    model: &TaskModel,
    ds: &Dataset,
    sample: usize,
    task: usize,
    normalize: bool,
) -> Result<(crate::network::Forward, Vec<f64>)> {
    let fwd = model.forward(&ds.inputs[sample], task, true)?;
    let f = if normalize {
        l2_normalize(fwd.embedding.values())
    } else {
        fwd.embedding.values().to_vec()
    };
    Ok((fwd, f))
}

/// Forward and backward for one triplet; returns its loss. Gradients
/// accumulate into the model's registries.
fn triplet_step(model: &mut TaskModel, ds: &Dataset, t: &Triplet, cfg: &TrainConfig) -> Result<f64> {
    let norm = cfg.normalize_embeddings;
    let (fa, a) = embed(model, ds, t.anchor, t.task, norm)?;
    let (fp, p) = embed(model, ds, t.positive, t.task, norm)?;
    let (fn_, n) = embed(model, ds, t.negative, t.task, norm)?;
    let term = triplet_loss(&a, &p, &n, cfg.margins.alpha)?;
    if term.value == 0.0 {
        return Ok(0.0);
    }
    let (net, _) = model.route(t.task)?;
    let net = &mut model.nets_mut()[net];
    for (fwd, grad) in [(&fa, &term.grads[0]), (&fp, &term.grads[1]), (&fn_, &term.grads[2])] {
        let grad = if norm {
            l2_normalize_backward(fwd.embedding.values(), grad)
        } else {
            grad.clone()
        };
        net.backward(fwd, &grad)?;
    }
    Ok(term.value)
}

/// Adds `lambda` times the relevance-regularizer gradient to the task
/// modulation gradients; returns the weighted penalty.
fn relevance_step(model: &mut TaskModel, cfg: &TrainConfig) -> Result<f64> {
    if cfg.margins.lambda == 0.0 || cfg.relevance.is_empty() {
        return Ok(0.0);
    }
    let net = &mut model.nets_mut()[0];
    let vectors: Vec<Vec<f64>> = (0..cfg.tasks).map(|t| task_vector(net, t)).collect::<Result<_>>()?;
    let points = net.modulation().expect("validated").points.clone();
    let mut total = 0.0;
    for &[i, j, k] in &cfg.relevance {
        let term = relevance_regularizer(&vectors[i], &vectors[j], &vectors[k], cfg.margins.beta)?;
        if term.value == 0.0 {
            continue;
        }
        total += cfg.margins.lambda * term.value;
        for (task, grad) in [(i, &term.grads[0]), (j, &term.grads[1]), (k, &term.grads[2])] {
            let mut offset = 0;
            for point in &points {
                let g = net.param_mut(point.per_task[task]).tensor.grad_mut();
                for (dst, src) in g.iter_mut().zip(&grad[offset..]) {
                    *dst += cfg.margins.lambda * src;
                }
                offset += g.len();
            }
        }
    }
    Ok(total)
}

fn add_grads(model: &TaskModel, buffer: &mut [Vec<Vec<f64>>]) {
    for (net, bufs) in model.nets().iter().zip(buffer.iter_mut()) {
        for (p, buf) in net.params().iter().zip(bufs.iter_mut()) {
            if let Some(g) = p.tensor.grad() {
                buf.iter_mut().zip(g).for_each(|(b, g)| *b += g);
            }
        }
    }
}

fn zeroed_buffer(model: &TaskModel) -> Vec<Vec<Vec<f64>>> {
    model
        .nets()
        .iter()
        .map(|n| n.params().iter().map(|p| vec![0.0; p.tensor.len()]).collect())
        .collect()
}

/// Trains an already-built model. `on_epoch` runs once before the first
/// step with epoch 0 and after every epoch.
pub fn train_model(
    mut model: TaskModel,
    cfg: &TrainConfig,
    ds: &Dataset,
    train_pool: &[usize],
    eval: Option<&EvalSet>,
    on_epoch: &mut dyn FnMut(usize, &TaskModel) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if model.task_count() != cfg.tasks {
        return Err(Error::Config(format!(
            "model has {} tasks but the config asks for {}",
            model.task_count(),
            cfg.tasks
        )));
    }
    let indices = label_indices(ds, train_pool, cfg.tasks)?;
    let per_task = cfg.batch_size / cfg.tasks;
    let steps_per_epoch = (train_pool.len() / cfg.batch_size).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7472_6169_6e00_0000);
    let mut optimizers: Vec<AdagradState> = model
        .nets()
        .iter()
        .map(|_| AdagradState::new(cfg.learning_rate, cfg.epsilon))
        .collect();
    let mut ledger = (cfg.ucr_enabled && model.has_shared_trunk()).then(|| UcrLedger::new(cfg.tasks, cfg.ledger_mode));
    let mut metrics = Vec::new();
    let mut epoch_batches = Vec::with_capacity(cfg.epochs);
    on_epoch(0, &model)?;

    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = step;
        let mut loss_sums = vec![0.0; cfg.tasks];
        for _ in 0..steps_per_epoch {
            let batch = draw_batch(&indices, per_task, &mut rng);
            let mut buffer = zeroed_buffer(&model);
            let mut step_loss = 0.0;
            for (task, sum) in loss_sums.iter_mut().enumerate() {
                model.zero_grads();
                let mut task_loss = 0.0;
                for t in batch.for_task(task) {
                    task_loss += triplet_step(&mut model, ds, t, cfg)?;
                }
                if let Some(ledger) = ledger.as_mut() {
                    let (net, _) = model.route(task)?;
                    record_task_gradients(ledger, step, task, &model.nets()[net])?;
                }
                add_grads(&model, &mut buffer);
                *sum += task_loss;
                step_loss += task_loss;
            }
            model.zero_grads();
            step_loss += relevance_step(&mut model, cfg)?;
            add_grads(&model, &mut buffer);
            if !step_loss.is_finite() {
                return Err(Error::Divergence { step });
            }
            for ((net, bufs), opt) in model.nets_mut().iter_mut().zip(buffer).zip(optimizers.iter_mut()) {
                for (id, buf) in bufs.into_iter().enumerate() {
                    net.param_mut(id).tensor.set_grad(buf)?;
                }
                opt.step(net)?;
            }
            step += 1;
        }
        model.zero_grads();
        epoch_batches.push(start..step);
        let accuracy = match eval {
            Some(e) => evaluate(&model, ds, e)?.into_iter().map(Some).collect(),
            None => vec![None; cfg.tasks],
        };
        let triplets = (steps_per_epoch * per_task) as f64;
        for (task, acc) in accuracy.into_iter().enumerate() {
            metrics.push(EpochMetrics {
                epoch,
                step,
                task,
                loss: loss_sums[task] / triplets,
                accuracy: acc,
            });
        }
        on_epoch(epoch, &model)?;
    }
    Ok(TrainOutcome {
        model,
        metrics,
        ledger,
        epoch_batches,
    })
}
