//! Triplet retrieval accuracy and the multi-variant comparison harness.

use alloc::collections::btree_map::Entry;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::synthetic::{sample_triplets_from, Dataset, TripletBatch};
use crate::train::{train_model, TrainConfig};
use crate::ucr::UcrMatrix;
use crate::variant::{build_variant, ParamCounts, TaskModel, Variant};

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Fraction of triplets whose anchor is strictly closer to the positive
/// than to the negative. `embed` maps a sample index to its embedding and
/// is called once per distinct sample.
pub fn triplet_accuracy<F>(batch: &TripletBatch, mut embed: F) -> Result<f64>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    if batch.is_empty() {
        return Err(Error::Precondition("triplet set is empty".to_string()));
    }
    let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut hits = 0usize;
    for t in &batch.entries {
        for s in [t.anchor, t.positive, t.negative] {
            if let Entry::Vacant(slot) = cache.entry(s) {
                slot.insert(embed(s)?);
            }
        }
        let a = &cache[&t.anchor];
        if distance(a, &cache[&t.positive]) < distance(a, &cache[&t.negative]) {
            hits += 1;
        }
    }
    Ok(hits as f64 / batch.len() as f64)
}

/// Retrieval accuracy of `model` on `task`, embedding through that task's
/// route.
pub fn retrieval_accuracy(model: &TaskModel, ds: &Dataset, task: usize, triplets: &TripletBatch) -> Result<f64> {
    if let Some(t) = triplets.entries.iter().find(|t| t.task != task) {
        return Err(Error::Argument(format!(
            "triplet for task {} in a task {task} evaluation set",
            t.task
        )));
    }
    triplet_accuracy(triplets, |s| {
        Ok(model.forward(&ds.inputs[s], task, false)?.embedding.into_values())
    })
}

/// Frozen per-task evaluation triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub per_task: Vec<TripletBatch>,
}

impl EvalSet {
    /// `count` triplets per task drawn from `pool`; task `t` uses seed
    /// `seed + t`.
    pub fn sample(ds: &Dataset, pool: &[usize], tasks: usize, count: usize, seed: u64) -> Result<Self> {
        let per_task = (0..tasks)
            .map(|t| sample_triplets_from(ds, pool, t, count, seed.wrapping_add(t as u64)))
            .collect::<Result<_>>()?;
        Ok(Self { per_task })
    }

    /// Triplets drawn from the held-out part of `ds.split(seed)`.
    pub fn held_out(ds: &Dataset, tasks: usize, count: usize, seed: u64) -> Result<Self> {
        let (_, held) = ds.split(seed);
        Self::sample(ds, &held, tasks, count, seed)
    }

    pub fn task_count(&self) -> usize {
        self.per_task.len()
    }
}

/// Per-task accuracy of `model` on `eval`.
pub fn evaluate(model: &TaskModel, ds: &Dataset, eval: &EvalSet) -> Result<Vec<f64>> {
    if eval.task_count() > model.task_count() {
        return Err(Error::Argument(format!(
            "evaluation set has {} tasks but the model has {}",
            eval.task_count(),
            model.task_count()
        )));
    }
    eval.per_task
        .iter()
        .enumerate()
        .map(|(t, b)| retrieval_accuracy(model, ds, t, b))
        .collect()
}

/// Mean and sample standard deviation; the deviation is zero for one value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantSummary {
    pub variant: Variant,
    /// Distinguishes configs that share a variant, such as insertion sweeps.
    pub label: String,
    pub seeds: Vec<u64>,
    /// `per_seed[s][t]`: accuracy of seed `s` on task `t`.
    pub per_seed: Vec<Vec<f64>>,
    pub params: ParamCounts,
    /// Final-epoch UCR per seed; absent for variants without a shared trunk
    /// or with UCR disabled.
    pub ucr: Vec<UcrMatrix>,
}

impl VariantSummary {
    pub fn task_count(&self) -> usize {
        self.per_seed.first().map_or(0, Vec::len)
    }

    /// Mean and standard deviation across seeds for one task.
    pub fn task_accuracy(&self, task: usize) -> (f64, f64) {
        let v: Vec<f64> = self.per_seed.iter().map(|s| s[task]).collect();
        mean_sd(&v)
    }

    /// Mean over tasks, then mean and standard deviation across seeds.
    pub fn mean_accuracy(&self) -> (f64, f64) {
        let v: Vec<f64> = self
            .per_seed
            .iter()
            .map(|s| s.iter().sum::<f64>() / s.len() as f64)
            .collect();
        mean_sd(&v)
    }

    /// Seed-averaged final-epoch UCR for pair (i, j), over seeds where it is
    /// defined.
    pub fn pair_ucr(&self, i: usize, j: usize) -> Option<f64> {
        let v: Vec<f64> = self.ucr.iter().filter_map(|m| m.get(i, j)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Seed-averaged mean over all task pairs.
    pub fn mean_pair_ucr(&self) -> Option<f64> {
        let v: Vec<f64> = self.ucr.iter().filter_map(UcrMatrix::mean_pair).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub variants: Vec<VariantSummary>,
}

/// Trains every config once per seed (overriding its seed) and evaluates
/// all of them on the same `eval` triplets.
pub fn compare_variants(
    configs: &[(String, TrainConfig)],
    ds: &Dataset,
    seeds: &[u64],
    eval: &EvalSet,
) -> Result<RetrievalReport> {
    compare_variants_with(configs, ds, seeds, eval, &mut |_, _, model| Ok(model))
}

/// As [`compare_variants`], with `prepare` applied to each freshly built
/// model before training (for example to load pretrained shared weights).
pub fn compare_variants_with(
    configs: &[(String, TrainConfig)],
    ds: &Dataset,
    seeds: &[u64],
    eval: &EvalSet,
    prepare: &mut dyn FnMut(&str, &TrainConfig, TaskModel) -> Result<TaskModel>,
) -> Result<RetrievalReport> {
    if configs.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "comparison needs at least one config and one seed".to_string(),
        ));
    }
    let mut variants = Vec::with_capacity(configs.len());
    for (label, cfg) in configs {
        let wrap = |e: Error| Error::Variant {
            variant: label.clone(),
            source: alloc::boxed::Box::new(e),
        };
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut ucr = Vec::new();
        let mut params = ParamCounts::default();
        for &seed in seeds {
            let mut c = cfg.clone();
            c.seed = seed;
            c.eval_triplets_per_task = 0;
            let out = (|| {
                c.validate()?;
                let model = build_variant(&c.arch, &c.insertion, c.variant, c.tasks, c.seed)?;
                let model = prepare(label, &c, model)?;
                let (pool, _) = ds.split(c.eval_seed);
                train_model(model, &c, ds, &pool, None, &mut |_, _| Ok(()))
            })()
            .map_err(wrap)?;
            per_seed.push(evaluate(&out.model, ds, eval).map_err(wrap)?);
            params = out.model.param_counts();
            if let (Some(ledger), Some(last)) = (&out.ledger, out.epoch_batches.last()) {
                ucr.push(ledger.report(last.clone()).map_err(wrap)?);
            }
        }
        variants.push(VariantSummary {
            variant: cfg.variant,
            label: label.clone(),
            seeds: seeds.to_vec(),
            per_seed,
            params,
            ucr,
        });
    }
    Ok(RetrievalReport { variants })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_dataset, sample_triplets, AttributeSpec, InputKind, Triplet};
    use alloc::vec;

    fn ds() -> Dataset {
        generate_dataset(&AttributeSpec::independent(2, 100, InputKind::Vector { dim: 4 }, 7)).unwrap()
    }

    #[test]
    fn label_lookup_is_perfect() {
        let ds = ds();
        let b = sample_triplets(&ds, 0, 200, 1).unwrap();
        let acc = triplet_accuracy(&b, |s| Ok(vec![f64::from(ds.label(s, 0))])).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn constant_embedding_scores_zero() {
        let ds = ds();
        let b = sample_triplets(&ds, 1, 50, 1).unwrap();
        assert_eq!(triplet_accuracy(&b, |_| Ok(vec![0.5, 0.5])).unwrap(), 0.0);
    }

    #[test]
    fn empty_set_is_precondition_error() {
        let b = TripletBatch { entries: vec![] };
        assert!(matches!(
            triplet_accuracy(&b, |_| Ok(vec![0.0])),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn wrong_task_rejected() {
        let ds = ds();
        let cfg = TrainConfig::new(crate::arch::ArchSpec::mlp(4, &[], 2), 2);
        let model = crate::variant::build_variant(&cfg.arch, &cfg.insertion, cfg.variant, 2, 0).unwrap();
        let b = TripletBatch {
            entries: vec![Triplet {
                anchor: 0,
                positive: 1,
                negative: 2,
                task: 1,
            }],
        };
        assert!(matches!(
            retrieval_accuracy(&model, &ds, 0, &b),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn mean_sd_values() {
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - libm::sqrt(2.0)).abs() < 1e-15);
    }
}
