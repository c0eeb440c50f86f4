//! Update Compliance Ratio: how often two tasks' shared-parameter gradients
//! point into the same half-space within a window of mini-batches.
//!
//! For every mini-batch and every pair of tasks that both contributed
//! gradients, the ledger stores `sign(<g_t, g_t'>)` with `sign(0) = +1`.
//! The UCR of a pair over a batch range is the fraction of co-recorded
//! batches with a positive sign.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::ops::Range;

use crate::error::{Error, Result};
use crate::network::Network;

/// `+1` when `<a, b> >= 0`, `-1` otherwise.
pub fn compliance_sign(a: &[f64], b: &[f64]) -> Result<i8> {
    if a.len() != b.len() {
        return Err(Error::len(a.len(), b.len()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(if dot >= 0.0 { 1 } else { -1 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LedgerMode {
    /// Keep every recorded gradient vector.
    Full,
    /// Keep only the current batch's vectors and the pairwise signs.
    #[default]
    Lean,
}

#[derive(Debug, Clone, Default)]
struct BatchRecord {
    grads: BTreeMap<usize, Vec<f64>>,
    signs: BTreeMap<(usize, usize), i8>,
}

#[derive(Debug, Clone)]
pub struct UcrLedger {
    task_count: usize,
    mode: LedgerMode,
    dim: Option<usize>,
    batches: BTreeMap<usize, BatchRecord>,
    latest: Option<usize>,
}

/// Symmetric T x T matrix of ratios. Pairs that never shared a batch in
/// the window have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct UcrMatrix {
    task_count: usize,
    values: Vec<Option<f64>>,
}

impl UcrMatrix {
    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.values[i * self.task_count + j]
    }

    /// Mean over unordered off-diagonal pairs that have an entry.
    pub fn mean_pair(&self) -> Option<f64> {
        let vals: Vec<f64> = self.pairs().filter_map(|(_, _, v)| v).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// `(i, j, ucr)` for every `i < j`.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, Option<f64>)> + '_ {
        let n = self.task_count;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.get(i, j))))
    }
}

impl UcrLedger {
    pub fn new(task_count: usize, mode: LedgerMode) -> Self {
        Self {
            task_count,
            mode,
            dim: None,
            batches: BTreeMap::new(),
            latest: None,
        }
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn mode(&self) -> LedgerMode {
        self.mode
    }

    /// Shared-parameter dimension fixed by the first record.
    pub fn dim(&self) -> Option<usize> {
        self.dim
    }

    pub fn batch_count(&self) -> usize {
        self.batches.len()
    }

    /// Stored gradient of `task` in `batch`, if the ledger still holds it.
    pub fn gradient(&self, batch: usize, task: usize) -> Option<&[f64]> {
        self.batches.get(&batch)?.grads.get(&task).map(Vec::as_slice)
    }

    pub fn record(&mut self, batch: usize, task: usize, grad: Vec<f64>) -> Result<()> {
        if task >= self.task_count {
            return Err(Error::Argument(format!(
                "task {task} out of range for {} tasks",
                self.task_count
            )));
        }
        match self.dim {
            Some(d) if d != grad.len() => return Err(Error::len(d, grad.len())),
            _ => self.dim = Some(grad.len()),
        }
        if self.mode == LedgerMode::Lean {
            if let Some(latest) = self.latest {
                if batch < latest {
                    return Err(Error::State(format!(
                        "batch {batch} recorded after batch {latest} in lean mode"
                    )));
                }
                if batch > latest {
                    if let Some(prev) = self.batches.get_mut(&latest) {
                        prev.grads.clear();
                    }
                }
            }
        }
        let record = self.batches.entry(batch).or_default();
        if record.grads.contains_key(&task) || record.signs.keys().any(|&(a, b)| a == task || b == task) {
            return Err(Error::State(format!(
                "gradient for task {task} in batch {batch} already recorded"
            )));
        }
        for (&other, g) in &record.grads {
            let sign = compliance_sign(g, &grad)?;
            record.signs.insert((other.min(task), other.max(task)), sign);
        }
        record.grads.insert(task, grad);
        self.latest = Some(self.latest.map_or(batch, |l| l.max(batch)));
        Ok(())
    }

    /// Signs of pair `(t, t2)` over every batch in which both were recorded,
    /// in batch order.
    pub fn history(&self, t: usize, t2: usize) -> Vec<i8> {
        let key = (t.min(t2), t.max(t2));
        self.batches
            .values()
            .filter_map(|b| b.signs.get(&key).copied())
            .collect()
    }

    /// UCR matrix over the batches whose index falls in `range`. In full
    /// mode signs are recomputed from the stored vectors.
    pub fn report(&self, range: Range<usize>) -> Result<UcrMatrix> {
        let batches: Vec<&BatchRecord> = self.batches.range(range.clone()).map(|(_, b)| b).collect();
        if batches.is_empty() {
            return Err(Error::Precondition(format!(
                "no recorded batches in range {}..{}",
                range.start, range.end
            )));
        }
        let n = self.task_count;
        let mut values = alloc::vec![None; n * n];
        for i in 0..n {
            values[i * n + i] = Some(1.0);
            for j in i + 1..n {
                let mut positive = 0usize;
                let mut total = 0usize;
                for b in &batches {
                    let sign = match self.mode {
                        LedgerMode::Full => match (b.grads.get(&i), b.grads.get(&j)) {
                            (Some(gi), Some(gj)) => Some(compliance_sign(gi, gj)?),
                            _ => None,
                        },
                        LedgerMode::Lean => b.signs.get(&(i, j)).copied(),
                    };
                    if let Some(s) = sign {
                        total += 1;
                        positive += usize::from(s > 0);
                    }
                }
                if total > 0 {
                    let r = positive as f64 / total as f64;
                    values[i * n + j] = Some(r);
                    values[j * n + i] = Some(r);
                }
            }
        }
        Ok(UcrMatrix { task_count: n, values })
    }
}

/// Stores the network's current shared-parameter gradients for `task` in
/// `batch`. Task-specific groups are excluded.
pub fn record_task_gradients(ledger: &mut UcrLedger, batch: usize, task: usize, net: &Network) -> Result<()> {
    if net.shared_param_count() == 0 {
        return Err(Error::Unsupported("network has no shared parameters".to_string()));
    }
    ledger.record(batch, task, net.shared_grad_flat())
}
