//! Parameter-sharing structures compared in the experiments.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::modulation::{insert_modules, InsertionSpec, ModulationKind};
use crate::network::{build_network, Forward, Network, ParamGroup};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Shared trunk with per-task modulation modules.
    Modulated,
    /// One network, no task-specific parameters.
    FullyShared,
    /// One full network per task.
    Independent,
    /// Shared trunk plus a per-task fully-connected branch of the given width.
    IndependentBranch(usize),
    /// Modulated network whose shared parameters are frozen.
    OnlyMask,
    /// Fixed non-overlapping 0/1 masks on the embedding, one block per task.
    CsnMask,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Modulated => f.write_str("modulated"),
            Variant::FullyShared => f.write_str("fully-shared"),
            Variant::Independent => f.write_str("independent"),
            Variant::IndependentBranch(k) => write!(f, "independent-branch({k})"),
            Variant::OnlyMask => f.write_str("only-mask"),
            Variant::CsnMask => f.write_str("csn-mask"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    /// Accepts the display names plus `ib-<k>` for independent branches.
    fn from_str(s: &str) -> Result<Self> {
        let branch = |k: &str| -> Result<Self> {
            k.parse::<usize>()
                .ok()
                .filter(|&k| k > 0)
                .map(Variant::IndependentBranch)
                .ok_or_else(|| Error::Config(format!("invalid branch width in variant {s:?}")))
        };
        match s {
            "modulated" => Ok(Variant::Modulated),
            "fully-shared" => Ok(Variant::FullyShared),
            "independent" => Ok(Variant::Independent),
            "only-mask" => Ok(Variant::OnlyMask),
            "csn-mask" => Ok(Variant::CsnMask),
            _ => {
                if let Some(k) = s.strip_prefix("independent-branch(").and_then(|r| r.strip_suffix(')')) {
                    branch(k)
                } else if let Some(k) = s.strip_prefix("ib-") {
                    branch(k)
                } else {
                    Err(Error::Config(format!("unknown variant {s:?}")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ParamCounts {
    pub shared: usize,
    pub task_specific: usize,
}

/// One or more networks plus the rule routing each task to one of them.
#[derive(Debug, Clone)]
pub struct TaskModel {
    variant: Variant,
    task_count: usize,
    nets: Vec<Network>,
}

impl TaskModel {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn task_count(&self) -> usize {
        self.task_count
    }

    pub fn nets(&self) -> &[Network] {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut [Network] {
        &mut self.nets
    }

    /// Network index and the task id to use inside that network.
    pub fn route(&self, task: usize) -> Result<(usize, usize)> {
        if task >= self.task_count {
            return Err(Error::Argument(format!(
                "task {task} out of range for {} tasks",
                self.task_count
            )));
        }
        Ok(match self.variant {
            Variant::Independent => (task, 0),
            _ => (0, task),
        })
    }

    pub fn forward(&self, input: &Tensor, task: usize, record: bool) -> Result<Forward> {
        let (n, local) = self.route(task)?;
        self.nets[n].forward_task(input, local, record)
    }

    pub fn embedding_dim(&self) -> usize {
        self.nets[0].embedding_dim()
    }

    /// Whether gradients on shared parameters can be compared across tasks.
    pub fn has_shared_trunk(&self) -> bool {
        self.variant != Variant::Independent
    }

    pub fn param_counts(&self) -> ParamCounts {
        match self.variant {
            Variant::Independent => ParamCounts {
                shared: 0,
                task_specific: self.nets.iter().map(|n| n.shared_param_count()).sum(),
            },
            _ => ParamCounts {
                shared: self.nets[0].shared_param_count(),
                task_specific: self.nets[0].task_param_count(),
            },
        }
    }

    fn prefix(&self, net: usize) -> String {
        match self.variant {
            Variant::Independent => format!("net{net}/"),
            _ => String::new(),
        }
    }

    /// Every parameter tensor under its checkpoint name, in registry order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, net) in self.nets.iter().enumerate() {
            let prefix = self.prefix(i);
            for p in net.params() {
                out.push((format!("{prefix}{}", p.name), &p.tensor));
            }
        }
        out
    }

    /// Named tensors restricted to shared (or task-specific) groups.
    pub fn named_params_in(&self, shared: bool) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, net) in self.nets.iter().enumerate() {
            let prefix = self.prefix(i);
            for p in net.params() {
                let is_shared = p.group == ParamGroup::Shared && self.variant != Variant::Independent;
                if is_shared == shared {
                    out.push((format!("{prefix}{}", p.name), &p.tensor));
                }
            }
        }
        out
    }

    /// Overwrites parameter values by name. With `require_all`, every
    /// parameter of the model must be present.
    pub fn load_named<'a, I>(&mut self, records: I, require_all: bool) -> Result<usize>
    where
        I: IntoIterator<Item = (&'a str, &'a Tensor)>,
    {
        let mut index: Vec<(String, usize, usize)> = Vec::new();
        for (i, net) in self.nets.iter().enumerate() {
            let prefix = self.prefix(i);
            for (id, p) in net.params().iter().enumerate() {
                index.push((format!("{prefix}{}", p.name), i, id));
            }
        }
        let mut loaded = vec![false; index.len()];
        let mut count = 0;
        for (name, tensor) in records {
            let Some(k) = index.iter().position(|(n, _, _)| n == name) else {
                if require_all {
                    return Err(Error::Config(format!("unexpected parameter {name:?}")));
                }
                continue;
            };
            let (_, net, id) = &index[k];
            let param = self.nets[*net].param_mut(*id);
            if param.tensor.shape() != tensor.shape() {
                return Err(Error::shape(param.tensor.shape(), tensor.shape()));
            }
            param.tensor.values_mut().copy_from_slice(tensor.values());
            loaded[k] = true;
            count += 1;
        }
        if require_all {
            if let Some(k) = loaded.iter().position(|l| !l) {
                return Err(Error::Config(format!("missing parameter {:?}", index[k].0)));
            }
        }
        Ok(count)
    }

    pub fn zero_grads(&mut self) {
        self.nets.iter_mut().for_each(Network::zero_grads);
    }
}

/// Builds the networks for `variant`. Modulation placement follows
/// `insertion` for the modulated and only-mask variants.
pub fn build_variant(
    arch: &ArchSpec,
    insertion: &InsertionSpec,
    variant: Variant,
    task_count: usize,
    seed: u64,
) -> Result<TaskModel> {
    if task_count == 0 {
        return Err(Error::Config("task count must be at least 1".to_string()));
    }
    let nets = match variant {
        Variant::FullyShared => vec![build_network(arch, seed)?],
        Variant::Modulated => vec![insert_modules(build_network(arch, seed)?, insertion, task_count)?],
        Variant::OnlyMask => {
            let mut net = insert_modules(build_network(arch, seed)?, insertion, task_count)?;
            net.set_shared_trainable(false);
            vec![net]
        }
        Variant::Independent => (0..task_count)
            .map(|t| build_network(arch, seed.wrapping_add(t as u64)))
            .collect::<Result<_>>()?,
        Variant::IndependentBranch(width) => {
            let mut net = build_network(arch, seed)?;
            net.add_task_heads(task_count, width, seed ^ 0x9e37_79b9_7f4a_7c15)?;
            vec![net]
        }
        Variant::CsnMask => {
            let dim = arch.embedding_dim()?;
            if dim < task_count {
                return Err(Error::Config(format!(
                    "csn-mask needs embedding_dim >= tasks ({dim} < {task_count})"
                )));
            }
            let last = arch.stages.last().map(|s| s.name.clone()).unwrap_or_default();
            let spec = InsertionSpec::new(last, ModulationKind::ScalingVector);
            let mut net = insert_modules(build_network(arch, seed)?, &spec, task_count)?;
            let ids = net.modulation().expect("inserted").points[0].per_task.clone();
            for (t, id) in ids.into_iter().enumerate() {
                let (lo, hi) = (t * dim / task_count, (t + 1) * dim / task_count);
                for (c, v) in net.param_mut(id).tensor.values_mut().iter_mut().enumerate() {
                    *v = if (lo..hi).contains(&c) { 1.0 } else { 0.0 };
                }
            }
            net.set_task_trainable(false);
            vec![net]
        }
    };
    Ok(TaskModel {
        variant,
        task_count,
        nets,
    })
}
