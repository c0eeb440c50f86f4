//! Parameter registry, seeded construction, taped forward pass and
//! reverse-mode backward pass.
//!
//! Differentiation works at layer granularity: a recorded forward pass keeps
//! whatever each layer needs (its input, its relu output or its pooling
//! argmax) and the backward pass walks the stages in reverse, accumulating
//! parameter gradients into the registry's grad buffers.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arch::{ArchSpec, LayerSpec};
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::modulation::{ModulationKind, ModulationParams};
use crate::tensor::Tensor;

pub type ParamId = usize;

/// Which gradient pool a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Updated by every task.
    Shared,
    /// Belongs to a single task (modulation weights, branch heads).
    Task(usize),
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub trainable: bool,
    pub tensor: Tensor,
}

#[derive(Debug, Clone)]
enum Layer {
    Conv {
        geom: ConvGeom,
        weight: ParamId,
        bias: ParamId,
    },
    Pool {
        h: usize,
        w: usize,
        c: usize,
    },
    Resnet {
        geom: ConvGeom,
        a: (ParamId, ParamId),
        b: (ParamId, ParamId),
    },
    Fc {
        weight: ParamId,
        bias: ParamId,
    },
    Relu,
}

#[derive(Debug, Clone)]
struct StageNet {
    name: String,
    layers: Vec<Layer>,
    out_shape: Vec<usize>,
}

/// Per-task fully-connected heads applied after the last stage.
#[derive(Debug, Clone)]
pub(crate) struct TaskHeads {
    pub out_dim: usize,
    pub weights: Vec<ParamId>,
    pub biases: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct Network {
    arch: ArchSpec,
    stages: Vec<StageNet>,
    params: Vec<Param>,
    pub(crate) modulation: Option<ModulationParams>,
    pub(crate) heads: Option<TaskHeads>,
}

#[derive(Debug, Clone)]
enum Cache {
    Conv(Vec<f64>),
    Pool(Vec<usize>, usize),
    Resnet { x: Vec<f64>, h: Vec<f64>, out: Vec<f64> },
    Fc(Vec<f64>),
    Relu(Vec<f64>),
}

#[derive(Debug, Clone)]
struct Tape {
    task: usize,
    stages: Vec<Vec<Cache>>,
    /// Input of the modulation applied after each stage, if any.
    modulated: Vec<Option<Vec<f64>>>,
    head_input: Option<Vec<f64>>,
}

/// Result of a forward pass; carries the tape when recording was requested.
#[derive(Debug, Clone)]
pub struct Forward {
    pub embedding: Tensor,
    tape: Option<Tape>,
}

impl Forward {
    pub fn is_recorded(&self) -> bool {
        self.tape.is_some()
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = libm::sqrt(3.0 / fan_in as f64);
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

/// Builds a network for `arch` with parameters drawn uniformly from
/// `[-sqrt(3/fan_in), sqrt(3/fan_in))`. The same seed gives bit-identical
/// parameters.
pub fn build_network(arch: &ArchSpec, seed: u64) -> Result<Network> {
    let shapes = arch.resolve()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Vec<Param> = Vec::new();
    let mut stages = Vec::with_capacity(arch.stages.len());

    let mut push = |params: &mut Vec<Param>, name: String, shape: Vec<usize>, fan_in: usize| {
        let n = shape.iter().product();
        let mut tensor = Tensor::new(shape, uniform_init(&mut rng, n, fan_in)).expect("shape");
        tensor.grad_mut();
        params.push(Param {
            name,
            group: ParamGroup::Shared,
            trainable: true,
            tensor,
        });
        params.len() - 1
    };

    for (s, stage) in arch.stages.iter().enumerate() {
        let mut layers = Vec::with_capacity(stage.layers.len());
        for (l, spec) in stage.layers.iter().enumerate() {
            let input = &shapes.layer_inputs[s][l];
            let prefix = format!("{}/{}", stage.name, l);
            let layer = match *spec {
                LayerSpec::Conv3x3 {
                    in_channels,
                    out_channels,
                } => {
                    let fan_in = 9 * in_channels;
                    let weight = push(
                        &mut params,
                        format!("{prefix}.weight"),
                        vec![3, 3, in_channels, out_channels],
                        fan_in,
                    );
                    let bias = push(&mut params, format!("{prefix}.bias"), vec![out_channels], fan_in);
                    Layer::Conv {
                        geom: ConvGeom {
                            h: input[0],
                            w: input[1],
                            cin: in_channels,
                            cout: out_channels,
                            pad: false,
                        },
                        weight,
                        bias,
                    }
                }
                LayerSpec::PoolStride2 => Layer::Pool {
                    h: input[0],
                    w: input[1],
                    c: input[2],
                },
                LayerSpec::ResnetBlock { channels } => {
                    let fan_in = 9 * channels;
                    let shape = vec![3, 3, channels, channels];
                    let aw = push(&mut params, format!("{prefix}.conv_a.weight"), shape.clone(), fan_in);
                    let ab = push(&mut params, format!("{prefix}.conv_a.bias"), vec![channels], fan_in);
                    let bw = push(&mut params, format!("{prefix}.conv_b.weight"), shape, fan_in);
                    let bb = push(&mut params, format!("{prefix}.conv_b.bias"), vec![channels], fan_in);
                    Layer::Resnet {
                        geom: ConvGeom {
                            h: input[0],
                            w: input[1],
                            cin: channels,
                            cout: channels,
                            pad: true,
                        },
                        a: (aw, ab),
                        b: (bw, bb),
                    }
                }
                LayerSpec::FullyConnected { output_dim } => {
                    let fan_in: usize = input.iter().product();
                    let weight = push(
                        &mut params,
                        format!("{prefix}.weight"),
                        vec![output_dim, fan_in],
                        fan_in,
                    );
                    let bias = push(&mut params, format!("{prefix}.bias"), vec![output_dim], fan_in);
                    Layer::Fc { weight, bias }
                }
                LayerSpec::Relu => Layer::Relu,
            };
            layers.push(layer);
        }
        stages.push(StageNet {
            name: stage.name.clone(),
            layers,
            out_shape: shapes.stage_outputs[s].clone(),
        });
    }

    Ok(Network {
        arch: arch.clone(),
        stages,
        params,
        modulation: None,
        heads: None,
    })
}

impl Network {
    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.arch.input_shape
    }

    pub fn stage_names(&self) -> impl Iterator<Item = &str> {
        self.stages.iter().map(|s| s.name.as_str())
    }

    pub fn stage_index(&self, name: &str) -> Option<usize> {
        self.stages.iter().position(|s| s.name == name)
    }

    pub fn stage_output_shape(&self, stage: usize) -> &[usize] {
        &self.stages[stage].out_shape
    }

    pub fn embedding_dim(&self) -> usize {
        match &self.heads {
            Some(h) => h.out_dim,
            None => self.stages.last().expect("non-empty").out_shape.iter().product(),
        }
    }

    /// Number of tasks the network is conditioned on, if any.
    pub fn task_count(&self) -> Option<usize> {
        self.modulation
            .as_ref()
            .map(|m| m.task_count)
            .or_else(|| self.heads.as_ref().map(|h| h.weights.len()))
    }

    pub fn modulation(&self) -> Option<&ModulationParams> {
        self.modulation.as_ref()
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name)
    }

    pub(crate) fn push_param(&mut self, name: String, group: ParamGroup, mut tensor: Tensor) -> ParamId {
        tensor.grad_mut();
        self.params.push(Param {
            name,
            group,
            trainable: true,
            tensor,
        });
        self.params.len() - 1
    }

    pub fn shared_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.group == ParamGroup::Shared)
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn task_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| matches!(p.group, ParamGroup::Task(_)))
            .map(|p| p.tensor.len())
            .sum()
    }

    pub fn set_shared_trainable(&mut self, trainable: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == ParamGroup::Shared) {
            p.trainable = trainable;
        }
    }

    pub fn set_task_trainable(&mut self, trainable: bool) {
        for p in self
            .params
            .iter_mut()
            .filter(|p| matches!(p.group, ParamGroup::Task(_)))
        {
            p.trainable = trainable;
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Concatenated gradients of every shared parameter, in registry order.
    pub fn shared_grad_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.shared_param_count());
        for p in self.params.iter().filter(|p| p.group == ParamGroup::Shared) {
            match p.tensor.grad() {
                Some(g) => out.extend_from_slice(g),
                None => out.extend(core::iter::repeat_n(0.0, p.tensor.len())),
            }
        }
        out
    }

    /// Attaches one fully-connected head per task after the last stage.
    pub(crate) fn add_task_heads(&mut self, task_count: usize, out_dim: usize, seed: u64) -> Result<()> {
        if self.heads.is_some() {
            return Err(Error::Config("network already has task heads".to_string()));
        }
        if task_count == 0 || out_dim == 0 {
            return Err(Error::Config(
                "task heads need positive task count and width".to_string(),
            ));
        }
        let in_dim: usize = self.stages.last().expect("non-empty").out_shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(task_count);
        let mut biases = Vec::with_capacity(task_count);
        for t in 0..task_count {
            let w = Tensor::new(vec![out_dim, in_dim], uniform_init(&mut rng, out_dim * in_dim, in_dim))?;
            let b = Tensor::new(vec![out_dim], uniform_init(&mut rng, out_dim, in_dim))?;
            weights.push(self.push_param(format!("head/{t}/weight"), ParamGroup::Task(t), w));
            biases.push(self.push_param(format!("head/{t}/bias"), ParamGroup::Task(t), b));
        }
        self.heads = Some(TaskHeads {
            out_dim,
            weights,
            biases,
        });
        Ok(())
    }

    fn check_task(&self, task: usize) -> Result<()> {
        match self.task_count() {
            Some(n) if task >= n => Err(Error::Argument(format!("task {task} out of range for {n} tasks"))),
            _ => Ok(()),
        }
    }

    /// Forward pass for networks without task-specific parameters.
    pub fn forward(&self, input: &Tensor, record: bool) -> Result<Forward> {
        if let Some(n) = self.task_count() {
            return Err(Error::Argument(format!(
                "network is conditioned on {n} tasks; use forward_task"
            )));
        }
        self.run(input, 0, record)
    }

    /// Forward pass routed through `task`'s modulation weights and head.
    pub fn forward_task(&self, input: &Tensor, task: usize, record: bool) -> Result<Forward> {
        self.check_task(task)?;
        self.run(input, task, record)
    }

    fn run(&self, input: &Tensor, task: usize, record: bool) -> Result<Forward> {
        if input.shape() != self.input_shape() {
            return Err(Error::shape(self.input_shape(), input.shape()));
        }
        let mut x = input.values().to_vec();
        let mut stage_caches = Vec::with_capacity(if record { self.stages.len() } else { 0 });
        let mut modulated = Vec::with_capacity(if record { self.stages.len() } else { 0 });

        for (s, stage) in self.stages.iter().enumerate() {
            let mut caches = Vec::new();
            for layer in &stage.layers {
                x = self.layer_forward(layer, x, record.then_some(&mut caches));
            }
            let point = self.modulation.as_ref().and_then(|m| m.point_at_stage(s));
            let mod_input = match point {
                Some(p) => {
                    let m = self.modulation.as_ref().expect("point");
                    let id = m.points[p].per_task[task];
                    let w = self.params[id].tensor.values();
                    let c = m.points[p].channels;
                    let out = match m.kind {
                        ModulationKind::ScalingVector => kernels::scale_forward(c, &x, w),
                        ModulationKind::ProjectionMatrix => kernels::project_forward(c, &x, w),
                    };
                    Some(core::mem::replace(&mut x, out))
                }
                None => None,
            };
            if record {
                stage_caches.push(caches);
                modulated.push(mod_input);
            }
        }

        let mut head_input = None;
        if let Some(h) = &self.heads {
            let out = kernels::fc_forward(
                &x,
                self.params[h.weights[task]].tensor.values(),
                self.params[h.biases[task]].tensor.values(),
            );
            head_input = Some(core::mem::replace(&mut x, out));
        }

        let embedding = Tensor::vector(x);
        let tape = record.then(|| Tape {
            task,
            stages: stage_caches,
            modulated,
            head_input: head_input.filter(|_| record),
        });
        Ok(Forward { embedding, tape })
    }

    fn layer_forward(&self, layer: &Layer, x: Vec<f64>, cache: Option<&mut Vec<Cache>>) -> Vec<f64> {
        let p = |id: ParamId| self.params[id].tensor.values();
        match *layer {
            Layer::Conv { geom, weight, bias } => {
                let out = kernels::conv3x3_forward(geom, &x, p(weight), p(bias));
                if let Some(c) = cache {
                    c.push(Cache::Conv(x));
                }
                out
            }
            Layer::Pool { h, w, c } => {
                let (out, arg) = kernels::maxpool_forward(h, w, c, &x);
                if let Some(cache) = cache {
                    cache.push(Cache::Pool(arg, x.len()));
                }
                out
            }
            Layer::Resnet { geom, a, b } => {
                let h = kernels::relu_forward(&kernels::conv3x3_forward(geom, &x, p(a.0), p(a.1)));
                let mut sum = kernels::conv3x3_forward(geom, &h, p(b.0), p(b.1));
                for (s, xv) in sum.iter_mut().zip(&x) {
                    *s += xv;
                }
                let out = kernels::relu_forward(&sum);
                if let Some(c) = cache {
                    c.push(Cache::Resnet { x, h, out: out.clone() });
                }
                out
            }
            Layer::Fc { weight, bias } => {
                let out = kernels::fc_forward(&x, p(weight), p(bias));
                if let Some(c) = cache {
                    c.push(Cache::Fc(x));
                }
                out
            }
            Layer::Relu => {
                let out = kernels::relu_forward(&x);
                if let Some(c) = cache {
                    c.push(Cache::Relu(out.clone()));
                }
                out
            }
        }
    }

    fn weight_and_grads(&mut self, w: ParamId, b: ParamId) -> (&[f64], &mut [f64], &mut [f64]) {
        let [pw, pb] = self.params.get_disjoint_mut([w, b]).expect("distinct params");
        let (wv, wg) = pw.tensor.values_and_grad_mut();
        let (_, bg) = pb.tensor.values_and_grad_mut();
        (wv, wg, bg)
    }

    /// Reverse pass over a recorded forward. Parameter gradients accumulate
    /// into the registry; the gradient with respect to the input is
    /// returned as a tensor of the input's shape.
    pub fn backward(&mut self, fwd: &Forward, loss_grad: &[f64]) -> Result<Tensor> {
        let tape = fwd
            .tape
            .as_ref()
            .ok_or_else(|| Error::State("backward requires a recorded forward pass".to_string()))?;
        if loss_grad.len() != self.embedding_dim() {
            return Err(Error::len(self.embedding_dim(), loss_grad.len()));
        }
        if tape.stages.len() != self.stages.len() {
            return Err(Error::State("tape does not match this network".to_string()));
        }
        let task = tape.task;
        let mut g = loss_grad.to_vec();

        if let Some(h) = self.heads.clone() {
            let input = tape
                .head_input
                .as_ref()
                .ok_or_else(|| Error::State("tape lacks head input".to_string()))?;
            let (wv, wg, bg) = self.weight_and_grads(h.weights[task], h.biases[task]);
            g = kernels::fc_backward(input, wv, &g, wg, bg);
        }

        for s in (0..self.stages.len()).rev() {
            if let Some(x) = &tape.modulated[s] {
                let m = self.modulation.as_ref().expect("modulated stage");
                let p = m.point_at_stage(s).expect("point");
                let (c, kind, id) = (m.points[p].channels, m.kind, m.points[p].per_task[task]);
                let (wv, wg) = self.params[id].tensor.values_and_grad_mut();
                g = match kind {
                    ModulationKind::ScalingVector => kernels::scale_backward(c, x, wv, &g, wg),
                    ModulationKind::ProjectionMatrix => kernels::project_backward(c, x, wv, &g, wg),
                };
            }
            for l in (0..self.stages[s].layers.len()).rev() {
                let layer = self.stages[s].layers[l].clone();
                g = self.layer_backward(&layer, &tape.stages[s][l], g);
            }
        }

        Tensor::new(self.input_shape().to_vec(), g)
    }

    fn layer_backward(&mut self, layer: &Layer, cache: &Cache, g: Vec<f64>) -> Vec<f64> {
        match (layer, cache) {
            (&Layer::Conv { geom, weight, bias }, Cache::Conv(x)) => {
                let (wv, wg, bg) = self.weight_and_grads(weight, bias);
                kernels::conv3x3_backward(geom, x, wv, &g, wg, bg)
            }
            (Layer::Pool { .. }, Cache::Pool(arg, n)) => kernels::maxpool_backward(*n, arg, &g),
            (&Layer::Resnet { geom, a, b }, Cache::Resnet { x, h, out }) => {
                let g_sum = kernels::relu_backward(out, &g);
                let g_h = {
                    let (wv, wg, bg) = self.weight_and_grads(b.0, b.1);
                    kernels::conv3x3_backward(geom, h, wv, &g_sum, wg, bg)
                };
                let g_a = kernels::relu_backward(h, &g_h);
                let mut g_x = {
                    let (wv, wg, bg) = self.weight_and_grads(a.0, a.1);
                    kernels::conv3x3_backward(geom, x, wv, &g_a, wg, bg)
                };
                for (gx, gs) in g_x.iter_mut().zip(&g_sum) {
                    *gx += gs;
                }
                g_x
            }
            (&Layer::Fc { weight, bias }, Cache::Fc(x)) => {
                let (wv, wg, bg) = self.weight_and_grads(weight, bias);
                kernels::fc_backward(x, wv, &g, wg, bg)
            }
            (Layer::Relu, Cache::Relu(out)) => kernels::relu_backward(out, &g),
            _ => unreachable!("tape entry does not match layer"),
        }
    }
}
