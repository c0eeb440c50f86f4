//! Task-conditioned modulation modules.
//!
//! A module sits after a stage and transforms every pixel's channel vector
//! with a per-task weight: either a channel-wise scaling vector
//! (`x'[m,n,c] = x[m,n,c] * w[c]`) or a channel-wise projection matrix
//! (`x'[m,n,i] = sum_j x[m,n,j] * w[i,j]`). The feature map shape is
//! preserved, so modules can follow any stage. Freshly inserted modules
//! are the identity (all ones, or the identity matrix).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels;
use crate::network::{Network, ParamGroup, ParamId};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModulationKind {
    #[default]
    ScalingVector,
    ProjectionMatrix,
}

impl ModulationKind {
    /// Parameters one task needs at a point with `channels` channels.
    pub fn params_per_point(self, channels: usize) -> usize {
        match self {
            ModulationKind::ScalingVector => channels,
            ModulationKind::ProjectionMatrix => channels * channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModulationPoint {
    /// Index of the stage the module follows.
    pub stage: usize,
    pub name: String,
    pub channels: usize,
    /// One registry entry per task.
    pub per_task: Vec<ParamId>,
}

/// Per-task modulation weights at every insertion point. The tensors
/// themselves live in the owning network's parameter registry under
/// `mod/<stage>/<task>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModulationParams {
    pub kind: ModulationKind,
    pub task_count: usize,
    pub points: Vec<ModulationPoint>,
}

impl ModulationParams {
    pub(crate) fn point_at_stage(&self, stage: usize) -> Option<usize> {
        self.points.iter().position(|p| p.stage == stage)
    }

    /// Total number of task-specific modulation parameters.
    pub fn param_count(&self) -> usize {
        self.task_count
            * self
                .points
                .iter()
                .map(|p| self.kind.params_per_point(p.channels))
                .sum::<usize>()
    }
}

/// Where modules go: after `from_block` and every later stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InsertionSpec {
    pub from_block: String,
    pub kind: ModulationKind,
}

impl InsertionSpec {
    pub fn new(from_block: impl Into<String>, kind: ModulationKind) -> Self {
        Self {
            from_block: from_block.into(),
            kind,
        }
    }

    fn stage_name(&self) -> &str {
        match self.from_block.as_str() {
            "fc-only" => "fc",
            other => other,
        }
    }
}

fn channels_of(shape: &[usize]) -> usize {
    *shape.last().expect("non-empty shape")
}

pub fn apply_scaling(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let c = channels_of(x.shape());
    if w.len() != c {
        return Err(Error::len(c, w.len()));
    }
    Tensor::new(x.shape().to_vec(), kernels::scale_forward(c, x.values(), w.values()))
}

/// Gradients of [`apply_scaling`] with respect to `x` and `w`.
pub fn scaling_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = channels_of(x.shape());
    if w.len() != c {
        return Err(Error::len(c, w.len()));
    }
    if grad_out.shape() != x.shape() {
        return Err(Error::shape(x.shape(), grad_out.shape()));
    }
    let mut gw = vec![0.0; c];
    let gx = kernels::scale_backward(c, x.values(), w.values(), grad_out.values(), &mut gw);
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
    ))
}

/// `w` is a row-major C x C matrix (shape `[C, C]`).
pub fn apply_projection(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let c = channels_of(x.shape());
    if w.shape() != [c, c] {
        return Err(Error::shape(&[c, c], w.shape()));
    }
    Tensor::new(x.shape().to_vec(), kernels::project_forward(c, x.values(), w.values()))
}

pub fn projection_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let c = channels_of(x.shape());
    if w.shape() != [c, c] {
        return Err(Error::shape(&[c, c], w.shape()));
    }
    if grad_out.shape() != x.shape() {
        return Err(Error::shape(x.shape(), grad_out.shape()));
    }
    let mut gw = vec![0.0; c * c];
    let gx = kernels::project_backward(c, x.values(), w.values(), grad_out.values(), &mut gw);
    Ok((Tensor::new(x.shape().to_vec(), gx)?, Tensor::new(vec![c, c], gw)?))
}

/// Adds identity-initialized modules for `task_count` tasks after every
/// stage from `spec.from_block` through the final embedding layer.
/// Shared parameters are left untouched.
pub fn insert_modules(mut net: Network, spec: &InsertionSpec, task_count: usize) -> Result<Network> {
    if task_count == 0 {
        return Err(Error::Config("task_count must be at least 1".to_string()));
    }
    if net.modulation.is_some() {
        return Err(Error::Config("network already carries modulation modules".to_string()));
    }
    if let Some(n) = net.task_count() {
        if n != task_count {
            return Err(Error::Config(format!(
                "network is conditioned on {n} tasks, not {task_count}"
            )));
        }
    }
    let first = net.stage_index(spec.stage_name()).ok_or_else(|| {
        let known: Vec<&str> = net.stage_names().collect();
        Error::Config(format!(
            "unknown from_block {:?}; known blocks: {}",
            spec.from_block,
            known.join(", ")
        ))
    })?;
    let stage_count = net.stage_names().count();
    let mut points = Vec::with_capacity(stage_count - first);
    for stage in first..stage_count {
        let name: String = net.stage_names().nth(stage).expect("stage").to_string();
        let channels = channels_of(net.stage_output_shape(stage));
        let per_task = (0..task_count)
            .map(|t| {
                let tensor = identity_weight(spec.kind, channels);
                net.push_param(format!("mod/{name}/{t}"), ParamGroup::Task(t), tensor)
            })
            .collect();
        points.push(ModulationPoint {
            stage,
            name,
            channels,
            per_task,
        });
    }
    net.modulation = Some(ModulationParams {
        kind: spec.kind,
        task_count,
        points,
    });
    Ok(net)
}

fn identity_weight(kind: ModulationKind, c: usize) -> Tensor {
    match kind {
        ModulationKind::ScalingVector => Tensor::vector(vec![1.0; c]),
        ModulationKind::ProjectionMatrix => {
            let values = (0..c * c).map(|k| if k % (c + 1) == 0 { 1.0 } else { 0.0 }).collect();
            Tensor::new(vec![c, c], values).expect("square")
        }
    }
}

fn modulation_of(net: &Network) -> Result<&ModulationParams> {
    net.modulation()
        .ok_or_else(|| Error::Unsupported("network has no modulation modules".to_string()))
}

/// All of `task`'s modulation weights concatenated in point order.
pub fn task_vector(net: &Network, task: usize) -> Result<Vec<f64>> {
    let m = modulation_of(net)?;
    if task >= m.task_count {
        return Err(Error::Argument(format!(
            "task {task} out of range for {} tasks",
            m.task_count
        )));
    }
    Ok(m.points
        .iter()
        .flat_map(|p| net.param(p.per_task[task]).tensor.values().iter().copied())
        .collect())
}

/// Mean and population variance of `|W_i - W_j|` over every scaling weight.
pub fn task_distance(net: &Network, task_i: usize, task_j: usize) -> Result<(f64, f64)> {
    let m = modulation_of(net)?;
    if m.kind != ModulationKind::ScalingVector {
        return Err(Error::Unsupported(
            "task distance is defined for scaling-vector modules only".to_string(),
        ));
    }
    let a = task_vector(net, task_i)?;
    let b = task_vector(net, task_j)?;
    Ok(mean_variance_abs_diff(&a, &b))
}

pub(crate) fn mean_variance_abs_diff(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let mean = diffs.iter().sum::<f64>() / n;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::ArchSpec;
    use crate::network::build_network;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn scaling_examples() {
        let x = t(&[1, 1, 2], &[2.0, 3.0]);
        let cases: [(&[f64], &[f64]); 3] = [
            (&[1.0, 1.0], &[2.0, 3.0]),
            (&[0.5, 2.0], &[1.0, 6.0]),
            (&[0.0, 1.0], &[0.0, 3.0]),
        ];
        for (w, want) in cases {
            let y = apply_scaling(&x, &Tensor::vector(w.to_vec())).unwrap();
            assert_eq!(y.values(), want);
            assert_eq!(y.shape(), &[1, 1, 2]);
        }
    }

    #[test]
    fn scaling_length_mismatch() {
        let x = t(&[1, 1, 2], &[2.0, 3.0]);
        assert!(matches!(
            apply_scaling(&x, &Tensor::vector(vec![1.0; 3])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let x = t(&[1, 1, 2], &[2.0, 3.0]);
        let ident = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(apply_projection(&x, &ident).unwrap().values(), &[2.0, 3.0]);
        let ones = t(&[2, 2], &[1.0; 4]);
        assert_eq!(apply_projection(&x, &ones).unwrap().values(), &[5.0, 5.0]);
        let diag = t(&[2, 2], &[0.5, 0.0, 0.0, 2.0]);
        let scaled = apply_scaling(&x, &Tensor::vector(vec![0.5, 2.0])).unwrap();
        assert_eq!(apply_projection(&x, &diag).unwrap(), scaled);
        assert!(apply_projection(&x, &t(&[3, 3], &[0.0; 9])).is_err());
    }

    #[test]
    fn projection_mixes_channels_per_pixel() {
        // two pixels, two channels; row i of W produces output channel i
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = t(&[2, 2], &[1.0, 10.0, 100.0, 1000.0]);
        let y = apply_projection(&x, &w).unwrap();
        assert_eq!(y.values(), &[21.0, 2100.0, 43.0, 4300.0]);
    }

    #[test]
    fn scaling_backward_matches_chain_rule() {
        let x = t(&[2, 1, 2], &[2.0, -3.0, 0.5, 4.0]);
        let w = Tensor::vector(vec![2.0, -0.5]);
        let g = t(&[2, 1, 2], &[1.0, 2.0, -1.0, 3.0]);
        let (gx, gw) = scaling_backward(&x, &w, &g).unwrap();
        assert_eq!(gx.values(), &[2.0, -1.0, -2.0, -1.5]);
        assert_eq!(gw.values(), &[2.0 * 1.0 + -0.5, -3.0 * 2.0 + 4.0 * 3.0]);
    }

    fn desk_arch() -> ArchSpec {
        // channels (16, 16) after conv1, embedding 16
        ArchSpec::conv_stack([16, 16, 1], 4, &[16, 16], 16)
    }

    #[test]
    fn desk_accounting() {
        let net = build_network(&desk_arch(), 1).unwrap();
        let net = insert_modules(net, &InsertionSpec::new("block2", ModulationKind::ScalingVector), 7).unwrap();
        assert_eq!(net.task_param_count(), 7 * (16 + 16 + 16));
        assert_eq!(net.modulation().unwrap().param_count(), 336);
    }

    #[test]
    fn matrix_accounting() {
        let net = build_network(&desk_arch(), 1).unwrap();
        let net = insert_modules(net, &InsertionSpec::new("block3", ModulationKind::ProjectionMatrix), 3).unwrap();
        assert_eq!(net.task_param_count(), 3 * (256 + 256));
    }

    #[test]
    fn unknown_block_is_config_error() {
        let net = build_network(&desk_arch(), 1).unwrap();
        let err = insert_modules(net, &InsertionSpec::new("block9", ModulationKind::ScalingVector), 2).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn fc_only_alias() {
        let net = build_network(&desk_arch(), 1).unwrap();
        let net = insert_modules(net, &InsertionSpec::new("fc-only", ModulationKind::ScalingVector), 2).unwrap();
        let m = net.modulation().unwrap();
        assert_eq!(m.points.len(), 1);
        assert_eq!(m.points[0].name, "fc");
        assert_eq!(net.param(m.points[0].per_task[1]).name, "mod/fc/1");
    }

    #[test]
    fn task_out_of_range() {
        let net = build_network(&desk_arch(), 1).unwrap();
        let net = insert_modules(net, &InsertionSpec::new("fc", ModulationKind::ScalingVector), 2).unwrap();
        let x = Tensor::zeros(vec![16, 16, 1]);
        assert!(matches!(net.forward_task(&x, 2, false), Err(Error::Argument(_))));
        assert!(matches!(net.forward(&x, false), Err(Error::Argument(_))));
    }

    #[test]
    fn zero_final_weights_zero_embedding() {
        let net = build_network(&desk_arch(), 1).unwrap();
        let mut net = insert_modules(net, &InsertionSpec::new("fc", ModulationKind::ScalingVector), 2).unwrap();
        let id = net.modulation().unwrap().points[0].per_task[1];
        net.param_mut(id).tensor.values_mut().fill(0.0);
        let x = Tensor::new(vec![16, 16, 1], (0..256).map(|i| (i as f64 * 0.3).sin()).collect()).unwrap();
        let y1 = net.forward_task(&x, 1, false).unwrap();
        assert!(y1.embedding.values().iter().all(|&v| v == 0.0));
        let y0 = net.forward_task(&x, 0, false).unwrap();
        assert!(y0.embedding.values().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn distance_examples() {
        let arch = ArchSpec::mlp(3, &[], 2);
        let net = build_network(&arch, 1).unwrap();
        let mut net = insert_modules(net, &InsertionSpec::new("fc", ModulationKind::ScalingVector), 2).unwrap();
        assert_eq!(task_distance(&net, 0, 1).unwrap(), (0.0, 0.0));
        let id = net.modulation().unwrap().points[0].per_task[1];
        net.param_mut(id).tensor.values_mut().copy_from_slice(&[1.2, 1.4]);
        let (mean, var) = task_distance(&net, 0, 1).unwrap();
        assert!((mean - 0.3).abs() < 1e-12);
        assert!((var - 0.01).abs() < 1e-12);
    }

    #[test]
    fn distance_rejects_matrix_variant() {
        let net = build_network(&ArchSpec::mlp(3, &[], 2), 1).unwrap();
        let net = insert_modules(net, &InsertionSpec::new("fc", ModulationKind::ProjectionMatrix), 2).unwrap();
        assert!(matches!(task_distance(&net, 0, 1), Err(Error::Unsupported(_))));
    }
}
