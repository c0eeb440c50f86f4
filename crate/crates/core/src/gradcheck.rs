//! Central-difference gradient checking.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::network::Network;
use crate::tensor::Tensor;

/// `|a - n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / scale
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every
/// coordinate of `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    check_step(step)?;
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let up = f(&probe);
        probe[i] = orig - step;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                param: String::from("x"),
                index: i,
            });
        }
        out.push((up - down) / (2.0 * step));
    }
    Ok(out)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::Precondition(alloc::format!(
            "finite-difference step must be positive, got {step}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index with the largest error.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares the network's reverse-mode gradients with central differences
/// over every parameter coordinate. `loss` maps an embedding to its value
/// and its gradient with respect to the embedding.
pub fn finite_diff_check<L>(net: &mut Network, input: &Tensor, task: usize, loss: L, step: f64) -> Result<FdReport>
where
    L: Fn(&[f64]) -> (f64, Vec<f64>),
{
    check_step(step)?;
    net.zero_grads();
    let fwd = net.forward_task(input, task, true)?;
    let (_, dl) = loss(fwd.embedding.values());
    net.backward(&fwd, &dl)?;

    let mut report = FdReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    for id in 0..net.params().len() {
        let analytic: Vec<f64> = match net.param(id).tensor.grad() {
            Some(g) => g.to_vec(),
            None => alloc::vec![0.0; net.param(id).tensor.len()],
        };
        for (i, &a) in analytic.iter().enumerate() {
            let orig = net.param(id).tensor.values()[i];
            let eval = |v: f64, net: &mut Network| -> Result<f64> {
                net.param_mut(id).tensor.values_mut()[i] = v;
                let y = net.forward_task(input, task, false)?;
                Ok(loss(y.embedding.values()).0)
            };
            let up = eval(orig + step, net);
            let down = eval(orig - step, net);
            net.param_mut(id).tensor.values_mut()[i] = orig;
            let (up, down) = (up?, down?);
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    param: net.param(id).name.clone(),
                    index: i,
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(a, numeric);
            report.coordinates += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((net.param(id).name.clone(), i));
            }
        }
    }
    Ok(report)
}
