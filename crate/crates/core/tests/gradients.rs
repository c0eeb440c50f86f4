use taskmod_core::gradcheck::finite_diff_check;
use taskmod_core::modulation::ModulationKind;
use taskmod_core::{build_network, insert_modules, ArchSpec, InsertionSpec, LayerSpec, Network, Stage, Tensor};

fn input(shape: Vec<usize>, seed: u64) -> Tensor {
    let n = shape.iter().product::<usize>();
    Tensor::new(
        shape,
        (0..n)
            .map(|i| ((i as u64 * 7919 + seed) as f64 * 0.113).sin())
            .collect(),
    )
    .unwrap()
}

fn weighted_sum(f: &[f64]) -> (f64, Vec<f64>) {
    let c: Vec<f64> = (0..f.len()).map(|i| 0.5 + (i as f64).cos()).collect();
    (f.iter().zip(&c).map(|(a, b)| a * b).sum(), c)
}

fn check(mut net: Network, input_shape: Vec<usize>, task: usize, tol: f64) {
    let x = input(input_shape, 3);
    let r = finite_diff_check(&mut net, &x, task, weighted_sum, 1e-6).unwrap();
    assert!(r.coordinates > 0);
    assert!(r.max_rel_error < tol, "{r:?}");
}

fn single(shape: Vec<usize>, layers: Vec<LayerSpec>) -> ArchSpec {
    ArchSpec {
        input_shape: shape,
        stages: vec![Stage::new("s", layers)],
    }
}

#[test]
fn conv_layer() {
    let arch = single(
        vec![6, 5, 2],
        vec![
            LayerSpec::Conv3x3 {
                in_channels: 2,
                out_channels: 3,
            },
            LayerSpec::FullyConnected { output_dim: 2 },
        ],
    );
    check(build_network(&arch, 1).unwrap(), vec![6, 5, 2], 0, 1e-7);
}

#[test]
fn pool_layer() {
    let arch = single(
        vec![6, 6, 2],
        vec![LayerSpec::PoolStride2, LayerSpec::FullyConnected { output_dim: 3 }],
    );
    check(build_network(&arch, 2).unwrap(), vec![6, 6, 2], 0, 1e-7);
}

#[test]
fn resnet_layer() {
    let arch = single(
        vec![5, 5, 3],
        vec![
            LayerSpec::ResnetBlock { channels: 3 },
            LayerSpec::FullyConnected { output_dim: 2 },
        ],
    );
    check(build_network(&arch, 3).unwrap(), vec![5, 5, 3], 0, 1e-4);
}

#[test]
fn relu_layer() {
    let arch = single(
        vec![4],
        vec![
            LayerSpec::FullyConnected { output_dim: 6 },
            LayerSpec::Relu,
            LayerSpec::FullyConnected { output_dim: 2 },
        ],
    );
    check(build_network(&arch, 4).unwrap(), vec![4], 0, 1e-6);
}

#[test]
fn linear_composition() {
    let arch = ArchSpec::mlp(5, &[], 4);
    let net = build_network(&arch, 5).unwrap();
    let mut net = insert_modules(net, &InsertionSpec::new("fc", ModulationKind::ProjectionMatrix), 2).unwrap();
    let x = input(vec![5], 1);
    let r = finite_diff_check(&mut net, &x, 1, weighted_sum, 1e-2).unwrap();
    assert!(r.max_rel_error < 1e-10, "{r:?}");
}

#[test]
fn desk_network_with_both_modulation_kinds() {
    let arch = ArchSpec::conv_stack([12, 12, 1], 3, &[4, 4], 5);
    for kind in [ModulationKind::ScalingVector, ModulationKind::ProjectionMatrix] {
        let mut net = insert_modules(build_network(&arch, 6).unwrap(), &InsertionSpec::new("block2", kind), 2).unwrap();
        for id in 0..net.params().len() {
            if net.param(id).name.starts_with("mod/") {
                for (k, v) in net.param_mut(id).tensor.values_mut().iter_mut().enumerate() {
                    *v += 0.05 * (k as f64 + id as f64).sin();
                }
            }
        }
        check(net, vec![12, 12, 1], 1, 1e-4);
    }
}
