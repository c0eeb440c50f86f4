use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use taskmod_core::eval::{evaluate, triplet_accuracy, EvalSet};
use taskmod_core::modulation::ModulationKind;
use taskmod_core::synthetic::expected_agreement;
use taskmod_core::{
    build_network, build_variant, generate_dataset, insert_modules, sample_triplets, ArchSpec, AttributeSpec,
    InputKind, InsertionSpec, Network, Tensor, Variant,
};

fn arch() -> ArchSpec {
    ArchSpec::conv_stack([12, 12, 1], 3, &[4, 4], 6)
}

fn image(seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = (0..144).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(vec![12, 12, 1], v).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn loss_grad(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn run(net: &mut Network, x: &Tensor, task: Option<usize>, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    net.zero_grads();
    let fwd = match task {
        Some(t) => net.forward_task(x, t, true).unwrap(),
        None => net.forward(x, true).unwrap(),
    };
    net.backward(&fwd, g).unwrap();
    (fwd.embedding.values().to_vec(), net.shared_grad_flat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fresh_modules_are_neutral(
        seed in 0u64..1000,
        from in prop::sample::select(vec!["conv1", "block2", "block3", "fc"]),
        matrix in any::<bool>(),
        task in 0usize..3,
    ) {
        let kind = if matrix { ModulationKind::ProjectionMatrix } else { ModulationKind::ScalingVector };
        let mut plain = build_network(&arch(), seed).unwrap();
        let mut modded = insert_modules(plain.clone(), &InsertionSpec::new(from, kind), 3).unwrap();
        let x = image(seed);
        let g = loss_grad(seed, 6);
        let (f0, g0) = run(&mut plain, &x, None, &g);
        let (f1, g1) = run(&mut modded, &x, Some(task), &g);
        prop_assert_eq!(bits(&f0), bits(&f1));
        prop_assert_eq!(bits(&g0), bits(&g1));
    }

    #[test]
    fn diagonal_projection_equals_scaling(seed in 0u64..1000, task in 0usize..2) {
        let base = build_network(&arch(), seed).unwrap();
        let spec = |k| InsertionSpec::new("block3", k);
        let mut scale = insert_modules(base.clone(), &spec(ModulationKind::ScalingVector), 2).unwrap();
        let mut proj = insert_modules(base, &spec(ModulationKind::ProjectionMatrix), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for id in 0..scale.params().len() {
            let name = scale.param(id).name.clone();
            if !name.starts_with("mod/") {
                continue;
            }
            let c = scale.param(id).tensor.len();
            let v: Vec<f64> = (0..c).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 0.5 + 0.3 * z }).collect();
            scale.param_mut(id).tensor.values_mut().copy_from_slice(&v);
            let pid = proj.param_id(&name).unwrap();
            let m = proj.param_mut(pid).tensor.values_mut();
            for i in 0..c {
                m[i * c + i] = v[i];
            }
        }
        let x = image(seed + 1);
        let g = loss_grad(seed, 6);
        let (fs, gs) = run(&mut scale, &x, Some(task), &g);
        let (fp, gp) = run(&mut proj, &x, Some(task), &g);
        prop_assert_eq!(bits(&fs), bits(&fp));
        prop_assert_eq!(bits(&gs), bits(&gp));
        for id in 0..scale.params().len() {
            let name = &scale.param(id).name;
            if !name.starts_with("mod/") {
                continue;
            }
            let sg = scale.param(id).tensor.grad().unwrap();
            let pg = proj.param(proj.param_id(name).unwrap()).tensor.grad().unwrap();
            let c = sg.len();
            for i in 0..c {
                prop_assert_eq!(sg[i].to_bits(), pg[i * c + i].to_bits());
            }
        }
    }

    #[test]
    fn loss_gradient_scales_parameter_gradients(seed in 0u64..1000, k in -3i32..4) {
        let mut net = build_network(&arch(), seed).unwrap();
        let x = image(seed);
        let g = loss_grad(seed, 6);
        let s = 2f64.powi(k);
        let scaled: Vec<f64> = g.iter().map(|v| v * s).collect();
        let (_, g1) = run(&mut net, &x, None, &g);
        let (_, g2) = run(&mut net, &x, None, &scaled);
        for (a, b) in g1.iter().zip(&g2) {
            prop_assert_eq!(a * s, *b);
        }
    }

    #[test]
    fn accuracy_invariant_under_common_scale(seed in 0u64..1000, k in -4i32..5) {
        let spec = AttributeSpec::independent(1, 60, InputKind::Vector { dim: 3 }, seed);
        let ds = generate_dataset(&spec).unwrap();
        let batch = sample_triplets(&ds, 0, 100, seed).unwrap();
        let embed = |s: usize| -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + s as u64);
            (0..4).map(|_| StandardNormal.sample(&mut rng)).collect()
        };
        let scale = 2f64.powi(k);
        let a = triplet_accuracy(&batch, |s| Ok(embed(s))).unwrap();
        let b = triplet_accuracy(&batch, |s| Ok(embed(s).iter().map(|v| v * scale).collect())).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn evaluation_does_not_touch_parameters() {
    let spec = AttributeSpec::independent(2, 80, InputKind::Image { height: 12, width: 12 }, 5);
    let ds = generate_dataset(&spec).unwrap();
    let ins = InsertionSpec::new("block2", ModulationKind::ScalingVector);
    let model = build_variant(&arch(), &ins, Variant::Modulated, 2, 3).unwrap();
    let before: Vec<Vec<u64>> = model.named_params().iter().map(|(_, t)| bits(t.values())).collect();
    let pool: Vec<usize> = (0..ds.len()).collect();
    let eval = EvalSet::sample(&ds, &pool, 2, 50, 1).unwrap();
    evaluate(&model, &ds, &eval).unwrap();
    let after: Vec<Vec<u64>> = model.named_params().iter().map(|(_, t)| bits(t.values())).collect();
    assert_eq!(before, after);
}

#[test]
fn label_agreement_follows_arcsin_law() {
    let n = 20_000;
    let spec = AttributeSpec::independent(3, n, InputKind::Vector { dim: 4 }, 21)
        .with_correlation(0, 1, 0.8)
        .with_correlation(0, 2, -0.3)
        .with_correlation(1, 2, -0.2);
    let ds = generate_dataset(&spec).unwrap();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let p = expected_agreement(spec.correlation_at(i, j));
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let got = ds.agreement_rate(i, j);
        assert!((got - p).abs() < 3.0 * sigma, "pair ({i},{j}): {got} vs {p}");
    }
    for t in 0..3 {
        let ones = (0..n).filter(|&s| ds.label(s, t) == 1).count() as f64 / n as f64;
        assert!((ones - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "task {t}: {ones}");
    }
}

#[test]
fn random_gaussian_embeddings_score_near_half() {
    let spec = AttributeSpec::independent(1, 2_000, InputKind::Vector { dim: 2 }, 9);
    let ds = generate_dataset(&spec).unwrap();
    let batch = sample_triplets(&ds, 0, 10_000, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let table: Vec<Vec<f64>> = (0..ds.len())
        .map(|_| (0..8).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let acc = triplet_accuracy(&batch, |s| Ok(table[s].clone())).unwrap();
    assert!((0.47..=0.53).contains(&acc), "{acc}");
}
