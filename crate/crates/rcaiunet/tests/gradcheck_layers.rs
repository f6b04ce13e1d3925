//! Finite-difference gradient checks for every layer type, seeds 0..4.
//!
//! Each check compares tape gradients against central finite differences of
//! a randomly-weighted output sum, for the layer weights and for the input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rcaiunet::autograd::gradcheck::{gradcheck, GradcheckConfig};
use rcaiunet::autograd::{ops, ParamId, Tape, Var};
use rcaiunet::layers::{
    max_pool2x2_op, max_pool3x3_same_op, BatchNormLayer, Conv2d, CrossSpatialAttentionBlock,
    DscLayer, HybridPoolLayer, InceptionConvLayer, Mode, Param, ParamVisit, PoolMode,
    ResidualInceptionBlock, UpsampleLayer,
};
use rcaiunet::tensor::{DType, Tensor};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, DType::F64, |_| rng.gen_range(-1.0..1.0))
}

fn collect_handles<L: ParamVisit>(layer: &L) -> Vec<(String, Param)> {
    let mut out = Vec::new();
    layer.visit_params("", &mut |name, p| {
        if p.trainable() {
            out.push((name, p.clone()));
        }
    });
    out
}

/// Runs the check for a layer whose forward is `forward(layer, tape, inputs)`.
///
/// Layers hold interior mutability, so the finite-difference workers clone
/// a mutex-guarded template instead of sharing the layer directly.
fn check<L>(
    label: &str,
    layer: &L,
    input_shapes: &[Vec<usize>],
    seed: u64,
    forward: impl Fn(&L, &Tape, &[Var]) -> Var + Sync,
) where
    L: ParamVisit + Clone + Send,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD_EF01);
    let inputs: Vec<Tensor> = input_shapes
        .iter()
        .map(|s| random_tensor(s, &mut rng))
        .collect();

    // Analytic pass: weights and inputs all registered as parameters.
    let tape = Tape::new();
    let mut named: Vec<(String, Param)> = collect_handles(layer);
    let input_params: Vec<Param> = inputs.iter().map(|t| Param::new(t.clone())).collect();
    for (i, p) in input_params.iter().enumerate() {
        named.push((format!("input{i}"), p.clone()));
    }
    let input_vars: Vec<Var> = input_params.iter().map(|p| p.on(&tape)).collect();
    let out = forward(layer, &tape, &input_vars);
    let weight = {
        let shape = tape.value(out).shape().to_vec();
        let mut wr = ChaCha8Rng::seed_from_u64(seed ^ 0x1357_9BDF);
        random_tensor(&shape, &mut wr)
    };
    let wv = tape.constant(weight.clone());
    let prod = ops::mul(&tape, out, wv).expect("objective shapes");
    let root = ops::sum(&tape, prod);
    let grads = tape.backward(root).expect("scalar root");
    let analytic: Vec<Tensor> = named
        .iter()
        .map(|(name, p)| {
            grads
                .get(p.id())
                .unwrap_or_else(|| panic!("gradient for {name}"))
                .clone()
        })
        .collect();

    // Finite-difference oracle: rebuild from raw values each evaluation.
    let n_params = named.len() - inputs.len();
    let template = std::sync::Mutex::new(layer.clone());
    let eval = |vals: &[Tensor]| -> f64 {
        let fresh = template.lock().unwrap().clone();
        let mut idx = 0;
        fresh.visit_params("", &mut |_, p| {
            if p.trainable() {
                p.set(vals[idx].clone());
                idx += 1;
            }
        });
        debug_assert_eq!(idx, n_params);
        let tape = Tape::new();
        let input_vars: Vec<Var> = vals[n_params..]
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect();
        let out = forward(&fresh, &tape, &input_vars);
        tape.value(out)
            .data()
            .iter()
            .zip(weight.data())
            .map(|(a, b)| a * b)
            .sum()
    };
    let named_values: Vec<(String, Tensor)> =
        named.iter().map(|(n, p)| (n.clone(), p.value())).collect();
    let report = gradcheck(&eval, &named_values, &analytic, &GradcheckConfig::default());
    assert!(
        report.all_pass(),
        "{label} seed {seed} failed:\n{report}"
    );
}

#[test]
fn dsc_layer_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = DscLayer::new(3, 4, 3, true, &mut rng, DType::F64);
        check("dsc3", &layer, &[vec![2, 3, 8, 8]], seed, |l, t, ins| {
            l.forward(t, ins[0]).unwrap()
        });
    }
}

#[test]
fn conv1x1_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = Conv2d::new(3, 5, 1, true, &mut rng, DType::F64);
        check("conv1x1", &layer, &[vec![2, 3, 6, 6]], seed, |l, t, ins| {
            l.forward(t, ins[0]).unwrap()
        });
    }
}

#[test]
fn hybrid_pool_valid_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = HybridPoolLayer::new(3, PoolMode::Valid, true, &mut rng, DType::F64);
        check("hybrid_valid", &layer, &[vec![2, 3, 8, 8]], seed, |l, t, ins| {
            l.forward(t, ins[0]).unwrap()
        });
    }
}

#[test]
fn hybrid_pool_same_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = HybridPoolLayer::new(2, PoolMode::Same, true, &mut rng, DType::F64);
        check("hybrid_same", &layer, &[vec![2, 2, 6, 6]], seed, |l, t, ins| {
            l.forward(t, ins[0]).unwrap()
        });
    }
}

#[test]
fn hybrid_pool_output_sum_wrt_input_confirms_dft_adjoint() {
    // Plain output-sum objective against the input alone.
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = HybridPoolLayer::new(2, PoolMode::Valid, true, &mut rng, DType::F64);
        let x = random_tensor(&[1, 2, 8, 8], &mut rng);
        let tape = Tape::new();
        let x_id = ParamId::fresh();
        let xv = tape.param(x_id, x.clone());
        let out = layer.forward(&tape, xv).unwrap();
        let root = ops::sum(&tape, out);
        let grads = tape.backward(root).unwrap();
        let analytic = grads.get(x_id).unwrap().clone();
        let template = std::sync::Mutex::new(layer.clone());
        let eval = move |vals: &[Tensor]| -> f64 {
            let l2 = template.lock().unwrap().clone();
            let tape = Tape::new();
            let xv = tape.constant(vals[0].clone());
            tape.value(l2.forward(&tape, xv).unwrap()).sum()
        };
        let report = gradcheck(
            &eval,
            &[("input".to_string(), x)],
            &[analytic],
            &GradcheckConfig::default(),
        );
        assert!(report.all_pass(), "seed {seed}:\n{report}");
    }
}

#[test]
fn max_pool_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x77);
        for same in [false, true] {
            let x = random_tensor(&[2, 2, 6, 6], &mut rng);
            let tape = Tape::new();
            let x_id = ParamId::fresh();
            let xv = tape.param(x_id, x.clone());
            let out = if same {
                max_pool3x3_same_op(&tape, xv).unwrap()
            } else {
                max_pool2x2_op(&tape, xv).unwrap()
            };
            let root = ops::sum(&tape, out);
            let grads = tape.backward(root).unwrap();
            let analytic = grads.get(x_id).unwrap().clone();
            let eval = move |vals: &[Tensor]| -> f64 {
                let tape = Tape::new();
                let xv = tape.constant(vals[0].clone());
                let out = if same {
                    max_pool3x3_same_op(&tape, xv).unwrap()
                } else {
                    max_pool2x2_op(&tape, xv).unwrap()
                };
                tape.value(out).sum()
            };
            let report = gradcheck(
                &eval,
                &[("input".to_string(), x)],
                &[analytic],
                &GradcheckConfig::default(),
            );
            assert!(report.all_pass(), "same={same} seed {seed}:\n{report}");
        }
    }
}

#[test]
fn batch_norm_train_mode_gradients() {
    for seed in SEEDS {
        let layer = BatchNormLayer::new(3, DType::F64);
        // Nudge gamma/beta off their init so the check isn't at a special
        // point.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x99);
        layer.gamma.set(Tensor::from_fn(&[3], DType::F64, |_| {
            rng.gen_range(0.5..1.5)
        }));
        layer.beta.set(Tensor::from_fn(&[3], DType::F64, |_| {
            rng.gen_range(-0.5..0.5)
        }));
        check("batchnorm", &layer, &[vec![2, 3, 4, 4]], seed, |l, t, ins| {
            l.forward(t, ins[0], Mode::Train).unwrap()
        });
    }
}

#[test]
fn inception_layer_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = InceptionConvLayer::new(2, 3, &mut rng, DType::F64);
        check("inception", &layer, &[vec![1, 2, 8, 8]], seed, |l, t, ins| {
            l.forward(t, ins[0], Mode::Train).unwrap()
        });
    }
}

#[test]
fn residual_block_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = ResidualInceptionBlock::new(2, 3, &mut rng, DType::F64);
        check("residual", &block, &[vec![1, 2, 8, 8]], seed, |l, t, ins| {
            l.forward(t, ins[0], Mode::Train).unwrap()
        });
    }
}

#[test]
fn cross_spatial_attention_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let block = CrossSpatialAttentionBlock::new(2, &[3, 4], &mut rng, DType::F64);
        check(
            "csa",
            &block,
            &[vec![1, 2, 8, 8], vec![1, 3, 4, 4], vec![1, 4, 2, 2]],
            seed,
            |l, t, ins| l.forward(t, ins[0], &ins[1..]).unwrap().0,
        );
    }
}

#[test]
fn upsample_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layer = UpsampleLayer::new(3, 2, &mut rng, DType::F64);
        check("upsample", &layer, &[vec![2, 3, 4, 4]], seed, |l, t, ins| {
            l.forward(t, ins[0]).unwrap()
        });
    }
}

#[test]
fn spectral_ops_input_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        for same in [false, true] {
            let x = random_tensor(&[1, 2, 6, 6], &mut rng);
            let tape = Tape::new();
            let x_id = ParamId::fresh();
            let xv = tape.param(x_id, x.clone());
            let out = if same {
                ops::spectral_lowpass(&tape, xv)
            } else {
                ops::spectral_downsample(&tape, xv, 3, 3)
            };
            let weight = {
                let shape = tape.value(out).shape().to_vec();
                random_tensor(&shape, &mut rng)
            };
            let wv = tape.constant(weight.clone());
            let prod = ops::mul(&tape, out, wv).unwrap();
            let root = ops::sum(&tape, prod);
            let grads = tape.backward(root).unwrap();
            let analytic = grads.get(x_id).unwrap().clone();
            let eval = move |vals: &[Tensor]| -> f64 {
                let tape = Tape::new();
                let xv = tape.constant(vals[0].clone());
                let out = if same {
                    ops::spectral_lowpass(&tape, xv)
                } else {
                    ops::spectral_downsample(&tape, xv, 3, 3)
                };
                tape.value(out)
                    .data()
                    .iter()
                    .zip(weight.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let report = gradcheck(
                &eval,
                &[("input".to_string(), x)],
                &[analytic],
                &GradcheckConfig::default(),
            );
            assert!(report.all_pass(), "same={same} seed {seed}:\n{report}");
        }
    }
}

#[test]
fn resize_bilinear_gradients() {
    for seed in SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x31);
        let x = random_tensor(&[1, 2, 3, 4], &mut rng);
        let tape = Tape::new();
        let x_id = ParamId::fresh();
        let xv = tape.param(x_id, x.clone());
        let out = ops::resize_bilinear(&tape, xv, 7, 6).unwrap();
        let weight = random_tensor(&[1, 2, 7, 6], &mut rng);
        let wv = tape.constant(weight.clone());
        let prod = ops::mul(&tape, out, wv).unwrap();
        let root = ops::sum(&tape, prod);
        let grads = tape.backward(root).unwrap();
        let analytic = grads.get(x_id).unwrap().clone();
        let eval = move |vals: &[Tensor]| -> f64 {
            let t = vals[0].resize_bilinear(7, 6).unwrap();
            t.data().iter().zip(weight.data()).map(|(a, b)| a * b).sum()
        };
        let report = gradcheck(
            &eval,
            &[("input".to_string(), x)],
            &[analytic],
            &GradcheckConfig::default(),
        );
        assert!(report.all_pass(), "seed {seed}:\n{report}");
    }
}
