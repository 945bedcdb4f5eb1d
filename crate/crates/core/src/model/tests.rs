use std::rc::Rc;

use super::*;
use crate::data::CodeSet;
use crate::tensor::{grad_check, worst_rel_err, GradCheckConfig, Tape, Tensor};
use crate::text::{EmbeddingTable, Vocabulary};

fn toy_config(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig {
        vocab_size: 30,
        embed_dim: 8,
        gate_dim: 4,
        kernel_size: 3,
        levels: 2,
        dilations: vec![1, 2],
        dropout: 0.2,
        code_dim: 16,
        code_count: 5,
        max_len: 64,
        variant: Variant::Full,
        lstm_style_output: false,
    };
    cfg = cfg.for_variant(variant);
    cfg.validate().unwrap();
    cfg
}

fn toy_model(variant: Variant, seed: u64) -> Model {
    let cfg = toy_config(variant);
    let table = EmbeddingTable::random_init(cfg.vocab_size, cfg.embed_dim, seed ^ 0xabcd);
    let params = ModelParams::init(&cfg, Some(&table), seed).unwrap();
    let descs: Vec<Vec<usize>> = (0..cfg.code_count)
        .map(|j| vec![(2 * j + 1) % cfg.vocab_size, (2 * j + 2) % cfg.vocab_size])
        .collect();
    Model::new(cfg, params, Rc::new(descs), 0).unwrap()
}

fn toy_note(len: usize, seed: u64) -> Vec<usize> {
    use rand::Rng;
    let mut rng = crate::rng::seeded_rng(seed);
    (0..len).map(|_| rng.random_range(0..30)).collect()
}

#[test]
fn gated_layer_zero_inputs_follow_the_equations() {
    // All inputs zero: cell = sigmoid(0)*sigmoid(0) + sigmoid(0)*tanh(0)
    // = 0.25, h = sigmoid(0)*tanh(0) = 0.
    let mut tape = Tape::new();
    let n = 6;
    let g = 4;
    let injected = Tensor::zeros(n, 3);
    let cell_in = Tensor::zeros(n, g);
    let kernel = Tensor::param(2 * 3, 4 * g, vec![0.0; 6 * 4 * g]).unwrap();
    let bias = Tensor::param(1, 4 * g, vec![0.0; 4 * g]).unwrap();
    let (h, cell) = gated_layer(&mut tape, &injected, &cell_in, &kernel, &bias, 1, false).unwrap();
    assert!(cell.to_vec().iter().all(|v| (v - 0.25).abs() < 1e-12));
    assert!(h.to_vec().iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn gated_layer_forget_saturation() {
    // Forget block driven to -30: sigmoid(F) ~ 0 so the incoming cell is
    // erased and cell_out ~ sigmoid(I) * tanh(G). In the printed output
    // equation h = sigmoid(O) * tanh(F), tanh saturates at -1, so
    // h ~ -sigmoid(O).
    use rand::Rng;
    let mut rng = crate::rng::seeded_rng(3);
    let (n, g, c_in, k) = (5usize, 3usize, 4usize, 2usize);
    let mut tape = Tape::new();
    let injected = Tensor::constant(
        n,
        c_in,
        (0..n * c_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let cell_in = Tensor::constant(
        n,
        g,
        (0..n * g).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let kernel = Tensor::param(
        k * c_in,
        4 * g,
        (0..k * c_in * 4 * g)
            .map(|_| rng.random_range(-0.5..0.5))
            .collect(),
    )
    .unwrap();
    let mut bias_values = vec![0.0; 4 * g];
    for v in &mut bias_values[3 * g..] {
        *v = -30.0;
    }
    let bias = Tensor::param(1, 4 * g, bias_values).unwrap();

    let (h, cell) = gated_layer(&mut tape, &injected, &cell_in, &kernel, &bias, 1, false).unwrap();

    let u = {
        let mut probe = Tape::new();
        probe
            .conv1d_dilated(&injected, &kernel, &bias, 1)
            .unwrap()
            .to_vec()
    };
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    for row in 0..n {
        for col in 0..g {
            let i_v = u[row * 4 * g + col];
            let o_v = u[row * 4 * g + g + col];
            let g_v = u[row * 4 * g + 2 * g + col];
            let expect_cell = sig(i_v) * g_v.tanh();
            assert!((cell.get(row, col) - expect_cell).abs() < 1e-9);
            assert!((h.get(row, col) + sig(o_v)).abs() < 1e-9);
        }
    }
}

#[test]
fn lstm_style_output_vanishes_when_write_gates_close() {
    // With input and forget blocks both saturated negative the fresh cell
    // is ~0, and the optional h = sigmoid(O)*tanh(C_next) output is ~0.
    let (n, g, c_in, k) = (4usize, 3usize, 2usize, 1usize);
    let mut tape = Tape::new();
    let injected = Tensor::zeros(n, c_in);
    let cell_in = Tensor::zeros(n, g);
    let kernel = Tensor::param(k * c_in, 4 * g, vec![0.0; k * c_in * 4 * g]).unwrap();
    let mut bias_values = vec![0.0; 4 * g];
    for col in 0..g {
        bias_values[col] = -30.0; // input block
        bias_values[3 * g + col] = -30.0; // forget block
    }
    let bias = Tensor::param(1, 4 * g, bias_values).unwrap();
    let (h, cell) = gated_layer(&mut tape, &injected, &cell_in, &kernel, &bias, 1, true).unwrap();
    assert!(cell.to_vec().iter().all(|v| v.abs() < 1e-9));
    assert!(h.to_vec().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn gated_layer_passes_grad_check() {
    use rand::Rng;
    let mut rng = crate::rng::seeded_rng(8);
    let (n, g, c_in, k) = (8usize, 3usize, 5usize, 3usize);
    let injected = Tensor::param(
        n,
        c_in,
        (0..n * c_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let cell_in = Tensor::param(
        n,
        g,
        (0..n * g).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let kernel = Tensor::param(
        k * c_in,
        4 * g,
        (0..k * c_in * 4 * g)
            .map(|_| rng.random_range(-0.6..0.6))
            .collect(),
    )
    .unwrap();
    let bias = Tensor::param(
        1,
        4 * g,
        (0..4 * g).map(|_| rng.random_range(-0.2..0.2)).collect(),
    )
    .unwrap();
    let params = [
        ("injected", injected.clone()),
        ("cell_in", cell_in.clone()),
        ("kernel", kernel.clone()),
        ("bias", bias.clone()),
    ];
    let forward = move |tape: &mut Tape| {
        let (h, cell) = gated_layer(tape, &injected, &cell_in, &kernel, &bias, 2, false)?;
        let hs = tape.sum_all(&h);
        let cs = tape.sum_all(&cell);
        tape.add(&hs, &cs)
    };
    let reports = grad_check(forward, &params, &GradCheckConfig::default()).unwrap();
    assert!(worst_rel_err(&reports) < 1e-4, "{reports:?}");
}

#[test]
fn depth_changes_outputs_but_not_parameter_count() {
    let model = toy_model(Variant::Full, 21);
    let note = toy_note(12, 5);

    let mut shallow_cfg = model.config.clone();
    shallow_cfg.levels = 1;
    shallow_cfg.dilations = vec![1];
    let mut deep_cfg = model.config.clone();
    deep_cfg.levels = 3;
    deep_cfg.dilations = vec![1, 2, 4];

    let mut t1 = Tape::new();
    let shallow = encode_note_features(&mut t1, &note, &model.params, &shallow_cfg, false, 0)
        .unwrap()
        .to_vec();
    let mut t3 = Tape::new();
    let deep = encode_note_features(&mut t3, &note, &model.params, &deep_cfg, false, 0)
        .unwrap()
        .to_vec();
    assert_ne!(shallow, deep);
    assert_eq!(
        shallow_cfg.param_count_formula(),
        deep_cfg.param_count_formula()
    );
}

#[test]
fn encoder_ignores_future_token_permutations() {
    let model = toy_model(Variant::Full, 9);
    let note = toy_note(20, 77);
    let probe_row = 6usize;

    let mut tape = Tape::new();
    let base = encode_note_features(&mut tape, &note, &model.params, &model.config, false, 0)
        .unwrap()
        .to_vec();

    let mut permuted = note.clone();
    permuted[probe_row + 1..].reverse();
    let mut tape2 = Tape::new();
    let swapped = encode_note_features(
        &mut tape2,
        &permuted,
        &model.params,
        &model.config,
        false,
        0,
    )
    .unwrap()
    .to_vec();

    let width = model.config.feature_dim();
    for s in 0..=probe_row {
        assert_eq!(
            base[s * width..(s + 1) * width],
            swapped[s * width..(s + 1) * width],
            "row {s} depends on future tokens"
        );
    }
}

#[test]
fn single_token_note_encodes_finite() {
    let model = toy_model(Variant::Full, 4);
    let mut tape = Tape::new();
    let out =
        encode_note_features(&mut tape, &[3], &model.params, &model.config, false, 0).unwrap();
    assert_eq!(out.shape(), (1, model.config.feature_dim()));
    assert!(out.to_vec().iter().all(|v| v.is_finite()));

    let err = encode_note_features(&mut tape, &[], &model.params, &model.config, false, 0);
    assert!(err.is_err());
}

#[test]
fn code_matrix_identity_and_zero_projections() {
    let mut tape = Tape::new();
    let desc_avg = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
    let eye = Tensor::param(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let zero_bias = Tensor::param(1, 2, vec![0.0, 0.0]).unwrap();
    let v = build_code_matrix(&mut tape, &desc_avg, &eye, &zero_bias).unwrap();
    assert_eq!(v.to_vec(), desc_avg.to_vec());

    let zeros = Tensor::param(2, 2, vec![0.0; 4]).unwrap();
    let bias = Tensor::param(1, 2, vec![5.0, -1.0]).unwrap();
    let v = build_code_matrix(&mut tape, &desc_avg, &zeros, &bias).unwrap();
    assert_eq!(v.to_vec(), vec![5.0, -1.0, 5.0, -1.0]);
}

#[test]
fn code_projection_receives_gradient_through_the_loss() {
    let model = toy_model(Variant::Full, 33);
    // Head starts at zero, so give the scale a nudge to open the path.
    if let HeadParams::Interaction { out_scale, .. } = &model.params.head {
        out_scale
            .set_values(&vec![0.5; model.config.code_count])
            .unwrap();
    }
    let note = toy_note(10, 1);
    let targets = Tensor::constant(1, 5, vec![1.0, 0.0, 1.0, 0.0, 1.0]).unwrap();
    let mut tape = Tape::new();
    let logits = model.forward_logits(&mut tape, &note, false, 0).unwrap();
    let loss = tape.bce_with_logits(&logits, &targets).unwrap();
    tape.backward(&loss).unwrap();
    if let HeadParams::Interaction { code_proj, .. } = &model.params.head {
        assert!(code_proj.grad_to_vec().iter().any(|g| g.abs() > 1e-9));
    } else {
        panic!("full model must carry an interaction head");
    }
}

#[test]
fn nci_orthogonal_code_vector_scores_its_bias() {
    let mut tape = Tape::new();
    let features = Tensor::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
    let codes = Tensor::from_rows(&[vec![0.0, 3.0]]).unwrap();
    let scale = Tensor::param(1, 1, vec![2.0]).unwrap();
    let bias = Tensor::param(1, 1, vec![-0.75]).unwrap();
    let logits = nci_score(&mut tape, &features, &codes, &scale, &bias).unwrap();
    assert_eq!(logits.to_vec(), vec![-0.75]);
}

#[test]
fn nci_single_token_matching_code_gives_norm_squared() {
    let mut tape = Tape::new();
    let v = vec![0.5, -1.5, 2.0];
    let features = Tensor::from_rows(std::slice::from_ref(&v)).unwrap();
    let codes = Tensor::from_rows(std::slice::from_ref(&v)).unwrap();
    let scale = Tensor::param(1, 1, vec![3.0]).unwrap();
    let bias = Tensor::param(1, 1, vec![0.25]).unwrap();
    let logits = nci_score(&mut tape, &features, &codes, &scale, &bias).unwrap();
    let norm_sq: f64 = v.iter().map(|x| x * x).sum();
    assert!((logits.get_flat(0) - (3.0 * norm_sq + 0.25)).abs() < 1e-12);
}

#[test]
fn nci_logits_invariant_under_token_repetition() {
    use rand::Rng;
    let mut rng = crate::rng::seeded_rng(12);
    let (n, d, m) = (7usize, 6usize, 4usize);
    let u: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let v: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let scale = Tensor::param(1, m, (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let bias = Tensor::param(1, m, (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

    let mut tape = Tape::new();
    let features = Tensor::from_rows(&u).unwrap();
    let codes = Tensor::from_rows(&v).unwrap();
    let single = nci_score(&mut tape, &features, &codes, &scale, &bias)
        .unwrap()
        .to_vec();

    let doubled: Vec<Vec<f64>> = u.iter().chain(u.iter()).cloned().collect();
    let features2 = Tensor::from_rows(&doubled).unwrap();
    let repeated = nci_score(&mut tape, &features2, &codes, &scale, &bias)
        .unwrap()
        .to_vec();
    for (a, b) in single.iter().zip(&repeated) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn nci_rejects_width_mismatch() {
    let mut tape = Tape::new();
    let features = Tensor::zeros(3, 4);
    let codes = Tensor::zeros(2, 5);
    let scale = Tensor::zeros(1, 2);
    let bias = Tensor::zeros(1, 2);
    assert!(nci_score(&mut tape, &features, &codes, &scale, &bias).is_err());
}

#[test]
fn forward_probabilities_are_in_open_unit_interval() {
    let model = toy_model(Variant::Full, 50);
    let note = toy_note(14, 3);
    let mut tape = Tape::new();
    let probs = model.forward(&mut tape, &note, false, 0).unwrap();
    assert_eq!(probs.shape(), (1, 5));
    assert!(probs.to_vec().iter().all(|&p| p > 0.0 && p < 1.0));
}

#[test]
fn zero_initialized_head_predicts_one_half() {
    let model = toy_model(Variant::Full, 51);
    let note = toy_note(14, 4);
    let mut tape = Tape::new();
    let probs = model.forward(&mut tape, &note, false, 0).unwrap();
    assert!(probs.to_vec().iter().all(|&p| (p - 0.5).abs() < 1e-12));
}

#[test]
fn param_count_matches_hand_computed_example() {
    // vocab=10, d_e=4, d_g=1, k=2, d_v=4, m=3:
    // 40 + 2*5*4 + 4 + 1 + 16 + 4 + 6 = 111.
    let cfg = ModelConfig {
        vocab_size: 10,
        embed_dim: 4,
        gate_dim: 1,
        kernel_size: 2,
        levels: 1,
        dilations: vec![1],
        dropout: 0.0,
        code_dim: 4,
        code_count: 3,
        max_len: 16,
        variant: Variant::Full,
        lstm_style_output: false,
    };
    cfg.validate().unwrap();
    assert_eq!(cfg.param_count_formula(), 111);
    let params = ModelParams::init(&cfg, None, 0).unwrap();
    assert_eq!(params.param_count(), 111);
}

#[test]
fn param_count_is_independent_of_depth() {
    let base = toy_config(Variant::Full);
    let counts: Vec<usize> = (1..=5)
        .map(|levels| {
            let mut cfg = base.clone();
            cfg.levels = levels;
            cfg.dilations = ModelConfig::default_dilations(levels);
            let params = ModelParams::init(&cfg, None, 1).unwrap();
            assert_eq!(params.param_count(), cfg.param_count_formula());
            params.param_count()
        })
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}

#[test]
fn no_gating_variant_has_fewer_parameters() {
    let full = toy_config(Variant::Full);
    let gateless = full.for_variant(Variant::NoGating);
    assert!(gateless.param_count_formula() < full.param_count_formula());
    let params = ModelParams::init(&gateless, None, 2).unwrap();
    assert_eq!(params.param_count(), gateless.param_count_formula());
}

#[test]
fn max_pool_head_is_length_invariant_on_constant_features() {
    let mut tape = Tape::new();
    let row = vec![0.3, -0.7, 1.1];
    let weight = Tensor::param(3, 2, vec![1.0, 0.0, 0.5, -1.0, 2.0, 0.25]).unwrap();
    let bias = Tensor::param(1, 2, vec![0.1, -0.2]).unwrap();
    let short = Tensor::from_rows(&vec![row.clone(); 2]).unwrap();
    let long = Tensor::from_rows(&vec![row.clone(); 9]).unwrap();
    let a = max_pool_score(&mut tape, &short, &weight, &bias).unwrap();
    let b = max_pool_score(&mut tape, &long, &weight, &bias).unwrap();
    assert_eq!(a.to_vec(), b.to_vec());
}

#[test]
fn ablation_variants_pass_grad_check() {
    for variant in [Variant::NoNci, Variant::NoGating] {
        let model = toy_model(variant, 60);
        // Zero-initialized output heads would hide upstream gradients.
        match &model.params.head {
            HeadParams::Interaction { out_scale, .. } => {
                out_scale.set_values(&[0.4; 5]).unwrap();
            }
            HeadParams::MaxPoolLinear { out_weight, .. } => {
                use rand::Rng;
                let mut rng = crate::rng::seeded_rng(61);
                let n = out_weight.len();
                let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
                out_weight.set_values(&vals).unwrap();
            }
        }
        let note = toy_note(10, 6);
        let targets = Tensor::constant(1, 5, vec![1.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let named = model.params.named();
        let m = model.clone();
        let forward = move |tape: &mut Tape| {
            let logits = m.forward_logits(tape, &note, false, 0)?;
            tape.bce_with_logits(&logits, &targets)
        };
        let reports = grad_check(forward, &named, &GradCheckConfig::default()).unwrap();
        assert!(worst_rel_err(&reports) < 1e-4, "{variant}: {reports:?}");
    }
}

#[test]
fn shared_kernel_gradient_equals_sum_of_untied_contributions() {
    let model = toy_model(Variant::Full, 70);
    if let HeadParams::Interaction { out_scale, .. } = &model.params.head {
        out_scale.set_values(&[0.3; 5]).unwrap();
    }
    let note = toy_note(12, 9);
    let targets = Tensor::constant(1, 5, vec![0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
    let levels = model.config.levels;

    let run = |kernels: &[(Tensor, Tensor)]| {
        let mut tape = Tape::new();
        let features = encode_with_layer_kernels(
            &mut tape,
            &note,
            &model.params.embedding,
            &model.params.h0,
            kernels,
            &model.config,
            false,
            0,
        )
        .unwrap();
        let desc_avg = description_average(
            &mut tape,
            &model.params.embedding,
            Rc::clone(&model.code_descs),
            model.unk_id,
        )
        .unwrap();
        let (code_proj, code_bias, out_scale, out_bias) = match &model.params.head {
            HeadParams::Interaction {
                code_proj,
                code_bias,
                out_scale,
                out_bias,
            } => (code_proj, code_bias, out_scale, out_bias),
            _ => unreachable!(),
        };
        let v = build_code_matrix(&mut tape, &desc_avg, code_proj, code_bias).unwrap();
        let logits = nci_score(&mut tape, &features, &v, out_scale, out_bias).unwrap();
        let loss = tape.bce_with_logits(&logits, &targets).unwrap();
        for (_, t) in model.params.named() {
            t.zero_grad();
        }
        for (k, b) in kernels {
            k.zero_grad();
            b.zero_grad();
        }
        tape.backward(&loss).unwrap();
    };

    // Shared: every level holds the same tensor.
    let shared: Vec<(Tensor, Tensor)> = (0..levels)
        .map(|_| {
            (
                model.params.conv_kernel.clone(),
                model.params.conv_bias.clone(),
            )
        })
        .collect();
    run(&shared);
    let shared_grad = model.params.conv_kernel.grad_to_vec();

    // Untied: per-level copies with identical values.
    let untied: Vec<(Tensor, Tensor)> = (0..levels)
        .map(|_| {
            (
                Tensor::param(
                    model.params.conv_kernel.rows(),
                    model.params.conv_kernel.cols(),
                    model.params.conv_kernel.to_vec(),
                )
                .unwrap(),
                Tensor::param(
                    1,
                    model.params.conv_bias.cols(),
                    model.params.conv_bias.to_vec(),
                )
                .unwrap(),
            )
        })
        .collect();
    run(&untied);
    let mut summed = vec![0.0; shared_grad.len()];
    for (k, _) in &untied {
        for (s, g) in summed.iter_mut().zip(k.grad_to_vec()) {
            *s += g;
        }
    }
    let max_diff = shared_grad
        .iter()
        .zip(&summed)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(max_diff < 1e-10, "max abs diff {max_diff}");
}

#[test]
fn checkpoint_round_trip_and_hash_guard() {
    let model = toy_model(Variant::Full, 80);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&path, &model.config, &model.params, "vhash", "chash").unwrap();
    let (header, params) = load_checkpoint(&path).unwrap();
    assert_eq!(header.config.vocab_size, model.config.vocab_size);
    assert_eq!(header.vocab_sha256, "vhash");
    for ((name_a, a), (name_b, b)) in model.params.named().iter().zip(params.named().iter()) {
        assert_eq!(name_a, name_b);
        assert_eq!(a.shape(), b.shape());
        // Values pass through f32 on disk.
        for (x, y) in a.to_vec().iter().zip(b.to_vec()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    // Hash verification refuses mismatched artifacts.
    let docs: Vec<Vec<String>> = (0..3).map(|_| vec!["fever".to_string()]).collect();
    let vocab = Vocabulary::build(&docs, 3).unwrap();
    let (codes, _) = CodeSet::build(
        &[("1.0".to_string(), "fever".to_string())],
        &Default::default(),
        &vocab,
    );
    assert!(matches!(
        header.verify_hashes(&vocab, &codes),
        Err(crate::error::Error::HashMismatch { .. })
    ));
}

#[test]
fn config_validation_rejects_untied_code_width() {
    let mut cfg = toy_config(Variant::Full);
    cfg.code_dim = cfg.feature_dim() + 1;
    assert!(cfg.validate().is_err());
    let mut cfg = toy_config(Variant::Full);
    cfg.dilations = vec![1];
    assert!(cfg.validate().is_err());
}

#[test]
fn eval_forward_is_deterministic() {
    let model = toy_model(Variant::Full, 90);
    let note = toy_note(16, 2);
    let mut t1 = Tape::new();
    let a = model.forward(&mut t1, &note, false, 123).unwrap().to_vec();
    let mut t2 = Tape::new();
    let b = model.forward(&mut t2, &note, false, 456).unwrap().to_vec();
    assert_eq!(a, b);
}
