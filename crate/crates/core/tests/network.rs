use msk_autograd::gradcheck::{check_gradients, difference_noise, CheckOptions, Coords};
use msk_autograd::{Graph, Tensor, Var};
use msk_core::datasets::*;
use msk_core::metrics::LossWeights;
use msk_core::network::*;
use msk_core::physics::DynamicsParams;
use msk_core::simulator::{generate_dataset, SimConfig};
use msk_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_config() -> SimConfig {
    SimConfig {
        duration: 6.0,
        ..SimConfig::wrist_like()
    }
}

fn windows(length: usize) -> (SimConfig, WindowSet) {
    let cfg = small_config();
    let ds = generate_dataset(&cfg, 2, &[1.0, 2.0], 5).unwrap();
    let wc = WindowConfig::default();
    let trials: Vec<_> = ds.trials.iter().map(|t| wc.prepare(t)).collect();
    let mut set = make_windows(&trials, length, 10).unwrap();
    set.stats = Some(NormStats::fit(&set.windows).unwrap());
    (cfg, set)
}

fn lift<T>(r: msk_core::Result<T>) -> msk_autograd::Result<T> {
    r.map_err(|e| match e {
        Error::Tensor(t) => t,
        other => panic!("{other}"),
    })
}

#[test]
fn default_network_shapes() {
    let model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 0).unwrap();
    let out = model.predict(&Tensor::zeros(&[6, 100])).unwrap();
    assert_eq!(out.shape(), &[100, 6]);
    assert!(out.data().iter().all(|v| v.is_finite()));
    let deeper = NetworkModel::build(&LayerSpec::deeper_stack(), 6, 100, 6, 0).unwrap();
    let (_, set) = windows(100);
    let out = deeper.predict(&set.windows[0].input).unwrap();
    assert_eq!(out.shape(), &[100, 6]);
    assert_eq!(deeper.layers.iter().filter(|l| l.kind == LayerKind::ConvBlock).count(), 3);
    assert_eq!(deeper.layers.iter().filter(|l| l.kind == LayerKind::FcBlock).count(), 3);
}

#[test]
fn default_architecture_matches_description() {
    let stack = LayerSpec::default_stack();
    assert_eq!(stack.len(), 4);
    let conv = &stack[0];
    assert_eq!((conv.kind, conv.units, conv.kernel, conv.padding, conv.stride), (LayerKind::ConvBlock, 128, 3, 3, 1));
    assert_eq!(conv.dropout, 0.3);
    assert_eq!(conv.norm, BlockNorm::Time);
    for fc in &stack[1..3] {
        assert_eq!((fc.kind, fc.units, fc.dropout, fc.norm), (LayerKind::FcBlock, 128, 0.3, BlockNorm::Feature));
    }
    assert_eq!(stack[3].kind, LayerKind::Regression);
}

#[test]
fn parameter_inventory_matches_closed_form() {
    let model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 0).unwrap();
    // conv: 128·6·3 kernels + 128 bias + 128 gain + 128 shift
    let conv = 128 * 6 * 3 + 3 * 128;
    let fc = 128 * 128 + 3 * 128;
    let head = 6 * 128 + 6;
    assert_eq!(model.parameter_count(), conv + 2 * fc + head);
    assert_eq!(model.parameter_count(), 36998);
    assert_eq!(parameter_count(&LayerSpec::default_stack(), 6, 6), 36998);
    let deeper = NetworkModel::build(&LayerSpec::deeper_stack(), 6, 100, 6, 0).unwrap();
    assert_eq!(deeper.parameter_count(), parameter_count(&LayerSpec::deeper_stack(), 6, 6));
    let names: Vec<&str> = model.params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names[..4], ["conv1.kernels", "conv1.bias", "conv1.gain", "conv1.shift"]);
    assert_eq!(names[names.len() - 2..], ["head.weights", "head.bias"]);
}

#[test]
fn initialization_is_seeded_xavier() {
    let a = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 42).unwrap();
    let b = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 42).unwrap();
    let c = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 43).unwrap();
    assert_eq!(a.params, b.params);
    assert_ne!(a.params, c.params);
    let kernels = &a.params[0].value;
    let s = (6.0f64 / (6 * 3 + 128 * 3) as f64).sqrt();
    assert!(kernels.data().iter().all(|v| v.abs() <= s));
    let max = kernels.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max > 0.9 * s);
    let head = a.params.iter().find(|p| p.name == "head.weights").unwrap();
    let s = (6.0f64 / (128 + 6) as f64).sqrt();
    assert!(head.value.data().iter().all(|v| v.abs() <= s));
}

#[test]
fn invalid_specs_rejected() {
    let mut stack = LayerSpec::default_stack();
    stack[1].dropout = 1.0;
    assert!(NetworkModel::build(&stack, 6, 100, 6, 0).is_err());
    let mut stack = LayerSpec::default_stack();
    stack[0].units = 0;
    assert!(NetworkModel::build(&stack, 6, 100, 6, 0).is_err());
    let stack = LayerSpec::default_stack();
    assert!(NetworkModel::build(&stack[..3], 6, 100, 6, 0).is_err());
    assert!(NetworkModel::build(&stack, 6, 2, 6, 0).is_err());
    let model = NetworkModel::build(&stack, 6, 100, 6, 0).unwrap();
    assert!(matches!(model.predict(&Tensor::zeros(&[5, 100])), Err(Error::Dimension { .. })));
}

#[test]
fn zero_emg_gives_finite_output() {
    let model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 1).unwrap();
    let mut input = vec![0.0; 600];
    for i in 0..100 {
        input[i] = i as f64 / 99.0;
    }
    let out = model.predict(&Tensor::matrix(6, 100, input).unwrap()).unwrap();
    assert_eq!(out.shape(), &[100, 6]);
    assert!(out.data().iter().all(|v| v.is_finite()));
}

#[test]
fn train_mode_dropout_is_seeded() {
    let (_, set) = windows(100);
    let model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 2).unwrap();
    assert_eq!(model.mode, Mode::Train);
    let x = &set.windows[0].input;
    let a = model.forward(x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = model.forward(x, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let c = model.forward(x, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn eval_mode_equals_train_mode_without_dropout() {
    let (_, set) = windows(100);
    let model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 3).unwrap();
    let mut no_drop = model.clone();
    no_drop.layers.iter_mut().for_each(|l| l.dropout = 0.0);
    no_drop.mode = Mode::Train;
    for w in set.windows.iter().take(3) {
        let eval = model.predict(&w.input).unwrap();
        let train = no_drop.forward(&w.input, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(eval, train);
    }
}

fn scalar_param(v: f64) -> Vec<Param> {
    vec![Param {
        name: "p".into(),
        value: Tensor::from_vec(vec![v]),
    }]
}

#[test]
fn sgdm_examples() {
    let mut p = scalar_param(0.0);
    let mut s = SgdmState::new(0.01, 0.0, &p).unwrap();
    sgdm_step(&mut p, &[Tensor::from_vec(vec![1.0])], &mut s).unwrap();
    assert!((p[0].value.data()[0] + 0.01).abs() < 1e-15);

    let mut p = scalar_param(0.0);
    let mut s = SgdmState::new(0.01, 0.9, &p).unwrap();
    for _ in 0..2 {
        sgdm_step(&mut p, &[Tensor::from_vec(vec![1.0])], &mut s).unwrap();
    }
    assert!((p[0].value.data()[0] + 0.029).abs() < 1e-15);
    assert_eq!(s.iteration, 2);

    // loss p², gradient 2p
    let mut p = scalar_param(1.0);
    let mut s = SgdmState::new(0.01, 0.9, &p).unwrap();
    for _ in 0..1200 {
        let g = 2.0 * p[0].value.data()[0];
        sgdm_step(&mut p, &[Tensor::from_vec(vec![g])], &mut s).unwrap();
    }
    assert!(p[0].value.data()[0].abs() < 1e-3);
}

#[test]
fn sgdm_names_the_non_finite_parameter() {
    let mut params = vec![
        Param {
            name: "conv1.bias".into(),
            value: Tensor::zeros(&[2]),
        },
        Param {
            name: "fc1.weights".into(),
            value: Tensor::zeros(&[2]),
        },
    ];
    let mut s = SgdmState::new(0.01, 0.9, &params).unwrap();
    let grads = [Tensor::zeros(&[2]), Tensor::from_vec(vec![0.0, f64::NAN])];
    match sgdm_step(&mut params, &grads, &mut s) {
        Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "fc1.weights"),
        other => panic!("{other:?}"),
    }
    assert!(params.iter().all(|p| p.value.data().iter().all(|v| *v == 0.0)));
    assert_eq!(s.iteration, 0);
}

#[test]
fn clipping_bounds_the_global_norm() {
    let mut g = vec![Tensor::from_vec(vec![3.0, 0.0]), Tensor::from_vec(vec![4.0])];
    clip_global_norm(&mut g, 1.0);
    assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].data()[0] - 0.8).abs() < 1e-15);
    let mut small = vec![Tensor::from_vec(vec![0.3])];
    clip_global_norm(&mut small, 1.0);
    assert_eq!(small[0].data()[0], 0.3);
}

#[test]
fn zero_iterations_leave_model_unchanged() {
    let (cfg, set) = windows(100);
    let mut model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 4).unwrap();
    let before = model.params.clone();
    let schedule = Schedule {
        max_iter: 0,
        ..Schedule::default()
    };
    let history = train(&mut model, &set, LossWeights::default(), &cfg.dynamics, &schedule).unwrap();
    assert!(history.is_empty());
    assert_eq!(model.params, before);
    assert_eq!(model.mode, Mode::Eval);
}

#[test]
fn physics_weight_does_not_touch_first_data_terms() {
    let (cfg, set) = windows(100);
    let schedule = Schedule {
        max_iter: 1,
        seed: 8,
        ..Schedule::default()
    };
    let run = |physics: f64| {
        let mut model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 5).unwrap();
        let w = LossWeights {
            physics,
            ..LossWeights::default()
        };
        train(&mut model, &set, w, &cfg.dynamics, &schedule).unwrap()
    };
    let (a, b) = (run(0.0), run(1.0));
    assert_eq!(a[0].force, b[0].force);
    assert_eq!(a[0].angle, b[0].angle);
    assert_eq!(a[0].physics, b[0].physics);
    assert_eq!(a[0].total, a[0].force + a[0].angle);
    assert!(b[0].total > a[0].total);
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let (cfg, set) = windows(100);
    let schedule = Schedule {
        max_iter: 300,
        seed: 1,
        ..Schedule::default()
    };
    let run = || {
        let mut model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 6).unwrap();
        let h = train(&mut model, &set, LossWeights::default().without_physics(), &cfg.dynamics, &schedule).unwrap();
        (model, h)
    };
    let (m1, h1) = run();
    let (m2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(m1.params, m2.params);
    assert_eq!(h1.len(), 300);
    let mean = |r: &[msk_core::metrics::LossBreakdown]| r.iter().map(|x| x.total).sum::<f64>() / r.len() as f64;
    assert!(mean(&h1[250..]) < mean(&h1[..50]));
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let (cfg, set) = windows(100);
    let mut model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 7).unwrap();
    let schedule = Schedule {
        max_iter: 20,
        ..Schedule::default()
    };
    train(&mut model, &set, LossWeights::default(), &cfg.dynamics, &schedule).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let stats = set.stats().unwrap();
    save_checkpoint(&model, stats, dir.path()).unwrap();
    let (loaded, loaded_stats) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(&loaded_stats, stats);
    assert_eq!(loaded.params, model.params);
    assert_eq!(loaded.mode, Mode::Eval);
    let x = &set.windows[1].input;
    assert_eq!(loaded.predict(x).unwrap(), model.predict(x).unwrap());

    // second save is byte-identical
    let dir2 = tempfile::tempdir().unwrap();
    save_checkpoint(&loaded, &loaded_stats, dir2.path()).unwrap();
    for f in [CHECKPOINT_MANIFEST, CHECKPOINT_PARAMS] {
        assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
    }

    let params = dir.path().join(CHECKPOINT_PARAMS);
    let text = std::fs::read_to_string(&params).unwrap();
    let truncated: String = text.lines().take(50).map(|l| format!("{l}\n")).collect();
    std::fs::write(&params, truncated).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(Error::Format { .. })));
}

/// Denominator floor well above the central-difference round-off
/// Floor at the difference quotient's round-off, so gradients that are zero
/// up to round-off compare absolutely.
fn roundoff_floor(f: &impl Fn(&mut Graph, &[Var]) -> msk_autograd::Result<Var>, params: &[Tensor], step: f64) -> f64 {
    (difference_noise(params, f, step, 8, 1).unwrap() / 1e-4).max(1e-6)
}

fn loss_closure<'a>(
    model: &'a NetworkModel,
    window: &'a Window,
    stats: &'a NormStats,
    dynamics: &'a DynamicsParams,
    weights: LossWeights,
) -> impl Fn(&mut Graph, &[Var]) -> msk_autograd::Result<Var> + 'a {
    move |g, vars| {
        let input = g.constant(window.input.clone());
        let pred = lift(model.forward_graph(g, vars, input, false, &mut ChaCha8Rng::seed_from_u64(0)))?;
        let l = lift(composite_loss(g, pred, &window.targets, stats, dynamics, window.dt, weights))?;
        Ok(l.total)
    }
}

#[test]
fn composite_loss_gradcheck_small_network_all_coordinates() {
    let (cfg, set) = windows(8);
    let stack = vec![
        LayerSpec::conv(4, 3, 3, 1, 0.0),
        LayerSpec::fc(5, 0.0),
        LayerSpec::regression(),
    ];
    let model = NetworkModel::build(&stack, 6, 8, 6, 12).unwrap();
    let stats = set.stats().unwrap();
    let w = &set.windows[3];
    let f = loss_closure(&model, w, stats, &cfg.dynamics, LossWeights::default());
    let params = model.param_tensors();
    let opts = CheckOptions {
        floor: roundoff_floor(&f, &params, 1e-5),
        ..CheckOptions::default()
    };
    let report = check_gradients(&params, f, opts).unwrap();
    assert_eq!(report.checked, model.parameter_count());
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst);
}

#[test]
fn composite_loss_gradcheck_default_network_sampled() {
    let (cfg, set) = windows(100);
    let model = NetworkModel::build(&LayerSpec::default_stack(), 6, 100, 6, 13).unwrap();
    let stats = set.stats().unwrap();
    let f = loss_closure(&model, &set.windows[2], stats, &cfg.dynamics, LossWeights::default());
    let params = model.param_tensors();
    // a smaller step keeps the perturbation clear of the many ReLU kinks
    let step = 1e-6;
    let opts = CheckOptions {
        step,
        floor: roundoff_floor(&f, &params, step),
        coords: Coords::Sample { per_tensor: 6, seed: 1 },
    };
    let report = check_gradients(&params, f, opts).unwrap();
    assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst);
}
