use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use striprf::gradcheck::random_tensor;
use striprf::model::{build_model, ModelConfig};
use striprf::Tensor;

fn image(size: usize, seed: u64) -> Tensor<f32> {
    random_tensor(
        &mut ChaCha8Rng::seed_from_u64(seed),
        [1, 3, size, size],
        0.0,
        1.0,
        0.0,
    )
    .cast()
}

// Closed-form parameter counts, written independently of the layer code.
fn conv_block(ci: usize, co: usize, k: usize) -> usize {
    co * ci * k * k + 2 * co
}
fn dw(c: usize, kh: usize, kw: usize) -> usize {
    c * kh * kw + c
}
fn pw(ci: usize, co: usize) -> usize {
    ci * co + co
}

fn expected_param_count(cfg: &ModelConfig) -> usize {
    let k = cfg.kernels;
    let srfm = |c| {
        dw(c, k.k, k.k)
            + dw(c, 1, k.kh)
            + dw(c, k.kv, 1)
            + pw(c, c)
            + dw(c, 1, k.ksmall)
            + dw(c, k.ksmall, 1)
    };
    let sub = |c| conv_block(c, c, 3) + srfm(c) + conv_block(c, c, 1);
    let c3k2 = |ci, co: usize| {
        let h = (co / 2).max(1);
        conv_block(ci, 2 * h, 1) + cfg.depth * sub(h) + conv_block(2 * h, co, 1)
    };
    let lska = |c| {
        let (l, m) = (2 * k.lska_d - 1, k.lska_k.div_ceil(k.lska_d));
        2 * dw(c, 1, l) + 2 * dw(c, 1, m) + pw(c, c)
    };
    let spm = |c: usize| {
        let h = c / 2;
        conv_block(c, h, 1) + 3 * lska(h) + conv_block(4 * h, c, 1)
    };
    let up = |c| if cfg.use_dysample { pw(c, 8) } else { 0 };
    let head = |c| conv_block(c, c, 3) + pw(c, cfg.num_classes + 4);
    let w = cfg.base_width;

    let mut n = conv_block(3, w / 2, 3);
    let mut prev = w / 2;
    for m in [1, 2, 4, 8] {
        n += conv_block(prev, m * w, 3) + c3k2(m * w, m * w);
        prev = m * w;
    }
    n += spm(8 * w);
    n += up(8 * w) + c3k2(12 * w, 4 * w);
    n += up(4 * w) + c3k2(6 * w, 2 * w);
    if cfg.use_p2 {
        n += up(2 * w) + c3k2(3 * w, w) + head(w);
        n += conv_block(w, w, 3) + c3k2(3 * w, 2 * w);
    }
    n += head(2 * w);
    n += conv_block(2 * w, 2 * w, 3) + c3k2(6 * w, 4 * w) + head(4 * w);
    n += conv_block(4 * w, 4 * w, 3) + c3k2(12 * w, 8 * w) + head(8 * w);
    n
}

#[test]
fn head_shapes_for_default_config() {
    let cfg = ModelConfig::default();
    let model = build_model(&cfg).unwrap();
    assert!(model.is_topologically_ordered());
    assert_eq!(model.head_strides(), vec![4, 8, 16, 32]);
    let params = model.init_params(0).unwrap();
    let outs = model.run(&params, &image(64, 1)).unwrap();
    let sizes: Vec<_> = outs.iter().map(|t| t.dims()).collect();
    let c = cfg.num_classes + 4;
    assert_eq!(
        sizes,
        vec![[1, c, 16, 16], [1, c, 8, 8], [1, c, 4, 4], [1, c, 2, 2]]
    );
    assert!(outs.iter().all(Tensor::is_finite));
}

#[test]
fn param_count_matches_closed_form() {
    let variants = [
        ModelConfig::default(),
        ModelConfig {
            depth: 2,
            base_width: 12,
            num_classes: 7,
            ..ModelConfig::default()
        },
        ModelConfig {
            use_p2: false,
            ..ModelConfig::default()
        },
        ModelConfig {
            use_dysample: false,
            depth: 0,
            ..ModelConfig::default()
        },
    ];
    for cfg in variants {
        let model = build_model(&cfg).unwrap();
        assert_eq!(model.param_count(), expected_param_count(&cfg), "{cfg:?}");
        assert_eq!(
            model.init_params(0).unwrap().total_elems(),
            model.param_count()
        );
    }
}

#[test]
fn toggles_keep_shapes_and_change_outputs() {
    let base = ModelConfig::default();
    let x = image(64, 2);
    let run = |cfg: &ModelConfig| {
        let m = build_model(cfg).unwrap();
        m.run(&m.init_params(5).unwrap(), &x).unwrap()
    };
    let full = run(&base);

    let no_p2 = run(&ModelConfig {
        use_p2: false,
        ..base.clone()
    });
    assert_eq!(no_p2.len(), 3);
    assert_eq!(no_p2[0].dims(), full[1].dims());
    assert_ne!(no_p2[0], full[1]);

    let nearest = run(&ModelConfig {
        use_dysample: false,
        ..base.clone()
    });
    assert_eq!(nearest.len(), 4);
    for (a, b) in nearest.iter().zip(&full) {
        assert_eq!(a.dims(), b.dims());
    }
    assert_ne!(nearest[0], full[0]);
}

#[test]
fn forward_is_deterministic_across_thread_counts() {
    let model = build_model(&ModelConfig::default()).unwrap();
    let params = model.init_params(3).unwrap();
    let x = image(64, 4);
    let reference = model.run(&params, &x).unwrap();
    assert_eq!(model.run(&params, &x).unwrap(), reference);
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        assert_eq!(pool.install(|| model.run(&params, &x).unwrap()), reference);
    }
}

#[test]
fn initialization_is_seeded_and_matches_fan_in() {
    let model = build_model(&ModelConfig::default()).unwrap();
    let a = model.init_params(11).unwrap();
    assert_eq!(a, model.init_params(11).unwrap());
    let b = model.init_params(12).unwrap();
    assert_ne!(a, b);

    // FanIn uniform: variance 1/(3·fan_in)
    let w = a.require("backbone.p5.down.conv.weight").unwrap();
    let fan_in = (w.dims()[1] * 9) as f64;
    let n = w.len() as f64;
    let mean = w.data().iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = w
        .data()
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let expected = 1.0 / (3.0 * fan_in);
    assert!(
        (var / expected - 1.0).abs() < 0.05,
        "variance {var} vs {expected}"
    );
    let bound = (1.0 / fan_in).sqrt() as f32;
    assert!(w.data().iter().all(|v| v.abs() <= bound));
    assert!(a
        .require("backbone.p5.down.affine.scale")
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 1.0));
}

#[test]
fn bad_inputs_are_named() {
    let model = build_model(&ModelConfig::default()).unwrap();
    let params = model.init_params(0).unwrap();
    assert!(model.run(&params, &image(32, 0)).is_err());
    let err =
        ModelConfig::from_json(r#"{"num_classes":0,"base_width":2,"depth":1,"input_size":50}"#)
            .unwrap_err();
    let msg = err.to_string();
    for field in ["input_size", "base_width", "num_classes"] {
        assert!(msg.contains(field), "{msg}");
    }
    assert!(ModelConfig::from_json(
        r#"{"num_classes":1,"base_width":8,"depth":1,"input_size":64,"extra":1}"#
    )
    .is_err());
    let cfg = ModelConfig {
        seed: 9,
        ..ModelConfig::default()
    };
    assert_eq!(ModelConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}
