use voxcore::{Graph, Tensor};
use voxcycle::data::phantom::{generate_phantoms, PhantomSpec};
use voxcycle::data::{normalize, Direction};
use voxcycle::losses::LossWeights;
use voxcycle::models::{generator_forward, Architecture};
use voxcycle::training::*;
use voxcycle::Error;

fn tiny() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        decay_start_epoch: 1,
        volume_shape: [16, 16, 16],
        base_width: 2,
        disc_base_width: 2,
        n_res_blocks: 1,
        pool_size: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn dataset(n: usize, seed: u64, ext: [usize; 3]) -> (Vec<NamedVolume>, Vec<NamedVolume>) {
    let cases = generate_phantoms(&PhantomSpec {
        n_cases: n,
        seed,
        extents: ext,
        ..Default::default()
    })
    .unwrap();
    let nv = |v: &voxcycle::data::Volume, id: &str| NamedVolume {
        id: id.to_string(),
        data: normalize(v, Direction::ToModel).unwrap().to_tensor(),
    };
    (
        cases.iter().map(|c| nv(&c.t1, &c.id)).collect(),
        cases.iter().map(|c| nv(&c.fa, &c.id)).collect(),
    )
}

fn quiet(_: TrainEvent) -> voxcycle::Result<()> {
    Ok(())
}

#[test]
fn schedule_values_are_exact() {
    let cfg = TrainConfig::default();
    let want = [
        (0, 2e-4),
        (50, 2e-4),
        (99, 2e-4),
        (100, 2e-4),
        (150, 1e-4),
        (199, 2e-6),
        (200, 0.0),
    ];
    for (e, lr) in want {
        assert_eq!(lr_at_epoch(e, &cfg).unwrap(), lr, "epoch {e}");
    }
    assert!(lr_at_epoch(201, &cfg).is_err());
    let mut prev = f64::INFINITY;
    for e in 0..=200 {
        let lr = lr_at_epoch(e, &cfg).unwrap();
        assert!(lr <= prev);
        prev = lr;
    }
}

/// Textbook bias-corrected Adam on `w^2`.
fn adam_oracle(w0: f64, lr: f64, b1: f64, b2: f64, eps: f64, steps: usize) -> Vec<f64> {
    let (mut w, mut m, mut v) = (w0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = 2.0 * w;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t as i32));
        let vh = v / (1.0 - b2.powi(t as i32));
        w -= lr * mh / (vh.sqrt() + eps);
        out.push(w);
    }
    out
}

#[test]
fn adam_tracks_reference_trajectory() {
    for (b1, b2) in [(0.5, 0.999), (0.9, 0.999)] {
        let hp = AdamParams {
            beta1: b1,
            beta2: b2,
            eps: 1e-8,
        };
        let oracle = adam_oracle(1.0, 0.1, b1, b2, 1e-8, 100);
        let mut st = AdamState::<f64>::zeros(&[&[1]]);
        let mut w = [1.0f64];
        for (t, want) in oracle.iter().enumerate() {
            let g = [2.0 * w[0]];
            st.step(&mut [("w", &mut w[..])], &[Some(&g[..])], 0.1, &hp).unwrap();
            assert!((w[0] - want).abs() < 1e-6, "step {}: {} vs {want}", t + 1, w[0]);
        }
        assert_eq!(st.t, 100);
        assert!(oracle[..10].windows(2).all(|p| p[1] < p[0]));
    }
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let hp = AdamParams::default();
    let mut st = AdamState::<f32>::zeros(&[&[3]]);
    let mut p = [0.5f32, -1.0, 2.0];
    st.step(&mut [("p", &mut p[..])], &[Some(&[3.0f32, -0.2, 7.0][..])], 1e-3, &hp)
        .unwrap();
    for (a, b) in p.iter().zip([0.5 - 1e-3, -1.0 + 1e-3, 2.0 - 1e-3]) {
        assert!((a - b).abs() < 1e-6);
    }
    let before = p;
    st.step(&mut [("p", &mut p[..])], &[None], 1e-3, &hp).unwrap();
    assert_eq!(st.t, 2);
    let mut z = AdamState::<f32>::zeros(&[&[3]]);
    let mut q = before;
    z.step(&mut [("q", &mut q[..])], &[Some(&[0.0f32; 3][..])], 1e-3, &hp)
        .unwrap();
    assert_eq!(q, before);
    assert_eq!(z.t, 1);
    let err = z
        .step(&mut [("q", &mut q[..])], &[Some(&[0.0, f32::NAN, 0.0][..])], 1e-3, &hp)
        .unwrap_err();
    assert!(err.to_string().contains("q"), "{err}");
    assert_eq!(q, before);
}

#[test]
fn image_pool_contract() {
    let t = |v: f32| Tensor::full(&[1, 2], v);
    let mut pool = ImagePool::new(5, 1);
    for i in 0..5 {
        assert_eq!(pool.query_one(t(i as f32)), t(i as f32));
    }
    let mut a = pool.clone();
    let mut b = pool.clone();
    let seq_a: Vec<_> = (0..1000).map(|i| a.query_one(t(100.0 + i as f32))).collect();
    let seq_b: Vec<_> = (0..1000).map(|i| b.query_one(t(100.0 + i as f32))).collect();
    assert_eq!(seq_a, seq_b);
    assert!(a.len() <= a.capacity());
    let swapped = seq_a
        .iter()
        .enumerate()
        .filter(|(i, r)| **r != t(100.0 + *i as f32))
        .count();
    assert!((350..650).contains(&swapped), "{swapped}");
    let mut off = ImagePool::new(0, 1);
    assert_eq!(off.query_one(t(9.0)), t(9.0));
    assert!(off.is_empty());
}

#[test]
fn discriminator_step_leaves_generator_gradients_zero() {
    let cfg = tiny();
    let models = CycleModels::build(&cfg).unwrap();
    let (xs, ys) = dataset(1, 0, [16, 16, 16]);
    let Architecture::Generator(gc) = models.g.architecture().clone() else {
        panic!()
    };
    let Architecture::Discriminator(dc) = models.d_y.architecture().clone() else {
        panic!()
    };
    let mut g = Graph::<f32>::new();
    let gb = models.g.bind(&mut g, true);
    let db = models.d_y.bind(&mut g, true);
    let x = g.constant(stack(&xs[0].data));
    let y = g.constant(stack(&ys[0].data));
    let fake = generator_forward(&mut g, &gc, &gb, x).unwrap();
    let loss = discriminator_objective(&mut g, &dc, &db, y, fake).unwrap();
    g.backward(loss).unwrap();
    for (name, v) in gb.iter() {
        if let Some(gr) = g.grad_data(v) {
            assert!(gr.iter().all(|&v| v == 0.0), "{name}");
        }
    }
    assert!(db
        .iter()
        .any(|(_, v)| g.grad_data(v).is_some_and(|d| d.iter().any(|&x| x != 0.0))));
}

fn stack(t: &Tensor<f32>) -> Tensor<f32> {
    Tensor::stack(std::slice::from_ref(t)).unwrap()
}

#[test]
fn single_step_is_reproducible_and_pool_free_at_first() {
    let cfg = tiny();
    let (xs, ys) = dataset(2, 1, [16, 16, 16]);
    let (x, y) = (stack(&xs[0].data), stack(&ys[1].data));
    let run = |pool: usize| {
        let cfg = TrainConfig {
            pool_size: pool,
            ..cfg.clone()
        };
        let mut m = CycleModels::build(&cfg).unwrap();
        let mut o = OptStates::new(&m);
        let mut p = Pools::new(cfg.pool_size, 0);
        (train_step(&mut m, &mut o, &mut p, &x, &y, &cfg, cfg.lr).unwrap(), m)
    };
    let (a, ma) = run(4);
    let (b, mb) = run(4);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c, _) = run(0);
    assert_eq!(
        (a.g_adv, a.f_adv, a.cycle, a.corcoe, a.total),
        (c.g_adv, c.f_adv, c.cycle, c.corcoe, c.total)
    );
    assert!((a.total - a.compose(&cfg.loss_weights)).abs() < 1e-5);
}

#[test]
fn heavy_cycle_weight_drives_cycle_loss_down() {
    let cfg = TrainConfig {
        loss_weights: LossWeights {
            lambda_cycle: 1e3,
            beta_corcoe: 1.0,
        },
        ..tiny()
    };
    let (xs, _) = dataset(1, 2, [16, 16, 16]);
    let x = stack(&xs[0].data);
    let mut m = CycleModels::build(&cfg).unwrap();
    let mut o = OptStates::new(&m);
    let mut p = Pools::new(cfg.pool_size, 0);
    let cycles: Vec<f64> = (0..50)
        .map(|_| train_step(&mut m, &mut o, &mut p, &x, &x, &cfg, cfg.lr).unwrap().cycle)
        .collect();
    assert!(cycles[49] < 0.5 * cycles[0], "{} -> {}", cycles[0], cycles[49]);
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let cfg = TrainConfig {
        epochs: 1,
        decay_start_epoch: 0,
        ..tiny()
    };
    let (xs, ys) = dataset(2, 4, [16, 16, 16]);
    let out = train(&xs, &ys, &cfg, None, &mut quiet).unwrap();
    let ck = out.checkpoint;
    assert_eq!(ck.epoch, 1);
    assert!(!ck.optim.is_zero());
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    ck.save(&p1).unwrap();
    let back = Checkpoint::load(&p1).unwrap();
    assert_eq!(back, ck);
    back.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let bytes = std::fs::read(&p1).unwrap();
    assert_eq!(&bytes[..4], b"VXCY");
    assert_eq!(
        u32::from_le_bytes(bytes[4..8].try_into().unwrap()),
        checkpoint::FORMAT_VERSION
    );
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let cfg = tiny();
    let (xs, ys) = dataset(3, 5, [16, 16, 16]);
    let csv = || {
        let out = train(&xs, &ys[..2], &cfg, None, &mut quiet).unwrap();
        assert_eq!(out.log.len(), cfg.epochs);
        assert!(out.log.iter().all(|e| e.losses.check_finite().is_ok()));
        let mut buf = Vec::new();
        write_loss_csv(&out.log, &mut buf).unwrap();
        (buf, out)
    };
    let (a, oa) = csv();
    let (b, _) = csv();
    assert_eq!(a, b);
    assert_eq!(read_loss_csv(&a[..]).unwrap(), oa.log);
    assert!(String::from_utf8(a).unwrap().starts_with(LOSS_CSV_HEADER));
}

#[test]
fn resume_continues_the_schedule() {
    let cfg = TrainConfig {
        epochs: 4,
        decay_start_epoch: 1,
        checkpoint_interval: 2,
        ..tiny()
    };
    let (xs, ys) = dataset(1, 6, [16, 16, 16]);
    let mut mid = None;
    let full = train(&xs, &ys, &cfg, None, &mut |e| {
        if let TrainEvent::Checkpoint {
            checkpoint,
            last: false,
        } = e
        {
            mid = Some(checkpoint.clone());
        }
        Ok(())
    })
    .unwrap();
    let mid = mid.expect("checkpoint at epoch 2");
    assert_eq!(mid.epoch, 2);
    let resumed = train(&xs, &ys, &cfg, Some(mid), &mut quiet).unwrap();
    let epochs: Vec<usize> = resumed.log.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, [2, 3]);
    for e in &resumed.log {
        assert_eq!(e.lr, lr_at_epoch(e.epoch, &cfg).unwrap());
        assert_eq!(e.lr, full.log[e.epoch].lr);
    }
    assert_eq!(resumed.checkpoint.epoch, 4);
}

#[test]
fn fine_tune_resets_optimizer_and_epochs() {
    let cfg = TrainConfig {
        epochs: 2,
        decay_start_epoch: 1,
        ..tiny()
    };
    let (xs, ys) = dataset(2, 7, [16, 16, 16]);
    let pre = train(&xs, &ys, &cfg, None, &mut quiet).unwrap().checkpoint;
    assert_eq!(pre.optim.g.t, 4);
    let ft_cfg = TrainConfig {
        epochs: 1,
        decay_start_epoch: 0,
        ..cfg.clone()
    };
    let out = fine_tune(&pre, &xs[..1], &ys[..1], &ft_cfg, &mut quiet).unwrap();
    assert_eq!(out.log[0].epoch, 0);
    assert_eq!(out.log[0].lr, ft_cfg.lr);
    assert_eq!(out.checkpoint.epoch, 1);
    assert_eq!(out.checkpoint.optim.g.t, 1);
    assert_ne!(out.checkpoint.models.g, pre.models.g);

    let dec = TrainConfig { channels: 3, ..ft_cfg };
    let err = fine_tune(&pre, &xs, &ys, &dec, &mut quiet).unwrap_err();
    assert!(matches!(err, Error::Incompatible(_)), "{err}");
}

#[test]
fn shape_drift_names_the_volume() {
    let cfg = tiny();
    let (mut xs, ys) = dataset(2, 8, [16, 16, 16]);
    xs[1].data = Tensor::zeros(&[1, 16, 16, 12]);
    xs[1].id = "odd".into();
    let err = train(&xs, &ys, &cfg, None, &mut quiet).unwrap_err().to_string();
    assert!(err.contains("odd"), "{err}");
}

#[test]
fn config_parsing_validates() {
    let cfg = TrainConfig::from_json(r#"{"epochs": 4, "decay_start_epoch": 2, "volume_shape": [32, 32, 16]}"#).unwrap();
    assert_eq!((cfg.lr, cfg.beta1, cfg.beta2, cfg.pool_size), (2e-4, 0.5, 0.999, 50));
    assert!(TrainConfig::from_json(r#"{"loss_weights": {"lambda_cycle": -1, "beta_corcoe": 1}}"#).is_err());
    assert!(TrainConfig::from_json(r#"{"epochs": 4, "decay_start_epoch": 4}"#).is_err());
    let err = TrainConfig::from_json("{\n  \"lr\": 1e-3,\n  \"bogus\": 1\n}")
        .unwrap_err()
        .to_string();
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
}
