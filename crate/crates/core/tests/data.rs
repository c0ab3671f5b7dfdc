use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use voxcycle::data::phantom::{generate_phantoms, gradient_magnitude, LesionSpec, PhantomSpec};
use voxcycle::data::{
    load_volume, manifest::*, minmax_unit, normalize, resize_trilinear, sample_unpaired, save_volume, stack_batch,
    Direction, Volume,
};
use voxcycle::Error;

fn ramp(ext: [usize; 3], a: [f32; 3], c: f32) -> Volume {
    Volume::from_fn(ext, |d, h, w| {
        let u = [d, h, w].map(|x| x as f32);
        let n = ext.map(|x| (x - 1) as f32);
        c + a[0] * u[0] / n[0] + a[1] * u[1] / n[1] + a[2] * u[2] / n[2]
    })
}

#[test]
fn resize_reproduces_affine_fields() {
    let src = ramp([5, 7, 4], [0.3, -0.2, 0.1], 0.5);
    for target in [[9, 3, 4], [2, 2, 2], [16, 11, 5]] {
        let out = resize_trilinear(&src, target).unwrap();
        let want = ramp(target, [0.3, -0.2, 0.1], 0.5);
        assert_eq!(out.extents(), target);
        let err = out
            .voxels()
            .iter()
            .zip(want.voxels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(err < 1e-5, "{target:?}: {err}");
        assert_eq!(out.voxels()[0], src.voxels()[0]);
        assert!((out.voxels().last().unwrap() - src.voxels().last().unwrap()).abs() < 1e-6);
    }
}

#[test]
fn resize_constant_identity_and_spacing() {
    let c = Volume::filled([4, 4, 4], 1, 0.25)
        .unwrap()
        .with_spacing([1.0, 2.0, 3.0])
        .unwrap();
    let out = resize_trilinear(&c, [7, 4, 2]).unwrap();
    assert!(out.voxels().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    assert_eq!(out.spacing(), [0.5, 2.0, 9.0]);
    let r = ramp([5, 6, 7], [1.0, 1.0, 1.0], 0.0);
    assert_eq!(resize_trilinear(&r, [5, 6, 7]).unwrap().voxels(), r.voxels());
    assert!(matches!(resize_trilinear(&r, [1, 6, 7]), Err(Error::Config { .. })));
}

#[test]
fn normalize_maps_both_ways() {
    let v = Volume::new([3, 1, 1], 1, vec![0.0, 0.5, 1.0]).unwrap();
    let m = normalize(&v, Direction::ToModel).unwrap();
    assert_eq!(m.voxels(), &[-1.0, 0.0, 1.0]);
    let back = normalize(&m, Direction::ToPhysical).unwrap();
    assert_eq!(back.voxels(), v.voxels());
    let bad = Volume::new([1, 1, 1], 1, vec![1.01]).unwrap();
    assert!(matches!(normalize(&bad, Direction::ToModel), Err(Error::Range(_))));
    let dec = Volume::new([1, 1, 1], 3, vec![0.0, 0.25, 1.0]).unwrap();
    assert_eq!(
        normalize(&dec, Direction::ToModel).unwrap().voxels(),
        &[-1.0, -0.5, 1.0]
    );
    let u = minmax_unit(&Volume::new([2, 1, 1], 1, vec![3.0, 7.0]).unwrap());
    assert_eq!(u.voxels(), &[0.0, 1.0]);
}

#[test]
fn phantoms_are_deterministic_and_in_range() {
    let spec = PhantomSpec {
        n_cases: 3,
        seed: 11,
        ..Default::default()
    };
    let a = generate_phantoms(&spec).unwrap();
    let b = generate_phantoms(&spec).unwrap();
    assert_eq!(a, b);
    for c in &a {
        for v in [&c.t1, &c.fa] {
            let (lo, hi) = v.min_max();
            assert!(lo >= 0.0 && hi <= 1.0);
        }
        assert!(c.mask.voxels().iter().all(|&m| m == 0.0));
        assert_eq!(gradient_magnitude(&c.field.render(spec.extents)), c.fa);
    }
    let other = generate_phantoms(&PhantomSpec { seed: 12, ..spec }).unwrap();
    assert_ne!(other[0].t1, a[0].t1);
}

#[test]
fn lesions_mark_masks_and_drop_intensity() {
    let spec = PhantomSpec {
        n_cases: 4,
        seed: 3,
        lesion: Some(LesionSpec::default()),
        ..Default::default()
    };
    for c in generate_phantoms(&spec).unwrap() {
        let inside = c.mask.voxels().iter().filter(|&&m| m == 1.0).count();
        assert!(inside > 0, "{}", c.id);
        assert!(c.mask.voxels().iter().all(|&m| m == 0.0 || m == 1.0));
        let clean = gradient_magnitude(&c.field.render(spec.extents));
        for (k, &m) in c.mask.voxels().iter().enumerate() {
            if m == 1.0 {
                assert_eq!(c.fa.voxels()[k], clean.voxels()[k] * 0.4);
            }
        }
    }
    let huge = PhantomSpec {
        lesion: Some(LesionSpec {
            radius: [30.0, 31.0],
            ..Default::default()
        }),
        ..spec
    };
    assert!(matches!(generate_phantoms(&huge), Err(Error::Data(_))));
}

#[test]
fn uniform_head_has_flat_interior_fa() {
    let spec = PhantomSpec {
        n_cases: 2,
        extents: [32, 32, 32],
        noise_sigma: 0.0,
        field_amplitude: 0.0,
        structure_contrast: 0.0,
        ..Default::default()
    };
    for c in generate_phantoms(&spec).unwrap() {
        let (mut sum, mut n, mut boundary) = (0.0f64, 0, 0.0f32);
        for d in 0..32 {
            for h in 0..32 {
                for w in 0..32 {
                    let r = c.field.head_radius([d as f32, h as f32, w as f32]);
                    let fa = c.fa.voxels()[c.fa.index(d, h, w)];
                    if r < 0.7 {
                        sum += fa as f64;
                        n += 1;
                    } else if (r - 1.0).abs() < 0.05 {
                        boundary = boundary.max(fa);
                    }
                }
            }
        }
        assert!(n > 0);
        assert!(sum / (n as f64) < 0.05, "interior mean {}", sum / n as f64);
        assert!(boundary > 0.5, "boundary ridge {boundary}");
    }
}

#[test]
fn unpaired_sampling_covers_and_repeats() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut seen_x = [false; 13];
    let mut seen_y = [false; 7];
    for _ in 0..10_000 {
        let (xs, ys) = sample_unpaired(13, 7, 1, &mut rng).unwrap();
        seen_x[xs[0]] = true;
        seen_y[ys[0]] = true;
    }
    assert!(seen_x.iter().all(|&s| s) && seen_y.iter().all(|&s| s));
    let draw = |s| sample_unpaired(13, 7, 4, &mut ChaCha8Rng::seed_from_u64(s)).unwrap();
    assert_eq!(draw(1), draw(1));
    assert!(sample_unpaired(0, 7, 1, &mut rng).is_err());

    let t = Volume::filled([4, 4, 4], 1, 0.0).unwrap().to_tensor();
    let b = stack_batch(&[&t, &t, &t]).unwrap();
    assert_eq!(b.shape(), &[3, 1, 4, 4, 4]);
}

#[test]
fn volume_files_round_trip_by_extension() {
    let dir = tempfile::tempdir().unwrap();
    let v = ramp([4, 3, 2], [0.1, 0.2, 0.3], 0.1)
        .with_spacing([1.0, 1.5, 2.0])
        .unwrap();
    for name in ["a.nii", "b.vjson"] {
        let p = dir.path().join(name);
        save_volume(&p, &v).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.voxels(), v.voxels());
        assert_eq!(back.affine(), v.affine());
        assert_eq!(back.spacing(), v.spacing());
    }
    assert!(dir.path().join("b.vraw").exists());
}

#[test]
fn manifest_round_trip_and_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dataset.json");
    let m = DatasetManifest {
        root: dir.path().to_path_buf(),
        entries: vec![
            ManifestEntry {
                id: "a".into(),
                t1: "t1/a.nii".into(),
                fa: "fa/a.nii".into(),
                mask: None,
            },
            ManifestEntry {
                id: "b".into(),
                t1: "t1/b.nii".into(),
                fa: "fa/b.nii".into(),
                mask: Some("m/b.nii".into()),
            },
        ],
    };
    m.save(&path).unwrap();
    let back = DatasetManifest::load(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.resolve(&back.entries[0].t1), dir.path().join("t1/a.nii"));
    let text = std::fs::read_to_string(&path).unwrap().replace("\"b\"", "\"a\"");
    std::fs::write(&path, text).unwrap();
    assert!(matches!(DatasetManifest::load(&path), Err(Error::Data(_))));
}
