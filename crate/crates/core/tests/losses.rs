use voxcore::gradcheck::{grad_check, GradCheckOptions, Stencil};
use voxcore::{Element, Graph, Tensor, Var, VoxError};
use voxcycle::losses::*;
use voxcycle::Error;

fn rand_tensor<T: Element>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut s = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(17);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        T::from_f64(((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0)
    })
}

fn vals(t: &Tensor<f64>) -> Vec<f64> {
    t.data().to_vec()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

fn scalar(g: &Graph<f64>, v: Var) -> f64 {
    g.value(v).item().unwrap()
}

#[test]
fn lsgan_values() {
    let mut g = Graph::<f64>::new();
    let ones = g.constant(Tensor::full(&[1, 1, 2, 2, 2], 1.0));
    let zeros = g.constant(Tensor::zeros(&[1, 1, 2, 2, 2]));
    let perfect = lsgan_discriminator_loss(&mut g, ones, zeros).unwrap();
    let worst = lsgan_discriminator_loss(&mut g, zeros, ones).unwrap();
    assert_eq!(scalar(&g, perfect), 0.0);
    assert_eq!(scalar(&g, worst), 2.0);
    let fooled = lsgan_generator_loss(&mut g, ones);
    let caught = lsgan_generator_loss(&mut g, zeros);
    assert_eq!((scalar(&g, fooled), scalar(&g, caught)), (0.0, 1.0));

    let (r, f) = (
        rand_tensor::<f64>(&[2, 1, 3, 3, 2], 1),
        rand_tensor::<f64>(&[2, 1, 3, 3, 2], 2),
    );
    let want_d = mean(&vals(&r).iter().map(|x| (x - 1.0).powi(2)).collect::<Vec<_>>())
        + mean(&vals(&f).iter().map(|x| x * x).collect::<Vec<_>>());
    let want_g = mean(&vals(&f).iter().map(|x| (x - 1.0).powi(2)).collect::<Vec<_>>());
    let (rv, fv) = (g.constant(r), g.constant(f));
    let d = lsgan_discriminator_loss(&mut g, rv, fv).unwrap();
    let gl = lsgan_generator_loss(&mut g, fv);
    assert!((scalar(&g, d) - want_d).abs() < 1e-6);
    assert!((scalar(&g, gl) - want_g).abs() < 1e-6);
}

#[test]
fn cycle_values() {
    let mut g = Graph::<f64>::new();
    let shape = [1, 1, 2, 3, 4];
    let x = g.constant(rand_tensor(&shape, 3));
    let y = g.constant(rand_tensor(&shape, 4));
    let same = cycle_loss(&mut g, x, x, y, y).unwrap();
    assert_eq!(scalar(&g, same), 0.0);
    let z = g.constant(Tensor::zeros(&shape));
    let half = g.constant(Tensor::full(&shape, 0.5));
    let l = cycle_loss(&mut g, z, half, y, y).unwrap();
    assert_eq!(scalar(&g, l), 0.5);

    let (a, b, c, d) = (
        rand_tensor::<f64>(&shape, 5),
        rand_tensor(&shape, 6),
        rand_tensor(&shape, 7),
        rand_tensor(&shape, 8),
    );
    let mae = |p: &Tensor<f64>, q: &Tensor<f64>| {
        mean(
            &p.data()
                .iter()
                .zip(q.data())
                .map(|(u, v)| (u - v).abs())
                .collect::<Vec<_>>(),
        )
    };
    let want = mae(&b, &a) + mae(&d, &c);
    let vs: Vec<Var> = [a, b, c, d].into_iter().map(|t| g.constant(t)).collect();
    let l = cycle_loss(&mut g, vs[0], vs[1], vs[2], vs[3]).unwrap();
    assert!((scalar(&g, l) - want).abs() < 1e-6);

    let other = g.constant(Tensor::zeros(&[1, 1, 2, 3, 5]));
    assert!(cycle_loss(&mut g, x, other, y, y).is_err());
}

#[test]
fn exact_pearson() {
    // Deviations (-1.5, -0.5, 0.5, 1.5) and (-1.75, 0.25, 1.25, 0.25):
    // sum of products 3.5, sums of squares 5 and 4.75.
    let r = pearson(&[1.0f64, 2.0, 3.0, 4.0], &[2.0f64, 4.0, 5.0, 4.0]).unwrap();
    assert!((r - 3.5 / 23.75f64.sqrt()).abs() < 1e-12, "{r}");
    assert!((r - 0.718_184_846_459_607_8).abs() < 1e-12);
    let x: Vec<f64> = vals(&rand_tensor(&[50], 9));
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-12);
    let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v + 2.0).collect();
    let y: Vec<f64> = vals(&rand_tensor(&[50], 10));
    assert!((pearson(&scaled, &y).unwrap() - pearson(&x, &y).unwrap()).abs() < 1e-12);
    assert!((pearson(&x, &y).unwrap() - pearson(&y, &x).unwrap()).abs() < 1e-15);
    assert!((pearson(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs() < 1e-12);
    assert!(matches!(
        pearson(&[1.0f64, 1.0, 1.0], &[1.0f64, 1.0, 1.0]),
        Err(Error::Metric(_))
    ));
}

#[test]
fn guarded_pearson_matches_exact_and_stays_finite() {
    let mut g = Graph::<f64>::new();
    let (a, b) = (
        rand_tensor::<f64>(&[1, 1, 3, 3, 3], 11),
        rand_tensor::<f64>(&[1, 1, 3, 3, 3], 12),
    );
    let want = oracle_pearson(a.data(), b.data());
    let (av, bv) = (g.constant(a), g.constant(b));
    let r = pearson_guarded(&mut g, av, bv).unwrap();
    assert!((scalar(&g, r) - want).abs() < 1e-6);
    let c = g.constant(Tensor::full(&[1, 1, 3, 3, 3], 0.3));
    let r = pearson_guarded(&mut g, c, c).unwrap();
    assert!(scalar(&g, r).is_finite());
}

#[test]
fn corcoe_values() {
    let opts = CorCoeOptions::default();
    let mut g = Graph::<f64>::new();
    let shape = [1, 1, 3, 3, 2];
    let (xt, yt) = (rand_tensor::<f64>(&shape, 13), rand_tensor::<f64>(&shape, 14));
    let negx = xt.map(|v| -v);
    let (x, y, nx) = (g.constant(xt.clone()), g.constant(yt.clone()), g.constant(negx));
    let l = corcoe_loss(&mut g, x, x, y, y, &opts).unwrap();
    assert!(scalar(&g, l).abs() < 1e-7);
    let l = corcoe_loss(&mut g, x, nx, y, y, &opts).unwrap();
    assert!((scalar(&g, l) - 2.0).abs() < 1e-7);

    let (gx, fy) = (rand_tensor::<f64>(&shape, 15), rand_tensor::<f64>(&shape, 16));
    let want = 2.0 - oracle_pearson(gx.data(), xt.data()) - oracle_pearson(fy.data(), yt.data());
    let (gv, fv) = (g.constant(gx.clone()), g.constant(fy.clone()));
    let l = corcoe_loss(&mut g, x, gv, y, fv, &opts).unwrap();
    assert!((scalar(&g, l) - want).abs() < 1e-6);

    let raw = CorCoeOptions {
        sign: CorCoeSign::Raw,
        ..opts
    };
    let l = corcoe_loss(&mut g, x, gv, y, fv, &raw).unwrap();
    assert!((scalar(&g, l) - (2.0 - want)).abs() < 1e-6);
}

#[test]
fn per_channel_corcoe_averages_channels() {
    let shape = [1, 3, 2, 2, 2];
    let (xt, gt) = (rand_tensor::<f64>(&shape, 17), rand_tensor::<f64>(&shape, 18));
    let per: f64 = (0..3)
        .map(|c| oracle_pearson(&gt.data()[c * 8..(c + 1) * 8], &xt.data()[c * 8..(c + 1) * 8]))
        .sum::<f64>()
        / 3.0;
    let mut g = Graph::<f64>::new();
    let (x, gx) = (g.constant(xt), g.constant(gt));
    let opts = CorCoeOptions {
        per_channel: true,
        ..Default::default()
    };
    let l = corcoe_loss(&mut g, x, gx, x, x, &opts).unwrap();
    assert!((scalar(&g, l) - (1.0 - per)).abs() < 1e-6);
}

#[test]
fn full_objective_composition() {
    let mut g = Graph::<f64>::new();
    let mut c = |v: f64| g.constant(Tensor::scalar(v));
    let t = GeneratorTerms {
        g_adv: c(0.25),
        f_adv: c(0.5),
        cycle: c(3.0),
        corcoe: c(7.0),
    };
    let zero = LossWeights {
        lambda_cycle: 0.0,
        beta_corcoe: 0.0,
    };
    let l = full_objective(&mut g, &t, &zero).unwrap();
    assert_eq!(scalar(&g, l), 0.75);
    let ones = GeneratorTerms {
        g_adv: g.constant(Tensor::scalar(1.0)),
        ..t
    };
    let ones = GeneratorTerms {
        f_adv: ones.g_adv,
        cycle: ones.g_adv,
        corcoe: ones.g_adv,
        ..ones
    };
    let l = full_objective(&mut g, &ones, &LossWeights::default()).unwrap();
    assert_eq!(scalar(&g, l), 4.0);
    assert_eq!(
        LossWeights::default(),
        LossWeights {
            lambda_cycle: 1.0,
            beta_corcoe: 1.0
        }
    );
    let nan = g.constant(Tensor::scalar(f64::NAN));
    let bad = GeneratorTerms { cycle: nan, ..t };
    match full_objective(&mut g, &bad, &LossWeights::default()) {
        Err(Error::NonFinite { term }) => assert_eq!(term, "cycle"),
        other => panic!("{other:?}"),
    }
    assert!(LossWeights {
        lambda_cycle: -1.0,
        beta_corcoe: 1.0
    }
    .validate()
    .is_err());
}

fn to_vox(e: Error) -> VoxError {
    VoxError::Config {
        op: "loss",
        reason: e.to_string(),
    }
}

type LossFn<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> voxcore::Result<Var>>;

fn loss_cases<T: Element>(s: [usize; 5]) -> Vec<(&'static str, Vec<Tensor<T>>, LossFn<T>)> {
    let t = |seed| rand_tensor::<T>(&s, seed);
    let w = LossWeights {
        lambda_cycle: 1.5,
        beta_corcoe: 0.7,
    };
    vec![
        (
            "lsgan_d",
            vec![t(1), t(2)],
            Box::new(|g, p| lsgan_discriminator_loss(g, p[0], p[1]).map_err(to_vox)),
        ),
        (
            "lsgan_g",
            vec![t(3)],
            Box::new(|g, p| Ok(lsgan_generator_loss(g, p[0]))),
        ),
        (
            "cycle",
            vec![t(4), t(5), t(6), t(7)],
            Box::new(|g, p| cycle_loss(g, p[0], p[1], p[2], p[3]).map_err(to_vox)),
        ),
        (
            "corcoe",
            vec![t(8), t(9), t(10), t(11)],
            Box::new(|g, p| corcoe_loss(g, p[0], p[1], p[2], p[3], &CorCoeOptions::default()).map_err(to_vox)),
        ),
        (
            "full_objective",
            vec![t(12), t(13), t(14), t(15), t(16), t(17), t(18), t(19)],
            Box::new(move |g, p| {
                let (x, gx, fgx, y, fy, gfy, dgx, dfy) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
                let terms = GeneratorTerms {
                    g_adv: lsgan_generator_loss(g, dgx),
                    f_adv: lsgan_generator_loss(g, dfy),
                    cycle: cycle_loss(g, x, fgx, y, gfy).map_err(to_vox)?,
                    corcoe: corcoe_loss(g, x, gx, y, fy, &CorCoeOptions::default()).map_err(to_vox)?,
                };
                full_objective(g, &terms, &w).map_err(to_vox)
            }),
        ),
    ]
}

fn check_all<T: Element>(shape: [usize; 5], opts: &GradCheckOptions, tol: f64) {
    for (name, params, f) in loss_cases::<T>(shape) {
        let r = grad_check(f, &params, opts).unwrap();
        assert!(r.checked > 0 && r.max_rel_error < tol, "{} {name}: {r:?}", T::NAME);
    }
}

#[test]
fn loss_gradients_f64() {
    check_all::<f64>(
        [1, 1, 2, 3, 3],
        &GradCheckOptions {
            max_coords: 18,
            ..Default::default()
        },
        1e-5,
    );
}

#[test]
fn loss_gradients_f32() {
    check_all::<f32>(
        [1, 1, 2, 2, 2],
        &GradCheckOptions {
            max_coords: 18,
            step: 5e-2,
            stencil: Stencil::FivePoint,
            ..Default::default()
        },
        1e-3,
    );
}
