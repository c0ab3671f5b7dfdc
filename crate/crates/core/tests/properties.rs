use proptest::prelude::*;
use voxcycle::data::{normalize, resize_trilinear, Direction, Volume};
use voxcycle::losses::pearson;
use voxcycle::metrics::{psnr, ssim3d, MetricWindow};

fn volume(ext: [usize; 3]) -> impl Strategy<Value = Volume> {
    let n = ext.iter().product::<usize>();
    prop::collection::vec(0.0f32..=1.0, n).prop_map(move |v| Volume::new(ext, 1, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pearson_is_bounded_symmetric_and_affine_invariant(
        pairs in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..40),
        scale in 0.1f64..5.0,
        shift in -3.0f64..3.0,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assume!(pearson(&a, &a).is_ok() && pearson(&b, &b).is_ok());
        let r = pearson(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert_eq!(r, pearson(&b, &a).unwrap());
        let moved: Vec<f64> = a.iter().map(|x| x * scale + shift).collect();
        prop_assert!((pearson(&moved, &b).unwrap() - r).abs() < 1e-9);
    }

    #[test]
    fn normalize_round_trips(v in volume([3, 4, 2])) {
        let back = normalize(&normalize(&v, Direction::ToModel).unwrap(), Direction::ToPhysical).unwrap();
        for (x, y) in v.voxels().iter().zip(back.voxels()) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn resize_keeps_range_and_constants(v in volume([4, 3, 5]), c in 0.0f32..1.0, t in (2usize..9, 2usize..9, 2usize..9)) {
        let target = [t.0, t.1, t.2];
        let r = resize_trilinear(&v, target).unwrap();
        let (lo, hi) = v.min_max();
        prop_assert!(r.voxels().iter().all(|&x| x >= lo - 1e-6 && x <= hi + 1e-6));
        let flat = Volume::filled([4, 3, 5], 1, c).unwrap();
        prop_assert!(resize_trilinear(&flat, target).unwrap().voxels().iter().all(|&x| (x - c).abs() <= 1e-6));
    }

    #[test]
    fn ssim_symmetric_and_at_most_one(a in volume([7, 8, 7]), b in volume([7, 8, 7])) {
        let w = MetricWindow::default();
        let s = ssim3d(&a, &b, &w).unwrap();
        prop_assert_eq!(s, ssim3d(&b, &a, &w).unwrap());
        prop_assert!(s <= 1.0 + 1e-12);
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
    }
}
