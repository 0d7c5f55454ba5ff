use proptest::prelude::*;

use rnr::image::{Mask, ProbMap};
use rnr::metrics;
use rnr::planner::CameraModel;

fn pair() -> impl Strategy<Value = (ProbMap, Mask)> {
    (1usize..10, 1usize..10).prop_flat_map(|(w, h)| {
        (
            prop::collection::vec(0.0f32..=1.0, w * h),
            prop::collection::vec(any::<bool>(), w * h),
            0..w * h,
        )
            .prop_map(move |(p, mut g, forced)| {
                g[forced] = true;
                let mut m = Mask::new(w, h);
                m.data = g;
                (ProbMap::new(w, h, p).unwrap(), m)
            })
    })
}

proptest! {
    #[test]
    fn recall_is_monotone_in_k((p, gt) in pair()) {
        let n = p.data.len();
        let hits: Vec<bool> = (1..=n).map(|k| metrics::recall_at_k(&p, &gt, k).unwrap()).collect();
        prop_assert!(hits.windows(2).all(|w| !w[0] || w[1]));
        prop_assert!(hits[n - 1]);
        prop_assert_eq!(hits[0], metrics::pointing_game(&p, &gt).unwrap());
    }

    #[test]
    fn iou_is_a_fraction((p, gt) in pair(), t in 0.05f32..0.95) {
        let iou = metrics::overall_iou(&[p.clone()], &[gt.clone()], t).unwrap();
        prop_assert!((0.0..=1.0).contains(&iou));
        let exact = ProbMap::new(gt.width, gt.height, gt.to_f32()).unwrap();
        prop_assert_eq!(metrics::overall_iou(&[exact], &[gt], t).unwrap(), 1.0);
    }

    #[test]
    fn ground_projection_round_trips(x in -8.0f64..8.0, y in 0.5f64..40.0) {
        let cam = CameraModel::synthetic(64);
        let (u, v) = cam.ground_to_pixel(x, y).unwrap();
        let (x2, y2) = cam.pixel_to_ground(u, v).unwrap();
        prop_assert!((x - x2).abs() < 1e-9 && (y - y2).abs() < 1e-9);
    }
}
