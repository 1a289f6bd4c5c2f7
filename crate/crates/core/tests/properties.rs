use demandgraph_core::eval::accuracy_one_off;
use demandgraph_core::geo::{LatLon, LocalProjection, Point, Polygon};
use demandgraph_core::grid::HexGrid;
use demandgraph_core::time::bin_time;
use proptest::prelude::*;

fn pairs() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..50.0f64, 0.0..50.0f64), 1..60)
}

proptest! {
    #[test]
    fn accuracy_ignores_joint_permutation(v in pairs(), seed in any::<u64>()) {
        let (pred, actual): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
        let mut shuffled = v.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            let j = (seed.wrapping_mul(6364136223846793005).wrapping_add(i as u64) >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let (p2, a2): (Vec<f64>, Vec<f64>) = shuffled.into_iter().unzip();
        prop_assert_eq!(accuracy_one_off(&pred, &actual).unwrap(), accuracy_one_off(&p2, &a2).unwrap());
    }

    #[test]
    fn accuracy_ignores_a_common_shift(pred in prop::collection::vec(0i32..40, 1..60), c in -20i32..20) {
        // integer-valued data keeps the shifted errors exact
        let actual: Vec<f64> = pred.iter().enumerate().map(|(i, &p)| f64::from(p + (i as i32 % 5) - 2)).collect();
        let pred: Vec<f64> = pred.iter().map(|&p| f64::from(p)).collect();
        let shift = |v: &[f64]| v.iter().map(|x| x + f64::from(c)).collect::<Vec<_>>();
        prop_assert_eq!(accuracy_one_off(&pred, &actual).unwrap(), accuracy_one_off(&shift(&pred), &shift(&actual)).unwrap());
    }

    #[test]
    fn accuracy_is_a_fraction(v in pairs()) {
        let (pred, actual): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let a = accuracy_one_off(&pred, &actual).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn planar_points_locate_to_the_nearest_center(x in -4.0..4.0f64, y in -4.0..4.0f64) {
        let center = LatLon::new(37.77, -122.42);
        let proj = LocalProjection::new(center);
        let sw = proj.inverse(Point::new(-5.0, -5.0));
        let ne = proj.inverse(Point::new(5.0, 5.0));
        let grid = HexGrid::build(&Polygon::rectangle(sw.lat, sw.lon, ne.lat, ne.lon).unwrap(), 1.0).unwrap();
        let p = grid.projection().forward(proj.inverse(Point::new(x, y)));
        let got = grid.locate_planar(p).unwrap();
        let best = (0..grid.len()).map(|c| grid.cell(c).center.dist(p)).fold(f64::INFINITY, f64::min);
        prop_assert!((grid.cell(got).center.dist(p) - best).abs() < 1e-9);
    }

    #[test]
    fn bins_are_left_closed(offset in 0i64..1_000_000, interval in 1u32..120) {
        let epoch = 1_700_000_000;
        let k = bin_time(epoch + offset, interval, epoch).unwrap().0 as i64;
        let width = i64::from(interval) * 60;
        prop_assert!(k * width <= offset && offset < (k + 1) * width);
    }
}
