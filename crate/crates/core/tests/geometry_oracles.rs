mod common;

use num_rational::BigRational;
use num_bigint::BigInt;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use replaybench::geometry::{
    obb_intersects, point_in_polygon, project_onto_polyline, ray_first_hit, signed_side, OrientedBox, Segment, Vec2,
};

use common::{brute_hit_distance, contains_point, random_box, sampling_overlap};

#[test]
fn sat_matches_sampling_oracle_on_the_worked_example() {
    let a = OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 4.0, 2.0);
    let b = OrientedBox::new(Vec2::new(3.0, 0.0), 45f64.to_radians(), 4.0, 2.0);
    assert_eq!(sampling_overlap(&a, &b, 200), Some(true));
    assert!(obb_intersects(&a, &b));
}

#[test]
fn sat_agrees_with_sampling_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut judged, mut skipped) = (0, 0);
    for _ in 0..2000 {
        let a = random_box(&mut rng, 5.0);
        let b = random_box(&mut rng, 5.0);
        match sampling_overlap(&a, &b, 100) {
            Some(expect) => {
                judged += 1;
                assert_eq!(obb_intersects(&a, &b), expect, "{a:?} {b:?}");
            }
            None => skipped += 1,
        }
    }
    assert!(skipped * 20 < judged, "too many pairs inside the oracle margin: {skipped}");
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

/// Winding number with exact rational orientation tests.
fn exact_winding(poly: &[Vec2], p: Vec2) -> i32 {
    let (px, py) = (rat(p.x), rat(p.y));
    let zero = BigRational::from_integer(BigInt::from(0));
    let mut w = 0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let (ax, ay, bx, by) = (rat(a.x), rat(a.y), rat(b.x), rat(b.y));
        let cross = (&bx - &ax) * (&py - &ay) - (&by - &ay) * (&px - &ax);
        if ay <= py {
            if by > py && cross > zero {
                w += 1;
            }
        } else if by <= py && cross < zero {
            w -= 1;
        }
    }
    w
}

#[test]
fn concave_notch_matches_exact_winding() {
    // U shape: notch between x = 2 and x = 4 above y = 2.
    let u = vec![
        Vec2::new(0.0, 0.0),
        Vec2::new(6.0, 0.0),
        Vec2::new(6.0, 6.0),
        Vec2::new(4.0, 6.0),
        Vec2::new(4.0, 2.0),
        Vec2::new(2.0, 2.0),
        Vec2::new(2.0, 6.0),
        Vec2::new(0.0, 6.0),
    ];
    let notch = Vec2::new(3.0, 4.0);
    assert_eq!(exact_winding(&u, notch), 0);
    assert!(!point_in_polygon(&u, notch));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5000 {
        let p = Vec2::new(rng.gen_range(-1.0..7.0), rng.gen_range(-1.0..7.0));
        let on_edge = (0..u.len()).any(|i| Segment::new(u[i], u[(i + 1) % u.len()]).distance_to(p) <= 1e-9);
        if on_edge {
            continue;
        }
        assert_eq!(point_in_polygon(&u, p), exact_winding(&u, p) != 0, "{p:?}");
    }
}

#[test]
fn ray_hits_unit_box_at_midpoint() {
    let b = OrientedBox::new(Vec2::new(5.0, 0.0), 0.0, 1.0, 1.0);
    let (i, d) = ray_first_hit(Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), &[b]).unwrap();
    assert_eq!(i, 0);
    assert!((d - 4.5).abs() < 1e-12);
    assert_eq!(ray_first_hit(Vec2::new(0.0, 0.0), Vec2::new(3.0, 0.0), &[b]), None);
}

#[test]
fn ray_first_hit_is_nearest_on_random_layouts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.gen_range(0..8);
        let boxes: Vec<OrientedBox> = (0..n).map(|_| random_box(&mut rng, 15.0)).collect();
        let origin = Vec2::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0));
        let target = Vec2::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0));
        if origin.dist(target) < 1e-3 {
            continue;
        }
        let brute = boxes
            .iter()
            .filter(|b| !contains_point(b, origin))
            .filter_map(|b| brute_hit_distance(origin, target, b))
            .filter(|&d| d < origin.dist(target) - 1e-9)
            .min_by(f64::total_cmp);
        match (ray_first_hit(origin, target, &boxes), brute) {
            (None, None) => {}
            (Some((i, d)), Some(bd)) => {
                assert!((d - bd).abs() < 1e-9, "{d} vs {bd}");
                let hit = origin.lerp(target, d / origin.dist(target));
                assert!(contains_point(&boxes[i], hit));
            }
            other => panic!("disagreement {other:?} origin {origin:?} target {target:?} boxes {boxes:?}"),
        }
    }
}

fn pt() -> impl Strategy<Value = Vec2> {
    (-50.0..50.0f64, -50.0..50.0f64).prop_map(|(x, y)| Vec2::new(x, y))
}

fn obox() -> impl Strategy<Value = OrientedBox> {
    (pt(), -3.2..3.2f64, 0.5..6.0f64, 0.5..3.0f64).prop_map(|(c, h, l, w)| OrientedBox::new(c * 0.1, h, l, w))
}

fn grown(b: &OrientedBox, by: f64) -> OrientedBox {
    OrientedBox::new(b.center, b.heading, b.length + 2.0 * by, b.width + 2.0 * by)
}

proptest! {
    #[test]
    fn projection_matches_brute_force(line in prop::collection::vec(pt(), 2..12), p in pt()) {
        prop_assume!(line.windows(2).all(|w| w[0].dist(w[1]) > 1e-6));
        let proj = project_onto_polyline(&line, p);
        let brute = line
            .windows(2)
            .map(|w| Segment::new(w[0], w[1]).distance_to(p))
            .fold(f64::INFINITY, f64::min);
        prop_assert!((proj.distance() - brute).abs() <= 1e-9);
        prop_assert!((proj.foot.dist(p) - brute).abs() <= 1e-9);
    }

    #[test]
    fn signed_side_matches_cross_product(a in pt(), b in pt(), p in pt()) {
        prop_assume!(a.dist(b) > 1e-6);
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        let got = signed_side(&Segment::new(a, b), p).unwrap();
        if cross.abs() > 1e-6 {
            prop_assert_eq!(got, cross.signum() as i8);
        }
    }

    #[test]
    fn sat_is_symmetric(a in obox(), b in obox()) {
        prop_assert_eq!(obb_intersects(&a, &b), obb_intersects(&b, &a));
    }

    #[test]
    fn sat_is_rigid_invariant(a in obox(), b in obox(), rot in -3.2..3.2f64, t in pt()) {
        let tight = obb_intersects(&a, &grown(&b, -1e-7));
        let loose = obb_intersects(&a, &grown(&b, 1e-7));
        prop_assume!(tight == loose);
        let tf = |o: &OrientedBox| OrientedBox::new(o.center.rotate(rot) + t, o.heading + rot, o.length, o.width);
        prop_assert_eq!(obb_intersects(&tf(&a), &tf(&b)), tight);
    }
}
