//! Independent reference implementations shared by the integration suites.
#![allow(dead_code)]

use rand::Rng;
use replaybench::geometry::{OrientedBox, Vec2};
use replaybench::metrics::{EpisodeResult, Infraction, InfractionKind, PenaltyTable, Termination};

pub fn random_box<R: Rng>(rng: &mut R, spread: f64) -> OrientedBox {
    OrientedBox::new(
        Vec2::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread)),
        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        rng.gen_range(0.5..6.0),
        rng.gen_range(0.5..3.0),
    )
}

fn inside(b: &OrientedBox, p: Vec2, grow: f64) -> bool {
    let (s, c) = b.heading.sin_cos();
    let d = p - b.center;
    let lx = d.x * c + d.y * s;
    let ly = -d.x * s + d.y * c;
    lx.abs() <= b.length / 2.0 + grow && ly.abs() <= b.width / 2.0 + grow
}

/// Dense grid over `a` (n x n, boundary included) tested against `b`
/// enlarged by `grow` on every side.
fn grid_overlap(a: &OrientedBox, b: &OrientedBox, n: usize, grow: f64) -> bool {
    let (s, c) = a.heading.sin_cos();
    (0..n).any(|i| {
        let lx = -a.length / 2.0 + a.length * i as f64 / (n - 1) as f64;
        (0..n).any(|j| {
            let ly = -a.width / 2.0 + a.width * j as f64 / (n - 1) as f64;
            let p = a.center + Vec2::new(lx * c - ly * s, lx * s + ly * c);
            inside(b, p, grow)
        })
    })
}

/// Point-sampling overlap oracle. `None` when the answer changes within one
/// grid step, i.e. the pair is inside the oracle's resolution margin.
pub fn sampling_overlap(a: &OrientedBox, b: &OrientedBox, n: usize) -> Option<bool> {
    let h = a.length.max(a.width).max(b.length).max(b.width) / (n - 1) as f64;
    let reach = a.length.hypot(a.width) / 2.0 + b.length.hypot(b.width) / 2.0 + 4.0 * h;
    if a.center.dist(b.center) > reach {
        return Some(false);
    }
    let grown = grid_overlap(a, b, n, h) || grid_overlap(b, a, n, h);
    let shrunk = grid_overlap(a, b, n, -h) || grid_overlap(b, a, n, -h);
    (grown == shrunk).then_some(grown)
}

fn seg_cross_param(p0: Vec2, p1: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let r = p1 - p0;
    let s = b - a;
    let den = r.x * s.y - r.y * s.x;
    if den.abs() < 1e-14 {
        return None;
    }
    let q = a - p0;
    let t = (q.x * s.y - q.y * s.x) / den;
    let u = (q.x * r.y - q.y * r.x) / den;
    ((0.0..=1.0).contains(&t) && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
}

/// Distance along `origin -> target` to the first crossing of any edge of
/// `b`, found edge by edge.
pub fn brute_hit_distance(origin: Vec2, target: Vec2, b: &OrientedBox) -> Option<f64> {
    let c = b.corners();
    let total = origin.dist(target);
    (0..4)
        .filter_map(|k| seg_cross_param(origin, target, c[k], c[(k + 1) % 4]))
        .map(|t| t * total)
        .min_by(f64::total_cmp)
}

pub fn contains_point(b: &OrientedBox, p: Vec2) -> bool {
    inside(b, p, 1e-9)
}

pub fn result(id: &str, rc: f64, kinds: &[InfractionKind], table: &PenaltyTable) -> EpisodeResult {
    EpisodeResult {
        scenario_id: id.into(),
        rc,
        infractions: kinds
            .iter()
            .enumerate()
            .map(|(i, &kind)| Infraction {
                kind,
                tick: i as u32,
                penalty: table.get(kind),
                terminal: false,
            })
            .collect(),
        success: kinds.is_empty() && rc >= 0.95,
        termination: Termination::Arrived,
        duration_ticks: 100,
    }
}

/// Driving score recomputed from the penalties recorded on each infraction.
pub fn reference_ds(results: &[EpisodeResult]) -> f64 {
    let mut total = 0.0;
    for r in results {
        let mut prod = 1.0;
        for inf in &r.infractions {
            prod *= inf.penalty;
        }
        total += r.rc * prod;
    }
    total * 100.0 / results.len() as f64
}

pub const PENALIZING: [InfractionKind; 5] = [
    InfractionKind::CollisionPedestrian,
    InfractionKind::CollisionCyclist,
    InfractionKind::CollisionVehicle,
    InfractionKind::CollisionStatic,
    InfractionKind::RedLight,
];
