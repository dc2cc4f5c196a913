//! Deterministic synthetic scenarios on a single four-way intersection.
//!
//! Geometry is built for the south approach and rotated in quarter turns
//! for the other three. Traffic keeps right; the ego always enters from the
//! south heading north.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{normalize_angle, obb_distance, resample_polyline, segments_intersect, signed_side, Segment, Vec2};
use crate::map::{HdMap, Lane, StopLine};
use crate::scenario::{
    AgentCategory, AgentTrack, BehaviorLabel, EgoAssignment, Pose2, Scenario, SignalGroup, SignalState, SubBehavior,
    TimeOfDay, TrackSample, Weather, TICK_DT, TICK_HZ,
};

pub const LANE_WIDTH: f64 = 3.5;
pub const INNER_OFFSET: f64 = 3.25;
pub const OUTER_OFFSET: f64 = 6.75;
pub const MEDIAN_HALF: f64 = 1.5;
pub const BOX_HALF: f64 = 8.5;
pub const ARM_LENGTH: f64 = 100.0;
pub const CORNER_CUT: f64 = 6.0;
/// Crosswalk band, measured outward from the intersection center.
pub const CROSSWALK_NEAR: f64 = 9.5;
pub const CROSSWALK_FAR: f64 = 12.5;
pub const INTERSECTION_ID: &str = "x4-synthetic";

/// Distance from the box edge to the ego source.
const APPROACH_M: f64 = 40.0;
/// Straight exit run kept on the route after the maneuver.
const EXIT_M: f64 = 25.0;
/// Recorded ego time past the destination.
const TAIL_TICKS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Arm {
    S = 0,
    E = 1,
    N = 2,
    W = 3,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::S, Arm::E, Arm::N, Arm::W];

    fn k(self) -> u8 {
        self as u8
    }

    fn from_k(k: u8) -> Arm {
        Arm::ALL[(k % 4) as usize]
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::S => "S",
            Arm::E => "E",
            Arm::N => "N",
            Arm::W => "W",
        }
    }

    pub fn opposite(self) -> Arm {
        Arm::from_k(self.k() + 2)
    }

    pub fn left(self) -> Arm {
        Arm::from_k(self.k() + 3)
    }

    pub fn right(self) -> Arm {
        Arm::from_k(self.k() + 1)
    }

    /// Exact quarter-turn rotation from the south frame into this arm's frame.
    pub fn rotate(self, p: Vec2) -> Vec2 {
        match self {
            Arm::S => p,
            Arm::E => Vec2::new(-p.y, p.x),
            Arm::N => Vec2::new(-p.x, -p.y),
            Arm::W => Vec2::new(p.y, -p.x),
        }
    }

    pub fn rotate_heading(self, h: f64) -> f64 {
        normalize_angle(h + f64::from(self.k()) * FRAC_PI_2)
    }

    pub fn group_id(self) -> String {
        format!("sg_{}", self.name())
    }
}

fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vec2> {
    vec![Vec2::new(x0, y0), Vec2::new(x1, y0), Vec2::new(x1, y1), Vec2::new(x0, y1)]
}

fn stop_line_south() -> Segment {
    Segment::new(Vec2::new(MEDIAN_HALF, -BOX_HALF), Vec2::new(BOX_HALF, -BOX_HALF))
}

/// Stop line of an approach, directed so approaching traffic is on its
/// negative side.
pub fn stop_line(arm: Arm) -> Segment {
    let s = stop_line_south();
    Segment::new(arm.rotate(s.a), arm.rotate(s.b))
}

pub fn inbound_lane_id(arm: Arm, lane: usize) -> String {
    format!("in_{}_{lane}", arm.name())
}

pub fn outbound_lane_id(arm: Arm, lane: usize) -> String {
    format!("out_{}_{lane}", arm.name())
}

const OFFSETS: [f64; 2] = [INNER_OFFSET, OUTER_OFFSET];

/// The intersection map shared by every synthetic scenario.
pub fn intersection_map() -> HdMap {
    let mut lanes = Vec::new();
    let mut crosswalks = Vec::new();
    let mut stop_lines = Vec::new();
    let mut drivable_area = vec![
        rect(-BOX_HALF, -ARM_LENGTH, BOX_HALF, ARM_LENGTH),
        rect(-ARM_LENGTH, -BOX_HALF, ARM_LENGTH, BOX_HALF),
    ];
    for arm in Arm::ALL {
        for (i, off) in OFFSETS.iter().enumerate() {
            let successors = if i == 0 {
                vec![outbound_lane_id(arm.opposite(), 0), outbound_lane_id(arm.left(), 0)]
            } else {
                vec![outbound_lane_id(arm.opposite(), 1), outbound_lane_id(arm.right(), 1)]
            };
            lanes.push(Lane {
                lane_id: inbound_lane_id(arm, i),
                centerline: vec![
                    arm.rotate(Vec2::new(*off, -ARM_LENGTH)),
                    arm.rotate(Vec2::new(*off, -BOX_HALF)),
                ],
                width: LANE_WIDTH,
                successor_ids: successors,
                signal_group_id: Some(arm.group_id()),
            });
            lanes.push(Lane {
                lane_id: outbound_lane_id(arm, i),
                centerline: vec![
                    arm.rotate(Vec2::new(-off, -BOX_HALF)),
                    arm.rotate(Vec2::new(-off, -ARM_LENGTH)),
                ],
                width: LANE_WIDTH,
                successor_ids: vec![],
                signal_group_id: None,
            });
        }
        crosswalks.push(
            rect(-BOX_HALF, -CROSSWALK_FAR, BOX_HALF, -CROSSWALK_NEAR)
                .into_iter()
                .map(|p| arm.rotate(p))
                .collect(),
        );
        stop_lines.push(StopLine {
            segment: stop_line(arm),
            signal_group_id: arm.group_id(),
        });
        drivable_area.push(
            [
                Vec2::new(BOX_HALF, -BOX_HALF),
                Vec2::new(BOX_HALF + CORNER_CUT, -BOX_HALF),
                Vec2::new(BOX_HALF, -BOX_HALF - CORNER_CUT),
            ]
            .into_iter()
            .map(|p| arm.rotate(p))
            .collect(),
        );
    }
    HdMap {
        map_id: INTERSECTION_ID.into(),
        lanes,
        crosswalks,
        stop_lines,
        drivable_area,
    }
}

/// Path primitive: straight segment or circular arc.
#[derive(Debug, Clone, Copy)]
enum Prim {
    Line { a: Vec2, b: Vec2 },
    /// `sweep` is signed: positive turns left.
    Arc { center: Vec2, radius: f64, start: f64, sweep: f64 },
}

impl Prim {
    fn length(&self) -> f64 {
        match *self {
            Prim::Line { a, b } => a.dist(b),
            Prim::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    fn pose_at(&self, s: f64) -> (Vec2, f64) {
        match *self {
            Prim::Line { a, b } => {
                let len = a.dist(b);
                (a.lerp(b, s / len), (b - a).angle())
            }
            Prim::Arc {
                center,
                radius,
                start,
                sweep,
            } => {
                let sign = sweep.signum();
                let phi = start + sign * s / radius;
                (center + Vec2::from_angle(phi) * radius, phi + sign * FRAC_PI_2)
            }
        }
    }

    fn end(&self) -> Vec2 {
        self.pose_at(self.length()).0
    }
}

/// Continuous path made of lines and arcs, parameterized by arc length.
#[derive(Debug, Clone)]
pub struct Path {
    prims: Vec<Prim>,
}

impl Path {
    pub(crate) fn new() -> Self {
        Path { prims: Vec::new() }
    }

    fn last_point(&self) -> Vec2 {
        self.prims.last().expect("path has a start").end()
    }

    pub(crate) fn line(mut self, a: Vec2, b: Vec2) -> Self {
        self.prims.push(Prim::Line { a, b });
        self
    }

    pub(crate) fn line_to(self, b: Vec2) -> Self {
        let a = self.last_point();
        self.line(a, b)
    }

    pub(crate) fn arc(mut self, center: Vec2, radius: f64, start: f64, sweep: f64) -> Self {
        self.prims.push(Prim::Arc {
            center,
            radius,
            start,
            sweep,
        });
        self
    }

    /// Extends straight along the final heading.
    pub(crate) fn straight(self, len: f64) -> Self {
        let (p, h) = self.pose_at(self.length());
        self.line_to(p + Vec2::from_angle(h) * len)
    }

    pub fn length(&self) -> f64 {
        self.prims.iter().map(Prim::length).sum()
    }

    /// Position and heading at arc length `s`, clamped to the path.
    pub fn pose_at(&self, s: f64) -> (Vec2, f64) {
        let mut rem = s.max(0.0);
        for (i, p) in self.prims.iter().enumerate() {
            let len = p.length();
            if rem <= len || i + 1 == self.prims.len() {
                let (pt, h) = p.pose_at(rem.min(len));
                return (pt, normalize_angle(h));
            }
            rem -= len;
        }
        unreachable!("path is non-empty")
    }

    /// Dense polyline from arc length `s0` to `s1`.
    pub fn polyline(&self, s0: f64, s1: f64, step: f64) -> Vec<Vec2> {
        let n = ((s1 - s0) / step).ceil().max(1.0) as usize;
        (0..=n)
            .map(|i| self.pose_at(s0 + (s1 - s0) * i as f64 / n as f64).0)
            .collect()
    }

    pub(crate) fn rotated(&self, arm: Arm) -> Path {
        let rot = f64::from(arm.k()) * FRAC_PI_2;
        Path {
            prims: self
                .prims
                .iter()
                .map(|p| match *p {
                    Prim::Line { a, b } => Prim::Line {
                        a: arm.rotate(a),
                        b: arm.rotate(b),
                    },
                    Prim::Arc {
                        center,
                        radius,
                        start,
                        sweep,
                    } => Prim::Arc {
                        center: arm.rotate(center),
                        radius,
                        start: start + rot,
                        sweep,
                    },
                })
                .collect(),
        }
    }
}

/// Piecewise constant-acceleration speed profile.
#[derive(Debug, Clone)]
pub struct SpeedProfile {
    /// (start time, start arc length, start speed, acceleration)
    phases: Vec<(f64, f64, f64, f64)>,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        SpeedProfile {
            phases: vec![(0.0, 0.0, v, 0.0)],
        }
    }

    /// Cruise, brake to a stop at `s_stop`, dwell, then accelerate back.
    pub fn stop_and_go(v: f64, s_stop: f64, decel: f64, dwell: f64, accel: f64) -> Self {
        let brake_dist = v * v / (2.0 * decel);
        let t1 = (s_stop - brake_dist) / v;
        let t2 = t1 + v / decel;
        let t3 = t2 + dwell;
        let t4 = t3 + v / accel;
        SpeedProfile {
            phases: vec![
                (0.0, 0.0, v, 0.0),
                (t1, s_stop - brake_dist, v, -decel),
                (t2, s_stop, 0.0, 0.0),
                (t3, s_stop, 0.0, accel),
                (t4, s_stop + v * v / (2.0 * accel), v, 0.0),
            ],
        }
    }

    fn phase(&self, t: f64) -> &(f64, f64, f64, f64) {
        let i = self.phases.partition_point(|p| p.0 <= t).max(1);
        &self.phases[i - 1]
    }

    pub fn s_at(&self, t: f64) -> f64 {
        let &(t0, s0, v0, a) = self.phase(t);
        let dt = t - t0;
        s0 + v0 * dt + 0.5 * a * dt * dt
    }

    pub fn v_at(&self, t: f64) -> f64 {
        let &(t0, _, v0, a) = self.phase(t);
        (v0 + a * (t - t0)).max(0.0)
    }

    /// Earliest time at which arc length `s` is reached (bisection).
    pub fn time_at(&self, s: f64) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        while self.s_at(hi) < s {
            hi *= 2.0;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.s_at(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }
}

pub(crate) fn dims(c: AgentCategory) -> (f64, f64) {
    match c {
        AgentCategory::Car => (4.6, 1.9),
        AgentCategory::Truck => (8.0, 2.5),
        AgentCategory::Bus => (12.0, 2.6),
        AgentCategory::Van => (5.2, 2.0),
        AgentCategory::Motorcycle => (2.2, 0.8),
        AgentCategory::Tricycle => (2.8, 1.2),
        AgentCategory::Cyclist => (1.8, 0.6),
        AgentCategory::Pedestrian => (0.6, 0.6),
    }
}

/// Records a track moving along `path` with `profile`, shifted so that the
/// profile's time zero falls at `t0` seconds. Only ticks in `[0, n_ticks)`
/// where the agent is on the path are kept.
pub fn record_track(
    id: &str,
    category: AgentCategory,
    path: &Path,
    profile: &SpeedProfile,
    t0: f64,
    n_ticks: u32,
) -> Option<AgentTrack> {
    let (length, width) = dims(category);
    let total = path.length();
    let samples: Vec<TrackSample> = (0..n_ticks)
        .filter_map(|tick| {
            let t = f64::from(tick) * TICK_DT - t0;
            if t < -1e-9 {
                return None;
            }
            let t = t.max(0.0);
            let s = profile.s_at(t);
            if s > total + 1e-9 {
                return None;
            }
            let (p, h) = path.pose_at(s);
            Some(TrackSample {
                tick,
                pose: Pose2::new(p.x, p.y, h),
                speed: profile.v_at(t),
            })
        })
        .collect();
    if samples.len() < 2 {
        return None;
    }
    Some(AgentTrack {
        track_id: id.into(),
        category,
        length,
        width,
        height: None,
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LightPlan {
    /// Phases chosen to realize the requested behavior.
    #[default]
    Auto,
    AllGreen,
    /// The ego approach is red for the whole clip.
    EgoRed,
}

/// Generator request document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub behavior: SubBehavior,
    #[serde(default)]
    pub n_background: u32,
    #[serde(default)]
    pub light_plan: LightPlan,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenerateError {
    #[error("unsatisfiable spec: {0}")]
    Unsatisfiable(String),
}

/// Ego maneuver geometry in the south frame plus its cruise speed.
fn ego_maneuver(sub: SubBehavior) -> (Path, f64) {
    use SubBehavior::*;
    let y0 = -BOX_HALF - APPROACH_M;
    match sub {
        Str | Stp | CovStr | IpcStr | YlwStr => (
            Path::new()
                .line(Vec2::new(INNER_OFFSET, y0), Vec2::new(INNER_OFFSET, BOX_HALF))
                .straight(EXIT_M),
            8.0,
        ),
        Lft | CovLft | IpcLft | YlwLft => (
            Path::new()
                .line(Vec2::new(INNER_OFFSET, y0), Vec2::new(INNER_OFFSET, -BOX_HALF))
                .arc(Vec2::new(-BOX_HALF, -BOX_HALF), BOX_HALF + INNER_OFFSET, 0.0, FRAC_PI_2)
                .straight(EXIT_M),
            6.0,
        ),
        Rt | CovRt | IpcRt => {
            let r = 5.0;
            let turn_y = -INNER_OFFSET - r;
            (
                Path::new()
                    .line(Vec2::new(OUTER_OFFSET, y0), Vec2::new(OUTER_OFFSET, turn_y))
                    .arc(Vec2::new(OUTER_OFFSET + r, turn_y), r, PI, -FRAC_PI_2)
                    .straight(EXIT_M),
                4.0,
            )
        }
        UtN | UtAn => {
            let r = (INNER_OFFSET + OUTER_OFFSET) / 2.0;
            let cy = if sub == UtN { -8.0 } else { 1.0 };
            let cx = INNER_OFFSET - r;
            (
                Path::new()
                    .line(Vec2::new(INNER_OFFSET, y0), Vec2::new(INNER_OFFSET, cy))
                    .arc(Vec2::new(cx, cy), r, 0.0, PI)
                    .straight(EXIT_M + cy + BOX_HALF),
                4.0,
            )
        }
    }
}

/// Opposing (southbound) vehicle turning left into the outer eastbound lane.
fn opposing_left_turn() -> Path {
    let r = 10.0;
    Path::new()
        .line(Vec2::new(-INNER_OFFSET, 60.0), Vec2::new(-INNER_OFFSET, INNER_OFFSET))
        .arc(Vec2::new(-INNER_OFFSET + r, INNER_OFFSET), r, PI, FRAC_PI_2)
        .line_to(Vec2::new(60.0, -OUTER_OFFSET))
}

fn opposing_straight() -> Path {
    Path::new().line(Vec2::new(-INNER_OFFSET, 60.0), Vec2::new(-INNER_OFFSET, -60.0))
}

/// Crosswalk walk line on the exit arm of the ego maneuver.
fn crosswalk_walk(sub: SubBehavior, reverse: bool) -> Path {
    let mid = (CROSSWALK_NEAR + CROSSWALK_FAR) / 2.0;
    let half = CROSSWALK_FAR - 0.5;
    let (a, b) = match sub {
        SubBehavior::IpcLft => (Vec2::new(-mid, -half), Vec2::new(-mid, half)),
        SubBehavior::IpcRt => (Vec2::new(mid, -half), Vec2::new(mid, half)),
        _ => (Vec2::new(-half, mid), Vec2::new(half, mid)),
    };
    if reverse {
        Path::new().line(b, a)
    } else {
        Path::new().line(a, b)
    }
}

fn min_box_distance(a: &AgentTrack, b: &AgentTrack) -> f64 {
    closest_approach(a, b, u32::MAX).map_or(f64::INFINITY, |(d, _)| d)
}

/// Smallest box distance between `a` and `b` over ticks up to `until`, with
/// the ego pose at which it happens.
fn closest_approach(a: &AgentTrack, b: &AgentTrack, until: u32) -> Option<(f64, Vec2)> {
    let mut best: Option<(f64, Vec2)> = None;
    for s in a.samples.iter().take_while(|s| s.tick <= until) {
        if let Some((pose, _)) = b.state_at_tick(s.tick) {
            let d = obb_distance(&a.box_at(&s.pose), &b.box_at(&pose));
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, s.pose.position()));
            }
        }
    }
    best
}

/// How far outside the junction box the closest approach may happen.
const CONFLICT_ZONE_M: f64 = 5.0;

/// Picks a start offset for a conflict agent so that its closest approach
/// to the ego lands in `[lo, hi]`, happens near the junction before
/// `route_end` and is never undercut afterwards.
#[allow(clippy::too_many_arguments)]
fn place_conflict(
    rng: &mut ChaCha8Rng,
    ego: &AgentTrack,
    route_end: u32,
    id: &str,
    category: AgentCategory,
    path: &Path,
    v: f64,
    n_ticks: u32,
    lo: f64,
    hi: f64,
) -> Result<AgentTrack, GenerateError> {
    let profile = SpeedProfile::constant(v);
    let horizon = f64::from(n_ticks) * TICK_DT;
    let steps = (horizon / 0.05) as i64;
    let zone = BOX_HALF + CONFLICT_ZONE_M;
    let candidates: Vec<AgentTrack> = (-steps..steps)
        .filter_map(|i| {
            let t0 = i as f64 * 0.05;
            let track = record_track(id, category, path, &profile, t0, n_ticks)?;
            let (d, at) = closest_approach(ego, &track, route_end)?;
            let near_junction = at.x.abs() <= zone && at.y.abs() <= zone;
            let ok = d >= lo && d <= hi && near_junction && min_box_distance(ego, &track) >= lo;
            ok.then_some(track)
        })
        .collect();
    candidates
        .choose(rng)
        .cloned()
        .ok_or_else(|| GenerateError::Unsatisfiable(format!("no timing for {id} within [{lo}, {hi}] m")))
}

pub(crate) fn schedule_constant(state: SignalState) -> Vec<(u32, SignalState)> {
    vec![(0, state)]
}

fn crossing_tick(track: &AgentTrack, line: &Segment) -> Option<u32> {
    track.samples.windows(2).find_map(|w| {
        let mv = Segment::new(w[0].pose.position(), w[1].pose.position());
        let before = signed_side(line, w[0].pose.position()).ok()?;
        let after = signed_side(line, w[1].pose.position()).ok()?;
        (before < 0 && after >= 0 && segments_intersect(&mv, line)).then_some(w[1].tick)
    })
}

pub(crate) fn signal_groups(schedules: [Vec<(u32, SignalState)>; 4]) -> Vec<SignalGroup> {
    Arm::ALL
        .iter()
        .zip(schedules)
        .map(|(&arm, schedule)| SignalGroup {
            group_id: arm.group_id(),
            stop_line: stop_line(arm),
            controlled_lane_ids: (0..2).map(|i| inbound_lane_id(arm, i)).collect::<BTreeSet<_>>(),
            schedule,
        })
        .collect()
}

/// Background vehicle driving straight through from `arm` in `lane`, with
/// a signal-compliant stop before the stop line.
fn background_track(
    id: &str,
    category: AgentCategory,
    arm: Arm,
    lane: usize,
    s0: f64,
    cruise: f64,
    groups: &[SignalGroup],
    n_ticks: u32,
) -> Option<AgentTrack> {
    let off = OFFSETS[lane];
    let path = Path::new()
        .line(Vec2::new(off, -ARM_LENGTH), Vec2::new(off, ARM_LENGTH))
        .rotated(arm);
    let (length, width) = dims(category);
    let total = path.length();
    let s_line = ARM_LENGTH - BOX_HALF;
    let s_stop = s_line - 1.0 - length / 2.0;
    let group = groups.iter().find(|g| g.group_id == arm.group_id())?;
    let (comfort, hard, accel) = (2.5, 4.0, 2.0);
    let mut s = s0;
    let mut v = cruise;
    let mut samples = Vec::new();
    for tick in 0..n_ticks {
        if s > total {
            break;
        }
        let (p, h) = path.pose_at(s);
        samples.push(TrackSample {
            tick,
            pose: Pose2::new(p.x, p.y, h),
            speed: v,
        });
        let green = group.state_at(tick).ok()? == SignalState::Green;
        let dist = s_stop - s;
        let must_stop = !green && dist >= -0.01 && (v * v / (2.0 * dist.max(1e-6)) <= hard || v < 0.1);
        let target = if must_stop {
            cruise.min((2.0 * comfort * dist.max(0.0)).sqrt())
        } else {
            cruise
        };
        let v_new = if target >= v {
            (v + accel * TICK_DT).min(target)
        } else {
            (v - hard * TICK_DT).max(target)
        };
        s += 0.5 * (v + v_new) * TICK_DT;
        v = v_new;
    }
    if samples.len() < 2 {
        return None;
    }
    Some(AgentTrack {
        track_id: id.into(),
        category,
        length,
        width,
        height: None,
        samples,
    })
}

fn runs_red(track: &AgentTrack, groups: &[SignalGroup]) -> bool {
    groups.iter().any(|g| {
        crossing_tick(track, &g.stop_line).is_some_and(|t| g.state_at(t).ok() == Some(SignalState::Red))
    })
}

fn sub_index(sub: SubBehavior) -> u64 {
    SubBehavior::ALL.iter().position(|&s| s == sub).unwrap_or(0) as u64
}

/// Builds one scenario realizing `spec` together with the intersection map.
pub fn generate_synthetic(spec: &GeneratorSpec) -> Result<(Scenario, HdMap), GenerateError> {
    use SubBehavior::*;
    let sub = spec.behavior;
    if matches!(sub, Stp | YlwLft | YlwStr) && spec.light_plan != LightPlan::Auto {
        return Err(GenerateError::Unsatisfiable(format!(
            "{sub} needs the auto light plan"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (sub_index(sub) << 56));
    let map = intersection_map();
    let (path, v) = ego_maneuver(sub);
    let profile = if sub == Stp {
        let s_stop = APPROACH_M - 3.3;
        SpeedProfile::stop_and_go(v, s_stop, 2.0, 4.0, 2.0)
    } else {
        SpeedProfile::constant(v)
    };
    let total = path.length();
    let end_time = profile.time_at(total - 1.0);
    let last_tick = (end_time / TICK_DT).floor() as u32;
    if last_tick <= TAIL_TICKS + 1 {
        return Err(GenerateError::Unsatisfiable("route too short".into()));
    }
    let n_ticks = last_tick + 1;
    let ego = record_track("ego", AgentCategory::Car, &path, &profile, 0.0, n_ticks)
        .ok_or_else(|| GenerateError::Unsatisfiable("empty ego track".into()))?;
    let dest_tick = last_tick - TAIL_TICKS;
    let s_dest = profile.s_at(f64::from(dest_tick) * TICK_DT);
    let route = resample_polyline(&path.polyline(0.0, s_dest, 0.25), 2.0, 1.0);
    let source = ego.samples[0].pose;
    let destination = ego.samples[dest_tick as usize].pose;

    let ego_line = stop_line(Arm::S);
    let t_cross = crossing_tick(&ego, &ego_line).unwrap_or(0);
    let ns_ew = |ns: Vec<(u32, SignalState)>, ew: Vec<(u32, SignalState)>| [ns.clone(), ew.clone(), ns, ew];
    use SignalState::*;
    let schedules = match (sub, spec.light_plan) {
        (Stp, _) => {
            let go = (profile.phases[3].0 / TICK_DT).floor() as u32 - 5;
            ns_ew(
                vec![(0, Red), (go, Green)],
                vec![(0, Green), (go - 30, Yellow), (go - 10, Red)],
            )
        }
        (YlwLft | YlwStr, _) => {
            let y = t_cross - TICK_HZ;
            let r = t_cross + 2 * TICK_HZ;
            ns_ew(
                vec![(0, Green), (y, Yellow), (r, Red)],
                vec![(0, Red), (r + TICK_HZ, Green)],
            )
        }
        (_, LightPlan::Auto) => ns_ew(schedule_constant(Green), schedule_constant(Red)),
        (_, LightPlan::AllGreen) => ns_ew(schedule_constant(Green), schedule_constant(Green)),
        (_, LightPlan::EgoRed) => {
            let mut s = ns_ew(schedule_constant(Green), schedule_constant(Red));
            s[Arm::S as usize] = schedule_constant(Red);
            s
        }
    };
    let signals = signal_groups(schedules);

    let mut tracks = vec![ego.clone()];
    match sub {
        CovStr | CovRt => tracks.push(place_conflict(
            &mut rng,
            &ego,
            dest_tick,
            "c0",
            AgentCategory::Car,
            &opposing_left_turn(),
            6.0,
            n_ticks,
            2.0,
            3.0,
        )?),
        CovLft => tracks.push(place_conflict(
            &mut rng,
            &ego,
            dest_tick,
            "c0",
            AgentCategory::Car,
            &opposing_straight(),
            7.0,
            n_ticks,
            2.0,
            3.0,
        )?),
        IpcStr | IpcLft | IpcRt => {
            let cyclist = spec.seed % 3 == 2;
            let (category, speed) = if cyclist {
                (AgentCategory::Cyclist, 3.5)
            } else {
                (AgentCategory::Pedestrian, 1.4)
            };
            let reverse = rng.gen_bool(0.5);
            tracks.push(place_conflict(
                &mut rng,
                &ego,
                dest_tick,
                "p0",
                category,
                &crosswalk_walk(sub, reverse),
                speed,
                n_ticks,
                1.5,
                2.5,
            )?);
        }
        _ => {}
    }

    let fleet = [
        AgentCategory::Car,
        AgentCategory::Car,
        AgentCategory::Car,
        AgentCategory::Van,
        AgentCategory::Truck,
        AgentCategory::Bus,
    ];
    let mut placed = 0;
    let mut attempts = 0;
    while placed < spec.n_background {
        attempts += 1;
        if attempts > 400 {
            return Err(GenerateError::Unsatisfiable(format!(
                "placed only {placed} of {} background agents",
                spec.n_background
            )));
        }
        let category = *fleet.choose(&mut rng).expect("non-empty fleet");
        let arm = Arm::ALL[rng.gen_range(0..4)];
        let lane = rng.gen_range(0..2);
        let s0 = rng.gen_range(0.0..120.0);
        let cruise = rng.gen_range(5.0..9.0);
        let id = format!("b{placed}");
        let Some(track) = background_track(&id, category, arm, lane, s0, cruise, &signals, n_ticks) else {
            continue;
        };
        if runs_red(&track, &signals) || min_box_distance(&ego, &track) < 6.0 {
            continue;
        }
        if tracks[1..].iter().any(|t| min_box_distance(t, &track) < 1.0) {
            continue;
        }
        tracks.push(track);
        placed += 1;
    }

    let scenario = Scenario {
        scenario_id: format!("{sub}-s{}", spec.seed),
        intersection_id: INTERSECTION_ID.into(),
        tick_hz: TICK_HZ,
        n_ticks,
        weather: *Weather::ALL.choose(&mut rng).expect("non-empty"),
        time_of_day: *TimeOfDay::ALL.choose(&mut rng).expect("non-empty"),
        behavior: Some(BehaviorLabel::from_sub(sub)),
        tracks,
        signals,
        ego: EgoAssignment {
            agent_id: "ego".into(),
            source,
            destination,
            route_waypoints: route,
        },
    };
    Ok((scenario, map))
}

/// Seeds used by the canonical suite.
pub const CANONICAL_SEEDS: [u64; 3] = [0, 1, 2];

/// Three scenarios for each of the 14 sub-labels, each with two background
/// vehicles.
pub fn canonical_corpus() -> Result<(Vec<Scenario>, HdMap), GenerateError> {
    let specs: Vec<GeneratorSpec> = SubBehavior::ALL
        .iter()
        .flat_map(|&behavior| {
            CANONICAL_SEEDS.iter().map(move |&seed| GeneratorSpec {
                behavior,
                n_background: 2,
                light_plan: LightPlan::Auto,
                seed,
            })
        })
        .collect();
    let generated = crate::par::map(&specs, generate_synthetic);
    let mut out = Vec::with_capacity(specs.len());
    for g in generated {
        out.push(g?.0);
    }
    out.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
    Ok((out, intersection_map()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::validate_scenario;

    #[test]
    fn map_is_valid() {
        let m = intersection_map();
        m.check().unwrap();
        assert_eq!(m.lanes.len(), 16);
        assert!(m.point_in_drivable(Vec2::new(0.0, 0.0)));
        assert!(m.point_in_drivable(Vec2::new(INNER_OFFSET, -90.0)));
        assert!(!m.point_in_drivable(Vec2::new(30.0, 30.0)));
        for arm in Arm::ALL {
            let line = stop_line(arm);
            let approach = arm.rotate(Vec2::new(INNER_OFFSET, -20.0));
            assert_eq!(signed_side(&line, approach).unwrap(), -1);
        }
    }

    #[test]
    fn every_sub_label_generates_a_valid_scenario() {
        for sub in SubBehavior::ALL {
            let (s, m) = generate_synthetic(&GeneratorSpec {
                behavior: sub,
                n_background: 2,
                light_plan: LightPlan::Auto,
                seed: 7,
            })
            .unwrap();
            s.check().unwrap_or_else(|e| panic!("{sub}: {e}"));
            assert!(validate_scenario(&s, &m).is_empty(), "{sub}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = GeneratorSpec {
            behavior: SubBehavior::IpcLft,
            n_background: 3,
            light_plan: LightPlan::Auto,
            seed: 11,
        };
        let a = generate_synthetic(&spec).unwrap().0.to_json();
        let b = generate_synthetic(&spec).unwrap().0.to_json();
        assert_eq!(a, b);
    }

    #[test]
    fn stop_and_go_profile_is_continuous() {
        let p = SpeedProfile::stop_and_go(8.0, 36.7, 2.0, 4.0, 2.0);
        let t_stop = p.phases[2].0;
        assert!((p.s_at(t_stop) - 36.7).abs() < 1e-9);
        assert!(p.v_at(t_stop + 1.0) == 0.0);
        for w in p.phases.windows(2) {
            let t = w[1].0;
            assert!((p.s_at(t - 1e-9) - p.s_at(t)).abs() < 1e-6);
        }
    }
}
