//! Rule-based behavior labeling of the ego route.

use serde::{Deserialize, Serialize};

use crate::geometry::{angle_diff, obb_distance, point_in_polygon, segment_intersection_points, signed_side, Segment, Vec2};
use crate::map::HdMap;
use crate::scenario::{AgentTrack, BehaviorLabel, Scenario, SignalGroup, SignalState, SubBehavior, TICK_HZ};

/// Classifier thresholds. Angles in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub straight_max_deg: f64,
    pub uturn_min_deg: f64,
    pub stop_speed: f64,
    pub stop_dwell_s: f64,
    pub stop_zone_m: f64,
    pub ipc_distance_m: f64,
    pub ipc_min_speed: f64,
    pub cov_distance_m: f64,
    /// Heading change still counted as "not yet turning".
    pub uturn_start_deg: f64,
    /// Heading change that marks a U-turn as underway.
    pub uturn_commit_deg: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            straight_max_deg: 30.0,
            uturn_min_deg: 150.0,
            stop_speed: 0.5,
            stop_dwell_s: 2.0,
            stop_zone_m: 10.0,
            ipc_distance_m: 3.0,
            ipc_min_speed: 1.0,
            cov_distance_m: 4.0,
            uturn_start_deg: 5.0,
            uturn_commit_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Maneuver {
    Straight,
    Left,
    Right,
    UTurn,
}

/// Cumulative heading change (radians) after each route sample, starting at 0.
fn cumulative_heading(track: &AgentTrack, from: usize, to: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = vec![0.0];
    for w in track.samples[from..=to].windows(2) {
        acc += angle_diff(w[1].pose.heading, w[0].pose.heading);
        out.push(acc);
    }
    out
}

fn base_maneuver(dtheta: f64, cfg: &ClassifierConfig) -> Maneuver {
    let d = dtheta.to_degrees();
    if d.abs() < cfg.straight_max_deg {
        Maneuver::Straight
    } else if d.abs() >= cfg.uturn_min_deg {
        Maneuver::UTurn
    } else if d > 0.0 {
        Maneuver::Left
    } else {
        Maneuver::Right
    }
}

/// Sample indices `i` whose incoming step moves from the negative to the
/// non-negative side of `line` while touching it.
fn forward_crossings(track: &AgentTrack, from: usize, to: usize, line: &Segment) -> Vec<usize> {
    let mut out = Vec::new();
    for i in from + 1..=to {
        let a = track.samples[i - 1].pose.position();
        let b = track.samples[i].pose.position();
        let (Ok(sa), Ok(sb)) = (signed_side(line, a), signed_side(line, b)) else {
            continue;
        };
        if sa < 0 && sb >= 0 && !segment_intersection_points(&Segment::new(a, b), line).is_empty() {
            out.push(i);
        }
    }
    out
}

fn route_signals(s: &Scenario) -> Vec<&SignalGroup> {
    let route = &s.ego.route_waypoints;
    s.signals
        .iter()
        .filter(|g| {
            route
                .windows(2)
                .any(|w| !segment_intersection_points(&Segment::new(w[0], w[1]), &g.stop_line).is_empty())
        })
        .collect()
}

fn is_stp(s: &Scenario, ego: &AgentTrack, from: usize, to: usize, cfg: &ClassifierConfig) -> bool {
    let need = (cfg.stop_dwell_s * f64::from(TICK_HZ)).round() as u32;
    route_signals(s).iter().any(|g| {
        let mut run_start: Option<u32> = None;
        for smp in &ego.samples[from..=to] {
            let p = smp.pose.position();
            let ok = smp.speed < cfg.stop_speed
                && signed_side(&g.stop_line, p).is_ok_and(|side| side < 0)
                && g.stop_line.distance_to(p) <= cfg.stop_zone_m
                && g.state_at(smp.tick).ok() == Some(SignalState::Red);
            if ok {
                let start = *run_start.get_or_insert(smp.tick);
                if smp.tick - start + 1 >= need {
                    return true;
                }
            } else {
                run_start = None;
            }
        }
        false
    })
}

fn is_ylw(s: &Scenario, ego: &AgentTrack, from: usize, to: usize) -> bool {
    route_signals(s).iter().any(|g| {
        forward_crossings(ego, from, to, &g.stop_line)
            .into_iter()
            .any(|i| g.state_at(ego.samples[i].tick).ok() == Some(SignalState::Yellow))
    })
}

fn min_distance_while(ego: &AgentTrack, from: usize, to: usize, other: &AgentTrack, min_speed: f64) -> f64 {
    ego.samples[from..=to]
        .iter()
        .filter(|e| e.speed > min_speed)
        .filter_map(|e| {
            let (pose, _) = other.state_at_tick(e.tick)?;
            Some(obb_distance(&ego.box_at(&e.pose), &other.box_at(&pose)))
        })
        .fold(f64::INFINITY, f64::min)
}

fn is_ipc(s: &Scenario, ego: &AgentTrack, from: usize, to: usize, cfg: &ClassifierConfig) -> bool {
    s.tracks
        .iter()
        .filter(|t| t.track_id != ego.track_id)
        .filter(|t| t.category.is_vulnerable())
        .any(|t| min_distance_while(ego, from, to, t, cfg.ipc_min_speed) < cfg.ipc_distance_m)
}

fn paths_cross_in(a: &[Vec2], b: &[Vec2], poly: &[Vec2]) -> bool {
    a.windows(2).any(|u| {
        let su = Segment::new(u[0], u[1]);
        b.windows(2).any(|v| {
            segment_intersection_points(&su, &Segment::new(v[0], v[1]))
                .into_iter()
                .any(|p| point_in_polygon(poly, p))
        })
    })
}

fn is_cov(s: &Scenario, m: &HdMap, ego: &AgentTrack, from: usize, to: usize, cfg: &ClassifierConfig) -> bool {
    let hull = m.junction_polygon();
    if hull.len() < 3 {
        return false;
    }
    let ego_path: Vec<_> = ego.samples[from..=to].iter().map(|x| x.pose.position()).collect();
    s.tracks
        .iter()
        .filter(|t| t.track_id != ego.track_id && t.category.is_motor_vehicle())
        .any(|t| {
            min_distance_while(ego, from, to, t, f64::NEG_INFINITY) < cfg.cov_distance_m
                && paths_cross_in(&ego_path, &t.path(), &hull)
        })
}

/// U-turn anomaly: initiated off-lane, or a stop line crossed mid-maneuver.
fn is_abnormal_uturn(s: &Scenario, m: &HdMap, ego: &AgentTrack, from: usize, to: usize, cum: &[f64], cfg: &ClassifierConfig) -> bool {
    let start = cfg.uturn_start_deg.to_radians();
    let commit = cfg.uturn_commit_deg.to_radians();
    let Some(commit_at) = cum.iter().position(|d| d.abs() > commit) else {
        return false;
    };
    let init = cum[..commit_at].iter().rposition(|d| d.abs() <= start).unwrap_or(0);
    let init_pose = ego.samples[from + init].pose.position();
    if m.nearest_lane_offset(init_pose).is_some_and(|(d, lane)| d > lane.width / 2.0) {
        return true;
    }
    let done = cum
        .iter()
        .position(|d| d.abs() >= cfg.uturn_min_deg.to_radians())
        .unwrap_or(cum.len() - 1);
    s.signals.iter().any(|g| {
        forward_crossings(ego, from, to, &g.stop_line)
            .into_iter()
            .map(|i| i - from)
            .any(|j| j > init && j <= done)
    })
}

fn fold(m: Maneuver, dtheta: f64, left: SubBehavior, right: SubBehavior, straight: SubBehavior) -> SubBehavior {
    match m {
        Maneuver::Straight => straight,
        Maneuver::Left => left,
        Maneuver::Right => right,
        Maneuver::UTurn if dtheta > 0.0 => left,
        Maneuver::UTurn => right,
    }
}

/// Labels the ego route of `s` with the default thresholds.
pub fn classify_behavior(s: &Scenario, m: &HdMap) -> BehaviorLabel {
    classify_behavior_with(s, m, &ClassifierConfig::default())
}

pub fn classify_behavior_with(s: &Scenario, m: &HdMap, cfg: &ClassifierConfig) -> BehaviorLabel {
    use SubBehavior::*;
    let ego = s.ego_track();
    let from = s.source_index();
    let to = s.destination_index().max(from);
    let cum = cumulative_heading(ego, from, to);
    let dtheta = *cum.last().expect("non-empty");
    let base = base_maneuver(dtheta, cfg);
    let sub = if is_ipc(s, ego, from, to, cfg) {
        fold(base, dtheta, IpcLft, IpcRt, IpcStr)
    } else if is_cov(s, m, ego, from, to, cfg) {
        fold(base, dtheta, CovLft, CovRt, CovStr)
    } else if is_ylw(s, ego, from, to) {
        fold(base, dtheta, YlwLft, YlwStr, YlwStr)
    } else if base == Maneuver::UTurn {
        if is_abnormal_uturn(s, m, ego, from, to, &cum, cfg) {
            UtAn
        } else {
            UtN
        }
    } else if is_stp(s, ego, from, to, cfg) {
        Stp
    } else {
        fold(base, dtheta, Lft, Rt, Str)
    };
    BehaviorLabel::from_sub(sub)
}
