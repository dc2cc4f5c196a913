//! Trajectory quality scoring and ego-vehicle selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::VehicleParams;
use crate::geometry::{resample_polyline, segment_intersection_points, signed_side, Segment};
use crate::map::HdMap;
use crate::scenario::{AgentCategory, AgentTrack, BehaviorLabel, EgoAssignment, Scenario, SignalGroup, SignalState, TrackSample, TICK_DT, TICK_HZ};

use super::classify::{classify_behavior_with, ClassifierConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScore {
    pub completeness: f64,
    pub compliance: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub completeness_weight: f64,
    pub compliance_weight: f64,
    /// Any gap longer than this zeroes completeness.
    pub max_gap_s: f64,
    /// Allowed multiple of the vehicle's speed and brake limits.
    pub limit_factor: f64,
    pub min_total: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            completeness_weight: 0.5,
            compliance_weight: 0.5,
            max_gap_s: 1.0,
            limit_factor: 1.5,
            min_total: 0.8,
        }
    }
}

fn crossed_red(signals: &[SignalGroup], a: &TrackSample, b: &TrackSample) -> bool {
    let (pa, pb) = (a.pose.position(), b.pose.position());
    signals.iter().any(|g| {
        let before = signed_side(&g.stop_line, pa);
        let after = signed_side(&g.stop_line, pb);
        matches!((before, after), (Ok(x), Ok(y)) if x < 0 && y >= 0)
            && !segment_intersection_points(&Segment::new(pa, pb), &g.stop_line).is_empty()
            && g.state_at(b.tick).ok() == Some(SignalState::Red)
    })
}

pub fn quality_score(t: &AgentTrack, m: &HdMap, signals: &[SignalGroup], p: &VehicleParams, cfg: &QualityConfig) -> QualityScore {
    let span = t.last_tick() - t.first_tick() + 1;
    let max_gap = (cfg.max_gap_s * f64::from(TICK_HZ)).round() as u32;
    let has_long_gap = t.samples.windows(2).any(|w| w[1].tick - w[0].tick > max_gap);
    let completeness = if has_long_gap {
        0.0
    } else {
        t.samples.len() as f64 / f64::from(span)
    };
    let v_lim = cfg.limit_factor * p.max_speed;
    let a_lim = cfg.limit_factor * p.max_brake;
    let compliant = t
        .samples
        .iter()
        .enumerate()
        .filter(|&(i, smp)| {
            if !m.point_in_drivable(smp.pose.position()) || smp.speed > v_lim {
                return false;
            }
            if i == 0 {
                return true;
            }
            let prev = &t.samples[i - 1];
            let dt = f64::from(smp.tick - prev.tick) * TICK_DT;
            ((smp.speed - prev.speed) / dt).abs() <= a_lim && !crossed_red(signals, prev, smp)
        })
        .count();
    let compliance = compliant as f64 / t.samples.len() as f64;
    QualityScore {
        completeness,
        compliance,
        total: cfg.completeness_weight * completeness + cfg.compliance_weight * compliance,
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SelectError {
    #[error("no eligible ego candidate")]
    NoCandidate,
    #[error("no track with id {0:?}")]
    UnknownTrack(String),
    #[error("track {0:?} is too short to carry a route")]
    TooShort(String),
}

/// Minimum path length of an ego candidate.
pub const MIN_EGO_PATH_M: f64 = 20.0;
/// Recorded time kept after the destination.
pub const DESTINATION_TAIL_TICKS: usize = 20;

/// Re-targets the scenario's ego assignment to `track_id`: source at its
/// first sample, destination 2 s before its end, route along its path.
pub fn assign_ego(s: &Scenario, track_id: &str) -> Result<Scenario, SelectError> {
    let t = s.track(track_id).ok_or_else(|| SelectError::UnknownTrack(track_id.into()))?;
    let n = t.samples.len();
    let dest = if n > DESTINATION_TAIL_TICKS + 1 { n - 1 - DESTINATION_TAIL_TICKS } else { n - 1 };
    let pts: Vec<_> = t.samples[..=dest].iter().map(|x| x.pose.position()).collect();
    let route = resample_polyline(&pts, 2.0, 1.0);
    if route.len() < 2 {
        return Err(SelectError::TooShort(track_id.into()));
    }
    let mut out = s.clone();
    out.ego = EgoAssignment {
        agent_id: track_id.into(),
        source: t.samples[0].pose,
        destination: t.samples[dest].pose,
        route_waypoints: route,
    };
    Ok(out)
}

/// Picks the eligible car whose behavior is least represented in
/// `distribution`; ties go to the smaller track id.
pub fn select_ego(
    s: &Scenario,
    m: &HdMap,
    distribution: &BTreeMap<BehaviorLabel, u64>,
    p: &VehicleParams,
    qcfg: &QualityConfig,
    ccfg: &ClassifierConfig,
) -> Result<String, SelectError> {
    let mut best: Option<(u64, &str)> = None;
    for t in &s.tracks {
        let full_span = t.first_tick() == 0 && t.last_tick() + 1 >= s.n_ticks;
        if t.category != AgentCategory::Car || !full_span || t.path_length() < MIN_EGO_PATH_M {
            continue;
        }
        if quality_score(t, m, &s.signals, p, qcfg).total < qcfg.min_total {
            continue;
        }
        let Ok(candidate) = assign_ego(s, &t.track_id) else {
            continue;
        };
        let label = classify_behavior_with(&candidate, m, ccfg);
        let count = distribution.get(&label).copied().unwrap_or(0);
        let better = match best {
            None => true,
            Some((c, id)) => count < c || (count == c && t.track_id.as_str() < id),
        };
        if better {
            best = Some((count, &t.track_id));
        }
    }
    best.map(|(_, id)| id.to_string()).ok_or(SelectError::NoCandidate)
}
