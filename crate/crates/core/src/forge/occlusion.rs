//! Removes agents the recorded ego could not have seen.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::geometry::{ray_first_hit, OrientedBox};
use crate::scenario::{AgentCategory, AgentTrack, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    #[default]
    None,
    Vehicles,
    All,
}

impl OcclusionMode {
    pub fn applies_to(self, c: AgentCategory) -> bool {
        match self {
            OcclusionMode::None => false,
            OcclusionMode::Vehicles => c.is_four_wheeler(),
            OcclusionMode::All => true,
        }
    }
}

impl std::str::FromStr for OcclusionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(OcclusionMode::None),
            "vehicles" => Ok(OcclusionMode::Vehicles),
            "all" => Ok(OcclusionMode::All),
            _ => Err(format!("unknown occlusion mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RemovalRule {
    #[default]
    DropNeverVisible,
    /// Keep only the longest visible run of each track.
    VisibleIntervals,
}

impl std::str::FromStr for RemovalRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "drop-never-visible" => Ok(RemovalRule::DropNeverVisible),
            "visible-intervals" => Ok(RemovalRule::VisibleIntervals),
            _ => Err(format!("unknown removal rule {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcclusionConfig {
    pub mode: OcclusionMode,
    pub sensor_range: f64,
    pub boundary_samples: usize,
    pub removal_rule: RemovalRule,
    pub visibility_fraction_min: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        OcclusionConfig {
            mode: OcclusionMode::None,
            sensor_range: 85.0,
            boundary_samples: 8,
            removal_rule: RemovalRule::DropNeverVisible,
            visibility_fraction_min: 0.10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid occlusion config: {0}")]
pub struct OcclusionConfigError(pub String);

impl OcclusionConfig {
    pub fn check(&self) -> Result<(), OcclusionConfigError> {
        if self.boundary_samples < 4 {
            return Err(OcclusionConfigError("boundary_samples must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.visibility_fraction_min) {
            return Err(OcclusionConfigError("visibility_fraction_min must lie in [0, 1]".into()));
        }
        if !(self.sensor_range > 0.0) {
            return Err(OcclusionConfigError("sensor_range must be positive".into()));
        }
        Ok(())
    }
}

/// Per-track visibility flags, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Visibility {
    pub track_id: String,
    pub visible: Vec<bool>,
}

fn visible_at(target: &OrientedBox, origin: crate::geometry::Vec2, others: &[OrientedBox], cfg: &OcclusionConfig) -> bool {
    std::iter::once(target.center)
        .chain(target.perimeter_points(cfg.boundary_samples))
        .any(|p| origin.dist(p) <= cfg.sensor_range && ray_first_hit(origin, p, others).is_none())
}

/// Visibility of every non-ego sample as seen from the recorded ego center.
pub fn visibility(s: &Scenario, cfg: &OcclusionConfig) -> Vec<Visibility> {
    let ego = s.ego_track();
    let ticks: Vec<u32> = (0..s.n_ticks).collect();
    let per_tick: Vec<Vec<(usize, bool)>> = crate::par::map(&ticks, |&tick| {
        let Some((ego_pose, _)) = ego.state_at_tick(tick) else {
            return Vec::new();
        };
        let origin = ego_pose.position();
        let alive: Vec<(usize, OrientedBox)> = s
            .tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| t.track_id != ego.track_id)
            .filter_map(|(i, t)| t.state_at_tick(tick).map(|(p, _)| (i, t.box_at(&p))))
            .collect();
        alive
            .iter()
            .map(|(i, target)| {
                let others: Vec<OrientedBox> = alive.iter().filter(|(j, _)| j != i).map(|(_, b)| *b).collect();
                (*i, visible_at(target, origin, &others, cfg))
            })
            .collect()
    });
    let mut out: Vec<Visibility> = s
        .tracks
        .iter()
        .map(|t| Visibility {
            track_id: t.track_id.clone(),
            visible: vec![false; t.samples.len()],
        })
        .collect();
    for (tick, flags) in ticks.iter().zip(per_tick) {
        for (i, vis) in flags {
            if let Ok(k) = s.tracks[i].samples.binary_search_by_key(tick, |x| x.tick) {
                out[i].visible[k] = vis;
            }
        }
    }
    out
}

/// Longest run of `true`, earliest on ties. Returns `[start, end)`.
fn longest_run(flags: &[bool]) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut i = 0;
    while i < flags.len() {
        if !flags[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < flags.len() && flags[i] {
            i += 1;
        }
        if best.map_or(true, |(a, b)| i - start > b - a) {
            best = Some((start, i));
        }
    }
    best
}

fn trim(t: &AgentTrack, flags: &[bool], rule: RemovalRule, min_fraction: f64) -> Option<AgentTrack> {
    match rule {
        RemovalRule::DropNeverVisible => {
            let frac = flags.iter().filter(|&&v| v).count() as f64 / flags.len() as f64;
            (frac >= min_fraction).then(|| t.clone())
        }
        RemovalRule::VisibleIntervals => {
            let (a, b) = longest_run(flags)?;
            (b - a >= 2).then(|| AgentTrack {
                samples: t.samples[a..b].to_vec(),
                ..t.clone()
            })
        }
    }
}

/// Report of what a filter pass removed or trimmed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub removed: BTreeSet<String>,
    pub trimmed: BTreeSet<String>,
}

pub fn occlusion_filter(s: &Scenario, cfg: &OcclusionConfig) -> Scenario {
    occlusion_filter_report(s, cfg).0
}

/// Filters `s` and reports the affected track ids. The ego and categories
/// outside the mode are never touched.
pub fn occlusion_filter_report(s: &Scenario, cfg: &OcclusionConfig) -> (Scenario, FilterOutcome) {
    let mut out = s.clone();
    let mut outcome = FilterOutcome::default();
    if cfg.mode == OcclusionMode::None {
        return (out, outcome);
    }
    let vis = visibility(s, cfg);
    out.tracks = s
        .tracks
        .iter()
        .zip(&vis)
        .filter_map(|(t, v)| {
            if t.track_id == s.ego.agent_id || !cfg.mode.applies_to(t.category) {
                return Some(t.clone());
            }
            match trim(t, &v.visible, cfg.removal_rule, cfg.visibility_fraction_min) {
                None => {
                    outcome.removed.insert(t.track_id.clone());
                    None
                }
                Some(kept) => {
                    if kept.samples.len() != t.samples.len() {
                        outcome.trimmed.insert(t.track_id.clone());
                    }
                    Some(kept)
                }
            }
        })
        .collect();
    (out, outcome)
}
