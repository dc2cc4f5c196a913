//! Infraction detection and benchmark metrics: route completion, driving
//! score, success rate, open-loop L2 and grouped summaries.
//!
//! The driving score of a batch is the mean over routes of
//! `rc * Π penalty(kind)` taken over the infractions of that route,
//! reported as a percentage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::EvalConfig;
use crate::geometry::{obb_intersects, project_onto_polyline, segments_intersect, signed_side, OrientedBox, Segment, Vec2};
use crate::map::HdMap;
use crate::policy::Predictor;
use crate::replay::AgentView;
use crate::scenario::{AgentCategory, Scenario, SignalState, TICK_DT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfractionKind {
    CollisionPedestrian,
    CollisionCyclist,
    CollisionVehicle,
    CollisionStatic,
    RedLight,
    OffRoad,
    RouteDeviation,
    Timeout,
    PolicyFailure,
}

impl InfractionKind {
    pub const ALL: [InfractionKind; 9] = [
        InfractionKind::CollisionPedestrian,
        InfractionKind::CollisionCyclist,
        InfractionKind::CollisionVehicle,
        InfractionKind::CollisionStatic,
        InfractionKind::RedLight,
        InfractionKind::OffRoad,
        InfractionKind::RouteDeviation,
        InfractionKind::Timeout,
        InfractionKind::PolicyFailure,
    ];

    /// Kinds that never scale the score; they gate success instead.
    pub fn is_non_penalizing(self) -> bool {
        matches!(
            self,
            InfractionKind::Timeout | InfractionKind::RouteDeviation | InfractionKind::PolicyFailure
        )
    }

    /// Kinds that fail an episode outright.
    pub fn is_violation(self) -> bool {
        matches!(
            self,
            InfractionKind::CollisionPedestrian
                | InfractionKind::CollisionCyclist
                | InfractionKind::CollisionVehicle
                | InfractionKind::CollisionStatic
                | InfractionKind::OffRoad
                | InfractionKind::RedLight
                | InfractionKind::RouteDeviation
        )
    }

    pub fn is_collision(self) -> bool {
        matches!(
            self,
            InfractionKind::CollisionPedestrian
                | InfractionKind::CollisionCyclist
                | InfractionKind::CollisionVehicle
                | InfractionKind::CollisionStatic
        )
    }

    /// Collision kind for a struck agent. Cyclists and other two/three
    /// wheelers share the vehicle kind.
    pub fn collision_with(category: AgentCategory) -> InfractionKind {
        match category {
            AgentCategory::Pedestrian => InfractionKind::CollisionPedestrian,
            _ => InfractionKind::CollisionVehicle,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InfractionKind::CollisionPedestrian => "collision_pedestrian",
            InfractionKind::CollisionCyclist => "collision_cyclist",
            InfractionKind::CollisionVehicle => "collision_vehicle",
            InfractionKind::CollisionStatic => "collision_static",
            InfractionKind::RedLight => "red_light",
            InfractionKind::OffRoad => "off_road",
            InfractionKind::RouteDeviation => "route_deviation",
            InfractionKind::Timeout => "timeout",
            InfractionKind::PolicyFailure => "policy_failure",
        }
    }
}

impl fmt::Display for InfractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Infraction {
    pub kind: InfractionKind,
    pub tick: u32,
    pub penalty: f64,
    pub terminal: bool,
}

/// Multiplicative penalty per infraction kind. Partial documents overlay the
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "BTreeMap<InfractionKind, f64>", into = "BTreeMap<InfractionKind, f64>")]
pub struct PenaltyTable(BTreeMap<InfractionKind, f64>);

impl Default for PenaltyTable {
    fn default() -> Self {
        use InfractionKind::*;
        PenaltyTable(BTreeMap::from([
            (CollisionPedestrian, 0.50),
            (CollisionCyclist, 0.60),
            (CollisionVehicle, 0.60),
            (CollisionStatic, 0.65),
            (RedLight, 0.70),
            (OffRoad, 1.0),
            (RouteDeviation, 1.0),
            (Timeout, 1.0),
            (PolicyFailure, 1.0),
        ]))
    }
}

impl From<BTreeMap<InfractionKind, f64>> for PenaltyTable {
    fn from(overrides: BTreeMap<InfractionKind, f64>) -> Self {
        let mut t = PenaltyTable::default();
        t.0.extend(overrides);
        t
    }
}

impl From<PenaltyTable> for BTreeMap<InfractionKind, f64> {
    fn from(t: PenaltyTable) -> Self {
        t.0
    }
}

impl PenaltyTable {
    pub fn get(&self, kind: InfractionKind) -> f64 {
        self.0.get(&kind).copied().unwrap_or(1.0)
    }

    pub fn set(&mut self, kind: InfractionKind, p: f64) {
        self.0.insert(kind, p);
    }

    pub fn check(&self) -> Result<(), String> {
        for (&k, &p) in &self.0 {
            if !(p > 0.0 && p <= 1.0) {
                return Err(format!("{k}: coefficient {p} outside (0, 1]"));
            }
            if k.is_non_penalizing() && p != 1.0 {
                return Err(format!("{k}: non-penalizing kind must map to 1.0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Arrived,
    Collision,
    OffRoad,
    Timeout,
    PolicyFailure,
    PolicyTimeout,
    ProtocolViolation,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Arrived => "arrived",
            Termination::Collision => "collision",
            Termination::OffRoad => "off_road",
            Termination::Timeout => "timeout",
            Termination::PolicyFailure => "policy_failure",
            Termination::PolicyTimeout => "policy_timeout",
            Termination::ProtocolViolation => "protocol_violation",
        }
    }
}

/// Outcome of one closed-loop episode. One JSON object per line in
/// `episodes.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeResult {
    pub scenario_id: String,
    pub rc: f64,
    pub infractions: Vec<Infraction>,
    pub success: bool,
    pub termination: Termination,
    pub duration_ticks: u32,
}

impl EpisodeResult {
    /// Single-route score `rc * Π p`, in [0, 1].
    pub fn score(&self, table: &PenaltyTable) -> f64 {
        self.infractions
            .iter()
            .fold(self.rc, |acc, inf| acc * table.get(inf.kind))
    }

    pub fn has(&self, kind: InfractionKind) -> bool {
        self.infractions.iter().any(|i| i.kind == kind)
    }
}

/// Success rule: enough of the route, destination reached, and no violation
/// or policy failure.
pub fn episode_success(rc: f64, destination_reached: bool, infractions: &[Infraction], cfg: &EvalConfig) -> bool {
    rc >= cfg.rc_success_threshold
        && destination_reached
        && !infractions
            .iter()
            .any(|i| i.kind.is_violation() || i.kind == InfractionKind::PolicyFailure)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("no episode results to aggregate")]
pub struct EmptyResults;

/// Mean per-route score ×100.
pub fn driving_score(results: &[EpisodeResult], table: &PenaltyTable) -> Result<f64, EmptyResults> {
    if results.is_empty() {
        return Err(EmptyResults);
    }
    let sum: f64 = results.iter().map(|r| r.score(table)).sum();
    Ok(100.0 * sum / results.len() as f64)
}

/// Percentage of successful episodes.
pub fn success_rate(results: &[EpisodeResult]) -> Result<f64, EmptyResults> {
    if results.is_empty() {
        return Err(EmptyResults);
    }
    let n = results.iter().filter(|r| r.success).count();
    Ok(100.0 * n as f64 / results.len() as f64)
}

/// Route-progress tracker: projected arc length advances only while the
/// lateral offset stays within the deviation bound; progress is the running
/// maximum.
#[derive(Debug, Clone)]
pub struct RouteProgress {
    route: Vec<Vec2>,
    total: f64,
    deviation_bound: f64,
    best_s: f64,
}

impl RouteProgress {
    pub fn new(route: &[Vec2], deviation_bound: f64) -> Self {
        let total = crate::geometry::cumulative_lengths(route).last().copied().unwrap_or(0.0);
        RouteProgress {
            route: route.to_vec(),
            total,
            deviation_bound,
            best_s: 0.0,
        }
    }

    /// Feeds one ego position; returns its raw projection `(s, d)`.
    pub fn update(&mut self, p: Vec2) -> (f64, f64) {
        let proj = project_onto_polyline(&self.route, p);
        if proj.distance() <= self.deviation_bound && proj.s > self.best_s {
            self.best_s = proj.s;
        }
        (proj.s, proj.d)
    }

    pub fn completion(&self) -> f64 {
        if self.total <= 0.0 {
            return 1.0;
        }
        (self.best_s / self.total).clamp(0.0, 1.0)
    }

    pub fn best_s(&self) -> f64 {
        self.best_s
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}

/// Route completion over a sequence of ego positions.
pub fn route_completion(positions: impl IntoIterator<Item = Vec2>, route: &[Vec2], deviation_bound: f64) -> f64 {
    let mut prog = RouteProgress::new(route, deviation_bound);
    for p in positions {
        prog.update(p);
    }
    prog.completion()
}

/// Per-tick world snapshot handed to the infraction monitor.
#[derive(Debug, Clone, Copy)]
pub struct TickState<'a> {
    pub tick: u32,
    pub ego_box: OrientedBox,
    pub agents: &'a [AgentView],
}

/// Stateful per-episode infraction detector.
pub struct InfractionMonitor<'a> {
    scenario: &'a Scenario,
    map: &'a HdMap,
    cfg: &'a EvalConfig,
    /// Signal groups whose stop line the route crosses.
    route_lines: Vec<usize>,
    prev_pos: Option<Vec2>,
    offroad_ticks: u32,
    deviating: bool,
    raised: BTreeSet<InfractionKind>,
    progress: RouteProgress,
    destination_reached: bool,
}

impl<'a> InfractionMonitor<'a> {
    pub fn new(scenario: &'a Scenario, map: &'a HdMap, cfg: &'a EvalConfig) -> Self {
        let route = &scenario.ego.route_waypoints;
        let route_lines = scenario
            .signals
            .iter()
            .enumerate()
            .filter(|(_, g)| {
                route
                    .windows(2)
                    .any(|w| segments_intersect(&Segment::new(w[0], w[1]), &g.stop_line))
            })
            .map(|(i, _)| i)
            .collect();
        InfractionMonitor {
            scenario,
            map,
            cfg,
            route_lines,
            prev_pos: None,
            offroad_ticks: 0,
            deviating: false,
            raised: BTreeSet::new(),
            progress: RouteProgress::new(route, cfg.route_deviation_m),
            destination_reached: false,
        }
    }

    /// Records an infraction. With deduplication each kind fires once per
    /// episode; otherwise once per event.
    fn raise(&mut self, out: &mut Vec<Infraction>, kind: InfractionKind, tick: u32, terminal: bool) {
        if self.cfg.dedup_infractions && self.raised.contains(&kind) {
            return;
        }
        if out.iter().any(|i| i.kind == kind) {
            return;
        }
        self.raised.insert(kind);
        out.push(Infraction {
            kind,
            tick,
            penalty: self.cfg.penalties.get(kind),
            terminal,
        });
    }

    /// Seeds the monitor with the initial ego position without raising.
    pub fn start(&mut self, ego: Vec2) {
        self.prev_pos = Some(ego);
        self.progress.update(ego);
        self.note_destination(ego);
    }

    fn note_destination(&mut self, ego: Vec2) {
        if ego.dist(self.scenario.ego.destination.position()) <= self.cfg.arrival_radius_m {
            self.destination_reached = true;
        }
    }

    /// Checks one tick and returns newly raised infractions.
    pub fn check(&mut self, st: &TickState<'_>) -> Vec<Infraction> {
        let mut out = Vec::new();
        let ego = st.ego_box.center;

        for a in st.agents {
            if obb_intersects(&st.ego_box, &a.bbox) {
                self.raise(&mut out, InfractionKind::collision_with(a.category), st.tick, true);
            }
        }

        if self.map.point_in_drivable(ego) {
            self.offroad_ticks = 0;
        } else {
            self.offroad_ticks += 1;
            if f64::from(self.offroad_ticks) * TICK_DT > self.cfg.offroad_grace_s + 1e-9 {
                self.raise(&mut out, InfractionKind::OffRoad, st.tick, true);
            }
        }

        if let Some(prev) = self.prev_pos {
            let motion = Segment::new(prev, ego);
            let crossed_red = self.route_lines.iter().any(|&gi| {
                let g = &self.scenario.signals[gi];
                let before = signed_side(&g.stop_line, prev).unwrap_or(0);
                let after = signed_side(&g.stop_line, ego).unwrap_or(0);
                before < 0
                    && after >= 0
                    && segments_intersect(&motion, &g.stop_line)
                    && g.state_at(st.tick) == Ok(SignalState::Red)
            });
            if crossed_red {
                self.raise(&mut out, InfractionKind::RedLight, st.tick, false);
            }
        }

        let (_, d) = self.progress.update(ego);
        if d.abs() > self.cfg.route_deviation_m {
            if !self.deviating {
                self.deviating = true;
                self.raise(&mut out, InfractionKind::RouteDeviation, st.tick, false);
            }
        } else {
            self.deviating = false;
        }

        self.note_destination(ego);
        self.prev_pos = Some(ego);
        out
    }

    pub fn route_completion(&self) -> f64 {
        self.progress.completion()
    }

    /// Monotone route progress in meters.
    pub fn progress_s(&self) -> f64 {
        self.progress.best_s()
    }

    pub fn destination_reached(&self) -> bool {
        self.destination_reached
    }

    /// True once the whole route is covered and the ego is at the destination.
    pub fn arrived(&self, ego: Vec2) -> bool {
        self.progress.completion() >= 1.0 - 1e-9
            && ego.dist(self.scenario.ego.destination.position()) <= self.cfg.arrival_radius_m
    }
}

/// Open-loop error of a predictor against the recorded ego track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Report {
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub avg: f64,
    pub n_anchors: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("ego track spans {span_s:.1} s, shorter than the {horizon_s:.1} s horizon")]
pub struct TrackTooShort {
    pub span_s: f64,
    pub horizon_s: f64,
}

/// Evaluation horizons of the open-loop metric.
pub const L2_HORIZONS_S: [f64; 2] = [1.0, 2.0];

/// Mean displacement error at 1 s and 2 s over every anchor tick with at
/// least two ticks of history and a full 2 s of future.
pub fn open_loop_l2(predictor: &mut dyn Predictor, s: &Scenario, anchor_stride: u32) -> Result<L2Report, TrackTooShort> {
    let track = s.ego_track();
    let first = track.first_tick();
    let last = track.last_tick();
    let max_h = L2_HORIZONS_S[1];
    let h_ticks: Vec<u32> = L2_HORIZONS_S
        .iter()
        .map(|h| (h / TICK_DT).round() as u32)
        .collect();
    let span_s = f64::from(last - first) * TICK_DT;
    if last < first + 1 + h_ticks[1] {
        return Err(TrackTooShort {
            span_s,
            horizon_s: max_h,
        });
    }
    let mut sums = [0.0f64; 2];
    let mut n = 0usize;
    let mut anchor = first + 1;
    while anchor + h_ticks[1] <= last {
        let history: Vec<_> = track.samples.iter().take_while(|smp| smp.tick <= anchor).copied().collect();
        let preds = predictor.predict(&history, &L2_HORIZONS_S);
        for (k, &h) in h_ticks.iter().enumerate() {
            let (truth, _) = track
                .state_at_tick(anchor + h)
                .expect("anchor range keeps horizons inside the track");
            sums[k] += preds[k].dist(truth.position());
        }
        n += 1;
        anchor += anchor_stride.max(1);
    }
    let l2_1s = sums[0] / n as f64;
    let l2_2s = sums[1] / n as f64;
    Ok(L2Report {
        l2_1s,
        l2_2s,
        avg: (l2_1s + l2_2s) / 2.0,
        n_anchors: n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub n: usize,
    pub sr: f64,
    pub ds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct L2Summary {
    #[serde(rename = "1s")]
    pub l2_1s: f64,
    #[serde(rename = "2s")]
    pub l2_2s: f64,
    pub avg: f64,
}

/// Batch summary: overall score and success rate plus grouped breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub n_total: usize,
    pub ds: f64,
    pub sr: f64,
    pub per_behavior: BTreeMap<String, GroupStats>,
    pub per_weather: BTreeMap<String, GroupStats>,
    pub per_time: BTreeMap<String, GroupStats>,
    pub l2: Option<L2Summary>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SummaryError {
    #[error(transparent)]
    Empty(#[from] EmptyResults),
    #[error("episode result references unknown scenario {0}")]
    DanglingScenario(String),
}

/// Label used for scenarios without a behavior label.
pub const UNLABELED: &str = "unlabeled";

/// Aggregates results into overall and grouped statistics. Results are
/// ordered by scenario id before aggregation.
pub fn summarize(results: &[EpisodeResult], scenarios: &[Scenario], table: &PenaltyTable) -> Result<BenchmarkSummary, SummaryError> {
    if results.is_empty() {
        return Err(EmptyResults.into());
    }
    let by_id: BTreeMap<&str, &Scenario> = scenarios.iter().map(|s| (s.scenario_id.as_str(), s)).collect();
    let mut sorted: Vec<&EpisodeResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));

    let mut behavior: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
    let mut weather: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
    let mut time: BTreeMap<String, Vec<EpisodeResult>> = BTreeMap::new();
    for r in &sorted {
        let s = by_id
            .get(r.scenario_id.as_str())
            .ok_or_else(|| SummaryError::DanglingScenario(r.scenario_id.clone()))?;
        let label = s
            .behavior
            .map_or_else(|| UNLABELED.to_string(), |b| b.main.as_str().to_string());
        behavior.entry(label).or_default().push((*r).clone());
        weather.entry(s.weather.as_str().to_string()).or_default().push((*r).clone());
        time.entry(s.time_of_day.as_str().to_string()).or_default().push((*r).clone());
    }
    let all: Vec<EpisodeResult> = sorted.into_iter().cloned().collect();
    let group = |m: BTreeMap<String, Vec<EpisodeResult>>| -> BTreeMap<String, GroupStats> {
        m.into_iter()
            .map(|(k, v)| {
                let stats = GroupStats {
                    n: v.len(),
                    sr: success_rate(&v).expect("groups are non-empty"),
                    ds: driving_score(&v, table).expect("groups are non-empty"),
                };
                (k, stats)
            })
            .collect()
    };
    Ok(BenchmarkSummary {
        n_total: all.len(),
        ds: driving_score(&all, table)?,
        sr: success_rate(&all)?,
        per_behavior: group(behavior),
        per_weather: group(weather),
        per_time: group(time),
        l2: None,
    })
}
