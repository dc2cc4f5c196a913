//! Scenario data model: agent tracks, signal schedules, ego assignment and
//! metadata tags, with loading, validation, interpolation and statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{self, angle_diff, normalize_angle, OrientedBox, Segment, Vec2, EPS};
use crate::map::HdMap;

/// Recording rate of every scenario.
pub const TICK_HZ: u32 = 10;
/// Duration of one tick in seconds.
pub const TICK_DT: f64 = 1.0 / TICK_HZ as f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    /// Radians in (-π, π].
    pub heading: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Pose2 {
            x,
            y,
            heading: normalize_angle(heading),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.heading.is_finite()
            && self.heading > -std::f64::consts::PI
            && self.heading <= std::f64::consts::PI
    }

    pub fn transformed(&self, rotation: f64, translation: Vec2) -> Pose2 {
        let p = self.position().rotate(rotation) + translation;
        Pose2::new(p.x, p.y, self.heading + rotation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentCategory {
    Car,
    Truck,
    Bus,
    Van,
    Motorcycle,
    Tricycle,
    Cyclist,
    Pedestrian,
}

impl AgentCategory {
    pub const ALL: [AgentCategory; 8] = [
        AgentCategory::Car,
        AgentCategory::Truck,
        AgentCategory::Bus,
        AgentCategory::Van,
        AgentCategory::Motorcycle,
        AgentCategory::Tricycle,
        AgentCategory::Cyclist,
        AgentCategory::Pedestrian,
    ];

    /// Four-wheeled motor vehicles.
    pub fn is_four_wheeler(self) -> bool {
        matches!(
            self,
            AgentCategory::Car | AgentCategory::Truck | AgentCategory::Bus | AgentCategory::Van
        )
    }

    /// Any motorized road vehicle, including two- and three-wheelers.
    pub fn is_motor_vehicle(self) -> bool {
        self.is_four_wheeler() || matches!(self, AgentCategory::Motorcycle | AgentCategory::Tricycle)
    }

    pub fn is_vulnerable(self) -> bool {
        matches!(self, AgentCategory::Pedestrian | AgentCategory::Cyclist)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AgentCategory::Car => "car",
            AgentCategory::Truck => "truck",
            AgentCategory::Bus => "bus",
            AgentCategory::Van => "van",
            AgentCategory::Motorcycle => "motorcycle",
            AgentCategory::Tricycle => "tricycle",
            AgentCategory::Cyclist => "cyclist",
            AgentCategory::Pedestrian => "pedestrian",
        }
    }
}

impl fmt::Display for AgentCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One recorded sample, serialized as `[tick, x, y, heading_rad, speed]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(u32, f64, f64, f64, f64)", into = "(u32, f64, f64, f64, f64)")]
pub struct TrackSample {
    pub tick: u32,
    pub pose: Pose2,
    pub speed: f64,
}

impl From<(u32, f64, f64, f64, f64)> for TrackSample {
    fn from((tick, x, y, heading, speed): (u32, f64, f64, f64, f64)) -> Self {
        // Stored verbatim; validation rejects out-of-range headings.
        TrackSample {
            tick,
            pose: Pose2 { x, y, heading },
            speed,
        }
    }
}

impl From<TrackSample> for (u32, f64, f64, f64, f64) {
    fn from(s: TrackSample) -> Self {
        (s.tick, s.pose.x, s.pose.y, s.pose.heading, s.speed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentTrack {
    pub track_id: String,
    pub category: AgentCategory,
    pub length: f64,
    pub width: f64,
    /// Box height; parsed for compatibility and otherwise unused.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    pub samples: Vec<TrackSample>,
}

impl AgentTrack {
    pub fn first_tick(&self) -> u32 {
        self.samples[0].tick
    }

    pub fn last_tick(&self) -> u32 {
        self.samples[self.samples.len() - 1].tick
    }

    pub fn alive_at(&self, tick: u32) -> bool {
        tick >= self.first_tick() && tick <= self.last_tick()
    }

    /// Pose and speed at an integer tick within the sample span. Exact at
    /// stored samples.
    pub fn state_at_tick(&self, tick: u32) -> Option<(Pose2, f64)> {
        if !self.alive_at(tick) {
            return None;
        }
        match self.samples.binary_search_by_key(&tick, |s| s.tick) {
            Ok(i) => Some((self.samples[i].pose, self.samples[i].speed)),
            Err(i) => {
                let (a, b) = (&self.samples[i - 1], &self.samples[i]);
                let u = f64::from(tick - a.tick) / f64::from(b.tick - a.tick);
                Some(interpolate(a, b, u))
            }
        }
    }

    pub fn box_at(&self, pose: &Pose2) -> OrientedBox {
        OrientedBox::new(pose.position(), pose.heading, self.length, self.width)
    }

    /// Recorded path as a polyline (consecutive duplicates removed).
    pub fn path(&self) -> Vec<Vec2> {
        let mut out: Vec<Vec2> = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            let p = s.pose.position();
            if out.last().map_or(true, |q| q.dist(p) > EPS) {
                out.push(p);
            }
        }
        out
    }

    pub fn path_length(&self) -> f64 {
        geometry::polyline_length(&self.path())
    }
}

fn interpolate(a: &TrackSample, b: &TrackSample, u: f64) -> (Pose2, f64) {
    let p = a.pose.position().lerp(b.pose.position(), u);
    let heading = normalize_angle(a.pose.heading + angle_diff(b.pose.heading, a.pose.heading) * u);
    let speed = a.speed + (b.speed - a.speed) * u;
    (
        Pose2 {
            x: p.x,
            y: p.y,
            heading,
        },
        speed,
    )
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("time {time_s} s outside track span [{start_s}, {end_s}] s")]
pub struct OutOfRange {
    pub time_s: f64,
    pub start_s: f64,
    pub end_s: f64,
}

/// Continuous-time replay of a track: exact at sample times, linear in
/// position and speed and shortest-arc in heading between samples.
pub fn sample_track_pose(track: &AgentTrack, time_s: f64) -> Result<(Pose2, f64), OutOfRange> {
    let start_s = f64::from(track.first_tick()) * TICK_DT;
    let end_s = f64::from(track.last_tick()) * TICK_DT;
    let tick_f = time_s * f64::from(TICK_HZ);
    let err = OutOfRange {
        time_s,
        start_s,
        end_s,
    };
    if !tick_f.is_finite()
        || tick_f < f64::from(track.first_tick()) - 1e-9
        || tick_f > f64::from(track.last_tick()) + 1e-9
    {
        return Err(err);
    }
    let rounded = tick_f.round();
    if (tick_f - rounded).abs() <= 1e-9 {
        let tick = rounded as u32;
        if let Ok(i) = track.samples.binary_search_by_key(&tick, |s| s.tick) {
            return Ok((track.samples[i].pose, track.samples[i].speed));
        }
    }
    let i = track.samples.partition_point(|s| f64::from(s.tick) <= tick_f);
    if i == 0 {
        return Ok((track.samples[0].pose, track.samples[0].speed));
    }
    if i >= track.samples.len() {
        let last = track.samples[track.samples.len() - 1];
        return Ok((last.pose, last.speed));
    }
    let (a, b) = (&track.samples[i - 1], &track.samples[i]);
    let u = (tick_f - f64::from(a.tick)) / f64::from(b.tick - a.tick);
    Ok(interpolate(a, b, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalState {
    Red,
    Yellow,
    Green,
    Off,
}

impl SignalState {
    pub fn as_str(self) -> &'static str {
        match self {
            SignalState::Red => "red",
            SignalState::Yellow => "yellow",
            SignalState::Green => "green",
            SignalState::Off => "off",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalGroup {
    pub group_id: String,
    /// Directed so that approaching traffic is on the right (negative side).
    pub stop_line: Segment,
    pub controlled_lane_ids: BTreeSet<String>,
    pub schedule: Vec<(u32, SignalState)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("tick {tick} precedes the first schedule entry of signal group {group_id}")]
pub struct BeforeSchedule {
    pub group_id: String,
    pub tick: u32,
}

impl SignalGroup {
    /// State of the latest schedule entry at or before `tick`. Boundaries
    /// belong to the new state.
    pub fn state_at(&self, tick: u32) -> Result<SignalState, BeforeSchedule> {
        let i = self.schedule.partition_point(|(t, _)| *t <= tick);
        if i == 0 {
            return Err(BeforeSchedule {
                group_id: self.group_id.clone(),
                tick,
            });
        }
        Ok(self.schedule[i - 1].1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EgoAssignment {
    pub agent_id: String,
    pub source: Pose2,
    pub destination: Pose2,
    pub route_waypoints: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Sunny,
    Cloudy,
    Overcast,
    Rain,
    Fog,
    Snow,
}

impl Weather {
    pub const ALL: [Weather; 6] = [
        Weather::Sunny,
        Weather::Cloudy,
        Weather::Overcast,
        Weather::Rain,
        Weather::Fog,
        Weather::Snow,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Weather::Sunny => "sunny",
            Weather::Cloudy => "cloudy",
            Weather::Overcast => "overcast",
            Weather::Rain => "rain",
            Weather::Fog => "fog",
            Weather::Snow => "snow",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeOfDay {
    Morning,
    Noon,
    Afternoon,
    Evening,
    Night,
}

impl TimeOfDay {
    pub const ALL: [TimeOfDay; 5] = [
        TimeOfDay::Morning,
        TimeOfDay::Noon,
        TimeOfDay::Afternoon,
        TimeOfDay::Evening,
        TimeOfDay::Night,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TimeOfDay::Morning => "morning",
            TimeOfDay::Noon => "noon",
            TimeOfDay::Afternoon => "afternoon",
            TimeOfDay::Evening => "evening",
            TimeOfDay::Night => "night",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MainBehavior {
    #[serde(rename = "IPC")]
    Ipc,
    #[serde(rename = "COV")]
    Cov,
    #[serde(rename = "YLW")]
    Ylw,
    #[serde(rename = "UT")]
    Ut,
    #[serde(rename = "STP")]
    Stp,
    #[serde(rename = "STR")]
    Str,
    #[serde(rename = "LFT")]
    Lft,
    #[serde(rename = "RT")]
    Rt,
}

impl MainBehavior {
    pub const ALL: [MainBehavior; 8] = [
        MainBehavior::Ipc,
        MainBehavior::Cov,
        MainBehavior::Ylw,
        MainBehavior::Ut,
        MainBehavior::Stp,
        MainBehavior::Str,
        MainBehavior::Lft,
        MainBehavior::Rt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MainBehavior::Ipc => "IPC",
            MainBehavior::Cov => "COV",
            MainBehavior::Ylw => "YLW",
            MainBehavior::Ut => "UT",
            MainBehavior::Stp => "STP",
            MainBehavior::Str => "STR",
            MainBehavior::Lft => "LFT",
            MainBehavior::Rt => "RT",
        }
    }
}

impl fmt::Display for MainBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubBehavior {
    #[serde(rename = "COV-LFT")]
    CovLft,
    #[serde(rename = "COV-RT")]
    CovRt,
    #[serde(rename = "COV-STR")]
    CovStr,
    #[serde(rename = "IPC-LFT")]
    IpcLft,
    #[serde(rename = "IPC-RT")]
    IpcRt,
    #[serde(rename = "IPC-STR")]
    IpcStr,
    #[serde(rename = "YLW-LFT")]
    YlwLft,
    #[serde(rename = "YLW-STR")]
    YlwStr,
    #[serde(rename = "UT-N")]
    UtN,
    #[serde(rename = "UT-AN")]
    UtAn,
    #[serde(rename = "LFT")]
    Lft,
    #[serde(rename = "RT")]
    Rt,
    #[serde(rename = "STR")]
    Str,
    #[serde(rename = "STP")]
    Stp,
}

impl SubBehavior {
    pub const ALL: [SubBehavior; 14] = [
        SubBehavior::CovLft,
        SubBehavior::CovRt,
        SubBehavior::CovStr,
        SubBehavior::IpcLft,
        SubBehavior::IpcRt,
        SubBehavior::IpcStr,
        SubBehavior::YlwLft,
        SubBehavior::YlwStr,
        SubBehavior::UtN,
        SubBehavior::UtAn,
        SubBehavior::Lft,
        SubBehavior::Rt,
        SubBehavior::Str,
        SubBehavior::Stp,
    ];

    pub fn main(self) -> MainBehavior {
        use SubBehavior::*;
        match self {
            CovLft | CovRt | CovStr => MainBehavior::Cov,
            IpcLft | IpcRt | IpcStr => MainBehavior::Ipc,
            YlwLft | YlwStr => MainBehavior::Ylw,
            UtN | UtAn => MainBehavior::Ut,
            Lft => MainBehavior::Lft,
            Rt => MainBehavior::Rt,
            Str => MainBehavior::Str,
            Stp => MainBehavior::Stp,
        }
    }

    pub fn as_str(self) -> &'static str {
        use SubBehavior::*;
        match self {
            CovLft => "COV-LFT",
            CovRt => "COV-RT",
            CovStr => "COV-STR",
            IpcLft => "IPC-LFT",
            IpcRt => "IPC-RT",
            IpcStr => "IPC-STR",
            YlwLft => "YLW-LFT",
            YlwStr => "YLW-STR",
            UtN => "UT-N",
            UtAn => "UT-AN",
            Lft => "LFT",
            Rt => "RT",
            Str => "STR",
            Stp => "STP",
        }
    }
}

impl fmt::Display for SubBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SubBehavior {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SubBehavior::ALL
            .into_iter()
            .find(|b| b.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown sub-behavior {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorLabel {
    pub main: MainBehavior,
    pub sub: SubBehavior,
}

impl BehaviorLabel {
    pub fn from_sub(sub: SubBehavior) -> Self {
        BehaviorLabel { main: sub.main(), sub }
    }
}

impl fmt::Display for BehaviorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.main, self.sub)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub scenario_id: String,
    pub intersection_id: String,
    pub tick_hz: u32,
    pub n_ticks: u32,
    pub weather: Weather,
    pub time_of_day: TimeOfDay,
    pub behavior: Option<BehaviorLabel>,
    pub tracks: Vec<AgentTrack>,
    pub signals: Vec<SignalGroup>,
    pub ego: EgoAssignment,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("scenario invariant violated at {field}: {reason}")]
    Invariant { field: String, reason: String },
}

fn invariant(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invariant {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Tolerance of the route-spacing invariant.
const SPACING_TOL: f64 = 1e-6;

impl Scenario {
    pub fn track(&self, id: &str) -> Option<&AgentTrack> {
        self.tracks.iter().find(|t| t.track_id == id)
    }

    pub fn ego_track(&self) -> &AgentTrack {
        self.track(&self.ego.agent_id)
            .expect("validated scenario has its ego track")
    }

    pub fn signal(&self, id: &str) -> Option<&SignalGroup> {
        self.signals.iter().find(|g| g.group_id == id)
    }

    /// Serialized document (pretty JSON, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Checks every per-document invariant. Rejects rather than repairs.
    pub fn check(&self) -> Result<(), ScenarioError> {
        if self.tick_hz != TICK_HZ {
            return Err(invariant(
                "tick_hz",
                format!("must be exactly {TICK_HZ}, got {}", self.tick_hz),
            ));
        }
        if self.n_ticks == 0 {
            return Err(invariant("n_ticks", "must be positive"));
        }
        if let Some(b) = self.behavior {
            if b.sub.main() != b.main {
                return Err(invariant(
                    "behavior",
                    format!("sub-label {} inconsistent with main {}", b.sub, b.main),
                ));
            }
        }
        let mut ids = BTreeSet::new();
        for t in &self.tracks {
            if !ids.insert(t.track_id.as_str()) {
                return Err(invariant("AgentTrack.track_id", format!("duplicate {}", t.track_id)));
            }
            check_track(t, self.n_ticks)?;
        }
        for g in &self.signals {
            check_signal(g, self.n_ticks)?;
        }
        self.check_ego()
    }

    fn check_ego(&self) -> Result<(), ScenarioError> {
        let ego = &self.ego;
        let track = self.track(&ego.agent_id).ok_or_else(|| {
            invariant(
                "EgoAssignment.agent_id",
                format!("no track with id {:?}", ego.agent_id),
            )
        })?;
        for (name, pose) in [("source", &ego.source), ("destination", &ego.destination)] {
            if !pose.is_valid() {
                return Err(invariant(format!("EgoAssignment.{name}"), "invalid pose"));
            }
            let path = track.path();
            let d = geometry::project_onto_polyline(&path, pose.position()).distance();
            if d > 1.0 {
                return Err(invariant(
                    format!("EgoAssignment.{name}"),
                    format!("{d:.3} m from the recorded ego path (limit 1 m)"),
                ));
            }
        }
        let wps = &ego.route_waypoints;
        if wps.len() < 2 {
            return Err(invariant("EgoAssignment.route_waypoints", "needs at least 2 waypoints"));
        }
        if wps.iter().any(|p| !p.is_finite()) {
            return Err(invariant("EgoAssignment.route_waypoints", "non-finite coordinate"));
        }
        for (i, w) in wps.windows(2).enumerate() {
            let d = w[0].dist(w[1]);
            if !(1.0 - SPACING_TOL..=10.0 + SPACING_TOL).contains(&d) {
                return Err(invariant(
                    "EgoAssignment.route_waypoints",
                    format!("spacing {d:.3} m between waypoints {i} and {} outside [1, 10] m", i + 1),
                ));
            }
        }
        Ok(())
    }

    /// Ego sample index closest to the source pose.
    pub fn source_index(&self) -> usize {
        let track = self.ego_track();
        closest_sample(track, self.ego.source.position(), 0)
    }

    /// Ego sample index closest to the destination, searching after the source.
    pub fn destination_index(&self) -> usize {
        let track = self.ego_track();
        let from = self.source_index();
        closest_sample(track, self.ego.destination.position(), from)
    }

    /// Recorded duration of the route in seconds.
    pub fn expert_route_duration_s(&self) -> f64 {
        let t = self.ego_track();
        let (a, b) = (self.source_index(), self.destination_index());
        f64::from(t.samples[b].tick - t.samples[a].tick) * TICK_DT
    }

    /// Applies a rigid transform to every coordinate in the scenario.
    pub fn transformed(&self, rotation: f64, translation: Vec2) -> Scenario {
        let tf = |p: Vec2| p.rotate(rotation) + translation;
        let mut out = self.clone();
        for t in &mut out.tracks {
            for s in &mut t.samples {
                s.pose = s.pose.transformed(rotation, translation);
            }
        }
        for g in &mut out.signals {
            g.stop_line = Segment::new(tf(g.stop_line.a), tf(g.stop_line.b));
        }
        out.ego.source = out.ego.source.transformed(rotation, translation);
        out.ego.destination = out.ego.destination.transformed(rotation, translation);
        out.ego.route_waypoints = out.ego.route_waypoints.iter().map(|&p| tf(p)).collect();
        out
    }
}

fn closest_sample(track: &AgentTrack, p: Vec2, from: usize) -> usize {
    let mut best = from;
    let mut best_d = f64::INFINITY;
    for (i, s) in track.samples.iter().enumerate().skip(from) {
        let d = s.pose.position().dist(p);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn check_track(t: &AgentTrack, n_ticks: u32) -> Result<(), ScenarioError> {
    let field = |f: &str| format!("AgentTrack[{}].{f}", t.track_id);
    if !(t.length > 0.0 && t.length.is_finite()) {
        return Err(invariant(field("length"), "must be > 0"));
    }
    if !(t.width > 0.0 && t.width.is_finite()) {
        return Err(invariant(field("width"), "must be > 0"));
    }
    if t.samples.is_empty() {
        return Err(invariant(field("samples"), "must be non-empty"));
    }
    for s in &t.samples {
        if !s.pose.is_valid() {
            return Err(invariant(
                field("samples"),
                format!("tick {}: pose non-finite or heading outside (-pi, pi]", s.tick),
            ));
        }
        if !(s.speed.is_finite() && s.speed >= 0.0) {
            return Err(invariant(field("samples"), format!("tick {}: invalid speed", s.tick)));
        }
        if s.tick >= n_ticks {
            return Err(invariant(
                field("samples"),
                format!("tick {} not below n_ticks {n_ticks}", s.tick),
            ));
        }
    }
    for w in t.samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.tick <= a.tick {
            return Err(invariant(field("samples"), "ticks must be strictly increasing"));
        }
        let dt = f64::from(b.tick - a.tick) * TICK_DT;
        let disp = a.pose.position().dist(b.pose.position());
        let hi = 3.0 * a.speed.max(b.speed) * dt + SPEED_SLACK_M;
        let lo = a.speed.min(b.speed) * dt / 3.0 - SPEED_SLACK_M;
        if disp > hi || disp < lo {
            return Err(invariant(
                field("samples"),
                format!(
                    "ticks {}..{}: displacement {disp:.3} m inconsistent with recorded speed",
                    a.tick, b.tick
                ),
            ));
        }
    }
    Ok(())
}

/// Absolute slack (meters) on the displacement/speed consistency check.
const SPEED_SLACK_M: f64 = 0.05;

fn check_signal(g: &SignalGroup, n_ticks: u32) -> Result<(), ScenarioError> {
    let field = |f: &str| format!("SignalGroup[{}].{f}", g.group_id);
    if g.stop_line.length() <= EPS {
        return Err(invariant(field("stop_line"), "degenerate segment"));
    }
    if g.schedule.is_empty() || g.schedule[0].0 != 0 {
        return Err(invariant(field("schedule"), "must start at tick 0"));
    }
    if g.schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(invariant(field("schedule"), "ticks must be strictly increasing"));
    }
    if g.schedule.iter().any(|(t, _)| *t >= n_ticks) {
        return Err(invariant(field("schedule"), "entry beyond scenario end"));
    }
    Ok(())
}

/// Parses and validates one scenario document.
pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, ScenarioError> {
    let s: Scenario = serde_json::from_slice(bytes)?;
    s.check()?;
    Ok(s)
}

/// A cross-check failure between a scenario and its map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.rule, self.detail)
    }
}

/// Margin around the map bounds inside which tracks must stay.
pub const MAP_MARGIN_M: f64 = 50.0;

/// Cross-checks a loaded scenario against its map. Empty iff all pass.
pub fn validate_scenario(s: &Scenario, m: &HdMap) -> Vec<Violation> {
    let mut out = Vec::new();
    let (lo, hi) = m.bounding_box();
    let lo = lo - Vec2::new(MAP_MARGIN_M, MAP_MARGIN_M);
    let hi = hi + Vec2::new(MAP_MARGIN_M, MAP_MARGIN_M);
    for t in &s.tracks {
        let outside = t.samples.iter().find(|smp| {
            let p = smp.pose.position();
            p.x < lo.x || p.y < lo.y || p.x > hi.x || p.y > hi.y
        });
        if let Some(smp) = outside {
            out.push(Violation {
                rule: "track-out-of-bounds".into(),
                detail: format!("track {} at tick {} outside map bounds + {MAP_MARGIN_M} m", t.track_id, smp.tick),
            });
        }
    }
    for (i, p) in s.ego.route_waypoints.iter().enumerate() {
        if !m.point_in_drivable(*p) {
            out.push(Violation {
                rule: "route-off-drivable".into(),
                detail: format!("route waypoint {i} ({:.2}, {:.2}) outside drivable area", p.x, p.y),
            });
        }
    }
    for g in &s.signals {
        for lane in &g.controlled_lane_ids {
            if m.lane(lane).is_none() {
                out.push(Violation {
                    rule: "dangling-lane-ref".into(),
                    detail: format!("signal group {} references unknown lane {lane}", g.group_id),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Share {
    pub count: usize,
    pub fraction: f64,
}

/// Counts and fractions along each reporting dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub n_scenarios: usize,
    pub behavior: BTreeMap<String, Share>,
    pub agent_category: BTreeMap<String, Share>,
    pub weather: BTreeMap<String, Share>,
    pub time_of_day: BTreeMap<String, Share>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("scenario set is empty")]
pub struct EmptySet;

fn shares(counts: BTreeMap<String, usize>) -> BTreeMap<String, Share> {
    let total: usize = counts.values().sum();
    counts
        .into_iter()
        .map(|(k, count)| {
            let fraction = if total == 0 { 0.0 } else { count as f64 / total as f64 };
            (k, Share { count, fraction })
        })
        .collect()
}

/// Distribution of behaviors, agent categories and condition tags.
pub fn scenario_stats(set: &[Scenario]) -> Result<DistributionReport, EmptySet> {
    if set.is_empty() {
        return Err(EmptySet);
    }
    let mut behavior = BTreeMap::new();
    let mut agents = BTreeMap::new();
    let mut weather = BTreeMap::new();
    let mut tod = BTreeMap::new();
    for s in set {
        let key = s
            .behavior
            .map_or_else(|| "unlabeled".to_string(), |b| b.main.as_str().to_string());
        *behavior.entry(key).or_insert(0) += 1;
        for t in &s.tracks {
            *agents.entry(t.category.as_str().to_string()).or_insert(0) += 1;
        }
        *weather.entry(s.weather.as_str().to_string()).or_insert(0) += 1;
        *tod.entry(s.time_of_day.as_str().to_string()).or_insert(0) += 1;
    }
    Ok(DistributionReport {
        n_scenarios: set.len(),
        behavior: shares(behavior),
        agent_category: shares(agents),
        weather: shares(weather),
        time_of_day: shares(tod),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    pub(crate) fn minimal_doc() -> String {
        let samples: Vec<String> = (0..10)
            .map(|t| format!("[{t}, {}, 0.0, 0.0, 10.0]", t as f64))
            .collect();
        format!(
            r#"{{
  "scenario_id": "mini",
  "intersection_id": "x1",
  "tick_hz": 10,
  "n_ticks": 10,
  "weather": "sunny",
  "time_of_day": "noon",
  "behavior": null,
  "tracks": [{{"track_id": "ego", "category": "car", "length": 4.6, "width": 1.9,
              "samples": [{}]}}],
  "signals": [{{"group_id": "g", "stop_line": [[5.0, -2.0], [5.0, 2.0]],
               "controlled_lane_ids": ["l0"], "schedule": [[0, "green"]]}}],
  "ego": {{"agent_id": "ego", "source": {{"x": 0.0, "y": 0.0, "heading": 0.0}},
          "destination": {{"x": 9.0, "y": 0.0, "heading": 0.0}},
          "route_waypoints": [[0.0, 0.0], [3.0, 0.0], [6.0, 0.0], [9.0, 0.0]]}}
}}"#,
            samples.join(", ")
        )
    }

    #[test]
    fn loads_minimal_document() {
        let s = load_scenario(minimal_doc().as_bytes()).unwrap();
        assert_eq!(s.n_ticks, 10);
        assert_eq!(s.tracks.len(), 1);
        let again = load_scenario(s.to_json().as_bytes()).unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn rejects_wrong_tick_rate() {
        let doc = minimal_doc().replace("\"tick_hz\": 10", "\"tick_hz\": 20");
        match load_scenario(doc.as_bytes()) {
            Err(ScenarioError::Invariant { field, .. }) => assert!(field.contains("tick_hz")),
            other => panic!("expected tick_hz invariant error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_missing_ego_track() {
        let doc = minimal_doc().replace("\"agent_id\": \"ego\"", "\"agent_id\": \"ghost\"");
        match load_scenario(doc.as_bytes()) {
            Err(e @ ScenarioError::Invariant { .. }) => assert!(e.to_string().contains("EgoAssignment")),
            other => panic!("expected EgoAssignment error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys() {
        let doc = minimal_doc().replacen("\"n_ticks\": 10,", "\"n_ticks\": 10, \"extra\": 1,", 1);
        assert!(matches!(load_scenario(doc.as_bytes()), Err(ScenarioError::Parse(_))));
    }

    fn two_sample_track(h0: f64, h1: f64) -> AgentTrack {
        AgentTrack {
            track_id: "a".into(),
            category: AgentCategory::Car,
            length: 4.0,
            width: 2.0,
            height: None,
            samples: vec![
                TrackSample {
                    tick: 0,
                    pose: Pose2::new(0.0, 0.0, h0),
                    speed: 2.0,
                },
                TrackSample {
                    tick: 10,
                    pose: Pose2::new(2.0, 0.0, h1),
                    speed: 2.0,
                },
            ],
        }
    }

    #[test]
    fn interpolation_linear_and_exact_at_samples() {
        let t = two_sample_track(0.0, 0.0);
        let (p, v) = sample_track_pose(&t, 0.5).unwrap();
        assert!((p.x - 1.0).abs() < 1e-12);
        assert_eq!(v, 2.0);
        assert_eq!(sample_track_pose(&t, 1.0).unwrap().0, t.samples[1].pose);
        assert!(sample_track_pose(&t, 1.2).is_err());
        assert!(sample_track_pose(&t, -0.1).is_err());
    }

    #[test]
    fn interpolation_takes_short_arc() {
        // Oracle: direction of the mean of the two unit vectors.
        let (h0, h1) = (170f64.to_radians(), (-170f64).to_radians());
        let t = two_sample_track(h0, h1);
        let (p, _) = sample_track_pose(&t, 0.5).unwrap();
        let oracle = (Vec2::from_angle(h0) + Vec2::from_angle(h1)).angle();
        assert!((normalize_angle(p.heading - oracle)).abs() < 1e-9);
        assert!((p.heading.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn signal_state_step_function() {
        let g = SignalGroup {
            group_id: "g".into(),
            stop_line: Segment::new(Vec2::ZERO, Vec2::new(1.0, 0.0)),
            controlled_lane_ids: BTreeSet::new(),
            schedule: vec![(0, SignalState::Green), (50, SignalState::Yellow), (80, SignalState::Red)],
        };
        assert_eq!(g.state_at(60).unwrap(), SignalState::Yellow);
        assert_eq!(g.state_at(0).unwrap(), SignalState::Green);
        assert_eq!(g.state_at(79).unwrap(), SignalState::Yellow);
        assert_eq!(g.state_at(80).unwrap(), SignalState::Red);
        let late = SignalGroup {
            schedule: vec![(5, SignalState::Green)],
            ..g
        };
        assert!(late.state_at(2).is_err());
    }

    #[test]
    fn stats_fractions() {
        let base = load_scenario(minimal_doc().as_bytes()).unwrap();
        let mk = |sub: SubBehavior| Scenario {
            behavior: Some(BehaviorLabel::from_sub(sub)),
            ..base.clone()
        };
        let set = vec![mk(SubBehavior::Str), mk(SubBehavior::Str), mk(SubBehavior::Lft), mk(SubBehavior::Lft)];
        let r = scenario_stats(&set).unwrap();
        assert_eq!(r.behavior["STR"].fraction, 0.5);
        assert_eq!(r.behavior["LFT"].fraction, 0.5);

        let mut one = base.clone();
        let proto = one.tracks[0].clone();
        for (i, cat) in [AgentCategory::Car, AgentCategory::Car, AgentCategory::Pedestrian].into_iter().enumerate() {
            one.tracks.push(AgentTrack {
                track_id: format!("x{i}"),
                category: cat,
                ..proto.clone()
            });
        }
        let r = scenario_stats(&[one]).unwrap();
        assert_eq!(r.agent_category["car"].fraction, 0.75);
        assert_eq!(r.agent_category["pedestrian"].fraction, 0.25);

        let set: Vec<Scenario> = Weather::ALL
            .iter()
            .map(|&w| Scenario { weather: w, ..base.clone() })
            .collect();
        let r = scenario_stats(&set).unwrap();
        for w in Weather::ALL {
            assert!((r.weather[w.as_str()].fraction - 1.0 / 6.0).abs() < 1e-12);
        }
        assert!(scenario_stats(&[]).is_err());
    }
}
