//! Closed-loop episode execution.
//!
//! Non-ego agents and signals replay their recordings; the ego integrates a
//! kinematic bicycle model driven by the policy under test. Everything runs
//! lockstep at 10 Hz and is deterministic for fixed inputs.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{ControllerGains, EvalConfig, VehicleParams};
use crate::geometry::{normalize_angle, polyline_tail, OrientedBox, Segment, Vec2, EPS};
use crate::map::HdMap;
use crate::metrics::{episode_success, EpisodeResult, Infraction, InfractionKind, InfractionMonitor, Termination, TickState};
use crate::policy::{Policy, PolicyError, PolicyOutput};
use crate::scenario::{sample_track_pose, AgentCategory, BeforeSchedule, Pose2, Scenario, SignalGroup, SignalState, TICK_DT};

/// Sub-steps per integration call.
pub const SUBSTEPS: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub pose: Pose2,
    pub speed: f64,
    pub steering_angle: f64,
    pub acceleration: f64,
}

impl EgoState {
    pub fn at_rest(pose: Pose2) -> Self {
        EgoState {
            pose,
            speed: 0.0,
            steering_angle: 0.0,
            acceleration: 0.0,
        }
    }

    pub fn position(&self) -> Vec2 {
        self.pose.position()
    }
}

/// Normalized actuation. Components are clamped on construction; NaN maps
/// to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

fn clamp_or_zero(v: f64, lo: f64, hi: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(lo, hi)
    }
}

impl ControlCommand {
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        ControlCommand {
            steer: clamp_or_zero(steer, -1.0, 1.0),
            throttle: clamp_or_zero(throttle, 0.0, 1.0),
            brake: clamp_or_zero(brake, 0.0, 1.0),
        }
    }

    pub const IDLE: ControlCommand = ControlCommand {
        steer: 0.0,
        throttle: 0.0,
        brake: 0.0,
    };

    pub const FULL_BRAKE: ControlCommand = ControlCommand {
        steer: 0.0,
        throttle: 0.0,
        brake: 1.0,
    };
}

/// Advances the ego by `dt` using `SUBSTEPS` semi-implicit bicycle steps:
/// speed first, then steering, then heading from the new speed and steering,
/// then position along the new heading.
pub fn integrate_ego(s: &EgoState, c: &ControlCommand, p: &VehicleParams, dt: f64) -> EgoState {
    let c = ControlCommand::new(c.steer, c.throttle, c.brake);
    let h = dt / f64::from(SUBSTEPS);
    let mut v = s.speed;
    let mut delta = s.steering_angle.clamp(-p.max_steer, p.max_steer);
    let mut theta = s.pose.heading;
    let mut x = s.pose.x;
    let mut y = s.pose.y;
    let target = c.steer * p.max_steer;
    let max_step = p.max_steer_rate * h;
    for _ in 0..SUBSTEPS {
        let a = c.throttle * p.max_accel - c.brake * p.max_brake - p.drag * v * v;
        v = (v + a * h).clamp(0.0, p.max_speed);
        delta = (delta + (target - delta).clamp(-max_step, max_step)).clamp(-p.max_steer, p.max_steer);
        theta = normalize_angle(theta + v / p.wheelbase * delta.tan() * h);
        x += v * theta.cos() * h;
        y += v * theta.sin() * h;
    }
    EgoState {
        pose: Pose2 { x, y, heading: theta },
        speed: v,
        steering_angle: delta,
        acceleration: (v - s.speed) / dt,
    }
}

/// Pure-pursuit lateral law plus a PI speed loop with drag feed-forward.
/// The integral term is the only state.
#[derive(Debug, Clone, Default)]
pub struct TrackingController {
    integral: f64,
}

impl TrackingController {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn control(
        &mut self,
        s: &EgoState,
        wps: &[Vec2],
        v_target: f64,
        p: &VehicleParams,
        g: &ControllerGains,
        dt: f64,
    ) -> ControlCommand {
        let steer = pure_pursuit_steer(s, wps, p, g);
        let v = s.speed;
        let e = v_target - v;
        if v_target <= EPS && v <= 0.1 {
            self.integral = 0.0;
        } else {
            self.integral = (self.integral + e * dt).clamp(-g.integral_limit, g.integral_limit);
        }
        let a_cmd = p.drag * v * v + g.kp * e + g.ki * self.integral;
        let (throttle, brake) = if a_cmd > 0.0 {
            (a_cmd / p.max_accel, 0.0)
        } else {
            (0.0, -a_cmd / p.max_brake)
        };
        ControlCommand::new(steer, throttle, brake)
    }
}

/// Lookahead distance for the current speed.
pub fn lookahead_distance(v: f64, g: &ControllerGains) -> f64 {
    (g.lookahead_gain * v).clamp(g.min_lookahead, g.max_lookahead)
}

fn ahead(s: &EgoState, p: Vec2) -> bool {
    (p - s.position()).dot(Vec2::from_angle(s.pose.heading)) > EPS
}

/// Normalized steering toward the point at lookahead arc length along the
/// path formed by the ego position and the waypoints still ahead. Short
/// paths fall back to their last point.
pub fn pure_pursuit_steer(s: &EgoState, wps: &[Vec2], p: &VehicleParams, g: &ControllerGains) -> f64 {
    let first_ahead = wps.iter().position(|&w| ahead(s, w));
    let Some(first) = first_ahead else {
        return 0.0;
    };
    let ego = s.position();
    let mut path = Vec::with_capacity(wps.len() - first + 1);
    path.push(ego);
    path.extend(wps[first..].iter().copied().filter(|w| w.dist(ego) > EPS));
    if path.len() < 2 {
        return 0.0;
    }
    let ld = lookahead_distance(s.speed, g);
    let target = crate::geometry::point_at_arclength(&path, ld);
    let to = target - ego;
    let d = to.norm();
    if d <= EPS {
        return 0.0;
    }
    let alpha = normalize_angle(to.angle() - s.pose.heading);
    let delta = (2.0 * p.wheelbase * alpha.sin() / d).atan();
    (delta / p.max_steer).clamp(-1.0, 1.0)
}

/// Target speed implied by time-spaced waypoints: distance to the first
/// waypoint over the spacing, zero if it lies behind.
pub fn infer_target_speed(s: &EgoState, wps: &[Vec2], waypoint_dt: f64, v_max: f64) -> f64 {
    match wps.first() {
        Some(&w) if ahead(s, w) => (w.dist(s.position()) / waypoint_dt).min(v_max),
        _ => 0.0,
    }
}

/// Stateless single-step translation of waypoints into a command.
pub fn waypoints_to_control(
    s: &EgoState,
    wps: &[Vec2],
    v_target: f64,
    p: &VehicleParams,
    g: &ControllerGains,
) -> ControlCommand {
    TrackingController::new().control(s, wps, v_target, p, g, TICK_DT)
}

pub fn signal_state_at(g: &SignalGroup, tick: u32) -> Result<SignalState, BeforeSchedule> {
    g.state_at(tick)
}

/// A replayed agent as seen by the ego at one tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentView {
    pub track_id: String,
    pub category: AgentCategory,
    pub bbox: OrientedBox,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalView {
    pub group_id: String,
    pub state: SignalState,
    pub stop_line: Segment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub tick: u32,
    pub ego: EgoState,
    pub route_remaining: Vec<Vec2>,
    pub agents: Vec<AgentView>,
    pub signals: Vec<SignalView>,
}

/// Non-ego agents at `tick`. After the recording ends, agents present on
/// its last tick hold their final pose with zero speed.
pub fn world_agents(s: &Scenario, tick: u32) -> Vec<AgentView> {
    let last = s.n_ticks.saturating_sub(1);
    s.tracks
        .iter()
        .filter(|t| t.track_id != s.ego.agent_id)
        .filter_map(|t| {
            let (pose, speed) = if tick <= last {
                if !t.alive_at(tick) {
                    return None;
                }
                sample_track_pose(t, f64::from(tick) * TICK_DT).ok()?
            } else {
                if !t.alive_at(last) {
                    return None;
                }
                let final_sample = t.samples[t.samples.len() - 1];
                (final_sample.pose, 0.0)
            };
            Some(AgentView {
                track_id: t.track_id.clone(),
                category: t.category,
                bbox: t.box_at(&pose),
                speed,
            })
        })
        .collect()
}

pub fn signal_views(s: &Scenario, tick: u32) -> Vec<SignalView> {
    s.signals
        .iter()
        .filter_map(|g| {
            g.state_at(tick).ok().map(|state| SignalView {
                group_id: g.group_id.clone(),
                state,
                stop_line: g.stop_line,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: u32,
    pub ego: EgoState,
    pub control: ControlCommand,
    /// Monotone route progress (arc length).
    pub s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<TraceRecord>,
    pub termination: Termination,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error("policy exceeded the per-tick wall-time limit at tick {tick}")]
    PolicyTimeout { tick: u32 },
    #[error("policy protocol violation at tick {tick}: {reason}")]
    Protocol { tick: u32, reason: String },
}

impl EpisodeError {
    pub fn termination(&self) -> Termination {
        match self {
            EpisodeError::PolicyTimeout { .. } => Termination::PolicyTimeout,
            EpisodeError::Protocol { .. } => Termination::ProtocolViolation,
        }
    }

    pub fn tick(&self) -> u32 {
        match self {
            EpisodeError::PolicyTimeout { tick } | EpisodeError::Protocol { tick, .. } => *tick,
        }
    }
}

/// Static facts a policy may use when an episode starts.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeContext<'a> {
    pub scenario: &'a Scenario,
    pub cfg: &'a EvalConfig,
    pub seed: u64,
}

/// Number of ticks before the episode times out.
pub fn timeout_ticks(s: &Scenario, cfg: &EvalConfig) -> u32 {
    let secs = (cfg.timeout_factor * s.expert_route_duration_s()).max(cfg.min_timeout_s);
    (secs / TICK_DT).round() as u32
}

/// Ego box dimensions for an episode (taken from the recorded ego).
fn ego_box(s: &Scenario, state: &EgoState) -> OrientedBox {
    s.ego_track().box_at(&state.pose)
}

/// Runs one closed-loop episode.
///
/// A disconnected policy yields a `policy_failure` result. Per-tick timeouts
/// and protocol violations abort with an error.
pub fn run_episode(
    s: &Scenario,
    m: &HdMap,
    policy: &mut dyn Policy,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<(EpisodeResult, EpisodeTrace), EpisodeError> {
    let started = Instant::now();
    let track = s.ego_track();
    let src = track.samples[s.source_index()];
    let t0 = src.tick;
    let mut ego = EgoState {
        pose: src.pose,
        speed: src.speed.clamp(0.0, cfg.vehicle.max_speed),
        steering_angle: 0.0,
        acceleration: 0.0,
    };
    let route = &s.ego.route_waypoints;
    let limit = timeout_ticks(s, cfg);
    let mut monitor = InfractionMonitor::new(s, m, cfg);
    monitor.start(ego.position());
    let mut controller = TrackingController::new();
    let mut infractions: Vec<Infraction> = Vec::new();
    let mut records = Vec::new();
    let ctx = EpisodeContext {
        scenario: s,
        cfg,
        seed,
    };

    let fail = |tick: u32, e: PolicyError| -> Result<Option<Infraction>, EpisodeError> {
        match e {
            PolicyError::Disconnected => Ok(Some(Infraction {
                kind: InfractionKind::PolicyFailure,
                tick,
                penalty: cfg.penalties.get(InfractionKind::PolicyFailure),
                terminal: true,
            })),
            PolicyError::Timeout => Err(EpisodeError::PolicyTimeout { tick }),
            PolicyError::Protocol(reason) => Err(EpisodeError::Protocol { tick, reason }),
        }
    };

    let mut tick = t0;
    let termination = match policy.reset(&ctx) {
        Err(e) => {
            infractions.extend(fail(tick, e)?);
            Termination::PolicyFailure
        }
        Ok(()) => loop {
            let s_now = monitor.progress_s();
            let obs = Observation {
                tick,
                ego,
                route_remaining: polyline_tail(route, s_now),
                agents: world_agents(s, tick)
                    .into_iter()
                    .filter(|a| a.bbox.center.dist(ego.position()) <= cfg.sensing_range_m)
                    .collect(),
                signals: signal_views(s, tick),
            };
            let control = match policy.act(&obs) {
                Ok(PolicyOutput::Control(c)) => ControlCommand::new(c.steer, c.throttle, c.brake),
                Ok(PolicyOutput::Waypoints(wps)) => {
                    let v_t = infer_target_speed(&ego, &wps, cfg.waypoint_dt_s, cfg.vehicle.max_speed);
                    controller.control(&ego, &wps, v_t, &cfg.vehicle, &cfg.controller, TICK_DT)
                }
                Err(e) => {
                    infractions.extend(fail(tick, e)?);
                    break Termination::PolicyFailure;
                }
            };
            ego = integrate_ego(&ego, &control, &cfg.vehicle, TICK_DT);
            tick += 1;
            let agents = world_agents(s, tick);
            let new = monitor.check(&TickState {
                tick,
                ego_box: ego_box(s, &ego),
                agents: &agents,
            });
            let terminal = new.iter().find(|i| i.terminal).map(|i| i.kind);
            infractions.extend(new);
            records.push(TraceRecord {
                tick,
                ego,
                control,
                s: monitor.progress_s(),
            });
            if let Some(kind) = terminal {
                break if kind.is_collision() {
                    Termination::Collision
                } else {
                    Termination::OffRoad
                };
            }
            if monitor.arrived(ego.position()) {
                break Termination::Arrived;
            }
            if tick - t0 >= limit {
                infractions.push(Infraction {
                    kind: InfractionKind::Timeout,
                    tick,
                    penalty: cfg.penalties.get(InfractionKind::Timeout),
                    terminal: true,
                });
                break Termination::Timeout;
            }
        },
    };

    let rc = monitor.route_completion();
    let success = termination == Termination::Arrived
        && episode_success(rc, monitor.destination_reached(), &infractions, cfg);
    let result = EpisodeResult {
        scenario_id: s.scenario_id.clone(),
        rc,
        infractions,
        success,
        termination,
        duration_ticks: records.len() as u32,
    };
    policy.finish(&result);
    let trace = EpisodeTrace {
        records,
        termination,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    Ok((result, trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    #[test]
    fn zero_command_at_rest_is_fixed_point() {
        let s = EgoState::at_rest(Pose2::new(1.0, 2.0, 0.3));
        let n = integrate_ego(&s, &ControlCommand::IDLE, &params(), TICK_DT);
        assert_eq!(n, s);
    }

    #[test]
    fn straight_line_at_constant_speed() {
        let p = params();
        let s = EgoState {
            speed: 10.0,
            ..EgoState::at_rest(Pose2::new(0.0, 0.0, 0.0))
        };
        let thr = p.drag * 100.0 / p.max_accel;
        let n = integrate_ego(&s, &ControlCommand::new(0.0, thr, 0.0), &p, TICK_DT);
        assert!((n.pose.x - 1.0).abs() < 1e-12, "{}", n.pose.x);
        assert!((n.speed - 10.0).abs() < 1e-12);
    }

    #[test]
    fn command_is_clamped() {
        let c = ControlCommand::new(3.0, -1.0, f64::NAN);
        assert_eq!(c, ControlCommand::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn controller_sign_conventions() {
        let p = params();
        let g = ControllerGains::default();
        let s = EgoState {
            speed: 5.0,
            ..EgoState::at_rest(Pose2::new(0.0, 0.0, 0.0))
        };
        let c = waypoints_to_control(&s, &[Vec2::new(5.0, 0.0), Vec2::new(10.0, 0.0)], 5.0, &p, &g);
        assert_eq!(c.steer, 0.0);
        assert!((c.throttle - p.drag * 25.0 / p.max_accel).abs() < 1e-3);
        assert_eq!(c.brake, 0.0);

        let ld = lookahead_distance(5.0, &g);
        let left = [Vec2::new(1e-3, ld)];
        assert!(waypoints_to_control(&s, &left, 5.0, &p, &g).steer > 0.0);

        let c = waypoints_to_control(&s, &[Vec2::new(10.0, 0.0)], 0.0, &p, &g);
        assert!(c.brake > 0.0 && c.throttle == 0.0);
    }

    #[test]
    fn target_speed_from_time_spacing() {
        let s = EgoState::at_rest(Pose2::new(0.0, 0.0, 0.0));
        assert!((infer_target_speed(&s, &[Vec2::new(4.0, 0.0)], 0.5, 15.0) - 8.0).abs() < 1e-12);
        assert_eq!(infer_target_speed(&s, &[Vec2::new(-4.0, 0.0)], 0.5, 15.0), 0.0);
        assert_eq!(infer_target_speed(&s, &[Vec2::new(40.0, 0.0)], 0.5, 15.0), 15.0);
    }

    #[test]
    fn signal_step_function() {
        let g = SignalGroup {
            group_id: "g".into(),
            stop_line: Segment::new(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0)),
            controlled_lane_ids: Default::default(),
            schedule: vec![(0, SignalState::Green), (50, SignalState::Yellow), (80, SignalState::Red)],
        };
        assert_eq!(signal_state_at(&g, 0).unwrap(), SignalState::Green);
        assert_eq!(signal_state_at(&g, 60).unwrap(), SignalState::Yellow);
        assert_eq!(signal_state_at(&g, 79).unwrap(), SignalState::Yellow);
        assert_eq!(signal_state_at(&g, 80).unwrap(), SignalState::Red);
    }
}
