//! Analytic baseline policies.

use crate::geometry::{point_at_arclength, polyline_length, project_onto_polyline, Vec2};
use crate::replay::{ControlCommand, EpisodeContext, Observation};
use crate::scenario::{sample_track_pose, AgentTrack, TICK_DT};

use super::{OutputMode, Policy, PolicyError, PolicyHandle, PolicyKind, PolicyOutput};

/// Points emitted per waypoint reply.
pub const HORIZON_POINTS: usize = 20;
/// Straight extension appended past the route end.
pub const ROUTE_EXTENSION_M: f64 = 20.0;

fn builtin(name: &str, mode: OutputMode) -> PolicyHandle {
    PolicyHandle {
        name: name.into(),
        kind: PolicyKind::Builtin,
        mode,
    }
}

/// Replays the recorded ego: positions at `t + k * waypoint_dt` for
/// `k = 1..=20`, clamped to the end of the recording.
#[derive(Debug, Default)]
pub struct ExpertReplay {
    track: Option<AgentTrack>,
    waypoint_dt: f64,
}

impl ExpertReplay {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Policy for ExpertReplay {
    fn handle(&self) -> PolicyHandle {
        builtin("expert", OutputMode::WaypointOutput)
    }

    fn reset(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        self.track = Some(ctx.scenario.ego_track().clone());
        self.waypoint_dt = ctx.cfg.waypoint_dt_s;
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        let track = self.track.as_ref().expect("reset before act");
        let end = f64::from(track.last_tick()) * TICK_DT;
        let now = f64::from(obs.tick) * TICK_DT;
        let pts = (1..=HORIZON_POINTS)
            .map(|k| {
                let t = (now + self.waypoint_dt * k as f64).min(end);
                sample_track_pose(track, t).expect("clamped to the track").0.position()
            })
            .collect();
        Ok(PolicyOutput::Waypoints(pts))
    }
}

/// Waypoints along `route_remaining` (plus a straight extension in
/// `end_dir`) starting from the ego's projection, spaced `v_target *
/// waypoint_dt` apart.
pub fn follower_points(ego: Vec2, route_remaining: &[Vec2], end_dir: Vec2, v_target: f64, waypoint_dt: f64) -> Vec<Vec2> {
    let mut path = route_remaining.to_vec();
    let last = *path.last().expect("non-empty route");
    path.push(last + end_dir * ROUTE_EXTENSION_M);
    let s0 = project_onto_polyline(&path, ego).s;
    let total = polyline_length(&path);
    let step = v_target * waypoint_dt;
    (1..=HORIZON_POINTS)
        .map(|k| point_at_arclength(&path, (s0 + step * k as f64).min(total)))
        .collect()
}

/// Unit direction of the final route segment.
pub fn route_end_direction(route: &[Vec2]) -> Vec2 {
    let n = route.len();
    let d = route[n - 1] - route[n - 2];
    d * (1.0 / d.norm())
}

/// Follows the remaining route at a constant target speed, ignoring agents
/// and signals.
#[derive(Debug)]
pub struct PidFollower {
    v_target: f64,
    waypoint_dt: f64,
    end_dir: Vec2,
}

impl PidFollower {
    pub fn new(v_target: f64) -> Self {
        PidFollower {
            v_target,
            waypoint_dt: 0.5,
            end_dir: Vec2::new(1.0, 0.0),
        }
    }
}

impl Policy for PidFollower {
    fn handle(&self) -> PolicyHandle {
        builtin("pid-follower", OutputMode::WaypointOutput)
    }

    fn reset(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        self.waypoint_dt = ctx.cfg.waypoint_dt_s;
        self.end_dir = route_end_direction(&ctx.scenario.ego.route_waypoints);
        self.v_target = self.v_target.min(ctx.cfg.vehicle.max_speed);
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        Ok(PolicyOutput::Waypoints(follower_points(
            obs.ego.position(),
            &obs.route_remaining,
            self.end_dir,
            self.v_target,
            self.waypoint_dt,
        )))
    }
}

/// Holds the current speed and heading.
#[derive(Debug)]
pub struct ConstantVelocity {
    waypoint_dt: f64,
}

impl ConstantVelocity {
    pub fn new() -> Self {
        ConstantVelocity { waypoint_dt: 0.5 }
    }
}

impl Default for ConstantVelocity {
    fn default() -> Self {
        Self::new()
    }
}

impl Policy for ConstantVelocity {
    fn handle(&self) -> PolicyHandle {
        builtin("constant-velocity", OutputMode::WaypointOutput)
    }

    fn reset(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        self.waypoint_dt = ctx.cfg.waypoint_dt_s;
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        let p = obs.ego.position();
        let dir = Vec2::from_angle(obs.ego.pose.heading);
        let step = obs.ego.speed * self.waypoint_dt;
        Ok(PolicyOutput::Waypoints(
            (1..=HORIZON_POINTS).map(|k| p + dir * (step * k as f64)).collect(),
        ))
    }
}

/// Asks to stay where it is.
#[derive(Debug, Default)]
pub struct Stationary;

impl Stationary {
    pub fn new() -> Self {
        Stationary
    }
}

impl Policy for Stationary {
    fn handle(&self) -> PolicyHandle {
        builtin("stationary", OutputMode::WaypointOutput)
    }

    fn reset(&mut self, _ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        Ok(PolicyOutput::Waypoints(vec![obs.ego.position()]))
    }
}

/// Emits the same command every tick.
#[derive(Debug)]
pub struct FixedControl {
    name: &'static str,
    command: ControlCommand,
}

impl FixedControl {
    pub fn new(name: &'static str, command: ControlCommand) -> Self {
        FixedControl { name, command }
    }
}

impl Policy for FixedControl {
    fn handle(&self) -> PolicyHandle {
        builtin(self.name, OutputMode::ControlOutput)
    }

    fn reset(&mut self, _ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        Ok(())
    }

    fn act(&mut self, _obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        Ok(PolicyOutput::Control(self.command))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn follower_points_are_evenly_spaced_and_extend_past_the_end() {
        let route = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)];
        let pts = follower_points(Vec2::new(0.0, 0.5), &route, Vec2::new(1.0, 0.0), 4.0, 0.5);
        assert_eq!(pts.len(), HORIZON_POINTS);
        assert!((pts[0].x - 2.0).abs() < 1e-12 && pts[0].y == 0.0);
        assert!((pts[4].x - 10.0).abs() < 1e-12);
        assert!((pts[19].x - 30.0).abs() < 1e-12);
    }
}
