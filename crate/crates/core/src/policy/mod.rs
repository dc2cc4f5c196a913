//! Policy abstraction, spec parsing and open-loop predictors.

pub mod bridge;
pub mod builtins;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::metrics::EpisodeResult;
use crate::replay::{ControlCommand, EpisodeContext, Observation};
use crate::scenario::{sample_track_pose, AgentTrack, TrackSample, TICK_DT};

pub use builtins::{ConstantVelocity, ExpertReplay, FixedControl, PidFollower, Stationary};

/// What a policy returns each tick.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyOutput {
    Control(ControlCommand),
    /// World-frame points spaced `waypoint_dt` apart in time.
    Waypoints(Vec<Vec2>),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error("policy disconnected")]
    Disconnected,
    #[error("policy reply timed out")]
    Timeout,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    ControlOutput,
    WaypointOutput,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PolicyKind {
    Builtin,
    Bridge { endpoint: String },
}

/// Descriptor of a policy, recorded in run manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyHandle {
    pub name: String,
    #[serde(flatten)]
    pub kind: PolicyKind,
    pub mode: OutputMode,
}

/// A closed-loop driving policy. One instance drives one episode at a time.
pub trait Policy: Send {
    fn handle(&self) -> PolicyHandle;

    /// Called once before the first observation of an episode.
    fn reset(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), PolicyError>;

    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError>;

    /// Called once with the final result.
    fn finish(&mut self, _result: &EpisodeResult) {}
}

/// Open-loop trajectory predictor. Receives the recorded ego history up to
/// and including the anchor sample and returns one position per horizon.
pub trait Predictor {
    fn predict(&mut self, history: &[TrackSample], horizons_s: &[f64]) -> Vec<Vec2>;
}

/// Reads the future straight from the recording; exact by construction.
pub struct ExpertPredictor<'a> {
    track: &'a AgentTrack,
}

impl<'a> ExpertPredictor<'a> {
    pub fn new(track: &'a AgentTrack) -> Self {
        ExpertPredictor { track }
    }
}

impl Predictor for ExpertPredictor<'_> {
    fn predict(&mut self, history: &[TrackSample], horizons_s: &[f64]) -> Vec<Vec2> {
        let anchor = history.last().expect("non-empty history").tick;
        horizons_s
            .iter()
            .map(|h| {
                let tick = anchor + (h / TICK_DT).round() as u32;
                let t = tick.min(self.track.last_tick());
                sample_track_pose(self.track, f64::from(t) * TICK_DT)
                    .expect("clamped tick lies within the track")
                    .0
                    .position()
            })
            .collect()
    }
}

/// Straight-line extrapolation of the last finite-difference velocity.
pub struct ConstantVelocityPredictor;

impl Predictor for ConstantVelocityPredictor {
    fn predict(&mut self, history: &[TrackSample], horizons_s: &[f64]) -> Vec<Vec2> {
        let last = history[history.len() - 1];
        let p = last.pose.position();
        let vel = if history.len() >= 2 {
            let prev = history[history.len() - 2];
            let dt = f64::from(last.tick - prev.tick) * TICK_DT;
            (p - prev.pose.position()) * (1.0 / dt)
        } else {
            Vec2::from_angle(last.pose.heading) * last.speed
        };
        horizons_s.iter().map(|&h| p + vel * h).collect()
    }
}

/// Predicts no motion at all.
pub struct StationaryPredictor;

impl Predictor for StationaryPredictor {
    fn predict(&mut self, history: &[TrackSample], horizons_s: &[f64]) -> Vec<Vec2> {
        let p = history[history.len() - 1].pose.position();
        vec![p; horizons_s.len()]
    }
}

/// Default target speed of the route follower.
pub const DEFAULT_FOLLOWER_SPEED: f64 = 8.0;

/// Parsed `builtin:<name>[?k=v...]` or `bridge:<host>:<port>`.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Expert,
    PidFollower { v_target: f64 },
    ConstantVelocity,
    Stationary,
    /// Full brake every tick.
    Brake,
    /// Zero control every tick.
    Idle,
    Bridge { host: String, port: u16 },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicySpecError {
    #[error("policy spec {0:?} must start with builtin: or bridge:")]
    Scheme(String),
    #[error("unknown builtin policy {0:?}")]
    UnknownBuiltin(String),
    #[error("bad parameter {key:?} for {policy}: {reason}")]
    Param {
        policy: String,
        key: String,
        reason: String,
    },
    #[error("bridge endpoint {0:?} is not host:port")]
    Endpoint(String),
    #[error("{0} cannot be used as an open-loop predictor")]
    NotPredictor(String),
}

fn parse_params(name: &str, query: Option<&str>) -> Result<Vec<(String, String)>, PolicySpecError> {
    let Some(q) = query else {
        return Ok(Vec::new());
    };
    q.split('&')
        .filter(|kv| !kv.is_empty())
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| PolicySpecError::Param {
                    policy: name.into(),
                    key: kv.into(),
                    reason: "expected k=v".into(),
                })
        })
        .collect()
}

impl FromStr for PolicySpec {
    type Err = PolicySpecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(rest) = s.strip_prefix("builtin:") {
            let (name, query) = match rest.split_once('?') {
                Some((n, q)) => (n, Some(q)),
                None => (rest, None),
            };
            let params = parse_params(name, query)?;
            let no_params = |spec: PolicySpec| match params.first() {
                None => Ok(spec),
                Some((k, _)) => Err(PolicySpecError::Param {
                    policy: name.into(),
                    key: k.clone(),
                    reason: "unknown parameter".into(),
                }),
            };
            match name {
                "expert" => no_params(PolicySpec::Expert),
                "constant-velocity" => no_params(PolicySpec::ConstantVelocity),
                "stationary" => no_params(PolicySpec::Stationary),
                "brake" => no_params(PolicySpec::Brake),
                "idle" => no_params(PolicySpec::Idle),
                "pid-follower" => {
                    let mut v_target = DEFAULT_FOLLOWER_SPEED;
                    for (k, v) in &params {
                        let bad = |reason: &str| PolicySpecError::Param {
                            policy: name.into(),
                            key: k.clone(),
                            reason: reason.into(),
                        };
                        match k.as_str() {
                            "v" | "v_target" => {
                                v_target = v.parse().map_err(|_| bad("not a number"))?;
                                if !(v_target > 0.0 && v_target.is_finite()) {
                                    return Err(bad("must be positive"));
                                }
                            }
                            _ => return Err(bad("unknown parameter")),
                        }
                    }
                    Ok(PolicySpec::PidFollower { v_target })
                }
                other => Err(PolicySpecError::UnknownBuiltin(other.into())),
            }
        } else if let Some(rest) = s.strip_prefix("bridge:") {
            let (host, port) = rest
                .rsplit_once(':')
                .ok_or_else(|| PolicySpecError::Endpoint(rest.into()))?;
            let port: u16 = port.parse().map_err(|_| PolicySpecError::Endpoint(rest.into()))?;
            if host.is_empty() {
                return Err(PolicySpecError::Endpoint(rest.into()));
            }
            Ok(PolicySpec::Bridge {
                host: host.into(),
                port,
            })
        } else {
            Err(PolicySpecError::Scheme(s.into()))
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicySpec::Expert => f.write_str("builtin:expert"),
            PolicySpec::PidFollower { v_target } => write!(f, "builtin:pid-follower?v={v_target}"),
            PolicySpec::ConstantVelocity => f.write_str("builtin:constant-velocity"),
            PolicySpec::Stationary => f.write_str("builtin:stationary"),
            PolicySpec::Brake => f.write_str("builtin:brake"),
            PolicySpec::Idle => f.write_str("builtin:idle"),
            PolicySpec::Bridge { host, port } => write!(f, "bridge:{host}:{port}"),
        }
    }
}

impl PolicySpec {
    pub fn is_bridge(&self) -> bool {
        matches!(self, PolicySpec::Bridge { .. })
    }

    /// Builds a fresh policy instance. Bridge specs bind their listener here.
    pub fn instantiate(&self) -> std::io::Result<Box<dyn Policy>> {
        Ok(match self {
            PolicySpec::Expert => Box::new(ExpertReplay::new()),
            PolicySpec::PidFollower { v_target } => Box::new(PidFollower::new(*v_target)),
            PolicySpec::ConstantVelocity => Box::new(ConstantVelocity::new()),
            PolicySpec::Stationary => Box::new(Stationary::new()),
            PolicySpec::Brake => Box::new(FixedControl::new("brake", ControlCommand::FULL_BRAKE)),
            PolicySpec::Idle => Box::new(FixedControl::new("idle", ControlCommand::IDLE)),
            PolicySpec::Bridge { host, port } => Box::new(bridge::BridgePolicy::bind(&format!("{host}:{port}"))?),
        })
    }

    /// Open-loop predictor for this spec, bound to one ego track.
    pub fn predictor<'a>(&self, ego: &'a AgentTrack) -> Result<Box<dyn Predictor + 'a>, PolicySpecError> {
        match self {
            PolicySpec::Expert => Ok(Box::new(ExpertPredictor::new(ego))),
            PolicySpec::ConstantVelocity => Ok(Box::new(ConstantVelocityPredictor)),
            PolicySpec::Stationary => Ok(Box::new(StationaryPredictor)),
            other => Err(PolicySpecError::NotPredictor(other.to_string())),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_grammar() {
        assert_eq!("builtin:expert".parse::<PolicySpec>().unwrap(), PolicySpec::Expert);
        assert_eq!(
            "builtin:pid-follower?v=6.5".parse::<PolicySpec>().unwrap(),
            PolicySpec::PidFollower { v_target: 6.5 }
        );
        assert_eq!(
            "bridge:127.0.0.1:9000".parse::<PolicySpec>().unwrap(),
            PolicySpec::Bridge {
                host: "127.0.0.1".into(),
                port: 9000
            }
        );
        assert!("builtin:nope".parse::<PolicySpec>().is_err());
        assert!("builtin:pid-follower?v=-1".parse::<PolicySpec>().is_err());
        assert!("builtin:expert?x=1".parse::<PolicySpec>().is_err());
        assert!("bridge:localhost".parse::<PolicySpec>().is_err());
        assert!("ftp:x".parse::<PolicySpec>().is_err());
        for s in ["builtin:expert", "builtin:pid-follower?v=6.5", "bridge:h:1"] {
            assert_eq!(s.parse::<PolicySpec>().unwrap().to_string(), s);
        }
    }
}
