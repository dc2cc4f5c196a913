//! Evaluation configuration document.

use serde::{Deserialize, Serialize};

use crate::metrics::PenaltyTable;

/// Kinematic bicycle parameters. Angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_steer_rate: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub max_speed: f64,
    pub drag: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        VehicleParams {
            wheelbase: 2.9,
            max_steer: 35f64.to_radians(),
            max_steer_rate: 60f64.to_radians(),
            max_accel: 3.0,
            max_brake: 8.0,
            max_speed: 15.0,
            drag: 0.01,
        }
    }
}

/// Pure-pursuit and speed-loop gains used to turn waypoints into controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerGains {
    /// Lookahead time; lookahead distance is `lookahead_gain * v` clamped.
    pub lookahead_gain: f64,
    pub min_lookahead: f64,
    pub max_lookahead: f64,
    /// Speed loop gains (m/s² per m/s and per m).
    pub kp: f64,
    pub ki: f64,
    pub integral_limit: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        ControllerGains {
            lookahead_gain: 0.8,
            min_lookahead: 3.0,
            max_lookahead: 12.0,
            kp: 1.0,
            ki: 0.2,
            integral_limit: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub vehicle: VehicleParams,
    pub controller: ControllerGains,
    /// Episode timeout as a multiple of the recorded route duration.
    pub timeout_factor: f64,
    pub min_timeout_s: f64,
    pub sensing_range_m: f64,
    pub penalties: PenaltyTable,
    /// Wall-clock limit for one policy reply.
    pub policy_tick_timeout_s: f64,
    pub rc_success_threshold: f64,
    pub arrival_radius_m: f64,
    pub route_deviation_m: f64,
    /// Continuous time outside the drivable area tolerated before off-road.
    pub offroad_grace_s: f64,
    /// Raise each infraction kind at most once per episode.
    pub dedup_infractions: bool,
    /// Time spacing of waypoint replies.
    pub waypoint_dt_s: f64,
    /// Anchor stride (ticks) for open-loop L2.
    pub l2_anchor_stride: u32,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            vehicle: VehicleParams::default(),
            controller: ControllerGains::default(),
            timeout_factor: 2.0,
            min_timeout_s: 20.0,
            sensing_range_m: 85.0,
            penalties: PenaltyTable::default(),
            policy_tick_timeout_s: 10.0,
            rc_success_threshold: 0.95,
            arrival_radius_m: 2.0,
            route_deviation_m: 8.0,
            offroad_grace_s: 0.5,
            dedup_infractions: true,
            waypoint_dt_s: 0.5,
            l2_anchor_stride: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config value {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

impl EvalConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let cfg: EvalConfig = serde_json::from_slice(bytes)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        let positive = [
            ("vehicle.wheelbase", self.vehicle.wheelbase),
            ("vehicle.max_steer", self.vehicle.max_steer),
            ("vehicle.max_steer_rate", self.vehicle.max_steer_rate),
            ("vehicle.max_accel", self.vehicle.max_accel),
            ("vehicle.max_brake", self.vehicle.max_brake),
            ("vehicle.max_speed", self.vehicle.max_speed),
            ("timeout_factor", self.timeout_factor),
            ("sensing_range_m", self.sensing_range_m),
            ("policy_tick_timeout_s", self.policy_tick_timeout_s),
            ("arrival_radius_m", self.arrival_radius_m),
            ("route_deviation_m", self.route_deviation_m),
            ("waypoint_dt_s", self.waypoint_dt_s),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid {
                    field,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.rc_success_threshold) {
            return Err(ConfigError::Invalid {
                field: "rc_success_threshold",
                reason: "must lie in [0, 1]".into(),
            });
        }
        if self.l2_anchor_stride == 0 {
            return Err(ConfigError::Invalid {
                field: "l2_anchor_stride",
                reason: "must be at least 1".into(),
            });
        }
        self.penalties.check().map_err(|reason| ConfigError::Invalid {
            field: "penalties",
            reason,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_document_fills_defaults() {
        let cfg = EvalConfig::from_json(br#"{"timeout_factor": 3.0, "vehicle": {"wheelbase": 3.1}}"#).unwrap();
        assert_eq!(cfg.timeout_factor, 3.0);
        assert_eq!(cfg.vehicle.wheelbase, 3.1);
        assert_eq!(cfg.vehicle.max_speed, 15.0);
        assert_eq!(cfg.policy_tick_timeout_s, 10.0);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(EvalConfig::from_json(br#"{"sensing_range_m": -1}"#).is_err());
        assert!(EvalConfig::from_json(br#"{"bogus": 1}"#).is_err());
        assert!(EvalConfig::from_json(br#"{"penalties": {"red_light": 1.5}}"#).is_err());
    }
}
