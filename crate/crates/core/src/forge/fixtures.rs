//! Hand-built scenarios with known occlusion outcomes.

use crate::config::EvalConfig;
use crate::geometry::{resample_polyline, Vec2};
use crate::map::HdMap;
use crate::policy::PidFollower;
use crate::replay::run_episode;
use crate::scenario::{
    AgentCategory, AgentTrack, EgoAssignment, Pose2, Scenario, SignalState, TimeOfDay, TrackSample, Weather, TICK_DT,
    TICK_HZ,
};

use super::generator::{
    dims, intersection_map, record_track, schedule_constant, signal_groups, GenerateError, Path, SpeedProfile,
    INNER_OFFSET, INTERSECTION_ID,
};

fn all_green() -> Vec<crate::scenario::SignalGroup> {
    let g = || schedule_constant(SignalState::Green);
    signal_groups([g(), g(), g(), g()])
}

fn northbound(id: &str, category: AgentCategory, x: f64, y0: f64, y1: f64, v: f64, n_ticks: u32) -> AgentTrack {
    let path = Path::new().line(Vec2::new(x, y0), Vec2::new(x, y1));
    record_track(id, category, &path, &SpeedProfile::constant(v), 0.0, n_ticks).expect("non-empty fixture track")
}

fn with_ego(id: &str, tracks: Vec<AgentTrack>, n_ticks: u32) -> Scenario {
    let ego = tracks.iter().find(|t| t.track_id == "ego").expect("fixture has an ego");
    let dest = ego.samples.len() - 21;
    let pts: Vec<Vec2> = ego.samples[..=dest].iter().map(|s| s.pose.position()).collect();
    Scenario {
        scenario_id: id.into(),
        intersection_id: INTERSECTION_ID.into(),
        tick_hz: TICK_HZ,
        n_ticks,
        weather: Weather::Sunny,
        time_of_day: TimeOfDay::Noon,
        behavior: None,
        ego: EgoAssignment {
            agent_id: "ego".into(),
            source: ego.samples[0].pose,
            destination: ego.samples[dest].pose,
            route_waypoints: resample_polyline(&pts, 2.0, 1.0),
        },
        tracks,
        signals: all_green(),
    }
}

/// Convoy behind a bus: the car ahead of the bus (`hidden-car`) and a
/// pedestrian beyond it (`hidden-ped`) are never visible from the ego, while
/// an oncoming car (`oncoming`) is.
pub fn occlusion_convoy() -> (Scenario, HdMap) {
    let n_ticks = 150;
    let (v, y0) = (5.0, -60.0);
    let y1 = y0 + v * f64::from(n_ticks) * TICK_DT + 5.0;
    let x = INNER_OFFSET;
    let tracks = vec![
        northbound("ego", AgentCategory::Car, x, y0, y1, v, n_ticks),
        northbound("bus", AgentCategory::Bus, x, y0 + 12.0, y1 + 12.0, v, n_ticks),
        northbound("hidden-car", AgentCategory::Car, x, y0 + 21.3, y1 + 21.3, v, n_ticks),
        northbound("hidden-ped", AgentCategory::Pedestrian, x + 0.5, y0 + 27.0, y1 + 27.0, v, n_ticks),
        {
            let path = Path::new().line(Vec2::new(-x, 40.0), Vec2::new(-x, -95.0));
            record_track("oncoming", AgentCategory::Car, &path, &SpeedProfile::constant(6.0), 0.0, n_ticks)
                .expect("non-empty fixture track")
        },
    ];
    (with_ego("OCC-convoy", tracks, n_ticks), intersection_map())
}

/// Slow expert and a crossing car that only a fast route follower meets.
///
/// The expert creeps north at 1.2 m/s, so it is beyond sensor range when a
/// `builtin:pid-follower?v=15` run reaches the junction. The crossing car
/// (`crosser`) is placed on that run's position at that tick, so the follower
/// collides unless the crosser has been filtered out as never visible.
pub fn collision_flip(cfg: &EvalConfig, sensor_range: f64) -> Result<(Scenario, HdMap), GenerateError> {
    let (v, y0, y1) = (1.2, -100.0, 20.0);
    let n_ticks = ((y1 - y0) / v / TICK_DT).round() as u32 + 1;
    let ego = northbound("ego", AgentCategory::Car, INNER_OFFSET, y0, y1, v, n_ticks);
    let base = with_ego("OCC-flip", vec![ego.clone()], n_ticks);
    let map = intersection_map();

    let mut follower = PidFollower::new(15.0);
    let (_, trace) = run_episode(&base, &map, &mut follower, cfg, 0)
        .map_err(|e| GenerateError::Unsatisfiable(format!("probe run failed: {e}")))?;
    let hit = trace
        .records
        .iter()
        .find(|r| r.ego.pose.y >= INNER_OFFSET)
        .ok_or_else(|| GenerateError::Unsatisfiable("probe run never reached the junction".into()))?;

    let (length, width) = dims(AgentCategory::Car);
    let speed = 8.0;
    let half = TICK_HZ;
    let first = hit.tick.saturating_sub(half);
    let last = (hit.tick + half).min(n_ticks - 1);
    let samples: Vec<TrackSample> = (first..=last)
        .map(|tick| {
            let dx = -speed * (f64::from(tick) - f64::from(hit.tick)) * TICK_DT;
            TrackSample {
                tick,
                pose: Pose2::new(hit.ego.pose.x + dx, INNER_OFFSET, std::f64::consts::PI),
                speed,
            }
        })
        .collect();
    for smp in &samples {
        let (expert, _) = ego.state_at_tick(smp.tick).expect("expert spans the clip");
        let gap = expert.position().dist(smp.pose.position()) - length;
        if gap <= sensor_range {
            return Err(GenerateError::Unsatisfiable(format!(
                "crosser within {gap:.1} m of the expert at tick {}",
                smp.tick
            )));
        }
    }
    let crosser = AgentTrack {
        track_id: "crosser".into(),
        category: AgentCategory::Car,
        length,
        width,
        height: None,
        samples,
    };
    let mut s = base;
    s.tracks.push(crosser);
    Ok((s, map))
}

/// Empty junction where the recorded ego waits 3 s at rest, then pulls away
/// north at 2 m/s² up to 6 m/s. Policies that never accelerate go nowhere.
pub fn standing_start() -> (Scenario, HdMap) {
    let (wait, accel, v_max) = (3.0, 2.0, 6.0);
    let path = Path::new().line(Vec2::new(INNER_OFFSET, -40.0), Vec2::new(INNER_OFFSET, 60.0));
    let t_ramp = v_max / accel;
    let motion = |t: f64| -> (f64, f64) {
        let t = (t - wait).max(0.0);
        if t < t_ramp {
            (0.5 * accel * t * t, accel * t)
        } else {
            (0.5 * accel * t_ramp * t_ramp + v_max * (t - t_ramp), v_max)
        }
    };
    let n_ticks = ((wait + t_ramp + (path.length() - 0.5 * accel * t_ramp * t_ramp) / v_max) / TICK_DT) as u32;
    let (length, width) = dims(AgentCategory::Car);
    let samples = (0..n_ticks)
        .map(|tick| {
            let (s, speed) = motion(f64::from(tick) * TICK_DT);
            let (p, h) = path.pose_at(s);
            TrackSample {
                tick,
                pose: Pose2::new(p.x, p.y, h),
                speed,
            }
        })
        .collect();
    let ego = AgentTrack {
        track_id: "ego".into(),
        category: AgentCategory::Car,
        length,
        width,
        height: None,
        samples,
    };
    (with_ego("START-standing", vec![ego], n_ticks), intersection_map())
}
