use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use replaybench::config::{EvalConfig, VehicleParams};
use replaybench::forge::{canonical_corpus, generate_synthetic, GeneratorSpec, LightPlan};
use replaybench::metrics::{InfractionKind, Termination};
use replaybench::policy::{ExpertReplay, FixedControl, PidFollower, Policy, PolicyError, PolicyHandle, PolicyOutput};
use replaybench::replay::{
    integrate_ego, run_episode, world_agents, ControlCommand, EgoState, EpisodeContext, Observation,
};
use replaybench::scenario::{sample_track_pose, Pose2, SubBehavior, TICK_DT};

fn circumradius(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    let ab = (a.0 - b.0).hypot(a.1 - b.1);
    let bc = (b.0 - c.0).hypot(b.1 - c.1);
    let ca = (c.0 - a.0).hypot(c.1 - a.1);
    let area2 = ((b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)).abs();
    ab * bc * ca / (2.0 * area2)
}

/// Plain forward-Euler bicycle at a fixed steering angle and speed.
fn reference_circle(l: f64, delta: f64, v: f64, secs: f64, dt: f64) -> f64 {
    let (mut x, mut y, mut th) = (0.0f64, 0.0f64, 0.0f64);
    let n = (secs / dt).round() as usize;
    let mut pts = Vec::with_capacity(3);
    for i in 0..=n {
        if i == 0 || i == n / 2 || i == n {
            pts.push((x, y));
        }
        th += v / l * delta.tan() * dt;
        x += v * th.cos() * dt;
        y += v * th.sin() * dt;
    }
    circumradius(pts[0], pts[1], pts[2])
}

#[test]
fn constant_steer_traces_the_bicycle_circle() {
    let p = VehicleParams::default();
    let (delta, v) = (0.1, 5.0);
    let cmd = ControlCommand::new(delta / p.max_steer, p.drag * v * v / p.max_accel, 0.0);
    let mut s = EgoState {
        pose: Pose2::new(0.0, 0.0, 0.0),
        speed: v,
        steering_angle: delta,
        acceleration: 0.0,
    };
    let mut pts = vec![(0.0, 0.0)];
    for k in 1..=100 {
        s = integrate_ego(&s, &cmd, &p, TICK_DT);
        if k == 50 || k == 100 {
            pts.push((s.pose.x, s.pose.y));
        }
        assert!((s.speed - v).abs() < 1e-9);
    }
    let sim = circumradius(pts[0], pts[1], pts[2]);
    let reference = reference_circle(p.wheelbase, delta, v, 10.0, 1e-4);
    let closed = p.wheelbase / delta.tan();
    assert!((sim - reference).abs() / reference < 0.01, "{sim} vs {reference}");
    assert!((reference - closed).abs() / closed < 0.01);
}

#[test]
fn straight_cruise_advances_one_meter_per_tick_at_ten() {
    let p = VehicleParams::default();
    let cmd = ControlCommand::new(0.0, p.drag * 100.0 / p.max_accel, 0.0);
    let s = integrate_ego(
        &EgoState {
            speed: 10.0,
            ..EgoState::at_rest(Pose2::new(0.0, 0.0, 0.0))
        },
        &cmd,
        &p,
        TICK_DT,
    );
    assert!((s.pose.x - 1.0).abs() < 1e-9 && s.pose.y == 0.0);
    let rest = EgoState::at_rest(Pose2::new(1.0, 2.0, 0.3));
    assert_eq!(integrate_ego(&rest, &ControlCommand::IDLE, &p, TICK_DT).pose, rest.pose);
}

#[test]
fn full_brake_stops_within_bound() {
    let p = VehicleParams::default();
    let bound = (p.max_speed / (p.max_brake * TICK_DT)).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let mut s = EgoState {
            pose: Pose2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-3.0..3.0)),
            speed: rng.gen_range(0.0..=p.max_speed),
            steering_angle: rng.gen_range(-p.max_steer..p.max_steer),
            acceleration: 0.0,
        };
        let steer = rng.gen_range(-1.0..1.0);
        let mut stopped_at = None;
        for k in 1..=bound + 5 {
            s = integrate_ego(&s, &ControlCommand::new(steer, 0.0, 1.0), &p, TICK_DT);
            assert!(s.speed >= 0.0);
            if s.speed == 0.0 && stopped_at.is_none() {
                stopped_at = Some(k);
            }
        }
        assert!(stopped_at.is_some_and(|k| k <= bound), "{stopped_at:?} > {bound}");
    }
}

proptest! {
    #[test]
    fn heading_and_speed_stay_in_range(cmds in prop::collection::vec((-1.0..1.0f64, 0.0..1.0f64, 0.0..0.3f64), 1..400)) {
        let p = VehicleParams::default();
        let mut s = EgoState::at_rest(Pose2::new(0.0, 0.0, 0.0));
        for (steer, throttle, brake) in cmds {
            s = integrate_ego(&s, &ControlCommand::new(steer, throttle, brake), &p, TICK_DT);
            let pi = std::f64::consts::PI;
            prop_assert!(s.pose.heading > -pi && s.pose.heading <= pi);
            prop_assert!((0.0..=p.max_speed).contains(&s.speed));
            prop_assert!(s.steering_angle.abs() <= p.max_steer + 1e-12);
        }
    }
}

fn spec(behavior: SubBehavior, light_plan: LightPlan) -> GeneratorSpec {
    GeneratorSpec {
        behavior,
        n_background: 3,
        light_plan,
        seed: 4,
    }
}

/// Wraps a policy and checks every observation it receives.
struct Watch<P> {
    inner: P,
    ego_id: String,
    seen: Vec<Observation>,
}

impl<P: Policy> Policy for Watch<P> {
    fn handle(&self) -> PolicyHandle {
        self.inner.handle()
    }
    fn reset(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        self.ego_id = ctx.scenario.ego.agent_id.clone();
        self.inner.reset(ctx)
    }
    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        self.seen.push(obs.clone());
        self.inner.act(obs)
    }
}

#[test]
fn episodes_are_deterministic_and_replay_is_faithful() {
    let cfg = EvalConfig::default();
    let (s, m) = generate_synthetic(&spec(SubBehavior::CovLft, LightPlan::Auto)).unwrap();
    let mut a = Watch {
        inner: PidFollower::new(9.0),
        ego_id: String::new(),
        seen: Vec::new(),
    };
    let (ra, ta) = run_episode(&s, &m, &mut a, &cfg, 3).unwrap();
    let (rb, tb) = run_episode(&s, &m, &mut PidFollower::new(9.0), &cfg, 3).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(ta.records, tb.records);
    assert_eq!(ta.termination, tb.termination);
    assert!(ta.records.windows(2).all(|w| w[1].s >= w[0].s));

    assert!(!a.seen.is_empty());
    for obs in &a.seen {
        assert!(obs.agents.iter().all(|ag| ag.track_id != a.ego_id));
        for ag in &obs.agents {
            assert!(ag.bbox.center.dist(obs.ego.position()) <= cfg.sensing_range_m);
        }
    }
    for tick in 0..s.n_ticks {
        for view in world_agents(&s, tick) {
            let t = s.track(&view.track_id).unwrap();
            let (pose, speed) = sample_track_pose(t, f64::from(tick) * TICK_DT).unwrap();
            assert_eq!(view.bbox.center, pose.position());
            assert_eq!(view.bbox.heading, pose.heading);
            assert_eq!(view.speed, speed);
        }
    }
}

#[test]
fn expert_tracks_its_recording() {
    let cfg = EvalConfig::default();
    let (s, m) = generate_synthetic(&spec(SubBehavior::Lft, LightPlan::Auto)).unwrap();
    let (r, trace) = run_episode(&s, &m, &mut ExpertReplay::new(), &cfg, 0).unwrap();
    assert!(r.success && r.infractions.is_empty());
    assert!((r.rc - 1.0).abs() <= 0.01);
    let ego = s.ego_track();
    let devs: Vec<f64> = trace
        .records
        .iter()
        .filter_map(|rec| ego.state_at_tick(rec.tick).map(|(p, _)| p.position().dist(rec.ego.position())))
        .collect();
    let mean = devs.iter().sum::<f64>() / devs.len() as f64;
    assert!(mean < 0.5, "mean deviation {mean}");
}

#[test]
fn follower_completes_an_empty_straight() {
    let cfg = EvalConfig::default();
    let mut sp = spec(SubBehavior::Str, LightPlan::Auto);
    sp.n_background = 0;
    let (s, m) = generate_synthetic(&sp).unwrap();
    let (r, _) = run_episode(&s, &m, &mut PidFollower::new(8.0), &cfg, 0).unwrap();
    assert!(r.success, "{r:?}");
    assert!(r.rc >= 0.99);
}

#[test]
fn braking_forever_times_out_at_the_start() {
    let cfg = EvalConfig::default();
    let (s, m) = replaybench::forge::fixtures::standing_start();
    s.check().unwrap();
    assert!(replaybench::scenario::validate_scenario(&s, &m).is_empty());
    let mut p = FixedControl::new("brake", ControlCommand::FULL_BRAKE);
    let (r, trace) = run_episode(&s, &m, &mut p, &cfg, 0).unwrap();
    assert_eq!(r.termination, Termination::Timeout);
    assert_eq!(r.rc, 0.0);
    assert!(!r.success);
    assert!(trace.records.iter().all(|rec| rec.ego.speed == 0.0));
}

#[test]
fn moving_start_brakes_within_one_stopping_distance() {
    let cfg = EvalConfig::default();
    let mut sp = spec(SubBehavior::Str, LightPlan::Auto);
    sp.n_background = 0;
    let (s, m) = generate_synthetic(&sp).unwrap();
    let mut p = FixedControl::new("brake", ControlCommand::FULL_BRAKE);
    let (r, _) = run_episode(&s, &m, &mut p, &cfg, 0).unwrap();
    assert_eq!(r.termination, Termination::Timeout);
    assert!(!r.success);
    // The ego enters at its recorded speed, so it rolls one braking distance.
    let v0 = s.ego_track().samples[s.source_index()].speed;
    let route = replaybench::geometry::polyline_length(&s.ego.route_waypoints);
    let rolled = v0 * v0 / (2.0 * cfg.vehicle.max_brake) + v0 * TICK_DT;
    assert!(r.rc <= rolled / route, "{} > {}", r.rc, rolled / route);
}

#[test]
fn follower_runs_a_red_light() {
    let cfg = EvalConfig::default();
    let mut sp = spec(SubBehavior::Str, LightPlan::EgoRed);
    sp.n_background = 0;
    let (s, m) = generate_synthetic(&sp).unwrap();
    let (r, _) = run_episode(&s, &m, &mut PidFollower::new(8.0), &cfg, 0).unwrap();
    assert!(r.has(InfractionKind::RedLight), "{r:?}");
    assert!(!r.success);
    let red = r.infractions.iter().find(|i| i.kind == InfractionKind::RedLight).unwrap();
    assert_eq!(red.penalty, 0.70);
}

#[test]
fn infraction_kinds_are_raised_at_most_once() {
    let cfg = EvalConfig::default();
    let (corpus, m) = canonical_corpus().unwrap();
    let mut total = 0;
    for s in &corpus {
        for v in [4.0, 12.0] {
            let (r, _) = run_episode(s, &m, &mut PidFollower::new(v), &cfg, 0).unwrap();
            let mut kinds: Vec<_> = r.infractions.iter().map(|i| i.kind).collect();
            total += kinds.len();
            kinds.sort();
            let n = kinds.len();
            kinds.dedup();
            assert_eq!(kinds.len(), n, "{}: {:?}", s.scenario_id, r.infractions);
        }
    }
    assert!(total > 0, "the sweep should provoke some infractions");
}
