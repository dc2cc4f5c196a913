use std::net::SocketAddr;
use std::thread;

use replaybench::config::EvalConfig;
use replaybench::forge::{canonical_corpus, generate_synthetic, GeneratorSpec, LightPlan};
use replaybench::metrics::{InfractionKind, Termination};
use replaybench::policy::bridge::client::{follower_callback, BridgeClient, Event};
use replaybench::policy::bridge::{parse_client_line, BridgePolicy, ClientMsg};
use replaybench::policy::{PidFollower, Policy};
use replaybench::replay::{run_episode, EpisodeError};
use replaybench::scenario::SubBehavior;

fn scenario() -> (replaybench::scenario::Scenario, replaybench::map::HdMap) {
    generate_synthetic(&GeneratorSpec {
        behavior: SubBehavior::Str,
        n_background: 2,
        light_plan: LightPlan::Auto,
        seed: 1,
    })
    .unwrap()
}

fn server() -> (BridgePolicy, SocketAddr) {
    let p = BridgePolicy::bind("127.0.0.1:0").unwrap();
    let addr = p.local_addr().unwrap();
    (p, addr)
}

#[test]
fn message_fixture_corpus() {
    let valid = include_str!("fixtures/bridge/valid.jsonl");
    let invalid = include_str!("fixtures/bridge/invalid.jsonl");
    for line in valid.lines() {
        let msg = parse_client_line(line).unwrap_or_else(|e| panic!("{line}: {e}"));
        assert_eq!(parse_client_line(msg.to_line().trim_end()).unwrap(), msg);
    }
    for line in invalid.lines() {
        assert!(parse_client_line(line).is_err(), "accepted {line}");
    }
}

#[test]
fn idle_client_times_out_cleanly() {
    let (s, m) = replaybench::forge::fixtures::standing_start();
    let cfg = EvalConfig::default();
    let (mut policy, addr) = server();
    let client = thread::spawn(move || {
        let mut c = BridgeClient::connect(addr).unwrap();
        let idle = ClientMsg::Control {
            steer: 0.0,
            throttle: 0.0,
            brake: 0.0,
        };
        loop {
            match c.next_event().unwrap() {
                Event::Obs(_) => c.reply(&idle).unwrap(),
                Event::Done(r) => return (r, c.observations, c.replies),
            }
        }
    });
    let (r, _) = run_episode(&s, &m, &mut policy, &cfg, 0).unwrap();
    let (seen, n_obs, n_replies) = client.join().unwrap();
    assert_eq!(r.termination, Termination::Timeout);
    assert_eq!(seen, r);
    assert_eq!(n_obs, n_replies);
    assert_eq!(n_obs as u32, r.duration_ticks);
}

#[test]
fn double_reply_is_a_protocol_violation() {
    let (s, m) = scenario();
    let cfg = EvalConfig::default();
    let (mut policy, addr) = server();
    let client = thread::spawn(move || {
        let mut c = BridgeClient::connect(addr).unwrap();
        let line = ClientMsg::Control {
            steer: 0.0,
            throttle: 0.2,
            brake: 0.0,
        }
        .to_line();
        if let Ok(Event::Obs(_)) = c.next_event() {
            c.send_raw(&format!("{line}{line}")).unwrap();
        }
        while c.next_event().is_ok() {}
    });
    let err = run_episode(&s, &m, &mut policy, &cfg, 0).unwrap_err();
    policy.finish(&replaybench::batch::aborted_result(&s, &err, &cfg));
    client.join().unwrap();
    assert!(matches!(err, EpisodeError::Protocol { tick: 0, .. }), "{err:?}");
}

#[test]
fn malformed_reply_is_a_protocol_violation() {
    let (s, m) = scenario();
    let cfg = EvalConfig::default();
    let (mut policy, addr) = server();
    let client = thread::spawn(move || {
        let mut c = BridgeClient::connect(addr).unwrap();
        if let Ok(Event::Obs(_)) = c.next_event() {
            c.send_raw("{\"type\":\"control\",\"steer\":3,\"throttle\":0,\"brake\":0}\n").unwrap();
        }
        while c.next_event().is_ok() {}
    });
    let err = run_episode(&s, &m, &mut policy, &cfg, 0).unwrap_err();
    policy.finish(&replaybench::batch::aborted_result(&s, &err, &cfg));
    client.join().unwrap();
    assert_eq!(err.termination(), Termination::ProtocolViolation);
}

#[test]
fn silent_client_hits_the_tick_timeout() {
    let (s, m) = scenario();
    let cfg = EvalConfig {
        policy_tick_timeout_s: 0.2,
        ..EvalConfig::default()
    };
    let (mut policy, addr) = server();
    let client = thread::spawn(move || {
        let mut c = BridgeClient::connect(addr).unwrap();
        while c.next_event().is_ok() {}
    });
    let err = run_episode(&s, &m, &mut policy, &cfg, 0).unwrap_err();
    policy.finish(&replaybench::batch::aborted_result(&s, &err, &cfg));
    client.join().unwrap();
    assert_eq!(err, EpisodeError::PolicyTimeout { tick: 0 });
}

#[test]
fn disconnect_is_recorded_as_policy_failure() {
    let (s, m) = scenario();
    let cfg = EvalConfig::default();
    let (mut policy, addr) = server();
    let client = thread::spawn(move || {
        let mut c = BridgeClient::connect(addr).unwrap();
        for _ in 0..5 {
            if let Ok(Event::Obs(_)) = c.next_event() {
                c.reply(&ClientMsg::Waypoints {
                    points: vec![[0.0, 0.0].into()],
                })
                .unwrap();
            }
        }
    });
    let (r, _) = run_episode(&s, &m, &mut policy, &cfg, 0).unwrap();
    client.join().unwrap();
    assert_eq!(r.termination, Termination::PolicyFailure);
    assert!(r.has(InfractionKind::PolicyFailure) && !r.success);
}

#[test]
fn bridged_follower_matches_the_builtin() {
    let (corpus, m) = canonical_corpus().unwrap();
    let cfg = EvalConfig::default();
    let (mut policy, addr) = server();
    let n = corpus.len();
    let dt = cfg.waypoint_dt_s;
    let client = thread::spawn(move || {
        (0..n)
            .map(|_| BridgeClient::connect(addr).unwrap().run(follower_callback(8.0, dt)).unwrap())
            .collect::<Vec<_>>()
    });
    let mut bridged = Vec::new();
    for s in &corpus {
        bridged.push(run_episode(s, &m, &mut policy, &cfg, 0).unwrap().0);
    }
    let seen = client.join().unwrap();
    assert_eq!(seen, bridged);
    for (s, r) in corpus.iter().zip(&bridged) {
        let (direct, _) = run_episode(s, &m, &mut PidFollower::new(8.0), &cfg, 0).unwrap();
        assert_eq!(&direct, r, "{}", s.scenario_id);
    }
    assert!(matches!(policy.handle().kind, replaybench::policy::PolicyKind::Bridge { .. }));
}
