//! Lockstep policy bridge: newline-delimited JSON over TCP.
//!
//! The server sends `hello`, then one `obs` per tick, then `done`. The client
//! answers every `obs` with exactly one `control` or `waypoints` line.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::config::VehicleParams;
use crate::geometry::Vec2;
use crate::metrics::EpisodeResult;
use crate::replay::{ControlCommand, EpisodeContext, Observation};
use crate::scenario::{AgentCategory, SignalState, TICK_HZ};

use super::{OutputMode, Policy, PolicyError, PolicyHandle, PolicyKind, PolicyOutput};

/// Bounds on the number of points in a `waypoints` reply.
pub const MIN_WAYPOINTS: usize = 1;
pub const MAX_WAYPOINTS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireEgo {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireAgent {
    pub id: String,
    pub cat: AgentCategory,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub l: f64,
    pub w: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireSignal {
    pub id: String,
    pub state: SignalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    pub scenario_id: String,
    pub tick_hz: u32,
    pub route: Vec<Vec2>,
    pub vehicle: VehicleParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObsMsg {
    pub tick: u32,
    pub ego: WireEgo,
    pub agents: Vec<WireAgent>,
    pub signals: Vec<WireSignal>,
    pub route_remaining: Vec<Vec2>,
}

impl From<&Observation> for ObsMsg {
    fn from(o: &Observation) -> Self {
        ObsMsg {
            tick: o.tick,
            ego: WireEgo {
                x: o.ego.pose.x,
                y: o.ego.pose.y,
                heading: o.ego.pose.heading,
                speed: o.ego.speed,
            },
            agents: o
                .agents
                .iter()
                .map(|a| WireAgent {
                    id: a.track_id.clone(),
                    cat: a.category,
                    x: a.bbox.center.x,
                    y: a.bbox.center.y,
                    heading: a.bbox.heading,
                    l: a.bbox.length,
                    w: a.bbox.width,
                    speed: a.speed,
                })
                .collect(),
            signals: o
                .signals
                .iter()
                .map(|s| WireSignal {
                    id: s.group_id.clone(),
                    state: s.state,
                })
                .collect(),
            route_remaining: o.route_remaining.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ServerMsg {
    Hello(Hello),
    Obs(ObsMsg),
    Done { result: EpisodeResult },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMsg {
    Control { steer: f64, throttle: f64, brake: f64 },
    Waypoints { points: Vec<Vec2> },
}

impl ClientMsg {
    /// Range and count checks beyond the JSON shape.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ClientMsg::Control { steer, throttle, brake } => {
                for (name, v, lo) in [("steer", *steer, -1.0), ("throttle", *throttle, 0.0), ("brake", *brake, 0.0)] {
                    if !(v.is_finite() && (lo..=1.0).contains(&v)) {
                        return Err(format!("{name}={v} outside [{lo}, 1]"));
                    }
                }
                Ok(())
            }
            ClientMsg::Waypoints { points } => {
                if !(MIN_WAYPOINTS..=MAX_WAYPOINTS).contains(&points.len()) {
                    return Err(format!(
                        "{} waypoints, expected {MIN_WAYPOINTS}..={MAX_WAYPOINTS}",
                        points.len()
                    ));
                }
                if points.iter().any(|p| !p.is_finite()) {
                    return Err("non-finite waypoint".into());
                }
                Ok(())
            }
        }
    }

    pub fn into_output(self) -> PolicyOutput {
        match self {
            ClientMsg::Control { steer, throttle, brake } => PolicyOutput::Control(ControlCommand::new(steer, throttle, brake)),
            ClientMsg::Waypoints { points } => PolicyOutput::Waypoints(points),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }
}

/// Parses and validates one client line (without its terminator).
pub fn parse_client_line(line: &str) -> Result<ClientMsg, String> {
    let msg: ClientMsg = serde_json::from_str(line).map_err(|e| e.to_string())?;
    msg.validate()?;
    Ok(msg)
}

pub fn parse_server_line(line: &str) -> Result<ServerMsg, String> {
    serde_json::from_str(line).map_err(|e| e.to_string())
}

fn server_line(msg: &ServerMsg) -> String {
    let mut s = serde_json::to_string(msg).expect("message serializes");
    s.push('\n');
    s
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn send(&mut self, line: &str) -> Result<(), PolicyError> {
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|_| PolicyError::Disconnected)
    }

    /// True if unread client bytes are waiting.
    fn pending(&mut self) -> Result<bool, PolicyError> {
        if !self.reader.buffer().is_empty() {
            return Ok(true);
        }
        let sock = self.reader.get_ref();
        sock.set_nonblocking(true).map_err(|_| PolicyError::Disconnected)?;
        let mut b = [0u8; 1];
        let r = sock.peek(&mut b);
        sock.set_nonblocking(false).map_err(|_| PolicyError::Disconnected)?;
        match r {
            Ok(n) => Ok(n > 0),
            Err(e) if e.kind() == ErrorKind::WouldBlock => Ok(false),
            Err(_) => Ok(false),
        }
    }

    fn read_reply(&mut self) -> Result<ClientMsg, PolicyError> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => return Err(PolicyError::Disconnected),
            Ok(_) => {}
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                return Err(PolicyError::Timeout)
            }
            Err(e) if e.kind() == ErrorKind::InvalidData => {
                return Err(PolicyError::Protocol("reply is not UTF-8".into()))
            }
            Err(_) => return Err(PolicyError::Disconnected),
        }
        if !line.ends_with('\n') {
            return Err(PolicyError::Disconnected);
        }
        parse_client_line(line.trim_end_matches(['\n', '\r'])).map_err(PolicyError::Protocol)
    }
}

/// Server side of the bridge. Accepts one client connection per episode on
/// a bound listener.
pub struct BridgePolicy {
    listener: TcpListener,
    endpoint: String,
    conn: Option<Connection>,
    tick_timeout: Duration,
}

impl BridgePolicy {
    pub fn bind(addr: &str) -> io::Result<Self> {
        let addr: SocketAddr = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(ErrorKind::InvalidInput, "no address"))?;
        let listener = TcpListener::bind(addr)?;
        let endpoint = listener.local_addr()?.to_string();
        Ok(BridgePolicy {
            listener,
            endpoint,
            conn: None,
            tick_timeout: Duration::from_secs(10),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    fn accept(&mut self) -> Result<TcpStream, PolicyError> {
        let deadline = Instant::now() + self.tick_timeout;
        self.listener.set_nonblocking(true).map_err(|_| PolicyError::Disconnected)?;
        let stream = loop {
            match self.listener.accept() {
                Ok((s, _)) => break s,
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(PolicyError::Timeout);
                    }
                    std::thread::sleep(Duration::from_millis(1));
                }
                Err(_) => return Err(PolicyError::Disconnected),
            }
        };
        self.listener.set_nonblocking(false).map_err(|_| PolicyError::Disconnected)?;
        stream.set_nonblocking(false).map_err(|_| PolicyError::Disconnected)?;
        stream.set_nodelay(true).map_err(|_| PolicyError::Disconnected)?;
        stream
            .set_read_timeout(Some(self.tick_timeout))
            .map_err(|_| PolicyError::Disconnected)?;
        Ok(stream)
    }
}

impl Policy for BridgePolicy {
    fn handle(&self) -> PolicyHandle {
        PolicyHandle {
            name: "bridge".into(),
            kind: PolicyKind::Bridge {
                endpoint: self.endpoint.clone(),
            },
            mode: OutputMode::WaypointOutput,
        }
    }

    fn reset(&mut self, ctx: &EpisodeContext<'_>) -> Result<(), PolicyError> {
        self.conn = None;
        self.tick_timeout = Duration::from_secs_f64(ctx.cfg.policy_tick_timeout_s);
        let stream = self.accept()?;
        let writer = stream.try_clone().map_err(|_| PolicyError::Disconnected)?;
        let mut conn = Connection {
            reader: BufReader::new(stream),
            writer,
        };
        let hello = ServerMsg::Hello(Hello {
            scenario_id: ctx.scenario.scenario_id.clone(),
            tick_hz: TICK_HZ,
            route: ctx.scenario.ego.route_waypoints.clone(),
            vehicle: ctx.cfg.vehicle,
        });
        conn.send(&server_line(&hello))?;
        self.conn = Some(conn);
        Ok(())
    }

    fn act(&mut self, obs: &Observation) -> Result<PolicyOutput, PolicyError> {
        let conn = self.conn.as_mut().ok_or(PolicyError::Disconnected)?;
        if conn.pending()? {
            return Err(PolicyError::Protocol(format!(
                "unsolicited reply before obs for tick {}",
                obs.tick
            )));
        }
        conn.send(&server_line(&ServerMsg::Obs(obs.into())))?;
        let reply = conn.read_reply()?;
        if conn.pending()? {
            return Err(PolicyError::Protocol(format!(
                "more than one reply to obs for tick {}",
                obs.tick
            )));
        }
        Ok(reply.into_output())
    }

    fn finish(&mut self, result: &EpisodeResult) {
        if let Some(mut conn) = self.conn.take() {
            let _ = conn.send(&server_line(&ServerMsg::Done { result: result.clone() }));
            let _ = conn.writer.shutdown(std::net::Shutdown::Both);
        }
    }
}

/// Minimal in-process client, used for loopback testing of the server.
pub mod client {
    use super::*;

    use crate::policy::builtins::{follower_points, route_end_direction};

    #[derive(Debug, thiserror::Error)]
    pub enum ClientError {
        #[error("connection error: {0}")]
        Io(#[from] io::Error),
        #[error("protocol error: {0}")]
        Protocol(String),
        #[error("invalid reply rejected locally: {0}")]
        InvalidReply(String),
        #[error("server closed the connection before done")]
        Closed,
    }

    pub enum Event {
        Obs(ObsMsg),
        Done(EpisodeResult),
    }

    pub struct BridgeClient {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
        pub hello: Hello,
        pub replies: usize,
        pub observations: usize,
    }

    impl BridgeClient {
        pub fn connect(addr: SocketAddr) -> Result<Self, ClientError> {
            let stream = TcpStream::connect(addr)?;
            stream.set_nodelay(true)?;
            let writer = stream.try_clone()?;
            let mut reader = BufReader::new(stream);
            let hello = match read_msg(&mut reader)? {
                ServerMsg::Hello(h) => h,
                other => return Err(ClientError::Protocol(format!("expected hello, got {other:?}"))),
            };
            if hello.tick_hz != TICK_HZ {
                return Err(ClientError::Protocol(format!("tick_hz {} != {TICK_HZ}", hello.tick_hz)));
            }
            Ok(BridgeClient {
                reader,
                writer,
                hello,
                replies: 0,
                observations: 0,
            })
        }

        pub fn next_event(&mut self) -> Result<Event, ClientError> {
            match read_msg(&mut self.reader)? {
                ServerMsg::Obs(o) => {
                    self.observations += 1;
                    Ok(Event::Obs(o))
                }
                ServerMsg::Done { result } => Ok(Event::Done(result)),
                ServerMsg::Hello(_) => Err(ClientError::Protocol("unexpected hello".into())),
            }
        }

        /// Validates locally, then sends.
        pub fn reply(&mut self, msg: &ClientMsg) -> Result<(), ClientError> {
            msg.validate().map_err(ClientError::InvalidReply)?;
            self.send_raw(&msg.to_line())?;
            self.replies += 1;
            Ok(())
        }

        /// Sends bytes verbatim, bypassing validation.
        pub fn send_raw(&mut self, text: &str) -> Result<(), ClientError> {
            self.writer.write_all(text.as_bytes())?;
            self.writer.flush()?;
            Ok(())
        }

        /// Answers every observation with `callback` until `done`.
        pub fn run(mut self, mut callback: impl FnMut(&Hello, &ObsMsg) -> ClientMsg) -> Result<EpisodeResult, ClientError> {
            loop {
                match self.next_event()? {
                    Event::Obs(o) => {
                        let reply = callback(&self.hello, &o);
                        self.reply(&reply)?;
                    }
                    Event::Done(r) => return Ok(r),
                }
            }
        }
    }

    fn read_msg(reader: &mut BufReader<TcpStream>) -> Result<ServerMsg, ClientError> {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(ClientError::Closed);
        }
        parse_server_line(line.trim_end_matches(['\n', '\r'])).map_err(ClientError::Protocol)
    }

    /// Route-following callback computed from wire data only; mirrors the
    /// builtin follower.
    pub fn follower_callback(v_target: f64, waypoint_dt: f64) -> impl FnMut(&Hello, &ObsMsg) -> ClientMsg {
        move |hello, obs| {
            let v = v_target.min(hello.vehicle.max_speed);
            ClientMsg::Waypoints {
                points: follower_points(
                    Vec2::new(obs.ego.x, obs.ego.y),
                    &obs.route_remaining,
                    route_end_direction(&hello.route),
                    v,
                    waypoint_dt,
                ),
            }
        }
    }
}
