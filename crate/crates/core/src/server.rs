//! Match server: authentication, the step loop and match reports.
//!
//! Each connection gets its own handler thread that reads frames and forwards
//! them to the match loop over a channel. The loop is the only code that
//! touches the world. Per step it sends a fresh percept to every connected
//! agent, waits until all of them answered or the deadline passed, runs the
//! engine and records a replay frame. Missing, late, stale or malformed
//! answers count as `no_op`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use thiserror::Error;

use crate::action::{Action, Outcome};
use crate::agents::{run_team, BehaviorKind, ClientOptions};
use crate::config::SimConfig;
use crate::engine;
use crate::perception::compute_percept;
use crate::protocol::{
    AuthRequest, AuthResponse, AuthResult, FrameReader, Message, ProtocolError, RequestAction,
    SimEnd, SimStart,
};
use crate::replay::Recorder;
use crate::transport::{pipe, Connector, Transport};
use crate::world::{ThingId, WorldError, WorldState};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("credential file line {line}: {message}")]
    Roster { line: usize, message: String },
    #[error("listener failed: {0}")]
    Listener(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Credential {
    pub team: String,
    pub agent: String,
    pub password: String,
}

/// The agents allowed to join a match.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Roster {
    pub entries: Vec<Credential>,
}

impl Roster {
    /// Parses a credential file: one `team, agent, password` triple per line;
    /// blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Roster, ServerError> {
        let mut entries: Vec<Credential> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            let [team, agent, password] = fields[..] else {
                return Err(ServerError::Roster {
                    line,
                    message: format!("expected `team, agent, password`, found `{trimmed}`"),
                });
            };
            if team.is_empty() || agent.is_empty() {
                return Err(ServerError::Roster {
                    line,
                    message: "empty team or agent name".into(),
                });
            }
            if entries.iter().any(|c| c.agent == agent) {
                return Err(ServerError::Roster {
                    line,
                    message: format!("duplicate agent `{agent}`"),
                });
            }
            entries.push(Credential {
                team: team.into(),
                agent: agent.into(),
                password: password.into(),
            });
        }
        Ok(Roster { entries })
    }

    /// Every agent of `config` with the same password.
    pub fn for_config(config: &SimConfig, password: &str) -> Roster {
        let entries = config
            .teams
            .iter()
            .flat_map(|team| {
                config.agent_names(team).into_iter().map(|agent| Credential {
                    team: team.clone(),
                    agent,
                    password: password.to_string(),
                })
            })
            .collect();
        Roster { entries }
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|c| format!("{}, {}, {}\n", c.team, c.agent, c.password))
            .collect()
    }

    pub fn check(&self, user: &str, pw: &str) -> Option<&Credential> {
        self.entries
            .iter()
            .find(|c| c.agent == user && c.password == pw)
    }

    pub fn team(&self, team: &str) -> Vec<Credential> {
        self.entries.iter().filter(|c| c.team == team).cloned().collect()
    }

    /// Checks that the roster names exactly the agents of `config`.
    pub fn matches(&self, config: &SimConfig) -> Result<(), String> {
        let expected: BTreeSet<(String, String)> = config
            .teams
            .iter()
            .flat_map(|t| config.agent_names(t).into_iter().map(move |a| (t.clone(), a)))
            .collect();
        let got: BTreeSet<(String, String)> = self
            .entries
            .iter()
            .map(|c| (c.team.clone(), c.agent.clone()))
            .collect();
        if expected == got {
            Ok(())
        } else {
            let missing: Vec<_> = expected.difference(&got).map(|(_, a)| a.as_str()).collect();
            let extra: Vec<_> = got.difference(&expected).map(|(_, a)| a.as_str()).collect();
            Err(format!(
                "roster does not match config (missing: {missing:?}, unexpected: {extra:?})"
            ))
        }
    }
}

/// What connection handlers tell the match loop.
pub enum Event {
    Bound {
        agent: String,
        conn: u64,
        writer: Box<dyn Transport>,
    },
    Inbound {
        agent: String,
        conn: u64,
        msg: Result<Message, ProtocolError>,
    },
    Closed {
        agent: String,
        conn: u64,
    },
    ListenerFailed(String),
}

/// Entry point for connections of one match.
#[derive(Clone)]
pub struct Hub {
    tx: Sender<Event>,
    roster: Arc<Roster>,
    next_conn: Arc<AtomicU64>,
}

impl Hub {
    pub fn new(roster: Roster) -> (Hub, Receiver<Event>) {
        let (tx, rx) = mpsc::channel();
        (
            Hub {
                tx,
                roster: Arc::new(roster),
                next_conn: Arc::new(AtomicU64::new(1)),
            },
            rx,
        )
    }

    /// Spawns a handler thread for a freshly accepted stream.
    pub fn attach(&self, stream: Box<dyn Transport>) -> io::Result<JoinHandle<()>> {
        let writer = stream.try_clone_box()?;
        let conn = self.next_conn.fetch_add(1, Ordering::SeqCst);
        let hub = self.clone();
        Ok(thread::spawn(move || hub.handle(conn, stream, writer)))
    }

    fn handle(&self, conn: u64, stream: Box<dyn Transport>, mut writer: Box<dyn Transport>) {
        let mut frames = FrameReader::new(stream);
        let mut bound: Option<String> = None;
        loop {
            let next = match frames.read_message() {
                Ok(Some(m)) => m,
                Ok(None) | Err(_) => break,
            };
            match (&bound, next) {
                (None, Ok(Message::AuthRequest(AuthRequest { user, pw }))) => {
                    let ok = self.roster.check(&user, &pw).is_some();
                    let reply = Message::AuthResponse(AuthResponse {
                        result: if ok { AuthResult::Ok } else { AuthResult::Fail },
                    });
                    if writer.send_message(&reply).is_err() {
                        break;
                    }
                    if !ok {
                        info!("connection {conn}: authentication failed for `{user}`");
                        continue;
                    }
                    let Ok(loop_writer) = writer.try_clone_box() else {
                        break;
                    };
                    let event = Event::Bound {
                        agent: user.clone(),
                        conn,
                        writer: loop_writer,
                    };
                    if self.tx.send(event).is_err() {
                        break;
                    }
                    bound = Some(user);
                }
                (None, other) => {
                    debug!("connection {conn}: ignoring {other:?} before authentication");
                }
                (Some(agent), msg) => {
                    let event = Event::Inbound {
                        agent: agent.clone(),
                        conn,
                        msg,
                    };
                    if self.tx.send(event).is_err() {
                        break;
                    }
                }
            }
        }
        if let Some(agent) = bound {
            let _ = self.tx.send(Event::Closed { agent, conn });
        }
    }

    /// Opens an in-process connection and returns the client end.
    pub fn connect_local(&self) -> io::Result<Box<dyn Transport>> {
        let (server, client) = pipe();
        self.attach(Box::new(server))?;
        Ok(Box::new(client))
    }

    pub fn listener_failed(&self, message: String) {
        let _ = self.tx.send(Event::ListenerFailed(message));
    }
}

impl Connector for Hub {
    fn connect(&self) -> io::Result<Box<dyn Transport>> {
        self.connect_local()
    }
}

/// Everything needed to run one match.
pub struct MatchSettings {
    pub config: SimConfig,
    pub sim_id: String,
    /// Start from this world instead of generating one from the config.
    pub world: Option<WorldState>,
    pub replay: Box<dyn Write + Send>,
}

#[derive(Debug, Clone)]
pub struct MatchReport {
    pub sim_id: String,
    pub steps: u64,
    pub scores: BTreeMap<String, u64>,
    /// `None` on a draw.
    pub winner: Option<String>,
    pub final_hash: String,
    /// `no_op` results per team.
    pub no_ops: BTreeMap<String, u64>,
    /// The complete replay text.
    pub replay: String,
}

struct Slot {
    thing: ThingId,
    team: String,
    conn: Option<(u64, Box<dyn Transport>)>,
}

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Runs a match against connections arriving through `events`.
pub fn run_match(settings: MatchSettings, events: Receiver<Event>) -> Result<MatchReport, ServerError> {
    let config = settings.config.clone();
    let (mut world, generated) = match settings.world {
        Some(w) => (w, false),
        None => (WorldState::create(&config, config.seed)?, true),
    };
    let mut recorder = Recorder::new(&settings.sim_id, &world, generated, settings.replay)?;

    let mut slots: BTreeMap<String, Slot> = BTreeMap::new();
    for id in world.agent_ids() {
        let a = world.agent(id)?;
        slots.insert(
            a.name.clone(),
            Slot {
                thing: id,
                team: a.team.clone(),
                conn: None,
            },
        );
    }
    let team_size = config.agents_per_team;
    let start_msg = |slot: &Slot, name: &str| {
        Message::SimStart(SimStart {
            team: slot.team.clone(),
            name: name.to_string(),
            vision: config.vision_range,
            team_size,
            steps: config.steps,
            sim_id: settings.sim_id.clone(),
        })
    };
    // Handles connection bookkeeping; returns the agent whose connection
    // went away or was replaced, if any.
    let on_connection = |slots: &mut BTreeMap<String, Slot>, ev: Event| -> Result<Option<String>, ServerError> {
        match ev {
            Event::Bound { agent, conn, mut writer } => {
                let Some(slot) = slots.get_mut(&agent) else {
                    warn!("authenticated agent `{agent}` has no slot in this world");
                    writer.shutdown();
                    return Ok(None);
                };
                if writer.send_message(&start_msg(slot, &agent)).is_err() {
                    return Ok(None);
                }
                if let Some((old, w)) = slot.conn.replace((conn, writer)) {
                    info!("{agent}: connection {conn} supersedes {old}");
                    w.shutdown();
                }
                Ok(Some(agent))
            }
            Event::Closed { agent, conn } => {
                if let Some(slot) = slots.get_mut(&agent) {
                    if slot.conn.as_ref().is_some_and(|(c, _)| *c == conn) {
                        slot.conn = None;
                        info!("{agent}: connection {conn} closed");
                        return Ok(Some(agent));
                    }
                }
                Ok(None)
            }
            Event::ListenerFailed(message) => Err(ServerError::Listener(message)),
            Event::Inbound { .. } => Ok(None),
        }
    };

    let connect_deadline = Instant::now() + Duration::from_millis(config.connect_timeout_ms);
    while slots.values().any(|s| s.conn.is_none()) {
        let now = Instant::now();
        if now >= connect_deadline {
            let missing: Vec<&String> = slots
                .iter()
                .filter(|(_, s)| s.conn.is_none())
                .map(|(n, _)| n)
                .collect();
            warn!("starting without {} agents: {missing:?}", missing.len());
            break;
        }
        match events.recv_timeout(connect_deadline - now) {
            Ok(ev) => {
                on_connection(&mut slots, ev)?;
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
    }

    let mut no_ops: BTreeMap<String, u64> = config.teams.iter().map(|t| (t.clone(), 0)).collect();
    let mut aborted: Option<ServerError> = None;
    for _ in 0..config.steps {
        let id = world.executing_step();
        let mut pending: BTreeSet<String> = BTreeSet::new();
        for (name, slot) in slots.iter_mut() {
            let Some((_, writer)) = slot.conn.as_mut() else {
                continue;
            };
            let mut percept = compute_percept(&world, slot.thing)?;
            percept.deadline = epoch_ms() + config.deadline_ms;
            let msg = Message::RequestAction(RequestAction { id, percept });
            if writer.send_message(&msg).is_ok() {
                pending.insert(name.clone());
            } else if let Some((_, w)) = slot.conn.take() {
                w.shutdown();
            }
        }
        let step_deadline = Instant::now() + Duration::from_millis(config.deadline_ms);
        let mut actions: BTreeMap<ThingId, Action> = BTreeMap::new();
        let mut by_name: BTreeMap<String, Action> = BTreeMap::new();
        while !pending.is_empty() {
            let now = Instant::now();
            if now >= step_deadline {
                break;
            }
            let ev = match events.recv_timeout(step_deadline - now) {
                Ok(ev) => ev,
                Err(RecvTimeoutError::Timeout) => break,
                Err(RecvTimeoutError::Disconnected) => break,
            };
            match ev {
                Event::Inbound { agent, conn, msg } => {
                    let current = slots
                        .get(&agent)
                        .and_then(|s| s.conn.as_ref())
                        .is_some_and(|(c, _)| *c == conn);
                    if !current || !pending.contains(&agent) {
                        continue;
                    }
                    match msg.and_then(|m| m.expect_action(id)) {
                        Ok(action) => {
                            pending.remove(&agent);
                            actions.insert(slots[&agent].thing, action.clone());
                            by_name.insert(agent, action);
                        }
                        Err(e) => debug!("{agent}: step {id}: {e}"),
                    }
                }
                other => match on_connection(&mut slots, other) {
                    Ok(Some(agent)) => {
                        pending.remove(&agent);
                    }
                    Ok(None) => {}
                    Err(e) => {
                        aborted = Some(e);
                        break;
                    }
                },
            }
        }
        if aborted.is_some() {
            break;
        }
        let report = engine::step(&mut world, &actions);
        for r in &report.results {
            if r.outcome == Outcome::NoOp {
                if let Some(slot) = slots.get(&r.agent) {
                    *no_ops.entry(slot.team.clone()).or_insert(0) += 1;
                }
            }
        }
        recorder.record(&by_name, &report, &world)?;
    }
    if let Some(e) = aborted {
        for slot in slots.values() {
            if let Some((_, w)) = &slot.conn {
                w.shutdown();
            }
        }
        return Err(e);
    }

    let scores = world.scores.clone();
    let best = scores.values().copied().max().unwrap_or(0);
    let leaders: Vec<&String> = scores.iter().filter(|(_, s)| **s == best).map(|(t, _)| t).collect();
    let winner = (leaders.len() == 1).then(|| leaders[0].clone());
    for slot in slots.values_mut() {
        if let Some((_, mut w)) = slot.conn.take() {
            let score = scores.get(&slot.team).copied().unwrap_or(0);
            let end = Message::SimEnd(SimEnd {
                score,
                ranking: if score == best { 1 } else { 2 },
            });
            let _ = w.send_message(&end);
            let _ = w.send_message(&Message::Bye);
            w.shutdown();
        }
    }
    let (replay, final_hash) = recorder.finish()?;
    Ok(MatchReport {
        sim_id: settings.sim_id,
        steps: world.step,
        scores,
        winner,
        final_hash,
        no_ops,
        replay,
    })
}

/// A running TCP match.
pub struct TcpMatch {
    pub port: u16,
    handle: JoinHandle<Result<MatchReport, ServerError>>,
}

impl TcpMatch {
    pub fn join(self) -> Result<MatchReport, ServerError> {
        self.handle
            .join()
            .unwrap_or_else(|_| Err(ServerError::Listener("match thread panicked".into())))
    }
}

/// Binds `addr` and runs one match on a background thread.
pub fn serve(settings: MatchSettings, roster: Roster, addr: &str) -> Result<TcpMatch, ServerError> {
    let listener = TcpListener::bind(addr).map_err(|e| ServerError::Listener(e.to_string()))?;
    let port = listener.local_addr()?.port();
    listener.set_nonblocking(true)?;
    let (hub, events) = Hub::new(roster);
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let stop = stop.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        debug!("accepted {peer}");
                        let setup = stream
                            .set_nonblocking(false)
                            .and_then(|_| stream.set_nodelay(true))
                            .and_then(|_| stream.set_write_timeout(Some(Duration::from_secs(2))));
                        if setup.is_ok() {
                            let _ = hub.attach(Box::new(stream));
                        }
                    }
                    Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => {
                        hub.listener_failed(e.to_string());
                        return;
                    }
                }
            }
        })
    };
    let handle = thread::spawn(move || {
        let result = run_match(settings, events);
        stop.store(true, Ordering::SeqCst);
        let _ = acceptor.join();
        result
    });
    Ok(TcpMatch { port, handle })
}

/// A match between reference teams inside this process.
pub struct LocalMatch {
    pub config: SimConfig,
    pub sim_id: String,
    /// One behavior per team, in `config.teams` order.
    pub behaviors: Vec<BehaviorKind>,
    pub replay_path: Option<PathBuf>,
}

/// Runs server and teams in this process over in-memory pipes.
pub fn run_local_match(m: &LocalMatch) -> Result<MatchReport, ServerError> {
    m.config
        .validate()
        .map_err(|e| ServerError::World(WorldError::Config(e)))?;
    let roster = Roster::for_config(&m.config, "local");
    let (hub, events) = Hub::new(roster.clone());
    let replay: Box<dyn Write + Send> = match &m.replay_path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::sink()),
    };
    let connector: Arc<dyn Connector> = Arc::new(hub.clone());
    let mut teams = Vec::new();
    for (team, behavior) in m.config.teams.iter().zip(&m.behaviors) {
        let creds = roster.team(team);
        let connector = connector.clone();
        let behavior = *behavior;
        teams.push(thread::spawn(move || {
            run_team(connector, creds, behavior, ClientOptions::default())
        }));
    }
    drop(hub);
    let report = run_match(
        MatchSettings {
            config: m.config.clone(),
            sim_id: m.sim_id.clone(),
            world: None,
            replay,
        },
        events,
    );
    for t in teams {
        let _ = t.join();
    }
    report
}
