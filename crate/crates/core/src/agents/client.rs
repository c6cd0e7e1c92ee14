//! Network side of a team: sessions, reconnects and per-step batching.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info};

use crate::perception::Percept;
use crate::protocol::{ActionReply, AuthRequest, AuthResult, FrameReader, Message};
use crate::server::Credential;
use crate::transport::{Connector, Transport};

use super::{BehaviorKind, TeamDriver};

#[derive(Debug, Clone)]
pub struct ClientOptions {
    /// Connection attempts per agent before giving up, counted over the
    /// whole session.
    pub connect_attempts: u32,
    pub retry_delay: Duration,
    /// Longest time the coordinator waits for the rest of a step's
    /// percepts once the first one arrived.
    pub batch_wait: Duration,
}

impl Default for ClientOptions {
    fn default() -> Self {
        ClientOptions {
            connect_attempts: 50,
            retry_delay: Duration::from_millis(100),
            batch_wait: Duration::from_secs(1),
        }
    }
}

/// What happened during a team's session.
#[derive(Debug, Clone, Default)]
pub struct TeamLog {
    pub lines: Vec<String>,
    /// Action replies sent, over all agents.
    pub replies: u64,
    /// Final score as reported by the server, if the match ended cleanly.
    pub score: Option<u64>,
    pub ranking: Option<u32>,
}

enum ClientEvent {
    Writer {
        agent: String,
        writer: Box<dyn Transport>,
    },
    Msg {
        agent: String,
        msg: Message,
    },
    Log(String),
    Done {
        agent: String,
    },
}

fn session(connector: Arc<dyn Connector>, cred: Credential, tx: Sender<ClientEvent>, options: ClientOptions) {
    let agent = cred.agent.clone();
    let log = |s: String| {
        let _ = tx.send(ClientEvent::Log(format!("{agent}: {s}")));
    };
    let mut attempts = 0;
    'connect: loop {
        if attempts > 0 {
            thread::sleep(options.retry_delay);
        }
        attempts += 1;
        if attempts > options.connect_attempts {
            log("giving up".into());
            break;
        }
        let conn = match connector.connect() {
            Ok(c) => c,
            Err(e) => {
                debug!("{agent}: connect failed: {e}");
                continue;
            }
        };
        let Ok(mut writer) = conn.try_clone_box() else {
            continue;
        };
        let auth = Message::AuthRequest(AuthRequest {
            user: cred.agent.clone(),
            pw: cred.password.clone(),
        });
        if writer.send_message(&auth).is_err() {
            continue;
        }
        let mut frames = FrameReader::new(conn);
        let mut bound = false;
        loop {
            let msg = match frames.read_message() {
                Ok(Some(Ok(m))) => m,
                Ok(Some(Err(e))) => {
                    log(format!("bad message: {e}"));
                    continue;
                }
                Ok(None) | Err(_) => {
                    log("connection lost".into());
                    continue 'connect;
                }
            };
            match msg {
                Message::AuthResponse(r) if !bound => {
                    if r.result == AuthResult::Fail {
                        log("authentication failed".into());
                        break 'connect;
                    }
                    let Ok(w) = writer.try_clone_box() else {
                        continue 'connect;
                    };
                    if tx.send(ClientEvent::Writer { agent: agent.clone(), writer: w }).is_err() {
                        break 'connect;
                    }
                    bound = true;
                }
                Message::Bye => {
                    let _ = tx.send(ClientEvent::Msg { agent: agent.clone(), msg });
                    break 'connect;
                }
                msg if bound => {
                    if tx.send(ClientEvent::Msg { agent: agent.clone(), msg }).is_err() {
                        break 'connect;
                    }
                }
                other => log(format!("unexpected {} before authentication", other.type_name())),
            }
        }
    }
    let _ = tx.send(ClientEvent::Done { agent });
}

fn epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Plays a whole team: one session thread per credential and a coordinator
/// that answers each step for all agents at once. Returns when every
/// session has ended.
pub fn run_team(
    connector: Arc<dyn Connector>,
    creds: Vec<Credential>,
    behavior: BehaviorKind,
    options: ClientOptions,
) -> TeamLog {
    let team = creds.first().map(|c| c.team.clone()).unwrap_or_default();
    let mut driver = TeamDriver::new(&team, behavior);
    let mut log = TeamLog::default();
    let (tx, rx) = mpsc::channel();
    // Sessions still running. A batch is only complete once every one of
    // them has reported, even those that have not authenticated yet.
    let mut live: BTreeSet<String> = creds.iter().map(|c| c.agent.clone()).collect();
    for cred in creds {
        let (connector, tx, options) = (connector.clone(), tx.clone(), options.clone());
        thread::spawn(move || session(connector, cred, tx, options));
    }
    drop(tx);

    let mut writers: BTreeMap<String, Box<dyn Transport>> = BTreeMap::new();
    let mut batch: BTreeMap<String, (u64, Percept)> = BTreeMap::new();
    let mut batch_id = 0;
    let mut flush_at: Option<Instant> = None;
    loop {
        let wait = flush_at
            .map(|t| t.saturating_duration_since(Instant::now()))
            .unwrap_or(Duration::from_millis(200));
        match rx.recv_timeout(wait) {
            Ok(ClientEvent::Writer { agent, writer }) => {
                writers.insert(agent, writer);
            }
            Ok(ClientEvent::Done { agent }) => {
                writers.remove(&agent);
                live.remove(&agent);
            }
            Ok(ClientEvent::Log(line)) => {
                info!("{line}");
                log.lines.push(line);
            }
            Ok(ClientEvent::Msg { agent, msg }) => match msg {
                Message::SimStart(s) => driver.sim_start(&s),
                Message::RequestAction(r) => {
                    if r.id > batch_id {
                        // A newer step: whatever is still pending is late.
                        batch.clear();
                        batch_id = r.id;
                        let left = r.percept.deadline.saturating_sub(epoch_ms());
                        let wait = Duration::from_millis(left / 2).min(options.batch_wait);
                        flush_at = Some(Instant::now() + wait);
                    }
                    if r.id == batch_id {
                        batch.insert(agent, (r.id, r.percept));
                    }
                }
                Message::SimEnd(e) => {
                    log.score = Some(e.score);
                    log.ranking = Some(e.ranking);
                }
                _ => {}
            },
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        let full = !batch.is_empty() && batch.len() >= live.len();
        let due = flush_at.is_some_and(|t| Instant::now() >= t);
        if !batch.is_empty() && (full || due) {
            let percepts: BTreeMap<String, Percept> =
                std::mem::take(&mut batch).into_iter().map(|(a, (_, p))| (a, p)).collect();
            let actions = driver.decide(&percepts);
            for (agent, action) in actions {
                let Some(w) = writers.get_mut(&agent) else {
                    continue;
                };
                let reply = Message::Action(ActionReply { id: batch_id, action });
                if w.send_message(&reply).is_ok() {
                    log.replies += 1;
                }
            }
            flush_at = None;
        }
    }
    log
}

/// Plays a single agent.
pub fn client_loop(
    connector: Arc<dyn Connector>,
    cred: Credential,
    behavior: BehaviorKind,
    options: ClientOptions,
) -> TeamLog {
    run_team(connector, vec![cred], behavior, options)
}

