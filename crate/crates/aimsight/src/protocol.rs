//! Websocket message schema and the per-connection state machine.
//!
//! Every message is one JSON text frame with a `kind` and a schema version
//! `v`. Client kinds: `hello`, `configure`, `start`, `input`, `end`. Server
//! kinds: `hello`, `configure`, `start`, `snapshot`, `end`, `error`.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use aimsight_core::attention::BehaviorMode;
use aimsight_core::game::Score;
use serde::{Deserialize, Serialize};

use crate::realtime::{
    Clock, GazeSource, InputMessage, Pacer, SessionConfig, SessionError, SessionId, SessionRegistry, SessionStatus,
    Snapshot, PROTOCOL_VERSION,
};

/// Changes a client may make between trials. Absent fields keep their value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Configure {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<BehaviorMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_source: Option<GazeSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emulate_tracker: Option<bool>,
}

impl Configure {
    pub fn apply(&self, base: &SessionConfig) -> SessionConfig {
        let mut c = base.clone();
        if let Some(m) = self.mode {
            c.mode = m;
        }
        if let Some(g) = self.gaze_source {
            c.gaze_source = g;
        }
        if let Some(r) = self.snapshot_rate {
            c.snapshot_rate = r;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(t) = self.trial_id {
            c.trial_id = t;
        }
        if let Some(e) = self.emulate_tracker {
            c.tracker.enabled = e;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello { v: u32 },
    Configure(Configure),
    Start { v: u32 },
    Input(InputMessage),
    End { v: u32 },
}

impl ClientMessage {
    pub fn version(&self) -> u32 {
        match self {
            ClientMessage::Hello { v } | ClientMessage::Start { v } | ClientMessage::End { v } => *v,
            ClientMessage::Configure(c) => c.v,
            ClientMessage::Input(i) => i.v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadMessage,
    UnsupportedVersion,
    NoSession,
    InvalidConfig,
    UnknownSession,
    NotRunning,
    AlreadyRunning,
    InvalidInput,
}

impl From<&SessionError> for ErrorCode {
    fn from(e: &SessionError) -> Self {
        match e {
            SessionError::InvalidConfig(_) => ErrorCode::InvalidConfig,
            SessionError::UnknownSession(_) => ErrorCode::UnknownSession,
            SessionError::NotRunning => ErrorCode::NotRunning,
            SessionError::AlreadyRunning => ErrorCode::AlreadyRunning,
            SessionError::InvalidInput(_) => ErrorCode::InvalidInput,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello { v: u32, session_id: SessionId, status: SessionStatus, config: SessionConfig },
    Configure { v: u32, session_id: SessionId, config: SessionConfig },
    Start { v: u32, session_id: SessionId, tick_rate: f64 },
    Snapshot(Snapshot),
    End { v: u32, session_id: SessionId, score: Score, ticks: u64, stale_inputs: u64, log: Option<String> },
    Error { v: u32, code: ErrorCode, message: String },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMessage::Error { v: PROTOCOL_VERSION, code, message: message.into() }
    }
}

impl From<SessionError> for ServerMessage {
    fn from(e: SessionError) -> Self {
        ServerMessage::error((&e).into(), e.to_string())
    }
}

/// Shared by all connections of a server.
pub struct ServerState {
    pub base: SessionConfig,
    pub registry: Mutex<SessionRegistry>,
    /// Finished trials are written here as JSONL logs.
    pub log_dir: Option<PathBuf>,
    pub clock: Arc<dyn Clock>,
}

impl ServerState {
    pub fn new(base: SessionConfig, log_dir: Option<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, SessionError> {
        base.validate()?;
        Ok(Self { base, registry: Mutex::new(SessionRegistry::default()), log_dir, clock })
    }
}

/// One client's view of the server: at most one session, opened by `hello`
/// and closed when the connection drops.
pub struct Connection {
    state: Arc<ServerState>,
    session: Option<SessionId>,
    pacer: Option<Pacer>,
}

impl Connection {
    pub fn new(state: Arc<ServerState>) -> Self {
        Self { state, session: None, pacer: None }
    }

    pub fn session(&self) -> Option<SessionId> {
        self.session
    }

    /// `true` while a trial is being paced.
    pub fn running(&self) -> bool {
        self.pacer.is_some()
    }

    pub fn tick_rate(&self) -> f64 {
        self.state.base.game.tick_rate
    }

    pub fn handle_text(&mut self, text: &str) -> Vec<ServerMessage> {
        match serde_json::from_str::<ClientMessage>(text) {
            Ok(msg) => self.handle(msg),
            Err(e) => vec![ServerMessage::error(ErrorCode::BadMessage, e.to_string())],
        }
    }

    pub fn handle(&mut self, msg: ClientMessage) -> Vec<ServerMessage> {
        if msg.version() != PROTOCOL_VERSION {
            return vec![ServerMessage::error(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {} is not supported, use {PROTOCOL_VERSION}", msg.version()),
            )];
        }
        let mut registry = self.state.registry.lock().unwrap();
        let id = match (&msg, self.session) {
            (ClientMessage::Hello { .. }, None) => match registry.open(self.state.base.clone()) {
                Ok(id) => {
                    self.session = Some(id);
                    id
                }
                Err(e) => return vec![e.into()],
            },
            (_, Some(id)) => id,
            (_, None) => return vec![ServerMessage::error(ErrorCode::NoSession, "send hello first")],
        };
        let session = match registry.get_mut(id) {
            Ok(s) => s,
            Err(e) => return vec![e.into()],
        };
        let v = PROTOCOL_VERSION;
        let result = match msg {
            ClientMessage::Hello { .. } => {
                Ok(vec![ServerMessage::Hello { v, session_id: id, status: session.status(), config: session.config().clone() }])
            }
            ClientMessage::Configure(c) => {
                let config = c.apply(session.config());
                session.reconfigure(config).map(|_| vec![ServerMessage::Configure { v, session_id: id, config: session.config().clone() }])
            }
            ClientMessage::Start { .. } => session.start().map(|_| {
                self.pacer = Some(Pacer::new(session.config().game.tick_rate, self.state.clock.now()));
                vec![ServerMessage::Start { v, session_id: id, tick_rate: session.config().game.tick_rate }, ServerMessage::Snapshot(session.snapshot())]
            }),
            ClientMessage::Input(input) => session.ingest(input).map(|_| Vec::new()),
            ClientMessage::End { .. } => {
                if session.status() == SessionStatus::Running {
                    session.end();
                    drop(registry);
                    return self.finish();
                }
                Err(SessionError::NotRunning)
            }
        };
        result.unwrap_or_else(|e| vec![e.into()])
    }

    /// Runs the ticks that are due and returns the messages to send.
    pub fn on_timer(&mut self) -> Vec<ServerMessage> {
        let (Some(id), Some(pacer)) = (self.session, self.pacer.as_mut()) else {
            return Vec::new();
        };
        let now = self.state.clock.now();
        let mut registry = self.state.registry.lock().unwrap();
        let Ok(session) = registry.get_mut(id) else {
            self.pacer = None;
            return Vec::new();
        };
        let mut out: Vec<ServerMessage> = match pacer.advance(session, now) {
            Ok(o) => o.snapshots.into_iter().map(ServerMessage::Snapshot).collect(),
            Err(e) => vec![e.into()],
        };
        if session.status() == SessionStatus::Ended {
            drop(registry);
            out.extend(self.finish());
        }
        out
    }

    /// Stops pacing, writes the trial log and reports the end.
    fn finish(&mut self) -> Vec<ServerMessage> {
        self.pacer = None;
        let Some(id) = self.session else { return Vec::new() };
        let registry = self.state.registry.lock().unwrap();
        let Ok(session) = registry.get(id) else { return Vec::new() };
        let mut out = Vec::new();
        let mut log = None;
        if let Some(dir) = &self.state.log_dir {
            let path = dir.join(format!("session_{id}_trial_{}.jsonl", session.config().trial_id));
            match session.log_bytes().and_then(|b| Ok(std::fs::write(&path, b)?)) {
                Ok(()) => log = Some(path.display().to_string()),
                Err(e) => out.push(ServerMessage::error(ErrorCode::InvalidConfig, format!("writing trial log: {e}"))),
            }
        }
        out.push(ServerMessage::End {
            v: PROTOCOL_VERSION,
            session_id: id,
            score: session.score(),
            ticks: session.tick(),
            stale_inputs: session.stale_inputs(),
            log,
        });
        out
    }

    /// Removes the session from the registry.
    pub fn close(&mut self) {
        if let Some(id) = self.session.take() {
            let _ = self.state.registry.lock().unwrap().close(id);
        }
        self.pacer = None;
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::realtime::ManualClock;
    use aimsight_core::game::GameConfig;

    fn state(clock: Arc<ManualClock>, duration: f64) -> Arc<ServerState> {
        let base = SessionConfig { game: GameConfig { trial_duration: duration, ..GameConfig::default() }, ..SessionConfig::default() };
        Arc::new(ServerState::new(base, None, clock).unwrap())
    }

    fn kinds(msgs: &[ServerMessage]) -> Vec<&'static str> {
        msgs.iter()
            .map(|m| match m {
                ServerMessage::Hello { .. } => "hello",
                ServerMessage::Configure { .. } => "configure",
                ServerMessage::Start { .. } => "start",
                ServerMessage::Snapshot(_) => "snapshot",
                ServerMessage::End { .. } => "end",
                ServerMessage::Error { .. } => "error",
            })
            .collect()
    }

    #[test]
    fn wire_format_has_kind_and_version() {
        let msg: ClientMessage = serde_json::from_str(r#"{"kind":"configure","v":1,"mode":"cooperative"}"#).unwrap();
        assert_eq!(msg, ClientMessage::Configure(Configure { v: 1, mode: Some(BehaviorMode::Cooperative), ..Configure::default() }));
        let input = r#"{"kind":"input","v":1,"timestamp":0.5,"handle_point":[0.5,0.5],"gaze_point":null,"trigger":true}"#;
        assert!(matches!(serde_json::from_str::<ClientMessage>(input).unwrap(), ClientMessage::Input(_)));
        let text = serde_json::to_string(&ServerMessage::error(ErrorCode::NotRunning, "x")).unwrap();
        assert_eq!(text, r#"{"kind":"error","v":1,"code":"not_running","message":"x"}"#);
    }

    #[test]
    fn messages_before_hello_are_rejected() {
        let clock = Arc::new(ManualClock::default());
        let mut c = Connection::new(state(clock, 1.0));
        let out = c.handle_text(r#"{"kind":"start","v":1}"#);
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::NoSession, .. }));
    }

    #[test]
    fn wrong_version_and_garbage_are_errors() {
        let clock = Arc::new(ManualClock::default());
        let mut c = Connection::new(state(clock, 1.0));
        let out = c.handle_text(r#"{"kind":"hello","v":2}"#);
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::UnsupportedVersion, .. }));
        let out = c.handle_text("not json");
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::BadMessage, .. }));
    }

    #[test]
    fn full_trial_on_manual_clock() {
        let clock = Arc::new(ManualClock::default());
        let st = state(clock.clone(), 2.0);
        let mut c = Connection::new(st.clone());
        assert_eq!(kinds(&c.handle_text(r#"{"kind":"hello","v":1}"#)), ["hello"]);
        assert_eq!(kinds(&c.handle_text(r#"{"kind":"configure","v":1,"mode":"manual"}"#)), ["configure"]);
        assert_eq!(kinds(&c.handle_text(r#"{"kind":"start","v":1}"#)), ["start", "snapshot"]);
        let out = c.handle_text(r#"{"kind":"configure","v":1,"mode":"slave"}"#);
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::AlreadyRunning, .. }));

        let mut snapshots = 0;
        let mut ended = None;
        for k in 0..200 {
            let input = InputMessage::new(k as f64 / 60.0, [0.3, 0.6], Some([0.3, 0.6]), true);
            c.handle(ClientMessage::Input(input));
            clock.advance(1.0 / 60.0);
            for m in c.on_timer() {
                match m {
                    ServerMessage::Snapshot(s) => {
                        snapshots += 1;
                        assert_eq!(s.mode, BehaviorMode::Manual);
                    }
                    ServerMessage::End { ticks, .. } => ended = Some(ticks),
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
        assert_eq!(ended, Some(120));
        assert_eq!(snapshots, 60);
        assert!(!c.running());
        assert_eq!(kinds(&c.handle_text(r#"{"kind":"configure","v":1,"mode":"slave"}"#)), ["configure"]);
        let id = c.session().unwrap();
        assert_eq!(st.registry.lock().unwrap().get(id).unwrap().status(), SessionStatus::Paused);
    }

    #[test]
    fn client_end_stops_trial() {
        let clock = Arc::new(ManualClock::default());
        let mut c = Connection::new(state(clock.clone(), 80.0));
        c.handle_text(r#"{"kind":"hello","v":1}"#);
        c.handle_text(r#"{"kind":"start","v":1}"#);
        clock.advance(0.5);
        c.on_timer();
        let out = c.handle_text(r#"{"kind":"end","v":1}"#);
        assert!(matches!(out[0], ServerMessage::End { ticks: 30, .. }), "{out:?}");
        let out = c.handle_text(r#"{"kind":"input","v":1,"timestamp":0,"handle_point":[0.5,0.5],"trigger":false}"#);
        assert!(matches!(out[0], ServerMessage::Error { code: ErrorCode::NotRunning, .. }));
    }

    #[test]
    fn dropped_connection_closes_session() {
        let clock = Arc::new(ManualClock::default());
        let st = state(clock, 1.0);
        let mut c = Connection::new(st.clone());
        c.handle_text(r#"{"kind":"hello","v":1}"#);
        assert_eq!(st.registry.lock().unwrap().len(), 1);
        drop(c);
        assert!(st.registry.lock().unwrap().is_empty());
    }
}
