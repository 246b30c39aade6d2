//! Websocket transport for live sessions: `GET /ws` upgrades to a socket that
//! speaks [`crate::protocol`] in JSON text frames.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use tokio::net::TcpListener;
use tokio::time::MissedTickBehavior;

use crate::protocol::{Connection, ServerMessage, ServerState};

pub fn router(state: Arc<ServerState>) -> Router {
    Router::new().route("/ws", get(upgrade)).with_state(state)
}

pub async fn serve(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServerState>>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn send_all(socket: &mut WebSocket, msgs: Vec<ServerMessage>) -> bool {
    for m in msgs {
        let Ok(text) = serde_json::to_string(&m) else { continue };
        if socket.send(Message::Text(text.into())).await.is_err() {
            return false;
        }
    }
    true
}

async fn connection(mut socket: WebSocket, state: Arc<ServerState>) {
    let mut conn = Connection::new(state);
    let mut timer = tokio::time::interval(Duration::from_secs_f64(1.0 / conn.tick_rate()));
    timer.set_missed_tick_behavior(MissedTickBehavior::Skip);
    loop {
        let out = tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => conn.handle_text(text.as_str()),
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => continue,
            },
            _ = timer.tick(), if conn.running() => conn.on_timer(),
        };
        if !send_all(&mut socket, out).await {
            break;
        }
    }
    conn.close();
}
