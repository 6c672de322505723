//! Console boundary: JSON snapshot, latest frame, a WebSocket of state
//! deltas and the command endpoints.

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use super::{WizardError, WizardHandle};

#[derive(Debug, Deserialize)]
struct IdBody {
    id: String,
}

#[derive(Debug, Deserialize)]
struct UndoBody {
    n: u32,
}

impl IntoResponse for WizardError {
    fn into_response(self) -> Response {
        let status = match &self {
            WizardError::NoSession => StatusCode::CONFLICT,
            WizardError::UnknownId(_) => StatusCode::NOT_FOUND,
            WizardError::NotGeneral(_) | WizardError::BadUndo => StatusCode::BAD_REQUEST,
            _ => StatusCode::SERVICE_UNAVAILABLE,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(handle: WizardHandle) -> Router {
    Router::new()
        .route("/state", get(state))
        .route("/frame/latest", get(latest_frame))
        .route("/stream", get(stream))
        .route("/activate", post(activate))
        .route("/general", post(general))
        .route("/undo", post(undo))
        .with_state(handle)
}

async fn state(State(h): State<WizardHandle>) -> Result<Response, WizardError> {
    Ok(Json(h.snapshot().await?).into_response())
}

async fn latest_frame(State(h): State<WizardHandle>) -> Result<Response, WizardError> {
    Ok(match h.latest_frame().await? {
        Some(bytes) => ([(header::CONTENT_TYPE, "image/jpeg"), (header::CACHE_CONTROL, "no-store")], bytes.to_vec()).into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": "no frame received yet" }))).into_response(),
    })
}

async fn activate(State(h): State<WizardHandle>, Json(body): Json<IdBody>) -> Result<Response, WizardError> {
    let command_id = h.activate(&body.id).await?;
    Ok(Json(json!({ "command_id": command_id })).into_response())
}

async fn general(State(h): State<WizardHandle>, Json(body): Json<IdBody>) -> Result<Response, WizardError> {
    let command_id = h.send_general(&body.id).await?;
    Ok(Json(json!({ "command_id": command_id })).into_response())
}

async fn undo(State(h): State<WizardHandle>, Json(body): Json<UndoBody>) -> Result<Response, WizardError> {
    let command_id = h.send_undo(body.n).await?;
    Ok(Json(json!({ "command_id": command_id })).into_response())
}

async fn stream(State(h): State<WizardHandle>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| forward(socket, h))
}

async fn forward(mut socket: WebSocket, h: WizardHandle) {
    let mut rx = h.subscribe();
    loop {
        tokio::select! {
            event = rx.recv() => {
                let text = match event {
                    Ok(e) => serde_json::to_string(&e).expect("stream events serialize"),
                    Err(RecvError::Lagged(n)) => json!({ "type": "lagged", "skipped": n }).to_string(),
                    Err(RecvError::Closed) => break,
                };
                if socket.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            }
        }
    }
}
