//! HTTP front end for a served victim: `POST /v1/query` answers hard or
//! soft label queries over base64-packed uint8 image tensors, with exact
//! budget accounting shared across concurrent clients, and `GET /v1/stats`
//! reports the ledger.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::prelude::*;
use ndarray::Array4;
use serde::{Deserialize, Serialize};

use mex_core::oracle::{QueryLedger, SharedLedger, VictimModel};
use mex_core::tensor::{argmax_rows, pixel_to_unit, softmax_rows};
use mex_core::nn::Feature;

/// Shared server context: the read-only model and the locked ledger.
pub struct ServeCtx {
    pub victim: VictimModel,
    pub ledger: SharedLedger,
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub mode: String,
    /// base64 of a packed uint8 tensor in NCHW order; pixel p maps to
    /// p / 127.5 - 1 in the model's working range.
    pub images: String,
    pub shape: [usize; 4],
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryResponse {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<Vec<f32>>>,
    pub queries_used: u64,
    pub budget_remaining: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

fn error_response(status: StatusCode, tag: &str) -> Response {
    (
        status,
        Json(ErrorResponse {
            error: tag.to_string(),
        }),
    )
        .into_response()
}

/// Ledger phase used for every served query.
pub const SERVE_PHASE: &str = "serve";

async fn query(State(ctx): State<Arc<ServeCtx>>, body: Json<QueryRequest>) -> Response {
    let req = body.0;
    let [n, c, h, w] = req.shape;
    if (c, h, w) != ctx.victim.input_shape || n == 0 {
        return error_response(StatusCode::BAD_REQUEST, "bad_shape");
    }
    let bytes = match BASE64_STANDARD.decode(req.images.as_bytes()) {
        Ok(b) => b,
        Err(_) => return error_response(StatusCode::BAD_REQUEST, "bad_shape"),
    };
    if bytes.len() != n * c * h * w {
        return error_response(StatusCode::BAD_REQUEST, "bad_shape");
    }
    let soft = match req.mode.as_str() {
        "hard" => false,
        "soft" => true,
        _ => return error_response(StatusCode::BAD_REQUEST, "bad_mode"),
    };

    // charge before compute: a rejected batch never touches the model
    let (used, remaining) = match ctx.ledger.charge(SERVE_PHASE, n as u64) {
        Ok(v) => v,
        Err(mex_core::Error::BudgetExhausted { .. }) => {
            return error_response(StatusCode::TOO_MANY_REQUESTS, "budget_exhausted")
        }
        Err(e) => {
            log::error!("ledger failure: {e}");
            return error_response(StatusCode::INTERNAL_SERVER_ERROR, "ledger_failure");
        }
    };

    let batch = Array4::from_shape_vec(
        (n, c, h, w),
        bytes.iter().map(|&b| pixel_to_unit(b)).collect(),
    )
    .expect("shape checked above");

    let ctx2 = ctx.clone();
    let scores = tokio::task::spawn_blocking(move || {
        ctx2.victim
            .net
            .forward_eval(Feature::Map(batch))
            .and_then(|f| f.into_flat())
    })
    .await;
    let scores = match scores {
        Ok(Ok(s)) => s,
        _ => return error_response(StatusCode::INTERNAL_SERVER_ERROR, "model_failure"),
    };

    let response = if soft {
        let probs = softmax_rows(&scores.view());
        QueryResponse {
            labels: None,
            probs: Some(probs.rows().into_iter().map(|r| r.to_vec()).collect()),
            queries_used: used,
            budget_remaining: remaining,
        }
    } else {
        QueryResponse {
            labels: Some(argmax_rows(&scores.view())),
            probs: None,
            queries_used: used,
            budget_remaining: remaining,
        }
    };
    Json(response).into_response()
}

async fn stats(State(ctx): State<Arc<ServeCtx>>) -> Json<QueryLedger> {
    Json(ctx.ledger.snapshot())
}

pub fn router(ctx: Arc<ServeCtx>) -> Router {
    Router::new()
        .route("/v1/query", post(query))
        .route("/v1/stats", get(stats))
        .with_state(ctx)
}

/// Binds the server and returns its local address plus a join handle; used
/// by the CLI (with a fixed port) and by tests (port 0).
pub async fn serve_on(
    addr: SocketAddr,
    ctx: Arc<ServeCtx>,
) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    let app = router(ctx);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            log::error!("server stopped: {e}");
        }
    });
    Ok((local, handle))
}

/// Packs a [-1, 1] image batch into the wire format (quantized uint8).
pub fn encode_images(batch: &Array4<f32>) -> (String, [usize; 4]) {
    let (n, c, h, w) = batch.dim();
    let bytes: Vec<u8> = batch
        .iter()
        .map(|&v| mex_core::tensor::unit_to_pixel(v))
        .collect();
    (BASE64_STANDARD.encode(&bytes), [n, c, h, w])
}
