//! JSON-over-HTTP front end for [`Service`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::api::*;
use super::error::{ApiError, ApiResult, ErrorKind};
use super::service::Service;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.kind.http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type Shared = State<Arc<Service>>;

fn bearer(headers: &HeaderMap) -> String {
    headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .unwrap_or_default()
        .trim()
        .to_string()
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::invalid(format!("request body: {e}")))
}

/// Run a blocking service call off the async executor.
async fn call<T: Send + 'static>(
    svc: Arc<Service>,
    f: impl FnOnce(&Service) -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError::new(ErrorKind::Internal, format!("handler panicked: {e}")))?
}

fn reply<T: Serialize>(r: ApiResult<T>) -> Response {
    match r {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize, Serialize)]
pub struct NameBody {
    pub name: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CampaignBody {
    pub campaign_id: i64,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct CampaignParam {
    pub campaign: i64,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ActivateAccountBody {
    pub activation_token: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct ActivateDeviceBody {
    pub device_name: String,
    pub proof_of_possession: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FeedBody {
    pub feed_type: String,
}

async fn create_app(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<NameBody>(&bytes) {
        Ok(b) => call(svc, move |s| s.create_app(&token, &b.name)).await,
        Err(e) => Err(e),
    })
}

async fn list_apps(State(svc): Shared, headers: HeaderMap) -> Response {
    let token = bearer(&headers);
    reply(call(svc, move |s| s.list_apps(&token)).await)
}

async fn create_campaign(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<CreateCampaign>(&bytes) {
        Ok(b) => call(svc, move |s| s.create_campaign(&token, &b)).await,
        Err(e) => Err(e),
    })
}

async fn list_campaigns(State(svc): Shared, headers: HeaderMap) -> Response {
    let token = bearer(&headers);
    reply(call(svc, move |s| s.list_campaigns(&token)).await)
}

async fn create_account(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<CampaignBody>(&bytes) {
        Ok(b) => call(svc, move |s| s.create_account(&token, b.campaign_id)).await,
        Err(e) => Err(e),
    })
}

async fn list_accounts(State(svc): Shared, headers: HeaderMap, Query(q): Query<CampaignParam>) -> Response {
    let token = bearer(&headers);
    reply(call(svc, move |s| s.list_accounts(&token, q.campaign)).await)
}

async fn activate_account(State(svc): Shared, bytes: Bytes) -> Response {
    reply(match body::<ActivateAccountBody>(&bytes) {
        Ok(b) => call(svc, move |s| s.activate_account(&b.activation_token)).await,
        Err(e) => Err(e),
    })
}

async fn register_device(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<DeviceRegistration>(&bytes) {
        Ok(b) => call(svc, move |s| s.register_device(&token, &b)).await,
        Err(e) => Err(e),
    })
}

async fn activate_device(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<ActivateDeviceBody>(&bytes) {
        Ok(b) => call(svc, move |s| s.activate_device(&token, &b.device_name, &b.proof_of_possession)).await,
        Err(e) => Err(e),
    })
}

async fn upload(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<UploadBody>(&bytes) {
        Ok(b) => call(svc, move |s| s.upload(&token, &b)).await,
        Err(e) => Err(e),
    })
}

async fn energy_query(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<EnergyQueryRequest>(&bytes) {
        Ok(b) => call(svc, move |s| s.energy_query(&token, &b)).await,
        Err(e) => Err(e),
    })
}

async fn activate_cloud_feed(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<FeedBody>(&bytes) {
        Ok(b) => call(svc, move |s| s.activate_cloud_feed(&token, &b.feed_type)).await,
        Err(e) => Err(e),
    })
}

async fn status(State(svc): Shared, headers: HeaderMap, Query(q): Query<StatusQuery>) -> Response {
    let token = bearer(&headers);
    reply(call(svc, move |s| s.status(&token, &q)).await)
}

async fn import(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<ImportRequest>(&bytes) {
        Ok(b) => call(svc, move |s| s.import_batch(&token, &b)).await,
        Err(e) => Err(e),
    })
}

async fn export(State(svc): Shared, headers: HeaderMap, Query(q): Query<ExportFilter>) -> Response {
    let token = bearer(&headers);
    match call(svc, move |s| s.export(&token, &q)).await {
        Ok(rows) => ([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], rows_to_csv(&rows)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn revoke(State(svc): Shared, headers: HeaderMap, bytes: Bytes) -> Response {
    let token = bearer(&headers);
    reply(match body::<RevokeRequest>(&bytes) {
        Ok(b) => call(svc, move |s| s.revoke_sessions(&token, &b)).await,
        Err(e) => Err(e),
    })
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/app", post(create_app).get(list_apps))
        .route("/campaign", post(create_campaign).get(list_campaigns))
        .route("/account", post(create_account).get(list_accounts))
        .route("/account/activate", post(activate_account))
        .route("/device", post(register_device))
        .route("/device/activate", post(activate_device))
        .route("/upload", post(upload))
        .route("/energyquery", post(energy_query))
        .route("/cloudfeed/activate", post(activate_cloud_feed))
        .route("/status", get(status))
        .route("/import", post(import))
        .route("/export", get(export))
        .route("/session/revoke", post(revoke))
        .layer(DefaultBodyLimit::max(64 << 20))
        .with_state(service)
}

pub async fn serve(service: Arc<Service>, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(service)).await
}

/// A server running on its own thread, stopped when dropped.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(service: Arc<Service>, addr: &str) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let server = axum::serve(listener, router(service)).with_graceful_shutdown(async {
                    let _ = rx.await;
                });
                if let Err(e) = server.await {
                    log::error!("server stopped: {e}");
                }
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
