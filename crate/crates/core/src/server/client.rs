//! Blocking HTTP client for the service API.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder};
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::api::*;
use super::error::{ApiError, ApiResult, ErrorKind};
use super::http::{ActivateAccountBody, ActivateDeviceBody, CampaignBody, CampaignParam, FeedBody, NameBody};

pub struct HttpClient {
    base: String,
    http: Client,
}

fn unavailable(e: impl std::fmt::Display) -> ApiError {
    ApiError::new(ErrorKind::Unavailable, e.to_string())
}

impl HttpClient {
    pub fn new(base_url: &str) -> ApiResult<Self> {
        let http = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(unavailable)?;
        Ok(Self {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    fn auth(req: RequestBuilder, token: &str) -> RequestBuilder {
        if token.is_empty() {
            req
        } else {
            req.bearer_auth(token)
        }
    }

    fn send_raw(req: RequestBuilder) -> ApiResult<String> {
        let resp = req.send().map_err(unavailable)?;
        let status = resp.status();
        let text = resp.text().map_err(unavailable)?;
        if status.is_success() {
            return Ok(text);
        }
        Err(serde_json::from_str::<ApiError>(&text)
            .unwrap_or_else(|_| ApiError::new(ErrorKind::Unavailable, format!("HTTP {status}: {text}"))))
    }

    fn send<T: DeserializeOwned>(req: RequestBuilder) -> ApiResult<T> {
        let text = Self::send_raw(req)?;
        serde_json::from_str(&text).map_err(|e| unavailable(format!("unreadable response: {e}")))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, token: &str, body: &B) -> ApiResult<T> {
        Self::send(Self::auth(self.http.post(self.url(path)), token).json(body))
    }

    fn get<Q: Serialize, T: DeserializeOwned>(&self, path: &str, token: &str, query: &Q) -> ApiResult<T> {
        Self::send(Self::auth(self.http.get(self.url(path)), token).query(query))
    }
}

impl GearApi for HttpClient {
    fn create_app(&self, admin: &str, name: &str) -> ApiResult<AppRecord> {
        self.post("/app", admin, &NameBody { name: name.to_string() })
    }

    fn list_apps(&self, admin: &str) -> ApiResult<Vec<AppRecord>> {
        Self::send(Self::auth(self.http.get(self.url("/app")), admin))
    }

    fn create_campaign(&self, admin: &str, req: &CreateCampaign) -> ApiResult<CampaignRecord> {
        self.post("/campaign", admin, req)
    }

    fn list_campaigns(&self, admin: &str) -> ApiResult<Vec<CampaignRecord>> {
        Self::send(Self::auth(self.http.get(self.url("/campaign")), admin))
    }

    fn create_account(&self, admin: &str, campaign_id: i64) -> ApiResult<NewAccount> {
        self.post("/account", admin, &CampaignBody { campaign_id })
    }

    fn list_accounts(&self, admin: &str, campaign_id: i64) -> ApiResult<Vec<AccountSummary>> {
        self.get("/account", admin, &CampaignParam { campaign: campaign_id })
    }

    fn activate_account(&self, activation_token: &str) -> ApiResult<AccountActivation> {
        let body = ActivateAccountBody {
            activation_token: activation_token.to_string(),
        };
        self.post("/account/activate", "", &body)
    }

    fn register_device(&self, admin: &str, reg: &DeviceRegistration) -> ApiResult<DeviceRecordView> {
        self.post("/device", admin, reg)
    }

    fn activate_device(&self, session: &str, device_name: &str, pop: &str) -> ApiResult<DeviceActivation> {
        let body = ActivateDeviceBody {
            device_name: device_name.to_string(),
            proof_of_possession: pop.to_string(),
        };
        self.post("/device/activate", session, &body)
    }

    fn upload(&self, session: &str, body: &UploadBody) -> ApiResult<IngestReceipt> {
        self.post("/upload", session, body)
    }

    fn energy_query(&self, session: &str, req: &EnergyQueryRequest) -> ApiResult<IngestReceipt> {
        self.post("/energyquery", session, req)
    }

    fn activate_cloud_feed(&self, session: &str, feed_type: &str) -> ApiResult<CloudFeedAuthorization> {
        let body = FeedBody {
            feed_type: feed_type.to_string(),
        };
        self.post("/cloudfeed/activate", session, &body)
    }

    fn status(&self, session: &str, query: &StatusQuery) -> ApiResult<StatusReport> {
        self.get("/status", session, query)
    }

    fn import_batch(&self, admin: &str, req: &ImportRequest) -> ApiResult<ImportReceipt> {
        self.post("/import", admin, req)
    }

    fn export(&self, admin: &str, filter: &ExportFilter) -> ApiResult<Vec<ExportRow>> {
        let text = Self::send_raw(Self::auth(self.http.get(self.url("/export")), admin).query(filter))?;
        csv_to_rows(&text).map_err(|e| unavailable(format!("unreadable export: {e}")))
    }

    fn revoke_sessions(&self, admin: &str, req: &RevokeRequest) -> ApiResult<u64> {
        self.post("/session/revoke", admin, req)
    }
}
