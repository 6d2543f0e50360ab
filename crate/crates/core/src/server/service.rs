//! The measurement service: accounts, provisioning, ingestion and status.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use base64::Engine;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rusqlite::{params, Connection, OptionalExtension};
use sha2::{Digest, Sha256};

use super::api::*;
use super::clock::{Clock, SystemClock};
use super::config::ServerConfig;
use super::error::{ApiError, ApiResult, ErrorKind};
use super::store::{self, not_found_if_none, Store, TypeRow};
use crate::domain::catalog::{WEATHER_ZONE_CELL, WEATHER_ZONE_TZ};
use crate::domain::{
    canonicalize, validate_property_name, AccountId, DataSourceType, DataSourceVariant, PropertyDescriptor,
    UnixTime, ValueFormat,
};

/// Keys a weather-zone payload may never carry.
const COORDINATE_KEYS: [&str; 8] = ["lat", "lon", "lng", "latitude", "longitude", "coordinates", "location", "position"];

const HEARTBEAT: &str = "heartbeat__0";

pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Principal {
    Admin,
    Account(String),
    Device { device_id: i64, source_id: i64 },
}

pub struct Service {
    store: Store,
    clock: Arc<dyn Clock>,
    admin_hash: Option<String>,
    default_multiplier: f64,
    rng: Mutex<ChaCha20Rng>,
}

impl Service {
    pub fn new(config: &ServerConfig) -> ApiResult<Self> {
        Self::with_clock(config, Arc::new(SystemClock))
    }

    pub fn with_clock(config: &ServerConfig, clock: Arc<dyn Clock>) -> ApiResult<Self> {
        let seed: [u8; 32] = rand::rng().random();
        Self::build(config, clock, ChaCha20Rng::from_seed(seed))
    }

    /// Service whose tokens and ids come from a seeded generator. Only for
    /// simulations that must be reproducible; tokens are then predictable.
    pub fn deterministic(config: &ServerConfig, clock: Arc<dyn Clock>, seed: u64) -> ApiResult<Self> {
        Self::build(config, clock, ChaCha20Rng::seed_from_u64(seed))
    }

    fn build(config: &ServerConfig, clock: Arc<dyn Clock>, rng: ChaCha20Rng) -> ApiResult<Self> {
        if !(config.overdue_multiplier.is_finite() && config.overdue_multiplier > 0.0) {
            return Err(ApiError::invalid("overdue multiplier must be positive"));
        }
        Ok(Self {
            store: Store::open(config.store.as_deref())?,
            clock,
            admin_hash: config.admin_token.as_deref().map(sha256_hex),
            default_multiplier: config.overdue_multiplier,
            rng: Mutex::new(rng),
        })
    }

    pub fn now(&self) -> UnixTime {
        self.clock.now()
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    fn random_bytes<const N: usize>(&self) -> [u8; N] {
        let mut buf = [0u8; N];
        self.rng.lock().unwrap_or_else(|p| p.into_inner()).fill_bytes(&mut buf);
        buf
    }

    fn new_session(&self, tx: &Connection, kind: &str, id: &str) -> ApiResult<String> {
        let token = hex::encode(self.random_bytes::<32>());
        tx.execute(
            "INSERT INTO session (token_hash, principal_kind, principal_id, issued_at) VALUES (?1, ?2, ?3, ?4)",
            params![sha256_hex(&token), kind, id, self.now()],
        )?;
        Ok(token)
    }

    fn principal(&self, tx: &Connection, bearer: &str) -> ApiResult<Principal> {
        if bearer.is_empty() {
            return Err(ApiError::unauthorized());
        }
        let hash = sha256_hex(bearer);
        if self.admin_hash.as_deref() == Some(hash.as_str()) {
            return Ok(Principal::Admin);
        }
        let row: Option<(String, String)> = tx
            .prepare_cached(
                "SELECT principal_kind, principal_id FROM session WHERE token_hash = ?1 AND revoked_at IS NULL",
            )?
            .query_row([&hash], |r| Ok((r.get(0)?, r.get(1)?)))
            .optional()?;
        match row {
            Some((kind, id)) if kind == "account" => Ok(Principal::Account(id)),
            Some((kind, id)) if kind == "device" => {
                let device_id: i64 = id.parse().map_err(|_| ApiError::unauthorized())?;
                let source_id: Option<i64> = tx
                    .prepare_cached("SELECT source_id FROM device WHERE device_id = ?1")?
                    .query_row([device_id], |r| r.get(0))
                    .optional()?
                    .flatten();
                let source_id = source_id.ok_or_else(ApiError::unauthorized)?;
                Ok(Principal::Device { device_id, source_id })
            }
            _ => Err(ApiError::unauthorized()),
        }
    }

    fn require_admin(&self, tx: &Connection, bearer: &str) -> ApiResult<()> {
        match self.principal(tx, bearer)? {
            Principal::Admin => Ok(()),
            _ => Err(ApiError::unauthorized()),
        }
    }

    fn require_account(&self, tx: &Connection, bearer: &str) -> ApiResult<String> {
        match self.principal(tx, bearer)? {
            Principal::Account(id) => Ok(id),
            _ => Err(ApiError::unauthorized()),
        }
    }

    /// Checkpoint a file-backed store so every committed row is in the main
    /// database file.
    pub fn flush(&self) -> ApiResult<()> {
        self.store.checkpoint()
    }
}

fn campaign_record(tx: &Connection, campaign_id: i64) -> ApiResult<Option<CampaignRecord>> {
    let head: Option<(i64, String, f64, Option<i64>)> = tx
        .prepare_cached("SELECT app_id, name, overdue_multiplier, upload_interval_s FROM campaign WHERE campaign_id = ?1")?
        .query_row([campaign_id], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)))
        .optional()?;
    let Some((app_id, name, overdue_multiplier, upload_interval_s)) = head else {
        return Ok(None);
    };
    let list = campaign_types(tx, campaign_id)?
        .into_iter()
        .map(|t| t.type_name)
        .collect::<Vec<_>>();
    Ok(Some(CampaignRecord {
        campaign_id,
        app_id,
        name,
        activatable: !list.is_empty(),
        data_source_list: list,
        overdue_multiplier,
        upload_interval_s,
    }))
}

fn campaign_types(tx: &Connection, campaign_id: i64) -> ApiResult<Vec<TypeRow>> {
    let ids: Vec<i64> = tx
        .prepare_cached("SELECT type_id FROM data_source_list_item WHERE campaign_id = ?1 ORDER BY position")?
        .query_map([campaign_id], |r| r.get(0))?
        .collect::<Result<_, _>>()?;
    ids.into_iter().map(|id| store::type_by_id(tx, id)).collect()
}

fn account_campaign(tx: &Connection, account_id: &str) -> ApiResult<i64> {
    let c: Option<i64> = tx
        .prepare_cached("SELECT campaign_id FROM account WHERE account_id = ?1")?
        .query_row([account_id], |r| r.get(0))
        .optional()?;
    not_found_if_none(c, || format!("account {account_id}"))
}

fn account_sources(tx: &Connection, account_id: &str) -> ApiResult<Vec<(i64, TypeRow, UnixTime)>> {
    let rows: Vec<(i64, i64, UnixTime)> = tx
        .prepare_cached("SELECT source_id, type_id, created_at FROM data_source WHERE account_id = ?1 ORDER BY source_id")?
        .query_map([account_id], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
        .collect::<Result<_, _>>()?;
    rows.into_iter()
        .map(|(s, t, c)| Ok((s, store::type_by_id(tx, t)?, c)))
        .collect()
}

fn source_ref(source_id: i64, t: &TypeRow) -> DataSourceRef {
    DataSourceRef {
        source_id,
        type_name: t.type_name.clone(),
        variant: t.variant,
    }
}

/// Find the account's data source of a type, listed in its campaign.
fn campaign_source_of_type(
    tx: &Connection,
    account_id: &str,
    type_name: &str,
    variant: DataSourceVariant,
) -> ApiResult<(i64, TypeRow)> {
    let found = account_sources(tx, account_id)?
        .into_iter()
        .find(|(_, t, _)| t.type_name == type_name && t.variant == variant);
    found
        .map(|(s, t, _)| (s, t))
        .ok_or_else(|| ApiError::new(ErrorKind::NotInCampaign, format!("{type_name} is not in this account's campaign")))
}

/// Validate and canonicalise measurements against a type's properties.
/// Returns (property, time, canonical value) triples.
fn checked_measurements<'a>(
    props: &HashMap<String, PropertyDescriptor>,
    type_name: &str,
    upload_time: UnixTime,
    items: impl Iterator<Item = (&'a str, UnixTime, &'a str)>,
) -> ApiResult<Vec<(String, UnixTime, String)>> {
    let mut out = Vec::new();
    for (property, time, value) in items {
        let desc = props.get(property).ok_or_else(|| {
            ApiError::new(
                ErrorKind::UnknownProperty,
                format!("{property} is not a property of {type_name}"),
            )
        })?;
        if time > upload_time {
            return Err(ApiError::invalid(format!(
                "measurement of {property} at {time} is later than upload time {upload_time}"
            )));
        }
        let value = canonicalize(desc.value_format, value)
            .map_err(|e| ApiError::invalid(format!("{property} at {time}: {e}")))?;
        out.push((property.to_string(), time, value));
    }
    Ok(out)
}

fn store_batch(
    tx: &Connection,
    source_id: i64,
    upload_id: i64,
    rows: &[(String, UnixTime, String)],
) -> ApiResult<IngestReceipt> {
    let mut receipt = IngestReceipt::default();
    for (p, t, v) in rows {
        if store::insert_measurement(tx, source_id, p, *t, v, upload_id)? {
            receipt.stored += 1;
        } else {
            receipt.duplicates += 1;
        }
    }
    Ok(receipt)
}

fn property_map(tx: &Connection, type_id: i64) -> ApiResult<HashMap<String, PropertyDescriptor>> {
    Ok(store::type_properties(tx, type_id)?
        .into_iter()
        .map(|p| (p.name.clone(), p))
        .collect())
}

/// Format a batch-imported value implies: integers as `%d`, decimals by
/// their digit count, anything else as text.
fn inferred_format(value: &str) -> ValueFormat {
    let candidates = [
        ValueFormat::Signed,
        ValueFormat::Fixed1,
        ValueFormat::Fixed2,
        ValueFormat::Fixed3,
    ];
    candidates
        .into_iter()
        .find(|f| canonicalize(*f, value).as_deref() == Ok(value))
        .unwrap_or(ValueFormat::Text)
}

impl GearApi for Service {
    fn create_app(&self, admin: &str, name: &str) -> ApiResult<AppRecord> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            if name.trim().is_empty() {
                return Err(ApiError::invalid("app name is empty"));
            }
            let exists: Option<i64> = tx
                .query_row("SELECT app_id FROM app WHERE name = ?1", [name], |r| r.get(0))
                .optional()?;
            if exists.is_some() {
                return Err(ApiError::new(ErrorKind::Duplicate, format!("app {name:?} exists")));
            }
            tx.execute("INSERT INTO app (name) VALUES (?1)", [name])?;
            Ok(AppRecord {
                app_id: tx.last_insert_rowid(),
                name: name.to_string(),
            })
        })
    }

    fn list_apps(&self, admin: &str) -> ApiResult<Vec<AppRecord>> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            let rows = tx
                .prepare("SELECT app_id, name FROM app ORDER BY app_id")?
                .query_map([], |r| {
                    Ok(AppRecord {
                        app_id: r.get(0)?,
                        name: r.get(1)?,
                    })
                })?
                .collect::<Result<_, _>>()?;
            Ok(rows)
        })
    }

    fn create_campaign(&self, admin: &str, req: &CreateCampaign) -> ApiResult<CampaignRecord> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            let app: Option<i64> = tx
                .query_row("SELECT app_id FROM app WHERE app_id = ?1", [req.app_id], |r| r.get(0))
                .optional()?;
            not_found_if_none(app, || format!("app {}", req.app_id))?;
            let multiplier = req.overdue_multiplier.unwrap_or(self.default_multiplier);
            if !(multiplier.is_finite() && multiplier > 0.0) {
                return Err(ApiError::invalid("overdue multiplier must be positive"));
            }
            let mut types = Vec::new();
            for name in &req.data_source_list {
                let t = store::type_by_name(tx, name)?
                    .ok_or_else(|| ApiError::not_found(format!("unknown data source type {name:?}")))?;
                types.push(t);
            }
            let dup: Option<i64> = tx
                .query_row(
                    "SELECT campaign_id FROM campaign WHERE app_id = ?1 AND name = ?2",
                    params![req.app_id, req.name],
                    |r| r.get(0),
                )
                .optional()?;
            if dup.is_some() {
                return Err(ApiError::new(ErrorKind::Duplicate, format!("campaign {:?} exists", req.name)));
            }
            if req.upload_interval_s.is_some_and(|i| i <= 0) {
                return Err(ApiError::invalid("upload interval must be positive"));
            }
            tx.execute(
                "INSERT INTO campaign (app_id, name, overdue_multiplier, upload_interval_s) VALUES (?1, ?2, ?3, ?4)",
                params![req.app_id, req.name, multiplier, req.upload_interval_s],
            )?;
            let campaign_id = tx.last_insert_rowid();
            for (pos, t) in types.iter().enumerate() {
                tx.execute(
                    "INSERT INTO data_source_list_item (campaign_id, position, type_id) VALUES (?1, ?2, ?3)",
                    params![campaign_id, pos as i64, t.type_id],
                )?;
            }
            Ok(campaign_record(tx, campaign_id)?.expect("just inserted"))
        })
    }

    fn list_campaigns(&self, admin: &str) -> ApiResult<Vec<CampaignRecord>> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            let ids: Vec<i64> = tx
                .prepare("SELECT campaign_id FROM campaign ORDER BY campaign_id")?
                .query_map([], |r| r.get(0))?
                .collect::<Result<_, _>>()?;
            ids.into_iter()
                .map(|id| Ok(campaign_record(tx, id)?.expect("listed")))
                .collect()
        })
    }

    fn create_account(&self, admin: &str, campaign_id: i64) -> ApiResult<NewAccount> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            not_found_if_none(campaign_record(tx, campaign_id)?, || format!("campaign {campaign_id}"))?;
            let account_id = hex::encode(self.random_bytes::<8>());
            let token = base64::engine::general_purpose::STANDARD.encode(self.random_bytes::<32>());
            tx.execute(
                "INSERT INTO account (account_id, campaign_id, token_hash, created_at) VALUES (?1, ?2, ?3, ?4)",
                params![account_id, campaign_id, sha256_hex(&token), self.now()],
            )?;
            Ok(NewAccount {
                account_id: AccountId(account_id),
                activation_token: token,
            })
        })
    }

    fn list_accounts(&self, admin: &str, campaign_id: i64) -> ApiResult<Vec<AccountSummary>> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            not_found_if_none(campaign_record(tx, campaign_id)?, || format!("campaign {campaign_id}"))?;
            let rows = tx
                .prepare(
                    "SELECT account_id, activated_at FROM account WHERE campaign_id = ?1 ORDER BY created_at, account_id",
                )?
                .query_map([campaign_id], |r| {
                    Ok(AccountSummary {
                        account_id: AccountId(r.get(0)?),
                        campaign_id,
                        activated_at: r.get(1)?,
                    })
                })?
                .collect::<Result<_, _>>()?;
            Ok(rows)
        })
    }

    fn activate_account(&self, activation_token: &str) -> ApiResult<AccountActivation> {
        self.store.transaction(|tx| {
            let hash = sha256_hex(activation_token);
            let consumed: Option<i64> = tx
                .query_row("SELECT consumed_at FROM consumed_token WHERE token_hash = ?1", [&hash], |r| {
                    r.get(0)
                })
                .optional()?;
            if consumed.is_some() {
                return Err(ApiError::new(ErrorKind::TokenConsumed, "activation token was already used"));
            }
            let account: Option<(String, i64)> = tx
                .query_row(
                    "SELECT account_id, campaign_id FROM account WHERE token_hash = ?1 AND activated_at IS NULL",
                    [&hash],
                    |r| Ok((r.get(0)?, r.get(1)?)),
                )
                .optional()?;
            let (account_id, campaign_id) =
                account.ok_or_else(|| ApiError::new(ErrorKind::UnknownToken, "unknown activation token"))?;
            let now = self.now();
            let changed = tx.execute(
                "UPDATE account SET token_hash = NULL, activated_at = ?2 WHERE account_id = ?1 AND activated_at IS NULL",
                params![account_id, now],
            )?;
            if changed != 1 {
                return Err(ApiError::new(ErrorKind::TokenConsumed, "activation token was already used"));
            }
            tx.execute(
                "INSERT INTO consumed_token (token_hash, consumed_at) VALUES (?1, ?2)",
                params![hash, now],
            )?;
            let campaign = campaign_record(tx, campaign_id)?.expect("account references campaign");
            let mut data_sources = Vec::new();
            for t in campaign_types(tx, campaign_id)? {
                tx.execute(
                    "INSERT INTO data_source (account_id, type_id, origin, created_at) VALUES (?1, ?2, 'campaign', ?3)",
                    params![account_id, t.type_id, now],
                )?;
                data_sources.push(source_ref(tx.last_insert_rowid(), &t));
            }
            let session_token = self.new_session(tx, "account", &account_id)?;
            Ok(AccountActivation {
                session_token,
                account_id: AccountId(account_id),
                campaign,
                data_sources,
            })
        })
    }

    fn register_device(&self, admin: &str, reg: &DeviceRegistration) -> ApiResult<DeviceRecordView> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            let t = store::type_by_name(tx, &reg.device_type)?
                .filter(|t| t.variant == DataSourceVariant::DeviceType)
                .ok_or_else(|| ApiError::not_found(format!("unknown device type {:?}", reg.device_type)))?;
            if reg.device_name.is_empty() || reg.proof_of_possession.is_empty() {
                return Err(ApiError::invalid("device name and proof of possession are required"));
            }
            let exists: Option<i64> = tx
                .query_row("SELECT device_id FROM device WHERE device_name = ?1", [&reg.device_name], |r| {
                    r.get(0)
                })
                .optional()?;
            if exists.is_some() {
                return Err(ApiError::new(
                    ErrorKind::Duplicate,
                    format!("device {} is already registered", reg.device_name),
                ));
            }
            tx.execute(
                "INSERT INTO device (device_name, type_id, pop_hash) VALUES (?1, ?2, ?3)",
                params![reg.device_name, t.type_id, sha256_hex(&reg.proof_of_possession)],
            )?;
            Ok(DeviceRecordView {
                device_id: tx.last_insert_rowid(),
                device_name: reg.device_name.clone(),
                device_type: t.type_name,
                activated_at: None,
            })
        })
    }

    fn activate_device(&self, session: &str, device_name: &str, pop: &str) -> ApiResult<DeviceActivation> {
        self.store.transaction(|tx| {
            let account_id = self.require_account(tx, session)?;
            let device: Option<(i64, i64, String, Option<i64>)> = tx
                .query_row(
                    "SELECT device_id, type_id, pop_hash, activated_at FROM device WHERE device_name = ?1",
                    [device_name],
                    |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?, r.get(3)?)),
                )
                .optional()?;
            let (device_id, type_id, pop_hash, activated_at) =
                not_found_if_none(device, || format!("unknown device {device_name}"))?;
            if sha256_hex(pop) != pop_hash {
                return Err(ApiError::new(ErrorKind::WrongProof, "proof of possession does not match"));
            }
            if activated_at.is_some() {
                return Err(ApiError::new(
                    ErrorKind::AlreadyActivated,
                    format!("device {device_name} is already activated"),
                ));
            }
            let free: Option<i64> = tx
                .query_row(
                    "SELECT s.source_id FROM data_source s
                     WHERE s.account_id = ?1 AND s.type_id = ?2
                       AND NOT EXISTS (SELECT 1 FROM device d WHERE d.source_id = s.source_id)
                     ORDER BY s.source_id LIMIT 1",
                    params![account_id, type_id],
                    |r| r.get(0),
                )
                .optional()?;
            let Some(source_id) = free else {
                let any: i64 = tx.query_row(
                    "SELECT COUNT(*) FROM data_source WHERE account_id = ?1 AND type_id = ?2",
                    params![account_id, type_id],
                    |r| r.get(0),
                )?;
                return Err(if any == 0 {
                    ApiError::new(ErrorKind::NotInCampaign, "device type is not in this account's campaign")
                } else {
                    ApiError::new(ErrorKind::Duplicate, "every data source of this type already has a device")
                });
            };
            tx.execute(
                "UPDATE device SET source_id = ?2, activated_at = ?3 WHERE device_id = ?1 AND activated_at IS NULL",
                params![device_id, source_id, self.now()],
            )?;
            let session_token = self.new_session(tx, "device", &device_id.to_string())?;
            Ok(DeviceActivation {
                session_token,
                device_id,
                source_id,
            })
        })
    }

    fn upload(&self, session: &str, body: &UploadBody) -> ApiResult<IngestReceipt> {
        self.store.transaction(|tx| {
            let Principal::Device { source_id, .. } = self.principal(tx, session)? else {
                return Err(ApiError::unauthorized());
            };
            if body.size() == 0 {
                return Err(ApiError::invalid("upload contains no measurements"));
            }
            let type_id: i64 =
                tx.query_row("SELECT type_id FROM data_source WHERE source_id = ?1", [source_id], |r| r.get(0))?;
            let t = store::type_by_id(tx, type_id)?;
            let props = property_map(tx, type_id)?;
            let items = body.property_measurements.iter().flat_map(|pm| {
                pm.measurements
                    .iter()
                    .map(move |tv| (pm.property_name.as_str(), tv.time, tv.value.as_str()))
            });
            let rows = checked_measurements(&props, &t.type_name, body.upload_time, items)?;
            let upload_id = store::insert_upload(tx, source_id, body.upload_time, self.now(), rows.len(), "device")?;
            store_batch(tx, source_id, upload_id, &rows)
        })
    }

    fn energy_query(&self, session: &str, req: &EnergyQueryRequest) -> ApiResult<IngestReceipt> {
        self.store.transaction(|tx| {
            let account_id = self.require_account(tx, session)?;
            let (source_id, t) =
                campaign_source_of_type(tx, &account_id, &req.query_kind, DataSourceVariant::EnergyQuery)?;
            let obj = req
                .payload
                .as_object()
                .ok_or_else(|| ApiError::invalid("payload must be a JSON object"))?;
            if let Some(k) = obj.keys().find(|k| COORDINATE_KEYS.contains(&k.to_ascii_lowercase().as_str())) {
                return Err(ApiError::new(
                    ErrorKind::PrivacyViolation,
                    format!("payload field {k:?} would disclose a location"),
                ));
            }
            if let Some(k) = obj.keys().find(|k| *k != "cell_id" && *k != "tz") {
                return Err(ApiError::new(
                    ErrorKind::PrivacyViolation,
                    format!("weather-zone payload may only contain cell_id and tz, found {k:?}"),
                ));
            }
            let text = |k: &str| {
                obj.get(k)
                    .and_then(|v| v.as_str())
                    .ok_or_else(|| ApiError::invalid(format!("payload field {k} must be a string")))
            };
            let (cell, tz) = (text("cell_id")?, text("tz")?);
            crate::geo::parse_cell(cell).map_err(|e| ApiError::invalid(e.to_string()))?;
            if tz.parse::<chrono_tz::Tz>().is_err() {
                return Err(ApiError::invalid(format!("unknown time zone {tz:?}")));
            }
            let now = self.now();
            let props = property_map(tx, t.type_id)?;
            let items = [(WEATHER_ZONE_CELL, now, cell), (WEATHER_ZONE_TZ, now, tz)];
            let rows = checked_measurements(&props, &t.type_name, now, items.into_iter())?;
            let upload_id = store::insert_upload(tx, source_id, now, now, rows.len(), "query")?;
            store_batch(tx, source_id, upload_id, &rows)
        })
    }

    fn activate_cloud_feed(&self, session: &str, feed_type: &str) -> ApiResult<CloudFeedAuthorization> {
        self.store.transaction(|tx| {
            let account_id = self.require_account(tx, session)?;
            let (source_id, t) = campaign_source_of_type(tx, &account_id, feed_type, DataSourceVariant::CloudFeed)?;
            let now = self.now();
            tx.execute("UPDATE cloud_feed_auth SET active = 0 WHERE source_id = ?1", [source_id])?;
            tx.execute(
                "INSERT INTO cloud_feed_auth (source_id, authorized_at, active) VALUES (?1, ?2, 1)",
                params![source_id, now],
            )?;
            Ok(CloudFeedAuthorization {
                authorization_id: tx.last_insert_rowid(),
                feed_type: t.type_name,
                source_id,
                authorized_at: now,
            })
        })
    }

    fn status(&self, session: &str, query: &StatusQuery) -> ApiResult<StatusReport> {
        self.store.transaction(|tx| {
            let principal = self.principal(tx, session)?;
            let at = query.at.unwrap_or_else(|| self.now());
            let accounts: Vec<(String, i64, Option<i64>)> = match &principal {
                Principal::Admin => {
                    let mut stmt = tx.prepare(
                        "SELECT account_id, campaign_id, activated_at FROM account
                         WHERE ?1 IS NULL OR campaign_id = ?1 ORDER BY campaign_id, created_at, account_id",
                    )?;
                    let rows = stmt
                        .query_map([query.campaign], |r| Ok((r.get(0)?, r.get(1)?, r.get(2)?)))?
                        .collect::<Result<_, _>>()?;
                    rows
                }
                Principal::Account(id) => {
                    let campaign = account_campaign(tx, id)?;
                    vec![(id.clone(), campaign, Some(0))]
                }
                Principal::Device { .. } => return Err(ApiError::unauthorized()),
            };
            let mut report = StatusReport {
                at,
                sources: Vec::new(),
                not_activated: Vec::new(),
                unanswered_queries: Vec::new(),
            };
            let mut campaigns: BTreeMap<i64, (f64, Option<i64>)> = BTreeMap::new();
            for (account_id, campaign_id, activated_at) in accounts {
                if activated_at.is_none() {
                    report.not_activated.push(AccountId(account_id));
                    continue;
                }
                let (multiplier, upload_override) = match campaigns.get(&campaign_id) {
                    Some(c) => *c,
                    None => {
                        let c: (f64, Option<i64>) = tx.query_row(
                            "SELECT overdue_multiplier, upload_interval_s FROM campaign WHERE campaign_id = ?1",
                            [campaign_id],
                            |r| Ok((r.get(0)?, r.get(1)?)),
                        )?;
                        campaigns.insert(campaign_id, c);
                        c
                    }
                };
                for (source_id, t, created_at) in account_sources(tx, &account_id)? {
                    let interval = expected_interval(&t, upload_override);
                    let s = source_status(tx, &account_id, source_id, &t, created_at, at, interval, multiplier)?;
                    if t.variant == DataSourceVariant::EnergyQuery && s.latest_measurement_time.is_none() {
                        report.unanswered_queries.push(source_ref(source_id, &t));
                    }
                    report.sources.push(s);
                }
            }
            Ok(report)
        })
    }

    fn import_batch(&self, admin: &str, req: &ImportRequest) -> ApiResult<ImportReceipt> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            not_found_if_none(campaign_record(tx, req.campaign_id)?, || format!("campaign {}", req.campaign_id))?;
            let now = self.now();
            let mut receipt = ImportReceipt::default();
            let mut uploads: HashMap<i64, i64> = HashMap::new();
            let mut props_cache: HashMap<i64, HashMap<String, PropertyDescriptor>> = HashMap::new();
            let mut source_cache: HashMap<(String, String), i64> = HashMap::new();
            for (idx, rec) in req.records.iter().enumerate() {
                let at = |e: ApiError| ApiError::new(e.kind, format!("record {}: {}", idx + 1, e.message));
                if !validate_property_name(&rec.property).is_accepted() {
                    return Err(at(ApiError::invalid(format!("invalid property name {:?}", rec.property))));
                }
                if rec.account.is_empty() || !rec.account.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
                    return Err(at(ApiError::invalid(format!("invalid account pseudonym {:?}", rec.account))));
                }
                // account, created activated when unknown
                let owner: Option<i64> = tx
                    .prepare_cached("SELECT campaign_id FROM account WHERE account_id = ?1")?
                    .query_row([&rec.account], |r| r.get(0))
                    .optional()?;
                match owner {
                    Some(c) if c != req.campaign_id => {
                        return Err(at(ApiError::invalid(format!(
                            "account {} belongs to campaign {c}",
                            rec.account
                        ))))
                    }
                    Some(_) => {}
                    None => {
                        tx.execute(
                            "INSERT INTO account (account_id, campaign_id, created_at, activated_at) VALUES (?1, ?2, ?3, ?3)",
                            params![rec.account, req.campaign_id, now],
                        )?;
                        receipt.accounts_created += 1;
                    }
                }
                // source type, created as a batch-import type when unknown
                let t = match store::type_by_name(tx, &rec.source)? {
                    Some(t) => t,
                    None => {
                        if rec.source.is_empty() {
                            return Err(at(ApiError::invalid("empty source name")));
                        }
                        let ty = DataSourceType {
                            variant: DataSourceVariant::BatchImport,
                            type_name: rec.source.clone(),
                            properties: vec![],
                            upload_interval_s: None,
                        };
                        let id = store::insert_type(tx, &ty)?;
                        receipt.types_created += 1;
                        store::type_by_id(tx, id)?
                    }
                };
                let props = match props_cache.get_mut(&t.type_id) {
                    Some(p) => p,
                    None => {
                        let p = property_map(tx, t.type_id)?;
                        props_cache.entry(t.type_id).or_insert(p)
                    }
                };
                match props.get(&rec.property) {
                    Some(d) if d.unit != rec.unit => {
                        return Err(at(ApiError::invalid(format!(
                            "{} has unit {:?}, record says {:?}",
                            rec.property, d.unit, rec.unit
                        ))))
                    }
                    Some(_) => {}
                    None if t.variant == DataSourceVariant::BatchImport => {
                        let d = PropertyDescriptor {
                            name: rec.property.clone(),
                            unit: rec.unit.clone(),
                            value_format: inferred_format(&rec.value),
                            default_interval_s: 1,
                        };
                        store::insert_property(tx, t.type_id, &d)?;
                        props.insert(d.name.clone(), d);
                    }
                    None => {
                        return Err(at(ApiError::new(
                            ErrorKind::UnknownProperty,
                            format!("{} is not a property of {}", rec.property, t.type_name),
                        )))
                    }
                }
                let key = (rec.account.clone(), t.type_name.clone());
                let source_id = match source_cache.get(&key) {
                    Some(s) => *s,
                    None => {
                        let existing: Option<i64> = tx
                            .query_row(
                                "SELECT source_id FROM data_source WHERE account_id = ?1 AND type_id = ?2 ORDER BY source_id LIMIT 1",
                                params![rec.account, t.type_id],
                                |r| r.get(0),
                            )
                            .optional()?;
                        let s = match existing {
                            Some(s) => s,
                            None => {
                                tx.execute(
                                    "INSERT INTO data_source (account_id, type_id, origin, created_at) VALUES (?1, ?2, 'import', ?3)",
                                    params![rec.account, t.type_id, now],
                                )?;
                                tx.last_insert_rowid()
                            }
                        };
                        source_cache.insert(key, s);
                        s
                    }
                };
                let rows = checked_measurements(
                    props,
                    &t.type_name,
                    UnixTime::MAX,
                    std::iter::once((rec.property.as_str(), rec.time_unix, rec.value.as_str())),
                )
                .map_err(at)?;
                let upload_id = match uploads.get(&source_id) {
                    Some(u) => *u,
                    None => {
                        let u = store::insert_upload(tx, source_id, now, now, 0, "import")?;
                        uploads.insert(source_id, u);
                        u
                    }
                };
                let r = store_batch(tx, source_id, upload_id, &rows)?;
                receipt.stored += r.stored;
                receipt.duplicates += r.duplicates;
            }
            for upload_id in uploads.values() {
                tx.execute(
                    "UPDATE upload SET size = (SELECT COUNT(*) FROM measurement WHERE upload_id = ?1) WHERE upload_id = ?1",
                    [upload_id],
                )?;
            }
            Ok(receipt)
        })
    }

    fn export(&self, admin: &str, filter: &ExportFilter) -> ApiResult<Vec<ExportRow>> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            not_found_if_none(campaign_record(tx, filter.campaign)?, || format!("campaign {}", filter.campaign))?;
            let mut stmt = tx.prepare(
                "SELECT a.account_id, t.type_name, m.property, p.unit, m.time, m.value
                 FROM measurement m
                 JOIN data_source s ON s.source_id = m.source_id
                 JOIN account a ON a.account_id = s.account_id
                 JOIN data_source_type t ON t.type_id = s.type_id
                 JOIN property p ON p.type_id = s.type_id AND p.name = m.property
                 WHERE a.campaign_id = ?1
                   AND (?2 IS NULL OR a.account_id = ?2)
                   AND (?3 IS NULL OR m.time >= ?3)
                   AND (?4 IS NULL OR m.time < ?4)
                 ORDER BY m.time, a.account_id, t.type_name, m.property, m.source_id",
            )?;
            let rows = stmt
                .query_map(params![filter.campaign, filter.account, filter.from, filter.to], |r| {
                    Ok(ExportRow {
                        account: r.get(0)?,
                        source: r.get(1)?,
                        property: r.get(2)?,
                        unit: r.get(3)?,
                        time_unix: r.get(4)?,
                        value: r.get(5)?,
                    })
                })?
                .collect::<Result<_, _>>()?;
            Ok(rows)
        })
    }

    fn revoke_sessions(&self, admin: &str, req: &RevokeRequest) -> ApiResult<u64> {
        self.store.transaction(|tx| {
            self.require_admin(tx, admin)?;
            let now = self.now();
            let mut n = 0;
            if let Some(a) = &req.account_id {
                n += tx.execute(
                    "UPDATE session SET revoked_at = ?2 WHERE principal_kind = 'account' AND principal_id = ?1 AND revoked_at IS NULL",
                    params![a, now],
                )?;
            }
            if let Some(d) = &req.device_name {
                let id: Option<i64> = tx
                    .query_row("SELECT device_id FROM device WHERE device_name = ?1", [d], |r| r.get(0))
                    .optional()?;
                let id = not_found_if_none(id, || format!("unknown device {d}"))?;
                n += tx.execute(
                    "UPDATE session SET revoked_at = ?2 WHERE principal_kind = 'device' AND principal_id = ?1 AND revoked_at IS NULL",
                    params![id.to_string(), now],
                )?;
            }
            Ok(n as u64)
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn source_status(
    tx: &Connection,
    account_id: &str,
    source_id: i64,
    t: &TypeRow,
    created_at: UnixTime,
    at: UnixTime,
    interval: Option<i64>,
    multiplier: f64,
) -> ApiResult<DataSourceStatus> {
    let latest: Option<UnixTime> = tx
        .prepare_cached("SELECT MAX(time) FROM measurement WHERE source_id = ?1 AND time <= ?2")?
        .query_row(params![source_id, at], |r| r.get(0))?;
    let heartbeat: Option<String> = tx
        .prepare_cached(
            "SELECT value FROM measurement WHERE source_id = ?1 AND property = ?2 AND time <= ?3 ORDER BY time DESC LIMIT 1",
        )?
        .query_row(params![source_id, HEARTBEAT, at], |r| r.get(0))
        .optional()?;
    let device_name: Option<String> = tx
        .prepare_cached("SELECT device_name FROM device WHERE source_id = ?1")?
        .query_row([source_id], |r| r.get(0))
        .optional()?;
    let base = latest.unwrap_or(created_at);
    let next_expected_time = interval.map(|i| base + i);
    let overdue = interval.is_some_and(|i| (at - base) as f64 > multiplier * i as f64);
    Ok(DataSourceStatus {
        account_id: AccountId(account_id.to_string()),
        source_id,
        source_type: t.type_name.clone(),
        variant: t.variant,
        device_name,
        latest_measurement_time: latest,
        expected_interval_s: interval,
        next_expected_time,
        overdue,
        latest_heartbeat: heartbeat,
    })
}

/// How often new measurements should reach the server: the upload cadence
/// for devices. Queries, feeds and imports arrive on demand.
pub fn expected_interval(t: &TypeRow, campaign_override: Option<i64>) -> Option<i64> {
    match t.variant {
        DataSourceVariant::DeviceType => campaign_override.or(t.upload_interval_s),
        _ => None,
    }
}
