//! SQLite persistence. One table per entity of the data model; every
//! service call runs inside a single transaction.

use std::path::Path;
use std::sync::Mutex;

use rusqlite::{params, Connection, OptionalExtension, Transaction, TransactionBehavior};

use super::error::{ApiError, ApiResult};
use crate::domain::{Catalog, DataSourceType, DataSourceVariant, PropertyDescriptor, ValueFormat};

const SCHEMA: &str = "
PRAGMA foreign_keys = ON;
CREATE TABLE IF NOT EXISTS app (
    app_id INTEGER PRIMARY KEY,
    name TEXT NOT NULL UNIQUE
);
CREATE TABLE IF NOT EXISTS data_source_type (
    type_id INTEGER PRIMARY KEY,
    type_name TEXT NOT NULL UNIQUE,
    variant TEXT NOT NULL,
    upload_interval_s INTEGER
);
CREATE TABLE IF NOT EXISTS property (
    type_id INTEGER NOT NULL REFERENCES data_source_type(type_id),
    name TEXT NOT NULL,
    unit TEXT NOT NULL,
    format TEXT NOT NULL,
    interval_s INTEGER NOT NULL,
    PRIMARY KEY (type_id, name)
);
CREATE TABLE IF NOT EXISTS campaign (
    campaign_id INTEGER PRIMARY KEY,
    app_id INTEGER NOT NULL REFERENCES app(app_id),
    name TEXT NOT NULL,
    overdue_multiplier REAL NOT NULL,
    upload_interval_s INTEGER,
    UNIQUE (app_id, name)
);
CREATE TABLE IF NOT EXISTS data_source_list_item (
    campaign_id INTEGER NOT NULL REFERENCES campaign(campaign_id),
    position INTEGER NOT NULL,
    type_id INTEGER NOT NULL REFERENCES data_source_type(type_id),
    PRIMARY KEY (campaign_id, position)
);
CREATE TABLE IF NOT EXISTS account (
    account_id TEXT PRIMARY KEY,
    campaign_id INTEGER NOT NULL REFERENCES campaign(campaign_id),
    token_hash TEXT UNIQUE,
    created_at INTEGER NOT NULL,
    activated_at INTEGER
);
CREATE TABLE IF NOT EXISTS consumed_token (
    token_hash TEXT PRIMARY KEY,
    consumed_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS session (
    token_hash TEXT PRIMARY KEY,
    principal_kind TEXT NOT NULL,
    principal_id TEXT NOT NULL,
    issued_at INTEGER NOT NULL,
    revoked_at INTEGER
);
CREATE TABLE IF NOT EXISTS data_source (
    source_id INTEGER PRIMARY KEY,
    account_id TEXT NOT NULL REFERENCES account(account_id),
    type_id INTEGER NOT NULL REFERENCES data_source_type(type_id),
    origin TEXT NOT NULL,
    created_at INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS device (
    device_id INTEGER PRIMARY KEY,
    device_name TEXT NOT NULL UNIQUE,
    type_id INTEGER NOT NULL REFERENCES data_source_type(type_id),
    pop_hash TEXT NOT NULL,
    source_id INTEGER UNIQUE REFERENCES data_source(source_id),
    activated_at INTEGER
);
CREATE TABLE IF NOT EXISTS cloud_feed_auth (
    auth_id INTEGER PRIMARY KEY,
    source_id INTEGER NOT NULL REFERENCES data_source(source_id),
    authorized_at INTEGER NOT NULL,
    active INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS upload (
    upload_id INTEGER PRIMARY KEY,
    source_id INTEGER NOT NULL REFERENCES data_source(source_id),
    upload_time INTEGER NOT NULL,
    received_at INTEGER NOT NULL,
    size INTEGER NOT NULL,
    kind TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS measurement (
    source_id INTEGER NOT NULL REFERENCES data_source(source_id),
    property TEXT NOT NULL,
    time INTEGER NOT NULL,
    value TEXT NOT NULL,
    upload_id INTEGER NOT NULL REFERENCES upload(upload_id),
    PRIMARY KEY (source_id, property, time)
) WITHOUT ROWID;
DROP INDEX IF EXISTS measurement_time;
CREATE INDEX IF NOT EXISTS measurement_source_time ON measurement(source_id, time);
";

pub struct Store {
    conn: Mutex<Connection>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeRow {
    pub type_id: i64,
    pub type_name: String,
    pub variant: DataSourceVariant,
    pub upload_interval_s: Option<i64>,
}

impl Store {
    /// Open (or create) a store; `None` keeps it in memory.
    pub fn open(path: Option<&Path>) -> ApiResult<Self> {
        let conn = match path {
            Some(p) => Connection::open(p)?,
            None => Connection::open_in_memory()?,
        };
        conn.execute_batch(SCHEMA)?;
        if path.is_some() {
            conn.pragma_update(None, "journal_mode", "WAL")?;
            conn.pragma_update(None, "synchronous", "NORMAL")?;
        }
        let store = Self { conn: Mutex::new(conn) };
        store.transaction(|tx| {
            for t in &Catalog::shipped().types {
                if type_by_name(tx, &t.type_name)?.is_none() {
                    insert_type(tx, t)?;
                }
            }
            Ok(())
        })?;
        Ok(store)
    }

    /// Run `f` in an immediate transaction, committing on `Ok`.
    pub fn transaction<T>(&self, f: impl FnOnce(&Transaction) -> ApiResult<T>) -> ApiResult<T> {
        let mut conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        let tx = conn.transaction_with_behavior(TransactionBehavior::Immediate)?;
        let out = f(&tx)?;
        tx.commit()?;
        Ok(out)
    }

    /// Checkpoint the write-ahead log so the main file holds everything.
    pub fn checkpoint(&self) -> ApiResult<()> {
        let conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        conn.query_row("PRAGMA wal_checkpoint(TRUNCATE)", [], |_| Ok(())).optional()?;
        Ok(())
    }
}

pub fn type_by_name(conn: &Connection, name: &str) -> ApiResult<Option<TypeRow>> {
    let row = conn
        .prepare_cached("SELECT type_id, type_name, variant, upload_interval_s FROM data_source_type WHERE type_name = ?1")?
        .query_row([name], type_row)
        .optional()?;
    Ok(row)
}

pub fn type_by_id(conn: &Connection, type_id: i64) -> ApiResult<TypeRow> {
    Ok(conn
        .prepare_cached("SELECT type_id, type_name, variant, upload_interval_s FROM data_source_type WHERE type_id = ?1")?
        .query_row([type_id], type_row)?)
}

fn type_row(r: &rusqlite::Row) -> rusqlite::Result<TypeRow> {
    let variant: String = r.get(2)?;
    Ok(TypeRow {
        type_id: r.get(0)?,
        type_name: r.get(1)?,
        variant: DataSourceVariant::parse(&variant).unwrap_or(DataSourceVariant::BatchImport),
        upload_interval_s: r.get(3)?,
    })
}

pub fn insert_type(conn: &Connection, t: &DataSourceType) -> ApiResult<i64> {
    conn.execute(
        "INSERT INTO data_source_type (type_name, variant, upload_interval_s) VALUES (?1, ?2, ?3)",
        params![t.type_name, t.variant.as_str(), t.upload_interval_s],
    )?;
    let id = conn.last_insert_rowid();
    for p in &t.properties {
        insert_property(conn, id, p)?;
    }
    Ok(id)
}

pub fn insert_property(conn: &Connection, type_id: i64, p: &PropertyDescriptor) -> ApiResult<()> {
    conn.execute(
        "INSERT INTO property (type_id, name, unit, format, interval_s) VALUES (?1, ?2, ?3, ?4, ?5)",
        params![type_id, p.name, p.unit, p.value_format.tag(), p.default_interval_s],
    )?;
    Ok(())
}

pub fn type_properties(conn: &Connection, type_id: i64) -> ApiResult<Vec<PropertyDescriptor>> {
    let mut stmt =
        conn.prepare_cached("SELECT name, unit, format, interval_s FROM property WHERE type_id = ?1 ORDER BY rowid")?;
    let rows = stmt.query_map([type_id], |r| {
        let format: String = r.get(2)?;
        Ok(PropertyDescriptor {
            name: r.get(0)?,
            unit: r.get(1)?,
            value_format: format.parse().unwrap_or(ValueFormat::Text),
            default_interval_s: r.get(3)?,
        })
    })?;
    Ok(rows.collect::<Result<_, _>>()?)
}

/// Insert one measurement unless its key is already stored. Returns whether
/// it was new.
pub fn insert_measurement(
    conn: &Connection,
    source_id: i64,
    property: &str,
    time: i64,
    value: &str,
    upload_id: i64,
) -> ApiResult<bool> {
    let n = conn
        .prepare_cached(
            "INSERT OR IGNORE INTO measurement (source_id, property, time, value, upload_id) VALUES (?1, ?2, ?3, ?4, ?5)",
        )?
        .execute(params![source_id, property, time, value, upload_id])?;
    Ok(n == 1)
}

pub fn insert_upload(
    conn: &Connection,
    source_id: i64,
    upload_time: i64,
    received_at: i64,
    size: usize,
    kind: &str,
) -> ApiResult<i64> {
    conn.prepare_cached(
        "INSERT INTO upload (source_id, upload_time, received_at, size, kind) VALUES (?1, ?2, ?3, ?4, ?5)",
    )?
    .execute(params![source_id, upload_time, received_at, size as i64, kind])?;
    Ok(conn.last_insert_rowid())
}

pub fn not_found_if_none<T>(v: Option<T>, what: impl FnOnce() -> String) -> ApiResult<T> {
    v.ok_or_else(|| ApiError::not_found(what()))
}
