//! One function per verb.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use datagear::server::http::BackgroundServer;
use datagear::server::{
    csv_to_numbered_rows, ensure_app, rows_to_csv, ApiError, CreateCampaign, ExportFilter, GearApi, HttpClient,
    ImportReceipt, ImportRequest, ServerConfig, Service, StatusQuery,
};
use datagear::sim::{run_campaign, run_in_process, CampaignReport, Scenario, SimTarget};
use serde::Deserialize;
use url::Url;

use crate::ledger::{Ledger, LedgerEntry};
use crate::output::{time_cell, Table};
use crate::settings::{Format, Settings, SettingsError};

/// Rows per import request.
const IMPORT_CHUNK: usize = 20_000;

#[derive(Debug)]
pub enum Failure {
    /// Bad invocation or configuration; nothing was sent.
    Usage(String),
    Failed(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Failed(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Failed(m) => m,
        }
    }
}

impl From<SettingsError> for Failure {
    fn from(e: SettingsError) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<ApiError> for Failure {
    fn from(e: ApiError) -> Self {
        Failure::Failed(format!("server: {e}"))
    }
}

impl From<crate::ledger::LedgerError> for Failure {
    fn from(e: crate::ledger::LedgerError) -> Self {
        Failure::Failed(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

pub type CmdResult = Result<(), Failure>;

pub enum Backend {
    Remote(HttpClient),
    Local(Arc<Service>),
}

impl Backend {
    /// The HTTP server when a URL is set, otherwise the local store file.
    pub fn connect(settings: &Settings, admin_token: &str) -> Result<Self, Failure> {
        if let Some(url) = &settings.server_url {
            return Ok(Backend::Remote(HttpClient::new(url)?));
        }
        let store = settings.store.clone().ok_or(SettingsError::NoServer)?;
        let config = ServerConfig {
            admin_token: Some(admin_token.to_string()),
            store: Some(store),
            ..ServerConfig::default()
        };
        Ok(Backend::Local(Arc::new(Service::new(&config)?)))
    }

    pub fn api(&self) -> &dyn GearApi {
        match self {
            Backend::Remote(c) => c,
            Backend::Local(s) => &**s,
        }
    }
}

fn connect(settings: &Settings) -> Result<(String, Backend), Failure> {
    let admin = settings.admin_token()?;
    let backend = Backend::connect(settings, &admin)?;
    Ok((admin, backend))
}

/// Declarative campaign file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignFile {
    #[serde(default = "default_app")]
    pub app: String,
    pub name: String,
    pub data_sources: Vec<String>,
    pub upload_interval_s: Option<i64>,
    pub overdue_multiplier: Option<f64>,
}

fn default_app() -> String {
    "NeedForHeat GearUp".into()
}

pub fn campaign_create(settings: &Settings, file: &Path) -> CmdResult {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let spec: CampaignFile =
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", file.display())))?;
    let (admin, backend) = connect(settings)?;
    let api = backend.api();
    let app_id = ensure_app(api, &admin, &spec.app)?;
    let c = api.create_campaign(
        &admin,
        &CreateCampaign {
            app_id,
            name: spec.name,
            data_source_list: spec.data_sources,
            overdue_multiplier: spec.overdue_multiplier,
            upload_interval_s: spec.upload_interval_s,
        },
    )?;
    println!("{}", c.campaign_id);
    Ok(())
}

pub fn campaign_list(settings: &Settings) -> CmdResult {
    let (admin, backend) = connect(settings)?;
    let mut t = Table::new(&["campaign", "app", "name", "activatable", "upload_interval_s", "data_sources"]);
    for c in backend.api().list_campaigns(&admin)? {
        t.row(vec![
            c.campaign_id.to_string(),
            c.app_id.to_string(),
            c.name,
            c.activatable.to_string(),
            c.upload_interval_s.map(|s| s.to_string()).unwrap_or_default(),
            c.data_source_list.join(" "),
        ]);
    }
    t.write(settings.format, &mut std::io::stdout().lock())?;
    Ok(())
}

/// `<base>/activate?token=<percent-encoded token>`
pub fn activation_link(base: &str, token: &str) -> Result<Url, url::ParseError> {
    let mut url = Url::parse(&format!("{}/activate", base.trim_end_matches('/')))?;
    url.query_pairs_mut().append_pair("token", token);
    Ok(url)
}

pub fn account_create(settings: &Settings, campaign: i64, pseudonym: &str, note: &str) -> CmdResult {
    let base = settings
        .link_base
        .clone()
        .or_else(|| settings.server_url.clone())
        .ok_or_else(|| Failure::Usage("no link base: pass --link-base or --server-url".into()))?;
    activation_link(&base, "probe").map_err(|e| Failure::Usage(format!("link base {base:?}: {e}")))?;
    let mut ledger = Ledger::open(settings.ledger_path()?)?;
    ledger.check_new(pseudonym)?;
    let (admin, backend) = connect(settings)?;
    let account = backend.api().create_account(&admin, campaign)?;
    ledger.append(LedgerEntry {
        pseudonym: pseudonym.to_string(),
        account_id: account.account_id.to_string(),
        created_at: chrono::Utc::now().timestamp(),
        note: note.to_string(),
    })?;
    let link = activation_link(&base, &account.activation_token).expect("base checked above");
    println!("{link}");
    log::info!("account {} recorded as {pseudonym}", account.account_id);
    Ok(())
}

fn open_ledger_if_set(settings: &Settings) -> Result<Option<Ledger>, Failure> {
    Ok(match &settings.ledger {
        Some(p) => Some(Ledger::open(p)?),
        None => None,
    })
}

pub fn account_list(settings: &Settings, campaign: i64) -> CmdResult {
    let ledger = open_ledger_if_set(settings)?;
    let (admin, backend) = connect(settings)?;
    let accounts = backend.api().list_accounts(&admin, campaign)?;
    let mut t = Table::new(&["pseudonym", "account", "activated_at"]);
    for a in accounts {
        let id = a.account_id.to_string();
        let pseudonym = ledger.as_ref().and_then(|l| l.pseudonym_of(&id)).unwrap_or("").to_string();
        t.row(vec![pseudonym, id, time_cell(a.activated_at, settings.format)]);
    }
    t.write(settings.format, &mut std::io::stdout().lock())?;
    Ok(())
}

pub fn monitor(settings: &Settings, campaign: Option<i64>, at: Option<i64>) -> CmdResult {
    let ledger = open_ledger_if_set(settings)?;
    let (admin, backend) = connect(settings)?;
    let report = backend.api().status(&admin, &StatusQuery { campaign, at })?;
    let name = |id: &str| {
        ledger
            .as_ref()
            .and_then(|l| l.pseudonym_of(id))
            .map(str::to_string)
            .unwrap_or_else(|| id.to_string())
    };
    let f = settings.format;
    let mut t = Table::new(&["account", "source", "device", "latest", "next_expected", "overdue"]);
    for s in &report.sources {
        t.row(vec![
            name(&s.account_id.0),
            s.source_type.clone(),
            s.device_name.clone().unwrap_or_default(),
            time_cell(s.latest_measurement_time, f),
            time_cell(s.next_expected_time, f),
            s.overdue.to_string(),
        ]);
    }
    t.write(f, &mut std::io::stdout().lock())?;
    let mut summary = vec![format!(
        "at {}: {} of {} sources overdue",
        time_cell(Some(report.at), Format::Table),
        report.overdue_count(),
        report.sources.len()
    )];
    let pending: Vec<String> = report.not_activated.iter().map(|a| name(&a.0)).collect();
    summary.push(format!("not activated: {} {}", pending.len(), pending.join(" ")).trim_end().to_string());
    summary.push(format!("unanswered queries: {}", report.unanswered_queries.len()));
    // keep CSV on stdout machine-readable
    if f == Format::Table {
        println!();
        for l in summary {
            println!("{l}");
        }
    } else {
        for l in summary {
            eprintln!("{l}");
        }
    }
    Ok(())
}

/// Turn a server "record N: ..." error into one naming the file line.
fn with_line(e: ApiError, lines: &[u64], file: &Path) -> Failure {
    let record = e
        .message
        .strip_prefix("record ")
        .and_then(|rest| rest.split_once(": "))
        .and_then(|(n, msg)| Some((n.parse::<usize>().ok()?, msg)));
    match record {
        Some((n, msg)) if n >= 1 && n <= lines.len() => {
            Failure::Failed(format!("{}: line {}: {msg}", file.display(), lines[n - 1]))
        }
        _ => e.into(),
    }
}

pub fn import(settings: &Settings, campaign: i64, file: &Path) -> CmdResult {
    let text = std::fs::read_to_string(file).map_err(|e| Failure::Failed(format!("{}: {e}", file.display())))?;
    let rows = csv_to_numbered_rows(&text).map_err(|e| Failure::Failed(format!("{}: {e}", file.display())))?;
    let (admin, backend) = connect(settings)?;
    let mut total = ImportReceipt::default();
    for chunk in rows.chunks(IMPORT_CHUNK) {
        let lines: Vec<u64> = chunk.iter().map(|(l, _)| *l).collect();
        let req = ImportRequest {
            campaign_id: campaign,
            records: chunk.iter().map(|(_, r)| r.clone()).collect(),
        };
        let r = backend.api().import_batch(&admin, &req).map_err(|e| with_line(e, &lines, file))?;
        total.stored += r.stored;
        total.duplicates += r.duplicates;
        total.accounts_created += r.accounts_created;
        total.types_created += r.types_created;
    }
    println!(
        "stored {} duplicates {} accounts_created {} types_created {}",
        total.stored, total.duplicates, total.accounts_created, total.types_created
    );
    Ok(())
}

pub struct ExportArgs {
    pub campaign: i64,
    pub account: Option<String>,
    pub from: Option<i64>,
    pub to: Option<i64>,
    pub out: Option<PathBuf>,
}

pub fn export(settings: &Settings, args: ExportArgs) -> CmdResult {
    // a ledger pseudonym is accepted in place of the account id
    let account = match (args.account, open_ledger_if_set(settings)?) {
        (Some(a), Some(l)) => Some(l.find(&a).map(|e| e.account_id.clone()).unwrap_or(a)),
        (a, _) => a,
    };
    let (admin, backend) = connect(settings)?;
    let rows = backend.api().export(
        &admin,
        &ExportFilter {
            campaign: args.campaign,
            account,
            from: args.from,
            to: args.to,
        },
    )?;
    let csv = rows_to_csv(&rows);
    match args.out {
        Some(p) => {
            std::fs::write(&p, csv).map_err(|e| Failure::Failed(format!("{}: {e}", p.display())))?;
            log::info!("{} rows written to {}", rows.len(), p.display());
        }
        None => std::io::stdout().lock().write_all(csv.as_bytes())?,
    }
    Ok(())
}

pub struct SimulateArgs {
    pub scenario: Option<PathBuf>,
    pub seed: Option<u64>,
    pub days: Option<u32>,
    pub households: Option<u32>,
    pub report_json: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

fn scenario_from(args: &SimulateArgs) -> Result<Scenario, Failure> {
    let mut s = match &args.scenario {
        Some(p) => Scenario::load(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?,
        None => Scenario::standard_fleet(args.seed.unwrap_or(1)),
    };
    if let Some(seed) = args.seed {
        s.seed = seed;
    }
    if let Some(d) = args.days {
        s.days = d;
    }
    if let Some(n) = args.households {
        match &mut s.generate {
            Some(g) => g.count = n,
            None => return Err(Failure::Usage("--households needs a scenario with generated households".into())),
        }
    }
    s.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(s)
}

pub fn simulate(settings: &Settings, args: SimulateArgs) -> CmdResult {
    let scenario = scenario_from(&args)?;
    let outcome = if let Some(url) = &settings.server_url {
        let admin = settings.admin_token()?;
        let client = HttpClient::new(url)?;
        let target = SimTarget {
            api: &client,
            admin_token: &admin,
            set_time: None,
        };
        run_campaign(&scenario, &target).map_err(|e| Failure::Failed(e.to_string()))?
    } else {
        let admin = match settings.admin_token_file {
            Some(_) => Some(settings.admin_token()?),
            None => None,
        };
        let config = ServerConfig {
            admin_token: admin,
            store: settings.store.clone(),
            ..ServerConfig::default()
        };
        run_in_process(&scenario, config)
            .map_err(|e| Failure::Failed(e.to_string()))?
            .outcome
    };
    let report: &CampaignReport = &outcome.report;
    if let Some(p) = &args.report_json {
        std::fs::write(p, report.to_json())?;
    }
    if let Some(p) = &args.log {
        let mut text = outcome.log.join("\n");
        text.push('\n');
        std::fs::write(p, text)?;
    }
    let mut out = std::io::stdout().lock();
    match settings.format {
        Format::Table => writeln!(out, "{report}")?,
        Format::Csv => {
            writeln!(out, "{}", CampaignReport::CSV_HEADER)?;
            for r in report.csv_rows() {
                writeln!(out, "{r}")?;
            }
        }
    }
    eprintln!(
        "campaign {} completed at {} ({})",
        report.campaign_id,
        report.completed_at,
        time_cell(Some(report.completed_at), Format::Table)
    );
    if !report.conserved() {
        return Err(Failure::Failed("measurement accounting does not balance".into()));
    }
    Ok(())
}

pub fn serve(settings: &Settings, listen: &str) -> CmdResult {
    let config = ServerConfig {
        admin_token: Some(settings.admin_token()?),
        store: settings.store.clone(),
        listen: listen.to_string(),
        ..ServerConfig::default()
    };
    let service = Arc::new(Service::new(&config)?);
    let server = BackgroundServer::start(service, listen)?;
    println!("{}", server.base_url());
    std::io::stdout().flush()?;
    loop {
        std::thread::park();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn link_round_trips_reserved_characters() {
        let token = "a+b/c=d&e?f g%";
        let link = activation_link("https://gear.example.org/app/", token).unwrap();
        assert!(link.as_str().starts_with("https://gear.example.org/app/activate?token="));
        assert!(!link.query().unwrap().contains('/'));
        let back: Vec<_> = link.query_pairs().collect();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].1, token);
    }
}
