use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use datagear::server::http::BackgroundServer;
use datagear::server::{GearApi, HttpClient, ServerConfig, Service};
use tempfile::TempDir;

const ADMIN: &str = "cli-admin-token";

struct Env {
    dir: TempDir,
    server: BackgroundServer,
}

impl Env {
    fn new() -> Self {
        let cfg = ServerConfig {
            admin_token: Some(ADMIN.into()),
            ..ServerConfig::default()
        };
        let server = BackgroundServer::start(Arc::new(Service::new(&cfg).unwrap()), "127.0.0.1:0").unwrap();
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("token"), format!("{ADMIN}\n")).unwrap();
        Self { dir, server }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn gearctl(&self, args: &[&str]) -> Output {
        let mut c = Command::new(env!("CARGO_BIN_EXE_gearctl"));
        c.env_clear()
            .env("GEARCTL_SERVER_URL", self.server.base_url())
            .env("GEARCTL_ADMIN_TOKEN_FILE", self.path("token"))
            .env("GEARCTL_LEDGER", self.path("ledger.csv"))
            .args(args);
        c.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.gearctl(args);
        assert!(
            out.status.success(),
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    fn campaign(&self) -> String {
        let file = self.path("campaign.toml");
        std::fs::write(
            &file,
            "name = \"winter\"\ndata_sources = [\"living-room-module\", \"smart-meter-module\", \"weather-zone\"]\n",
        )
        .unwrap();
        self.ok(&["campaign", "create", file.to_str().unwrap()]).trim().to_string()
    }
}

fn token_of(link: &str) -> String {
    let url = url::Url::parse(link.trim()).unwrap();
    url.query_pairs().find(|(k, _)| k == "token").unwrap().1.into_owned()
}

#[test]
fn campaign_create_and_list() {
    let env = Env::new();
    let id = env.campaign();
    assert!(id.parse::<i64>().is_ok(), "{id}");
    let csv = env.ok(&["--format", "csv", "campaign", "list"]);
    assert!(csv.starts_with("campaign,app,name"));
    assert!(csv.contains(&format!("{id},")));

    let bad = env.path("bad.toml");
    std::fs::write(&bad, "name = \"x\"\ndata_sources = [\"toaster\"]\n").unwrap();
    let out = env.gearctl(&["campaign", "create", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("toaster"));
}

#[test]
fn missing_admin_token_is_a_config_error() {
    let env = Env::new();
    let file = env.path("c.toml");
    std::fs::write(&file, "name = \"x\"\ndata_sources = []\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_gearctl"))
        .env_clear()
        // nothing listens here; the error must come first
        .args(["--server-url", "http://127.0.0.1:9", "campaign", "create", file.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no admin token"));
}

#[test]
fn onboarding_link_ledger_and_listing() {
    let env = Env::new();
    let campaign = env.campaign();
    let link = env.ok(&["account", "create", "--campaign", &campaign, "--pseudonym", "hh-001", "--note", "Jansen, 3rd floor"]);
    assert_eq!(link.lines().count(), 1);
    assert!(link.starts_with(&format!("{}/activate?token=", env.server.base_url())));
    let token = token_of(&link);

    let again = env.gearctl(&["account", "create", "--campaign", &campaign, "--pseudonym", "hh-001"]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("already in the ledger"));

    env.ok(&["account", "create", "--campaign", &campaign, "--pseudonym", "hh-002"]);
    let ledger = std::fs::read_to_string(env.path("ledger.csv")).unwrap();
    assert_eq!(ledger.lines().count(), 3);
    assert!(!ledger.contains(&token));

    // the decoded token activates exactly the recorded account
    let api = HttpClient::new(&env.server.base_url()).unwrap();
    let act = api.activate_account(&token).unwrap();
    assert!(ledger.contains(&format!("hh-001,{}", act.account_id)));

    let list = env.ok(&["--format", "csv", "account", "list", "--campaign", &campaign]);
    let rows: Vec<&str> = list.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.starts_with("hh-001,") && !r.ends_with(',')));
    assert!(rows.iter().any(|r| r.starts_with("hh-002,") && r.ends_with(',')));

    let monitor = env.ok(&["monitor", "--campaign", &campaign]);
    assert!(monitor.contains("not activated: 1 hh-002"), "{monitor}");
    assert!(monitor.contains("unanswered queries: 1"), "{monitor}");
}

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn import_export_round_trip_and_line_errors() {
    let env = Env::new();
    let campaign = env.campaign();
    let mut lines = vec!["account,source,property,unit,time_unix,value".to_string()];
    for i in 0..8 {
        lines.push(format!("knmi-1,knmi-hourly,temp_outdoor__degC,degC,{},{}.5", 1_700_000_000 + 3600 * i, i));
    }
    let file = env.path("import.csv");
    write_lines(&file, &lines);
    let out = env.ok(&["import", "--campaign", &campaign, file.to_str().unwrap()]);
    assert!(out.starts_with("stored 8 duplicates 0 accounts_created 1"), "{out}");
    let again = env.ok(&["import", "--campaign", &campaign, file.to_str().unwrap()]);
    assert!(again.starts_with("stored 0 duplicates 8"), "{again}");

    let export = env.ok(&["export", "--campaign", &campaign]);
    assert_eq!(export.lines().count(), 9);
    let ranged = env.ok(&[
        "export",
        "--campaign",
        &campaign,
        "--from",
        "1700003600",
        "--to",
        "2023-11-15T01:13:20Z",
    ]);
    let times: Vec<i64> = ranged.lines().skip(1).map(|l| l.split(',').nth(4).unwrap().parse().unwrap()).collect();
    assert!(!times.is_empty());
    assert!(times.iter().all(|&t| (1_700_003_600..=1_700_010_800).contains(&t)), "{times:?}");

    // re-import into a fresh server gives the same export
    let other = Env::new();
    let c2 = other.campaign();
    let dump = env.path("dump.csv");
    env.ok(&["export", "--campaign", &campaign, "--out", dump.to_str().unwrap()]);
    other.ok(&["import", "--campaign", &c2, dump.to_str().unwrap()]);
    assert_eq!(other.ok(&["export", "--campaign", &c2]), export);

    // line 7 holds a bad property name
    lines[6] = lines[6].replace("temp_outdoor__degC", "temp outdoor");
    write_lines(&file, &lines);
    let bad = env.gearctl(&["import", "--campaign", &campaign, file.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("line 7"), "{err}");
}

#[test]
fn flags_override_env_override_config() {
    let env = Env::new();
    let cfg = env.path("gearctl.toml");
    std::fs::write(&cfg, "server_url = \"http://127.0.0.1:9\"\nformat = \"csv\"\n").unwrap();
    let cfg_arg = cfg.to_str().unwrap();
    // env url beats the config file; config still supplies the format
    let out = env.ok(&["--config", cfg_arg, "campaign", "list"]);
    assert!(out.starts_with("campaign,app,"));
    // the flag beats both
    let out = env.gearctl(&["--config", cfg_arg, "--server-url", "http://127.0.0.1:9", "campaign", "list"]);
    assert_eq!(out.status.code(), Some(1));
    let out = env.ok(&["--config", cfg_arg, "--format", "table", "campaign", "list"]);
    assert!(out.starts_with("campaign  app"));
}

#[test]
fn silenced_device_is_the_only_overdue_row() {
    let env = Env::new();
    let scenario = env.path("scenario.toml");
    std::fs::write(
        &scenario,
        r#"
name = "silence"
seed = 5
start = "2024-11-04T00:00:00Z"
days = 2
devices = [{ type = "living-room-module" }, { type = "smart-meter-module" }]

[[households]]
label = "a"

[[households]]
label = "b"
silenced = ["living-room-module"]
"#,
    )
    .unwrap();
    let store = env.path("store.sqlite");
    let report = env.path("report.json");
    let common = ["--store", store.to_str().unwrap()];
    let out = Command::new(env!("CARGO_BIN_EXE_gearctl"))
        .env_clear()
        .args(common)
        .args(["--admin-token-file", env.path("token").to_str().unwrap(), "simulate", "--scenario"])
        .args([scenario.to_str().unwrap(), "--report-json", report.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let at = json["completed_at"].as_i64().unwrap().to_string();
    let campaign = json["campaign_id"].as_i64().unwrap().to_string();
    let out = Command::new(env!("CARGO_BIN_EXE_gearctl"))
        .env_clear()
        .args(common)
        .args(["--admin-token-file", env.path("token").to_str().unwrap(), "--format", "csv"])
        .args(["monitor", "--campaign", &campaign, "--at", &at])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(out.stdout).unwrap();
    let overdue: Vec<&str> = csv.lines().skip(1).filter(|l| l.ends_with(",true")).collect();
    assert_eq!(overdue.len(), 1, "{csv}");
    assert!(overdue[0].contains("living-room-module"));
    // 2 households x (2 devices + weather zone)
    assert_eq!(csv.lines().count(), 1 + 6);
}
