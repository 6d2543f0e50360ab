use std::sync::Arc;

use datagear::domain::catalog::{LIVING_ROOM_MODULE, OPENTHERM_MONITOR, SMART_METER_MODULE, WEATHER_ZONE_QUERY};
use datagear::server::http::BackgroundServer;
use datagear::server::*;
use datagear::Measurement;
use serde_json::json;

const ADMIN: &str = "admin-secret";

fn service(clock: &ManualClock) -> Service {
    let cfg = ServerConfig {
        admin_token: Some(ADMIN.into()),
        ..ServerConfig::default()
    };
    Service::with_clock(&cfg, Arc::new(clock.clone())).unwrap()
}

fn campaign(api: &dyn GearApi, list: &[&str]) -> CampaignRecord {
    let app = api.create_app(ADMIN, "NeedForHeat GearUp").unwrap();
    api.create_campaign(
        ADMIN,
        &CreateCampaign {
            app_id: app.app_id,
            name: "twomes-like".into(),
            data_source_list: list.iter().map(|s| s.to_string()).collect(),
            overdue_multiplier: None,
            upload_interval_s: None,
        },
    )
    .unwrap()
}

const TWOMES: [&str; 4] = [SMART_METER_MODULE, LIVING_ROOM_MODULE, OPENTHERM_MONITOR, WEATHER_ZONE_QUERY];

struct Household {
    session: String,
    device_session: String,
}

fn household(api: &dyn GearApi, campaign_id: i64, device: &str) -> Household {
    let acc = api.create_account(ADMIN, campaign_id).unwrap();
    let act = api.activate_account(&acc.activation_token).unwrap();
    api.register_device(
        ADMIN,
        &DeviceRegistration {
            device_type: LIVING_ROOM_MODULE.into(),
            device_name: device.into(),
            proof_of_possession: "pop-1234".into(),
        },
    )
    .unwrap();
    let dev = api.activate_device(&act.session_token, device, "pop-1234").unwrap();
    Household {
        session: act.session_token,
        device_session: dev.session_token,
    }
}

fn six_hours_of_lrm(start: i64) -> Vec<Measurement> {
    let mut ms = Vec::new();
    for k in 0..6 {
        let t = start + k * 3600;
        ms.push(Measurement::new("co2__ppm", t, format!("{}", 400 + k)));
        ms.push(Measurement::new("temp_indoor__degC", t, "20.5"));
        ms.push(Measurement::new("rel_humidity__0", t, "0.4"));
        ms.push(Measurement::new("heartbeat__0", t, format!("{k}")));
        ms.push(Measurement::new("onboarded__p", t, "2"));
        ms.push(Measurement::new("occupancy__p", t, "1"));
    }
    ms
}

#[test]
fn apps_and_campaigns() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let app = svc.create_app(ADMIN, "NeedForHeat GearUp").unwrap();
    assert_eq!(app.app_id, 1);
    assert_eq!(svc.create_app("nope", "x").unwrap_err().kind, ErrorKind::Unauthorized);
    assert_eq!(svc.create_app(ADMIN, "NeedForHeat GearUp").unwrap_err().kind, ErrorKind::Duplicate);
    let mk = |name: &str, list: Vec<String>| {
        svc.create_campaign(
            ADMIN,
            &CreateCampaign {
                app_id: 1,
                name: name.into(),
                data_source_list: list,
                overdue_multiplier: None,
                upload_interval_s: None,
            },
        )
    };
    let c = mk("twomes-like", TWOMES.iter().map(|s| s.to_string()).collect()).unwrap();
    assert!(c.activatable);
    assert!(!mk("empty", vec![]).unwrap().activatable);
    assert_eq!(mk("bad", vec!["frobnicator".into()]).unwrap_err().kind, ErrorKind::NotFound);
    assert_eq!(svc.list_campaigns(ADMIN).unwrap().len(), 2);
}

#[test]
fn account_activation_is_single_use() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES[..3]);
    let acc = svc.create_account(ADMIN, c.campaign_id).unwrap();
    assert!(acc.activation_token.len() >= 43);
    let act = svc.activate_account(&acc.activation_token).unwrap();
    assert_eq!(act.data_sources.len(), 3);
    assert_eq!(
        svc.activate_account(&acc.activation_token).unwrap_err().kind,
        ErrorKind::TokenConsumed
    );
    assert_eq!(svc.activate_account("random").unwrap_err().kind, ErrorKind::UnknownToken);
    assert_eq!(svc.create_account(ADMIN, 99).unwrap_err().kind, ErrorKind::NotFound);
}

#[test]
fn device_activation_rules() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES);
    let acc = svc.create_account(ADMIN, c.campaign_id).unwrap();
    let act = svc.activate_account(&acc.activation_token).unwrap();
    svc.register_device(
        ADMIN,
        &DeviceRegistration {
            device_type: SMART_METER_MODULE.into(),
            device_name: "smart-meter-module_aabbccddeeff".into(),
            proof_of_possession: "right".into(),
        },
    )
    .unwrap();
    let name = "smart-meter-module_aabbccddeeff";
    assert_eq!(svc.activate_device(&act.session_token, name, "wrong").unwrap_err().kind, ErrorKind::WrongProof);
    assert_eq!(svc.activate_device(&act.session_token, "ghost", "x").unwrap_err().kind, ErrorKind::NotFound);
    svc.activate_device(&act.session_token, name, "right").unwrap();
    assert_eq!(
        svc.activate_device(&act.session_token, name, "right").unwrap_err().kind,
        ErrorKind::AlreadyActivated
    );
}

#[test]
fn upload_is_idempotent_and_type_checked() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES);
    let hh = household(&svc, c.campaign_id, "lrm-1");
    let ms = six_hours_of_lrm(1_700_000_000);
    let body = UploadBody::from_measurements(1_700_000_000 + 6 * 3600, &ms);
    assert_eq!(svc.upload(&hh.device_session, &body).unwrap(), IngestReceipt { stored: 36, duplicates: 0 });
    assert_eq!(svc.upload(&hh.device_session, &body).unwrap(), IngestReceipt { stored: 0, duplicates: 36 });

    let foreign = UploadBody::from_measurements(1_700_000_100, &[Measurement::new("e_use_hi_cum__kWh", 1_700_000_000, "1.000")]);
    assert_eq!(svc.upload(&hh.device_session, &foreign).unwrap_err().kind, ErrorKind::UnknownProperty);

    let future = UploadBody::from_measurements(1_699_999_999, &[Measurement::new("co2__ppm", 1_700_000_000, "400")]);
    assert_eq!(svc.upload(&hh.device_session, &future).unwrap_err().kind, ErrorKind::InvalidInput);

    let empty = UploadBody {
        upload_time: 1,
        property_measurements: vec![],
    };
    assert_eq!(svc.upload(&hh.device_session, &empty).unwrap_err().kind, ErrorKind::InvalidInput);
    assert_eq!(svc.upload(&hh.session, &body).unwrap_err().kind, ErrorKind::Unauthorized);
}

#[test]
fn weather_zone_payload_is_schema_checked() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES);
    let hh = household(&svc, c.campaign_id, "lrm-1");
    let q = |payload| EnergyQueryRequest {
        query_kind: WEATHER_ZONE_QUERY.into(),
        payload,
    };
    let ok = q(json!({"cell_id": "8419699ffffffff", "tz": "Europe/Amsterdam"}));
    assert_eq!(svc.energy_query(&hh.session, &ok).unwrap().stored, 2);
    let leaky = q(json!({"cell_id": "8419699ffffffff", "tz": "Europe/Amsterdam", "lat": 52.5}));
    assert_eq!(svc.energy_query(&hh.session, &leaky).unwrap_err().kind, ErrorKind::PrivacyViolation);
    let other = EnergyQueryRequest {
        query_kind: "building-signature".into(),
        payload: json!({}),
    };
    assert_eq!(svc.energy_query(&hh.session, &other).unwrap_err().kind, ErrorKind::NotInCampaign);
}

#[test]
fn cloud_feed_keeps_one_active_authorization() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &[LIVING_ROOM_MODULE, "enelogic-stub"]);
    let hh = household(&svc, c.campaign_id, "lrm-1");
    let a = svc.activate_cloud_feed(&hh.session, "enelogic-stub").unwrap();
    let b = svc.activate_cloud_feed(&hh.session, "enelogic-stub").unwrap();
    assert_ne!(a.authorization_id, b.authorization_id);
    assert_eq!(a.source_id, b.source_id);
    assert_eq!(svc.activate_cloud_feed(&hh.session, "other-oda").unwrap_err().kind, ErrorKind::NotInCampaign);
}

#[test]
fn overdue_rule() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let app = svc.create_app(ADMIN, "app").unwrap();
    let c = svc
        .create_campaign(
            ADMIN,
            &CreateCampaign {
                app_id: app.app_id,
                name: "fast".into(),
                data_source_list: vec![LIVING_ROOM_MODULE.into()],
                overdue_multiplier: Some(2.0),
                upload_interval_s: Some(600),
            },
        )
        .unwrap();
    let hh = household(&svc, c.campaign_id, "lrm-1");
    let t = 1_700_000_000;
    let status_at = |at| svc.status(&hh.session, &StatusQuery { campaign: None, at: Some(at) }).unwrap().sources[0].clone();

    // never reported: judged from activation
    assert!(!status_at(t + 1200).overdue);
    assert!(status_at(t + 1201).overdue);

    let body = UploadBody::from_measurements(t, &[Measurement::new("heartbeat__0", t, "7")]);
    svc.upload(&hh.device_session, &body).unwrap();
    let s = status_at(t + 25 * 60);
    assert_eq!(s.latest_measurement_time, Some(t));
    assert_eq!(s.next_expected_time, Some(t + 600));
    assert!(s.overdue);
    assert_eq!(s.latest_heartbeat.as_deref(), Some("7"));
    assert_eq!(s.device_name.as_deref(), Some("lrm-1"));
    assert!(!status_at(t + 5 * 60).overdue);
}

#[test]
fn admin_status_lists_pending_accounts_and_unanswered_queries() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES);
    let pending = svc.create_account(ADMIN, c.campaign_id).unwrap();
    household(&svc, c.campaign_id, "lrm-1");
    let report = svc.status(ADMIN, &StatusQuery { campaign: Some(c.campaign_id), at: None }).unwrap();
    assert_eq!(report.not_activated, vec![pending.account_id]);
    assert_eq!(report.unanswered_queries.len(), 1);
    assert_eq!(report.sources.len(), 4);
}

#[test]
fn import_and_export() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES);
    let records: Vec<ExportRow> = (0..100)
        .map(|i| ExportRow {
            account: "hh001".into(),
            source: "knmi-weather".into(),
            property: "temp_outdoor__degC".into(),
            unit: "degC".into(),
            time_unix: 1_700_000_000 + i * 600,
            value: format!("{:.1}", 5.0 + i as f64 / 10.0),
        })
        .collect();
    let req = ImportRequest {
        campaign_id: c.campaign_id,
        records: records.clone(),
    };
    let r = svc.import_batch(ADMIN, &req).unwrap();
    assert_eq!((r.stored, r.accounts_created, r.types_created), (100, 1, 1));
    assert_eq!(svc.import_batch(ADMIN, &req).unwrap().stored, 0);

    let mut bad = records[..1].to_vec();
    bad[0].property = "temp outdoor".into();
    let err = svc
        .import_batch(ADMIN, &ImportRequest { campaign_id: c.campaign_id, records: bad })
        .unwrap_err();
    assert_eq!(err.kind, ErrorKind::InvalidInput);

    let all = ExportFilter {
        campaign: c.campaign_id,
        ..Default::default()
    };
    let rows = svc.export(ADMIN, &all).unwrap();
    assert_eq!(rows, records);
    assert_eq!(rows_to_csv(&rows), rows_to_csv(&svc.export(ADMIN, &all).unwrap()));
    let none = ExportFilter {
        from: Some(5),
        to: Some(5),
        ..all.clone()
    };
    assert!(svc.export(ADMIN, &none).unwrap().is_empty());
    let window = ExportFilter {
        from: Some(1_700_000_000 + 600),
        to: Some(1_700_000_000 + 1800),
        ..all
    };
    assert_eq!(svc.export(ADMIN, &window).unwrap().len(), 2);
}

#[test]
fn revoked_device_session_cannot_upload() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = service(&clock);
    let c = campaign(&svc, &TWOMES);
    let hh = household(&svc, c.campaign_id, "lrm-1");
    let n = svc
        .revoke_sessions(
            ADMIN,
            &RevokeRequest {
                device_name: Some("lrm-1".into()),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(n, 1);
    let body = UploadBody::from_measurements(1_700_000_000, &[Measurement::new("heartbeat__0", 1_700_000_000, "1")]);
    assert_eq!(svc.upload(&hh.device_session, &body).unwrap_err().kind, ErrorKind::Unauthorized);
}

#[test]
fn http_round_trip() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = Arc::new(service(&clock));
    let server = BackgroundServer::start(svc, "127.0.0.1:0").unwrap();
    let client = HttpClient::new(&server.base_url()).unwrap();
    let c = campaign(&client, &TWOMES);
    let hh = household(&client, c.campaign_id, "lrm-http");
    let body = UploadBody::from_measurements(1_700_000_000 + 6 * 3600, &six_hours_of_lrm(1_700_000_000));
    assert_eq!(client.upload(&hh.device_session, &body).unwrap().stored, 36);
    assert_eq!(client.upload(&hh.device_session, &body).unwrap().duplicates, 36);
    let err = client.create_app("bad", "x").unwrap_err();
    assert_eq!(err.kind, ErrorKind::Unauthorized);
    let leaky = EnergyQueryRequest {
        query_kind: WEATHER_ZONE_QUERY.into(),
        payload: json!({"cell_id": "8419699ffffffff", "tz": "Europe/Amsterdam", "longitude": 6.09}),
    };
    assert_eq!(client.energy_query(&hh.session, &leaky).unwrap_err().kind, ErrorKind::PrivacyViolation);
    let rows = client
        .export(
            ADMIN,
            &ExportFilter {
                campaign: c.campaign_id,
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(rows.len(), 36);
    let report = client.status(&hh.session, &StatusQuery::default()).unwrap();
    assert_eq!(report.sources.len(), 4);
    assert_eq!(client.list_accounts(ADMIN, c.campaign_id).unwrap().len(), 1);
}

#[test]
fn concurrent_activation_succeeds_once() {
    let clock = ManualClock::new(1_700_000_000);
    let svc = Arc::new(service(&clock));
    let c = campaign(&*svc, &TWOMES);
    let acc = svc.create_account(ADMIN, c.campaign_id).unwrap();
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let svc = svc.clone();
            let token = acc.activation_token.clone();
            std::thread::spawn(move || svc.activate_account(&token).map(|_| ()).map_err(|e| e.kind))
        })
        .collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert_eq!(results.iter().filter(|r| r.is_ok()).count(), 1);
    assert!(results.iter().all(|r| matches!(r, Ok(()) | Err(ErrorKind::TokenConsumed))));
}

#[test]
fn store_file_holds_no_identifying_data() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gear.sqlite");
    let clock = ManualClock::new(1_700_000_000);
    let cfg = ServerConfig {
        admin_token: Some(ADMIN.into()),
        store: Some(path.clone()),
        ..ServerConfig::default()
    };
    let svc = Service::with_clock(&cfg, Arc::new(clock.clone())).unwrap();
    let c = campaign(&svc, &TWOMES);
    let acc = svc.create_account(ADMIN, c.campaign_id).unwrap();
    let act = svc.activate_account(&acc.activation_token).unwrap();
    let q = EnergyQueryRequest {
        query_kind: WEATHER_ZONE_QUERY.into(),
        payload: json!({"cell_id": "8419699ffffffff", "tz": "Europe/Amsterdam"}),
    };
    svc.energy_query(&act.session_token, &q).unwrap();
    svc.flush().unwrap();
    drop(svc);
    let mut bytes = Vec::new();
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        bytes.extend(std::fs::read(entry.unwrap().path()).unwrap());
    }
    let text = String::from_utf8_lossy(&bytes);
    for needle in [acc.activation_token.as_str(), act.session_token.as_str(), "52.51", "6.09", "Zwolle"] {
        assert!(!text.contains(needle), "store contains {needle:?}");
    }
    assert!(text.contains(acc.account_id.to_string().as_str()));
}
