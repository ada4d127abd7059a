use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration as StdDuration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use cdr_api::{bind, open_state, router, serve_with_shutdown, AppState, Config, ServeError, TokenGrant};
use cdr_core::{
    EntryId, NewPatient, Repository, Role, SteppingClock, SubmitResult, BUNDLED_CATALOG_CSV,
};
use chrono::{DateTime, Duration, NaiveDate, Utc};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tower::ServiceExt;

const TOKENS: [(&str, Role, &str); 6] = [
    ("op-token", Role::Operator, "op1"),
    ("op2-token", Role::Operator, "op2"),
    ("sup-token", Role::Supervisor, "sup1"),
    ("sup2-token", Role::Supervisor, "sup2"),
    ("dr-token", Role::Specialist, "dr1"),
    ("admin-token", Role::Admin, "admin"),
];

fn grants() -> BTreeMap<String, TokenGrant> {
    TOKENS
        .iter()
        .map(|(t, role, actor)| (t.to_string(), TokenGrant { role: *role, actor_id: actor.to_string() }))
        .collect()
}

fn clock() -> Arc<SteppingClock> {
    let start = DateTime::parse_from_rfc3339("2024-05-01T08:00:00Z").unwrap().with_timezone(&Utc);
    Arc::new(SteppingClock::new(start, Duration::seconds(1)))
}

fn fresh() -> (Router, AppState) {
    let state = AppState::new(Repository::in_memory(clock()), &grants());
    (router(state.clone()), state)
}

struct Reply {
    status: StatusCode,
    body: Vec<u8>,
}

impl Reply {
    fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|_| panic!("not json: {}", self.text()))
    }

    fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    fn error(&self) -> String {
        self.json()["error"].as_str().unwrap_or_default().to_string()
    }
}

async fn call(app: &Router, method: &str, path: &str, token: Option<&str>, body: Option<Body>) -> Reply {
    let mut req = Request::builder().method(method).uri(path);
    if let Some(token) = token {
        req = req.header("authorization", format!("Bearer {token}"));
    }
    let body = match body {
        Some(b) => {
            req = req.header("content-type", "application/json");
            b
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, body }
}

async fn post(app: &Router, path: &str, token: &str, body: Value) -> Reply {
    call(app, "POST", path, Some(token), Some(Body::from(body.to_string()))).await
}

async fn get(app: &Router, path: &str, token: &str) -> Reply {
    call(app, "GET", path, Some(token), None).await
}

fn patient_body(uid: &str) -> Value {
    json!({
        "patient_uid": uid,
        "full_name": "Asha Smith",
        "dob": "1990-03-03",
        "stated_age_years": 34,
        "as_of": "2024-05-01"
    })
}

fn result_body(slno: u32, value: &str, unit: &str) -> Value {
    json!({ "patient_uid": "P-0001", "slno": slno, "value": value, "unit": unit })
}

/// Imports the bundled catalog and registers P-0001.
async fn seeded() -> (Router, AppState) {
    let (app, state) = fresh();
    let r = call(&app, "POST", "/catalog/import", Some("admin-token"), Some(Body::from(BUNDLED_CATALOG_CSV))).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["loaded"], 28);
    let r = post(&app, "/patients", "op-token", patient_body("P-0001")).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    (app, state)
}

async fn verify_all(app: &Router) {
    for slno in 1..=28 {
        let r = call(app, "POST", &format!("/catalog/{slno}/verify"), Some("dr-token"), None).await;
        assert_eq!(r.status, StatusCode::OK);
    }
}

#[tokio::test]
async fn healthz_needs_no_token_but_everything_else_does() {
    let (app, _) = fresh();
    let r = call(&app, "GET", "/healthz", None, None).await;
    assert_eq!(r.status, StatusCode::OK);
    assert_eq!(r.json()["status"], "ok");

    for (method, path) in [
        ("GET", "/catalog"),
        ("GET", "/catalog/1/range"),
        ("POST", "/catalog/import"),
        ("POST", "/catalog/1/verify"),
        ("GET", "/patients?query=a"),
        ("POST", "/results"),
        ("GET", "/review/queue"),
        ("POST", "/results/E1/override"),
        ("POST", "/reports/R1/signoff"),
        ("GET", "/reports/R1"),
    ] {
        let r = call(&app, method, path, Some("nobody"), None).await;
        assert_eq!(r.status, StatusCode::UNAUTHORIZED, "{method} {path}");
        assert_eq!(r.error(), "Unauthorized");
        let r = call(&app, method, path, None, None).await;
        assert_eq!(r.status, StatusCode::UNAUTHORIZED, "{method} {path}");
    }
}

#[tokio::test]
async fn range_hints() {
    let (app, _) = seeded().await;
    let r = get(&app, "/catalog/1/range", "op-token").await;
    assert_eq!(r.status, StatusCode::OK);
    let hint = r.json();
    assert_eq!(hint["display_text"], "60-110 mg/dl");
    assert_eq!(hint["test_name"], "PlasmaGlucoseF");
    assert_eq!(hint["spec"]["kind"], "closed");
    assert_eq!(hint["verification"]["state"], "Unverified");

    let hint = get(&app, "/catalog/28/range", "op-token").await.json();
    assert_eq!(hint["spec"]["kind"], "qualitative");
    assert_eq!(hint["display_text"], "");

    let r = get(&app, "/catalog/999/range", "op-token").await;
    assert_eq!(r.status, StatusCode::NOT_FOUND);
    assert_eq!(r.error(), "UnknownSlno");
    assert_eq!(get(&app, "/catalog/x/range", "op-token").await.status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn range_hint_display_text_matches_catalog_source() {
    let (app, _) = seeded().await;
    let mut rows = csv::Reader::from_reader(BUNDLED_CATALOG_CSV.as_bytes());
    for row in rows.records() {
        let row = row.unwrap();
        let hint = get(&app, &format!("/catalog/{}/range", &row[0]), "op-token").await.json();
        assert_eq!(hint["display_text"], row[2].trim(), "row {}", &row[0]);
    }
}

#[tokio::test]
async fn range_hint_latency() {
    let (app, _) = seeded().await;
    let mut worst = StdDuration::ZERO;
    for i in 0..500u32 {
        let slno = i % 28 + 1;
        let t = Instant::now();
        let r = get(&app, &format!("/catalog/{slno}/range"), "op-token").await;
        worst = worst.max(t.elapsed());
        assert_eq!(r.status, StatusCode::OK);
    }
    assert!(worst <= StdDuration::from_millis(50), "worst range hint took {worst:?}");
}

#[tokio::test]
async fn catalog_listing_and_edit() {
    let (app, _) = seeded().await;
    let all = get(&app, "/catalog", "op-token").await.json();
    assert_eq!(all.as_array().unwrap().len(), 28);
    let serum = get(&app, "/catalog?filter=Serum", "op-token").await.json();
    assert_eq!(serum.as_array().unwrap().len(), 18);

    let r = call(&app, "POST", "/catalog/1/verify", Some("dr-token"), None).await;
    assert_eq!(r.json()["verification"]["specialist_id"], "dr1");

    let body = Body::from(json!({ "range_text": "70-110 mg/dl" }).to_string());
    let r = call(&app, "PUT", "/catalog/1", Some("dr-token"), Some(body)).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    let hint = get(&app, "/catalog/1/range", "op-token").await.json();
    assert_eq!(hint["display_text"], "70-110 mg/dl");
    assert_eq!(hint["verification"]["state"], "Unverified");
}

#[tokio::test]
async fn submission_and_review_flow() {
    let (app, _) = seeded().await;

    let r = post(&app, "/results", "op-token", result_body(1, "100", "mg/dl")).await;
    assert_eq!(r.status, StatusCode::CREATED);
    assert_eq!(r.json()["status"], "Accepted");

    let r = post(&app, "/results", "op-token", result_body(6, "6.2", "mEq/L")).await;
    let flagged = r.json();
    assert_eq!(flagged["status"], "Flagged");
    assert_eq!(flagged["level1"]["classification"], "AboveUL");
    let id = flagged["entry_id"].as_str().unwrap().to_string();

    let queue = get(&app, "/review/queue", "sup-token").await.json();
    assert_eq!(queue.as_array().unwrap().len(), 1);
    assert_eq!(queue[0]["entry_id"], id.as_str());

    // A non-numeric value is refused and leaves the queue alone.
    let r = post(&app, "/results", "op-token", result_body(1, "abc", "mg/dl")).await;
    assert_eq!(r.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(r.error(), "NonNumericValue");
    assert_eq!(get(&app, "/review/queue", "sup-token").await.json().as_array().unwrap().len(), 1);

    let r = post(&app, &format!("/results/{id}/override"), "sup-token", json!({ "reason": "haemolysed, repeat confirmed" })).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["status"], "Overridden");

    // A second supervisor acting on the same entry hits a conflict.
    let r = post(&app, &format!("/results/{id}/reject"), "sup2-token", json!({ "reason": "late" })).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error(), "NotFlagged");

    let trail = get(&app, &format!("/results/{id}/audit"), "sup-token").await.json();
    let actions: Vec<&str> = trail.as_array().unwrap().iter().map(|e| e["action"].as_str().unwrap()).collect();
    assert_eq!(actions, ["Submitted", "Overridden"]);

    let r = post(&app, "/results", "op-token", json!({ "patient_uid": "P-0001", "slno": 6, "value": "5", "unit": "mEq/L", "operator_id": "op2" })).await;
    assert_eq!(r.status, StatusCode::FORBIDDEN);
}

#[tokio::test]
async fn report_build_sign_and_render() {
    let (app, _) = seeded().await;
    post(&app, "/results", "op-token", result_body(1, "100", "mg/dl")).await;
    let id = post(&app, "/results", "op-token", result_body(6, "6.2", "mEq/L")).await.json()["entry_id"]
        .as_str()
        .unwrap()
        .to_string();

    let r = post(&app, "/reports", "op-token", json!({ "patient_uid": "P-0001" })).await;
    assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
    assert_eq!(r.json()["report_id"], "R1");

    let r = call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await;
    assert_eq!(r.status, StatusCode::CONFLICT);
    assert_eq!(r.error(), "UnresolvedViolations");

    post(&app, &format!("/results/{id}/override"), "sup-token", json!({ "reason": "repeat confirmed" })).await;
    let r = call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await;
    assert_eq!(r.error(), "UnverifiedCatalogEntries");
    assert!(r.json()["detail"].as_str().unwrap().contains("[1, 6]"));

    verify_all(&app).await;
    let r = call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());
    assert_eq!(r.json()["status"]["state"], "SignedOff");
    let r = call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await;
    assert_eq!(r.error(), "AlreadySignedOff");

    let text = get(&app, "/reports/R1?format=text", "op-token").await.text();
    let flagged: Vec<&str> = text.lines().filter(|l| l.split_whitespace().any(|c| c == "UL")).collect();
    assert_eq!(flagged.len(), 1, "{text}");
    let cells: Vec<&str> = flagged[0].split_whitespace().collect();
    assert_eq!(&cells[..6], ["SerumPotassium", "6.2", "mEq/L", "3.8-5.6", "mEq/L", "UL"]);

    let structured = get(&app, "/reports/R1?format=structured", "op-token").await;
    let report = cdr_core::report::from_structured(&structured.body).unwrap();
    assert!(report.is_signed_off());
    assert_eq!(get(&app, "/reports/R1?format=pdf", "op-token").await.status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(&app, "/reports/R7", "op-token").await.error(), "UnknownReport");
}

#[tokio::test]
async fn operators_cannot_override_reject_or_sign() {
    let (app, _) = seeded().await;
    let id = post(&app, "/results", "op-token", result_body(6, "6.2", "mEq/L")).await.json()["entry_id"]
        .as_str()
        .unwrap()
        .to_string();
    post(&app, "/reports", "op-token", json!({ "patient_uid": "P-0001" })).await;
    for token in ["op-token", "op2-token"] {
        let r = post(&app, &format!("/results/{id}/override"), token, json!({ "reason": "ok" })).await;
        assert_eq!(r.status, StatusCode::FORBIDDEN);
        let r = post(&app, &format!("/results/{id}/reject"), token, json!({ "reason": "ok" })).await;
        assert_eq!(r.status, StatusCode::FORBIDDEN);
        let r = call(&app, "POST", "/reports/R1/signoff", Some(token), None).await;
        assert_eq!(r.status, StatusCode::FORBIDDEN);
        assert_eq!(r.error(), "Forbidden");
    }
    // Operators never reach the repository, so nothing moved.
    assert_eq!(get(&app, "/review/queue", "sup-token").await.json().as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn role_matrix_is_enforced() {
    let (app, _) = seeded().await;
    let forbidden = [
        ("op-token", "POST", "/catalog/import"),
        ("op-token", "POST", "/catalog/1/verify"),
        ("op-token", "GET", "/review/queue"),
        ("op-token", "GET", "/results/E1/audit"),
        ("sup-token", "POST", "/catalog/1/verify"),
        ("admin-token", "POST", "/catalog/1/verify"),
        ("admin-token", "POST", "/results"),
        ("dr-token", "POST", "/results"),
        ("dr-token", "POST", "/patients"),
        ("dr-token", "POST", "/reports"),
        ("admin-token", "POST", "/reports/R1/signoff"),
        ("dr-token", "POST", "/results/E1/override"),
    ];
    for (token, method, path) in forbidden {
        let r = call(&app, method, path, Some(token), Some(Body::from("{}"))).await;
        assert_eq!(r.status, StatusCode::FORBIDDEN, "{token} {method} {path}: {}", r.text());
    }
}

/// Every error family reachable over HTTP, with the status it must map to.
#[tokio::test]
async fn error_paths_map_to_statuses() {
    let (app, state) = seeded().await;
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    let mut seen = Vec::new();
    let mut expect = |r: Reply, status: StatusCode, code: &str| {
        assert_eq!((r.status, r.error()), (status, code.to_string()), "{}", r.text());
        seen.push(code.to_string());
    };

    let r = call(&app, "POST", "/catalog/import", Some("admin-token"), Some(Body::from("a,b\n1,2\n"))).await;
    expect(r, unprocessable, "MalformedFile");
    let body = Body::from(json!({ "range_text": "5-1 mg/dl" }).to_string());
    expect(call(&app, "PUT", "/catalog/1", Some("dr-token"), Some(body)).await, unprocessable, "MalformedRange");
    expect(call(&app, "POST", "/catalog/99/verify", Some("dr-token"), None).await, StatusCode::NOT_FOUND, "UnknownSlno");

    expect(post(&app, "/patients", "op-token", patient_body("!bad")).await, unprocessable, "MalformedUid");
    expect(post(&app, "/patients", "op-token", patient_body("P-0001")).await, StatusCode::CONFLICT, "DuplicateUid");
    let mut body = patient_body("P-0002");
    body["full_name"] = json!("  ");
    expect(post(&app, "/patients", "op-token", body).await, unprocessable, "MissingName");
    let mut body = patient_body("P-0002");
    body["dob"] = json!("2030-01-01");
    expect(post(&app, "/patients", "op-token", body).await, unprocessable, "FutureDob");
    let mut body = patient_body("P-0002");
    body["stated_age_years"] = json!(40);
    expect(post(&app, "/patients", "op-token", body).await, unprocessable, "AgeDobMismatch");

    expect(post(&app, "/results", "op-token", result_body(1, "abc", "mg/dl")).await, unprocessable, "NonNumericValue");
    expect(post(&app, "/results", "op-token", result_body(1, " ", "mg/dl")).await, unprocessable, "EmptyValue");
    expect(post(&app, "/results", "op-token", result_body(1, "5", "5mg")).await, unprocessable, "MalformedUnit");
    let mut body = result_body(1, "5", "mg/dl");
    body["patient_uid"] = json!("P-9999");
    expect(post(&app, "/results", "op-token", body).await, StatusCode::NOT_FOUND, "UnknownPatient");
    expect(post(&app, "/results", "op-token", result_body(99, "5", "")).await, StatusCode::NOT_FOUND, "UnknownSlno");

    let accepted = post(&app, "/results", "op-token", result_body(1, "100", "mg/dl")).await.json();
    let flagged = post(&app, "/results", "sup-token", result_body(6, "6.2", "mEq/L")).await.json();
    let accepted = accepted["entry_id"].as_str().unwrap();
    let flagged = flagged["entry_id"].as_str().unwrap();
    let reason = json!({ "reason": "checked" });
    expect(post(&app, "/results/E999/override", "sup-token", reason.clone()).await, StatusCode::NOT_FOUND, "UnknownEntry");
    expect(post(&app, "/results/nope/override", "sup-token", reason.clone()).await, StatusCode::NOT_FOUND, "UnknownEntry");
    expect(post(&app, &format!("/results/{accepted}/override"), "sup2-token", reason.clone()).await, StatusCode::CONFLICT, "NotFlagged");
    expect(post(&app, &format!("/results/{flagged}/override"), "sup2-token", json!({ "reason": "" })).await, unprocessable, "EmptyReason");
    expect(post(&app, &format!("/results/{flagged}/override"), "sup-token", reason.clone()).await, StatusCode::FORBIDDEN, "SelfOverride");

    post(&app, "/reports", "op-token", json!({ "patient_uid": "P-0001" })).await;
    expect(call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await, StatusCode::CONFLICT, "UnresolvedViolations");
    post(&app, &format!("/results/{flagged}/override"), "sup2-token", reason.clone()).await;
    expect(call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await, StatusCode::CONFLICT, "UnverifiedCatalogEntries");
    verify_all(&app).await;
    call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await;
    expect(call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await, StatusCode::CONFLICT, "AlreadySignedOff");
    expect(call(&app, "POST", "/reports/R9/signoff", Some("sup-token"), None).await, StatusCode::NOT_FOUND, "UnknownReport");
    expect(post(&app, "/reports", "op-token", json!({ "patient_uid": "P-7" })).await, StatusCode::NOT_FOUND, "UnknownPatient");

    let r = call(&app, "POST", "/results", Some("op-token"), Some(Body::from("{not json"))).await;
    expect(r, unprocessable, "MalformedRequest");
    expect(post(&app, "/results", "op-token", json!({ "slno": 1 })).await, unprocessable, "MalformedRequest");

    let entry = post(&app, "/results", "op-token", result_body(2, "100", "mg/dl")).await.json();
    let id: EntryId = entry["entry_id"].as_str().unwrap().parse().unwrap();
    state.repo.write().tamper_entry(id, |e| e.value.numeric = Some("1000".parse().unwrap()));
    let r = post(&app, "/reports", "op-token", json!({ "patient_uid": "P-0001" })).await;
    expect(r, StatusCode::INTERNAL_SERVER_ERROR, "StoreInconsistent");

    seen.sort();
    seen.dedup();
    assert_eq!(seen.len(), 22, "{seen:?}");
}

/// The same script driven through HTTP and through direct repository calls
/// must land on byte-identical states.
#[tokio::test]
async fn api_and_direct_calls_agree() {
    let (app, state) = fresh();
    let csv = Body::from(BUNDLED_CATALOG_CSV);
    call(&app, "POST", "/catalog/import", Some("admin-token"), Some(csv)).await;
    post(&app, "/patients", "op-token", patient_body("P-0001")).await;
    for slno in [1, 6] {
        call(&app, "POST", &format!("/catalog/{slno}/verify"), Some("dr-token"), None).await;
    }
    post(&app, "/results", "op-token", result_body(1, "100", "mg/dl")).await;
    post(&app, "/results", "op-token", result_body(6, "6.2", "mEq/L")).await;
    post(&app, "/results", "op-token", result_body(6, "9.9", "mEq/L")).await;
    post(&app, "/results/E2/override", "sup-token", json!({ "reason": "repeat confirmed" })).await;
    post(&app, "/results/E3/reject", "sup-token", json!({ "reason": "contaminated" })).await;
    post(&app, "/reports", "op-token", json!({ "patient_uid": "P-0001" })).await;
    let r = call(&app, "POST", "/reports/R1/signoff", Some("sup-token"), None).await;
    assert_eq!(r.status, StatusCode::OK, "{}", r.text());

    let mut direct = Repository::in_memory(clock());
    direct.import_catalog(BUNDLED_CATALOG_CSV, "admin").unwrap();
    direct
        .register_patient(
            NewPatient {
                patient_uid: "P-0001".into(),
                full_name: "Asha Smith".into(),
                dob: NaiveDate::from_ymd_opt(1990, 3, 3).unwrap(),
                stated_age_years: 34,
                contact: None,
            },
            NaiveDate::from_ymd_opt(2024, 5, 1),
            "op1",
        )
        .unwrap();
    for slno in [1, 6] {
        direct.verify_entry(slno, "dr1").unwrap();
    }
    for (slno, value, unit) in [(1, "100", "mg/dl"), (6, "6.2", "mEq/L"), (6, "9.9", "mEq/L")] {
        let req = SubmitResult { patient_uid: "P-0001".into(), slno, value: value.into(), unit: Some(unit.into()) };
        direct.submit_result(req, "op1").unwrap();
    }
    direct.apply_override(EntryId(2), "sup1", "repeat confirmed").unwrap();
    direct.reject_entry(EntryId(3), "sup1", "contaminated").unwrap();
    let report = direct.build_report("P-0001", None, None).unwrap();
    direct.sign_off(report.report_id, "sup1").unwrap();

    assert_eq!(state.repo.read().state_bytes(), direct.state_bytes());
    assert_eq!(state.repo.read().events(), direct.events());
}

#[tokio::test]
async fn patient_search() {
    let (app, _) = seeded().await;
    let hits = get(&app, "/patients?query=asha", "op-token").await.json();
    assert_eq!(hits.as_array().unwrap().len(), 1);
    assert_eq!(hits[0]["patient_uid"], "P-0001");
    assert_eq!(hits[0]["stated_age_years"], 34);
    assert!(get(&app, "/patients?query=zed", "op-token").await.json().as_array().unwrap().is_empty());
}

#[test]
fn missing_store_path_is_config_invalid() {
    assert!(matches!(Config::from_toml("port = 8080"), Err(ServeError::ConfigInvalid(_))));
}

#[tokio::test]
async fn taken_port_is_reported() {
    let holder = std::net::TcpListener::bind("0.0.0.0:0").unwrap();
    let port = holder.local_addr().unwrap().port();
    match bind(port).await {
        Err(ServeError::PortUnavailable { port: p, .. }) => assert_eq!(p, port),
        other => panic!("expected PortUnavailable, got {other:?}", other = other.map(|_| ())),
    }
}

#[tokio::test]
async fn serves_over_tcp_and_reopens_store() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!(
        "port = 0\nstore_path = {:?}\n[tokens.t]\nrole = \"Admin\"\nactor_id = \"admin\"\n",
        dir.path().join("store")
    );
    let config = Config::from_toml(&toml).unwrap();
    let state = open_state(&config, clock()).unwrap();
    let listener = bind(0).await.unwrap();
    let addr = listener.local_addr().unwrap();
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_with_shutdown(listener, state, async {
        let _ = stopped.await;
    }));

    let raw = |request: String| async move {
        let mut stream = tokio::net::TcpStream::connect(("127.0.0.1", addr.port())).await.unwrap();
        stream.write_all(request.as_bytes()).await.unwrap();
        let mut buf = String::new();
        stream.read_to_string(&mut buf).await.unwrap();
        buf
    };
    let health = raw("GET /healthz HTTP/1.1\r\nhost: x\r\nconnection: close\r\n\r\n".into()).await;
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"ok\""));
    let import = raw(format!(
        "POST /catalog/import HTTP/1.1\r\nhost: x\r\nauthorization: Bearer t\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
        BUNDLED_CATALOG_CSV.len(),
        BUNDLED_CATALOG_CSV
    ))
    .await;
    assert!(import.starts_with("HTTP/1.1 200"), "{import}");

    stop.send(()).unwrap();
    server.await.unwrap().unwrap();

    let reopened = open_state(&config, clock()).unwrap();
    assert_eq!(reopened.repo.read().catalog().current().len(), 28);
}
