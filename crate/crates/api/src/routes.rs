use axum::body::Bytes;
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use cdr_core::access::permits;
use cdr_core::audit::AuditEvent;
use cdr_core::catalog::{CatalogEntry, ImportReport, Verification};
use cdr_core::results::ReportId;
use cdr_core::{
    EntryId, Error, NewPatient, Operation, Patient, RangeSpec, Report, ReportFormat, ResultEntry, Role,
    SubmitResult,
};

use crate::error::ApiError;
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;

/// The authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Principal {
    pub role: Role,
    pub actor_id: String,
}

impl Principal {
    fn require(&self, operation: Operation) -> ApiResult<()> {
        if permits(self.role, operation) {
            Ok(())
        } else {
            Err(ApiError::Forbidden(operation))
        }
    }
}

impl FromRequestParts<AppState> for Principal {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .ok_or(ApiError::Unauthorized)?;
        state.tokens.get(token).cloned().ok_or(ApiError::Unauthorized)
    }
}

/// Raw JSON body. Handlers parse it after the role check, so a forbidden
/// caller gets 403 whatever it sent.
pub struct JsonBody(Bytes);

impl<S: Send + Sync> FromRequest<S> for JsonBody {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Bytes::from_request(req, state)
            .await
            .map(JsonBody)
            .map_err(|e| ApiError::MalformedRequest(e.body_text()))
    }
}

impl JsonBody {
    fn parse<T: DeserializeOwned>(&self) -> ApiResult<T> {
        serde_json::from_slice(&self.0).map_err(|e| ApiError::MalformedRequest(e.to_string()))
    }
}

fn parse_slno(raw: &str) -> ApiResult<u32> {
    raw.parse()
        .map_err(|_| ApiError::MalformedRequest(format!("{raw:?} is not a serial number")))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/catalog", get(list_catalog))
        .route("/catalog/import", post(import_catalog))
        .route("/catalog/{slno}", axum::routing::put(edit_range))
        .route("/catalog/{slno}/range", get(range_hint))
        .route("/catalog/{slno}/verify", post(verify_entry))
        .route("/patients", post(register_patient).get(find_patients))
        .route("/results", post(submit_result))
        .route("/results/{id}/override", post(override_result))
        .route("/results/{id}/reject", post(reject_result))
        .route("/results/{id}/audit", get(audit_trail))
        .route("/review/queue", get(review_queue))
        .route("/reports", post(build_report))
        .route("/reports/{id}", get(get_report))
        .route("/reports/{id}/signoff", post(sign_off))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

// ----------------------------------------------------------------------
// Catalog
// ----------------------------------------------------------------------

#[derive(Deserialize)]
struct CatalogQuery {
    filter: Option<String>,
}

async fn list_catalog(
    State(state): State<AppState>,
    principal: Principal,
    Query(query): Query<CatalogQuery>,
) -> ApiResult<Json<Vec<CatalogEntry>>> {
    principal.require(Operation::ReadCatalog)?;
    let repo = state.repo.read();
    let entries = repo
        .catalog()
        .current()
        .list_tests(query.filter.as_deref())
        .into_iter()
        .cloned()
        .collect();
    Ok(Json(entries))
}

async fn import_catalog(
    State(state): State<AppState>,
    principal: Principal,
    body: String,
) -> ApiResult<Json<ImportReport>> {
    principal.require(Operation::ImportCatalog)?;
    let report = state.repo.write().import_catalog(&body, &principal.actor_id)?;
    Ok(Json(report))
}

/// Payload behind the entry screen's range hint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RangeHint {
    pub slno: u32,
    pub test_name: String,
    pub display_text: String,
    pub spec: RangeSpec,
    pub verification: Verification,
    pub review_note: Option<String>,
}

async fn range_hint(
    State(state): State<AppState>,
    principal: Principal,
    Path(slno): Path<String>,
) -> ApiResult<Json<RangeHint>> {
    principal.require(Operation::ReadCatalog)?;
    let slno = parse_slno(&slno)?;
    let repo = state.repo.read();
    let entry = repo.catalog().current().get(slno)?;
    Ok(Json(RangeHint {
        slno,
        test_name: entry.test_name.clone(),
        display_text: entry.range_text.clone(),
        spec: entry.range.clone(),
        verification: entry.verification.clone(),
        review_note: entry.review_note.clone(),
    }))
}

async fn verify_entry(
    State(state): State<AppState>,
    principal: Principal,
    Path(slno): Path<String>,
) -> ApiResult<Json<CatalogEntry>> {
    principal.require(Operation::VerifyCatalog)?;
    let slno = parse_slno(&slno)?;
    let entry = state.repo.write().verify_entry(slno, &principal.actor_id)?;
    Ok(Json(entry))
}

#[derive(Deserialize)]
struct EditRange {
    range_text: String,
}

async fn edit_range(
    State(state): State<AppState>,
    principal: Principal,
    Path(slno): Path<String>,
    body: JsonBody,
) -> ApiResult<Json<CatalogEntry>> {
    principal.require(Operation::EditCatalog)?;
    let body: EditRange = body.parse()?;
    let slno = parse_slno(&slno)?;
    let entry = state.repo.write().edit_range(slno, &body.range_text, &principal.actor_id)?;
    Ok(Json(entry))
}

// ----------------------------------------------------------------------
// Patients
// ----------------------------------------------------------------------

#[derive(Deserialize)]
struct RegisterPatient {
    #[serde(flatten)]
    patient: NewPatient,
    #[serde(default)]
    as_of: Option<NaiveDate>,
}

async fn register_patient(
    State(state): State<AppState>,
    principal: Principal,
    body: JsonBody,
) -> ApiResult<(StatusCode, Json<Patient>)> {
    principal.require(Operation::RegisterPatient)?;
    let body: RegisterPatient = body.parse()?;
    let patient = state
        .repo
        .write()
        .register_patient(body.patient, body.as_of, &principal.actor_id)?;
    Ok((StatusCode::CREATED, Json(patient)))
}

#[derive(Deserialize)]
struct PatientQuery {
    #[serde(default)]
    query: String,
}

async fn find_patients(
    State(state): State<AppState>,
    principal: Principal,
    Query(query): Query<PatientQuery>,
) -> ApiResult<Json<Vec<Patient>>> {
    principal.require(Operation::ReadPatients)?;
    let repo = state.repo.read();
    Ok(Json(repo.find_patient(&query.query).into_iter().cloned().collect()))
}

// ----------------------------------------------------------------------
// Results and review
// ----------------------------------------------------------------------

/// Body of `POST /results`; the same shape as one line of an ingest file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultSubmission {
    pub patient_uid: String,
    pub slno: u32,
    pub value: String,
    #[serde(default)]
    pub unit: Option<String>,
    /// Must match the caller when present.
    #[serde(default)]
    pub operator_id: Option<String>,
}

async fn submit_result(
    State(state): State<AppState>,
    principal: Principal,
    body: JsonBody,
) -> ApiResult<(StatusCode, Json<ResultEntry>)> {
    principal.require(Operation::SubmitResult)?;
    let body: ResultSubmission = body.parse()?;
    if body.operator_id.as_ref().is_some_and(|op| *op != principal.actor_id) {
        return Err(ApiError::Forbidden(Operation::SubmitResult));
    }
    let request = SubmitResult {
        patient_uid: body.patient_uid,
        slno: body.slno,
        value: body.value,
        unit: body.unit,
    };
    let entry = state.repo.write().submit_result(request, &principal.actor_id)?;
    Ok((StatusCode::CREATED, Json(entry)))
}

#[derive(Deserialize)]
struct Decision {
    #[serde(default)]
    reason: String,
}

fn entry_id(raw: &str) -> ApiResult<EntryId> {
    Ok(raw.parse::<EntryId>()?)
}

async fn override_result(
    State(state): State<AppState>,
    principal: Principal,
    Path(id): Path<String>,
    body: JsonBody,
) -> ApiResult<Json<ResultEntry>> {
    principal.require(Operation::OverrideResult)?;
    let body: Decision = body.parse()?;
    let id = entry_id(&id)?;
    let entry = state.repo.write().apply_override(id, &principal.actor_id, &body.reason)?;
    Ok(Json(entry))
}

async fn reject_result(
    State(state): State<AppState>,
    principal: Principal,
    Path(id): Path<String>,
    body: JsonBody,
) -> ApiResult<Json<ResultEntry>> {
    principal.require(Operation::RejectResult)?;
    let body: Decision = body.parse()?;
    let id = entry_id(&id)?;
    let entry = state.repo.write().reject_entry(id, &principal.actor_id, &body.reason)?;
    Ok(Json(entry))
}

async fn audit_trail(
    State(state): State<AppState>,
    principal: Principal,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<AuditEvent>>> {
    principal.require(Operation::ReadAudit)?;
    let id = entry_id(&id)?;
    let repo = state.repo.read();
    Ok(Json(repo.audit_trail(id)?.into_iter().cloned().collect()))
}

async fn review_queue(State(state): State<AppState>, principal: Principal) -> ApiResult<Json<Vec<ResultEntry>>> {
    principal.require(Operation::ReadReviewQueue)?;
    let repo = state.repo.read();
    Ok(Json(repo.review_queue().into_iter().cloned().collect()))
}

// ----------------------------------------------------------------------
// Reports
// ----------------------------------------------------------------------

#[derive(Deserialize)]
struct BuildReport {
    patient_uid: String,
    #[serde(default)]
    since: Option<DateTime<Utc>>,
    #[serde(default)]
    until: Option<DateTime<Utc>>,
}

fn report_id(raw: &str) -> ApiResult<ReportId> {
    Ok(raw.parse::<ReportId>()?)
}

async fn build_report(
    State(state): State<AppState>,
    principal: Principal,
    body: JsonBody,
) -> ApiResult<(StatusCode, Json<Report>)> {
    principal.require(Operation::BuildReport)?;
    let body: BuildReport = body.parse()?;
    let report = state.repo.write().build_report(&body.patient_uid, body.since, body.until)?;
    Ok((StatusCode::CREATED, Json(report)))
}

async fn sign_off(
    State(state): State<AppState>,
    principal: Principal,
    Path(id): Path<String>,
) -> ApiResult<Json<Report>> {
    principal.require(Operation::SignOffReport)?;
    let id = report_id(&id)?;
    let report = state.repo.write().sign_off(id, &principal.actor_id)?;
    Ok(Json(report))
}

#[derive(Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

async fn get_report(
    State(state): State<AppState>,
    principal: Principal,
    Path(id): Path<String>,
    Query(query): Query<FormatQuery>,
) -> ApiResult<Response> {
    principal.require(Operation::ReadReport)?;
    let id = report_id(&id)?;
    let format = match query.format.as_deref() {
        None => ReportFormat::Text,
        Some(raw) => raw
            .parse::<ReportFormat>()
            .map_err(|e: Error| ApiError::MalformedRequest(e.to_string()))?,
    };
    let bytes = state.repo.read().render_report(id, format)?;
    let content_type = match format {
        ReportFormat::Text => "text/plain; charset=utf-8",
        ReportFormat::Structured => "application/json",
    };
    Ok(([(CONTENT_TYPE, content_type)], bytes).into_response())
}
