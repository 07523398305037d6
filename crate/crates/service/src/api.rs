//! HTTP routes. Masks travel as RLE JSON, volumes as raw NIfTI bodies.

use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use slicetrack_core::io::window_to_u8;
use slicetrack_engine::backend::BackendInfo;

use crate::error::ApiError;
use crate::jobs::{JobMetrics, JobRequest, JobView, MaskSet, Service};
use crate::store::VolumeEntry;

type ApiResult<T> = Result<T, ApiError>;

pub fn router(svc: Arc<Service>) -> Router {
    Router::new()
        .route("/volumes", post(upload_volume).get(list_volumes))
        .route("/volumes/{id}/meta", get(volume_meta))
        .route("/volumes/{id}/slices/{file}", get(slice_png))
        .route("/volumes/{id}/ground-truth", put(put_ground_truth))
        .route("/jobs", post(submit_job))
        .route("/jobs/{id}", get(job_status))
        .route("/jobs/{id}/mask", get(job_mask))
        .route("/jobs/{id}/trace", get(job_trace))
        .route("/jobs/{id}/mesh.obj", get(job_mesh))
        .route("/jobs/{id}/metrics", get(job_metrics))
        .route("/backends", get(backends))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(DefaultBodyLimit::max(1 << 30))
        .with_state(svc)
}

pub async fn serve(svc: Arc<Service>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

#[derive(Debug, Serialize)]
struct VolumeMeta {
    volume_id: String,
    dims: [usize; 3],
    /// `[z, y, x]` in millimeters.
    spacing: [f64; 3],
    has_ground_truth: bool,
}

impl From<&VolumeEntry> for VolumeMeta {
    fn from(e: &VolumeEntry) -> Self {
        let s = e.volume.spacing();
        VolumeMeta {
            volume_id: e.id.clone(),
            dims: e.volume.dims().as_array(),
            spacing: [s.z, s.y, s.x],
            has_ground_truth: e.ground_truth.is_some(),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn upload_volume(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let entry = blocking(move || svc.volumes.add(&body)).await?;
    Ok((StatusCode::CREATED, Json(VolumeMeta::from(entry.as_ref()))))
}

async fn list_volumes(State(svc): State<Arc<Service>>) -> Json<Vec<VolumeMeta>> {
    Json(svc.volumes.list().iter().map(|e| VolumeMeta::from(e.as_ref())).collect())
}

async fn volume_meta(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<VolumeMeta>> {
    Ok(Json(VolumeMeta::from(svc.volumes.get(&id)?.as_ref())))
}

#[derive(Debug, Deserialize)]
struct WindowQuery {
    #[serde(default = "default_lo")]
    p_lo: f64,
    #[serde(default = "default_hi")]
    p_hi: f64,
}

fn default_lo() -> f64 {
    1.0
}

fn default_hi() -> f64 {
    99.0
}

async fn slice_png(
    State(svc): State<Arc<Service>>,
    Path((id, file)): Path<(String, String)>,
    query: Result<Query<WindowQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let entry = svc.volumes.get(&id)?;
    let z: usize = file
        .strip_suffix(".png")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| ApiError::not_found(format!("expected <z>.png, got {file:?}")))?;
    let d = entry.volume.dims();
    if z >= d.d {
        return Err(ApiError::invalid("z", format!("slice index {z} out of range for {} slices", d.d)));
    }
    let Query(w) = query.map_err(|e| ApiError::invalid("p_lo", e.body_text()))?;
    if !((0.0..100.0).contains(&w.p_lo) && w.p_lo < w.p_hi && w.p_hi <= 100.0) {
        return Err(ApiError::invalid("p_lo", "window needs 0 <= p_lo < p_hi <= 100"));
    }
    let png = blocking(move || {
        let bytes = window_to_u8(entry.volume.slice(z), w.p_lo, w.p_hi);
        let img = image::GrayImage::from_raw(d.w as u32, d.h as u32, bytes)
            .ok_or_else(|| ApiError::internal("slice buffer size"))?;
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(out.into_inner())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn put_ground_truth(
    State(svc): State<Arc<Service>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<VolumeMeta>> {
    let entry = blocking(move || svc.volumes.set_ground_truth(&id, &body)).await?;
    Ok(Json(VolumeMeta::from(entry.as_ref())))
}

#[derive(Debug, Serialize)]
struct Submitted {
    job_id: String,
}

async fn submit_job(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: JobRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed job request: {e}")))?;
    let job_id = svc.submit(req)?;
    Ok((StatusCode::ACCEPTED, Json(Submitted { job_id })))
}

async fn job_status(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<JobView>> {
    Ok(Json(svc.view(&id)?))
}

async fn job_mask(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<MaskSet>> {
    let r = svc.result(&id)?;
    Ok(Json(MaskSet::from_mask(&r.mask)))
}

async fn job_trace(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = svc.result(&id)?;
    Ok(Json(&r.trace).into_response())
}

async fn job_mesh(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Response> {
    let r = svc.result(&id)?;
    let obj = blocking(move || Ok(r.mesh_obj())).await?;
    Ok(([(header::CONTENT_TYPE, "model/obj")], obj.as_str().to_owned()).into_response())
}

async fn job_metrics(State(svc): State<Arc<Service>>, Path(id): Path<String>) -> ApiResult<Json<JobMetrics>> {
    Ok(Json(blocking(move || svc.metrics(&id)).await?))
}

async fn backends(State(svc): State<Arc<Service>>) -> Json<Vec<BackendInfo>> {
    Json(svc.registry.backends())
}
