//! HTTP service over one immutable session (model + dataset).

use std::collections::HashMap;
use std::io::Cursor;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use miscause::classifier::{load_model, predict, ClassificationRecord, TrainedModel};
use miscause::dataset::{
    load_dataset_dir, normalize_image, DatasetBundle, ExportImage, LabeledImage, Mask, SIDE,
};
use miscause::intervention::{
    do_intervention, ErasureSpace, InterventionResult, InterventionSpec, DEFAULT_TOP_P,
};
use miscause::netgraph::{build_network, in_degrees, Edge};
use miscause::saliency::{
    gradient_saliency, occlusion_saliency, OcclusionConfig, SaliencyMap, SaliencySource,
};
use miscause::stats::{rate_table, tally, ConfusionCounts, RateTable};

pub const PAGE_SIZE: usize = 50;

/// Model, data and everything derived from them at load time. Never
/// mutated afterwards.
pub struct Session {
    pub model: TrainedModel,
    pub data: DatasetBundle,
    pub predictions: Vec<ClassificationRecord>,
    pub counts: ConfusionCounts,
    pub rates: RateTable,
    pub theta: f64,
    index: HashMap<String, (bool, usize)>,
}

impl Session {
    pub fn new(model: TrainedModel, data: DatasetBundle, theta: f64) -> miscause::Result<Self> {
        let c = data.num_classes();
        if model.params.num_classes != c {
            return Err(miscause::Error::MixedClasses {
                first: c,
                other: model.params.num_classes,
            });
        }
        let predictions = data
            .test
            .iter()
            .map(|img| {
                let p = predict(&model.params, &normalize_image(&img.image, &model.stats)?)?;
                Ok(ClassificationRecord::from_prediction(
                    &img.id,
                    img.label,
                    p,
                    &model.model_id,
                ))
            })
            .collect::<miscause::Result<Vec<_>>>()?;
        let counts = tally(&predictions, c)?;
        let rates = rate_table(&counts);
        let mut index = HashMap::new();
        for (i, img) in data.train.iter().enumerate() {
            index.insert(img.id.clone(), (false, i));
        }
        for (i, img) in data.test.iter().enumerate() {
            index.insert(img.id.clone(), (true, i));
        }
        Ok(Self {
            model,
            data,
            predictions,
            counts,
            rates,
            theta,
            index,
        })
    }

    pub fn load(model: &Path, data: &Path, theta: f64) -> miscause::Result<Self> {
        let model = load_model(model)?;
        let data = load_dataset_dir(data, None)?;
        Self::new(model, data, theta)
    }

    pub fn image(&self, id: &str) -> Option<&LabeledImage> {
        self.index.get(id).map(|&(test, i)| {
            if test {
                &self.data.test[i]
            } else {
                &self.data.train[i]
            }
        })
    }

    fn record(&self, id: &str) -> Option<(bool, ClassificationRecord)> {
        let &(test, i) = self.index.get(id)?;
        if test {
            return Some((true, self.predictions[i].clone()));
        }
        let img = &self.data.train[i];
        let input = normalize_image(&img.image, &self.model.stats).ok()?;
        let p = predict(&self.model.params, &input).ok()?;
        Some((
            false,
            ClassificationRecord::from_prediction(id, img.label, p, &self.model.model_id),
        ))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: format!("unknown image id {id:?}"),
        }
    }
}

impl From<miscause::Error> for ApiError {
    fn from(e: miscause::Error) -> Self {
        match e {
            miscause::Error::UnknownImage(id) => Self::not_found(&id),
            miscause::Error::OutOfRange(_) | miscause::Error::Config(_) => {
                Self::bad_request(e.to_string())
            }
            other => Self {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: other.to_string(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message });
        (self.status, json_response(&body)).into_response()
    }
}

/// The exact bytes both the CLI and the service emit for a value.
pub fn to_json(value: &impl Serialize) -> Vec<u8> {
    serde_json::to_vec(value).expect("response types serialize")
}

fn json_response(value: &impl Serialize) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], to_json(value)).into_response()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageListItem {
    pub id: String,
    pub label: usize,
    pub predicted_label: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageList {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<ImageListItem>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetail {
    pub id: String,
    pub split: String,
    pub label: usize,
    pub predicted_label: usize,
    pub scores: Vec<f64>,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyResponse {
    pub id: String,
    pub method: SaliencySource,
    pub target_class: usize,
    pub grid: Vec<Vec<f64>>,
}

impl SaliencyResponse {
    pub fn new(id: &str, map: &SaliencyMap) -> Self {
        Self {
            id: id.to_string(),
            method: map.source,
            target_class: map.target_class,
            grid: map.to_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterveneRequest {
    pub id: String,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_box")]
    pub dx: usize,
    #[serde(default = "default_box")]
    pub dy: usize,
    #[serde(default)]
    pub spare_mask: Option<Mask>,
    /// Spare the ground-truth object region when the dataset records one.
    #[serde(default)]
    pub truth_mask: bool,
    #[serde(default)]
    pub space: ErasureSpace,
}

fn default_p() -> f64 {
    DEFAULT_TOP_P
}

fn default_box() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsResponse {
    pub model_id: String,
    pub class_names: Vec<String>,
    pub counts: ConfusionCounts,
    pub u: Vec<f64>,
    pub v: Vec<Vec<f64>>,
    pub theta: f64,
    pub edges: Vec<Edge>,
    pub in_degrees: Vec<f64>,
}

/// Lists the test split, page by page.
pub fn list_images(s: &Session, page: usize) -> ImageList {
    let items = s
        .predictions
        .iter()
        .skip(page * PAGE_SIZE)
        .take(PAGE_SIZE)
        .map(|r| ImageListItem {
            id: r.image_id.clone(),
            label: r.true_label,
            predicted_label: r.predicted_label,
            correct: r.is_correct(),
        })
        .collect();
    ImageList {
        page,
        page_size: PAGE_SIZE,
        total: s.predictions.len(),
        items,
    }
}

pub fn png_bytes(img: &LabeledImage) -> Vec<u8> {
    let rgb = ExportImage::Raw(&img.image).to_rgb_bytes();
    let buf = image::RgbImage::from_raw(SIDE as u32, SIDE as u32, rgb).expect("32x32 RGB buffer");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    out.into_inner()
}

pub fn image_detail(s: &Session, id: &str) -> Result<ImageDetail, ApiError> {
    let img = s.image(id).ok_or_else(|| ApiError::not_found(id))?;
    let (test, rec) = s.record(id).ok_or_else(|| ApiError::not_found(id))?;
    Ok(ImageDetail {
        id: id.to_string(),
        split: if test { "test" } else { "train" }.into(),
        label: img.label,
        predicted_label: rec.predicted_label,
        scores: rec.scores.as_slice().to_vec(),
        png_base64: base64::engine::general_purpose::STANDARD.encode(png_bytes(img)),
    })
}

pub fn saliency(
    s: &Session,
    id: &str,
    method: SaliencySource,
) -> Result<SaliencyResponse, ApiError> {
    let img = s.image(id).ok_or_else(|| ApiError::not_found(id))?;
    let m = &s.model;
    let map = match method {
        SaliencySource::Gradient => {
            gradient_saliency(&m.params, &normalize_image(&img.image, &m.stats)?)?
        }
        SaliencySource::Occlusion => occlusion_saliency(
            |x| miscause::classifier::forward(&m.params, x),
            &img.image,
            &m.stats,
            &OcclusionConfig::default(),
        )?,
    };
    Ok(SaliencyResponse::new(id, &map))
}

pub fn intervene(s: &Session, req: &InterveneRequest) -> Result<InterventionResult, ApiError> {
    let img = s
        .image(&req.id)
        .ok_or_else(|| ApiError::not_found(&req.id))?;
    let mask = match (&req.spare_mask, req.truth_mask) {
        (Some(_), true) => {
            return Err(ApiError::bad_request(
                "give either spare_mask or truth_mask, not both",
            ))
        }
        (Some(m), false) => Some(m.clone()),
        (None, true) => Some(s.data.spare_mask(&req.id).ok_or_else(|| {
            ApiError::bad_request(format!("no ground-truth mask for {:?}", req.id))
        })?),
        (None, false) => None,
    };
    let spec = InterventionSpec {
        top_p: req.p,
        dx: req.dx,
        dy: req.dy,
        spare_mask: mask,
        space: req.space,
    };
    Ok(do_intervention(
        &s.model.params,
        &s.model.stats,
        img,
        &spec,
        &s.model.model_id,
    )?)
}

pub fn stats(s: &Session) -> miscause::Result<StatsResponse> {
    let net = build_network(&s.rates, s.theta, &s.model.model_id)?;
    Ok(StatsResponse {
        model_id: s.model.model_id.clone(),
        class_names: s.data.class_names.clone(),
        counts: s.counts.clone(),
        u: s.rates.u.values.clone(),
        v: s.rates.v.matrix.clone(),
        theta: s.theta,
        in_degrees: in_degrees(&net),
        edges: net.edges,
    })
}

type Shared = Arc<Session>;

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?
}

async fn images_handler(
    State(s): State<Shared>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let page = match q.get("page").map(|p| p.parse::<usize>()) {
        None => 0,
        Some(Ok(p)) => p,
        Some(Err(_)) => {
            return ApiError::bad_request("page must be a nonnegative integer").into_response()
        }
    };
    json_response(&list_images(&s, page))
}

async fn image_handler(State(s): State<Shared>, UrlPath(id): UrlPath<String>) -> Response {
    match blocking(move || image_detail(&s, &id)).await {
        Ok(d) => json_response(&d),
        Err(e) => e.into_response(),
    }
}

async fn saliency_handler(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HashMap<String, String>>,
) -> Response {
    let method = match q.get("method").map(|m| m.parse::<SaliencySource>()) {
        None => SaliencySource::Gradient,
        Some(Ok(m)) => m,
        Some(Err(e)) => return ApiError::bad_request(e.to_string()).into_response(),
    };
    match blocking(move || saliency(&s, &id, method)).await {
        Ok(r) => json_response(&r),
        Err(e) => e.into_response(),
    }
}

async fn intervene_handler(State(s): State<Shared>, body: Bytes) -> Response {
    let req: InterveneRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ApiError::bad_request(format!("malformed request: {e}")).into_response(),
    };
    match blocking(move || intervene(&s, &req)).await {
        Ok(r) => json_response(&r),
        Err(e) => e.into_response(),
    }
}

async fn stats_handler(State(s): State<Shared>) -> Response {
    match stats(&s) {
        Ok(r) => json_response(&r),
        Err(e) => ApiError::from(e).into_response(),
    }
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route("/api/images", get(images_handler))
        .route("/api/image/{id}", get(image_handler))
        .route("/api/saliency/{id}", get(saliency_handler))
        .route("/api/intervene", post(intervene_handler))
        .route("/api/stats", get(stats_handler))
        .with_state(session)
}

pub async fn serve(session: Session, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(session))).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_defaults() {
        let r: InterveneRequest = serde_json::from_str(r#"{"id":"x"}"#).unwrap();
        assert_eq!((r.p, r.dx, r.dy), (0.05, 7, 7));
        assert!(!r.truth_mask);
        assert!(serde_json::from_str::<InterveneRequest>(r#"{"id":"x","q":1}"#).is_err());
    }

    #[test]
    fn error_body_is_json() {
        let resp = ApiError::bad_request("nope").into_response();
        assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
        assert_eq!(resp.headers()[header::CONTENT_TYPE], "application/json");
    }
}
