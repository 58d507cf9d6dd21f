//! Read-only HTTP service over a trained field, its tree and the point cloud.
//!
//! | route              | body                                      | response                          |
//! |--------------------|-------------------------------------------|-----------------------------------|
//! | `GET /points`      |                                           | `{count, positions, colors}`      |
//! | `GET /tree`        |                                           | tree JSON as written by decompose |
//! | `POST /select`     | `{click: [x,y,z], scale, threshold?}`     | sorted point indices              |
//! | `POST /multiscale` | `{click: [x,y,z], threshold?}`            | `[{scale, indices}]`              |
//! | `GET /node/{id}`   |                                           | sorted point indices              |
//!
//! `positions` is base64 of little-endian f32 `x y z` triplets and `colors`
//! base64 of u8 `r g b` triplets, one colour per tree root.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use groupfield::decompose::{DecomposeParams, Selector, DEFAULT_THRESHOLD};
use groupfield::field::{AffinityField, EncodedRays};
use groupfield::tree::GroupTree;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub struct ServiceState {
    model: AffinityField<f32>,
    points: Vec<[f64; 3]>,
    encoded: Vec<EncodedRays<f32>>,
    tree: GroupTree,
    tree_json: Bytes,
    points_json: Bytes,
    s_max: f64,
    scale_step: f64,
}

#[derive(Serialize)]
struct PointsPayload {
    count: usize,
    encoding: &'static str,
    positions: String,
    colors: String,
}

impl ServiceState {
    pub fn new(
        model: AffinityField<f32>,
        positions: Vec<[f32; 3]>,
        tree: GroupTree,
        params: &DecomposeParams,
    ) -> Result<Self, CliError> {
        let n = positions.len();
        if let Some(bad) = tree.nodes.iter().flat_map(|t| &t.points).find(|&&i| i as usize >= n) {
            return Err(CliError::Input(format!("tree references point {bad} but the dataset has {n} points")));
        }
        let points: Vec<[f64; 3]> = positions.iter().map(|p| p.map(f64::from)).collect();
        let encoded = model.encode_points_batch(&points)?;
        let (tree_doc, _) = tree.to_json_and_sidecar(&positions);
        let tree_json = serde_json::to_vec(&tree_doc).map_err(|e| CliError::Input(e.to_string()))?;
        let mut raw = Vec::with_capacity(n * 12);
        for v in positions.iter().flatten() {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        let payload = PointsPayload {
            count: n,
            encoding: "base64",
            positions: B64.encode(&raw),
            colors: B64.encode(root_colors(&tree, n)),
        };
        let points_json = serde_json::to_vec(&payload).map_err(|e| CliError::Input(e.to_string()))?;
        Ok(Self {
            model,
            points,
            encoded,
            tree,
            tree_json: tree_json.into(),
            points_json: points_json.into(),
            s_max: params.s_max,
            scale_step: params.scale_step,
        })
    }

    fn selector(&self) -> Selector<'_, f32> {
        Selector::with_encoded(&self.model, &self.points, &self.encoded)
    }
}

/// Distinct colours for the roots via golden-ratio hue steps; grey for
/// points no root covers.
fn root_colors(tree: &GroupTree, n: usize) -> Vec<u8> {
    let mut rgb = vec![128u8; n * 3];
    for (k, &root) in tree.roots.iter().enumerate() {
        let c = hue_to_rgb((k as f64 * 0.618_033_988_75).fract());
        for &i in &tree.nodes[root].points {
            rgb[i as usize * 3..i as usize * 3 + 3].copy_from_slice(&c);
        }
    }
    rgb
}

fn hue_to_rgb(h: f64) -> [u8; 3] {
    let (s, v) = (0.65, 0.95);
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [r, g, b].map(|c| (c * 255.0).round() as u8)
}

#[derive(Debug)]
struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.1 }).to_string();
        (self.0, [(header::CONTENT_TYPE, "application/json")], body).into_response()
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

fn internal(msg: impl ToString) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
}

fn json_bytes(body: Bytes) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn json<T: Serialize>(value: &T) -> Result<Response, ApiError> {
    Ok(json_bytes(serde_json::to_vec(value).map_err(internal)?.into()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBody {
    click: [f64; 3],
    scale: f64,
    threshold: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiscaleBody {
    click: [f64; 3],
    threshold: Option<f64>,
}

#[derive(Serialize)]
struct ScaleSelection {
    scale: f64,
    indices: Vec<u32>,
}

fn parse<'a, T: Deserialize<'a>>(body: &'a [u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| bad_request(format!("malformed body: {e}")))
}

fn check_click(click: &[f64; 3]) -> Result<(), ApiError> {
    if click.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(bad_request("click must be three finite numbers"))
    }
}

fn check_threshold(t: Option<f64>) -> Result<f64, ApiError> {
    match t {
        Some(t) if t.is_nan() => Err(bad_request("threshold must be a number")),
        Some(t) => Ok(t),
        None => Ok(DEFAULT_THRESHOLD),
    }
}

async fn points(State(st): State<Arc<ServiceState>>) -> Response {
    json_bytes(st.points_json.clone())
}

async fn tree(State(st): State<Arc<ServiceState>>) -> Response {
    json_bytes(st.tree_json.clone())
}

async fn select(State(st): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: SelectBody = parse(&body)?;
    check_click(&req.click)?;
    if !(req.scale.is_finite() && req.scale >= 0.0) {
        return Err(bad_request("scale must be a finite non-negative number"));
    }
    let threshold = check_threshold(req.threshold)?;
    let indices = tokio::task::spawn_blocking(move || st.selector().select(req.click, req.scale, threshold))
        .await
        .map_err(internal)?
        .map_err(internal)?;
    json(&indices)
}

async fn multiscale(State(st): State<Arc<ServiceState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: MultiscaleBody = parse(&body)?;
    check_click(&req.click)?;
    let threshold = check_threshold(req.threshold)?;
    let masks = tokio::task::spawn_blocking(move || st.selector().multiscale(req.click, st.s_max, st.scale_step, threshold))
        .await
        .map_err(internal)?
        .map_err(internal)?;
    let out: Vec<ScaleSelection> = masks.into_iter().map(|(scale, indices)| ScaleSelection { scale, indices }).collect();
    json(&out)
}

async fn node(State(st): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id: usize = id.parse().map_err(|_| bad_request(format!("node id {id:?} is not a non-negative integer")))?;
    let node = st
        .tree
        .nodes
        .get(id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no node {id}")))?;
    json(&node.points)
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/points", get(points))
        .route("/tree", get(tree))
        .route("/select", post(select))
        .route("/multiscale", post(multiscale))
        .route("/node/{id}", get(node))
        .with_state(state)
}

/// Serve until ctrl-c.
pub async fn serve(addr: SocketAddr, state: Arc<ServiceState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
