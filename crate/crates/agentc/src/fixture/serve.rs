use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;

use super::manifest::SiteManifest;

struct Pages {
    /// Path plus query to (body, latency).
    by_path: BTreeMap<String, (String, u64)>,
}

fn path_key(url: &url::Url) -> String {
    match url.query() {
        Some(q) => format!("{}?{}", url.path(), q),
        None => url.path().to_string(),
    }
}

/// Serves every manifest page at its URL's path and query, after the page's
/// configured latency. Unknown paths get 404.
pub fn router(manifest: &SiteManifest) -> Router {
    let mut by_path = BTreeMap::new();
    for url in manifest.pages.keys() {
        let Ok(parsed) = url::Url::parse(url) else { continue };
        let body = manifest.page(url).unwrap_or_default().to_string();
        by_path
            .entry(path_key(&parsed))
            .or_insert((body, manifest.latency(url)));
    }
    Router::new().fallback(page).with_state(Arc::new(Pages { by_path }))
}

async fn page(State(pages): State<Arc<Pages>>, uri: Uri) -> Response {
    let key = uri
        .path_and_query()
        .map(|p| p.as_str().to_string())
        .unwrap_or_else(|| "/".into());
    match pages.by_path.get(&key) {
        Some((body, latency)) => {
            if *latency > 0 {
                tokio::time::sleep(Duration::from_millis(*latency)).await;
            }
            ([(header::CONTENT_TYPE, "text/html; charset=utf-8")], body.clone()).into_response()
        }
        None => (StatusCode::NOT_FOUND, "not found").into_response(),
    }
}

/// Runs the fixture server until the task is dropped.
pub async fn serve(manifest: &SiteManifest, listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(manifest)).await
}
