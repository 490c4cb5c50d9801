use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, Method, Request, Response, StatusCode};
use axum::Router;

use whyrl_core::service::Workspace;

async fn answer(State(ws): State<Arc<Workspace>>, req: Request<Body>) -> Response<Body> {
    let (status, bytes) = if req.method() != Method::GET {
        let body = serde_json::json!({
            "error": { "code": "method_not_allowed", "message": "the service is read-only; use GET" }
        });
        (StatusCode::METHOD_NOT_ALLOWED, format!("{body}\n").into_bytes())
    } else {
        let target = req.uri().path_and_query().map_or("/", |pq| pq.as_str());
        let response = ws.handle(target);
        (
            StatusCode::from_u16(response.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            response.to_bytes(),
        )
    };
    Response::builder()
        .status(status)
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(bytes))
        .expect("static response parts are valid")
}

pub fn serve(artifacts: &Path, bind: &str) -> Result<(), String> {
    let ws = Workspace::load(artifacts).map_err(|e| format!("{}: {e}", artifacts.display()))?;
    if ws.is_empty() {
        return Err(format!("no artifacts found in {}", artifacts.display()));
    }
    let names: Vec<&str> = ws.names().collect();
    let summary = names.join(", ");
    let app = Router::new().fallback(answer).with_state(Arc::new(ws));

    let runtime = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(bind)
            .await
            .map_err(|e| format!("cannot bind {bind}: {e}"))?;
        let addr = listener.local_addr().map_err(|e| e.to_string())?;
        println!("listening on http://{addr} serving {summary}");
        std::io::stdout().flush().ok();
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                tokio::signal::ctrl_c().await.ok();
            })
            .await
            .map_err(|e| e.to_string())
    })
}
