#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use alignui::{router, AppState, ServiceConfig};
use alignui_core::dataset::fixtures;
use alignui_core::llm::{Gateway, ScriptedProvider};
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

pub struct TestApp {
    pub dir: TempDir,
    pub router: Router,
    pub state: Arc<AppState>,
    pub provider: Option<Arc<ScriptedProvider>>,
}

pub enum Mode {
    Offline,
    Scripted(Vec<String>),
}

pub enum Data {
    Table1,
    Full,
}

impl TestApp {
    pub fn new(data: Data, mode: Mode) -> Self {
        let dir = tempfile::tempdir().unwrap();
        Self::in_dir(dir, data, mode)
    }

    pub fn in_dir(dir: TempDir, data: Data, mode: Mode) -> Self {
        let mut config = ServiceConfig::default();
        config.service.selections_log = dir.path().join("selections.jsonl");
        if let Data::Table1 = data {
            let path = dir.path().join("table1.json");
            if !path.exists() {
                std::fs::write(&path, fixtures::table1().save()).unwrap();
            }
            config.service.dataset = Some(path);
        }
        config.service.n_runs = 3;
        let (gateway, provider) = match mode {
            Mode::Offline => (None, None),
            Mode::Scripted(texts) => {
                let p = Arc::new(ScriptedProvider::from_texts(texts));
                (Some(Gateway::scripted(p.clone())), Some(p))
            }
        };
        config.service.offline = gateway.is_none();
        let state = Arc::new(AppState::new(config, gateway).unwrap());
        Self {
            dir,
            router: router(state.clone()),
            state,
            provider,
        }
    }

    /// Restarts on the same directory, replaying the log.
    pub fn restart(self, data: Data) -> Self {
        let Self { dir, .. } = self;
        Self::in_dir(dir, data, Mode::Offline)
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.path().join("selections.jsonl")
    }

    pub fn log_bytes(&self) -> Vec<u8> {
        std::fs::read(self.log_path()).unwrap_or_default()
    }

    pub async fn call(&self, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(b) => {
                req = req.header("content-type", "application/json");
                Body::from(b.to_string())
            }
            None => Body::empty(),
        };
        let resp = self
            .router
            .clone()
            .oneshot(req.body(body).unwrap())
            .await
            .unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes)
                .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call(Method::GET, uri, None).await
    }

    pub async fn post(&self, uri: &str, body: &Value) -> (StatusCode, Value) {
        self.call(Method::POST, uri, Some(&body.to_string())).await
    }
}

pub fn schema(name: &str) -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("schemas")
        .join(format!("{name}.json"));
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

pub fn assert_schema(name: &str, value: &Value) {
    let s = schema(name);
    let v = jsonschema::validator_for(&s).unwrap();
    let errors: Vec<String> = v
        .iter_errors(value)
        .map(|e| format!("{} at {}", e, e.instance_path))
        .collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{value:#}");
}

pub fn cell_count(summary: &Value, task: &str, aspect: &str, kind: &str) -> u64 {
    summary["cells"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["task"] == task && c["aspect"] == aspect)
        .and_then(|c| c["counts"][kind].as_u64())
        .unwrap_or(0)
}
