#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use perception_service::{build_state, router, AppState, ServiceConfig};
use serde_json::Value;
use tower::ServiceExt;

pub fn shipped_catalog() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/actions_18.json")
}

pub fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(name)
}

/// Writes a catalog with the given footprints to `dir/catalog.json`.
pub fn write_catalog(dir: &Path, kg: &[f64]) -> PathBuf {
    let rows: Vec<Value> = kg
        .iter()
        .enumerate()
        .map(|(k, v)| serde_json::json!({"id": k + 1, "title": format!("action {}", k + 1), "description": "", "kg_co2e": v}))
        .collect();
    let path = dir.join("catalog.json");
    std::fs::write(&path, serde_json::to_string(&rows).unwrap()).unwrap();
    path
}

/// In-process service driven through `tower::ServiceExt::oneshot`.
pub struct TestApp {
    pub state: Arc<AppState>,
    pub app: axum::Router,
    pub config: ServiceConfig,
}

impl TestApp {
    pub fn new(config: ServiceConfig) -> Self {
        let state = build_state(&config).expect("service state");
        let app = router(state.clone(), &config.cors_origins);
        Self { state, app, config }
    }

    pub fn open(catalog: impl Into<PathBuf>, log: impl Into<PathBuf>) -> Self {
        let mut config = ServiceConfig::with_paths(catalog, log);
        config.rate_limit = 0.0;
        Self::new(config)
    }

    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req.header("content-type", "application/json").body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
        let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
        (status, value)
    }

    pub async fn start(&self, seed: Option<u64>) -> String {
        let body = seed.map(|s| serde_json::json!({ "seed": s }));
        let (status, v) = self.call("POST", "/api/sessions", body).await;
        assert_eq!(status, StatusCode::CREATED);
        v["session_id"].as_str().unwrap().to_owned()
    }

    pub async fn question(&self, id: &str) -> (StatusCode, Value) {
        self.call("GET", &format!("/api/sessions/{id}/question"), None).await
    }

    pub async fn answer(&self, id: &str, first: u64, second: u64, y: f64) -> (StatusCode, Value) {
        self.call("POST", &format!("/api/sessions/{id}/answers"), Some(serde_json::json!({"pair": [first, second], "y": y})))
            .await
    }

    pub async fn perception(&self) -> Value {
        let (status, v) = self.call("GET", "/api/perception", None).await;
        assert_eq!(status, StatusCode::OK);
        v
    }
}

pub fn perceived(v: &Value) -> Vec<f64> {
    v["actions"].as_array().unwrap().iter().map(|a| a["perceived_kg"].as_f64().unwrap()).collect()
}

/// A real `perception-server` process.
pub struct ServerProcess {
    pub child: Child,
    pub addr: SocketAddr,
}

impl ServerProcess {
    pub fn spawn(catalog: &Path, log: &Path) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_perception-server"))
            .args(["--bind", "127.0.0.1:0", "--rate-limit", "0"])
            .arg("--catalog")
            .arg(catalog)
            .arg("--log")
            .arg(log)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .expect("spawn server");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server output {line:?}"))
            .parse()
            .unwrap();
        Self { child, addr }
    }

    /// SIGKILL; no graceful shutdown.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }

    pub fn call(&self, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
        http(self.addr, method, path, body)
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Minimal HTTP/1.1 client: one request per connection.
pub fn http(addr: SocketAddr, method: &str, path: &str, body: Option<&Value>) -> (u16, Value) {
    let payload = body.map(Value::to_string).unwrap_or_default();
    let mut stream = TcpStream::connect(addr).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let text = String::from_utf8(raw).unwrap();
    let (head, rest) = text.split_once("\r\n\r\n").unwrap();
    let status: u16 = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    let chunked = head.to_ascii_lowercase().contains("transfer-encoding: chunked");
    let body = if chunked { dechunk(rest) } else { rest.to_owned() };
    let value = if body.is_empty() { Value::Null } else { serde_json::from_str(&body).unwrap() };
    (status, value)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

/// Closed-form posterior evaluated literally with dense matrices:
/// builds X and the log-ratio vector, forms `X^T X / s_n + I / s_p`, inverts
/// it by Gauss-Jordan elimination and multiplies out the mean.
pub fn dense_posterior(
    triplets: &[(usize, usize, f64)],
    mu: &[f64],
    sigma_p_sq: f64,
    sigma_n_sq: f64,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = mu.len();
    let x: Vec<Vec<f64>> = triplets
        .iter()
        .map(|&(i, j, _)| {
            let mut row = vec![0.0; m];
            row[i - 1] = 1.0;
            row[j - 1] = -1.0;
            row
        })
        .collect();
    let y: Vec<f64> = triplets.iter().map(|t| t.2.ln()).collect();
    let mut a = vec![vec![0.0; m]; m];
    for r in 0..m {
        for c in 0..m {
            let xtx: f64 = x.iter().map(|row| row[r] * row[c]).sum();
            a[r][c] = xtx / sigma_n_sq + if r == c { 1.0 / sigma_p_sq } else { 0.0 };
        }
    }
    let cov = gauss_jordan_inverse(a);
    let b: Vec<f64> = (0..m)
        .map(|r| x.iter().zip(&y).map(|(row, yn)| row[r] * yn).sum::<f64>() / sigma_n_sq + mu[r] / sigma_p_sq)
        .collect();
    let mean = (0..m).map(|r| (0..m).map(|c| cov[r][c] * b[c]).sum()).collect();
    (mean, cov)
}

pub fn gauss_jordan_inverse(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|r| (0..n).map(|c| if r == c { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "singular matrix");
        for c in 0..n {
            a[col][c] /= d;
            inv[col][c] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..n {
                        a[r][c] -= f * a[col][c];
                        inv[r][c] -= f * inv[col][c];
                    }
                }
            }
        }
    }
    inv
}

/// Log-determinant by LU with partial pivoting.
pub fn log_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, pivot);
        let d = a[col][col];
        acc += d.abs().ln();
        for r in col + 1..n {
            let f = a[r][col] / d;
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    acc
}
