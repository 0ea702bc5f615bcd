#![allow(dead_code)]

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use serde_json::{json, Value};

/// A scoring service on an ephemeral port. The handler maps a request batch
/// to an HTTP status and body.
pub struct MockService {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    worker: Option<thread::JoinHandle<()>>,
}

impl MockService {
    pub fn start<F>(handler: F) -> Self
    where
        F: Fn(usize, &[Value]) -> (u16, String) + Send + Sync + 'static,
    {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").expect("bind mock"));
        let addr = server.server_addr().to_ip().expect("ip listener");
        let hits = Arc::new(AtomicUsize::new(0));
        let (s, h) = (server.clone(), hits.clone());
        let worker = thread::spawn(move || {
            for mut req in s.incoming_requests() {
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let n = h.fetch_add(1, Ordering::SeqCst);
                let batch: Vec<Value> = serde_json::from_str(&body).unwrap_or_default();
                let (status, text) = if req.url() == "/score" {
                    handler(n, &batch)
                } else {
                    (404, "not found".into())
                };
                let _ = req.respond(tiny_http::Response::from_string(text).with_status_code(status));
            }
        });
        MockService {
            url: format!("http://{addr}"),
            hits,
            server,
            worker: Some(worker),
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

impl Drop for MockService {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

pub const STUB_INTENT: f64 = 0.25;
pub const STUB_REQUESTED: f64 = 0.1;
pub const STUB_STATUS: (f64, f64, f64) = (0.7, 0.1, 0.2);
pub const STUB_VALUE: f64 = 0.3;
pub const STUB_NO_SPAN: f64 = 0.9;

/// Constant responses for every request kind.
pub fn stub_response(request: &Value) -> Value {
    let candidate = request["candidates"][0].as_str().unwrap_or_default().to_string();
    match request["kind"].as_str().unwrap_or_default() {
        "INTENT" => json!({ candidate: STUB_INTENT }),
        "SLOT_REQUEST" => json!({"probability": STUB_REQUESTED}),
        "SLOT_STATUS" => json!({"p_none": STUB_STATUS.0, "p_dontcare": STUB_STATUS.1, "p_active": STUB_STATUS.2}),
        "SLOT_VALUE" => json!({ candidate: STUB_VALUE }),
        "SLOT_TAGGING" => json!({"n_best": [{"start": -1, "end": -1, "probability": STUB_NO_SPAN}]}),
        _ => json!({}),
    }
}

pub fn stub_batch(batch: &[Value]) -> (u16, String) {
    let out: Vec<Value> = batch.iter().map(stub_response).collect();
    (200, serde_json::to_string(&out).unwrap())
}
