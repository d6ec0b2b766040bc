//! HTTP front end for the annotation UI.
//!
//! `GET /api/tasks?assessor=<id>` returns the first page the assessor has not finished,
//! `POST /api/judgments` records one Likert vote, `GET /api/progress` reports counts.
//! Other `GET` paths are served from an optional static UI directory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tiny_http::{Header, Method, Response, Server};

use super::store::{Judgment, JudgmentStore};
use super::{aggregate_judgments, task_directions, AggregationPolicy, AnnotationTask, Decision};
use crate::error::{Error, Result};
use crate::text::ClassConfig;

/// What assessors see. Gold and real tasks have the same shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub feature: String,
    pub definition: String,
    pub learned_direction: usize,
    pub direction_name: String,
    pub page: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub assessor: String,
    pub feature: String,
    pub likert: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub accepted: bool,
    pub trusted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub pages: usize,
    pub features: usize,
    pub judgments: usize,
    pub assessors: usize,
    pub trusted_assessors: usize,
    pub decided: usize,
    pub erroneous: usize,
}

pub struct AnnotationService {
    tasks: Vec<AnnotationTask>,
    by_feature: HashMap<String, usize>,
    classes: ClassConfig,
    store: Arc<JudgmentStore>,
    policy: AggregationPolicy,
}

impl AnnotationService {
    pub fn new(tasks: Vec<AnnotationTask>, classes: ClassConfig, store: Arc<JudgmentStore>, policy: AggregationPolicy) -> Self {
        let by_feature = tasks.iter().enumerate().map(|(i, t)| (t.feature.clone(), i)).collect();
        AnnotationService {
            tasks,
            by_feature,
            classes,
            store,
            policy,
        }
    }

    pub fn store(&self) -> &Arc<JudgmentStore> {
        &self.store
    }

    fn view(&self, t: &AnnotationTask) -> TaskView {
        TaskView {
            feature: t.feature.clone(),
            definition: t.definition.clone(),
            learned_direction: t.learned_direction,
            direction_name: self.classes.name(t.learned_direction).to_string(),
            page: t.page,
        }
    }

    /// First page with a task the assessor has not judged; empty when done.
    pub fn next_page(&self, assessor: &str) -> Vec<TaskView> {
        let judged: BTreeSet<String> = self
            .store
            .snapshot()
            .into_iter()
            .filter(|j| j.assessor_id == assessor)
            .map(|j| j.feature)
            .collect();
        let pending_page = self
            .tasks
            .iter()
            .find(|t| !judged.contains(&t.feature))
            .map(|t| t.page);
        match pending_page {
            Some(page) => self.tasks.iter().filter(|t| t.page == page).map(|t| self.view(t)).collect(),
            None => Vec::new(),
        }
    }

    pub fn submit(&self, request: SubmitRequest) -> Result<SubmitResponse> {
        let likert = u8::try_from(request.likert)
            .ok()
            .filter(|l| (1..=5).contains(l))
            .ok_or_else(|| Error::Validation(format!("likert must be 1-5, got {}", request.likert)))?;
        let task = self
            .by_feature
            .get(&request.feature)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| Error::Validation(format!("`{}` is not an annotation task", request.feature)))?;
        let mut judgment = Judgment::new(request.feature, request.assessor, likert);
        if let Some(expected) = task.gold {
            judgment = judgment.gold(expected);
        }
        let record = self.store.record_judgment(judgment)?;
        Ok(SubmitResponse {
            accepted: true,
            trusted: record.trusted,
        })
    }

    pub fn progress(&self) -> Progress {
        let snapshot = self.store.snapshot();
        let records = self.store.records();
        let directions: BTreeMap<String, usize> = task_directions(&self.tasks);
        let set = aggregate_judgments(&snapshot, &directions, &self.policy);
        Progress {
            pages: self.tasks.iter().map(|t| t.page + 1).max().unwrap_or(0),
            features: directions.len(),
            judgments: snapshot.len(),
            assessors: records.len(),
            trusted_assessors: records.values().filter(|r| r.trusted).count(),
            decided: set.decisions.values().filter(|d| d.decision != Decision::Undecided).count(),
            erroneous: set.len(),
        }
    }

    /// Routes one API request; returns the status code and JSON body.
    pub fn handle_api(&self, method: &str, url: &str, body: &str) -> (u16, String) {
        let (path, query) = url.split_once('?').unwrap_or((url, ""));
        let result: Result<serde_json::Value> = match (method, path) {
            ("GET", "/api/tasks") => match query_param(query, "assessor") {
                Some(assessor) if !assessor.is_empty() => Ok(serde_json::to_value(self.next_page(&assessor)).expect("serializable")),
                _ => Err(Error::Validation("missing `assessor` query parameter".into())),
            },
            ("POST", "/api/judgments") => serde_json::from_str::<SubmitRequest>(body)
                .map_err(|e| Error::Validation(format!("malformed judgment: {e}")))
                .and_then(|req| self.submit(req))
                .map(|resp| serde_json::to_value(resp).expect("serializable")),
            ("GET", "/api/progress") => Ok(serde_json::to_value(self.progress()).expect("serializable")),
            _ => return (404, json!({"error": "not found"}).to_string()),
        };
        match result {
            Ok(value) => (200, value.to_string()),
            Err(e @ Error::Validation(_)) => (400, json!({"accepted": false, "error": e.to_string()}).to_string()),
            Err(e) => (500, json!({"accepted": false, "error": e.to_string()}).to_string()),
        }
    }

    /// Starts serving on `addr` with `workers` request threads.
    pub fn serve(self, addr: &str, workers: usize, ui_dir: Option<PathBuf>) -> Result<ServerHandle> {
        let server = Arc::new(Server::http(addr).map_err(|e| Error::Config(format!("cannot bind {addr}: {e}")))?);
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| Error::Config("server is not bound to an IP address".into()))?;
        let service = Arc::new(self);
        let threads = (0..workers.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let service = Arc::clone(&service);
                let ui_dir = ui_dir.clone();
                std::thread::spawn(move || {
                    while let Ok(request) = server.recv() {
                        service.respond(request, ui_dir.as_deref());
                    }
                })
            })
            .collect();
        Ok(ServerHandle {
            server,
            addr: local,
            threads,
        })
    }

    fn respond(&self, mut request: tiny_http::Request, ui_dir: Option<&Path>) {
        let url = request.url().to_string();
        let method = match request.method() {
            Method::Get => "GET",
            Method::Post => "POST",
            _ => "OTHER",
        };
        if method == "GET" && !url.starts_with("/api/") {
            let response = match ui_dir.and_then(|dir| static_file(dir, &url)) {
                Some((bytes, mime)) => Response::from_data(bytes).with_header(header("Content-Type", mime)),
                None => Response::from_data(b"not found".to_vec()).with_status_code(404),
            };
            let _ = request.respond(response);
            return;
        }
        let mut body = String::new();
        let (status, json) = match request.as_reader().read_to_string(&mut body) {
            Ok(_) => self.handle_api(method, &url, &body),
            Err(e) => (400, json!({"accepted": false, "error": e.to_string()}).to_string()),
        };
        let response = Response::from_string(json)
            .with_status_code(status)
            .with_header(header("Content-Type", "application/json"));
        let _ = request.respond(response);
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("valid header")
}

fn static_file(dir: &Path, url: &str) -> Option<(Vec<u8>, &'static str)> {
    let path = url.split('?').next().unwrap_or("/");
    let relative = Path::new(path.trim_start_matches('/'));
    if relative.components().any(|c| !matches!(c, Component::Normal(_))) {
        return None;
    }
    let mut full = dir.join(relative);
    if path == "/" || full.is_dir() {
        full = full.join("index.html");
    }
    let bytes = std::fs::read(&full).ok()?;
    let mime = match full.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    };
    Some((bytes, mime))
}

fn query_param(query: &str, name: &str) -> Option<String> {
    query.split('&').find_map(|pair| {
        let (k, v) = pair.split_once('=').unwrap_or((pair, ""));
        (k == name).then(|| percent_decode(v))
    })
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => out.push(b' '),
            b'%' if i + 2 < bytes.len() => {
                let hex = std::str::from_utf8(&bytes[i + 1..i + 3]).ok();
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(b) => {
                        out.push(b);
                        i += 2;
                    }
                    None => out.push(b'%'),
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn join(self) {
        for t in self.threads {
            let _ = t.join();
        }
    }

    pub fn shutdown(self) {
        for _ in 0..self.threads.len() {
            self.server.unblock();
        }
        self.join();
    }
}
