//! External models over line-delimited JSON.
//!
//! Request: `{"id": "...", "texts": ["...", ...]}`; reply: `{"id": "...", "probs": [[...], ...]}`.
//! The class order is announced once with `{"handshake": {"classes": [...]}}`, answered by
//! `{"ok": true}`. The same messages travel over a child process's stdin/stdout or as HTTP
//! POST bodies.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{Classifier, ModelKind};
use crate::error::{Error, Result};
use crate::text::ClassConfig;

#[derive(Debug, Clone)]
pub struct ExternalConfig {
    pub batch_size: usize,
    pub timeout: Duration,
    pub retries: usize,
}

impl Default for ExternalConfig {
    fn default() -> Self {
        ExternalConfig {
            batch_size: 64,
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

pub struct ExternalModel {
    spec: String,
    classes: ClassConfig,
    config: ExternalConfig,
    transport: Transport,
    next_id: AtomicU64,
}

enum Transport {
    Process(Mutex<ProcessLink>),
    Http { url: String, agent: ureq::Agent },
}

struct ProcessLink {
    child: Child,
    stdin: ChildStdin,
    replies: Receiver<std::io::Result<String>>,
    /// Replies still expected for requests that were re-sent or abandoned; dropped on arrival.
    stray: HashMap<String, usize>,
}

impl Drop for ProcessLink {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[derive(Deserialize)]
struct Reply {
    id: Option<String>,
    probs: Option<Vec<Vec<f64>>>,
}

impl ExternalModel {
    /// Spawns `argv` and performs the handshake on its standard streams.
    pub fn spawn(argv: &[String], classes: ClassConfig, config: ExternalConfig) -> Result<Self> {
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| Error::Config("empty external model command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Transport {
                message: format!("failed to start `{program}`: {e}"),
                raw: String::new(),
            })?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let link = ProcessLink {
            child,
            stdin,
            replies: rx,
            stray: HashMap::new(),
        };
        let model = ExternalModel {
            spec: format!("cmd:{}", shell_words::join(argv)),
            classes,
            config,
            transport: Transport::Process(Mutex::new(link)),
            next_id: AtomicU64::new(0),
        };
        model.handshake()?;
        Ok(model)
    }

    pub fn http(url: &str, classes: ClassConfig, config: ExternalConfig) -> Result<Self> {
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        let model = ExternalModel {
            spec: format!("http:{url}"),
            classes,
            config,
            transport: Transport::Http {
                url: url.to_string(),
                agent,
            },
            next_id: AtomicU64::new(0),
        };
        model.handshake()?;
        Ok(model)
    }

    fn handshake(&self) -> Result<()> {
        let message = json!({"handshake": {"classes": self.classes.classes()}});
        let raw = self.exchange(&message, None)?;
        let value: serde_json::Value = serde_json::from_str(&raw).map_err(|e| Error::Transport {
            message: format!("malformed handshake reply: {e}"),
            raw: raw.clone(),
        })?;
        if value.get("ok") != Some(&serde_json::Value::Bool(true)) {
            return Err(Error::Protocol(format!("handshake rejected: {raw}")));
        }
        Ok(())
    }

    /// Sends one message and returns the raw reply line, retrying on timeouts.
    fn exchange(&self, message: &serde_json::Value, id: Option<&str>) -> Result<String> {
        let line = message.to_string();
        match &self.transport {
            Transport::Process(link) => {
                let mut link = link.lock().expect("external model lock poisoned");
                let mut last_error = None;
                for attempt in 0..=self.config.retries {
                    writeln!(link.stdin, "{line}")
                        .and_then(|_| link.stdin.flush())
                        .map_err(|e| Error::Transport {
                            message: format!("write to model failed: {e}"),
                            raw: String::new(),
                        })?;
                    match self.await_reply(&mut link, id) {
                        Ok(reply) => {
                            if let (Some(id), true) = (id, attempt > 0) {
                                *link.stray.entry(id.to_string()).or_default() += attempt;
                            }
                            return Ok(reply);
                        }
                        Err(timeout @ Error::Transport { .. }) if link.child_alive() => {
                            last_error = Some(timeout);
                        }
                        Err(e) => return Err(e),
                    }
                }
                if let Some(id) = id {
                    *link.stray.entry(id.to_string()).or_default() += self.config.retries + 1;
                }
                Err(last_error.expect("at least one attempt"))
            }
            Transport::Http { url, agent } => {
                let mut last_error = None;
                for _ in 0..=self.config.retries {
                    match agent.post(url).set("Content-Type", "application/json").send_string(&line) {
                        Ok(response) => {
                            return response.into_string().map_err(|e| Error::Transport {
                                message: format!("reading reply failed: {e}"),
                                raw: String::new(),
                            })
                        }
                        Err(ureq::Error::Status(code, response)) => {
                            let raw = response.into_string().unwrap_or_default();
                            return Err(Error::Transport {
                                message: format!("model server answered HTTP {code}"),
                                raw,
                            });
                        }
                        Err(ureq::Error::Transport(t)) => {
                            last_error = Some(Error::Transport {
                                message: t.to_string(),
                                raw: String::new(),
                            });
                        }
                    }
                }
                Err(last_error.expect("at least one attempt"))
            }
        }
    }

    fn await_reply(&self, link: &mut ProcessLink, id: Option<&str>) -> Result<String> {
        loop {
            match link.replies.recv_timeout(self.config.timeout) {
                Ok(Ok(raw)) => {
                    if let Some(stale) = reply_id(&raw) {
                        if Some(stale.as_str()) != id && link.take_stray(&stale) {
                            continue;
                        }
                    }
                    return Ok(raw);
                }
                Ok(Err(e)) => {
                    return Err(Error::Transport {
                        message: format!("read from model failed: {e}"),
                        raw: String::new(),
                    })
                }
                Err(RecvTimeoutError::Timeout) => {
                    return Err(Error::Transport {
                        message: format!("no reply within {:?}", self.config.timeout),
                        raw: String::new(),
                    })
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(Error::Transport {
                        message: "model process closed its output".into(),
                        raw: String::new(),
                    })
                }
            }
        }
    }

    fn request(&self, texts: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let id = format!("req-{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let joined: Vec<String> = texts.iter().map(|t| t.join(" ")).collect();
        let raw = self.exchange(&json!({"id": id, "texts": joined}), Some(&id))?;
        let reply: Reply = serde_json::from_str(&raw).map_err(|e| Error::Transport {
            message: format!("malformed reply: {e}"),
            raw: raw.clone(),
        })?;
        match reply.id {
            Some(ref got) if *got == id => {}
            other => {
                return Err(Error::Protocol(format!(
                    "reply id {other:?} does not echo request id `{id}`"
                )))
            }
        }
        let probs = reply
            .probs
            .ok_or_else(|| Error::Protocol(format!("reply to `{id}` has no `probs`")))?;
        if probs.len() != texts.len() {
            return Err(Error::Protocol(format!(
                "reply to `{id}` has {} rows for {} texts",
                probs.len(),
                texts.len()
            )));
        }
        Ok(probs)
    }
}

impl ProcessLink {
    fn take_stray(&mut self, id: &str) -> bool {
        match self.stray.get_mut(id) {
            Some(n) => {
                *n -= 1;
                if *n == 0 {
                    self.stray.remove(id);
                }
                true
            }
            None => false,
        }
    }

    fn child_alive(&mut self) -> bool {
        matches!(self.child.try_wait(), Ok(None))
    }
}

fn reply_id(raw: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(raw).ok()?;
    value.get("id")?.as_str().map(str::to_string)
}

impl Classifier for ExternalModel {
    fn kind(&self) -> ModelKind {
        ModelKind::External
    }

    fn class_config(&self) -> &ClassConfig {
        &self.classes
    }

    fn identity(&self) -> String {
        self.spec.clone()
    }

    fn predict_raw(&self, texts: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size.max(1)) {
            out.extend(self.request(chunk)?);
        }
        Ok(out)
    }
}
