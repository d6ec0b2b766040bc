//! Reference external model speaking the line-delimited JSON protocol.
//!
//! Scores texts with a saved builtin model (`--model`) or a tiny default lexicon. Serves over
//! stdin/stdout by default or over HTTP with `--http ADDR`, in which case the bound address is
//! printed on the first stdout line. `--misbehave` injects faults for adapter tests.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};

use oa_core::model::LogisticModel;
use oa_core::text::{tokenize, ClassConfig, TokenizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Misbehave {
    /// Sleep through the first request once.
    SlowFirst,
    /// Probabilities that do not sum to one.
    BadSum,
    /// One row fewer than requested.
    WrongRows,
    /// A line that is not JSON.
    Garbage,
    /// Echo a different request id.
    WrongId,
    /// Reject the handshake.
    RejectHandshake,
}

#[derive(Parser)]
#[command(name = "oa-lexicon-model", about = "Reference external sentiment model")]
struct Args {
    /// Saved builtin model to serve instead of the default lexicon.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Serve HTTP on this address instead of stdin/stdout.
    #[arg(long)]
    http: Option<String>,
    #[arg(long, value_enum)]
    misbehave: Option<Misbehave>,
    /// Sleep used by `slow-first`, in milliseconds.
    #[arg(long, default_value_t = 1500)]
    delay_ms: u64,
}

fn default_lexicon() -> LogisticModel {
    let mut m = LogisticModel::zeros(ClassConfig::sentiment(), Vec::new());
    for w in ["good", "great", "love", "happy", "excellent", "fantastic"] {
        m.set_weight(2, w, 2.0);
    }
    for w in ["bad", "awful", "hate", "sad", "terrible", "diarrhea"] {
        m.set_weight(0, w, 2.0);
    }
    for w in ["the", "a", "is", "today"] {
        m.set_weight(1, w, 0.5);
    }
    m
}

struct Server {
    model: LogisticModel,
    misbehave: Option<Misbehave>,
    delay: Duration,
    slept: bool,
}

impl Server {
    fn handle(&mut self, line: &str) -> String {
        let message: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => return json!({"error": format!("bad request: {e}")}).to_string(),
        };
        if let Some(h) = message.get("handshake") {
            let wanted: Vec<String> = h
                .get("classes")
                .and_then(|c| serde_json::from_value(c.clone()).ok())
                .unwrap_or_default();
            let ok = wanted == self.model.classes().classes() && self.misbehave != Some(Misbehave::RejectHandshake);
            return if ok {
                json!({"ok": true}).to_string()
            } else {
                json!({"ok": false, "error": format!("serving classes {:?}", self.model.classes().classes())}).to_string()
            };
        }
        let id = message.get("id").cloned().unwrap_or(Value::Null);
        let texts: Vec<String> = message
            .get("texts")
            .and_then(|t| serde_json::from_value(t.clone()).ok())
            .unwrap_or_default();
        if self.misbehave == Some(Misbehave::SlowFirst) && !self.slept {
            self.slept = true;
            std::thread::sleep(self.delay);
        }
        let mut probs: Vec<Vec<f64>> = texts
            .iter()
            .map(|t| self.model.probabilities(&tokenize(t, &TokenizerConfig::default())))
            .collect();
        match self.misbehave {
            Some(Misbehave::BadSum) => probs.iter_mut().for_each(|p| p[0] += 0.5),
            Some(Misbehave::WrongRows) => {
                probs.pop();
            }
            Some(Misbehave::Garbage) => return "this is not json".to_string(),
            Some(Misbehave::WrongId) => return json!({"id": "someone-else", "probs": probs}).to_string(),
            _ => {}
        }
        json!({"id": id, "probs": probs}).to_string()
    }
}

fn main() {
    let args = Args::parse();
    let model = match &args.model {
        Some(path) => match LogisticModel::load(path) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("oa-lexicon-model: {e}");
                std::process::exit(1);
            }
        },
        None => default_lexicon(),
    };
    let mut server = Server {
        model,
        misbehave: args.misbehave,
        delay: Duration::from_millis(args.delay_ms),
        slept: false,
    };

    match &args.http {
        None => {
            let stdin = std::io::stdin();
            let mut stdout = std::io::stdout().lock();
            for line in stdin.lock().lines() {
                let Ok(line) = line else { break };
                if line.trim().is_empty() {
                    continue;
                }
                let reply = server.handle(&line);
                if writeln!(stdout, "{reply}").and_then(|_| stdout.flush()).is_err() {
                    break;
                }
            }
        }
        Some(addr) => {
            let http = match tiny_http::Server::http(addr.as_str()) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("oa-lexicon-model: cannot bind {addr}: {e}");
                    std::process::exit(1);
                }
            };
            println!("http://{}", http.server_addr().to_ip().expect("tcp listener"));
            let _ = std::io::stdout().flush();
            for mut request in http.incoming_requests() {
                let mut body = String::new();
                let _ = request.as_reader().read_to_string(&mut body);
                let reply = server.handle(&body);
                let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
                let _ = request.respond(tiny_http::Response::from_string(reply).with_header(header));
            }
        }
    }
}
