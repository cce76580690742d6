//! Test support: a minimal model server speaking the HTTP wire protocol,
//! backed by the stub adapters, with injectable faults.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use dramanet::adapters::http::{
    GenerateResponse, NliRequest, ScoreRequest, SentimentRequest, SentimentResponse,
};
use dramanet::adapters::stub::{
    KeywordSentiment, LexicalOverlapNli, PhrasebookGenerator, UniformScorer,
};
use dramanet::adapters::{
    GenerationAdapter, GenerationRequest, NliAdapter, ScoreAdapter, SentimentAdapter,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fault {
    None,
    /// Answer the first `n` requests with 503.
    FailFirst(usize),
    /// Answer every request with this status.
    Status(u16),
    /// Answer 200 with a body that is not JSON.
    Malformed,
    /// Answer 200 with a well-formed but wrongly shaped body.
    WrongShape,
    /// Sleep before answering.
    Delay(Duration),
}

pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

/// Binds an ephemeral port and serves until the test process exits.
pub fn spawn(fault: Fault) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let counter = counter.clone();
            thread::spawn(move || {
                let _ = serve(stream, fault, &counter);
            });
        }
    });
    MockServer { url, hits }
}

fn serve(mut stream: TcpStream, fault: Fault, hits: &AtomicUsize) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line
        .split_whitespace()
        .nth(1)
        .unwrap_or("/")
        .to_string();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body)?;
    let n = hits.fetch_add(1, Ordering::SeqCst);

    let (status, payload) = match fault {
        Fault::FailFirst(k) if n < k => (503, "\"busy\"".to_string()),
        Fault::Status(code) => (code, "\"fault\"".to_string()),
        Fault::Malformed => (200, "{not json".to_string()),
        Fault::WrongShape => (200, "{\"unexpected\": true}".to_string()),
        Fault::Delay(d) => {
            thread::sleep(d);
            dispatch(&path, &body)
        }
        _ => dispatch(&path, &body),
    };
    let reason = if status == 200 { "OK" } else { "ERR" };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}

fn dispatch(path: &str, body: &[u8]) -> (u16, String) {
    fn bad(e: impl std::fmt::Display) -> (u16, String) {
        (400, serde_json::to_string(&e.to_string()).unwrap())
    }
    let ok = |v: serde_json::Result<String>| (200, v.unwrap());
    match path.trim_end_matches('/') {
        p if p.ends_with("/sentiment") => match serde_json::from_slice::<SentimentRequest>(body) {
            Ok(req) => {
                let preds = KeywordSentiment::default().classify(&req.texts).unwrap();
                ok(serde_json::to_string(&SentimentResponse {
                    labels: preds.iter().map(|p| p.label).collect(),
                    probs: preds.iter().map(|p| p.probs).collect(),
                }))
            }
            Err(e) => bad(e),
        },
        p if p.ends_with("/nli") => match serde_json::from_slice::<NliRequest>(body) {
            Ok(req) => ok(serde_json::to_string(
                &LexicalOverlapNli
                    .infer(&req.premise, &req.hypothesis)
                    .unwrap(),
            )),
            Err(e) => bad(e),
        },
        p if p.ends_with("/generate") => match serde_json::from_slice::<GenerationRequest>(body) {
            Ok(req) => ok(serde_json::to_string(&GenerateResponse {
                text: PhrasebookGenerator::default().complete(&req).unwrap(),
            })),
            Err(e) => bad(e),
        },
        p if p.ends_with("/score") => match serde_json::from_slice::<ScoreRequest>(body) {
            Ok(req) => ok(serde_json::to_string(
                &UniformScorer::default().score_tokens(&req.text).unwrap(),
            )),
            Err(e) => bad(e),
        },
        _ => (404, "\"no such endpoint\"".to_string()),
    }
}

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_dramanet")
}
