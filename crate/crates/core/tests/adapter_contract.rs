//! Adapter contract: every backend must satisfy the same observable rules.
//! The suite runs against the in-process stubs, against the HTTP adapter
//! talking to a local mock server, and against an external model server when
//! `DRAMANET_CONTRACT_URL` is set.

mod common;

use std::time::Duration;

use common::{spawn, Fault};
use dramanet::adapters::http::{EndpointPaths, HttpAdapter, HttpConfig};
use dramanet::adapters::stub::{
    KeywordSentiment, LexicalOverlapNli, PhrasebookGenerator, UniformScorer,
};
use dramanet::adapters::{
    AdapterError, GenerationAdapter, GenerationRequest, HistoryEntry, NliAdapter, ScoreAdapter,
    SentimentAdapter,
};
use dramanet::{Role, SentimentLabel};

fn texts(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn request(cluster: SentimentLabel, max_new_tokens: u32) -> GenerationRequest {
    GenerationRequest {
        cluster,
        history: vec![
            HistoryEntry {
                role: Role::Other,
                text: "Are you coming tonight?".into(),
            },
            HistoryEntry {
                role: Role::Focus,
                text: "Maybe.".into(),
            },
            HistoryEntry {
                role: Role::Other,
                text: "Please come.".into(),
            },
        ],
        max_new_tokens,
    }
}

fn check_sentiment(a: &dyn SentimentAdapter) {
    let input = texts(&[
        "I love this wonderful day",
        "The bus leaves at five",
        "I hate you",
    ]);
    let out = a.sentiment(&input).unwrap();
    assert_eq!(out.len(), input.len());
    for p in &out {
        let sum: f64 = p.probs.iter().sum();
        assert!(
            (sum - 1.0).abs() <= 1e-6,
            "probs {:?} sum to {sum}",
            p.probs
        );
        assert!(p.probs.iter().all(|x| (0.0..=1.0).contains(x)));
        let max = p.probs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(p.probs[p.label.index()], max, "label is not the argmax");
    }
    assert!(a.sentiment(&[]).unwrap().is_empty());
    assert!(matches!(
        a.sentiment(&texts(&["fine", "  "])),
        Err(AdapterError::InvalidInput(_))
    ));
}

fn check_nli(a: &dyn NliAdapter) {
    let t = a
        .nli("The cat sat on the mat. It was warm.", "The cat was cold.")
        .unwrap();
    t.validate().unwrap();
    assert!(matches!(a.nli("", "x"), Err(AdapterError::InvalidInput(_))));
    assert!(matches!(
        a.nli("x", " "),
        Err(AdapterError::InvalidInput(_))
    ));
}

fn check_generate(a: &dyn GenerationAdapter) {
    for cluster in SentimentLabel::ALL {
        let text = a.generate(&request(cluster, 32)).unwrap();
        assert!(!text.trim().is_empty());
        assert!(!text.contains('\n'), "utterance spans lines: {text:?}");
        assert_eq!(text, text.trim());
    }
    assert!(matches!(
        a.generate(&request(SentimentLabel::Neutral, 0)),
        Err(AdapterError::InvalidInput(_))
    ));
}

fn check_score(a: &dyn ScoreAdapter) {
    let s = a.score("I went to the station earlier.").unwrap();
    assert!(s.tokens > 0);
    assert!(s.total_log_probability <= 0.0);
    let ppl = s.perplexity();
    assert!(ppl.is_finite() && ppl >= 1.0, "perplexity {ppl}");
    assert!(matches!(a.score("   "), Err(AdapterError::InvalidInput(_))));
}

fn quick_http(url: &str) -> HttpAdapter {
    HttpAdapter::new(HttpConfig {
        timeout: Duration::from_secs(5),
        backoff: Duration::from_millis(1),
        ..HttpConfig::new(url)
    })
    .unwrap()
}

#[test]
fn stubs_satisfy_contract() {
    check_sentiment(&KeywordSentiment::default());
    check_nli(&LexicalOverlapNli);
    check_generate(&PhrasebookGenerator::default());
    check_score(&UniformScorer::default());
}

#[test]
fn http_adapter_satisfies_contract() {
    let server = spawn(Fault::None);
    let a = quick_http(&server.url);
    check_sentiment(&a);
    check_nli(&a);
    check_generate(&a);
    check_score(&a);
}

#[test]
fn external_server_satisfies_contract() {
    let Ok(url) = std::env::var("DRAMANET_CONTRACT_URL") else {
        eprintln!("DRAMANET_CONTRACT_URL not set; external contract run skipped");
        return;
    };
    let a = HttpAdapter::new(HttpConfig::new(url)).unwrap();
    check_sentiment(&a);
    check_nli(&a);
    check_generate(&a);
    check_score(&a);
}

#[test]
fn http_round_trip_matches_direct_backend() {
    let server = spawn(Fault::None);
    let a = quick_http(&server.url);
    let input = texts(&["lovely", "meh", "awful"]);
    assert_eq!(
        a.sentiment(&input).unwrap(),
        KeywordSentiment::default().sentiment(&input).unwrap()
    );
    assert_eq!(
        a.nli("the cat sat", "the dog sat").unwrap(),
        LexicalOverlapNli.nli("the cat sat", "the dog sat").unwrap()
    );
    let req = request(SentimentLabel::Negative, 16);
    assert_eq!(
        a.generate(&req).unwrap(),
        PhrasebookGenerator::default().generate(&req).unwrap()
    );
    assert_eq!(
        a.score("a b c").unwrap(),
        UniformScorer::default().score("a b c").unwrap()
    );
}

#[test]
fn server_errors_are_retried_with_backoff() {
    let server = spawn(Fault::FailFirst(2));
    let a = quick_http(&server.url);
    assert!(a.score("one two").is_ok());
    assert_eq!(server.hits(), 3);
}

#[test]
fn retries_are_bounded() {
    let server = spawn(Fault::FailFirst(100));
    let a = quick_http(&server.url);
    let e = a.score("one two").unwrap_err();
    assert!(matches!(e, AdapterError::Transport(_)), "{e:?}");
    assert_eq!(server.hits(), 4, "one attempt plus three retries");
}

#[test]
fn client_errors_are_not_retried() {
    let server = spawn(Fault::Status(422));
    let a = quick_http(&server.url);
    let e = a.nli("p", "h").unwrap_err();
    assert!(matches!(e, AdapterError::Protocol(_)), "{e:?}");
    assert_eq!(server.hits(), 1);
}

#[test]
fn malformed_and_misshapen_bodies_are_protocol_errors() {
    for fault in [Fault::Malformed, Fault::WrongShape] {
        let server = spawn(fault);
        let a = quick_http(&server.url);
        assert!(matches!(a.score("x y"), Err(AdapterError::Protocol(_))));
        assert!(matches!(
            a.sentiment(&texts(&["x"])),
            Err(AdapterError::Protocol(_))
        ));
        assert!(matches!(
            a.generate(&request(SentimentLabel::Positive, 4)),
            Err(AdapterError::Protocol(_))
        ));
        assert_eq!(server.hits(), 3);
    }
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let e = quick_http(&url).score("x").unwrap_err();
    assert!(matches!(e, AdapterError::Transport(_)), "{e:?}");
}

#[test]
fn slow_server_times_out() {
    let server = spawn(Fault::Delay(Duration::from_millis(800)));
    let a = HttpAdapter::new(HttpConfig {
        timeout: Duration::from_millis(100),
        max_retries: 0,
        ..HttpConfig::new(server.url.clone())
    })
    .unwrap();
    assert!(matches!(a.score("x"), Err(AdapterError::Transport(_))));
}

#[test]
fn endpoint_paths_are_configurable() {
    let server = spawn(Fault::None);
    let paths = EndpointPaths {
        sentiment: "/v2/sentiment".into(),
        nli: "/v2/nli".into(),
        generate: "/v2/generate".into(),
        score: "/v2/score".into(),
    };
    let a = HttpAdapter::new(HttpConfig {
        paths,
        ..HttpConfig::new(format!("{}/", server.url))
    })
    .unwrap();
    check_score(&a);
    check_nli(&a);
}
