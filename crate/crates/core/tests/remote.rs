use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

use seqquery::estimators::{importance_sampling, Allocation, EstimateError};
use seqquery::model::remote::{encode_logp, Hello, WireRequest, WireResponse};
use seqquery::model::{NGramModel, RemoteModel, Tokenization};
use seqquery::query::{a_before_b, count, hitting_time, kth_marginal};
use seqquery::rng::Substreams;
use seqquery::{History, ModelError, SequenceModel};

const TRANSCRIPT: &str = include_str!("../../../protocol/golden_transcript.txt");

fn transcript() -> Vec<(char, String)> {
    TRANSCRIPT
        .lines()
        .map(|l| {
            let (dir, body) = l.split_at(2);
            (dir.chars().next().unwrap(), body.to_string())
        })
        .collect()
}

fn ababab() -> NGramModel {
    NGramModel::fit_text("ababab", 1, 0.0, Tokenization::Char).unwrap()
}

fn listener() -> (TcpListener, String) {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap().to_string();
    (l, addr)
}

/// Replays the server half of the transcript, checking every client line.
fn replay_server(l: TcpListener) -> thread::JoinHandle<Vec<String>> {
    thread::spawn(move || {
        let (stream, _) = l.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut received = Vec::new();
        for (dir, body) in transcript() {
            if dir == '>' {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                received.push(line.trim_end_matches('\n').to_string());
            } else {
                writer.write_all(format!("{body}\n").as_bytes()).unwrap();
            }
        }
        received
    })
}

fn respond(model: &dyn SequenceModel, line: &str) -> String {
    let v: serde_json::Value = serde_json::from_str(line).unwrap();
    if v.get("op").and_then(|o| o.as_str()) == Some("batch") {
        let reqs: Vec<WireRequest> = serde_json::from_value(v["requests"].clone()).unwrap();
        let resps: Vec<WireResponse> = reqs.iter().map(|r| answer(model, r)).collect();
        return serde_json::json!({ "responses": resps }).to_string();
    }
    let req: WireRequest = serde_json::from_value(v).unwrap();
    serde_json::to_string(&answer(model, &req)).unwrap()
}

fn answer(model: &dyn SequenceModel, req: &WireRequest) -> WireResponse {
    match model.evaluate(&req.history, &req.prefix) {
        Ok(d) => WireResponse { id: Some(req.id), logp: Some(encode_logp(d.log_probs())), error: None },
        Err(e) => WireResponse { id: Some(req.id), logp: None, error: Some(e.to_string()) },
    }
}

/// Serves `model` on one connection; gives up after `limit` requests.
fn model_server<M: SequenceModel + 'static>(l: TcpListener, model: M, name: &str, limit: Option<usize>) -> thread::JoinHandle<()> {
    let hello = serde_json::to_string(&Hello { vocab: model.vocab().size(), model: name.to_string() }).unwrap();
    thread::spawn(move || {
        let (stream, _) = l.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        let mut served = 0;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            let out = if line.contains("\"op\":\"hello\"") {
                hello.clone()
            } else {
                if limit.is_some_and(|n| served >= n) {
                    let _ = writer.shutdown(std::net::Shutdown::Both);
                    return;
                }
                served += 1;
                respond(&model, line.trim_end())
            };
            writer.write_all(format!("{out}\n").as_bytes()).unwrap();
        }
    })
}

#[test]
fn client_reproduces_golden_transcript() {
    let (l, addr) = listener();
    let server = replay_server(l);
    let remote = RemoteModel::connect_tcp(&addr).unwrap();
    assert_eq!(remote.vocab().size(), 2);
    assert_eq!(remote.name(), "remote:ngram");

    let d1 = remote.next(&History::new(vec![0]), &[]).unwrap();
    assert_eq!(d1.probs(), vec![0.0, 1.0]);
    let d2 = remote.next(&History::new(vec![0]), &[1]).unwrap();
    assert_eq!(d2.probs(), vec![1.0, 0.0]);
    let batch = remote.next_batch(&[(vec![], vec![0, 1]), (vec![1, 0], vec![])]).unwrap();
    assert_eq!(batch[0].probs(), vec![1.0, 0.0]);
    assert_eq!(batch[1].probs(), vec![0.0, 1.0]);
    assert_eq!(remote.calls(), 4);

    let expected: Vec<String> = transcript().into_iter().filter(|(d, _)| *d == '>').map(|(_, b)| b).collect();
    assert_eq!(server.join().unwrap(), expected);
}

#[test]
fn in_process_model_reproduces_server_lines() {
    let m = ababab();
    let hello = serde_json::to_string(&Hello { vocab: m.vocab().size(), model: "ngram".into() }).unwrap();
    let lines = transcript();
    assert_eq!(lines[1].1, hello);
    for pair in lines.chunks(2).skip(1) {
        assert_eq!(pair[0].0, '>');
        assert_eq!(respond(&m, &pair[0].1), pair[1].1);
    }
}

#[test]
fn error_response_is_reported() {
    let (l, addr) = listener();
    let server = thread::spawn(move || {
        let (stream, _) = l.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut writer = stream;
        for reply in [r#"{"V":3,"model":"x"}"#, r#"{"id":1,"error":"boom"}"#, r#"{"id":7,"logp":[0.0,-1e9,-1e9]}"#] {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            writeln!(writer, "{reply}").unwrap();
        }
    });
    let remote = RemoteModel::connect_tcp(&addr).unwrap();
    assert!(matches!(remote.next(&History::empty(), &[]), Err(ModelError::Remote(e)) if e == "boom"));
    assert!(matches!(remote.next(&History::empty(), &[]), Err(ModelError::Remote(_))));
    assert!(matches!(remote.next(&History::empty(), &[5]), Err(ModelError::Query(_))));
    server.join().unwrap();
}

#[test]
fn remote_is_matches_in_process_is() {
    let text = "the quick brown fox jumps over the lazy dog and then the dog sleeps";
    let local = NGramModel::fit_text(text, 2, 1.0, Tokenization::Char).unwrap();
    let (l, addr) = listener();
    let served = NGramModel::from_json(&local.to_json()).unwrap();
    let server = model_server(l, served, "ngram", None);
    let remote = RemoteModel::connect_tcp(&addr).unwrap();
    let v = local.vocab();
    assert_eq!(remote.vocab(), v);

    let history = History::new(local.encode("the d").unwrap());
    let e = local.encode("eo").unwrap();
    let queries = [
        hitting_time(&[e[0]], 3, v).unwrap(),
        hitting_time(&[e[0], e[1]], 4, v).unwrap(),
        kth_marginal(e[1], 3, v).unwrap(),
        count(e[0], 1, 3, v).unwrap(),
        a_before_b(&[e[0]], &[e[1]], 3, v).unwrap(),
    ];
    let mut instances = 0;
    for (i, q) in queries.iter().enumerate() {
        for seed in 0..2u64 {
            let s = Substreams::new(seed * 31 + i as u64);
            let a = importance_sampling(q, &local, &history, 20, Allocation::Equal, &s).unwrap();
            let b = importance_sampling(q, &remote, &history, 20, Allocation::Equal, &s).unwrap();
            assert!((a.value - b.value).abs() <= 1e-9, "{}: {} vs {}", q.label(), a.value, b.value);
            assert_eq!(a.model_calls, b.model_calls);
            instances += 1;
        }
    }
    assert_eq!(instances, 10);
    drop(remote);
    server.join().unwrap();
}

#[test]
fn dropped_server_yields_unavailable_not_estimate() {
    let (l, addr) = listener();
    let server = model_server(l, ababab(), "ngram", Some(5));
    let remote = RemoteModel::connect_tcp(&addr).unwrap();
    let q = hitting_time(&[1], 6, remote.vocab()).unwrap();
    let r = importance_sampling(&q, &remote, &History::new(vec![0]), 10, Allocation::Equal, &Substreams::new(0));
    assert!(
        matches!(r, Err(EstimateError::Model(ModelError::RemoteModelUnavailable(_)))),
        "got {r:?}"
    );
    server.join().unwrap();
}

#[test]
fn dead_stdio_process_yields_unavailable() {
    let script = r#"read line; echo '{"V":2,"model":"x"}'; exit 0"#;
    let remote = RemoteModel::spawn_stdio("sh", &["-c".to_string(), script.to_string()]).unwrap();
    let r = remote.next(&History::empty(), &[]);
    assert!(matches!(r, Err(ModelError::RemoteModelUnavailable(_))), "got {r:?}");
    assert!(matches!(
        RemoteModel::spawn_stdio("/nonexistent/server", &[]),
        Err(ModelError::RemoteModelUnavailable(_))
    ));
}

#[test]
fn connection_refused_is_unavailable() {
    let (l, addr) = listener();
    drop(l);
    assert!(matches!(RemoteModel::connect_tcp(&addr), Err(ModelError::RemoteModelUnavailable(_))));
    let _ = TcpStream::connect(&addr);
}
