//! Shared fixtures: a local chat-completions stub and small synthetic worlds.
#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use llmhd::scorer::EndpointConfig;
use llmhd::synth::{SyntheticWorld, WorldParams};

type Responder = dyn Fn(usize, &str) -> (u16, String) + Send + Sync;

/// A minimal HTTP/1.1 server answering every request through `respond`,
/// which receives the zero-based request number and the request body.
pub struct Stub {
    pub base_url: String,
    hits: Arc<AtomicUsize>,
}

impl Stub {
    pub fn spawn(respond: impl Fn(usize, &str) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub");
        let addr = listener.local_addr().unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let respond: Arc<Responder> = Arc::new(respond);
        let counter = hits.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let respond = respond.clone();
                let counter = counter.clone();
                std::thread::spawn(move || serve(stream, &*respond, &counter));
            }
        });
        Self {
            base_url: format!("http://{addr}/v1"),
            hits,
        }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn endpoint(&self) -> EndpointConfig {
        EndpointConfig {
            base_url: self.base_url.clone(),
            model_name: "stub".into(),
            timeout_ms: 5_000,
            max_retries: 2,
            backoff_ms: 1,
            auth_env: None,
            parallelism: 4,
            ..EndpointConfig::default()
        }
    }
}

fn serve(stream: TcpStream, respond: &Responder, hits: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut length = 0usize;
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((name, value)) = l.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    let n = hits.fetch_add(1, Ordering::SeqCst);
    let (status, reply) = respond(n, &String::from_utf8_lossy(&body));
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} STUB\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
    let _ = stream.flush();
}

pub fn completion(content: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] }).to_string()
}

/// Canned XML replies: a fixed preference for summaries and refinements,
/// and a score derived from the prompt text for scoring requests.
pub fn canned(body: &str) -> (u16, String) {
    let content = if body.contains("summarized preference") {
        "<preference>Enjoys well reviewed catalogue items.</preference>".to_string()
    } else if body.contains("updated preference") {
        "<preference>Enjoys well reviewed catalogue items, with caveats.</preference>".to_string()
    } else {
        let h = body.bytes().fold(7u32, |h, b| h.wrapping_mul(31).wrapping_add(u32::from(b)));
        format!("The item matches partially.\n<score>{}</score>\n<reason>stub</reason>", 1 + h % 10)
    };
    (200, completion(&content))
}

pub fn small_world(seed: u64) -> SyntheticWorld {
    SyntheticWorld::generate(&WorldParams {
        users: 100,
        items: 120,
        dim: 6,
        positives_per_user: 10,
        noise_ratio: 0.1,
        seed,
        ..WorldParams::default()
    })
    .expect("feasible world")
}

pub fn desk_world(noise: f64, seed: u64) -> SyntheticWorld {
    SyntheticWorld::generate(&WorldParams {
        noise_ratio: noise,
        seed,
        ..WorldParams::default()
    })
    .expect("feasible world")
}
