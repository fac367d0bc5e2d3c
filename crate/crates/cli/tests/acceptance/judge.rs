use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use tabreward::judge::{JudgeClient, JudgeConfig, JudgeRequest, PROMPT_EXAMPLES};

use crate::Check;

#[derive(Default)]
struct Stats {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    served: AtomicUsize,
    unauthorized: AtomicUsize,
}

/// Value following `key` in the task block of a rendered prompt.
fn field<'a>(task: &'a str, key: &str) -> Option<&'a str> {
    task.lines().rev().find_map(|l| l.strip_prefix(key)).map(str::trim)
}

/// Scripted reply: the label of the matching prompt example, "No" otherwise.
fn reply_for(prompt: &str) -> &'static str {
    let task = prompt.rsplit("# YOUR TASK").next().unwrap_or("");
    let (cand, gold) = (field(task, "Candidate Answer:"), field(task, "Correct Answer:"));
    PROMPT_EXAMPLES
        .iter()
        .find(|(_, c, g, _)| Some(*c) == cand && Some(*g) == gold)
        .map_or("No", |(_, _, _, label)| if *label == 1 { "Yes" } else { "No" })
}

fn serve(stats: Arc<Stats>) -> String {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind mock endpoint");
    let addr = server.server_addr().to_ip().expect("tcp address");
    std::thread::spawn(move || {
        for mut req in server.incoming_requests() {
            let stats = Arc::clone(&stats);
            std::thread::spawn(move || {
                let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                stats.peak.fetch_max(now, Ordering::SeqCst);
                let authorized = req
                    .headers()
                    .iter()
                    .any(|h| h.field.equiv("Authorization") && h.value.as_str() == "Bearer acceptance-key");
                if !authorized {
                    stats.unauthorized.fetch_add(1, Ordering::SeqCst);
                }
                let mut body = String::new();
                let _ = req.as_reader().read_to_string(&mut body);
                let v: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
                let prompt = v.pointer("/messages/0/content").and_then(|c| c.as_str()).unwrap_or("");
                std::thread::sleep(Duration::from_millis(15));
                let reply = serde_json::json!({
                    "choices": [{"message": {"role": "assistant", "content": reply_for(prompt)}}]
                });
                stats.served.fetch_add(1, Ordering::SeqCst);
                stats.in_flight.fetch_sub(1, Ordering::SeqCst);
                let _ = req.respond(tiny_http::Response::from_string(reply.to_string()));
            });
        }
    });
    format!("http://{addr}/v1/chat/completions")
}

pub fn run() -> Check {
    let stats = Arc::new(Stats::default());
    let cfg = JudgeConfig {
        endpoint_url: serve(Arc::clone(&stats)),
        max_in_flight: 4,
        timeout_s: 10.0,
        backoff_ms: 10,
        api_key: Some("acceptance-key".into()),
        ..JudgeConfig::default()
    };
    let bound = cfg.max_in_flight;
    let client = JudgeClient::http(cfg).map_err(|e| e.to_string())?;

    for (q, cand, gold, label) in PROMPT_EXAMPLES {
        let req = JudgeRequest::new(q, cand, gold).map_err(|e| e.to_string())?;
        let v = client.judge_request(&req).map_err(|e| e.to_string())?;
        ensure!(v.requests == 1, "{cand} / {gold}: {} requests", v.requests);
        ensure!(v.value == label, "{cand} / {gold}: verdict {} but labeled {label}", v.value);
    }

    stats.peak.store(0, Ordering::SeqCst);
    let before = stats.served.load(Ordering::SeqCst);
    let results: Vec<Result<u8, String>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..100)
            .map(|i| {
                let client = &client;
                s.spawn(move || {
                    let req = JudgeRequest::new("How many rows?", &format!("{i} rows"), "none").map_err(|e| e.to_string())?;
                    client.judge_request(&req).map(|v| v.value).map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("burst thread")).collect()
    });
    for r in &results {
        ensure!(r.as_ref().is_ok_and(|v| *v == 0), "burst request failed: {r:?}");
    }
    let served = stats.served.load(Ordering::SeqCst) - before;
    let peak = stats.peak.load(Ordering::SeqCst);
    ensure!(served == 100, "endpoint served {served} of 100 burst requests");
    ensure!(peak <= bound, "{peak} requests in flight, bound {bound}");
    ensure!(stats.unauthorized.load(Ordering::SeqCst) == 0, "requests without the bearer credential");
    Ok(format!("5/5 example verdicts; burst of 100 peaked at {peak} in flight (bound {bound})"))
}
