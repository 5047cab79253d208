//! Wire-protocol behavior of the served oracle: endpoint semantics, error
//! tags, ledger-log persistence, and exact accounting under concurrency.

use std::sync::Arc;

use mex_core::data::pattern_dataset;
use mex_core::nn::{build_network, ClassifierArch, NetworkSpec, Role};
use mex_core::oracle::{LedgerLog, QueryLedger, SharedLedger, VictimModel};
use mex_serve::{encode_images, serve_on, ErrorResponse, QueryResponse, ServeCtx};

fn test_victim() -> VictimModel {
    let spec = NetworkSpec::classifier_32(Role::Victim, 1, 10, ClassifierArch::Small);
    let mut rng = mex_core::rng::seed_rng(77);
    VictimModel {
        net: build_network(&spec, &mut rng).unwrap(),
        num_classes: 10,
        input_shape: (1, 32, 32),
        train_accuracy: 0.0,
        target_shortfall: false,
        epochs_trained: 0,
    }
}

fn start_server(budget: Option<u64>, log: Option<LedgerLog>) -> (String, Arc<tokio::runtime::Runtime>) {
    let rt = Arc::new(tokio::runtime::Runtime::new().unwrap());
    let ctx = Arc::new(ServeCtx {
        victim: test_victim(),
        ledger: SharedLedger::new(QueryLedger::new(budget), log),
    });
    let (addr, _handle) = rt
        .block_on(serve_on("127.0.0.1:0".parse().unwrap(), ctx))
        .unwrap();
    (format!("http://{addr}"), rt)
}

#[test]
fn hard_and_soft_queries_round_trip() {
    let (base, _rt) = start_server(Some(1000), None);
    let client = reqwest::blocking::Client::new();
    let batch = pattern_dataset(8, 5).images;
    let (images, shape) = encode_images(&batch);

    let hard: QueryResponse = client
        .post(format!("{base}/v1/query"))
        .json(&serde_json::json!({"mode": "hard", "images": images, "shape": shape}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let labels = hard.labels.expect("hard mode returns labels");
    assert_eq!(labels.len(), 8);
    assert!(hard.probs.is_none(), "hard endpoint must not leak scores");
    assert_eq!(hard.queries_used, 8);
    assert_eq!(hard.budget_remaining, Some(992));

    let soft: QueryResponse = client
        .post(format!("{base}/v1/query"))
        .json(&serde_json::json!({"mode": "soft", "images": images, "shape": shape}))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let probs = soft.probs.expect("soft mode returns probabilities");
    assert_eq!(probs.len(), 8);
    for (row, &label) in probs.iter().zip(labels.iter()) {
        let sum: f32 = row.iter().sum();
        assert!((sum - 1.0).abs() < 1e-5);
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, label, "hard label must equal soft argmax");
    }
    assert_eq!(soft.queries_used, 16);
}

#[test]
fn bad_shape_and_bad_payload_are_400() {
    let (base, _rt) = start_server(None, None);
    let client = reqwest::blocking::Client::new();
    let batch = pattern_dataset(2, 5).images;
    let (images, _) = encode_images(&batch);

    // wrong channel count
    let resp = client
        .post(format!("{base}/v1/query"))
        .json(&serde_json::json!({"mode": "hard", "images": images, "shape": [2, 3, 32, 32]}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    let err: ErrorResponse = resp.json().unwrap();
    assert_eq!(err.error, "bad_shape");

    // byte count disagrees with shape
    let resp = client
        .post(format!("{base}/v1/query"))
        .json(&serde_json::json!({"mode": "hard", "images": images, "shape": [3, 1, 32, 32]}))
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
}

#[test]
fn budget_exhaustion_is_429_and_does_not_leak_charges() {
    let (base, _rt) = start_server(Some(10), None);
    let client = reqwest::blocking::Client::new();
    let batch = pattern_dataset(8, 5).images;
    let (images, shape) = encode_images(&batch);
    let post = || {
        client
            .post(format!("{base}/v1/query"))
            .json(&serde_json::json!({"mode": "hard", "images": images, "shape": shape}))
            .send()
            .unwrap()
    };
    assert_eq!(post().status().as_u16(), 200);
    // 2 remaining: the whole batch of 8 bounces
    let resp = post();
    assert_eq!(resp.status().as_u16(), 429);
    let err: ErrorResponse = resp.json().unwrap();
    assert_eq!(err.error, "budget_exhausted");

    let stats: QueryLedger = client
        .get(format!("{base}/v1/stats"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(stats.used(), 8);
}

#[test]
fn ledger_log_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ledger.log");
    {
        let (base, _rt) = start_server(Some(100), Some(LedgerLog::create(&path).unwrap()));
        let client = reqwest::blocking::Client::new();
        let batch = pattern_dataset(4, 5).images;
        let (images, shape) = encode_images(&batch);
        for _ in 0..3 {
            let resp = client
                .post(format!("{base}/v1/query"))
                .json(&serde_json::json!({"mode": "hard", "images": images, "shape": shape}))
                .send()
                .unwrap();
            assert_eq!(resp.status().as_u16(), 200);
        }
    }
    // replay: totals survive the restart
    let replayed = LedgerLog::replay(&path, Some(100)).unwrap();
    assert_eq!(replayed.used(), 12);
    assert_eq!(replayed.phase(mex_serve::SERVE_PHASE), 12);
}
