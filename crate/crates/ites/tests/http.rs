use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use ites::http::router;
use ites::store::{fixed_clock, Store};
use ites::synth::{gen_scenario, write_scenario};
use serde_json::{json, Value};
use tower::ServiceExt;

const TS: &str = "2026-03-01T12:00:00Z";

fn app(data: &Path) -> Router {
    router(Store::open(data).unwrap().with_clock(fixed_clock(TS)))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<&str>) -> (StatusCode, String) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, String::from_utf8(bytes.to_vec()).unwrap())
}

async fn json_call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let text = body.map(|b| b.to_string());
    let (status, out) = call(app, method, uri, text.as_deref()).await;
    (status, serde_json::from_str(&out).unwrap_or(Value::String(out)))
}

fn scenario(root: &Path, name: &str) -> PathBuf {
    let dir = root.join(name);
    write_scenario(&gen_scenario(name, 0).unwrap(), &dir).unwrap();
    dir
}

/// The review steps of the pick-bring-place walkthrough, in order.
fn steps(id: &str) -> Vec<(Method, String, Option<Value>)> {
    let s = |m, p: &str, b| (m, format!("/sessions/{id}{p}"), b);
    vec![
        s(Method::POST, "/segments/0/ignore", None),
        s(Method::POST, "/segments/7/ignore", None),
        s(Method::POST, "/segments/merge", Some(json!({"first": 3, "second": 4}))),
        s(Method::POST, "/segments/confirm", None),
        s(Method::PUT, "/segments/1/transcript", Some(json!({"text": "Grasp the box."}))),
        s(Method::POST, "/transcripts/confirm", None),
    ]
}

async fn create(app: &Router, bundle: &Path) -> String {
    let (status, v) = json_call(app, Method::POST, "/sessions", Some(json!({"bundle": bundle}))).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn scripted_walkthrough() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = scenario(tmp.path(), "pick_bring_place");
    let app = app(&tmp.path().join("data"));

    let id = create(&app, &bundle).await;
    let (status, v) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["phase"], "segmented");
    assert_eq!(v["segments"].as_array().unwrap().len(), 8);
    assert_eq!(v["segments"][1]["status"], "active");

    let (status, v) =
        json_call(&app, Method::POST, &format!("/sessions/{id}/segments/merge"), Some(json!({"first": 0, "second": 2}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["code"], "conflict");
    assert_eq!(v["detail"]["rule"], "not_adjacent");
    assert!(v["message"].as_str().unwrap().contains("not adjacent"));

    let (status, v) = json_call(&app, Method::POST, &format!("/sessions/{id}/compile"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["detail"]["phase"], "segmented");

    for (method, uri, body) in steps(&id) {
        let (status, v) = json_call(&app, method, &uri, body).await;
        assert_eq!(status, StatusCode::OK, "{uri}: {v}");
    }
    let (_, v) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(v["phase"], "transcripts_confirmed");
    assert_eq!(v["segments"][1]["transcript"], "Grasp the box.");

    let (status, v) = json_call(&app, Method::POST, &format!("/sessions/{id}/compile"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let labels: Vec<&str> = v["steps"].as_array().unwrap().iter().map(|s| s["label"].as_str().unwrap()).collect();
    assert_eq!(labels, ["Grasp", "PTG11", "PTG12", "PTG13", "Release"]);
    assert_eq!(v["steps"][0]["object_name"], "box");

    let (status, text) = call(&app, Method::GET, &format!("/sessions/{id}/taskmodel"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(text, v["model"].as_str().unwrap());
    assert!(text.contains(TS));

    let (status, csv) = call(&app, Method::GET, &format!("/sessions/{id}/signal"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(csv.starts_with("frame_index,raw,deoutliered,filtered,is_stop\n"));
    assert_eq!(csv.lines().count(), 675);
}

#[tokio::test]
async fn error_mapping() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = scenario(tmp.path(), "throw_away");
    let app = app(&tmp.path().join("data"));

    let (status, v) = json_call(&app, Method::GET, "/sessions/s9999", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["code"], "not_found");
    let (status, _) = json_call(&app, Method::GET, "/sessions/..%2F..", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = json_call(&app, Method::GET, "/nowhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, v) = json_call(&app, Method::POST, "/sessions", Some(json!({"bundle": "/no/such/dir"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["detail"]["rule"], "bundle_not_found");
    let (status, v) = json_call(&app, Method::POST, "/sessions", Some(json!({"path": "x"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["code"], "bad_request");

    let id = create(&app, &bundle).await;
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/segments/merge"), Some("{")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/segments/x/ignore"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, v) = json_call(&app, Method::POST, &format!("/sessions/{id}/segments/40/ignore"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["detail"]["rule"], "out_of_range");
    let (status, v) = json_call(&app, Method::GET, &format!("/sessions/{id}/taskmodel"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["detail"]["rule"], "wrong_phase");

    for i in [0, 2, 3, 4] {
        json_call(&app, Method::POST, &format!("/sessions/{id}/segments/{i}/ignore"), None).await;
    }
    let (status, v) = json_call(&app, Method::POST, &format!("/sessions/{id}/segments/confirm"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["detail"]["rule"], "too_few_segments");
}

#[tokio::test]
async fn grammar_failure_then_fix() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = scenario(tmp.path(), "pick_bring_place");
    let app = app(&tmp.path().join("data"));
    let id = create(&app, &bundle).await;
    let mut script = steps(&id);
    script[4].2 = Some(json!({"text": "Pick up the box."}));
    for (method, uri, body) in script {
        assert_eq!(json_call(&app, method, &uri, body).await.0, StatusCode::OK);
    }
    let (status, v) = json_call(&app, Method::POST, &format!("/sessions/{id}/compile"), None).await;
    assert_eq!(status, StatusCode::CONFLICT, "{v}");
    assert_eq!(v["detail"]["rule"], "gmr_violation");
    assert_eq!(v["detail"]["violations"][0]["rule"], "must_start_with_grasp");
    assert_eq!(v["detail"]["violations"][0]["position"], 0);

    let (_, v) = json_call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(v["phase"], "failed");
    assert_eq!(v["failure"]["error"]["detail"]["rule"], "gmr_violation");

    for (m, p, b) in [
        (Method::POST, "/revert", None),
        (Method::POST, "/transcripts/reopen", None),
        (Method::PUT, "/segments/1/transcript", Some(json!({"text": "Grab the box."}))),
        (Method::POST, "/transcripts/confirm", None),
    ] {
        let (status, v) = json_call(&app, m, &format!("/sessions/{id}{p}"), b).await;
        assert_eq!(status, StatusCode::OK, "{p}: {v}");
    }
    let (status, v) = json_call(&app, Method::POST, &format!("/sessions/{id}/compile"), None).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["steps"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn restart_between_calls_keeps_the_model() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = scenario(tmp.path(), "pick_bring_place");

    let straight = app(&tmp.path().join("a"));
    let id = create(&straight, &bundle).await;
    for (m, u, b) in steps(&id) {
        json_call(&straight, m, &u, b).await;
    }
    let (_, expected) = json_call(&straight, Method::POST, &format!("/sessions/{id}/compile"), None).await;

    let data = tmp.path().join("b");
    let id = create(&app(&data), &bundle).await;
    for (m, u, b) in steps(&id) {
        // A fresh service per request: nothing survives but the store.
        assert_eq!(json_call(&app(&data), m, &u, b).await.0, StatusCode::OK);
    }
    let (status, v) = json_call(&app(&data), Method::POST, &format!("/sessions/{id}/compile"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["model"], expected["model"]);
    let (_, text) = call(&app(&data), Method::GET, &format!("/sessions/{id}/taskmodel"), None).await;
    assert_eq!(text, expected["model"].as_str().unwrap());
}

#[tokio::test]
async fn cli_and_http_compile_the_same_model() {
    let tmp = tempfile::tempdir().unwrap();
    let bundle = scenario(tmp.path(), "pick_bring_place");
    let data = tmp.path().join("data");
    let app = app(&data);
    let id = create(&app, &bundle).await;
    for (m, u, b) in steps(&id) {
        json_call(&app, m, &u, b).await;
    }
    let (_, http) = json_call(&app, Method::POST, &format!("/sessions/{id}/compile"), None).await;

    let from = data.join(&id);
    let to = tmp.path().join("cli").join("copy");
    fs::create_dir_all(&to).unwrap();
    fs::copy(from.join("bundle"), to.join("bundle")).unwrap();
    let log = fs::read_to_string(from.join("audit.log")).unwrap();
    let without_compile: String = log.lines().filter(|l| l.split('\t').nth(1) != Some("compile")).map(|l| format!("{l}\n")).collect();
    assert_eq!(without_compile.lines().count() + 1, log.lines().count());
    fs::write(to.join("audit.log"), without_compile).unwrap();

    let out = Command::new(env!("CARGO_BIN_EXE_ites")).args(["compile", to.to_str().unwrap(), "--at", TS]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let path = String::from_utf8(out.stdout).unwrap();
    let cli = fs::read_to_string(path.trim()).unwrap();
    assert_eq!(cli, http["model"].as_str().unwrap());
}
