//! Starts the HTTP service on an ephemeral port, drives it with a client and
//! shuts it down.
//!
//! ```bash
//! cargo run --example serve_api
//! ```

use pneumoscan::http::{bind, open_service, router, ServeConfig};
use pneumoscan::{GrayImage, ScoringConfig};
use serde_json::{json, Value};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let cfg = ServeConfig {
        store_dir: dir.path().to_path_buf(),
        host: "127.0.0.1".into(),
        port: 0,
        scoring: ScoringConfig::default(),
        model: None,
    };
    let listener = bind(&cfg.host, cfg.port).await?;
    let base = format!("http://{}", listener.local_addr()?);
    let app = router(open_service(&cfg)?);
    let server = tokio::spawn(async move { axum::serve(listener, app).await });
    println!("listening on {base}");

    let client = reqwest::Client::new();
    let patient: Value = client
        .post(format!("{base}/patients"))
        .json(&json!({"age": 82, "comorbidities": [{"name": "diabetes", "severity": "moderate"}]}))
        .send()
        .await?
        .json()
        .await?;
    let id = patient["patient_id"].as_str().unwrap_or_default();
    println!("POST /patients -> {id}");

    let tiles: Vec<_> = (0..9).map(|k| if k < 3 { [0.1, 0.1, 0.8] } else { [0.1, 0.8, 0.1] }).collect();
    let form = reqwest::multipart::Form::new()
        .part("image", reqwest::multipart::Part::bytes(GrayImage::filled("x", 64, 64, 90)?.to_png()?).file_name("scan.png"))
        .text("options", json!({"classifier": {"external": {"tiles": tiles}}}).to_string());
    let exam: Value = client.post(format!("{base}/patients/{id}/exams")).multipart(form).send().await?.json().await?;
    println!("POST /patients/{{id}}/exams -> N = {}", exam["contamination"]["N"]);

    let risk: Value = client.get(format!("{base}/patients/{id}/risk")).send().await?.json().await?;
    println!("GET /patients/{{id}}/risk -> {}", serde_json::to_string_pretty(&risk)?);

    let what_if: Value = client
        .post(format!("{base}/patients/{id}/what-if"))
        .json(&json!({"moderate_delta": -1}))
        .send()
        .await?
        .json()
        .await?;
    println!("POST /patients/{{id}}/what-if -> F = {}", what_if["f"]);

    server.abort();
    Ok(())
}
