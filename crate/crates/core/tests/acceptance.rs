//! Acceptance suite. Run with `--nocapture` to see one line per criterion.

use std::net::TcpListener;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use pneumoscan::aggregation::{build_contamination_matrix, majority_vote};
use pneumoscan::classifier::{forward, train, ClassLabel, ClassProbs, TrainConfig};
use pneumoscan::evaluation::{generate_fixture, metrics, ConfusionMatrix3, Split};
use pneumoscan::gradcheck;
use pneumoscan::imageprep::{split_grid, GrayImage};
use pneumoscan::indicators::{age_score, Age, AgeScoreTable};
use pneumoscan::store;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Outcome = Result<String, String>;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pneumoscan"));
    c.env_remove("PNEUMO_CONFIG");
    c
}

fn simulate() -> Result<(Vec<Value>, Duration), String> {
    let start = Instant::now();
    let out = bin().arg("simulate").output().map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let rows = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).map_err(|e| e.to_string()))
        .collect::<Result<Vec<Value>, _>>()?;
    Ok((rows, elapsed))
}

/// Printed F values and the number of decimals each was printed with.
const PRINTED_F: [(f64, i32); 9] = [
    (0.7166, 4),
    (0.4582, 4),
    (0.8275, 4),
    (1.05, 2),
    (0.7827, 4),
    (0.8893, 4),
    (0.2227, 4),
    (0.3471, 4),
    (0.2276, 4),
];

fn patients_table() -> Outcome {
    let (rows, elapsed) = simulate()?;
    let rows: Vec<_> = rows.iter().filter(|r| r["table"] == "patients").collect();
    if rows.len() != 9 {
        return Err(format!("expected 9 patient rows, got {}", rows.len()));
    }
    let mut notes = Vec::new();
    let mut strict = 0;
    for (row, &(printed, decimals)) in rows.iter().zip(&PRINTED_F) {
        let f = row["f"].as_f64().ok_or("missing f")?;
        let diff = (f - printed).abs();
        let scale = 10f64.powi(decimals);
        let truncated = (f * scale + 1e-9).floor() / scale;
        if diff <= 5e-4 {
            strict += 1;
        } else if (truncated - printed).abs() < 1e-12 {
            notes.push(format!(
                "patient {} printed {printed} at {decimals} dp, computed {f:.5}, |d|={diff:.1e}, truncation matches",
                row["patient"]
            ));
        } else {
            return Err(format!("patient {}: F {f:.6} vs printed {printed} (|d|={diff:.1e})", row["patient"]));
        }
    }
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("simulate took {elapsed:?}"));
    }
    Ok(format!(
        "{strict}/9 within 5e-4, {} by truncation at printed precision; {elapsed:.0?}{}{}",
        9 - strict,
        if notes.is_empty() { "" } else { "; " },
        notes.join("; ")
    ))
}

fn pairs_table() -> Outcome {
    let (rows, elapsed) = simulate()?;
    let rows: Vec<_> = rows.iter().filter(|r| r["table"] == "image_pairs").collect();
    let expected = ["stability", "stability", "stability", "aggravation", "stability"];
    let got: Vec<_> = rows.iter().map(|r| r["branch"].as_str().unwrap_or("?")).collect();
    if got != expected {
        return Err(format!("branches {got:?}"));
    }
    let s2 = rows[3]["s2"].as_f64().unwrap_or(f64::NAN);
    if (s2 - 120.0).abs() > 1e-9 {
        return Err(format!("aggravation S2 {s2}, expected 120"));
    }
    if elapsed >= Duration::from_secs(1) {
        return Err(format!("simulate took {elapsed:?}"));
    }
    Ok(format!("{}; aggravation S2 = {s2}; {elapsed:.0?}", got.join(", ")))
}

fn confusion_reconciliation() -> Outcome {
    let r = metrics(&ConfusionMatrix3::from_counts([[145, 1, 2], [0, 137, 11], [4, 1, 143]])).map_err(|e| e.to_string())?;
    let checks = [
        ("bacteria", r.accuracy(ClassLabel::Bacteria), 97.97),
        ("normal", r.accuracy(ClassLabel::Normal), 92.57),
        ("virus", r.accuracy(ClassLabel::Virus), 96.62),
        ("average", r.average_accuracy, 95.72),
        ("macro", r.macro_accuracy, 95.72),
    ];
    let mut parts = Vec::new();
    for (name, got, want) in checks {
        if (got - want).abs() > 0.01 {
            return Err(format!("{name}: {got:.4} vs {want}"));
        }
        parts.push(format!("{name} {got:.4}"));
    }
    Ok(parts.join(", "))
}

fn age_table() -> Outcome {
    let table = AgeScoreTable::default();
    let rows = [
        (0.0, 0.05), (4.0, 0.05), (9.9, 0.05),
        (10.0, 0.1), (17.0, 0.1),
        (20.0, 0.5), (28.0, 0.5),
        (30.0, 1.0), (36.0, 1.0),
        (40.0, 2.2), (49.0, 2.2),
        (50.0, 7.2), (55.0, 7.2),
        (60.0, 25.5), (67.0, 25.5),
        (70.0, 54.4), (79.5, 54.4),
        (80.0, 100.0), (82.0, 100.0), (104.0, 100.0),
    ];
    for (age, want) in rows {
        let got = age_score(&Age::Years(age), &table).map_err(|e| e.to_string())?;
        if got != want {
            return Err(format!("age {age}: {got} vs {want}"));
        }
    }
    Ok(format!("{} ages across 9 brackets exact", rows.len()))
}

fn gradient_check() -> Outcome {
    let report = gradcheck::run(2024, 5, 20, 1e-5, 1e-4).map_err(|e| e.to_string())?;
    let line = format!(
        "{} coordinates over {} draws, max relative error {:.2e}",
        report.checks.len(),
        report.trials,
        report.max_rel_error
    );
    if report.passed && report.checks.len() >= 100 && report.max_rel_error < 1e-4 {
        Ok(line)
    } else {
        Err(line)
    }
}

fn desk_training() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let start = Instant::now();
    let manifest = generate_fixture(dir.path(), 64, 7).map_err(|e| e.to_string())?;
    let train_set = manifest.load_labeled(Split::Train).map_err(|e| e.to_string())?;
    let test_set = manifest.load_labeled(Split::Test).map_err(|e| e.to_string())?;
    let outcome = train(&train_set, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let mut hits = 0;
    for (img, label) in &test_set {
        if forward(&outcome.params, img).map_err(|e| e.to_string())?.argmax() == *label {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    let acc = 100.0 * hits as f64 / test_set.len() as f64;
    let line = format!("held-out {hits}/{} = {acc:.2}% in {elapsed:.2?}", test_set.len());
    if acc >= 95.0 && elapsed <= Duration::from_secs(60) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn vote_oracle(cells: &[ClassProbs]) -> ClassLabel {
    let order = [ClassLabel::Virus, ClassLabel::Bacteria, ClassLabel::Normal];
    let count = |l: ClassLabel| cells.iter().filter(|c| c.argmax() == l).count();
    let mass = |l: ClassLabel| cells.iter().map(|c| c.get(l)).sum::<f64>();
    let top = order.iter().map(|&l| count(l)).max().unwrap();
    let tied: Vec<_> = order.into_iter().filter(|&l| count(l) == top).collect();
    let best = tied.iter().map(|&l| mass(l)).fold(f64::MIN, f64::max);
    *tied.iter().find(|&&l| mass(l) >= best - 1e-9).unwrap()
}

fn majority_exhaustive() -> Outcome {
    let labels = [ClassLabel::Bacteria, ClassLabel::Normal, ClassLabel::Virus];
    let conf = [0.41, 0.93, 0.55, 0.67, 0.99, 0.48, 0.72, 0.86, 0.6];
    let mut checked = 0;
    for varied in [false, true] {
        for code in 0..19_683usize {
            let mut c = code;
            let cells: Vec<_> = (0..9)
                .map(|i| {
                    let l = labels[c % 3];
                    c /= 3;
                    ClassProbs::peaked(l, if varied { conf[(i + code) % 9] } else { 0.8 })
                })
                .collect();
            let cm = build_contamination_matrix(&cells, 3, 3, "a").map_err(|e| e.to_string())?;
            let got = majority_vote(&cm).label;
            if got != vote_oracle(&cells) {
                return Err(format!("assignment {code} (varied={varied}): {got}"));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} grids (19683 assignments, equal and varied confidence)"))
}

fn tiling_partition() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..200 {
        let (w, h) = (rng.random_range(1..400usize), rng.random_range(1..400usize));
        let rows = rng.random_range(1..=h.min(12));
        let cols = rng.random_range(1..=w.min(12));
        let px: Vec<u8> = (0..w * h).map(|_| rng.random()).collect();
        let img = GrayImage::new("t", w, h, px).map_err(|e| e.to_string())?;
        let grid = split_grid(&img, rows, cols).map_err(|e| e.to_string())?;
        if grid.reassemble() != img {
            return Err(format!("case {case}: {w}x{h} into {rows}x{cols}"));
        }
    }
    Ok("200 random sizes and grids reassemble pixel-identically".into())
}

struct ServeProcess(Child);

impl Drop for ServeProcess {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

async fn launch(store_dir: &Path, port: u16, client: &reqwest::Client) -> Result<ServeProcess, String> {
    let child = bin()
        .arg("serve")
        .env("PNEUMO_STORE_DIR", store_dir)
        .env("PNEUMO_PORT", port.to_string())
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let proc = ServeProcess(child);
    for _ in 0..200 {
        if client.get(format!("http://127.0.0.1:{port}/healthz")).send().await.is_ok() {
            return Ok(proc);
        }
        tokio::time::sleep(Duration::from_millis(25)).await;
    }
    Err("service did not come up".into())
}

async fn service_flow() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let client = reqwest::Client::new();
    let port = free_port();
    let base = format!("http://127.0.0.1:{port}");
    let err = |e: reqwest::Error| e.to_string();

    let mut server = launch(dir.path(), port, &client).await?;
    let created: Value = client
        .post(format!("{base}/patients"))
        .json(&json!({"age": 82, "comorbidities": [{"name": "asthma", "severity": "moderate"}]}))
        .send().await.map_err(err)?
        .json().await.map_err(err)?;
    let id = created["patient_id"].as_str().ok_or("no patient id")?.to_string();

    let tiles: Vec<_> = (0..9).map(|k| if k < 3 { [0.1, 0.1, 0.8] } else { [0.1, 0.8, 0.1] }).collect();
    let png = GrayImage::filled("x", 30, 30, 128).unwrap().to_png().unwrap();
    let form = reqwest::multipart::Form::new()
        .part("image", reqwest::multipart::Part::bytes(png).file_name("scan.png"))
        .text("options", json!({"classifier": {"external": {"tiles": tiles}}}).to_string());
    let exam = client.post(format!("{base}/patients/{id}/exams")).multipart(form).send().await.map_err(err)?;
    if exam.status() != reqwest::StatusCode::CREATED {
        return Err(format!("exam submission {}", exam.status()));
    }
    let risk: Value = client.get(format!("{base}/patients/{id}/risk")).send().await.map_err(err)?.json().await.map_err(err)?;
    let (s1, s2, s3, f) = (
        risk["s1"].as_f64().unwrap_or(f64::NAN),
        risk["s2"].as_f64().unwrap_or(f64::NAN),
        risk["s3"].as_f64().unwrap_or(f64::NAN),
        risk["f"].as_f64().unwrap_or(f64::NAN),
    );
    if (s2 - 33.33).abs() > 0.005 {
        return Err(format!("S2 = {s2}"));
    }
    if (f - (s1 + s2 + s3) / 200.0).abs() > 1e-12 || risk["disclaimer"].as_str().is_none() {
        return Err(format!("risk payload inconsistent: {risk}"));
    }

    let patient_before: Value = client.get(format!("{base}/patients/{id}")).send().await.map_err(err)?.json().await.map_err(err)?;
    let log = dir.path().join(store::EVENT_LOG);
    let digest_before = store::replay(&log).map_err(|e| e.to_string())?.digest();

    // SIGKILL, no graceful shutdown
    server.0.kill().map_err(|e| e.to_string())?;
    server.0.wait().map_err(|e| e.to_string())?;
    drop(server);

    let _server = launch(dir.path(), port, &client).await?;
    let patient_after: Value = client.get(format!("{base}/patients/{id}")).send().await.map_err(err)?.json().await.map_err(err)?;
    let risk_after: Value = client.get(format!("{base}/patients/{id}/risk")).send().await.map_err(err)?.json().await.map_err(err)?;
    let digest_after = store::replay(&log).map_err(|e| e.to_string())?.digest();
    if patient_after != patient_before || risk_after != risk || digest_after != digest_before {
        return Err("state differs after restart".into());
    }
    Ok(format!("S2 = {s2:.4}, F = {f:.4}; state identical after kill and restart (index {})", &digest_after[..12]))
}

#[test]
fn acceptance() {
    let runtime = tokio::runtime::Runtime::new().unwrap();
    let criteria: Vec<(&str, Outcome)> = vec![
        ("patient F values", patients_table()),
        ("image-pair kinetics branches", pairs_table()),
        ("confusion matrix metrics", confusion_reconciliation()),
        ("age score table", age_table()),
        ("gradient check", gradient_check()),
        ("fixture training", desk_training()),
        ("majority vote exhaustive", majority_exhaustive()),
        ("tiling partition", tiling_partition()),
        ("service round trip", runtime.block_on(service_flow())),
    ];
    let mut failed = 0;
    for (name, outcome) in &criteria {
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    assert_eq!(failed, 0);
}
