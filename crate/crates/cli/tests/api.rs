use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use tempfile::TempDir;
use tower::ServiceExt;

use miscause::dataset::{generate_planted_dataset, Mask, PlantedConfig, Rect};
use miscause_cli::server::{router, Session, StatsResponse, PAGE_SIZE};

struct Fixture {
    dir: TempDir,
    session: Arc<Session>,
}

impl Fixture {
    fn data(&self) -> PathBuf {
        self.dir.path().join("data")
    }
    fn model(&self) -> PathBuf {
        self.dir.path().join("model.bin")
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_miscause"))
}

fn run(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("spawn miscause");
    assert!(
        out.status.success(),
        "miscause {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let cfg = PlantedConfig {
            train_size: 300,
            test_size: 120,
            correlation: 1.0,
            ..PlantedConfig::default()
        };
        let data = dir.path().join("data");
        generate_planted_dataset(&cfg, 3)
            .unwrap()
            .write(&data)
            .unwrap();
        let model = dir.path().join("model.bin");
        run(&[
            "train",
            "--data",
            path(&data),
            "--out",
            path(&model),
            "--epochs",
            "4",
            "--batch-size",
            "16",
            "--seed",
            "3",
        ]);
        let session = Arc::new(Session::load(&model, &data, 0.3).unwrap());
        Fixture { dir, session }
    })
}

async fn call(req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = router(fixture().session.clone())
        .oneshot(req)
        .await
        .unwrap();
    let status = resp.status();
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body)
}

async fn get(uri: &str) -> (StatusCode, Vec<u8>) {
    call(Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(uri: &str, body: String) -> (StatusCode, Vec<u8>) {
    call(
        Request::post(uri)
            .header("content-type", "application/json")
            .body(Body::from(body))
            .unwrap(),
    )
    .await
}

fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap()
}

fn test_ids() -> Vec<String> {
    fixture()
        .session
        .data
        .test
        .iter()
        .map(|i| i.id.clone())
        .collect()
}

#[tokio::test]
async fn image_list_pages_cover_test_split() {
    let total = fixture().session.data.test.len();
    let (status, body) = get("/api/images").await;
    assert_eq!(status, StatusCode::OK);
    let first = json(&body);
    assert_eq!(first["total"], total);
    assert_eq!(
        first["items"].as_array().unwrap().len(),
        PAGE_SIZE.min(total)
    );
    let mut seen = 0;
    for page in 0..total.div_ceil(PAGE_SIZE) {
        let (_, body) = get(&format!("/api/images?page={page}")).await;
        seen += json(&body)["items"].as_array().unwrap().len();
    }
    assert_eq!(seen, total);
    let (status, _) = get("/api/images?page=x").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn image_detail_has_png_and_scores() {
    let id = &test_ids()[0];
    let (status, body) = get(&format!("/api/image/{id}")).await;
    assert_eq!(status, StatusCode::OK);
    let v = json(&body);
    assert_eq!(v["id"], id.as_str());
    assert_eq!(v["split"], "test");
    let sum: f64 = v["scores"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9);
    use base64::Engine;
    let png = base64::engine::general_purpose::STANDARD
        .decode(v["png_base64"].as_str().unwrap())
        .unwrap();
    let img = image::load_from_memory(&png).unwrap();
    assert_eq!((img.width(), img.height()), (32, 32));
}

#[tokio::test]
async fn unknown_image_is_404_with_json_error() {
    for uri in ["/api/image/nope", "/api/saliency/nope"] {
        let (status, body) = get(uri).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert!(json(&body)["error"].is_string());
    }
    let (status, _) = post("/api/intervene", r#"{"id":"nope"}"#.into()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn bad_requests_are_400() {
    let id = &test_ids()[0];
    let cases = [
        "not json".to_string(),
        format!(r#"{{"id":"{id}","p":0.0}}"#),
        format!(r#"{{"id":"{id}","p":1.5}}"#),
        format!(r#"{{"id":"{id}","dx":0}}"#),
        format!(r#"{{"id":"{id}","bogus":1}}"#),
    ];
    for body in cases {
        let (status, resp) = post("/api/intervene", body.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(json(&resp)["error"].is_string());
    }
    let (status, _) = get(&format!("/api/saliency/{id}?method=magic")).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn stats_match_gallery() {
    let (status, body) = get("/api/stats").await;
    assert_eq!(status, StatusCode::OK);
    let stats: StatsResponse = serde_json::from_slice(&body).unwrap();
    let c = stats.class_names.len();
    let mut want = vec![vec![0u64; c]; c];
    let total = fixture().session.data.test.len();
    for page in 0..total.div_ceil(PAGE_SIZE) {
        let (_, body) = get(&format!("/api/images?page={page}")).await;
        for item in json(&body)["items"].as_array().unwrap() {
            let t = item["label"].as_u64().unwrap() as usize;
            let p = item["predicted_label"].as_u64().unwrap() as usize;
            want[t][p] += 1;
        }
    }
    assert_eq!(stats.counts.counts, want);
    assert_eq!(stats.theta, 0.3);
    for e in &stats.edges {
        assert!(e.weight >= 0.3 && e.from != e.to);
    }
    for (j, d) in stats.in_degrees.iter().enumerate() {
        let s: f64 = stats
            .edges
            .iter()
            .filter(|e| e.to == j)
            .map(|e| e.weight)
            .sum();
        assert!((d - s).abs() < 1e-12);
    }
}

#[tokio::test]
async fn saliency_grid_matches_cli() {
    let f = fixture();
    let id = &test_ids()[1];
    for method in ["gradient", "occlusion"] {
        let (status, body) = get(&format!("/api/saliency/{id}?method={method}")).await;
        assert_eq!(status, StatusCode::OK);
        let cli = run(&[
            "saliency",
            "--model",
            path(&f.model()),
            "--data",
            path(&f.data()),
            "--id",
            id,
            "--method",
            method,
        ]);
        let mut want = body.clone();
        want.push(b'\n');
        assert_eq!(cli.stdout, want, "{method}");
        let v = json(&body);
        let grid = v["grid"].as_array().unwrap();
        assert_eq!(grid.len(), 32);
        assert!(grid.iter().all(|r| r.as_array().unwrap().len() == 32));
    }
}

#[tokio::test]
async fn cli_and_http_interventions_are_bit_identical() {
    let f = fixture();
    let ids = test_ids();
    let spare = Mask::from_rect(&Rect {
        row: 10,
        col: 10,
        height: 12,
        width: 12,
    });
    let mask_path = f.dir.path().join("spare.json");
    std::fs::write(&mask_path, serde_json::to_vec(&spare).unwrap()).unwrap();
    let settings = [
        (0.05, 7, 7),
        (0.01, 3, 3),
        (0.1, 5, 9),
        (0.2, 1, 1),
        (0.05, 32, 32),
    ];
    let (model, data) = (f.model(), f.data());
    let mut compared = 0;
    for (k, id) in ids.iter().step_by(ids.len() / 4).take(4).enumerate() {
        for (s, &(p, dx, dy)) in settings.iter().enumerate() {
            let masked = (k + s) % 2 == 1;
            let mut body = serde_json::json!({ "id": id, "p": p, "dx": dx, "dy": dy });
            let (ps, dxs, dys) = (p.to_string(), dx.to_string(), dy.to_string());
            let mut args = vec![
                "intervene",
                "--model",
                path(&model),
                "--data",
                path(&data),
                "--id",
                id,
                "--top-p",
                &ps,
                "--dx",
                &dxs,
                "--dy",
                &dys,
            ];
            if masked {
                body["spare_mask"] = serde_json::to_value(&spare).unwrap();
                args.extend(["--mask", path(&mask_path)]);
            }
            let (status, http) = post("/api/intervene", body.to_string()).await;
            assert_eq!(status, StatusCode::OK);
            let cli = run(&args);
            let mut want = http.clone();
            want.push(b'\n');
            assert_eq!(cli.stdout, want, "{id} p={p} {dx}x{dy} masked={masked}");
            compared += 1;
        }
    }
    assert_eq!(compared, 20);
}

#[tokio::test]
async fn truth_mask_spares_object_region() {
    let f = fixture();
    let id = f
        .session
        .data
        .test
        .iter()
        .find(|i| f.session.data.spare_mask(&i.id).is_some())
        .map(|i| i.id.clone())
        .unwrap();
    let (status, body) = post(
        "/api/intervene",
        format!(r#"{{"id":"{id}","truth_mask":true}}"#),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let mask = f.session.data.spare_mask(&id).unwrap();
    for b in json(&body)["boxes"].as_array().unwrap() {
        let c = &b["center"];
        assert!(!mask.contains(
            c[0].as_u64().unwrap() as usize,
            c[1].as_u64().unwrap() as usize
        ));
    }
    let both = serde_json::json!({ "id": id, "truth_mask": true, "spare_mask": Mask::empty() });
    let (status, _) = post("/api/intervene", both.to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn missing_inputs_exit_2_without_partial_outputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("report");
    let missing = dir.path().join("absent");
    let status = bin()
        .args(["run", "--data", path(&missing), "--out", path(&out)])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("does not exist"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    let status = bin()
        .args([
            "predict",
            "--data",
            path(&missing),
            "--model",
            "also-absent.bin",
        ])
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_1() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"dataset": "x", "unknown_key": 1}"#).unwrap();
    let out = bin()
        .args(["run", "--config", path(&cfg)])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn analyze_writes_tables() {
    let f = fixture();
    let dir = TempDir::new().unwrap();
    let log = dir.path().join("log.jsonl");
    run(&[
        "predict",
        "--data",
        path(&f.data()),
        "--model",
        path(&f.model()),
        "--out",
        path(&log),
    ]);
    let out = dir.path().join("an");
    run(&[
        "analyze",
        "--log",
        path(&log),
        "--out",
        path(&out),
        "--names",
        "a,b,c",
    ]);
    for name in [
        "counts.csv",
        "u.csv",
        "v.csv",
        "network.dot",
        "network.json",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    let counts = std::fs::read_to_string(out.join("counts.csv")).unwrap();
    assert!(counts.starts_with("true_class,a,b,c"));
    let total: u64 = counts
        .lines()
        .skip(1)
        .flat_map(|l| {
            l.split(',')
                .skip(1)
                .map(|v| v.parse::<u64>().unwrap())
                .collect::<Vec<_>>()
        })
        .sum();
    assert_eq!(total as usize, f.session.data.test.len());
}
