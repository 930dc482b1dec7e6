use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};

const TINY: &str = r#"
cache_pages = 8
[partition]
ground_plane = 0.05
coarse_resolution = 16
[train]
epochs = 40
phase_epochs = 20
levels = 2
base_resolution = 8
coarsen_epochs = [20]
rays_per_batch = 128
log_interval = 20
probe_interval = 40
checkpoint_interval = 40
[train.field.hash]
log2_table_size = 12
max_resolution = 128
[train.occupancy]
warmup_epochs = 16
[bake]
page_size = 256
[synthetic]
train_views = 4
holdout_views = 2
width = 32
height = 32
sfm_points = 100
"#;

fn nerfmesh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nerfmesh"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = nerfmesh(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(nerfmesh(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(nerfmesh(&["render", "--bogus"]).status.code(), Some(1));
    assert_eq!(
        nerfmesh(&["train", "--work", "w", "--block", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(nerfmesh(&["--version"]).status.code(), Some(0));
}

#[test]
fn missing_dataset_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = nerfmesh(&[
        "partition",
        "--data",
        s(&dir.path().join("nope")),
        "--work",
        s(&dir.path().join("w")),
    ]);
    assert_ne!(out.status.code(), Some(0));
    assert!(!out.stderr.is_empty());
}

#[test]
fn eval_of_identical_directories_is_capped() {
    let dir = tempfile::tempdir().unwrap();
    let img = nerfmesh::imaging::RgbImage {
        width: 4,
        height: 3,
        data: (0..12)
            .map(|i| [i as f64 / 12.0, 0.5, 1.0 - i as f64 / 12.0])
            .collect(),
    };
    for sub in ["a", "b"] {
        std::fs::create_dir_all(dir.path().join(sub)).unwrap();
        nerfmesh::imaging::write_png(dir.path().join(sub).join("frame_0000.png"), &img).unwrap();
    }
    let stdout = ok(&[
        "eval",
        "--gt",
        s(&dir.path().join("a")),
        "--renders",
        s(&dir.path().join("b")),
    ]);
    assert!(stdout.contains("mean PSNR 99.00 dB"), "{stdout}");
}

fn http_get(addr: &str, path: &str, range: Option<&str>) -> (u16, Vec<u8>) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let range = range.map(|r| format!("Range: {r}\r\n")).unwrap_or_default();
    write!(
        stream,
        "GET {path} HTTP/1.1\r\nHost: {addr}\r\n{range}Connection: close\r\n\r\n"
    )
    .unwrap();
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw).unwrap();
    let split = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .expect("header terminator");
    let head = String::from_utf8_lossy(&raw[..split]).to_string();
    let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
    (status, raw[split + 4..].to_vec())
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = root.join("tiny.toml");
    std::fs::write(&config, TINY).unwrap();
    let (data, work, scene, renders) = (
        root.join("data"),
        root.join("work"),
        root.join("scene.unrb"),
        root.join("renders"),
    );
    let c = s(&config);

    ok(&["synth", "--out", s(&data), "--config", c]);
    assert!(data.join("holdout_path.json").is_file());
    assert!(data.join("holdout_gt/frame_0001.png").is_file());

    let partition = ok(&[
        "partition",
        "--data",
        s(&data),
        "--work",
        s(&work),
        "--config",
        c,
    ]);
    let blocks: Vec<String> = partition
        .lines()
        .filter_map(|l| l.strip_prefix("block "))
        .map(|l| l.split(':').next().unwrap().to_string())
        .collect();
    assert!(!blocks.is_empty(), "{partition}");
    for b in &blocks {
        let log = ok(&[
            "train",
            "--data",
            s(&data),
            "--work",
            s(&work),
            "--block",
            b,
            "--config",
            c,
        ]);
        assert!(log.contains("trained block"), "{log}");
    }
    ok(&[
        "bake",
        "--data",
        s(&data),
        "--work",
        s(&work),
        "--config",
        c,
    ]);
    ok(&[
        "export",
        "--work",
        s(&work),
        "--out",
        s(&scene),
        "--config",
        c,
    ]);

    let rendered = ok(&[
        "render",
        "--assets",
        s(&scene),
        "--camera-path",
        s(&data.join("holdout_path.json")),
        "--out",
        s(&renders),
        "--config",
        c,
    ]);
    assert!(rendered.contains("rendered 2 frames"), "{rendered}");
    assert!(renders.join("stats.json").is_file());
    let eval = ok(&[
        "eval",
        "--gt",
        s(&data.join("holdout_gt")),
        "--renders",
        s(&renders),
    ]);
    let psnr: f64 = eval
        .lines()
        .find_map(|l| l.strip_prefix("mean PSNR "))
        .and_then(|l| l.trim_end_matches(" dB").parse().ok())
        .unwrap();
    assert!(psnr.is_finite() && psnr > 0.0, "{eval}");

    let mut child = Command::new(env!("CARGO_BIN_EXE_nerfmesh"))
        .args(["serve", "--assets", s(&scene), "--port", "0"])
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let server = Server(child);
    let mut line = String::new();
    BufReader::new(stdout).read_line(&mut line).unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on http://")
        .expect("address line")
        .to_string();

    let bytes = std::fs::read(&scene).unwrap();
    let (status, body) = http_get(&addr, "/scene.unrb", None);
    assert_eq!((status, body.len()), (200, bytes.len()));
    assert_eq!(body, bytes);

    let (status, body) = http_get(&addr, "/scene.unrb", Some("bytes=16-71"));
    assert_eq!(status, 206);
    assert_eq!(body, bytes[16..72]);

    let (_, table) = http_get(&addr, "/sections.json", None);
    let table: serde_json::Value = serde_json::from_slice(&table).unwrap();
    let entries = table.as_array().unwrap();
    assert!(entries.iter().any(|e| e["name"] == "manifest"));
    for e in entries {
        let name = e["name"].as_str().unwrap();
        let (off, len) = (
            e["offset"].as_u64().unwrap() as usize,
            e["length"].as_u64().unwrap() as usize,
        );
        let (status, body) = http_get(&addr, &format!("/sections/{name}"), None);
        assert_eq!(status, 200);
        assert_eq!(body, bytes[off..off + len], "section {name}");
        if len > 4 {
            let (status, tail) = http_get(&addr, &format!("/sections/{name}"), Some("bytes=-4"));
            assert_eq!(status, 206);
            assert_eq!(tail, bytes[off + len - 4..off + len]);
        }
    }

    let (status, manifest) = http_get(&addr, "/manifest.json", None);
    assert_eq!(status, 200);
    let manifest: serde_json::Value = serde_json::from_slice(&manifest).unwrap();
    assert_eq!(manifest["blocks"].as_array().unwrap().len(), blocks.len());
    assert_eq!(http_get(&addr, "/missing", None).0, 404);
    assert_eq!(
        http_get(
            &addr,
            "/scene.unrb",
            Some(&format!("bytes={}-", bytes.len()))
        )
        .0,
        416
    );
    drop(server);
}
