#![allow(dead_code)]

use std::path::{Path, PathBuf};

use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn run(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = vpkit::cli::run(std::iter::once("vpkit").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

/// Runs with `--json` and parses stdout.
pub fn run_json(args: &[&str]) -> (i32, Value) {
    let mut full = vec!["--json"];
    full.extend_from_slice(args);
    let (code, out, err) = run(&full);
    let v = serde_json::from_str(out.trim()).unwrap_or_else(|e| panic!("stdout is not JSON ({e}): {out:?} / {err:?}"));
    (code, v)
}

const SCHEMA_BASE: &str = "https://vpkit.invalid/schemas/";

/// Validator for `name` (a schema file, optionally with a `#/$defs/...`
/// fragment), with every shipped schema registered for `$ref`.
pub fn validator(name: &str) -> jsonschema::Validator {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas");
    let mut opts = jsonschema::options();
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let contents: Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
        let uri = format!("{SCHEMA_BASE}{}", path.file_name().unwrap().to_str().unwrap());
        opts = opts.with_resource(uri, jsonschema::Resource::from_contents(contents).unwrap());
    }
    opts.build(&json!({ "$ref": format!("{SCHEMA_BASE}{name}") })).unwrap()
}

pub fn assert_schema(name: &str, value: &Value) {
    let v = validator(name);
    let errors: Vec<String> = v.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name}: {errors:#?}\n{value:#}");
}

/// Anti-aliased step edge through the image center, dark on the left,
/// rotated `angle_deg` clockwise from vertical.
pub fn step_edge(size: usize, angle_deg: f64) -> vpkit_core::ScalarField {
    let c = (size as f64 - 1.0) / 2.0;
    let (s, co) = angle_deg.to_radians().sin_cos();
    vpkit_core::ScalarField::from_fn(size, size, |x, y| {
        let d = (x as f64 - c) * co + (y as f64 - c) * s;
        (0.5 + d).clamp(0.0, 1.0)
    })
}

pub fn write_gray(path: &Path, field: &vpkit_core::ScalarField) {
    std::fs::write(path, vpkit::io::gray_png_bytes(field).unwrap()).unwrap();
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Image directory and store root for service tests: `rect` (16×16, the
/// `rect.annotation.json` fixture's image), `blank` (16×16) and `corridor`
/// (a 320×240 synthetic corridor whose target VP is returned).
pub struct ServiceFixture {
    pub dir: tempfile::TempDir,
    pub corridor: vpkit_core::synth::SyntheticScene,
}

impl ServiceFixture {
    pub fn new() -> Self {
        use rand::SeedableRng;
        let dir = tempfile::tempdir().unwrap();
        let images = dir.path().join("images");
        std::fs::create_dir_all(&images).unwrap();
        write_gray(&images.join("rect.png"), &step_edge(16, 0.0));
        write_gray(&images.join("blank.png"), &vpkit_core::ScalarField::zeros(16, 16));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let corridor = vpkit_core::synth::corridor_scene(320, 240, &mut rng).unwrap();
        write_gray(&images.join("corridor.png"), &corridor.image);
        Self { dir, corridor }
    }

    pub fn images(&self) -> PathBuf {
        self.dir.path().join("images")
    }

    pub fn store_root(&self) -> PathBuf {
        self.dir.path().join("store")
    }

    pub fn store(&self) -> std::sync::Arc<vpkit::store::Store> {
        let s = vpkit::store::Store::open(&self.images(), &self.store_root(), Default::default()).unwrap();
        std::sync::Arc::new(s)
    }
}

pub fn rect_record() -> Value {
    serde_json::from_slice(&std::fs::read(fixture("rect.annotation.json")).unwrap()).unwrap()
}

pub struct Reply {
    pub status: u16,
    pub headers: axum::http::HeaderMap,
    pub body: Vec<u8>,
}

impl Reply {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or_else(|e| panic!("{e}: {:?}", String::from_utf8_lossy(&self.body)))
    }
}

/// Sends one request through the router in-process.
pub async fn call(router: &axum::Router, method: &str, uri: &str, headers: &[(&str, &str)], body: Vec<u8>) -> Reply {
    use http_body_util::BodyExt;
    use tower::ServiceExt;
    let mut req = axum::http::Request::builder().method(method).uri(uri);
    for (k, v) in headers {
        req = req.header(*k, *v);
    }
    let resp = router.clone().oneshot(req.body(axum::body::Body::from(body)).unwrap()).await.unwrap();
    let status = resp.status().as_u16();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    Reply { status, headers, body }
}

/// A `vpkit serve` child process on an ephemeral port.
pub struct Server {
    pub child: std::process::Child,
    pub addr: String,
}

impl Server {
    pub fn spawn(images: &Path, store: &Path, extra: &[&str]) -> Self {
        use std::io::BufRead;
        let mut child = std::process::Command::new(env!("CARGO_BIN_EXE_vpkit"))
            .args(["--json", "serve", "--listen", "127.0.0.1:0", "--images"])
            .arg(images)
            .arg("--store")
            .arg(store)
            .args(extra)
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap();
        let mut line = String::new();
        std::io::BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let v: Value = serde_json::from_str(&line).unwrap_or_else(|e| panic!("{e}: {line:?}"));
        Self { child, addr: v["listening"].as_str().unwrap().to_string() }
    }

    /// One HTTP/1.1 request over a fresh connection. `None` when the
    /// connection closes without a response.
    pub fn request(&self, method: &str, path: &str, headers: &[(&str, &str)], body: &[u8]) -> Option<(u16, Vec<u8>)> {
        use std::io::{Read, Write};
        let mut s = std::net::TcpStream::connect(&self.addr).unwrap();
        s.set_read_timeout(Some(std::time::Duration::from_secs(30))).unwrap();
        let mut head = format!("{method} {path} HTTP/1.1\r\nHost: {}\r\nConnection: close\r\nContent-Length: {}\r\n", self.addr, body.len());
        for (k, v) in headers {
            head.push_str(&format!("{k}: {v}\r\n"));
        }
        head.push_str("\r\n");
        s.write_all(head.as_bytes()).ok()?;
        s.write_all(body).ok()?;
        let mut raw = Vec::new();
        let _ = s.read_to_end(&mut raw);
        let split = raw.windows(4).position(|w| w == b"\r\n\r\n")?;
        let status_line = String::from_utf8_lossy(&raw[..split]).lines().next()?.to_string();
        let status = status_line.split_whitespace().nth(1)?.parse().ok()?;
        Some((status, raw[split + 4..].to_vec()))
    }

    /// Sends SIGTERM and waits for the exit status.
    pub fn terminate(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        std::process::Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

pub fn temp_files(dir: &Path) -> Vec<String> {
    std::fs::read_dir(dir)
        .unwrap()
        .flatten()
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with(".vpkit-") && n.ends_with(".tmp"))
        .collect()
}
