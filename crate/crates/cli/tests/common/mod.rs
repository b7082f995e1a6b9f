#![allow(dead_code)]

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::time::Duration;
use std::process::{Command, Output};

use featsearch_core::store::shard::write_shard;
use featsearch_core::{Dims, FeatureMap, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_featsearch"));
    c.env("RUST_LOG", "warn");
    c
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn featsearch")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

pub fn maps(rng: &mut impl Rng, prefix: &str, n: usize, dims: Dims) -> Vec<FeatureMap> {
    (0..n)
        .map(|i| {
            let data = (0..dims.len())
                .map(|_| rng.gen_range(-1.0f32..2.0).max(0.0))
                .collect();
            FeatureMap::new(format!("{prefix}{i:04}"), dims, data).unwrap()
        })
        .collect()
}

/// Writes FMAP1 shards of the given sizes and returns every map in order.
pub fn write_shards(dir: &Path, sizes: &[usize], dims: Dims, seed: u64) -> Vec<FeatureMap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        let shard = maps(&mut rng, &format!("s{s}_"), n, dims);
        write_shard(dir.join(format!("part-{s:03}.fmap")), &shard).unwrap();
        all.extend(shard);
    }
    all
}

pub fn write_mask(path: &Path, m: &Matrix) -> PathBuf {
    std::fs::write(path, serde_json::to_vec(m).unwrap()).unwrap();
    path.to_path_buf()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Creates a store from shards through the CLI and returns its path.
pub fn ingest_new(root: &Path, sizes: &[usize], dims: Dims, compression: &str) -> (PathBuf, Vec<FeatureMap>) {
    let shard_dir = root.join("shards");
    std::fs::create_dir_all(&shard_dir).unwrap();
    let maps = write_shards(&shard_dir, sizes, dims, 11);
    let store = root.join("store");
    let glob = format!("{}/*.fmap", s(&shard_dir));
    let out = run(&[
        "ingest", "--store", s(&store), "--shards", &glob, "--create", "--dataset", "fixture",
        "--model", "synthetic", "--layer", "relu5", "--chunk", "16", "--compression", compression,
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (store, maps)
}

pub fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// Minimal HTTP/1.1 exchange; returns the status code and body.
pub fn http(port: u16, method: &str, path: &str, body: &[u8]) -> Option<(u16, Vec<u8>)> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    stream.set_read_timeout(Some(Duration::from_secs(60))).ok()?;
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\
         Content-Type: application/json\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .ok()?;
    stream.write_all(body).ok()?;
    let mut resp = Vec::new();
    stream.read_to_end(&mut resp).ok()?;
    let split = resp.windows(4).position(|w| w == b"\r\n\r\n")?;
    let head = std::str::from_utf8(&resp[..split]).ok()?;
    let status = head.split_whitespace().nth(1)?.parse().ok()?;
    Some((status, resp[split + 4..].to_vec()))
}

pub fn http_get(port: u16, path: &str) -> Option<(u16, Vec<u8>)> {
    http(port, "GET", path, b"")
}

/// Spawns `featsearch serve` and waits until it answers.
pub fn spawn_server(config: &Path) -> (std::process::Child, u16) {
    let port = free_port();
    let mut child = bin()
        .args(["serve", "--config", s(config), "--port", &port.to_string()])
        .stdout(std::process::Stdio::null())
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let deadline = std::time::Instant::now() + Duration::from_secs(60);
    while http_get(port, "/api/datasets").is_none() {
        if std::time::Instant::now() > deadline {
            let _ = child.kill();
            panic!("server did not come up");
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    (child, port)
}
