//! The S3 backend against a small in-process HTTP server that implements
//! HEAD, ranged GET and paginated ListObjectsV2.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rollread_core::store::{Credentials, S3Config, S3Store};
use rollread_core::{
    refs_with_prefix, CacheLocation, Error, FileSet, ObjectStore, StreamHandle, StreamOptions,
};

#[derive(Default)]
struct MockState {
    objects: BTreeMap<String, Vec<u8>>,
    /// Answer this many requests with 503 before serving normally.
    fail_next: AtomicUsize,
    ignore_range: bool,
    page_size: usize,
    requests: Mutex<Vec<(String, String, BTreeMap<String, String>)>>,
}

struct Mock {
    endpoint: String,
    state: Arc<MockState>,
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            out.push(u8::from_str_radix(&s[i + 1..i + 3], 16).unwrap());
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).unwrap()
}

fn respond(stream: &mut TcpStream, status: &str, headers: &[(&str, String)], body: &[u8], head: bool) {
    let mut msg = format!("HTTP/1.1 {status}\r\nConnection: close\r\n");
    for (k, v) in headers {
        msg.push_str(&format!("{k}: {v}\r\n"));
    }
    msg.push_str(&format!("Content-Length: {}\r\n\r\n", body.len()));
    let _ = stream.write_all(msg.as_bytes());
    if !head {
        let _ = stream.write_all(body);
    }
}

fn handle(mut stream: TcpStream, state: &MockState) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();
    let mut headers = BTreeMap::new();
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (k, v) = h.split_once(':').unwrap();
        headers.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    state
        .requests
        .lock()
        .unwrap()
        .push((method.clone(), target.clone(), headers.clone()));

    if state
        .fail_next
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        respond(&mut stream, "503 Slow Down", &[], b"", method == "HEAD");
        return;
    }

    let (path, query) = target.split_once('?').unwrap_or((&target, ""));
    let query: BTreeMap<String, String> = query
        .split('&')
        .filter(|q| !q.is_empty())
        .map(|q| {
            let (k, v) = q.split_once('=').unwrap_or((q, ""));
            (percent_decode(k), percent_decode(v))
        })
        .collect();
    let path = percent_decode(path);
    let rest = path.strip_prefix("/bucket").unwrap_or("");
    let key = rest.strip_prefix('/').unwrap_or("");

    if key.is_empty() {
        let prefix = query.get("prefix").cloned().unwrap_or_default();
        let start: usize = query.get("continuation-token").map(|t| t.parse().unwrap()).unwrap_or(0);
        let keys: Vec<&String> = state.objects.keys().filter(|k| k.starts_with(&prefix)).collect();
        let page = state.page_size.max(1);
        let end = (start + page).min(keys.len());
        let mut body = String::from("<?xml version=\"1.0\"?><ListBucketResult>");
        for k in &keys[start..end] {
            body.push_str(&format!("<Contents><Key>{}</Key></Contents>", k.replace('&', "&amp;")));
        }
        if end < keys.len() {
            body.push_str(&format!(
                "<IsTruncated>true</IsTruncated><NextContinuationToken>{end}</NextContinuationToken>"
            ));
        } else {
            body.push_str("<IsTruncated>false</IsTruncated>");
        }
        body.push_str("</ListBucketResult>");
        respond(&mut stream, "200 OK", &[], body.as_bytes(), false);
        return;
    }

    let Some(data) = state.objects.get(key) else {
        respond(&mut stream, "404 Not Found", &[], b"<Error><Code>NoSuchKey</Code></Error>", method == "HEAD");
        return;
    };
    if method == "HEAD" {
        respond(&mut stream, "200 OK", &[], data, true);
        return;
    }
    let range = headers.get("range").filter(|_| !state.ignore_range);
    let Some(range) = range else {
        respond(&mut stream, "200 OK", &[], data, false);
        return;
    };
    let spec = range.strip_prefix("bytes=").unwrap();
    let (a, b) = spec.split_once('-').unwrap();
    let a: usize = a.parse().unwrap();
    let b: usize = b.parse().unwrap();
    if a >= data.len() {
        respond(
            &mut stream,
            "416 Range Not Satisfiable",
            &[("Content-Range", format!("bytes */{}", data.len()))],
            b"",
            false,
        );
        return;
    }
    let b = b.min(data.len() - 1);
    respond(
        &mut stream,
        "206 Partial Content",
        &[("Content-Range", format!("bytes {a}-{b}/{}", data.len()))],
        &data[a..=b],
        false,
    );
}

fn serve(state: MockState) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let endpoint = format!("http://{}", listener.local_addr().unwrap());
    let state = Arc::new(state);
    let shared = state.clone();
    thread::spawn(move || {
        for conn in listener.incoming() {
            let Ok(conn) = conn else { continue };
            let state = shared.clone();
            thread::spawn(move || handle(conn, &state));
        }
    });
    Mock { endpoint, state }
}

fn objects() -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    m.insert("data/a.bin".to_string(), (0..5000u32).map(|i| (i % 251) as u8).collect());
    m.insert("data/b.bin".to_string(), (0..777u32).map(|i| (i % 13) as u8).collect());
    m.insert("data/c d&e.bin".to_string(), vec![9; 10]);
    m.insert("other/x".to_string(), vec![1]);
    m
}

fn store(mock: &Mock, credentials: Option<Credentials>) -> S3Store {
    let mut cfg = S3Config::new("bucket");
    cfg.endpoint = Some(mock.endpoint.clone());
    cfg.credentials = credentials;
    cfg.retry_delay = Duration::from_millis(1);
    S3Store::new(cfg).unwrap()
}

#[test]
fn size_range_and_missing_keys() {
    let mock = serve(MockState {
        objects: objects(),
        ..Default::default()
    });
    let s3 = store(&mock, None);
    assert_eq!(s3.object_size("data/a.bin").unwrap(), 5000);
    assert_eq!(s3.get_range("data/a.bin", 4990, 10).unwrap(), mock.state.objects["data/a.bin"][4990..]);
    assert_eq!(s3.get_range("data/a.bin", 4995, 100).unwrap().len(), 5);
    assert_eq!(s3.get_range("data/c d&e.bin", 0, 3).unwrap(), vec![9; 3]);
    assert!(matches!(s3.object_size("nope"), Err(Error::NotFound(_))));
    assert!(matches!(
        s3.get_range("data/b.bin", 777, 1),
        Err(Error::OutOfRange { offset: 777, size: 777 })
    ));
}

#[test]
fn listing_follows_continuation_tokens() {
    let mock = serve(MockState {
        objects: objects(),
        page_size: 1,
        ..Default::default()
    });
    let s3 = store(&mock, None);
    assert_eq!(s3.list_keys("data/").unwrap(), vec!["data/a.bin", "data/b.bin", "data/c d&e.bin"]);
    let lists = mock
        .state
        .requests
        .lock()
        .unwrap()
        .iter()
        .filter(|(_, t, _)| t.contains("list-type=2"))
        .count();
    assert_eq!(lists, 3);
}

#[test]
fn transient_errors_are_retried() {
    let mock = serve(MockState {
        objects: objects(),
        fail_next: AtomicUsize::new(1),
        ..Default::default()
    });
    let s3 = store(&mock, None);
    assert_eq!(s3.object_size("data/b.bin").unwrap(), 777);

    mock.state.fail_next.store(5, Ordering::SeqCst);
    assert!(matches!(s3.object_size("data/b.bin"), Err(Error::Transport(_))));
}

#[test]
fn servers_ignoring_range_still_give_the_right_bytes() {
    let mock = serve(MockState {
        objects: objects(),
        ignore_range: true,
        ..Default::default()
    });
    let s3 = store(&mock, None);
    assert_eq!(s3.get_range("data/a.bin", 1000, 20).unwrap(), mock.state.objects["data/a.bin"][1000..1020]);
}

#[test]
fn signed_requests_carry_sigv4_headers() {
    let mock = serve(MockState {
        objects: objects(),
        ..Default::default()
    });
    let creds = Credentials {
        access_key_id: "AKIDEXAMPLE".into(),
        secret_access_key: "secret".into(),
        session_token: Some("token".into()),
    };
    let s3 = store(&mock, Some(creds));
    s3.get_range("data/a.bin", 0, 4).unwrap();
    let requests = mock.state.requests.lock().unwrap();
    let (method, _, headers) = requests.last().unwrap();
    assert_eq!(method, "GET");
    let auth = &headers["authorization"];
    assert!(auth.starts_with("AWS4-HMAC-SHA256 Credential=AKIDEXAMPLE/"), "{auth}");
    assert!(auth.contains("/us-east-1/s3/aws4_request"));
    assert!(auth.contains("SignedHeaders=host;range;x-amz-content-sha256;x-amz-date;x-amz-security-token"));
    assert_eq!(headers["x-amz-security-token"], "token");
    assert_eq!(headers["x-amz-date"].len(), 16);
}

#[test]
fn stream_over_s3() {
    let mock = serve(MockState {
        objects: objects(),
        ..Default::default()
    });
    let s3: Arc<dyn ObjectStore> = Arc::new(store(&mock, None));
    let refs = refs_with_prefix(&s3, "data/").unwrap();
    assert_eq!(refs.len(), 3);
    let expected: Vec<u8> = ["data/a.bin", "data/b.bin", "data/c d&e.bin"]
        .iter()
        .flat_map(|k| mock.state.objects[*k].clone())
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let tier = Arc::new(CacheLocation::new(dir.path().join("cache"), 2048, 0).unwrap());
    let mut opts = StreamOptions::default();
    opts.evict_interval = Duration::from_millis(5);
    let mut stream = StreamHandle::open(FileSet::new(refs, 1024).unwrap(), vec![tier], opts).unwrap();
    let mut out = Vec::new();
    std::io::Read::read_to_end(&mut stream, &mut out).unwrap();
    assert_eq!(out, expected);
    stream.close().unwrap();
}
