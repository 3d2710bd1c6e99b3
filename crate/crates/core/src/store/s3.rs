use std::io::{self, Read, Write};
use std::thread;
use std::time::Duration;

use reqwest::blocking::{Client, Response};
use reqwest::{Method, StatusCode, Url};

use super::sigv4::{canonical_query, uri_encode, Credentials, SigningRequest, EMPTY_PAYLOAD_SHA256};
use super::ObjectStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct S3Config {
    pub bucket: String,
    pub region: String,
    /// Custom endpoint such as `http://localhost:9000`. When set, requests use
    /// path-style addressing; otherwise the AWS virtual-hosted endpoint.
    pub endpoint: Option<String>,
    /// Requests are unsigned when absent.
    pub credentials: Option<Credentials>,
    /// Extra attempts after a transport failure or 5xx response.
    pub retries: u32,
    pub retry_delay: Duration,
}

impl S3Config {
    pub fn new(bucket: impl Into<String>) -> Self {
        S3Config {
            bucket: bucket.into(),
            region: "us-east-1".into(),
            endpoint: None,
            credentials: None,
            retries: 1,
            retry_delay: Duration::from_millis(100),
        }
    }

    /// Honors `AWS_REGION`/`AWS_DEFAULT_REGION`, `AWS_ENDPOINT_URL_S3`/`AWS_ENDPOINT_URL`
    /// and the credential variables.
    pub fn from_env(bucket: impl Into<String>) -> Self {
        let var = |name: &str| std::env::var(name).ok().filter(|v| !v.is_empty());
        let mut cfg = S3Config::new(bucket);
        if let Some(region) = var("AWS_REGION").or_else(|| var("AWS_DEFAULT_REGION")) {
            cfg.region = region;
        }
        cfg.endpoint = var("AWS_ENDPOINT_URL_S3").or_else(|| var("AWS_ENDPOINT_URL"));
        cfg.credentials = Credentials::from_env();
        cfg
    }
}

/// S3-compatible object store speaking plain HTTP range requests.
#[derive(Debug)]
pub struct S3Store {
    config: S3Config,
    client: Client,
}

struct Target {
    url: String,
    host: String,
    canonical_uri: String,
    canonical_query: String,
}

impl S3Store {
    pub fn new(config: S3Config) -> Result<Self> {
        if config.bucket.is_empty() {
            return Err(Error::InvalidArgument("bucket name must not be empty".into()));
        }
        let client = Client::builder()
            .build()
            .map_err(|e| Error::Transport(format!("building HTTP client: {e}")))?;
        Ok(S3Store { config, client })
    }

    /// Parses `s3://bucket` and takes everything else from the environment.
    pub fn from_uri(uri: &str) -> Result<Self> {
        let bucket = uri
            .strip_prefix("s3://")
            .map(|b| b.trim_end_matches('/'))
            .filter(|b| !b.is_empty() && !b.contains('/'))
            .ok_or_else(|| Error::UnsupportedUri(uri.to_string()))?;
        S3Store::new(S3Config::from_env(bucket))
    }

    pub fn config(&self) -> &S3Config {
        &self.config
    }

    fn target(&self, key: Option<&str>, query: &[(&str, &str)]) -> Result<Target> {
        let key_path = key.map(|k| uri_encode(k, true)).unwrap_or_default();
        let (base, canonical_uri) = match &self.config.endpoint {
            Some(endpoint) => (
                endpoint.trim_end_matches('/').to_string(),
                format!("/{}/{}", uri_encode(&self.config.bucket, false), key_path),
            ),
            None => (
                format!("https://{}.s3.{}.amazonaws.com", self.config.bucket, self.config.region),
                format!("/{key_path}"),
            ),
        };
        let canonical_query = canonical_query(query);
        let mut url = format!("{base}{canonical_uri}");
        if !canonical_query.is_empty() {
            url.push('?');
            url.push_str(&canonical_query);
        }
        let parsed = Url::parse(&url).map_err(|e| Error::UnsupportedUri(format!("{url}: {e}")))?;
        let host = match (parsed.host_str(), parsed.port()) {
            (Some(h), Some(p)) => format!("{h}:{p}"),
            (Some(h), None) => h.to_string(),
            (None, _) => return Err(Error::UnsupportedUri(url)),
        };
        Ok(Target {
            url,
            host,
            canonical_uri,
            canonical_query,
        })
    }

    fn send_once(&self, method: &Method, target: &Target, range: Option<&str>) -> Result<Response> {
        let mut req = self.client.request(method.clone(), &target.url);
        if let Some(range) = range {
            req = req.header("Range", range);
        }
        if let Some(creds) = &self.config.credentials {
            let amz_date = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
            let mut headers = vec![
                ("host".to_string(), target.host.clone()),
                ("x-amz-content-sha256".to_string(), EMPTY_PAYLOAD_SHA256.to_string()),
                ("x-amz-date".to_string(), amz_date.clone()),
            ];
            if let Some(range) = range {
                headers.push(("range".to_string(), range.to_string()));
            }
            if let Some(token) = &creds.session_token {
                headers.push(("x-amz-security-token".to_string(), token.clone()));
            }
            let signing = SigningRequest {
                method: method.as_str(),
                canonical_uri: &target.canonical_uri,
                canonical_query: &target.canonical_query,
                headers: &headers,
                payload_sha256: EMPTY_PAYLOAD_SHA256,
                amz_date: &amz_date,
                region: &self.config.region,
                service: "s3",
            };
            req = req.header("Authorization", signing.authorization(creds));
            for (name, value) in headers.iter().filter(|(n, _)| n != "host" && n != "range") {
                req = req.header(name.as_str(), value.as_str());
            }
        }
        req.send().map_err(|e| Error::Transport(e.to_string()))
    }

    fn send(&self, method: Method, target: &Target, range: Option<&str>) -> Result<Response> {
        let mut attempt = 0;
        loop {
            let outcome = self.send_once(&method, target, range).and_then(|resp| {
                if resp.status().is_server_error() {
                    Err(Error::Transport(format!("{} {}: {}", method, target.url, resp.status())))
                } else {
                    Ok(resp)
                }
            });
            match outcome {
                Err(e) if e.is_transient() && attempt < self.config.retries => {
                    attempt += 1;
                    log::warn!("retrying {} {} after: {e}", method, target.url);
                    thread::sleep(self.config.retry_delay);
                }
                other => return other,
            }
        }
    }
}

fn status_error(resp: &Response, key: &str) -> Error {
    match resp.status() {
        StatusCode::NOT_FOUND => Error::NotFound(key.to_string()),
        status => Error::Transport(format!("unexpected status {status} for `{key}`")),
    }
}

fn content_range_total(resp: &Response) -> Option<u64> {
    let value = resp.headers().get("content-range")?.to_str().ok()?;
    value.rsplit_once('/')?.1.trim().parse().ok()
}

impl ObjectStore for S3Store {
    fn uri(&self) -> String {
        format!("s3://{}", self.config.bucket)
    }

    fn object_size(&self, key: &str) -> Result<u64> {
        let target = self.target(Some(key), &[])?;
        let resp = self.send(Method::HEAD, &target, None)?;
        if !resp.status().is_success() {
            return Err(status_error(&resp, key));
        }
        resp.headers()
            .get("content-length")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::Transport(format!("HEAD `{key}` returned no Content-Length")))
    }

    fn read_range_into(
        &self,
        key: &str,
        offset: u64,
        length: u64,
        sink: &mut dyn Write,
    ) -> Result<u64> {
        if length == 0 {
            return Err(Error::InvalidArgument("range length must be at least 1".into()));
        }
        let target = self.target(Some(key), &[])?;
        let range = format!("bytes={}-{}", offset, offset.saturating_add(length - 1));
        let mut resp = self.send(Method::GET, &target, Some(&range))?;
        match resp.status() {
            StatusCode::PARTIAL_CONTENT => {}
            StatusCode::OK => {
                // Server ignored the Range header.
                io::copy(&mut (&mut resp).take(offset), &mut io::sink())
                    .map_err(|e| Error::Transport(e.to_string()))?;
            }
            StatusCode::RANGE_NOT_SATISFIABLE => {
                return Err(Error::OutOfRange {
                    offset,
                    size: content_range_total(&resp).unwrap_or(0),
                });
            }
            _ => return Err(status_error(&resp, key)),
        }
        let copied = io::copy(&mut resp.take(length), sink).map_err(|e| Error::Transport(e.to_string()))?;
        if copied == 0 {
            return Err(Error::OutOfRange { offset, size: offset });
        }
        Ok(copied)
    }

    fn list_keys(&self, prefix: &str) -> Result<Vec<String>> {
        let mut keys = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut query = vec![("list-type", "2"), ("prefix", prefix)];
            if let Some(t) = &token {
                query.push(("continuation-token", t.as_str()));
            }
            let target = self.target(None, &query)?;
            let resp = self.send(Method::GET, &target, None)?;
            if !resp.status().is_success() {
                return Err(status_error(&resp, &self.config.bucket));
            }
            let body = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
            keys.extend(xml_values(&body, "Key"));
            let truncated = xml_values(&body, "IsTruncated").first().map(String::as_str) == Some("true");
            token = xml_values(&body, "NextContinuationToken").into_iter().next();
            if !truncated || token.is_none() {
                break;
            }
        }
        keys.sort();
        Ok(keys)
    }
}

/// Text of every `<tag>...</tag>` element, entity-decoded.
fn xml_values(body: &str, tag: &str) -> Vec<String> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = body;
    while let Some(start) = rest.find(&open) {
        rest = &rest[start + open.len()..];
        let Some(end) = rest.find(&close) else { break };
        out.push(xml_unescape(&rest[..end]));
        rest = &rest[end + close.len()..];
    }
    out
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&amp;", "&")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_list_response() {
        let body = "<ListBucketResult><IsTruncated>true</IsTruncated>\
            <Contents><Key>a&amp;b.trk</Key><Size>3</Size></Contents>\
            <Contents><Key>c.trk</Key></Contents>\
            <NextContinuationToken>tok/1</NextContinuationToken></ListBucketResult>";
        assert_eq!(xml_values(body, "Key"), ["a&b.trk", "c.trk"]);
        assert_eq!(xml_values(body, "IsTruncated"), ["true"]);
        assert_eq!(xml_values(body, "NextContinuationToken"), ["tok/1"]);
    }

    #[test]
    fn addressing_styles() {
        let mut cfg = S3Config::new("bucket");
        cfg.region = "us-west-2".into();
        let store = S3Store::new(cfg.clone()).unwrap();
        let t = store.target(Some("dir/a b.trk"), &[]).unwrap();
        assert_eq!(t.url, "https://bucket.s3.us-west-2.amazonaws.com/dir/a%20b.trk");
        assert_eq!(t.host, "bucket.s3.us-west-2.amazonaws.com");
        assert_eq!(t.canonical_uri, "/dir/a%20b.trk");

        cfg.endpoint = Some("http://127.0.0.1:9000/".into());
        let store = S3Store::new(cfg).unwrap();
        let t = store.target(None, &[("prefix", "x/"), ("list-type", "2")]).unwrap();
        assert_eq!(t.url, "http://127.0.0.1:9000/bucket/?list-type=2&prefix=x%2F");
        assert_eq!(t.host, "127.0.0.1:9000");
    }

    #[test]
    fn uri_parsing() {
        assert!(S3Store::from_uri("s3://bucket").is_ok());
        assert!(S3Store::from_uri("s3://").is_err());
        assert!(S3Store::from_uri("s3://bucket/key").is_err());
    }
}
