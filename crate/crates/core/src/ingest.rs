//! Traffic ingestion: JSONL corpora and raw HTTP/1.x requests.
//!
//! Key-value pairs are harvested from the URL query string, from
//! `application/x-www-form-urlencoded` bodies and from top-level members of
//! JSON object bodies. One-level nested JSON objects are flattened into
//! `parent.child` keys. Headers and cookies are never harvested.

use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvSource {
    Query,
    BodyForm,
    BodyJson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvPair {
    #[serde(rename = "k")]
    pub key: String,
    #[serde(rename = "v")]
    pub value: String,
    #[serde(rename = "src")]
    pub source: KvSource,
}

impl KvPair {
    pub fn new(key: impl Into<String>, value: impl Into<String>, source: KvSource) -> Self {
        Self {
            key: key.into(),
            value: value.into(),
            source,
        }
    }
}

/// One HTTP request attributed to a user and an app.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficRecord {
    pub user_id: String,
    pub app_id: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp: i64,
    /// Lowercase hostname.
    pub domain: String,
    pub path: String,
    pub kvs: Vec<KvPair>,
}

impl TrafficRecord {
    /// Serializes the record as one line of the structured corpus schema
    /// (without the trailing newline).
    pub fn to_jsonl(&self) -> String {
        let line = StructuredLine {
            user: self.user_id.clone(),
            app: self.app_id.clone(),
            ts: self.timestamp,
            domain: self.domain.clone(),
            path: self.path.clone(),
            kv: self.kvs.clone(),
        };
        serde_json::to_string(&line).expect("record serialization is infallible")
    }
}

#[derive(Serialize)]
struct StructuredLine {
    user: String,
    app: String,
    ts: i64,
    domain: String,
    path: String,
    kv: Vec<KvPair>,
}

/// Both accepted line shapes. `raw` takes precedence when present.
#[derive(Deserialize)]
struct CorpusLine {
    user: Option<String>,
    app: Option<String>,
    ts: Option<i64>,
    domain: Option<String>,
    #[serde(default)]
    path: Option<String>,
    kv: Option<Vec<KvPair>>,
    raw: Option<String>,
}

/// Result of parsing a single raw request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRequest {
    pub domain: String,
    pub path: String,
    pub kvs: Vec<KvPair>,
    /// A body was present but could not be parsed; `kvs` then holds the
    /// query pairs only.
    pub body_unparsed: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

/// Records parsed from a corpus plus the tally of everything skipped.
#[derive(Debug, Default, Clone)]
pub struct IngestOutcome {
    pub records: Vec<TrafficRecord>,
    pub errors: Vec<LineError>,
    pub unparsed_bodies: usize,
}

impl IngestOutcome {
    pub fn error_count(&self) -> usize {
        self.errors.len()
    }
}

/// Parses a newline-delimited corpus. Blank lines are ignored; malformed
/// lines are skipped and tallied. Only a failing reader is fatal.
pub fn parse_jsonl_corpus<R: BufRead>(reader: R) -> Result<IngestOutcome> {
    let mut out = IngestOutcome::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_corpus_line(&line) {
            Ok((record, unparsed)) => {
                if unparsed {
                    out.unparsed_bodies += 1;
                }
                out.records.push(record);
            }
            Err(message) => out.errors.push(LineError {
                line: idx + 1,
                message,
            }),
        }
    }
    Ok(out)
}

fn parse_corpus_line(line: &str) -> std::result::Result<(TrafficRecord, bool), String> {
    let parsed: CorpusLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let user_id = required(parsed.user, "user")?;
    let app_id = required(parsed.app, "app")?;
    let timestamp = parsed.ts.ok_or_else(|| "missing field `ts`".to_string())?;

    if let Some(raw) = parsed.raw {
        let req = parse_http_request(&raw).map_err(|e| e.to_string())?;
        let record = TrafficRecord {
            user_id,
            app_id,
            timestamp,
            domain: req.domain,
            path: req.path,
            kvs: req.kvs,
        };
        return Ok((record, req.body_unparsed));
    }

    let domain = required(parsed.domain, "domain")?.to_ascii_lowercase();
    let kvs = parsed.kv.ok_or_else(|| "missing field `kv`".to_string())?;
    if kvs.iter().any(|kv| kv.key.is_empty()) {
        return Err("empty key in `kv`".to_string());
    }
    Ok((
        TrafficRecord {
            user_id,
            app_id,
            timestamp,
            domain,
            path: parsed.path.unwrap_or_default(),
            kvs,
        },
        false,
    ))
}

fn required(field: Option<String>, name: &str) -> std::result::Result<String, String> {
    match field {
        Some(s) if !s.is_empty() => Ok(s),
        Some(_) => Err(format!("empty field `{name}`")),
        None => Err(format!("missing field `{name}`")),
    }
}

/// Parses an HTTP/1.x request into its host, path and key-value pairs.
pub fn parse_http_request(raw: &str) -> Result<ParsedRequest> {
    let (head, body) = split_head_body(raw);
    let mut lines = head.lines().map(|l| l.trim_end_matches('\r'));

    let request_line = lines
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::HttpParse("missing request line".into()))?;
    let mut parts = request_line.split_whitespace();
    let (_method, target, version) = match (parts.next(), parts.next(), parts.next()) {
        (Some(m), Some(t), Some(v)) => (m, t, v),
        _ => {
            return Err(Error::HttpParse(format!(
                "bad request line `{request_line}`"
            )))
        }
    };
    if !version.starts_with("HTTP/1.") {
        return Err(Error::HttpParse(format!("unsupported version `{version}`")));
    }

    let mut host = None;
    let mut content_type = None;
    for line in lines {
        let Some((name, value)) = line.split_once(':') else {
            continue;
        };
        let value = value.trim();
        if name.trim().eq_ignore_ascii_case("host") {
            host = Some(value.to_string());
        } else if name.trim().eq_ignore_ascii_case("content-type") {
            content_type = Some(value.to_ascii_lowercase());
        }
    }

    // Absolute-form targets carry their own authority.
    let (target_host, path_and_query) = split_absolute_target(target);
    let host = host
        .filter(|h| !h.is_empty())
        .or(target_host)
        .ok_or_else(|| Error::HttpParse("missing Host header".into()))?;
    let domain = strip_port(&host).to_ascii_lowercase();
    if domain.is_empty() {
        return Err(Error::HttpParse("empty Host header".into()));
    }

    let (path, query) = match path_and_query.split_once('?') {
        Some((p, q)) => (p, Some(q)),
        None => (path_and_query, None),
    };
    // Fragments are never sent on the wire, but tolerate them.
    let query = query.map(|q| q.split('#').next().unwrap_or(""));

    let mut kvs = Vec::new();
    if let Some(q) = query {
        kvs.extend(
            parse_urlencoded(q)
                .into_iter()
                .map(|(k, v)| KvPair::new(k, v, KvSource::Query)),
        );
    }

    let mut body_unparsed = false;
    let body = body.trim_matches(|c| c == '\r' || c == '\n');
    if !body.is_empty() {
        match parse_body(body, content_type.as_deref()) {
            Some(pairs) => kvs.extend(pairs),
            None => body_unparsed = true,
        }
    }

    Ok(ParsedRequest {
        domain,
        path: path.to_string(),
        kvs,
        body_unparsed,
    })
}

fn split_head_body(raw: &str) -> (&str, &str) {
    if let Some(i) = raw.find("\r\n\r\n") {
        (&raw[..i], &raw[i + 4..])
    } else if let Some(i) = raw.find("\n\n") {
        (&raw[..i], &raw[i + 2..])
    } else {
        (raw, "")
    }
}

fn split_absolute_target(target: &str) -> (Option<String>, &str) {
    for scheme in ["http://", "https://"] {
        if let Some(rest) = target.strip_prefix(scheme) {
            let cut = rest.find(['/', '?']).unwrap_or(rest.len());
            let (authority, tail) = rest.split_at(cut);
            let tail = if tail.is_empty() { "/" } else { tail };
            return (Some(authority.to_string()), tail);
        }
    }
    (None, target)
}

fn strip_port(host: &str) -> &str {
    if host.starts_with('[') {
        // IPv6 literal
        return host.split_once(']').map_or(host, |(h, _)| &h[1..]);
    }
    host.rsplit_once(':')
        .filter(|(_, port)| port.chars().all(|c| c.is_ascii_digit()))
        .map_or(host, |(h, _)| h)
}

fn parse_body(body: &str, content_type: Option<&str>) -> Option<Vec<KvPair>> {
    let looks_json = body.trim_start().starts_with('{');
    match content_type {
        Some(ct) if ct.contains("json") => parse_json_body(body),
        Some(ct) if ct.contains("x-www-form-urlencoded") => parse_form_body(body),
        _ if looks_json => parse_json_body(body),
        _ if body.contains('=') => parse_form_body(body),
        _ => None,
    }
}

fn parse_form_body(body: &str) -> Option<Vec<KvPair>> {
    let pairs = parse_urlencoded(body.trim());
    if pairs.is_empty() {
        return None;
    }
    Some(
        pairs
            .into_iter()
            .map(|(k, v)| KvPair::new(k, v, KvSource::BodyForm))
            .collect(),
    )
}

fn parse_json_body(body: &str) -> Option<Vec<KvPair>> {
    let Value::Object(map) = serde_json::from_str::<Value>(body).ok()? else {
        return None;
    };
    let mut out = Vec::new();
    for (key, value) in &map {
        match value {
            Value::Object(children) => {
                for (child, v) in children {
                    if let Some(s) = scalar_text(v) {
                        out.push(KvPair::new(format!("{key}.{child}"), s, KvSource::BodyJson));
                    }
                }
            }
            v => {
                if let Some(s) = scalar_text(v) {
                    out.push(KvPair::new(key.clone(), s, KvSource::BodyJson));
                }
            }
        }
    }
    out.retain(|kv| !kv.key.is_empty());
    Some(out)
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Splits an `application/x-www-form-urlencoded` string into decoded pairs.
/// Order, duplicates and empty values are preserved; empty keys are dropped.
pub fn parse_urlencoded(input: &str) -> Vec<(String, String)> {
    input
        .split('&')
        .filter(|seg| !seg.is_empty())
        .filter_map(|seg| {
            let (k, v) = seg.split_once('=').unwrap_or((seg, ""));
            let key = percent_decode(k);
            (!key.is_empty()).then(|| (key, percent_decode(v)))
        })
        .collect()
}

/// Decodes `%XX` escapes and `+` as space. Invalid escapes pass through
/// unchanged; invalid UTF-8 is replaced lossily.
pub fn percent_decode(input: &str) -> String {
    let bytes = input.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'+' => out.push(b' '),
            b'%' if i + 2 < bytes.len() => {
                match (hex_val(bytes[i + 1]), hex_val(bytes[i + 2])) {
                    (Some(h), Some(l)) => {
                        out.push(h << 4 | l);
                        i += 3;
                        continue;
                    }
                    _ => out.push(b'%'),
                }
            }
            b => out.push(b),
        }
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn hex_val(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        b'A'..=b'F' => Some(b - b'A' + 10),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_query_pair_from_structured_line() {
        let line = r#"{"user":"u1","app":"a1","ts":1,"domain":"d.com","path":"/","kv":[{"k":"k","v":"v","src":"query"}]}"#;
        let out = parse_jsonl_corpus(line.as_bytes()).unwrap();
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].kvs, vec![KvPair::new("k", "v", KvSource::Query)]);
        assert_eq!(out.error_count(), 0);
    }

    #[test]
    fn empty_stream() {
        let out = parse_jsonl_corpus(&b""[..]).unwrap();
        assert!(out.records.is_empty());
        assert_eq!(out.error_count(), 0);
    }

    #[test]
    fn missing_app_is_tallied() {
        let good = r#"{"user":"u","app":"a","ts":1,"domain":"d.com","path":"/","kv":[]}"#;
        let bad = r#"{"user":"u","ts":1,"domain":"d.com","path":"/","kv":[]}"#;
        let input = format!("{good}\n{good}\n{bad}\n{good}\n");
        let out = parse_jsonl_corpus(input.as_bytes()).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.error_count(), 1);
        assert_eq!(out.errors[0].line, 3);
    }

    #[test]
    fn raw_line_is_parsed() {
        let line = serde_json::json!({
            "user": "u", "app": "a", "ts": 5,
            "raw": "GET /x?id=1 HTTP/1.1\r\nHost: API.Example.com\r\n\r\n"
        })
        .to_string();
        let out = parse_jsonl_corpus(line.as_bytes()).unwrap();
        assert_eq!(out.records[0].domain, "api.example.com");
        assert_eq!(out.records[0].path, "/x");
        assert_eq!(out.records[0].kvs, vec![KvPair::new("id", "1", KvSource::Query)]);
    }

    #[test]
    fn bare_get_has_no_pairs() {
        let req = parse_http_request("GET /p HTTP/1.1\r\nHost: x.com\r\n\r\n").unwrap();
        assert_eq!(req.domain, "x.com");
        assert_eq!(req.path, "/p");
        assert!(req.kvs.is_empty());
        assert!(!req.body_unparsed);
    }

    #[test]
    fn missing_host_is_an_error() {
        assert!(parse_http_request("GET /p HTTP/1.1\r\nAccept: */*\r\n\r\n").is_err());
        assert!(parse_http_request("").is_err());
    }

    #[test]
    fn duplicate_and_empty_values_kept() {
        let req = parse_http_request("GET /?a=1&b=&a=2 HTTP/1.1\r\nHost: h\r\n\r\n").unwrap();
        let pairs: Vec<_> = req.kvs.iter().map(|kv| (kv.key.as_str(), kv.value.as_str())).collect();
        assert_eq!(pairs, vec![("a", "1"), ("b", ""), ("a", "2")]);
    }

    #[test]
    fn form_and_json_bodies() {
        let form = "POST /s HTTP/1.1\r\nHost: h:8080\r\nContent-Type: application/x-www-form-urlencoded\r\n\r\nmail=a%40b.com&n=1";
        let req = parse_http_request(form).unwrap();
        assert_eq!(req.domain, "h");
        assert_eq!(req.kvs[0], KvPair::new("mail", "a@b.com", KvSource::BodyForm));

        let json = "POST /s?q=1 HTTP/1.1\r\nHost: h\r\nContent-Type: application/json\r\n\r\n{\"id\":\"x\",\"n\":3,\"geo\":{\"lat\":1.5,\"deep\":{\"z\":1}},\"arr\":[1],\"b\":true}";
        let req = parse_http_request(json).unwrap();
        let keys: Vec<_> = req.kvs.iter().map(|kv| kv.key.as_str()).collect();
        assert_eq!(keys, vec!["q", "id", "n", "geo.lat"]);
        assert_eq!(req.kvs[3].value, "1.5");
    }

    #[test]
    fn unparseable_body_keeps_query_pairs() {
        let raw = "POST /s?q=1 HTTP/1.1\r\nHost: h\r\nContent-Type: application/json\r\n\r\n{not json";
        let req = parse_http_request(raw).unwrap();
        assert_eq!(req.kvs.len(), 1);
        assert!(req.body_unparsed);
    }

    #[test]
    fn percent_decoding_edge_cases() {
        assert_eq!(percent_decode("a%2"), "a%2");
        assert_eq!(percent_decode("%zz"), "%zz");
        assert_eq!(percent_decode("%25"), "%");
        assert_eq!(percent_decode("%2541"), "%41");
        assert_eq!(percent_decode("a+b"), "a b");
    }

    #[test]
    fn absolute_form_target() {
        let req = parse_http_request("GET http://Proxy.Host:80/a?x=1 HTTP/1.1\r\n\r\n").unwrap();
        assert_eq!(req.domain, "proxy.host");
        assert_eq!(req.path, "/a");
    }
}
