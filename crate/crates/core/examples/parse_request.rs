// Extracting key-value pairs from raw HTTP requests and corpus lines.

use pi_sentry::ingest::{parse_http_request, parse_jsonl_corpus};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let get = "GET /cgi-bin/micromsg-bin/getreport?imei=HJS5T19626000575&startDate=20200526&endDate=20200527 HTTP/1.1\r\n\
               Host: short.weixin.qq.com\r\n\r\n";
    let req = parse_http_request(get)?;
    println!("{}{}", req.domain, req.path);
    for kv in &req.kvs {
        println!("  {:<10} = {:<18} ({:?})", kv.key, kv.value, kv.source);
    }

    let post = "POST /v2/track HTTP/1.1\r\nHost: sdk.example.com:443\r\nContent-Type: application/json\r\n\r\n\
                {\"did\":\"a1b2c3d4e5\",\"ev\":\"open\",\"geo\":{\"lat\":39.9,\"lng\":116.4}}";
    let req = parse_http_request(post)?;
    let keys: Vec<&str> = req.kvs.iter().map(|kv| kv.key.as_str()).collect();
    println!("{} -> {:?}", req.domain, keys);

    // Structured and raw lines can be mixed; bad lines are tallied, not fatal.
    let corpus = concat!(
        r#"{"user":"u1","app":"news","ts":1,"domain":"api.news.example","kv":[{"k":"uid","v":"42","src":"query"}]}"#,
        "\n",
        r#"{"user":"u1","app":"news","ts":2,"raw":"GET /feed?page=2&uid=42 HTTP/1.1\r\nHost: api.news.example\r\n\r\n"}"#,
        "\n",
        r#"{"user":"u2","ts":3}"#,
        "\n",
    );
    let out = parse_jsonl_corpus(corpus.as_bytes())?;
    println!("{} records, {} skipped", out.records.len(), out.error_count());
    for e in &out.errors {
        println!("  {e}");
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
