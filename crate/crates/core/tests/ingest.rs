mod support;

use pi_sentry::ingest::{parse_http_request, parse_jsonl_corpus, parse_urlencoded, KvPair, KvSource, TrafficRecord};
use proptest::prelude::*;

#[test]
fn wechat_request_yields_three_pairs() {
    let req = parse_http_request(support::WECHAT_REQUEST).unwrap();
    assert_eq!(req.domain, "short.weixin.qq.com");
    let kvs: Vec<(&str, &str)> = req.kvs.iter().map(|kv| (kv.key.as_str(), kv.value.as_str())).collect();
    assert_eq!(
        kvs,
        [("imei", "HJS5T19626000575"), ("startDate", "20200526"), ("endDate", "20200527")]
    );
    assert!(req.kvs.iter().all(|kv| kv.source == KvSource::Query));
}

#[test]
fn headers_and_cookies_are_not_harvested() {
    let raw = "POST /api HTTP/1.1\r\nHost: a.example:8080\r\nCookie: sid=abc\r\nX-Imei: 123\r\n\
               Content-Type: application/json\r\n\r\n{\"uid\":\"u-1\",\"n\":3,\"dev\":{\"mac\":\"aa:bb:cc:dd:ee:ff\",\"deep\":{\"x\":1}}}";
    let req = parse_http_request(raw).unwrap();
    assert_eq!(req.domain, "a.example");
    let keys: Vec<&str> = req.kvs.iter().map(|kv| kv.key.as_str()).collect();
    assert_eq!(keys, ["uid", "n", "dev.mac"]);
}

fn query_string() -> impl Strategy<Value = String> {
    let atoms = prop_oneof![
        Just("a".to_string()),
        Just("Z9".to_string()),
        Just("=".to_string()),
        Just("&".to_string()),
        Just("+".to_string()),
        Just("%".to_string()),
        Just("%2".to_string()),
        Just("%41".to_string()),
        Just("%e4%b8%ad".to_string()),
        Just("%zz".to_string()),
        Just("%FF".to_string()),
        Just("é".to_string()),
        Just("-_.".to_string()),
    ];
    proptest::collection::vec(atoms, 0..24).prop_map(|v| v.concat())
}

proptest! {
    #[test]
    fn urlencoded_matches_reference_decoder(q in query_string()) {
        let ours = parse_urlencoded(&q);
        let reference: Vec<(String, String)> = url::form_urlencoded::parse(q.as_bytes())
            .into_owned()
            .filter(|(k, _)| !k.is_empty())
            .collect();
        prop_assert_eq!(ours, reference);
    }

    #[test]
    fn structured_lines_round_trip(
        rows in proptest::collection::vec(
            ("[a-z]{1,6}", "[a-z]{1,6}", any::<i64>(), "[a-z.]{1,10}", "/[a-z]{0,5}",
             proptest::collection::vec(("[a-zA-Z_]{1,5}", ".{0,8}"), 0..5)),
            0..20,
        )
    ) {
        let records: Vec<TrafficRecord> = rows
            .into_iter()
            .map(|(u, a, ts, d, p, kvs)| TrafficRecord {
                user_id: u,
                app_id: a,
                timestamp: ts,
                domain: d,
                path: p,
                kvs: kvs.into_iter().map(|(k, v)| KvPair::new(k, v, KvSource::BodyForm)).collect(),
            })
            .collect();
        let text: String = records.iter().map(|r| r.to_jsonl() + "\n").collect();
        let outcome = parse_jsonl_corpus(text.as_bytes()).unwrap();
        prop_assert!(outcome.errors.is_empty());
        prop_assert_eq!(outcome.records, records);
    }
}
