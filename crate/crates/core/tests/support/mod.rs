#![allow(dead_code)]

pub mod oracle;

use pi_sentry::ingest::{KvPair, KvSource, TrafficRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn record(user: &str, app: &str, domain: &str, kvs: &[(&str, &str)]) -> TrafficRecord {
    TrafficRecord {
        user_id: user.into(),
        app_id: app.into(),
        timestamp: 0,
        domain: domain.into(),
        path: "/".into(),
        kvs: kvs.iter().map(|(k, v)| KvPair::new(*k, *v, KvSource::Query)).collect(),
    }
}

/// Six records over apps A and B. `b_user` sends x1 under key q in B.
pub fn t1_with(b_user: &str) -> Vec<TrafficRecord> {
    vec![
        record("u1", "A", "d1", &[("k", "x1")]),
        record("u1", "A", "d1", &[("k", "x1")]),
        record("u1", "A", "d1", &[("k", "x2")]),
        record("u2", "A", "d1", &[("k", "x1")]),
        record(b_user, "B", "d1", &[("q", "x1")]),
        record("u2", "B", "d2", &[("r", "y1")]),
    ]
}

pub fn t1() -> Vec<TrafficRecord> {
    t1_with("u1")
}

/// One micro-corpus record as small indices, so proptest can shrink it.
pub type RecSpec = (usize, usize, usize, Vec<(usize, usize)>);

const KEYS: [&str; 4] = ["k0", "k1", "k2", "id"];
const VALUES: [&str; 7] = ["v0", "v1", "v2", "abcdef123", "none", "", "[IMEI]"];

pub fn from_specs(specs: &[RecSpec]) -> Vec<TrafficRecord> {
    specs
        .iter()
        .map(|(u, a, d, kvs)| {
            let kvs: Vec<(&str, &str)> = kvs.iter().map(|(k, v)| (KEYS[*k % 4], VALUES[*v % 7])).collect();
            record(&format!("u{u}"), &format!("app{a}"), &format!("d{d}.example"), &kvs)
        })
        .collect()
}

pub fn spec_strategy() -> impl proptest::strategy::Strategy<Value = Vec<RecSpec>> {
    proptest::collection::vec(
        (0..4usize, 0..5usize, 0..3usize, proptest::collection::vec((0..4usize, 0..7usize), 1..4)),
        1..=50,
    )
}

/// Seeded micro-corpus: at most 5 apps, 4 users, 50 records.
pub fn micro_corpus(seed: u64) -> Vec<TrafficRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(8..=50);
    let specs: Vec<RecSpec> = (0..n)
        .map(|_| {
            let kvs = (0..rng.gen_range(1..4))
                .map(|_| (rng.gen_range(0..4), rng.gen_range(0..7)))
                .collect();
            (rng.gen_range(0..4), rng.gen_range(0..5), rng.gen_range(0..3), kvs)
        })
        .collect();
    from_specs(&specs)
}

/// A WeChat report request with three query pairs.
pub const WECHAT_REQUEST: &str = "GET /cgi-bin/micromsg-bin/getreport?imei=HJS5T19626000575&startDate=20200526&endDate=20200527 HTTP/1.1\r\n\
Host: short.weixin.qq.com\r\n\
User-Agent: MicroMessenger Client\r\n\
Accept: */*\r\n\
Connection: close\r\n\
\r\n";

pub enum Probe {
    Key(&'static str),
    Value(&'static str),
}

/// Hand-derived expectations for the built-in rules.
pub fn rule_battery() -> Vec<(Probe, Option<&'static str>)> {
    use Probe::*;
    const D: Option<&str> = Some("Device Identifier");
    const U: Option<&str> = Some("User Identifier");
    const M: Option<&str> = Some("MAC Address");
    const L: Option<&str> = Some("Location");
    const E: Option<&str> = Some("Email");
    const P: Option<&str> = Some("Phone Number");
    vec![
        (Key("imei"), D),
        (Key("IMEI"), D),
        (Key("user_id"), U),
        (Key("user-id"), U),
        (Key("serialnumber"), D),
        (Key("misi"), D),
        (Key("mac_address"), M),
        (Key("latlng"), L),
        (Key("lon"), L),
        (Key("address"), L),
        (Key("username"), None),
        (Key("imei2"), None),
        (Key("appver"), None),
        (Key("device"), None),
        (Value("00:1A:2b:3c:4d:5e"), M),
        (Value("00-1a-2b-3c-4d-5e"), M),
        (Value("00:1a:2b-3c:4d:5e"), None),
        (Value("00:1a:2b:3c:4d"), None),
        (Value("00:1a:2b:3c:4d:5g"), None),
        (Value("alice@example.com"), E),
        (Value("first.last+tag@mail.example.co.uk"), E),
        (Value("alice@localhost"), None),
        (Value("alice.example.com"), None),
        (Value("@example.com"), None),
        (Value("13812345678"), P),
        (Value("8613812345678"), P),
        (Value("14512345678"), P),
        (Value("14612345678"), None),
        (Value("1381234567"), None),
        (Value("HJS5T19626000575"), None),
    ]
}

/// Runs the battery and returns the mismatches.
pub fn rule_errors(rules: &pi_sentry::RuleSet) -> Vec<String> {
    rule_battery()
        .into_iter()
        .filter_map(|(probe, want)| {
            let (input, got) = match probe {
                Probe::Key(k) => (k, rules.match_key(k)),
                Probe::Value(v) => (v, rules.match_value(v)),
            };
            (got != want).then(|| format!("{input}: got {got:?}, want {want:?}"))
        })
        .collect()
}

/// Records with known default-only and singleton pairs, and the pairs that
/// prune must remove for each reason.
pub type PairList = Vec<(&'static str, &'static str)>;

pub fn prune_fixture() -> (Vec<TrafficRecord>, PairList, PairList) {
    let records = vec![
        record("u1", "a", "d", &[("dflt", "none"), ("keep", "abc"), ("once", "abc")]),
        record("u2", "a", "d", &[("dflt", "-"), ("keep", "abc"), ("blank", "")]),
        record("u1", "a", "d", &[("dflt", "UNKNOWN"), ("mixed", "[MAC]")]),
        record("u1", "a", "d", &[("mixed", "real-value")]),
        record("u1", "b", "e", &[("keep2", "1"), ("tok", "[IMEI]")]),
        record("u1", "b", "e", &[("keep2", "2"), ("tok", "[IMEI]"), ("solo", "x")]),
        record("u2", "b", "e", &[("keep2", "3")]),
    ];
    let default_only = vec![("a", "blank"), ("a", "dflt"), ("b", "tok")];
    let singleton = vec![("a", "once"), ("b", "solo")];
    (records, default_only, singleton)
}
