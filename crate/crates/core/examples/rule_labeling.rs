// Seeding labels from keyword/regex rules and spreading them through shared
// values.

use pi_sentry::aggregate::{build_table, prune, DefaultValues};
use pi_sentry::labeling::rule_labels;
use pi_sentry::{KvPair, KvSource, RuleSet, TrafficRecord};

fn rec(user: &str, app: &str, kvs: &[(&str, &str)]) -> TrafficRecord {
    TrafficRecord {
        user_id: user.into(),
        app_id: app.into(),
        timestamp: 0,
        domain: format!("{app}.example"),
        path: "/".into(),
        kvs: kvs.iter().map(|(k, v)| KvPair::new(*k, *v, KvSource::Query)).collect(),
    }
}

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let rules = RuleSet::default();
    for probe in ["IMEI", "user_id", "zx1"] {
        println!("key   {probe:<22} -> {:?}", rules.match_key(probe));
    }
    for probe in ["3c:5a:b4:01:02:03", "someone@mail.example.com", "13912345678", "20200526"] {
        println!("value {probe:<22} -> {:?}", rules.match_value(probe));
    }

    let mut records = Vec::new();
    for _ in 0..2 {
        records.push(rec("u1", "shop", &[("imei", "861234567890123"), ("page", "1")]));
        records.push(rec("u1", "maps", &[("q9", "861234567890123"), ("zoom", "12")]));
        records.push(rec("u1", "mail", &[("from", "someone@mail.example.com")]));
    }
    let table = prune(&build_table(&records, &DefaultValues::default())?).0;
    for (pair, m) in rule_labels(&table, &rules) {
        println!("{pair:<14} {:<18} via {:?}", m.pi_type, m.source);
    }

    // Rule sets are plain JSON: type -> keywords and regexes.
    let custom = r#"{"Advertising Id": {"keywords": ["idfa", "gaid"], "regexes": []}}"#;
    let custom = RuleSet::from_json(custom.as_bytes())?;
    println!("custom: gaid -> {:?}", custom.match_key("GAID"));
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
