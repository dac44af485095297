mod support;

use std::collections::BTreeSet;

use pi_sentry::aggregate::{build_table, prune, DefaultValues};
use pi_sentry::blacklist::{match_stream, Blacklist};
use pi_sentry::labeling::{propagate, rule_labels, LabelSource};
use pi_sentry::{parse_http_request, PairKey, RuleSet, TrafficRecord};
use support::record;

#[test]
fn shipped_rules_pass_battery() {
    let errors = support::rule_errors(&RuleSet::default());
    assert!(errors.is_empty(), "{errors:#?}");
    assert_eq!(support::rule_battery().len(), 30);
}

#[test]
fn rules_survive_json_round_trip() {
    let mut buf = Vec::new();
    RuleSet::default().to_json(&mut buf).unwrap();
    let back = RuleSet::from_json(buf.as_slice()).unwrap();
    assert!(support::rule_errors(&back).is_empty());
}

#[test]
fn prune_removes_exactly_listed_pairs() {
    let (records, default_only, singleton) = support::prune_fixture();
    let table = build_table(&records, &DefaultValues::default()).unwrap();
    let (pruned, report) = prune(&table);
    assert_eq!(report.default_only, default_only.len());
    assert_eq!(report.singleton, singleton.len());
    let removed: BTreeSet<PairKey> = table.pairs.keys().filter(|p| !pruned.pairs.contains_key(*p)).cloned().collect();
    let expected: BTreeSet<PairKey> = default_only.iter().chain(&singleton).map(|(a, k)| PairKey::new(*a, *k)).collect();
    assert_eq!(removed, expected);
    assert_eq!(prune(&pruned).0, pruned);
}

fn wechat_and_friend() -> Vec<TrafficRecord> {
    vec![
        record("u1", "WeChat", "short.weixin.qq.com", &[("imei", "HJS5T19626000575")]),
        record("u1", "WeChat", "short.weixin.qq.com", &[("imei", "HJS5T19626000575")]),
        record("u1", "Other", "sdk.example", &[("zx1", "HJS5T19626000575"), ("n", "1")]),
        record("u1", "Other", "sdk.example", &[("zx1", "HJS5T19626000575"), ("n", "1")]),
    ]
}

#[test]
fn shared_identifier_propagates_from_keyword_seed() {
    let table = prune(&build_table(&wechat_and_friend(), &DefaultValues::default()).unwrap()).0;
    let labels = rule_labels(&table, &RuleSet::default());
    let friend = &labels[&PairKey::new("Other", "zx1")];
    assert_eq!(friend.source, LabelSource::Propagated);
    assert_eq!(friend.pi_type, "Device Identifier");
    assert!(!labels.contains_key(&PairKey::new("Other", "n")));

    let seeds: BTreeSet<PairKey> = [PairKey::new("WeChat", "imei")].into();
    assert_eq!(propagate(&table, &seeds).len(), 2);
}

#[test]
fn blacklisted_wechat_imei_reports_one_leak() {
    let req = parse_http_request(support::WECHAT_REQUEST).unwrap();
    let rec = TrafficRecord {
        user_id: "u1".into(),
        app_id: "WeChat".into(),
        timestamp: 1_590_451_200_000,
        domain: req.domain,
        path: req.path,
        kvs: req.kvs,
    };
    let bl = Blacklist::from_pairs([(PairKey::new("WeChat", "imei"), None)], DefaultValues::default(), "test");
    let out = match_stream(&bl, [&rec]);
    assert_eq!(out.events.len(), 1);
    assert_eq!(out.events[0].value, "HJS5T19626000575");
}
