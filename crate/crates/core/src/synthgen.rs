//! Seeded synthetic traffic with planted PI and ground-truth labels.
//!
//! Every app owns a handful of endpoints. Each endpoint carries ordinary
//! fields (timestamps, counters, versions, resource ids, tokens, platform
//! constants) and possibly planted PI fields. PI values are stable per user
//! and reused across the apps that plant the same kind, so the cross-app
//! value features see them. Planted fields come in three namings:
//!
//! * `keyword` uses a key from the rule lists (`imei`, `mac`, ...);
//! * `neutral` uses a meaningless key such as `qk3`;
//! * `obfuscated` uses a meaningless key and sends a 32-hex hash of the
//!   user's value instead of the value itself.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::PairKey;
use crate::error::{Error, Result};
use crate::ingest::{KvPair, KvSource, TrafficRecord};
use crate::labeling::{Label, Override, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiKind {
    Imei,
    Mac,
    Email,
    Phone,
}

impl PiKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PiKind::Imei => "imei",
            PiKind::Mac => "mac",
            PiKind::Email => "email",
            PiKind::Phone => "phone",
        }
    }

    fn keyword_names(self) -> &'static [&'static str] {
        match self {
            PiKind::Imei => &["imei", "deviceid", "device_id"],
            PiKind::Mac => &["mac", "mac_address"],
            PiKind::Email => &["email", "mail"],
            PiKind::Phone => &["phone", "mobile", "tel"],
        }
    }

    fn placeholder(self) -> &'static str {
        match self {
            PiKind::Imei => "[IMEI]",
            PiKind::Mac => "[MAC]",
            PiKind::Email | PiKind::Phone => "unknown",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Naming {
    Keyword,
    Neutral,
    Obfuscated,
}

impl fmt::Display for Naming {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Naming::Keyword => "keyword",
            Naming::Neutral => "neutral",
            Naming::Obfuscated => "obfuscated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiPlant {
    pub kind: PiKind,
    pub naming: Naming,
    /// Fraction of apps carrying this plant, in `(0, 1]`.
    pub app_coverage: f64,
    /// Sent to a shared SDK domain instead of the app's own host.
    pub third_party: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonPiKind {
    Timestamp,
    Counter,
    AppVersion,
    ResourcePath,
    RandomToken,
    Platform,
}

impl NonPiKind {
    fn names(self) -> &'static [&'static str] {
        match self {
            NonPiKind::Timestamp => &["ts", "t", "timestamp", "time", "_t", "reqtime"],
            NonPiKind::Counter => &["seq", "page", "offset", "count", "idx", "retry"],
            NonPiKind::AppVersion => &["ver", "appver", "version", "app_version", "vc", "sdkver"],
            NonPiKind::ResourcePath => &["item", "cid", "res", "page_id", "feed", "topic"],
            NonPiKind::RandomToken => &["nonce", "sign", "token", "rid", "reqid", "sig"],
            NonPiKind::Platform => &["os", "lang", "net", "channel", "brand", "platform"],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_apps: usize,
    /// Inclusive range of requests one user sends to one app.
    pub requests_per_app_user: (u32, u32),
    /// Probability that a given user uses a given app.
    pub app_adoption: f64,
    pub pi_plant_spec: Vec<PiPlant>,
    pub non_pi_spec: Vec<NonPiKind>,
    /// Share of PI occurrences replaced by a placeholder value.
    pub default_value_rate: f64,
    /// PI-keyed pairs that only ever carry placeholders.
    pub default_only_pairs: usize,
    /// Share of records emitted as raw HTTP requests.
    pub raw_fraction: f64,
    pub start_ts_ms: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use Naming::*;
        use PiKind::*;
        let plant = |kind, naming, app_coverage, third_party| PiPlant {
            kind,
            naming,
            app_coverage,
            third_party,
        };
        Self {
            seed: 1,
            n_users: 100,
            n_apps: 50,
            requests_per_app_user: (20, 80),
            app_adoption: 0.4,
            pi_plant_spec: vec![
                plant(Imei, Keyword, 0.5, false),
                plant(Imei, Neutral, 0.3, false),
                plant(Imei, Obfuscated, 0.3, false),
                plant(Mac, Keyword, 0.4, true),
                plant(Mac, Obfuscated, 0.2, true),
                plant(Email, Neutral, 0.2, false),
                plant(Phone, Keyword, 0.2, false),
                plant(Phone, Neutral, 0.1, false),
            ],
            non_pi_spec: vec![
                NonPiKind::Timestamp,
                NonPiKind::Counter,
                NonPiKind::AppVersion,
                NonPiKind::ResourcePath,
                NonPiKind::RandomToken,
                NonPiKind::Platform,
            ],
            default_value_rate: 0.03,
            default_only_pairs: 2,
            raw_fraction: 0.02,
            start_ts_ms: 1_590_000_000_000,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SynthConfig(m));
        if self.n_users < 2 {
            return bad("n_users must be at least 2".into());
        }
        if self.n_apps == 0 {
            return bad("n_apps must be positive".into());
        }
        let (lo, hi) = self.requests_per_app_user;
        if lo < 2 || lo > hi {
            return bad(format!("bad request range {lo}..={hi}"));
        }
        if !(self.app_adoption > 0.0 && self.app_adoption <= 1.0) {
            return bad("app_adoption must be in (0, 1]".into());
        }
        for p in &self.pi_plant_spec {
            if !(p.app_coverage > 0.0 && p.app_coverage <= 1.0) {
                return bad(format!("coverage {} outside (0, 1]", p.app_coverage));
            }
            if p.app_coverage * (self.n_apps as f64) < 1.0 {
                return bad(format!(
                    "{:?}/{} coverage {} reaches no app out of {}",
                    p.kind, p.naming, p.app_coverage, self.n_apps
                ));
            }
        }
        for r in [self.default_value_rate, self.raw_fraction] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("rate {r} outside [0, 1)"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub label: Label,
    pub pi_kind: Option<PiKind>,
    pub naming: Option<Naming>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub pairs: BTreeMap<PairKey, TruthEntry>,
}

impl GroundTruth {
    pub fn positives(&self) -> impl Iterator<Item = (&PairKey, &TruthEntry)> {
        self.pairs.iter().filter(|(_, e)| e.label == Label::Positive)
    }

    pub fn label(&self, pair: &PairKey) -> Option<Label> {
        self.pairs.get(pair).map(|e| e.label)
    }

    /// `app,key,label,pi_kind,naming`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["app", "key", "label", "pi_kind", "naming"])?;
        for (p, e) in &self.pairs {
            let label = match e.label {
                Label::Positive => "pos",
                Label::Negative => "neg",
            };
            w.write_record([
                p.app.clone(),
                p.key.clone(),
                label.to_string(),
                e.pi_kind.map(|k| k.as_str().to_string()).unwrap_or_default(),
                e.naming.map(|n| n.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut pairs = BTreeMap::new();
        for row in r.records() {
            let row = row?;
            let invalid = |reason: &str| Error::InvalidArtifact {
                artifact: "ground truth csv".into(),
                reason: reason.into(),
            };
            if row.len() < 3 {
                return Err(invalid("short row"));
            }
            let label = match &row[2] {
                "pos" => Label::Positive,
                "neg" => Label::Negative,
                _ => return Err(invalid("bad label")),
            };
            let pi_kind = match row.get(3).unwrap_or("") {
                "" => None,
                s => Some(serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| invalid("bad pi_kind"))?),
            };
            let naming = match row.get(4).unwrap_or("") {
                "" => None,
                s => Some(serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| invalid("bad naming"))?),
            };
            pairs.insert(PairKey::new(&row[0], &row[1]), TruthEntry { label, pi_kind, naming });
        }
        Ok(Self { pairs })
    }

    /// Stand-in for manual negative labeling: `n` seeded ground-truth
    /// negatives as overrides.
    pub fn sample_negative_overrides(&self, n: usize, seed: u64) -> Vec<Override> {
        let mut negs: Vec<&PairKey> = self
            .pairs
            .iter()
            .filter(|(_, e)| e.label == Label::Negative)
            .map(|(p, _)| p)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        negs.shuffle(&mut rng);
        let mut picked: Vec<Override> = negs
            .into_iter()
            .take(n)
            .map(|p| Override {
                pair: p.clone(),
                label: Label::Negative,
                pi_type: None,
            })
            .collect();
        picked.sort_by(|a, b| a.pair.cmp(&b.pair));
        picked
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantStats {
    pub records: usize,
    /// PI occurrences carrying a real value.
    pub planted_leaks: u64,
    /// PI occurrences carrying a placeholder.
    pub planted_defaults: u64,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<TrafficRecord>,
    /// Indices into `records` emitted in raw HTTP form.
    pub raw: BTreeSet<usize>,
    pub truth: GroundTruth,
    pub stats: PlantStats,
}

impl SynthCorpus {
    /// Writes the corpus in the ingest JSONL schema.
    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for (i, r) in self.records.iter().enumerate() {
            if self.raw.contains(&i) {
                let line = serde_json::json!({
                    "user": r.user_id,
                    "app": r.app_id,
                    "ts": r.timestamp,
                    "raw": raw_request(r),
                });
                serde_json::to_writer(&mut writer, &line)?;
            } else {
                writer.write_all(r.to_jsonl().as_bytes())?;
            }
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("in-memory write");
        buf
    }
}

fn raw_request(r: &TrafficRecord) -> String {
    let query: Vec<String> = r
        .kvs
        .iter()
        .map(|kv| format!("{}={}", percent_encode(&kv.key), percent_encode(&kv.value)))
        .collect();
    format!(
        "GET {}?{} HTTP/1.1\r\nHost: {}\r\nUser-Agent: okhttp/3.12.0\r\nAccept: */*\r\n\r\n",
        r.path,
        query.join("&"),
        r.domain
    )
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        if b.is_ascii_alphanumeric() || matches!(b, b'-' | b'.' | b'_' | b'~') {
            out.push(b as char);
        } else {
            out.push_str(&format!("%{b:02X}"));
        }
    }
    out
}

const SDK_DOMAINS: [&str; 3] = ["log.sdk-track.net", "collect.adnexus.io", "push.pushcloud.cn"];

#[derive(Debug, Clone)]
enum FieldValue {
    NonPi(NonPiKind),
    Pi(PiKind, Naming),
    /// PI-keyed field that only ever sends placeholders.
    DefaultOnly(PiKind),
}

#[derive(Debug, Clone)]
struct Field {
    key: String,
    value: FieldValue,
}

#[derive(Debug, Clone)]
struct Endpoint {
    domain: String,
    path: String,
    source: KvSource,
    weight: u32,
    fields: Vec<Field>,
}

struct AppPlan {
    id: String,
    versions: [String; 2],
    resources: Vec<String>,
    endpoints: Vec<Endpoint>,
}

struct UserProfile {
    id: String,
    imei: String,
    mac: String,
    email: String,
    phone: String,
    platform: Vec<String>,
}

impl UserProfile {
    fn value(&self, kind: PiKind) -> &str {
        match kind {
            PiKind::Imei => &self.imei,
            PiKind::Mac => &self.mac,
            PiKind::Email => &self.email,
            PiKind::Phone => &self.phone,
        }
    }
}

fn obfuscate(seed: u64, kind: PiKind, value: &str) -> String {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(kind.as_str().as_bytes());
    h.update(value.as_bytes());
    hex::encode(&h.finalize()[..16])
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| char::from(b'0' + rng.gen_range(0..10u8))).collect()
}

fn hex_string(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| char::from_digit(rng.gen_range(0..16), 16).unwrap())
        .collect()
}

fn make_user(rng: &mut ChaCha8Rng, i: usize) -> UserProfile {
    let imei = format!("86{}", digits(rng, 13));
    let mac = (0..6)
        .map(|_| format!("{:02x}", rng.gen::<u8>()))
        .collect::<Vec<_>>()
        .join(":");
    let domains = ["qq.com", "163.com", "gmail.com", "126.com", "sina.cn"];
    let email = format!(
        "user{i}.{}@{}",
        hex_string(rng, 4),
        domains.choose(rng).unwrap()
    );
    let prefixes = ["138", "139", "135", "150", "186", "177", "199", "147"];
    let phone = format!("{}{}", prefixes.choose(rng).unwrap(), digits(rng, 8));
    let platform = vec![
        ["android", "ios"][usize::from(rng.gen_bool(0.3))].to_string(),
        ["zh_CN", "zh_CN", "en_US"].choose(rng).unwrap().to_string(),
        ["wifi", "4g", "5g"].choose(rng).unwrap().to_string(),
    ];
    UserProfile {
        id: format!("user{i:03}"),
        imei,
        mac,
        email,
        phone,
        platform,
    }
}

fn neutral_key(rng: &mut ChaCha8Rng, taken: &BTreeSet<String>, rules: &RuleSet) -> String {
    loop {
        let a = char::from(b'a' + rng.gen_range(0..26u8));
        let b = char::from(b'a' + rng.gen_range(0..26u8));
        let key = format!("{a}{b}{}", rng.gen_range(0..10));
        if !taken.contains(&key) && rules.match_key(&key).is_none() {
            return key;
        }
    }
}

fn plan_app(
    rng: &mut ChaCha8Rng,
    idx: usize,
    config: &SynthConfig,
    plants: &[&PiPlant],
    default_only: &[PiKind],
    rules: &RuleSet,
) -> AppPlan {
    let id = format!("app{idx:02}");
    let host = format!("api.{id}.example.com");
    let mut taken: BTreeSet<String> = BTreeSet::new();
    let take = |rng: &mut ChaCha8Rng, pool: &[&str], taken: &mut BTreeSet<String>| -> Option<String> {
        let free: Vec<&&str> = pool.iter().filter(|n| !taken.contains(**n)).collect();
        let name = free.choose(rng).map(|s| s.to_string())?;
        taken.insert(name.clone());
        Some(name)
    };

    let n_endpoints = rng.gen_range(2..=4);
    let mut endpoints: Vec<Endpoint> = (0..n_endpoints)
        .map(|e| Endpoint {
            domain: host.clone(),
            path: format!("/api/v{}/{}", rng.gen_range(1..4), ["feed", "user", "report", "config", "search"][e]),
            source: if e % 2 == 0 { KvSource::Query } else { KvSource::BodyForm },
            weight: rng.gen_range(1..=4),
            fields: Vec::new(),
        })
        .collect();

    for &kind in &config.non_pi_spec {
        let copies = if kind == NonPiKind::Timestamp { 1 } else { rng.gen_range(1..=2) };
        for _ in 0..copies {
            let Some(key) = take(rng, kind.names(), &mut taken) else {
                break;
            };
            if kind == NonPiKind::Timestamp {
                for ep in &mut endpoints {
                    ep.fields.push(Field {
                        key: key.clone(),
                        value: FieldValue::NonPi(kind),
                    });
                }
            } else {
                // one or more endpoints
                let n = rng.gen_range(1..=endpoints.len());
                let mut order: Vec<usize> = (0..endpoints.len()).collect();
                order.shuffle(rng);
                for &e in &order[..n] {
                    endpoints[e].fields.push(Field {
                        key: key.clone(),
                        value: FieldValue::NonPi(kind),
                    });
                }
            }
        }
    }

    for plant in plants {
        let key = match plant.naming {
            Naming::Keyword => take(rng, plant.kind.keyword_names(), &mut taken)
                .unwrap_or_else(|| neutral_key(rng, &taken, rules)),
            Naming::Neutral | Naming::Obfuscated => neutral_key(rng, &taken, rules),
        };
        taken.insert(key.clone());
        let field = Field {
            key,
            value: FieldValue::Pi(plant.kind, plant.naming),
        };
        if plant.third_party {
            let (sdk_idx, sdk) = SDK_DOMAINS
                .iter()
                .enumerate()
                .find(|(_, d)| endpoints.iter().any(|e| e.domain == **d))
                .map(|(i, d)| (i, *d))
                .unwrap_or_else(|| {
                    let i = rng.gen_range(0..SDK_DOMAINS.len());
                    (i, SDK_DOMAINS[i])
                });
            let pos = endpoints.iter().position(|e| e.domain == sdk);
            let pos = pos.unwrap_or_else(|| {
                endpoints.push(Endpoint {
                    domain: sdk.to_string(),
                    path: format!("/sdk/{}/collect", sdk_idx + 1),
                    source: KvSource::BodyJson,
                    weight: 1,
                    fields: vec![Field {
                        key: "sdk_ts".into(),
                        value: FieldValue::NonPi(NonPiKind::Timestamp),
                    }],
                });
                taken.insert("sdk_ts".into());
                endpoints.len() - 1
            });
            endpoints[pos].fields.push(field);
        } else {
            let e = rng.gen_range(0..n_endpoints);
            endpoints[e].fields.push(field);
        }
    }

    for &kind in default_only {
        let key = take(rng, &["imsi", "meid", "serialnumber"], &mut taken)
            .unwrap_or_else(|| neutral_key(rng, &taken, rules));
        taken.insert(key.clone());
        endpoints[0].fields.push(Field {
            key,
            value: FieldValue::DefaultOnly(kind),
        });
    }

    let versions = [
        format!("{}.{}.{}", rng.gen_range(1..12), rng.gen_range(0..20), rng.gen_range(0..10)),
        format!("{}.{}.{}", rng.gen_range(1..12), rng.gen_range(0..20), rng.gen_range(0..10)),
    ];
    let resources = (0..rng.gen_range(10..40))
        .map(|_| format!("{}{}", ["a", "v", "n", "g"].choose(rng).unwrap(), digits(rng, 5)))
        .collect();
    AppPlan {
        id,
        versions,
        resources,
        endpoints,
    }
}

/// Generates a corpus. Identical configs yield identical corpora.
pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let rules = RuleSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let users: Vec<UserProfile> = (0..config.n_users).map(|i| make_user(&mut rng, i)).collect();

    // Which apps carry which plants.
    let mut app_plants: Vec<Vec<&PiPlant>> = vec![Vec::new(); config.n_apps];
    for plant in &config.pi_plant_spec {
        let n = ((plant.app_coverage * config.n_apps as f64).round() as usize).clamp(1, config.n_apps);
        let mut apps: Vec<usize> = (0..config.n_apps).collect();
        apps.shuffle(&mut rng);
        for &a in &apps[..n] {
            // one field per (kind, naming) per app
            if !app_plants[a].iter().any(|p| p.kind == plant.kind && p.naming == plant.naming) {
                app_plants[a].push(plant);
            }
        }
    }
    let mut app_defaults: Vec<Vec<PiKind>> = vec![Vec::new(); config.n_apps];
    for _ in 0..config.default_only_pairs {
        let a = rng.gen_range(0..config.n_apps);
        if app_defaults[a].is_empty() {
            app_defaults[a].push(PiKind::Imei);
        }
    }

    let plans: Vec<AppPlan> = (0..config.n_apps)
        .map(|i| plan_app(&mut rng, i, config, &app_plants[i], &app_defaults[i], &rules))
        .collect();

    let mut truth = GroundTruth::default();
    for plan in &plans {
        for ep in &plan.endpoints {
            for f in &ep.fields {
                let entry = match f.value {
                    FieldValue::NonPi(_) => TruthEntry {
                        label: Label::Negative,
                        pi_kind: None,
                        naming: None,
                    },
                    FieldValue::Pi(kind, naming) => TruthEntry {
                        label: Label::Positive,
                        pi_kind: Some(kind),
                        naming: Some(naming),
                    },
                    FieldValue::DefaultOnly(kind) => TruthEntry {
                        label: Label::Positive,
                        pi_kind: Some(kind),
                        naming: Some(Naming::Keyword),
                    },
                };
                truth.pairs.insert(PairKey::new(&plan.id, &f.key), entry);
            }
        }
    }

    let span_ms: i64 = 7 * 24 * 3600 * 1000;
    let mut records = Vec::new();
    let mut stats = PlantStats::default();
    for plan in &plans {
        let total_weight: u32 = plan.endpoints.iter().map(|e| e.weight).sum();
        for user in &users {
            if !rng.gen_bool(config.app_adoption) {
                continue;
            }
            let version = &plan.versions[usize::from(rng.gen_bool(0.2))];
            let n = rng.gen_range(config.requests_per_app_user.0..=config.requests_per_app_user.1);
            let mean_gap = span_ms / i64::from(n);
            let mut ts = config.start_ts_ms + rng.gen_range(0..mean_gap);
            for _ in 0..n {
                ts += rng.gen_range(1_000..2 * mean_gap);
                let mut pick = rng.gen_range(0..total_weight);
                let ep = plan
                    .endpoints
                    .iter()
                    .find(|e| {
                        if pick < e.weight {
                            true
                        } else {
                            pick -= e.weight;
                            false
                        }
                    })
                    .expect("weights cover the range");
                let kvs = ep
                    .fields
                    .iter()
                    .map(|f| {
                        let value = match &f.value {
                            FieldValue::NonPi(kind) => non_pi_value(&mut rng, *kind, &f.key, ts, plan, version, user),
                            FieldValue::Pi(kind, naming) => {
                                if rng.gen_bool(config.default_value_rate) {
                                    stats.planted_defaults += 1;
                                    ["none", "", kind.placeholder()].choose(&mut rng).unwrap().to_string()
                                } else {
                                    stats.planted_leaks += 1;
                                    let v = user.value(*kind);
                                    match naming {
                                        Naming::Obfuscated => obfuscate(config.seed, *kind, v),
                                        _ => v.to_string(),
                                    }
                                }
                            }
                            FieldValue::DefaultOnly(kind) => {
                                stats.planted_defaults += 1;
                                kind.placeholder().to_string()
                            }
                        };
                        KvPair::new(&f.key, value, ep.source)
                    })
                    .collect();
                records.push(TrafficRecord {
                    user_id: user.id.clone(),
                    app_id: plan.id.clone(),
                    timestamp: ts,
                    domain: ep.domain.clone(),
                    path: ep.path.clone(),
                    kvs,
                });
            }
        }
    }
    records.sort_by(|a, b| {
        (a.timestamp, &a.app_id, &a.user_id).cmp(&(b.timestamp, &b.app_id, &b.user_id))
    });

    // Drop truth entries for fields no request ever carried.
    let used: BTreeSet<PairKey> = records
        .iter()
        .flat_map(|r| r.kvs.iter().map(move |kv| PairKey::new(&r.app_id, &kv.key)))
        .collect();
    truth.pairs.retain(|k, _| used.contains(k));

    let raw = (0..records.len())
        .filter(|_| config.raw_fraction > 0.0 && rng.gen_bool(config.raw_fraction))
        .collect();
    stats.records = records.len();
    Ok(SynthCorpus {
        records,
        raw,
        truth,
        stats,
    })
}

fn non_pi_value(
    rng: &mut ChaCha8Rng,
    kind: NonPiKind,
    key: &str,
    ts: i64,
    plan: &AppPlan,
    version: &str,
    user: &UserProfile,
) -> String {
    match kind {
        NonPiKind::Timestamp => {
            if key.len().is_multiple_of(2) {
                ts.to_string()
            } else {
                (ts / 1000).to_string()
            }
        }
        NonPiKind::Counter => rng.gen_range(0..30).to_string(),
        NonPiKind::AppVersion => version.to_string(),
        NonPiKind::ResourcePath => plan.resources.choose(rng).unwrap().clone(),
        NonPiKind::RandomToken => hex_string(rng, 16),
        NonPiKind::Platform => {
            let slot = key.bytes().map(usize::from).sum::<usize>() % user.platform.len();
            user.platform[slot].clone()
        }
    }
}
