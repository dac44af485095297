//! Bootstrapping a labeled dataset from string-form rules.
//!
//! Keyword rules match the lowercased key exactly; regex rules must match a
//! whole non-default value. Values of rule-found pairs then label further
//! pairs that carry the same value for the same user. Manual overrides win
//! over both.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::io::{Read, Write};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::aggregate::{DefaultValues, PairKey, PairTable};
use crate::error::{Error, Result};
use crate::features::FeatureVector;
use crate::SCHEMA_VERSION;

/// MAC address with `:` or `-` separators.
pub const MAC_REGEX: &str = r"(([0-9a-fA-F]{2}:){5}|([0-9a-fA-F]{2}-){5})[0-9a-fA-F]{2}";
pub const EMAIL_REGEX: &str = r"[a-zA-Z0-9_.+-]+@[a-zA-Z0-9-]+\.[a-zA-Z0-9-.]+";
/// Mainland China mobile numbers with optional `86` prefix. The bracket
/// groups are kept as published, so they also admit a literal `|`.
pub const CN_PHONE_REGEX: &str =
    r"^(86)?(13[0-9]|14[5|7]|15[0-9]|166|17[3|6|7|8]|18[0-9]|19[1|8|9])\d{8}$";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    RuleKeyword,
    RuleRegex,
    Propagated,
    Manual,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct RuleSpec {
    #[serde(default)]
    keywords: Vec<String>,
    #[serde(default)]
    regexes: Vec<String>,
}

#[derive(Debug, Clone)]
struct TypeRules {
    keywords: BTreeSet<String>,
    patterns: Vec<String>,
    regexes: Vec<Regex>,
}

/// Keyword and regex rules grouped by PI type.
#[derive(Debug, Clone)]
pub struct RuleSet {
    types: BTreeMap<String, TypeRules>,
}

impl Default for RuleSet {
    fn default() -> Self {
        let spec: &[(&str, &[&str], &[&str])] = &[
            (
                "User Identifier",
                &["user", "userid", "user_cid", "user_id", "user-id"],
                &[],
            ),
            (
                "Device Identifier",
                &["imei", "meid", "imsi", "misi", "deviceid", "device_id", "serialnumber"],
                &[],
            ),
            ("MAC Address", &["mac", "mac_address"], &[MAC_REGEX]),
            (
                "Location",
                &[
                    "location", "gps", "latlng", "longitude", "ltt", "lat", "latitude", "lgt",
                    "lng", "lon", "address",
                ],
                &[],
            ),
            ("Email", &[], &[EMAIL_REGEX]),
            ("Phone Number", &[], &[CN_PHONE_REGEX]),
        ];
        let types = spec
            .iter()
            .map(|(t, k, r)| {
                (
                    t.to_string(),
                    RuleSpec {
                        keywords: k.iter().map(|s| s.to_string()).collect(),
                        regexes: r.iter().map(|s| s.to_string()).collect(),
                    },
                )
            })
            .collect();
        Self::from_specs(types).expect("built-in rules compile")
    }
}

impl RuleSet {
    fn from_specs(specs: BTreeMap<String, RuleSpec>) -> Result<Self> {
        let mut types = BTreeMap::new();
        for (name, spec) in specs {
            if spec.keywords.is_empty() && spec.regexes.is_empty() {
                return Err(Error::Rules(format!("type `{name}` has no rules")));
            }
            let regexes = spec
                .regexes
                .iter()
                .map(|p| {
                    Regex::new(&format!("^(?:{p})$"))
                        .map_err(|e| Error::Rules(format!("type `{name}`: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            types.insert(
                name,
                TypeRules {
                    keywords: spec.keywords.iter().map(|k| k.to_lowercase()).collect(),
                    patterns: spec.regexes,
                    regexes,
                },
            );
        }
        Ok(Self { types })
    }

    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        let specs: BTreeMap<String, RuleSpec> = serde_json::from_reader(reader)?;
        Self::from_specs(specs)
    }

    pub fn to_json<W: Write>(&self, writer: W) -> Result<()> {
        let specs: BTreeMap<&str, RuleSpec> = self
            .types
            .iter()
            .map(|(t, r)| {
                (
                    t.as_str(),
                    RuleSpec {
                        keywords: r.keywords.iter().cloned().collect(),
                        regexes: r.patterns.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_writer_pretty(writer, &specs)?;
        Ok(())
    }

    pub fn types(&self) -> impl Iterator<Item = &str> {
        self.types.keys().map(String::as_str)
    }

    /// PI type whose keyword list contains `key` (case-insensitive).
    pub fn match_key(&self, key: &str) -> Option<&str> {
        let key = key.to_lowercase();
        self.types
            .iter()
            .find(|(_, r)| r.keywords.contains(&key))
            .map(|(t, _)| t.as_str())
    }

    /// PI type with a regex fully matching `value`.
    pub fn match_value(&self, value: &str) -> Option<&str> {
        self.types
            .iter()
            .find(|(_, r)| r.regexes.iter().any(|re| re.is_match(value)))
            .map(|(t, _)| t.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub pi_type: String,
    pub source: LabelSource,
}

/// Pairs found by keyword or regex rules. Keyword hits take precedence.
pub fn apply_rules(table: &PairTable, rules: &RuleSet) -> BTreeMap<PairKey, RuleMatch> {
    let mut out = BTreeMap::new();
    for (pair, stats) in &table.pairs {
        if let Some(t) = rules.match_key(&pair.key) {
            out.insert(
                pair.clone(),
                RuleMatch {
                    pi_type: t.to_string(),
                    source: LabelSource::RuleKeyword,
                },
            );
            continue;
        }
        let hit = stats
            .value_counts()
            .keys()
            .filter(|v| !table.default_values.is_default(v))
            .find_map(|v| rules.match_value(v));
        if let Some(t) = hit {
            out.insert(
                pair.clone(),
                RuleMatch {
                    pi_type: t.to_string(),
                    source: LabelSource::RuleRegex,
                },
            );
        }
    }
    out
}

/// Values specific enough to link two pairs: at least six characters, not a
/// default, and not a short number.
pub fn is_propagatable(value: &str, defaults: &DefaultValues) -> bool {
    let len = value.chars().count();
    if len < 6 || defaults.is_default(value) {
        return false;
    }
    !(len < 8 && value.chars().all(|c| c.is_ascii_digit()))
}

/// Every pair reachable from `seeds` through a shared (user, value), mapped
/// to the seed it was reached from. Seeds map to themselves.
pub fn propagate_origins(table: &PairTable, seeds: &BTreeSet<PairKey>) -> BTreeMap<PairKey, PairKey> {
    let defaults = &table.default_values;
    let mut index: HashMap<(&str, &str), Vec<&PairKey>> = HashMap::new();
    for (pair, stats) in &table.pairs {
        for (user, values) in &stats.per_user_values {
            for v in values.keys().filter(|v| is_propagatable(v, defaults)) {
                index.entry((user, v)).or_default().push(pair);
            }
        }
    }

    let mut origin: BTreeMap<PairKey, PairKey> = BTreeMap::new();
    let mut queue = VecDeque::new();
    for s in seeds.iter().filter(|s| table.pairs.contains_key(*s)) {
        origin.insert(s.clone(), s.clone());
        queue.push_back(s.clone());
    }
    while let Some(pair) = queue.pop_front() {
        let root = origin[&pair].clone();
        let stats = &table.pairs[&pair];
        for (user, values) in &stats.per_user_values {
            for v in values.keys().filter(|v| is_propagatable(v, defaults)) {
                let Some(linked) = index.get(&(user.as_str(), v.as_str())) else {
                    continue;
                };
                for other in linked {
                    if !origin.contains_key(*other) {
                        origin.insert((*other).clone(), root.clone());
                        queue.push_back((*other).clone());
                    }
                }
            }
        }
    }
    origin
}

pub fn propagate(table: &PairTable, seeds: &BTreeSet<PairKey>) -> BTreeSet<PairKey> {
    propagate_origins(table, seeds).into_keys().collect()
}

/// Rule matches extended by value propagation.
pub fn rule_labels(table: &PairTable, rules: &RuleSet) -> BTreeMap<PairKey, RuleMatch> {
    let mut labels = apply_rules(table, rules);
    let seeds: BTreeSet<PairKey> = labels.keys().cloned().collect();
    for (pair, root) in propagate_origins(table, &seeds) {
        if !labels.contains_key(&pair) {
            let pi_type = labels[&root].pi_type.clone();
            labels.insert(
                pair,
                RuleMatch {
                    pi_type,
                    source: LabelSource::Propagated,
                },
            );
        }
    }
    labels
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub pair: PairKey,
    pub label: Label,
    pub pi_type: Option<String>,
}

/// Reads `app,key,label(pos|neg),pi_type?` rows. A leading header row is
/// skipped.
pub fn read_overrides<R: Read>(reader: R) -> Result<Vec<Override>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        if i == 0 && row.get(2).is_some_and(|l| l.eq_ignore_ascii_case("label")) {
            continue;
        }
        let bad = |reason: String| Error::InvalidArtifact {
            artifact: "overrides csv".into(),
            reason: format!("row {}: {reason}", i + 1),
        };
        if row.len() < 3 {
            return Err(bad("expected app,key,label".into()));
        }
        let label = match row[2].trim().to_ascii_lowercase().as_str() {
            "pos" | "positive" => Label::Positive,
            "neg" | "negative" => Label::Negative,
            other => return Err(bad(format!("unknown label `{other}`"))),
        };
        let pi_type = row.get(3).map(str::trim).filter(|s| !s.is_empty()).map(String::from);
        out.push(Override {
            pair: PairKey::new(&row[0], &row[1]),
            label,
            pi_type,
        });
    }
    Ok(out)
}

pub fn write_overrides<W: Write>(overrides: &[Override], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["app", "key", "label", "pi_type"])?;
    for o in overrides {
        let label = match o.label {
            Label::Positive => "pos",
            Label::Negative => "neg",
        };
        w.write_record([
            o.pair.app.as_str(),
            o.pair.key.as_str(),
            label,
            o.pi_type.as_deref().unwrap_or(""),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub pair: PairKey,
    pub features: FeatureVector,
    pub label: Label,
    pub source: LabelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    /// Overrides naming pairs absent from the table.
    pub skipped_overrides: usize,
}

impl Dataset {
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label == Label::Positive).count();
        (pos, self.samples.len() - pos)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let doc = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "skipped_overrides": self.skipped_overrides,
            "samples": self.samples,
        });
        serde_json::to_writer(std::io::BufWriter::new(file), &doc)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            schema_version: u32,
            #[serde(default)]
            skipped_overrides: usize,
            samples: Vec<LabeledSample>,
        }
        let file = std::fs::File::open(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let doc: Doc = serde_json::from_reader(std::io::BufReader::new(file))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                artifact: "dataset".into(),
                expected: SCHEMA_VERSION,
                found: doc.schema_version,
            });
        }
        Ok(Self {
            samples: doc.samples,
            skipped_overrides: doc.skipped_overrides,
        })
    }
}

/// Joins rule labels and overrides with the feature matrix. Pairs without
/// any label are left out.
pub fn assemble_dataset(
    table: &PairTable,
    matrix: &BTreeMap<PairKey, FeatureVector>,
    rule_labels: &BTreeMap<PairKey, RuleMatch>,
    overrides: &[Override],
) -> Result<Dataset> {
    let mut manual: BTreeMap<&PairKey, &Override> = BTreeMap::new();
    let mut skipped = 0;
    for o in overrides {
        if !table.pairs.contains_key(&o.pair) || !matrix.contains_key(&o.pair) {
            log::warn!("override for unknown pair {} skipped", o.pair);
            skipped += 1;
            continue;
        }
        if let Some(prev) = manual.insert(&o.pair, o) {
            if prev.label != o.label {
                return Err(Error::ConflictingOverride {
                    app: o.pair.app.clone(),
                    key: o.pair.key.clone(),
                });
            }
        }
    }

    let mut samples = Vec::new();
    for (pair, features) in matrix {
        if !table.pairs.contains_key(pair) {
            continue;
        }
        let sample = if let Some(o) = manual.get(pair) {
            LabeledSample {
                pair: pair.clone(),
                features: *features,
                label: o.label,
                source: LabelSource::Manual,
                pi_type: match o.label {
                    Label::Positive => o
                        .pi_type
                        .clone()
                        .or_else(|| rule_labels.get(pair).map(|r| r.pi_type.clone())),
                    Label::Negative => o.pi_type.clone(),
                },
            }
        } else if let Some(r) = rule_labels.get(pair) {
            LabeledSample {
                pair: pair.clone(),
                features: *features,
                label: Label::Positive,
                source: r.source,
                pi_type: Some(r.pi_type.clone()),
            }
        } else {
            continue;
        };
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dataset = Dataset {
        samples,
        skipped_overrides: skipped,
    };
    let (pos, neg) = dataset.class_counts();
    log::info!("labeled dataset: {pos} positive, {neg} negative");
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::build_table;
    use crate::features::feature_matrix;
    use crate::ingest::{KvPair, KvSource, TrafficRecord};

    fn rec(user: &str, app: &str, kvs: &[(&str, &str)]) -> TrafficRecord {
        TrafficRecord {
            user_id: user.into(),
            app_id: app.into(),
            timestamp: 0,
            domain: format!("{app}.com"),
            path: "/".into(),
            kvs: kvs
                .iter()
                .map(|(k, v)| KvPair::new(*k, *v, KvSource::Query))
                .collect(),
        }
    }

    fn table(recs: &[TrafficRecord]) -> PairTable {
        build_table(recs, &DefaultValues::default()).unwrap()
    }

    #[test]
    fn keyword_regex_and_miss() {
        let t = table(&[
            rec("u", "a", &[("IMEI", "1"), ("hw", "ab:cd:ef:01:23:45"), ("startDate", "20200526")]),
        ]);
        let m = apply_rules(&t, &RuleSet::default());
        let imei = &m[&PairKey::new("a", "IMEI")];
        assert_eq!((imei.pi_type.as_str(), imei.source), ("Device Identifier", LabelSource::RuleKeyword));
        let mac = &m[&PairKey::new("a", "hw")];
        assert_eq!((mac.pi_type.as_str(), mac.source), ("MAC Address", LabelSource::RuleRegex));
        assert!(!m.contains_key(&PairKey::new("a", "startDate")));
    }

    #[test]
    fn keywords_are_exact_not_substring() {
        let rules = RuleSet::default();
        assert_eq!(rules.match_key("user_id"), Some("User Identifier"));
        assert_eq!(rules.match_key("usercount"), None);
        assert_eq!(rules.match_key("Latitude"), Some("Location"));
    }

    #[test]
    fn bad_rule_files_rejected() {
        assert!(RuleSet::from_json(&br#"{"X":{"regexes":["("]}}"#[..]).is_err());
        assert!(RuleSet::from_json(&br#"{"X":{}}"#[..]).is_err());
        let r = RuleSet::from_json(&br#"{"Token":{"keywords":["TOK"],"regexes":["t[0-9]+"]}}"#[..]).unwrap();
        assert_eq!(r.match_key("tok"), Some("Token"));
        assert_eq!(r.match_value("t42"), Some("Token"));
        assert_eq!(r.match_value("xt42"), None);
    }

    #[test]
    fn rules_json_round_trip() {
        let mut buf = Vec::new();
        RuleSet::default().to_json(&mut buf).unwrap();
        let back = RuleSet::from_json(&buf[..]).unwrap();
        assert_eq!(back.types().count(), 6);
        assert_eq!(back.match_value("13812345678"), Some("Phone Number"));
    }

    #[test]
    fn propagation_follows_same_user_values() {
        let t = table(&[
            rec("u", "a", &[("imei", "HJS5T19626000575")]),
            rec("u", "b", &[("q", "HJS5T19626000575"), ("n", "1")]),
            rec("w", "c", &[("q", "HJS5T19626000575")]),
            rec("u", "d", &[("n", "1")]),
        ]);
        let seeds = BTreeSet::from([PairKey::new("a", "imei")]);
        let out = propagate(&t, &seeds);
        assert!(out.contains(&PairKey::new("b", "q")));
        // different user
        assert!(!out.contains(&PairKey::new("c", "q")));
        // "1" is too short to link
        assert!(!out.contains(&PairKey::new("d", "n")));
    }

    #[test]
    fn propagation_without_shared_values_is_identity() {
        let t = table(&[rec("u", "a", &[("imei", "HJS5T19626000575")]), rec("u", "b", &[("k", "other-value")])]);
        let seeds = BTreeSet::from([PairKey::new("a", "imei")]);
        assert_eq!(propagate(&t, &seeds), seeds);
    }

    #[test]
    fn propagation_guard() {
        let d = DefaultValues::default();
        assert!(!is_propagatable("1", &d));
        assert!(!is_propagatable("1234567", &d));
        assert!(is_propagatable("12345678", &d));
        assert!(is_propagatable("abcdef", &d));
        assert!(!is_propagatable("[IMEI]", &d));
    }

    #[test]
    fn override_precedence_and_conflicts() {
        let t = table(&[rec("u", "a", &[("imei", "HJS5T19626000575"), ("ts", "1")]), rec("u", "a", &[("imei", "HJS5T19626000575"), ("ts", "2")])]);
        let m = feature_matrix(&t).unwrap();
        let rules = rule_labels(&t, &RuleSet::default());
        let flip = Override {
            pair: PairKey::new("a", "imei"),
            label: Label::Negative,
            pi_type: None,
        };
        let ds = assemble_dataset(&t, &m, &rules, std::slice::from_ref(&flip)).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!((ds.samples[0].label, ds.samples[0].source), (Label::Negative, LabelSource::Manual));

        let mut pos = flip.clone();
        pos.label = Label::Positive;
        assert!(matches!(
            assemble_dataset(&t, &m, &rules, &[flip.clone(), pos]),
            Err(Error::ConflictingOverride { .. })
        ));

        let unknown = Override {
            pair: PairKey::new("zz", "k"),
            label: Label::Negative,
            pi_type: None,
        };
        let ds = assemble_dataset(&t, &m, &rules, &[unknown]).unwrap();
        assert_eq!(ds.skipped_overrides, 1);

        assert!(matches!(
            assemble_dataset(&t, &m, &BTreeMap::new(), &[]),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn overrides_csv() {
        let text = "app,key,label,pi_type\na,k,pos,Email\nb,j,neg\n";
        let o = read_overrides(text.as_bytes()).unwrap();
        assert_eq!(o.len(), 2);
        assert_eq!(o[0].pi_type.as_deref(), Some("Email"));
        assert_eq!(o[1].label, Label::Negative);
        let mut buf = Vec::new();
        write_overrides(&o, &mut buf).unwrap();
        assert_eq!(read_overrides(&buf[..]).unwrap(), o);
        assert!(read_overrides("a,k,maybe\n".as_bytes()).is_err());
    }
}
