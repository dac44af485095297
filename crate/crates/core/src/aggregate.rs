//! One-pass aggregation of traffic into per-pair and per-app statistics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::TrafficRecord;
use crate::SCHEMA_VERSION;

/// Identity of a detection unit: a key as used by one app.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairKey {
    pub app: String,
    pub key: String,
}

impl PairKey {
    pub fn new(app: impl Into<String>, key: impl Into<String>) -> Self {
        Self {
            app: app.into(),
            key: key.into(),
        }
    }
}

impl fmt::Display for PairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}, {}>", self.app, self.key)
    }
}

/// Placeholder values that carry no information.
///
/// Bracketed tokens such as `[IMEI]` match exactly; every other entry
/// matches case-insensitively. The empty string is always a default.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefaultValues {
    words: BTreeSet<String>,
    exact: BTreeSet<String>,
}

impl Default for DefaultValues {
    fn default() -> Self {
        Self::from_values(["none", "unknown", "-", "[IMEI]", "[MAC]", ""])
    }
}

impl DefaultValues {
    pub fn from_values<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut words = BTreeSet::new();
        let mut exact = BTreeSet::new();
        for v in values {
            let v = v.as_ref();
            if v.is_empty() || (v.starts_with('[') && v.ends_with(']')) {
                exact.insert(v.to_string());
            } else {
                words.insert(v.to_lowercase());
            }
        }
        exact.insert(String::new());
        Self { words, exact }
    }

    /// Reads one value per line. Blank lines are skipped.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut values = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if !line.is_empty() {
                values.push(line.to_string());
            }
        }
        Ok(Self::from_values(values))
    }

    pub fn is_default(&self, value: &str) -> bool {
        value.is_empty() || self.exact.contains(value) || self.words.contains(&value.to_lowercase())
    }

    /// All configured entries, words lowercased.
    pub fn values(&self) -> Vec<String> {
        let mut all: BTreeSet<String> = self.words.clone();
        all.extend(self.exact.iter().cloned());
        all.into_iter().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    /// user -> value -> occurrences; default values excluded.
    pub per_user_values: BTreeMap<String, BTreeMap<String, u64>>,
    /// Domains visited by requests carrying the key.
    pub domains: BTreeSet<String>,
    /// Requests containing the key at least once (default values included).
    pub requests_with_key: u64,
}

impl PairStats {
    /// Occurrences of every non-default value, summed over users.
    pub fn value_counts(&self) -> BTreeMap<&str, u64> {
        let mut counts = BTreeMap::new();
        for values in self.per_user_values.values() {
            for (v, c) in values {
                *counts.entry(v.as_str()).or_insert(0) += c;
            }
        }
        counts
    }

    pub fn users(&self) -> impl Iterator<Item = &str> {
        self.per_user_values.keys().map(String::as_str)
    }

    pub fn has_values(&self) -> bool {
        self.per_user_values.values().any(|m| !m.is_empty())
    }

    fn merge(&mut self, other: PairStats) {
        for (user, values) in other.per_user_values {
            let mine = self.per_user_values.entry(user).or_default();
            for (v, c) in values {
                *mine.entry(v).or_insert(0) += c;
            }
        }
        self.domains.extend(other.domains);
        self.requests_with_key += other.requests_with_key;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueUse {
    pub users: BTreeSet<String>,
    pub count: u64,
}

/// Whole-app traffic totals. Pruning never touches these.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppStats {
    pub total_requests: u64,
    pub users: BTreeSet<String>,
    pub keys: BTreeSet<String>,
    pub domains: BTreeSet<String>,
    /// Every non-default value under any key of the app.
    pub value_index: BTreeMap<String, ValueUse>,
}

impl AppStats {
    fn merge(&mut self, other: AppStats) {
        self.total_requests += other.total_requests;
        self.users.extend(other.users);
        self.keys.extend(other.keys);
        self.domains.extend(other.domains);
        for (v, u) in other.value_index {
            let mine = self.value_index.entry(v).or_default();
            mine.users.extend(u.users);
            mine.count += u.count;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneReport {
    pub default_only: usize,
    pub singleton: usize,
}

impl PruneReport {
    pub fn total(&self) -> usize {
        self.default_only + self.singleton
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTable {
    pub pairs: BTreeMap<PairKey, PairStats>,
    pub apps: BTreeMap<String, AppStats>,
    pub default_values: DefaultValues,
}

/// Aggregates records into a [`PairTable`].
pub fn build_table(records: &[TrafficRecord], default_values: &DefaultValues) -> Result<PairTable> {
    if records.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut table = PairTable::empty(default_values.clone());
    for record in records {
        table.add_record(record);
    }
    Ok(table)
}

/// Drops pairs with no informative value and pairs seen in a single request.
/// A pair failing both tests is counted as `default_only`.
pub fn prune(table: &PairTable) -> (PairTable, PruneReport) {
    let mut report = PruneReport::default();
    let pairs = table
        .pairs
        .iter()
        .filter(|(_, stats)| {
            if !stats.has_values() {
                report.default_only += 1;
                false
            } else if stats.requests_with_key <= 1 {
                report.singleton += 1;
                false
            } else {
                true
            }
        })
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let pruned = PairTable {
        pairs,
        apps: table.apps.clone(),
        default_values: table.default_values.clone(),
    };
    (pruned, report)
}

impl PairTable {
    pub fn empty(default_values: DefaultValues) -> Self {
        Self {
            pairs: BTreeMap::new(),
            apps: BTreeMap::new(),
            default_values,
        }
    }

    pub fn add_record(&mut self, record: &TrafficRecord) {
        let app = self.apps.entry(record.app_id.clone()).or_default();
        app.total_requests += 1;
        app.users.insert(record.user_id.clone());
        app.domains.insert(record.domain.clone());

        let mut seen_in_request = BTreeSet::new();
        for kv in &record.kvs {
            app.keys.insert(kv.key.clone());
            let stats = self
                .pairs
                .entry(PairKey::new(&record.app_id, &kv.key))
                .or_default();
            if seen_in_request.insert(kv.key.as_str()) {
                stats.requests_with_key += 1;
                stats.domains.insert(record.domain.clone());
            }
            if self.default_values.is_default(&kv.value) {
                continue;
            }
            *stats
                .per_user_values
                .entry(record.user_id.clone())
                .or_default()
                .entry(kv.value.clone())
                .or_insert(0) += 1;
            let vu = app.value_index.entry(kv.value.clone()).or_default();
            vu.users.insert(record.user_id.clone());
            vu.count += 1;
        }
    }

    /// Folds another partial table (built with the same defaults) into this one.
    pub fn merge(&mut self, other: PairTable) {
        for (k, s) in other.pairs {
            self.pairs.entry(k).or_default().merge(s);
        }
        for (a, s) in other.apps {
            self.apps.entry(a).or_default().merge(s);
        }
    }

    pub fn get(&self, pair: &PairKey) -> Result<&PairStats> {
        self.pairs.get(pair).ok_or_else(|| Error::PairNotFound {
            app: pair.app.clone(),
            key: pair.key.clone(),
        })
    }

    pub fn write_snapshot<W: Write>(&self, writer: W, prune: Option<&PruneReport>) -> Result<()> {
        let snap = SnapshotOut {
            schema_version: SCHEMA_VERSION,
            default_values: self.default_values.values(),
            prune,
            apps: &self.apps,
            pairs: self
                .pairs
                .iter()
                .map(|(k, s)| PairEntryOut {
                    app: &k.app,
                    key: &k.key,
                    stats: s,
                })
                .collect(),
        };
        serde_json::to_writer(writer, &snap)?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(reader: R) -> Result<(PairTable, Option<PruneReport>)> {
        let snap: SnapshotIn = serde_json::from_reader(reader)?;
        if snap.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                artifact: "pair table".into(),
                expected: SCHEMA_VERSION,
                found: snap.schema_version,
            });
        }
        let table = PairTable {
            pairs: snap
                .pairs
                .into_iter()
                .map(|e| (PairKey::new(e.app, e.key), e.stats))
                .collect(),
            apps: snap.apps,
            default_values: DefaultValues::from_values(snap.default_values),
        };
        if let Some(missing) = table.pairs.keys().find(|k| !table.apps.contains_key(&k.app)) {
            return Err(Error::InvalidArtifact {
                artifact: "pair table".into(),
                reason: format!("pair {missing} has no app entry"),
            });
        }
        Ok((table, snap.prune))
    }

    pub fn save(&self, path: &Path, prune: Option<&PruneReport>) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_snapshot(std::io::BufWriter::new(file), prune)
    }

    pub fn load(path: &Path) -> Result<(PairTable, Option<PruneReport>)> {
        let file = std::fs::File::open(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        Self::read_snapshot(std::io::BufReader::new(file))
    }
}

#[derive(Serialize)]
struct SnapshotOut<'a> {
    schema_version: u32,
    default_values: Vec<String>,
    prune: Option<&'a PruneReport>,
    apps: &'a BTreeMap<String, AppStats>,
    pairs: Vec<PairEntryOut<'a>>,
}

#[derive(Serialize)]
struct PairEntryOut<'a> {
    app: &'a str,
    key: &'a str,
    stats: &'a PairStats,
}

#[derive(Deserialize)]
struct SnapshotIn {
    schema_version: u32,
    default_values: Vec<String>,
    prune: Option<PruneReport>,
    apps: BTreeMap<String, AppStats>,
    pairs: Vec<PairEntryIn>,
}

#[derive(Deserialize)]
struct PairEntryIn {
    app: String,
    key: String,
    stats: PairStats,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{KvPair, KvSource};

    fn rec(user: &str, app: &str, domain: &str, kvs: &[(&str, &str)]) -> TrafficRecord {
        TrafficRecord {
            user_id: user.into(),
            app_id: app.into(),
            timestamp: 0,
            domain: domain.into(),
            path: "/".into(),
            kvs: kvs
                .iter()
                .map(|(k, v)| KvPair::new(*k, *v, KvSource::Query))
                .collect(),
        }
    }

    #[test]
    fn single_record() {
        let t = build_table(&[rec("u", "a", "d", &[("k", "v")])], &DefaultValues::default()).unwrap();
        let s = t.get(&PairKey::new("a", "k")).unwrap();
        assert_eq!(s.per_user_values["u"]["v"], 1);
        assert_eq!(t.apps["a"].total_requests, 1);
    }

    #[test]
    fn empty_records_rejected() {
        assert!(matches!(
            build_table(&[], &DefaultValues::default()),
            Err(Error::EmptyTable)
        ));
    }

    #[test]
    fn defaults_counted_for_presence_only() {
        let recs = [
            rec("u", "a", "d", &[("k", "NONE"), ("k", "x")]),
            rec("u", "a", "d", &[("k", "[IMEI]")]),
            rec("u", "a", "d", &[("k", "[imei]")]),
        ];
        let t = build_table(&recs, &DefaultValues::default()).unwrap();
        let s = &t.pairs[&PairKey::new("a", "k")];
        assert_eq!(s.requests_with_key, 3);
        // "[imei]" differs from the bracketed token "[IMEI]" by case.
        assert_eq!(s.per_user_values["u"].len(), 2);
        assert!(!t.apps["a"].value_index.contains_key("NONE"));
    }

    #[test]
    fn prune_reasons() {
        let recs = [
            rec("u", "a", "d", &[("dflt", "none"), ("one", "x"), ("ok", "abc")]),
            rec("u", "a", "d", &[("dflt", "-"), ("ok", "abc")]),
        ];
        let t = build_table(&recs, &DefaultValues::default()).unwrap();
        let (p, report) = prune(&t);
        assert_eq!(report, PruneReport { default_only: 1, singleton: 1 });
        assert_eq!(p.pairs.keys().collect::<Vec<_>>(), vec![&PairKey::new("a", "ok")]);
        let (again, r2) = prune(&p);
        assert_eq!(again, p);
        assert_eq!(r2.total(), 0);
    }

    #[test]
    fn custom_defaults_from_lines() {
        let d = DefaultValues::from_reader(&b"null\n[ID]\n\n"[..]).unwrap();
        assert!(d.is_default("NULL"));
        assert!(d.is_default("[ID]"));
        assert!(!d.is_default("[id]"));
        assert!(d.is_default(""));
        assert!(!d.is_default("none"));
    }

    #[test]
    fn snapshot_round_trip_and_version_check() {
        let recs = [rec("u", "a", "d", &[("k", "v")]), rec("w", "b", "e", &[("k", "v")])];
        let t = build_table(&recs, &DefaultValues::default()).unwrap();
        let mut buf = Vec::new();
        t.write_snapshot(&mut buf, None).unwrap();
        let (back, _) = PairTable::read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, t);

        let mut v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        v["schema_version"] = 99.into();
        let err = PairTable::read_snapshot(v.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, Error::SchemaVersion { found: 99, .. }));
    }
}
