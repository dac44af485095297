//! Blacklist of PI-related pairs and leak matching over traffic.
//!
//! A leak is a request of app `a` carrying blacklisted key `k` with a value
//! that is neither empty nor a default placeholder. Matching is exact on
//! `(app, key)`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregate::{DefaultValues, PairKey};
use crate::detector::{Prediction, PredictedLabel};
use crate::error::{Error, Result};
use crate::ingest::TrafficRecord;
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq)]
pub struct Blacklist {
    /// Pair -> PI type, when known.
    pub entries: BTreeMap<PairKey, Option<String>>,
    pub default_values: DefaultValues,
    pub built_from: String,
    pub threshold: f64,
}

#[derive(Serialize, Deserialize)]
struct EntryRow {
    app: String,
    key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi_type: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    schema_version: u32,
    built_from: String,
    threshold: f64,
    default_values: Vec<String>,
}

/// Positive predictions after re-gating at `threshold`. Duplicate pairs
/// collapse into one entry.
pub fn build_blacklist(
    predictions: &[Prediction],
    threshold: f64,
    built_from: impl Into<String>,
    default_values: DefaultValues,
) -> Blacklist {
    let entries: BTreeMap<PairKey, Option<String>> = predictions
        .iter()
        .filter(|p| p.regate(threshold).label == PredictedLabel::Positive)
        .map(|p| (p.pair.clone(), None))
        .collect();
    if entries.is_empty() {
        log::warn!("blacklist is empty: no accepted positive predictions");
    }
    Blacklist {
        entries,
        default_values,
        built_from: built_from.into(),
        threshold,
    }
}

impl Blacklist {
    pub fn from_pairs<I>(pairs: I, default_values: DefaultValues, built_from: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = (PairKey, Option<String>)>,
    {
        Self {
            entries: pairs.into_iter().collect(),
            default_values,
            built_from: built_from.into(),
            threshold: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, pair: &PairKey) -> bool {
        self.entries.contains_key(pair)
    }

    pub fn meta_path(path: &Path) -> PathBuf {
        path.with_extension("meta.json")
    }

    /// Writes the entry array to `path` and provenance to `<stem>.meta.json`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let rows: Vec<EntryRow> = self
            .entries
            .iter()
            .map(|(p, t)| EntryRow {
                app: p.app.clone(),
                key: p.key.clone(),
                pi_type: t.clone(),
            })
            .collect();
        write_file(path, &serde_json::to_vec_pretty(&rows)?)?;
        let meta = Meta {
            schema_version: SCHEMA_VERSION,
            built_from: self.built_from.clone(),
            threshold: self.threshold,
            default_values: self.default_values.values(),
        };
        write_file(&Self::meta_path(path), &serde_json::to_vec_pretty(&meta)?)
    }

    /// Loads a blacklist; without a meta file the shipped defaults apply.
    pub fn load(path: &Path) -> Result<Self> {
        let rows: Vec<EntryRow> = serde_json::from_slice(&read_file(path)?)?;
        let meta_path = Self::meta_path(path);
        let meta = if meta_path.exists() {
            let m: Meta = serde_json::from_slice(&read_file(&meta_path)?)?;
            if m.schema_version != SCHEMA_VERSION {
                return Err(Error::SchemaVersion {
                    artifact: "blacklist".into(),
                    expected: SCHEMA_VERSION,
                    found: m.schema_version,
                });
            }
            Some(m)
        } else {
            None
        };
        let (default_values, built_from, threshold) = match meta {
            Some(m) => (DefaultValues::from_values(m.default_values), m.built_from, m.threshold),
            None => (DefaultValues::default(), String::new(), 0.0),
        };
        Ok(Self {
            entries: rows
                .into_iter()
                .map(|r| (PairKey::new(r.app, r.key), r.pi_type))
                .collect(),
            default_values,
            built_from,
            threshold,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakEvent {
    pub user: String,
    pub app: String,
    pub ts: i64,
    pub domain: String,
    pub key: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pi_type: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakSummary {
    pub total: u64,
    pub per_app: BTreeMap<String, u64>,
    pub per_key: BTreeMap<String, u64>,
    pub per_pi_type: BTreeMap<String, u64>,
}

impl LeakSummary {
    fn record(&mut self, e: &LeakEvent) {
        self.total += 1;
        *self.per_app.entry(e.app.clone()).or_insert(0) += 1;
        *self.per_key.entry(e.key.clone()).or_insert(0) += 1;
        let t = e.pi_type.clone().unwrap_or_else(|| "unknown".into());
        *self.per_pi_type.entry(t).or_insert(0) += 1;
    }

    pub fn merge(&mut self, other: &LeakSummary) {
        self.total += other.total;
        for (dst, src) in [
            (&mut self.per_app, &other.per_app),
            (&mut self.per_key, &other.per_key),
            (&mut self.per_pi_type, &other.per_pi_type),
        ] {
            for (k, v) in src {
                *dst.entry(k.clone()).or_insert(0) += v;
            }
        }
    }

    /// `scope,name,leaks` rows, with a leading `total` row.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scope", "name", "leaks"])?;
        w.write_record(["total", "", &self.total.to_string()])?;
        for (scope, map) in [("app", &self.per_app), ("key", &self.per_key), ("pi_type", &self.per_pi_type)] {
            for (name, n) in map {
                w.write_record([scope, name.as_str(), &n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct MatchOutcome {
    pub events: Vec<LeakEvent>,
    pub summary: LeakSummary,
    /// Pairs absent from the known-pair set, with the requests carrying them.
    pub new_pairs: BTreeMap<PairKey, u64>,
}

/// One event per blacklisted key occurrence carrying a real value.
pub fn match_stream<'a, I>(blacklist: &Blacklist, records: I) -> MatchOutcome
where
    I: IntoIterator<Item = &'a TrafficRecord>,
{
    match_stream_with_known(blacklist, records, None)
}

/// Like [`match_stream`], also collecting pairs not in `known` for later
/// retraining.
pub fn match_stream_with_known<'a, I>(
    blacklist: &Blacklist,
    records: I,
    known: Option<&BTreeSet<PairKey>>,
) -> MatchOutcome
where
    I: IntoIterator<Item = &'a TrafficRecord>,
{
    let mut out = MatchOutcome::default();
    let mut probe = PairKey::new("", "");
    for r in records {
        probe.app.clone_from(&r.app_id);
        let mut seen = BTreeSet::new();
        for kv in &r.kvs {
            probe.key.clone_from(&kv.key);
            if let Some(known) = known {
                if !known.contains(&probe) && seen.insert(kv.key.as_str()) {
                    *out.new_pairs.entry(probe.clone()).or_insert(0) += 1;
                }
            }
            let Some(pi_type) = blacklist.entries.get(&probe) else {
                continue;
            };
            if blacklist.default_values.is_default(&kv.value) {
                continue;
            }
            let event = LeakEvent {
                user: r.user_id.clone(),
                app: r.app_id.clone(),
                ts: r.timestamp,
                domain: r.domain.clone(),
                key: kv.key.clone(),
                value: kv.value.clone(),
                pi_type: pi_type.clone(),
            };
            out.summary.record(&event);
            out.events.push(event);
        }
    }
    out
}

pub fn write_events_jsonl<W: Write>(events: &[LeakEvent], mut writer: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut writer, e)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_new_pairs_csv<W: Write>(pairs: &BTreeMap<PairKey, u64>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["app", "key", "requests"])?;
    for (p, n) in pairs {
        w.write_record([p.app.as_str(), p.key.as_str(), &n.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
