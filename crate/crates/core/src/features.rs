//! Statistical occurrence features of `<app, key>` pairs.
//!
//! Local features look only at the owning app's traffic:
//!
//! * per-user distinct value counts and per-user value entropies, each
//!   summarised by max / min / mean / population variance (8 features);
//! * L-VRD, the share of the pair's values used by at least two users;
//! * key frequency, the share of the app's requests carrying the key;
//! * the number of users contributing traffic to the app.
//!
//! Global features compare the pair against every other app:
//!
//! * KRD, other apps using the same key;
//! * DRD, other apps visiting a domain the key was sent to;
//! * four value-distribution features. Each of the pair's values `v` gets
//!   the weight `count(v) / total count`; G-VRD sums weighted occurrences of
//!   `v` in other apps, ARD the weighted number of other apps seeing `v`,
//!   URD the weighted size of the union of other-app users of `v`, and NURD
//!   the same union minus the pair's own users.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{PairKey, PairStats, PairTable, ValueUse};
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 17;

pub const FEATURE_NAMES: [&str; N_FEATURES] = [
    "max_distinct_per_user",
    "min_distinct_per_user",
    "avg_distinct_per_user",
    "var_distinct_per_user",
    "max_entropy_per_user",
    "min_entropy_per_user",
    "avg_entropy_per_user",
    "var_entropy_per_user",
    "lvrd",
    "key_frequency",
    "num_users",
    "krd",
    "drd",
    "weighted_gvrd",
    "weighted_ard",
    "weighted_urd",
    "weighted_nurd",
];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub max_distinct_per_user: f64,
    pub min_distinct_per_user: f64,
    pub avg_distinct_per_user: f64,
    pub var_distinct_per_user: f64,
    pub max_entropy_per_user: f64,
    pub min_entropy_per_user: f64,
    pub avg_entropy_per_user: f64,
    pub var_entropy_per_user: f64,
    pub lvrd: f64,
    pub key_frequency: f64,
    pub num_users: u64,
    pub krd: u64,
    pub drd: u64,
    pub weighted_gvrd: f64,
    pub weighted_ard: f64,
    pub weighted_urd: f64,
    pub weighted_nurd: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [
            self.max_distinct_per_user,
            self.min_distinct_per_user,
            self.avg_distinct_per_user,
            self.var_distinct_per_user,
            self.max_entropy_per_user,
            self.min_entropy_per_user,
            self.avg_entropy_per_user,
            self.var_entropy_per_user,
            self.lvrd,
            self.key_frequency,
            self.num_users as f64,
            self.krd as f64,
            self.drd as f64,
            self.weighted_gvrd,
            self.weighted_ard,
            self.weighted_urd,
            self.weighted_nurd,
        ]
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != N_FEATURES {
            return Err(Error::Arity {
                expected: N_FEATURES,
                found: values.len(),
            });
        }
        let v = values;
        Ok(Self {
            max_distinct_per_user: v[0],
            min_distinct_per_user: v[1],
            avg_distinct_per_user: v[2],
            var_distinct_per_user: v[3],
            max_entropy_per_user: v[4],
            min_entropy_per_user: v[5],
            avg_entropy_per_user: v[6],
            var_entropy_per_user: v[7],
            lvrd: v[8],
            key_frequency: v[9],
            num_users: v[10] as u64,
            krd: v[11] as u64,
            drd: v[12] as u64,
            weighted_gvrd: v[13],
            weighted_ard: v[14],
            weighted_urd: v[15],
            weighted_nurd: v[16],
        })
    }
}

/// The 11 local fields, in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LocalFeatures {
    pub distinct: Summary,
    pub entropy: Summary,
    pub lvrd: f64,
    pub key_frequency: f64,
    pub num_users: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Summary {
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub var: f64,
}

impl Summary {
    fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self {
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            mean,
            var,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValueDistribution {
    pub gvrd: f64,
    pub ard: f64,
    pub urd: f64,
    pub nurd: f64,
}

/// Shannon entropy in bits of the empirical distribution given by `counts`.
pub fn value_entropy<I>(counts: I) -> Result<f64>
where
    I: IntoIterator<Item = u64>,
{
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyValues);
    }
    let total = total as f64;
    let h = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.log2()
        })
        .sum::<f64>();
    // -0.0 for a single value
    Ok(h.max(0.0))
}

/// Cross-app lookup structures shared by all global features.
pub struct FeatureContext<'a> {
    table: &'a PairTable,
    key_apps: HashMap<&'a str, usize>,
    domain_apps: HashMap<&'a str, Vec<&'a str>>,
    value_apps: HashMap<&'a str, Vec<(&'a str, &'a ValueUse)>>,
}

impl<'a> FeatureContext<'a> {
    pub fn new(table: &'a PairTable) -> Self {
        let mut key_apps: HashMap<&str, usize> = HashMap::new();
        let mut domain_apps: HashMap<&str, Vec<&str>> = HashMap::new();
        let mut value_apps: HashMap<&str, Vec<(&str, &ValueUse)>> = HashMap::new();
        for (app, stats) in &table.apps {
            for k in &stats.keys {
                *key_apps.entry(k).or_insert(0) += 1;
            }
            for d in &stats.domains {
                domain_apps.entry(d).or_default().push(app);
            }
            for (v, vu) in &stats.value_index {
                value_apps.entry(v).or_default().push((app, vu));
            }
        }
        Self {
            table,
            key_apps,
            domain_apps,
            value_apps,
        }
    }

    fn stats(&self, pair: &PairKey) -> Result<&'a PairStats> {
        self.table.get(pair)
    }

    pub fn local(&self, pair: &PairKey) -> Result<LocalFeatures> {
        let stats = self.stats(pair)?;
        let app = &self.table.apps[&pair.app];

        let mut distinct = Vec::with_capacity(stats.per_user_values.len());
        let mut entropy = Vec::with_capacity(stats.per_user_values.len());
        for values in stats.per_user_values.values().filter(|m| !m.is_empty()) {
            distinct.push(values.len() as f64);
            entropy.push(value_entropy(values.values().copied())?);
        }

        let mut users_per_value: BTreeMap<&str, usize> = BTreeMap::new();
        for values in stats.per_user_values.values() {
            for v in values.keys() {
                *users_per_value.entry(v).or_insert(0) += 1;
            }
        }
        let lvrd = if users_per_value.is_empty() {
            0.0
        } else {
            let shared = users_per_value.values().filter(|&&n| n >= 2).count();
            shared as f64 / users_per_value.len() as f64
        };

        Ok(LocalFeatures {
            distinct: Summary::of(&distinct),
            entropy: Summary::of(&entropy),
            lvrd,
            key_frequency: stats.requests_with_key as f64 / app.total_requests.max(1) as f64,
            num_users: app.users.len() as u64,
        })
    }

    pub fn krd(&self, pair: &PairKey) -> u64 {
        let total = self.key_apps.get(pair.key.as_str()).copied().unwrap_or(0);
        let own = self
            .table
            .apps
            .get(&pair.app)
            .is_some_and(|a| a.keys.contains(&pair.key));
        (total - usize::from(own)) as u64
    }

    pub fn drd(&self, pair: &PairKey) -> Result<u64> {
        let stats = self.stats(pair)?;
        let mut others: BTreeSet<&str> = BTreeSet::new();
        for d in &stats.domains {
            if let Some(apps) = self.domain_apps.get(d.as_str()) {
                others.extend(apps.iter().filter(|a| **a != pair.app));
            }
        }
        Ok(others.len() as u64)
    }

    pub fn value_distribution(&self, pair: &PairKey) -> Result<ValueDistribution> {
        let stats = self.stats(pair)?;
        let counts = stats.value_counts();
        let total: u64 = counts.values().sum();
        if total == 0 {
            return Err(Error::EmptyValues);
        }
        let own_users: BTreeSet<&str> = stats.users().collect();

        let mut out = ValueDistribution::default();
        for (value, count) in counts {
            let w = count as f64 / total as f64;
            let Some(uses) = self.value_apps.get(value) else {
                continue;
            };
            let mut occurrences = 0u64;
            let mut apps = 0u64;
            let mut users: BTreeSet<&str> = BTreeSet::new();
            for (_, vu) in uses.iter().filter(|(a, _)| *a != pair.app) {
                occurrences += vu.count;
                apps += 1;
                users.extend(vu.users.iter().map(String::as_str));
            }
            let new_users = users.iter().filter(|u| !own_users.contains(*u)).count();
            out.gvrd += w * occurrences as f64;
            out.ard += w * apps as f64;
            out.urd += w * users.len() as f64;
            out.nurd += w * new_users as f64;
        }
        Ok(out)
    }

    pub fn vector(&self, pair: &PairKey) -> Result<FeatureVector> {
        let local = self.local(pair)?;
        let vd = self.value_distribution(pair)?;
        Ok(FeatureVector {
            max_distinct_per_user: local.distinct.max,
            min_distinct_per_user: local.distinct.min,
            avg_distinct_per_user: local.distinct.mean,
            var_distinct_per_user: local.distinct.var,
            max_entropy_per_user: local.entropy.max,
            min_entropy_per_user: local.entropy.min,
            avg_entropy_per_user: local.entropy.mean,
            var_entropy_per_user: local.entropy.var,
            lvrd: local.lvrd,
            key_frequency: local.key_frequency,
            num_users: local.num_users,
            krd: self.krd(pair),
            drd: self.drd(pair)?,
            weighted_gvrd: vd.gvrd,
            weighted_ard: vd.ard,
            weighted_urd: vd.urd,
            weighted_nurd: vd.nurd,
        })
    }
}

pub fn local_features(table: &PairTable, pair: &PairKey) -> Result<LocalFeatures> {
    FeatureContext::new(table).local(pair)
}

pub fn krd(table: &PairTable, pair: &PairKey) -> u64 {
    table
        .apps
        .iter()
        .filter(|(app, stats)| **app != pair.app && stats.keys.contains(&pair.key))
        .count() as u64
}

pub fn drd(table: &PairTable, pair: &PairKey) -> Result<u64> {
    let h = &table.get(pair)?.domains;
    Ok(table
        .apps
        .iter()
        .filter(|(app, stats)| **app != pair.app && !stats.domains.is_disjoint(h))
        .count() as u64)
}

pub fn weighted_vdm_features(table: &PairTable, pair: &PairKey) -> Result<ValueDistribution> {
    FeatureContext::new(table).value_distribution(pair)
}

/// Features for every pair of the table, keyed and ordered by pair.
pub fn feature_matrix(table: &PairTable) -> Result<BTreeMap<PairKey, FeatureVector>> {
    let ctx = FeatureContext::new(table);
    let keys: Vec<&PairKey> = table.pairs.keys().collect();
    let vectors = keys
        .par_iter()
        .map(|k| ctx.vector(k).map(|v| ((*k).clone(), v)))
        .collect::<Result<Vec<_>>>()?;
    Ok(vectors.into_iter().collect())
}

pub fn write_csv<W: Write>(matrix: &BTreeMap<PairKey, FeatureVector>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["app", "key"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for (pair, fv) in matrix {
        let mut row = vec![pair.app.clone(), pair.key.clone()];
        row.extend(fv.to_array().iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<BTreeMap<PairKey, FeatureVector>> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    let expected: Vec<&str> = ["app", "key"].into_iter().chain(FEATURE_NAMES).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::InvalidArtifact {
            artifact: "feature csv".into(),
            reason: "unexpected header".into(),
        });
    }
    let mut out = BTreeMap::new();
    for row in r.records() {
        let row = row?;
        let values = row
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidArtifact {
                artifact: "feature csv".into(),
                reason: e.to_string(),
            })?;
        out.insert(PairKey::new(&row[0], &row[1]), FeatureVector::from_slice(&values)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{build_table, DefaultValues};
    use crate::ingest::{KvPair, KvSource, TrafficRecord};

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

    fn table(recs: &[TrafficRecord]) -> PairTable {
        build_table(recs, &DefaultValues::default()).unwrap()
    }

    #[test]
    fn entropy_examples() {
        assert_eq!(value_entropy([5]).unwrap(), 0.0);
        assert!((value_entropy([1, 1]).unwrap() - 1.0).abs() < 1e-12);
        assert!((value_entropy([2, 1]).unwrap() - 0.9183).abs() < 1e-4);
        assert!(value_entropy(Vec::<u64>::new()).is_err());
    }

    #[test]
    fn single_user_single_value() {
        let t = table(&[rec("u", "a", "d", &[("k", "v")]), rec("u", "a", "d", &[("k", "v")])]);
        let l = local_features(&t, &PairKey::new("a", "k")).unwrap();
        assert_eq!((l.distinct.max, l.distinct.min, l.distinct.mean, l.distinct.var), (1.0, 1.0, 1.0, 0.0));
        assert_eq!((l.entropy.max, l.entropy.min, l.entropy.mean, l.entropy.var), (0.0, 0.0, 0.0, 0.0));
        assert_eq!(l.lvrd, 0.0);
    }

    #[test]
    fn key_frequency_three_of_twelve() {
        let mut recs: Vec<_> = (0..9).map(|_| rec("u", "a", "d", &[("other", "z")])).collect();
        recs.extend((0..3).map(|i| rec("u", "a", "d", &[("k", ["p", "q", "r"][i])])));
        let l = local_features(&table(&recs), &PairKey::new("a", "k")).unwrap();
        assert_eq!(l.key_frequency, 0.25);
    }

    #[test]
    fn unknown_pair_is_not_found() {
        let t = table(&[rec("u", "a", "d", &[("k", "v")])]);
        assert!(matches!(
            local_features(&t, &PairKey::new("a", "missing")),
            Err(Error::PairNotFound { .. })
        ));
    }

    #[test]
    fn krd_and_drd_counts() {
        let mut recs = vec![rec("u", "main", "shared.com", &[("k", "v")]), rec("u", "main", "own.com", &[("j", "w")])];
        for (i, d) in ["shared.com", "shared.com", "shared.com", "x.com", "y.com"].iter().enumerate() {
            let app = format!("o{i}");
            let key = if i < 2 { "k" } else { "z" };
            recs.push(rec("u", &app, d, &[(key, "1")]));
        }
        let t = table(&recs);
        let p = PairKey::new("main", "k");
        assert_eq!(krd(&t, &p), 2);
        assert_eq!(drd(&t, &p).unwrap(), 3);
        let ctx = FeatureContext::new(&t);
        assert_eq!(ctx.krd(&p), 2);
        assert_eq!(ctx.drd(&p).unwrap(), 3);
        assert_eq!(krd(&t, &PairKey::new("main", "j")), 0);
        assert_eq!(drd(&t, &PairKey::new("main", "j")).unwrap(), 0);
    }

    #[test]
    fn isolated_values_have_zero_distribution() {
        let t = table(&[rec("u", "a", "d", &[("k", "v")]), rec("u", "b", "e", &[("k", "w")])]);
        let vd = weighted_vdm_features(&t, &PairKey::new("a", "k")).unwrap();
        assert_eq!(vd, ValueDistribution::default());
    }

    #[test]
    fn csv_round_trip_and_bad_header() {
        let recs = [rec("u", "a", "d", &[("k", "v")]), rec("w", "a", "d", &[("k", "v,\"x\"")])];
        let m = feature_matrix(&table(&recs)).unwrap();
        let mut buf = Vec::new();
        write_csv(&m, &mut buf).unwrap();
        assert_eq!(read_csv(&buf[..]).unwrap(), m);
        assert!(read_csv(&b"app,key,x\n"[..]).is_err());
    }
}
