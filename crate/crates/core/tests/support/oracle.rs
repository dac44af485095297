//! Brute-force feature computation straight from the records. Every quantity
//! is recounted by scanning the whole corpus; nothing is shared with the
//! library beyond the record type.

use std::collections::{BTreeMap, BTreeSet};

use pi_sentry::ingest::TrafficRecord;

pub type Row = [f64; 17];

fn stats(xs: &[f64]) -> [f64; 4] {
    let n = xs.len() as f64;
    let max = xs.iter().cloned().fold(f64::MIN, f64::max);
    let min = xs.iter().cloned().fold(f64::MAX, f64::min);
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    [max, min, mean, var]
}

fn entropy(values: &[&str]) -> f64 {
    let n = values.len() as f64;
    let distinct: BTreeSet<&str> = values.iter().copied().collect();
    let mut h = 0.0;
    for d in distinct {
        let p = values.iter().filter(|v| **v == d).count() as f64 / n;
        h -= p * p.log2();
    }
    h
}

/// Features of every pair surviving pruning, keyed by (app, key).
pub fn features(records: &[TrafficRecord], is_default: impl Fn(&str) -> bool) -> BTreeMap<(String, String), Row> {
    let apps: BTreeSet<&str> = records.iter().map(|r| r.app_id.as_str()).collect();
    let pairs: BTreeSet<(&str, &str)> = records
        .iter()
        .flat_map(|r| r.kvs.iter().map(move |kv| (r.app_id.as_str(), kv.key.as_str())))
        .collect();

    let mut out = BTreeMap::new();
    for (app, key) in pairs {
        let with_key: Vec<&TrafficRecord> = records
            .iter()
            .filter(|r| r.app_id == app && r.kvs.iter().any(|kv| kv.key == key))
            .collect();
        let occurrences: Vec<(&str, &str)> = with_key
            .iter()
            .flat_map(|r| {
                r.kvs
                    .iter()
                    .filter(|kv| kv.key == key && !is_default(&kv.value))
                    .map(move |kv| (r.user_id.as_str(), kv.value.as_str()))
            })
            .collect();
        if occurrences.is_empty() || with_key.len() <= 1 {
            continue;
        }

        let users: BTreeSet<&str> = occurrences.iter().map(|(u, _)| *u).collect();
        let mut distinct = Vec::new();
        let mut entropies = Vec::new();
        for u in &users {
            let vals: Vec<&str> = occurrences.iter().filter(|(x, _)| x == u).map(|(_, v)| *v).collect();
            distinct.push(vals.iter().collect::<BTreeSet<_>>().len() as f64);
            entropies.push(entropy(&vals));
        }
        let values: BTreeSet<&str> = occurrences.iter().map(|(_, v)| *v).collect();
        let shared = values
            .iter()
            .filter(|v| {
                occurrences
                    .iter()
                    .filter(|(_, x)| x == *v)
                    .map(|(u, _)| *u)
                    .collect::<BTreeSet<_>>()
                    .len()
                    >= 2
            })
            .count();
        let lvrd = shared as f64 / values.len() as f64;
        let app_records = records.iter().filter(|r| r.app_id == app).count();
        let key_frequency = with_key.len() as f64 / app_records as f64;
        let num_users = records
            .iter()
            .filter(|r| r.app_id == app)
            .map(|r| r.user_id.as_str())
            .collect::<BTreeSet<_>>()
            .len();

        let others: Vec<&str> = apps.iter().copied().filter(|a| *a != app).collect();
        let krd = others
            .iter()
            .filter(|o| records.iter().any(|r| r.app_id == **o && r.kvs.iter().any(|kv| kv.key == key)))
            .count();
        let host_set: BTreeSet<&str> = with_key.iter().map(|r| r.domain.as_str()).collect();
        let drd = others
            .iter()
            .filter(|o| records.iter().any(|r| r.app_id == **o && host_set.contains(r.domain.as_str())))
            .count();

        let total = occurrences.len() as f64;
        let (mut gvrd, mut ard, mut urd, mut nurd) = (0.0, 0.0, 0.0, 0.0);
        for v in &values {
            let w = occurrences.iter().filter(|(_, x)| x == v).count() as f64 / total;
            let mut c_sum = 0usize;
            let mut hit_apps = 0usize;
            let mut other_users = BTreeSet::new();
            for o in &others {
                let mut c = 0usize;
                for r in records.iter().filter(|r| r.app_id == *o) {
                    for kv in &r.kvs {
                        if kv.value == *v && !is_default(&kv.value) {
                            c += 1;
                            other_users.insert(r.user_id.as_str());
                        }
                    }
                }
                c_sum += c;
                hit_apps += usize::from(c > 0);
            }
            gvrd += w * c_sum as f64;
            ard += w * hit_apps as f64;
            urd += w * other_users.len() as f64;
            nurd += w * other_users.difference(&users).count() as f64;
        }

        let d = stats(&distinct);
        let e = stats(&entropies);
        out.insert(
            (app.to_string(), key.to_string()),
            [
                d[0],
                d[1],
                d[2],
                d[3],
                e[0],
                e[1],
                e[2],
                e[3],
                lvrd,
                key_frequency,
                num_users as f64,
                krd as f64,
                drd as f64,
                gvrd,
                ard,
                urd,
                nurd,
            ],
        );
    }
    out
}

/// The shipped default-value list, restated independently.
pub fn shipped_default(v: &str) -> bool {
    let lower = v.to_lowercase();
    v.is_empty() || v == "[IMEI]" || v == "[MAC]" || ["none", "unknown", "-"].contains(&lower.as_str())
}

/// Compares library output with the oracle; returns the first mismatch.
pub fn compare(records: &[TrafficRecord], tol: f64) -> Result<usize, String> {
    use pi_sentry::aggregate::{build_table, prune, DefaultValues};
    use pi_sentry::features::{feature_matrix, FEATURE_NAMES};

    let expected = features(records, shipped_default);
    let table = build_table(records, &DefaultValues::default()).map_err(|e| e.to_string())?;
    let (table, _) = prune(&table);
    let got = feature_matrix(&table).map_err(|e| e.to_string())?;
    if got.len() != expected.len() {
        return Err(format!("pair count {} vs oracle {}", got.len(), expected.len()));
    }
    for ((app, key), want) in &expected {
        let pair = pi_sentry::PairKey::new(app, key);
        let have = got.get(&pair).ok_or_else(|| format!("{pair} missing"))?.to_array();
        for i in 0..17 {
            if (have[i] - want[i]).abs() > tol {
                return Err(format!("{pair} {}: {} vs oracle {}", FEATURE_NAMES[i], have[i], want[i]));
            }
        }
    }
    Ok(expected.len())
}
