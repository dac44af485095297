//! CSV renderings of corpus and evaluation distributions.

use std::collections::BTreeMap;
use std::io::Write;

use crate::aggregate::PairTable;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdfRow {
    pub users: usize,
    pub pairs: usize,
    pub cumulative_fraction: f64,
}

/// Distribution of the number of distinct users per pair.
pub fn users_per_pair_cdf(table: &PairTable) -> Vec<CdfRow> {
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for stats in table.pairs.values() {
        *hist.entry(stats.per_user_values.len()).or_insert(0) += 1;
    }
    let total = table.pairs.len().max(1) as f64;
    let mut running = 0;
    hist.into_iter()
        .map(|(users, pairs)| {
            running += pairs;
            CdfRow {
                users,
                pairs,
                cumulative_fraction: running as f64 / total,
            }
        })
        .collect()
}

pub fn write_cdf_csv<W: Write>(rows: &[CdfRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["users", "pairs", "cumulative_fraction"])?;
    for r in rows {
        w.write_record([
            r.users.to_string(),
            r.pairs.to_string(),
            r.cumulative_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
