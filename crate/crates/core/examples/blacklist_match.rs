// Deploying predictions as a blacklist and scanning new traffic with it.

use pi_sentry::aggregate::{build_table, prune, DefaultValues, PairKey};
use pi_sentry::blacklist::{build_blacklist, match_stream_with_known, Blacklist};
use pi_sentry::detector::{self, TrainOptions};
use pi_sentry::features::feature_matrix;
use pi_sentry::labeling::{assemble_dataset, rule_labels};
use pi_sentry::synthgen::{generate, SynthConfig};
use pi_sentry::RuleSet;
use std::collections::BTreeSet;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig { n_users: 40, n_apps: 20, ..SynthConfig::default() };
    let corpus = generate(&cfg)?;
    let table = prune(&build_table(&corpus.records, &DefaultValues::default())?).0;
    let matrix = feature_matrix(&table)?;
    let labels = rule_labels(&table, &RuleSet::default());
    let negatives = corpus.truth.sample_negative_overrides(labels.len(), cfg.seed);
    let dataset = assemble_dataset(&table, &matrix, &labels, &negatives)?;
    let model = detector::train(&dataset.samples, &TrainOptions::default())?;

    let predictions = detector::predict_matrix(&model, &matrix, 0.75);
    let bl = build_blacklist(&predictions, 0.75, model.fingerprint(), table.default_values.clone());
    println!("blacklist: {} pairs", bl.len());

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("blacklist.json");
    bl.save(&path)?;
    let bl = Blacklist::load(&path)?;

    // Traffic from another seed; only part of its pairs were seen before.
    let fresh = generate(&SynthConfig { seed: 99, ..cfg })?;
    let known: BTreeSet<PairKey> = table.pairs.keys().cloned().collect();
    let out = match_stream_with_known(&bl, &fresh.records, Some(&known));
    println!("{} leaks in {} requests", out.summary.total, fresh.records.len());
    let mut apps: Vec<_> = out.summary.per_app.iter().collect();
    apps.sort_by(|a, b| b.1.cmp(a.1));
    for (app, n) in apps.iter().take(5) {
        println!("  {app:<8} {n}");
    }
    println!("{} pairs not seen at training time", out.new_pairs.len());
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
