// Rule-labeled training set -> random forest -> held-out evaluation.

use pi_sentry::aggregate::{build_table, prune, DefaultValues};
use pi_sentry::detector::{self, TrainOptions};
use pi_sentry::features::{feature_matrix, FEATURE_NAMES};
use pi_sentry::labeling::{assemble_dataset, rule_labels};
use pi_sentry::synthgen::{generate, SynthConfig};
use pi_sentry::RuleSet;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig { n_users: 40, n_apps: 20, ..SynthConfig::default() };
    let corpus = generate(&cfg)?;
    let table = prune(&build_table(&corpus.records, &DefaultValues::default())?).0;
    let matrix = feature_matrix(&table)?;

    let labels = rule_labels(&table, &RuleSet::default());
    let negatives = corpus.truth.sample_negative_overrides(labels.len(), cfg.seed);
    let dataset = assemble_dataset(&table, &matrix, &labels, &negatives)?;
    let (pos, neg) = dataset.class_counts();
    println!("dataset: {pos} positive, {neg} negative");

    let (train, test) = detector::split(&dataset.samples, 0.8, 3)?;
    let model = detector::train(&train, &TrainOptions { seed: 3, ..Default::default() })?;
    let report = detector::evaluate(&model, &test, 0.75)?;
    println!(
        "model {}: precision {:?} recall {:?} f1 {:?} coverage {:.2}",
        model.fingerprint(),
        report.precision,
        report.recall,
        report.f1,
        report.coverage
    );

    let mut usage: Vec<(usize, &str)> = model.split_counts().into_iter().zip(FEATURE_NAMES).collect();
    usage.sort_by(|a, b| b.cmp(a));
    println!("most used split features:");
    for (n, name) in usage.iter().take(5) {
        println!("  {name:<24} {n}");
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
