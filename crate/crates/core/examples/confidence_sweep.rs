// How coverage and precision move as the confidence threshold rises.

use pi_sentry::aggregate::{build_table, prune, DefaultValues};
use pi_sentry::detector::{self, gate, TrainOptions};
use pi_sentry::features::feature_matrix;
use pi_sentry::labeling::{assemble_dataset, rule_labels};
use pi_sentry::synthgen::{generate, SynthConfig};
use pi_sentry::RuleSet;

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    for p in [0.5, 0.6, 0.75, 0.9] {
        println!("p={p:<4} at 0.75 -> {:?}", gate(p, 0.75));
    }

    let cfg = SynthConfig { seed: 11, n_users: 40, n_apps: 20, ..SynthConfig::default() };
    let corpus = generate(&cfg)?;
    let table = prune(&build_table(&corpus.records, &DefaultValues::default())?).0;
    let matrix = feature_matrix(&table)?;
    let labels = rule_labels(&table, &RuleSet::default());
    let negatives = corpus.truth.sample_negative_overrides(labels.len(), cfg.seed);
    let dataset = assemble_dataset(&table, &matrix, &labels, &negatives)?;
    let (train, test) = detector::split(&dataset.samples, 0.8, cfg.seed)?;
    // A small forest gives coarser vote fractions, so gating has more to do.
    let model = detector::train(&train, &TrainOptions { n_trees: 5, seed: cfg.seed, ..Default::default() })?;

    println!("threshold  coverage  precision  recall");
    for pt in detector::threshold_sweep(&model, &test, &detector::default_sweep()) {
        let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:>9.2}  {:>8.3}  {:>9}  {:>6}", pt.threshold, pt.coverage, fmt(pt.precision), fmt(pt.recall));
    }
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
