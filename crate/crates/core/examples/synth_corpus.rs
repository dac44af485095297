// Generating a seeded corpus with planted PI and its ground truth.

use pi_sentry::synthgen::{generate, Naming, PiKind, PiPlant, SynthConfig};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        seed: 7,
        n_users: 30,
        n_apps: 12,
        pi_plant_spec: vec![
            PiPlant { kind: PiKind::Imei, naming: Naming::Keyword, app_coverage: 0.5, third_party: false },
            PiPlant { kind: PiKind::Mac, naming: Naming::Obfuscated, app_coverage: 0.25, third_party: true },
            PiPlant { kind: PiKind::Email, naming: Naming::Neutral, app_coverage: 0.25, third_party: false },
        ],
        ..SynthConfig::default()
    };
    let corpus = generate(&cfg)?;
    println!(
        "{} records ({} raw), {} leaks and {} placeholders planted",
        corpus.records.len(),
        corpus.raw.len(),
        corpus.stats.planted_leaks,
        corpus.stats.planted_defaults
    );
    for (pair, entry) in corpus.truth.positives() {
        let kind = entry.pi_kind.map(PiKind::as_str).unwrap_or("-");
        let naming = entry.naming.map(|n| n.to_string()).unwrap_or_default();
        println!("  {pair:<22} {kind:<6} {naming}");
    }

    let bytes = corpus.to_jsonl_bytes();
    let again = generate(&cfg)?.to_jsonl_bytes();
    println!("{} bytes, reproducible: {}", bytes.len(), bytes == again);
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    run()
}
